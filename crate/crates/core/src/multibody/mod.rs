//! Articulated-body models and their compiled equations of motion
//! `D(q) q'' + C(q, q') q' + G(q) = B1 u1 + B2 u2`.

mod derive;
mod model;
pub mod symbolic;

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::exprgraph::{CompiledTape, EvalError, ExprGraph, NodeId};

pub use derive::{derive, q_symbol, qd_symbol, Derivation, TermNodes};
pub use model::{
    Base, BaseKind, Joint, LinkInertia, ModelError, MultibodyModel, WingSegment, FORMAT_VERSION,
};

/// Distance from `|pitch| = pi/2` at which Euler-angle configurations are
/// rejected as singular.
pub const PITCH_MARGIN: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("Euler-angle singularity: pitch = {pitch} rad is within {PITCH_MARGIN} of ±pi/2")]
    Singular { pitch: f64 },
    #[error("dynamics evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("state has {got} entries, model expects {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// `x = [q; q']` plus time.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub t: f64,
}

impl VehicleState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>, t: f64) -> Self {
        assert_eq!(q.len(), qdot.len(), "q and qdot must have equal length");
        VehicleState { q, qdot, t }
    }

    pub fn zeros(n: usize) -> Self {
        VehicleState::new(DVector::zeros(n), DVector::zeros(n), 0.0)
    }

    pub fn n_q(&self) -> usize {
        self.q.len()
    }

    pub fn x(&self) -> DVector<f64> {
        let n = self.q.len();
        DVector::from_fn(
            2 * n,
            |i, _| if i < n { self.q[i] } else { self.qdot[i - n] },
        )
    }

    pub fn from_x(x: &[f64], t: f64) -> Self {
        assert!(
            x.len().is_multiple_of(2),
            "state vector must have even length"
        );
        let n = x.len() / 2;
        VehicleState::new(
            DVector::from_column_slice(&x[..n]),
            DVector::from_column_slice(&x[n..]),
            t,
        )
    }

    /// Wraps the model's Euler-angle coordinates to `(-pi, pi]`.
    pub fn wrap_angles(&mut self, model: &MultibodyModel) {
        for &i in model.euler_indices() {
            self.q[i] = wrap_angle(self.q[i]);
        }
    }
}

/// Dense manipulator-equation terms at one state.
#[derive(Clone, Debug)]
pub struct Terms {
    pub d: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub g: DVector<f64>,
    pub b1: DMatrix<f64>,
}

/// World-frame wing geometry at one configuration.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub points: Vec<Vector3<f64>>,
    pub chord: Vec<Vector3<f64>>,
    pub normal: Vec<Vector3<f64>>,
    /// `(3 * n_elem) x n_q`, rows grouped per element (x, y, z).
    pub pjac: DMatrix<f64>,
}

impl Kinematics {
    /// Velocity of element `i`'s quarter-chord point, `Pjac_i q'`.
    pub fn point_velocity(&self, i: usize, qdot: &DVector<f64>) -> Vector3<f64> {
        let rows = self.pjac.rows(3 * i, 3);
        let v = rows * qdot;
        Vector3::new(v[0], v[1], v[2])
    }
}

/// Node-count summary of the derivation, before and after CSE.
#[derive(Clone, Copy, Debug)]
pub struct DerivationStats {
    pub raw_nodes: usize,
    pub cse_nodes: usize,
    /// Live nodes feeding `D` in the builder graph.
    pub d_raw_live: usize,
    /// Live nodes feeding `D` after CSE.
    pub d_cse_live: usize,
    /// Node count of `D` fully expanded as independent trees.
    pub d_tree_size: f64,
    pub dcg_tape_len: usize,
}

/// Scratch buffers for allocation-free evaluation; one per thread.
#[derive(Clone, Debug)]
pub struct TermsWorkspace {
    x: Vec<f64>,
    ws: Vec<f64>,
    out: Vec<f64>,
}

/// Compiled equations of motion for a model.
pub struct DynamicsTerms {
    n_q: usize,
    n_a: usize,
    n_elem: usize,
    pitch_index: Option<usize>,
    derivation: Derivation,
    d_tape: CompiledTape,
    c_tape: CompiledTape,
    g_tape: CompiledTape,
    pjac_tape: CompiledTape,
    kin_tape: CompiledTape,
    energy_tape: CompiledTape,
    full_tape: CompiledTape,
    b1: DMatrix<f64>,
}

fn compile(graph: &ExprGraph, prefix: &str, outs: &[&[NodeId]]) -> CompiledTape {
    let named: Vec<(String, NodeId)> = outs
        .iter()
        .flat_map(|o| o.iter())
        .enumerate()
        .map(|(i, &n)| (format!("{prefix}{i}"), n))
        .collect();
    CompiledTape::compile_named(graph, &named).expect("derived nodes belong to the graph")
}

/// Derives, simplifies and compiles the model's equations of motion.
pub fn derive_dynamics(model: &MultibodyModel) -> DynamicsTerms {
    let derivation = derive(model);
    let g = &derivation.graph;
    let n = &derivation.nodes;
    let d_tape = compile(g, "D", &[&n.d]);
    let c_tape = compile(g, "C", &[&n.c]);
    let g_tape = compile(g, "G", &[&n.g]);
    let pjac_tape = compile(g, "Pjac", &[&n.pjac]);
    let kin_tape = compile(g, "k", &[&n.points, &n.chord, &n.normal, &n.pjac]);
    let energy_tape = compile(g, "E", &[&[n.kinetic, n.potential]]);
    let full_tape = compile(
        g,
        "f",
        &[&n.d, &n.c, &n.g, &n.points, &n.chord, &n.normal, &n.pjac],
    );
    let n_q = model.n_q();
    let n_a = model.n_actuated();
    let off = model.actuated_offset();
    let b1 = DMatrix::from_fn(n_q, n_a, |i, j| if i == off + j { 1.0 } else { 0.0 });
    DynamicsTerms {
        n_q,
        n_a,
        n_elem: model.n_elements(),
        pitch_index: model.euler_pitch_index(),
        derivation,
        d_tape,
        c_tape,
        g_tape,
        pjac_tape,
        kin_tape,
        energy_tape,
        full_tape,
        b1,
    }
}

impl DynamicsTerms {
    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn n_actuated(&self) -> usize {
        self.n_a
    }

    pub fn n_elements(&self) -> usize {
        self.n_elem
    }

    /// Constant actuator selector `[0; I]`.
    pub fn b1(&self) -> &DMatrix<f64> {
        &self.b1
    }

    pub fn derivation(&self) -> &Derivation {
        &self.derivation
    }

    pub fn d_tape(&self) -> &CompiledTape {
        &self.d_tape
    }

    pub fn c_tape(&self) -> &CompiledTape {
        &self.c_tape
    }

    pub fn g_tape(&self) -> &CompiledTape {
        &self.g_tape
    }

    pub fn pjac_tape(&self) -> &CompiledTape {
        &self.pjac_tape
    }

    pub fn stats(&self) -> DerivationStats {
        let dv = &self.derivation;
        DerivationStats {
            raw_nodes: dv.raw.len(),
            cse_nodes: dv.graph.len(),
            d_raw_live: dv.raw.live_count(&dv.raw_nodes.d),
            d_cse_live: dv.graph.live_count(&dv.nodes.d),
            d_tree_size: dv.raw.tree_size(&dv.raw_nodes.d),
            dcg_tape_len: self.d_tape.instructions().len()
                + self.c_tape.instructions().len()
                + self.g_tape.instructions().len(),
        }
    }

    pub fn workspace(&self) -> TermsWorkspace {
        let slots = [
            &self.d_tape,
            &self.c_tape,
            &self.g_tape,
            &self.pjac_tape,
            &self.kin_tape,
            &self.energy_tape,
            &self.full_tape,
        ]
        .iter()
        .map(|t| t.n_slots())
        .max()
        .unwrap_or(0);
        TermsWorkspace {
            x: vec![0.0; 2 * self.n_q],
            ws: vec![0.0; slots],
            out: vec![0.0; self.full_tape.n_outputs().max(self.kin_tape.n_outputs())],
        }
    }

    /// Rejects wrong dimensions and Euler-angle singularities, then loads
    /// `[q; q']` into the workspace.
    fn load(&self, q: &[f64], qdot: &[f64], ws: &mut TermsWorkspace) -> Result<(), DynamicsError> {
        for v in [q, qdot] {
            if v.len() != self.n_q {
                return Err(DynamicsError::Dimension {
                    expected: self.n_q,
                    got: v.len(),
                });
            }
        }
        if let Some(p) = self.pitch_index {
            if q[p].abs() >= FRAC_PI_2 - PITCH_MARGIN {
                return Err(DynamicsError::Singular { pitch: q[p] });
            }
        }
        ws.x[..self.n_q].copy_from_slice(q);
        ws.x[self.n_q..].copy_from_slice(qdot);
        Ok(())
    }

    fn run<'w>(
        &self,
        tape: &CompiledTape,
        q: &[f64],
        qdot: &[f64],
        ws: &'w mut TermsWorkspace,
    ) -> Result<&'w [f64], DynamicsError> {
        self.load(q, qdot, ws)?;
        tape.eval(&ws.x, &mut ws.ws, &mut ws.out)?;
        Ok(&ws.out[..tape.n_outputs()])
    }

    fn square(&self, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_q, self.n_q, v)
    }

    fn symmetric(&self, v: &[f64]) -> DMatrix<f64> {
        let d = self.square(v);
        (&d + d.transpose()) * 0.5
    }

    /// `D`, `C`, `G`, `B1` at `state`; `D` is symmetrized on output.
    pub fn eval_terms(&self, state: &VehicleState) -> Result<Terms, DynamicsError> {
        let mut ws = self.workspace();
        self.eval_terms_with(state.q.as_slice(), state.qdot.as_slice(), &mut ws)
    }

    pub fn eval_terms_with(
        &self,
        q: &[f64],
        qdot: &[f64],
        ws: &mut TermsWorkspace,
    ) -> Result<Terms, DynamicsError> {
        let n = self.n_q;
        let out = self.run(&self.full_tape, q, qdot, ws)?;
        Ok(Terms {
            d: self.symmetric(&out[..n * n]),
            c: self.square(&out[n * n..2 * n * n]),
            g: DVector::from_column_slice(&out[2 * n * n..2 * n * n + n]),
            b1: self.b1.clone(),
        })
    }

    /// Terms and wing kinematics from a single fused tape pass.
    pub fn eval_all(
        &self,
        q: &[f64],
        qdot: &[f64],
        ws: &mut TermsWorkspace,
    ) -> Result<(Terms, Kinematics), DynamicsError> {
        let n = self.n_q;
        let out = self.run(&self.full_tape, q, qdot, ws)?;
        let terms = Terms {
            d: self.symmetric(&out[..n * n]),
            c: self.square(&out[n * n..2 * n * n]),
            g: DVector::from_column_slice(&out[2 * n * n..2 * n * n + n]),
            b1: self.b1.clone(),
        };
        let kin = self.unpack_kinematics(&out[2 * n * n + n..]);
        Ok((terms, kin))
    }

    fn unpack_kinematics(&self, out: &[f64]) -> Kinematics {
        let e = self.n_elem;
        let vecs = |s: &[f64]| {
            s.chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect::<Vec<_>>()
        };
        Kinematics {
            points: vecs(&out[..3 * e]),
            chord: vecs(&out[3 * e..6 * e]),
            normal: vecs(&out[6 * e..9 * e]),
            pjac: DMatrix::from_row_slice(3 * e, self.n_q, &out[9 * e..9 * e + 3 * e * self.n_q]),
        }
    }

    pub fn kinematics(&self, q: &[f64]) -> Result<Kinematics, DynamicsError> {
        let mut ws = self.workspace();
        let zeros = vec![0.0; self.n_q];
        let out = self.run(&self.kin_tape, q, &zeros, &mut ws)?;
        Ok(self.unpack_kinematics(out))
    }

    /// World-frame quarter-chord points, one per blade element.
    pub fn quarter_chord_points(&self, q: &[f64]) -> Result<Vec<Vector3<f64>>, DynamicsError> {
        Ok(self.kinematics(q)?.points)
    }

    /// `(T, V)` at a state.
    pub fn energy(&self, q: &[f64], qdot: &[f64]) -> Result<(f64, f64), DynamicsError> {
        let mut ws = self.workspace();
        let out = self.run(&self.energy_tape, q, qdot, &mut ws)?;
        Ok((out[0], out[1]))
    }

    /// Evaluates one of the individual term tapes (`D`, `C`, `G`, `Pjac`)
    /// into `out`; used by benchmarks and equivalence tests.
    pub fn eval_tape(
        &self,
        tape: &CompiledTape,
        q: &[f64],
        qdot: &[f64],
        ws: &mut TermsWorkspace,
        out: &mut [f64],
    ) -> Result<(), DynamicsError> {
        let r = self.run(tape, q, qdot, ws)?;
        out[..r.len()].copy_from_slice(r);
        Ok(())
    }
}
