//! Invariant suite for a model file.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use wingfit::multibody::{derive_dynamics, DynamicsTerms, VehicleState};

use crate::bench::bench_states;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::simulate::load_model;

pub const VALIDATE_STATES: usize = 100;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    /// Worst value of the checked quantity over all states.
    pub worst: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

#[derive(Clone, Debug)]
pub struct ValidateReport {
    pub checks: Vec<Check>,
}

impl ValidateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

fn inf_norm<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn eval_err(e: impl std::fmt::Display) -> CliError {
    CliError::Invariant(format!("evaluation failed: {e}"))
}

/// Worst-case values of every invariant over `states`.
pub fn check_states(dt: &DynamicsTerms, states: &[Vec<f64>]) -> Result<ValidateReport, CliError> {
    let n = dt.n_q();
    let dv = dt.derivation();
    let mut sym = 0.0f64;
    let mut spd = 0.0f64;
    let mut skew = 0.0f64;
    let mut kinetic = 0.0f64;
    let mut grav = 0.0f64;
    let mut pjac = 0.0f64;
    let mut tape = 0.0f64;
    let mut ws = dt.d_tape().workspace();
    let mut d_raw = vec![0.0; n * n];
    for x in states {
        let (q, qd) = x.split_at(n);
        dt.d_tape().eval(x, &mut ws, &mut d_raw).map_err(eval_err)?;
        let d = DMatrix::from_row_slice(n, n, &d_raw);
        let dmax = inf_norm(d.iter()).max(f64::MIN_POSITIVE);
        sym = sym.max(inf_norm((&d - d.transpose()).iter()) / dmax);
        let eig = SymmetricEigen::new((&d + d.transpose()) * 0.5).eigenvalues;
        spd = spd.max(if eig.min() > 0.0 { 0.0 } else { 1.0 });

        let state = VehicleState::from_x(x, 0.0);
        let terms = dt.eval_terms(&state).map_err(eval_err)?;
        let qdv = DVector::from_column_slice(qd);

        // D' along q' by forward-mode evaluation of the CSE'd graph.
        let seed: Vec<f64> = qd
            .iter()
            .copied()
            .chain(std::iter::repeat_n(0.0, n))
            .collect();
        let (_, d_dot) = dv
            .graph
            .eval_dual(x, &seed, &dv.nodes.d)
            .map_err(eval_err)?;
        let d_dot = DMatrix::from_row_slice(n, n, &d_dot);
        let m = &d_dot - &terms.c * 2.0;
        let scale = qdv.norm_squared()
            * inf_norm(d_dot.iter())
                .max(inf_norm(terms.c.iter()))
                .max(f64::MIN_POSITIVE);
        skew = skew.max((qdv.transpose() * &m * &qdv)[0].abs() / scale);

        let (t, _) = dt.energy(q, qd).map_err(eval_err)?;
        let t_ref = 0.5 * (qdv.transpose() * &terms.d * &qdv)[0];
        kinetic = kinetic.max((t - t_ref).abs() / t_ref.abs().max(f64::MIN_POSITIVE));

        let h = 1e-6;
        let mut g_fd = DVector::zeros(n);
        for i in 0..n {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += h;
            qm[i] -= h;
            let (_, vp) = dt.energy(&qp, qd).map_err(eval_err)?;
            let (_, vm) = dt.energy(&qm, qd).map_err(eval_err)?;
            g_fd[i] = (vp - vm) / (2.0 * h);
        }
        let gmax = inf_norm(terms.g.iter()).max(1e-12);
        grav = grav.max(inf_norm((&terms.g - &g_fd).iter()) / gmax);

        if dt.n_elements() > 0 {
            let jac = dt.kinematics(q).map_err(eval_err)?.pjac;
            let mut j_fd = DMatrix::zeros(jac.nrows(), n);
            for i in 0..n {
                let mut qp = q.to_vec();
                let mut qm = q.to_vec();
                qp[i] += h;
                qm[i] -= h;
                let pp = dt.quarter_chord_points(&qp).map_err(eval_err)?;
                let pm = dt.quarter_chord_points(&qm).map_err(eval_err)?;
                for (e, (a, b)) in pp.iter().zip(&pm).enumerate() {
                    for k in 0..3 {
                        j_fd[(3 * e + k, i)] = (a[k] - b[k]) / (2.0 * h);
                    }
                }
            }
            let jmax = inf_norm(jac.iter()).max(1e-12);
            pjac = pjac.max(inf_norm((&jac - &j_fd).iter()) / jmax);
        }

        let all: Vec<_> = [&dv.nodes.d, &dv.nodes.c, &dv.nodes.g]
            .into_iter()
            .flatten()
            .copied()
            .collect();
        let reference = dv.graph.eval(x, &all).map_err(eval_err)?;
        let compiled: Vec<f64> = [dt.d_tape(), dt.c_tape(), dt.g_tape()]
            .into_iter()
            .map(|t| t.eval_vec(x))
            .collect::<Result<Vec<_>, _>>()
            .map_err(eval_err)?
            .concat();
        for (a, b) in reference.iter().zip(&compiled) {
            tape = tape.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    Ok(ValidateReport {
        checks: vec![
            Check {
                name: "D symmetric (rel.)",
                worst: sym,
                tol: 1e-12,
            },
            Check {
                name: "D positive definite (1 = failure)",
                worst: spd,
                tol: 0.0,
            },
            Check {
                name: "q'^T (D' - 2C) q' (rel.)",
                worst: skew,
                tol: 1e-9,
            },
            Check {
                name: "T = q'^T D q' / 2 (rel.)",
                worst: kinetic,
                tol: 1e-10,
            },
            Check {
                name: "G = dV/dq vs finite differences (rel.)",
                worst: grav,
                tol: 1e-6,
            },
            Check {
                name: "Pjac = dP/dq vs finite differences (rel.)",
                worst: pjac,
                tol: 1e-6,
            },
            Check {
                name: "tape = graph evaluation (rel.)",
                worst: tape,
                tol: 1e-12,
            },
        ],
    })
}

/// `validate`: runs the invariant suite at seeded random states.
pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<ValidateReport, CliError> {
    let path = cfg.model_path()?;
    let model = load_model(path)?;
    let dt = derive_dynamics(&model);
    let states = bench_states(model.n_q(), VALIDATE_STATES, cfg.seed);
    let report = check_states(&dt, &states)?;
    println!(
        "validate: {} ({} DOF) at {} random states",
        model.name,
        model.n_q(),
        states.len()
    );
    for c in &report.checks {
        println!(
            "  {:<4} {:<44} worst {:.3e}  tol {:.0e}",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.worst,
            c.tol
        );
    }
    if report.passed() {
        Ok(report)
    } else {
        Err(CliError::Invariant(format!(
            "{} failed validation",
            path.display()
        )))
    }
}
