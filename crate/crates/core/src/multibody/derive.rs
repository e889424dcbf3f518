//! Euler-Lagrange derivation of `D(q) q'' + C(q, q') q' + G(q) = B1 u1 + B2 u2`.
//!
//! The Lagrangian is assembled symbolically from forward kinematics; link
//! velocities come from forward-mode tangents along `q'`. With the momentum
//! `p = dT/dq'`:
//!
//! * `D = dp/dq'` (row `i` from one reverse sweep of `p_i`),
//! * `J = dp/dq` (same sweep),
//! * `C = (D' + J - J^T) / 2` with `D'` the tangent of `D` along `q'`.
//!
//! `C` is therefore the Christoffel-symbol matrix, and `D' - 2C = J^T - J`
//! is skew-symmetric by construction.

use nalgebra::Vector3;

use crate::exprgraph::{cse_with_map, ExprGraph, NodeId};

use super::model::{BaseKind, MultibodyModel};
use super::symbolic::{self as sym, SymMat3, SymVec3};

/// Graph handles for every derived quantity. Matrices are row-major.
#[derive(Clone, Debug)]
pub struct TermNodes {
    pub d: Vec<NodeId>,
    pub c: Vec<NodeId>,
    pub g: Vec<NodeId>,
    /// `(3 * n_elem) x n_q` Jacobian of the stacked quarter-chord points.
    pub pjac: Vec<NodeId>,
    /// Quarter-chord points, world frame, stacked xyz.
    pub points: Vec<NodeId>,
    /// Per-element chord direction (leading to trailing edge), world frame.
    pub chord: Vec<NodeId>,
    /// Per-element wing normal, world frame.
    pub normal: Vec<NodeId>,
    pub kinetic: NodeId,
    pub potential: NodeId,
    /// `dT/dq'`.
    pub momentum: Vec<NodeId>,
}

impl TermNodes {
    fn remap(&self, map: &[NodeId]) -> TermNodes {
        let m = |v: &[NodeId]| v.iter().map(|n| map[n.index()]).collect::<Vec<_>>();
        TermNodes {
            d: m(&self.d),
            c: m(&self.c),
            g: m(&self.g),
            pjac: m(&self.pjac),
            points: m(&self.points),
            chord: m(&self.chord),
            normal: m(&self.normal),
            kinetic: map[self.kinetic.index()],
            potential: map[self.potential.index()],
            momentum: m(&self.momentum),
        }
    }
}

/// Symbolic derivation result before compilation.
pub struct Derivation {
    /// Graph as produced by the builder (no structural sharing beyond what
    /// the construction itself reuses).
    pub raw: ExprGraph,
    pub raw_nodes: TermNodes,
    /// The same graph after common-subexpression elimination.
    pub graph: ExprGraph,
    pub nodes: TermNodes,
}

pub fn q_symbol(name: &str) -> String {
    format!("q.{name}")
}

pub fn qd_symbol(name: &str) -> String {
    format!("qd.{name}")
}

/// Builds the full symbolic model. Inputs are declared as all `q.<dof>`
/// followed by all `qd.<dof>`, i.e. in state-vector order.
pub fn derive(model: &MultibodyModel) -> Derivation {
    let mut g = ExprGraph::new();
    let n = model.n_q();
    let q: Vec<NodeId> = model
        .dof_names()
        .iter()
        .map(|d| g.symbol(&q_symbol(d)).expect("unique dof names"))
        .collect();
    let qd: Vec<NodeId> = model
        .dof_names()
        .iter()
        .map(|d| g.symbol(&qd_symbol(d)).expect("unique dof names"))
        .collect();

    // Frame 0 is the base, frame j + 1 the child link of joint j.
    let mut frames: Vec<Option<(SymMat3, SymVec3)>> = vec![None; model.joints.len() + 1];
    frames[0] = Some(base_pose(&mut g, model, &q));
    for &j in model.topological_order() {
        let joint = &model.joints[j];
        let parent = frame_index(model, &joint.parent);
        let (rp, pp) = frames[parent].expect("parents precede children");
        let rj = sym::axis_angle(&mut g, &joint.axis, q[model.joint_dof(j)]);
        let r = sym::mat_mul(&mut g, &rp, &rj);
        let off = sym::mat_const_vec(&mut g, &rp, &joint.origin);
        let p = sym::add(&mut g, &pp, &off);
        frames[j + 1] = Some((r, p));
    }
    let frames: Vec<(SymMat3, SymVec3)> = frames.into_iter().map(|f| f.unwrap()).collect();

    // Link COMs and rotations; their tangents along qd give velocities.
    let mut links = Vec::new();
    if model.base.kind != BaseKind::Fixed {
        links.push((0, &model.base.link));
    }
    for (j, joint) in model.joints.iter().enumerate() {
        links.push((j + 1, &joint.link));
    }
    let mut primal = Vec::new();
    let mut coms = Vec::new();
    for &(f, link) in &links {
        let (r, p) = frames[f];
        let rc = sym::mat_const_vec(&mut g, &r, &link.com);
        let com = sym::add(&mut g, &p, &rc);
        coms.push(com);
        primal.extend_from_slice(&com);
        for row in &r {
            primal.extend_from_slice(row);
        }
    }
    let tangents = g
        .directional_derivative(&primal, &q, &qd)
        .expect("q symbols are inputs");

    let mut t_terms = Vec::new();
    let mut v_terms = Vec::new();
    for (k, &(f, link)) in links.iter().enumerate() {
        let base = k * 12;
        let v: SymVec3 = [tangents[base], tangents[base + 1], tangents[base + 2]];
        let mut rdot = [[v[0]; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                rdot[a][b] = tangents[base + 3 + 3 * a + b];
            }
        }
        let r = frames[f].0;
        let omega_hat = sym::mat_mul(&mut g, &sym::transpose(&r), &rdot);
        let omega: SymVec3 = [omega_hat[2][1], omega_hat[0][2], omega_hat[1][0]];

        let vv = sym::dot(&mut g, &v, &v);
        let half_m = g.constant(0.5 * link.mass);
        t_terms.push(g.mul(half_m, vv));

        if link.inertia.iter().any(|&x| x != 0.0) {
            let mut iw = omega;
            for (a, slot) in iw.iter_mut().enumerate() {
                let row: Vec<NodeId> = (0..3).map(|b| g.constant(link.inertia[(a, b)])).collect();
                *slot = g.dot(&row, &omega);
            }
            let wiw = sym::dot(&mut g, &omega, &iw);
            let half = g.constant(0.5);
            t_terms.push(g.mul(half, wiw));
        }

        let mg = g.constant(link.mass * model.gravity);
        v_terms.push(g.mul(mg, coms[k][2]));
    }
    let kinetic = g.sum(&t_terms);
    let potential = g.sum(&v_terms);

    let momentum = g
        .differentiate(kinetic, &qd)
        .expect("qd symbols are inputs");
    let mut wrt = qd.clone();
    wrt.extend_from_slice(&q);
    let mut d = Vec::with_capacity(n * n);
    let mut jac = Vec::with_capacity(n * n);
    for &p in &momentum {
        let row = g.differentiate(p, &wrt).expect("inputs");
        d.extend_from_slice(&row[..n]);
        jac.extend_from_slice(&row[n..]);
    }
    let gravity = g.differentiate(potential, &q).expect("inputs");
    let ddot = g.directional_derivative(&d, &q, &qd).expect("inputs");
    let half = g.constant(0.5);
    let mut c = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let s = g.add(ddot[i * n + j], jac[i * n + j]);
            let t = g.sub(s, jac[j * n + i]);
            c.push(g.mul(half, t));
        }
    }

    let mut points = Vec::new();
    let mut chord = Vec::new();
    let mut normal = Vec::new();
    for seg in &model.wing_segments {
        let (r, p) = frames[frame_index(model, &seg.parent)];
        let cdir = sym::mat_const_vec(&mut g, &r, &seg.chord_axis);
        let ndir = sym::mat_const_vec(&mut g, &r, &seg.normal_axis);
        for k in 0..seg.elements {
            let local = seg.element_point(k);
            let off = sym::mat_const_vec(&mut g, &r, &local);
            let w = sym::add(&mut g, &p, &off);
            points.extend_from_slice(&w);
            chord.extend_from_slice(&cdir);
            normal.extend_from_slice(&ndir);
        }
    }
    let mut pjac = Vec::with_capacity(points.len() * n);
    for &pc in &points {
        pjac.extend(g.differentiate(pc, &q).expect("inputs"));
    }

    let raw_nodes = TermNodes {
        d,
        c,
        g: gravity,
        pjac,
        points,
        chord,
        normal,
        kinetic,
        potential,
        momentum,
    };
    let (graph, map) = cse_with_map(&g);
    let nodes = raw_nodes.remap(&map);
    Derivation {
        raw: g,
        raw_nodes,
        graph,
        nodes,
    }
}

fn frame_index(model: &MultibodyModel, name: &str) -> usize {
    if name == "base" {
        0
    } else {
        model.joint_index(name).expect("validated parent") + 1
    }
}

fn base_pose(g: &mut ExprGraph, model: &MultibodyModel, q: &[NodeId]) -> (SymMat3, SymVec3) {
    match model.base.kind {
        BaseKind::Fixed => (sym::identity(g), sym::zero_vec(g)),
        BaseKind::Planar => {
            let z = g.zero();
            let r = sym::axis_angle(g, &Vector3::y(), q[2]);
            (r, [q[0], z, q[1]])
        }
        BaseKind::Floating => {
            // Z-Y-X Euler angles: R = Rz(yaw) Ry(pitch) Rx(roll)
            let rx = sym::axis_angle(g, &Vector3::x(), q[3]);
            let ry = sym::axis_angle(g, &Vector3::y(), q[4]);
            let rz = sym::axis_angle(g, &Vector3::z(), q[5]);
            let rzy = sym::mat_mul(g, &rz, &ry);
            let r = sym::mat_mul(g, &rzy, &rx);
            (r, [q[0], q[1], q[2]])
        }
    }
}
