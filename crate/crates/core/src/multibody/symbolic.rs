//! Small fixed-size symbolic vectors and rotation matrices over an
//! [`ExprGraph`].

use nalgebra::Vector3;

use crate::exprgraph::{ExprGraph, NodeId};

pub type SymVec3 = [NodeId; 3];
pub type SymMat3 = [[NodeId; 3]; 3];

pub fn const_vec(g: &mut ExprGraph, v: &Vector3<f64>) -> SymVec3 {
    [g.constant(v.x), g.constant(v.y), g.constant(v.z)]
}

pub fn identity(g: &mut ExprGraph) -> SymMat3 {
    let o = g.one();
    let z = g.zero();
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn zero_vec(g: &mut ExprGraph) -> SymVec3 {
    let z = g.zero();
    [z, z, z]
}

pub fn add(g: &mut ExprGraph, a: &SymVec3, b: &SymVec3) -> SymVec3 {
    [g.add(a[0], b[0]), g.add(a[1], b[1]), g.add(a[2], b[2])]
}

pub fn dot(g: &mut ExprGraph, a: &SymVec3, b: &SymVec3) -> NodeId {
    g.dot(a, b)
}

pub fn mat_vec(g: &mut ExprGraph, m: &SymMat3, v: &SymVec3) -> SymVec3 {
    [g.dot(&m[0], v), g.dot(&m[1], v), g.dot(&m[2], v)]
}

/// `m * v` for a constant vector, skipping zero components.
pub fn mat_const_vec(g: &mut ExprGraph, m: &SymMat3, v: &Vector3<f64>) -> SymVec3 {
    let c = const_vec(g, v);
    mat_vec(g, m, &c)
}

pub fn mat_mul(g: &mut ExprGraph, a: &SymMat3, b: &SymMat3) -> SymMat3 {
    let mut out = identity(g);
    for i in 0..3 {
        for j in 0..3 {
            let col = [b[0][j], b[1][j], b[2][j]];
            out[i][j] = g.dot(&a[i], &col);
        }
    }
    out
}

pub fn transpose(m: &SymMat3) -> SymMat3 {
    let mut t = *m;
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

/// Rotation by `angle` about a constant unit `axis`. Signed coordinate
/// axes produce the elementary rotation matrices exactly.
pub fn axis_angle(g: &mut ExprGraph, axis: &Vector3<f64>, angle: NodeId) -> SymMat3 {
    let c = g.cos(angle);
    let s = g.sin(angle);
    for k in 0..3 {
        let others = (0..3).filter(|&i| i != k).all(|i| axis[i] == 0.0);
        if others && axis[k].abs() == 1.0 {
            let s = if axis[k] < 0.0 { g.neg(s) } else { s };
            return elementary(g, k, c, s);
        }
    }
    // Rodrigues: c I + s [a]x + (1 - c) a a^T
    let one = g.one();
    let omc = g.sub(one, c);
    let mut r = identity(g);
    let skew = [
        [0.0, -axis.z, axis.y],
        [axis.z, 0.0, -axis.x],
        [-axis.y, axis.x, 0.0],
    ];
    for i in 0..3 {
        for j in 0..3 {
            let diag = if i == j { c } else { g.zero() };
            let sk = g.scale(skew[i][j], s);
            let outer = g.scale(axis[i] * axis[j], omc);
            let t = g.add(diag, sk);
            r[i][j] = g.add(t, outer);
        }
    }
    r
}

/// Elementary rotation about coordinate axis `k` given `cos` and `sin` nodes.
pub fn elementary(g: &mut ExprGraph, k: usize, c: NodeId, s: NodeId) -> SymMat3 {
    let o = g.one();
    let z = g.zero();
    let ns = g.neg(s);
    match k {
        0 => [[o, z, z], [z, c, ns], [z, s, c]],
        1 => [[c, z, s], [z, o, z], [ns, z, c]],
        _ => [[c, ns, z], [s, c, z], [z, z, o]],
    }
}
