//! Symbolic differentiation on the graph.
//!
//! Reverse mode ([`ExprGraph::differentiate`]) is the workhorse for scalar
//! energies; forward mode ([`ExprGraph::directional_derivative`]) builds
//! tangent nodes along a symbolic direction and is used for velocity
//! kinematics and time derivatives of matrices.

use super::{ExprGraph, GraphError, Node, NodeId};

impl ExprGraph {
    /// Reverse-mode gradient of `output` with respect to the input symbols
    /// `wrt`. New nodes are appended and reuse existing subexpressions; a
    /// variable `output` does not depend on maps to a literal zero.
    pub fn differentiate(
        &mut self,
        output: NodeId,
        wrt: &[NodeId],
    ) -> Result<Vec<NodeId>, GraphError> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
            if !matches!(self.node(w), Node::Input(_)) {
                return Err(GraphError::NotASymbol(w));
            }
        }
        let top = output.index();
        let live = self.reachable(&[output]);
        let mut adj: Vec<Option<NodeId>> = vec![None; top + 1];
        adj[top] = Some(self.one());

        for i in (0..=top).rev() {
            if !live[i] {
                continue;
            }
            let Some(a) = adj[i] else { continue };
            let this = NodeId::from_index(i);
            match *self.node(this) {
                Node::Const(_) | Node::Input(_) => {}
                Node::Add(x, y) => {
                    self.accumulate(&mut adj, x, a);
                    self.accumulate(&mut adj, y, a);
                }
                Node::Sub(x, y) => {
                    self.accumulate(&mut adj, x, a);
                    let na = self.neg(a);
                    self.accumulate(&mut adj, y, na);
                }
                Node::Mul(x, y) => {
                    let dx = self.mul(a, y);
                    self.accumulate(&mut adj, x, dx);
                    let dy = self.mul(a, x);
                    self.accumulate(&mut adj, y, dy);
                }
                Node::Div(x, y) => {
                    let dx = self.div(a, y);
                    self.accumulate(&mut adj, x, dx);
                    // d(x/y)/dy = -(x/y)/y
                    let q = self.div(this, y);
                    let t = self.mul(a, q);
                    let dy = self.neg(t);
                    self.accumulate(&mut adj, y, dy);
                }
                Node::Neg(x) => {
                    let d = self.neg(a);
                    self.accumulate(&mut adj, x, d);
                }
                Node::Sin(x) => {
                    let c = self.cos(x);
                    let d = self.mul(a, c);
                    self.accumulate(&mut adj, x, d);
                }
                Node::Cos(x) => {
                    let s = self.sin(x);
                    let t = self.mul(a, s);
                    let d = self.neg(t);
                    self.accumulate(&mut adj, x, d);
                }
                Node::Exp(x) => {
                    let d = self.mul(a, this);
                    self.accumulate(&mut adj, x, d);
                }
                Node::Log(x) => {
                    let d = self.div(a, x);
                    self.accumulate(&mut adj, x, d);
                }
                Node::Sqrt(x) => {
                    let two = self.constant(2.0);
                    let den = self.mul(two, this);
                    let d = self.div(a, den);
                    self.accumulate(&mut adj, x, d);
                }
                Node::Powi(x, n) => {
                    let p = self.powi(x, n - 1);
                    let k = self.constant(n as f64);
                    let kp = self.mul(k, p);
                    let d = self.mul(a, kp);
                    self.accumulate(&mut adj, x, d);
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adj.get(w.index()).copied().flatten() {
                Some(d) => d,
                None => self.zero(),
            })
            .collect())
    }

    fn accumulate(&mut self, adj: &mut [Option<NodeId>], target: NodeId, contrib: NodeId) {
        let slot = &mut adj[target.index()];
        *slot = Some(match *slot {
            None => contrib,
            Some(prev) => self.add(prev, contrib),
        });
    }

    /// Forward-mode symbolic directional derivative: returns nodes computing
    /// `sum_j d(output)/d(wrt_j) * direction_j` for each output.
    pub fn directional_derivative(
        &mut self,
        outputs: &[NodeId],
        wrt: &[NodeId],
        direction: &[NodeId],
    ) -> Result<Vec<NodeId>, GraphError> {
        assert_eq!(
            wrt.len(),
            direction.len(),
            "one direction node per variable"
        );
        for &o in outputs {
            self.check(o)?;
        }
        for (&w, &d) in wrt.iter().zip(direction) {
            self.check(w)?;
            self.check(d)?;
            if !matches!(self.node(w), Node::Input(_)) {
                return Err(GraphError::NotASymbol(w));
            }
        }
        let Some(top) = outputs.iter().map(|o| o.index()).max() else {
            return Ok(Vec::new());
        };
        let live = self.reachable(outputs);
        let mut tan: Vec<Option<NodeId>> = vec![None; top + 1];
        for (&w, &d) in wrt.iter().zip(direction) {
            if w.index() <= top {
                tan[w.index()] = Some(d);
            }
        }

        for i in 0..=top {
            if !live[i] {
                continue;
            }
            let this = NodeId::from_index(i);
            let node = *self.node(this);
            let t = |id: NodeId| tan[id.index()];
            let out = match node {
                Node::Const(_) | Node::Input(_) => continue,
                Node::Add(x, y) => match (t(x), t(y)) {
                    (None, None) => None,
                    (Some(a), None) => Some(a),
                    (None, Some(b)) => Some(b),
                    (Some(a), Some(b)) => Some(self.add(a, b)),
                },
                Node::Sub(x, y) => match (t(x), t(y)) {
                    (None, None) => None,
                    (Some(a), None) => Some(a),
                    (None, Some(b)) => Some(self.neg(b)),
                    (Some(a), Some(b)) => Some(self.sub(a, b)),
                },
                Node::Mul(x, y) => {
                    let l = t(x).map(|a| self.mul(a, y));
                    let r = t(y).map(|b| self.mul(x, b));
                    match (l, r) {
                        (None, None) => None,
                        (Some(a), None) | (None, Some(a)) => Some(a),
                        (Some(a), Some(b)) => Some(self.add(a, b)),
                    }
                }
                Node::Div(x, y) => {
                    let l = t(x).map(|a| self.div(a, y));
                    let r = t(y).map(|b| {
                        let q = self.div(this, y);
                        let m = self.mul(q, b);
                        self.neg(m)
                    });
                    match (l, r) {
                        (None, None) => None,
                        (Some(a), None) | (None, Some(a)) => Some(a),
                        (Some(a), Some(b)) => Some(self.add(a, b)),
                    }
                }
                Node::Neg(x) => t(x).map(|a| self.neg(a)),
                Node::Sin(x) => t(x).map(|a| {
                    let c = self.cos(x);
                    self.mul(c, a)
                }),
                Node::Cos(x) => t(x).map(|a| {
                    let s = self.sin(x);
                    let m = self.mul(s, a);
                    self.neg(m)
                }),
                Node::Exp(x) => t(x).map(|a| self.mul(this, a)),
                Node::Log(x) => t(x).map(|a| self.div(a, x)),
                Node::Sqrt(x) => t(x).map(|a| {
                    let two = self.constant(2.0);
                    let den = self.mul(two, this);
                    self.div(a, den)
                }),
                Node::Powi(x, n) => t(x).map(|a| {
                    let p = self.powi(x, n - 1);
                    let k = self.constant(n as f64);
                    let kp = self.mul(k, p);
                    self.mul(kp, a)
                }),
            };
            tan[i] = out;
        }

        Ok(outputs
            .iter()
            .map(|o| match tan[o.index()] {
                Some(d) => d,
                None => self.zero(),
            })
            .collect())
    }
}
