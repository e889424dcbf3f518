use std::collections::HashMap;

use super::{ExprGraph, Node, NodeId, NodeKey};

/// Common-subexpression elimination with constant folding.
///
/// Structurally identical nodes are merged, operands of `add`/`mul` are put
/// in canonical order, and nodes whose operands are all constants are
/// replaced by their value. Nothing is re-associated or distributed, so the
/// result evaluates bitwise identically to the input graph.
pub fn cse(graph: &ExprGraph) -> ExprGraph {
    cse_with_map(graph).0
}

/// As [`cse`], also returning the old-to-new node mapping.
pub fn cse_with_map(graph: &ExprGraph) -> (ExprGraph, Vec<NodeId>) {
    let mut out = ExprGraph::new();
    let mut seen: HashMap<NodeKey, NodeId> = HashMap::with_capacity(graph.len());
    let mut map: Vec<NodeId> = Vec::with_capacity(graph.len());

    for node in graph.nodes() {
        let new_id = match *node {
            Node::Input(slot) => {
                let name = &graph.symbols()[slot as usize].0;
                let id = out.symbol(name).expect("symbol names are unique");
                seen.insert(Node::Input(slot).key(), id);
                id
            }
            _ => {
                let mut n = node.map_operands(|o| map[o.index()]);
                if let Node::Add(a, b) | Node::Mul(a, b) = n {
                    if b < a {
                        n = match n {
                            Node::Add(..) => Node::Add(b, a),
                            _ => Node::Mul(b, a),
                        };
                    }
                }
                if let Some(v) = fold(&out, &n) {
                    n = Node::Const(v);
                }
                let key = n.key();
                match seen.get(&key) {
                    Some(&id) => id,
                    None => {
                        let id = out.push(n);
                        seen.insert(key, id);
                        id
                    }
                }
            }
        };
        map.push(new_id);
    }
    (out, map)
}

fn fold(g: &ExprGraph, n: &Node) -> Option<f64> {
    let ops = n.operands();
    let ops = ops.as_slice();
    if ops.is_empty() {
        return None;
    }
    let mut vals = [0.0; 2];
    for (k, o) in ops.iter().enumerate() {
        vals[k] = g.const_value(*o)?;
    }
    match n.apply(&[], vals[0], vals[1]) {
        Ok(v) if v.is_finite() => Some(v),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn assert_unique(g: &ExprGraph) {
        let keys: HashSet<_> = g.nodes().iter().map(|n| n.key()).collect();
        assert_eq!(keys.len(), g.len());
    }

    #[test]
    fn shared_sum_is_merged() {
        let mut g = ExprGraph::new();
        let a = g.symbol("a").unwrap();
        let b = g.symbol("b").unwrap();
        let s1 = g.add(a, b);
        let s2 = g.add(a, b);
        let p = g.mul(s1, s2);
        let (c, map) = cse_with_map(&g);
        assert_eq!(c.live_count(&[map[p.index()]]), 4);
        assert_eq!(c.len(), 4);
        assert_unique(&c);
    }

    #[test]
    fn repeated_sine_collapses() {
        let mut g = ExprGraph::new();
        let x = g.symbol("x").unwrap();
        let s1 = g.sin(x);
        let s2 = g.sin(x);
        let s3 = g.sin(x);
        let p = g.mul(s1, s2);
        let f = g.add(p, s3);
        let (c, map) = cse_with_map(&g);
        let sines = c
            .nodes()
            .iter()
            .filter(|n| matches!(n, Node::Sin(_)))
            .count();
        assert_eq!(sines, 1);
        let v0 = g.eval(&[0.4], &[f]).unwrap();
        let v1 = c.eval(&[0.4], &[map[f.index()]]).unwrap();
        assert_eq!(v0[0].to_bits(), v1[0].to_bits());
    }

    #[test]
    fn constants_fold_but_domain_errors_survive() {
        let mut g = ExprGraph::new();
        let x = g.symbol("x").unwrap();
        let two = g.constant(2.0);
        let three = g.constant(3.0);
        let six = g.mul(two, three);
        let f = g.mul(six, x);
        let m1 = g.constant(-1.0);
        let bad = g.log(m1);
        let (c, map) = cse_with_map(&g);
        assert_eq!(c.const_value(map[six.index()]), Some(6.0));
        assert!(matches!(c.node(map[bad.index()]), Node::Log(_)));
        assert_eq!(c.eval(&[2.0], &[map[f.index()]]).unwrap(), vec![12.0]);
    }

    #[test]
    fn commutative_operands_canonicalised() {
        let mut g = ExprGraph::new();
        let a = g.symbol("a").unwrap();
        let b = g.symbol("b").unwrap();
        let s1 = g.mul(a, b);
        let s2 = g.mul(b, a);
        let (_, map) = cse_with_map(&g);
        assert_eq!(map[s1.index()], map[s2.index()]);
    }
}
