//! Symbolic expression DAGs.
//!
//! An [`ExprGraph`] is an append-only list of nodes in which every operand
//! refers to an earlier node, so node order is always a valid topological
//! order. Graphs are built through the arithmetic methods on the graph
//! itself, differentiated symbolically ([`ExprGraph::differentiate`],
//! [`ExprGraph::directional_derivative`]), deduplicated with [`cse`] and
//! flattened into a [`CompiledTape`] for repeated numeric evaluation.
//!
//! The builder applies a handful of identity rewrites involving literal
//! zeros and ones (`x * 0`, `x + 0`, `x * 1`, ...). It does not deduplicate
//! structurally identical nodes; that is the job of [`cse`].

mod cse;
mod diff;
mod dual;
pub mod scalar;
mod tape;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub use cse::{cse, cse_with_map};
pub use dual::DualNumber;
pub use tape::{CompiledTape, TapeInstr, TapeOp};

/// Handle to a node of an [`ExprGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub(crate) fn from_index(i: usize) -> Self {
        NodeId(u32::try_from(i).expect("expression graph exceeds u32 nodes"))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// A single graph node. Operands always point at earlier nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    /// Input symbol, by position in the graph's symbol table.
    Input(u32),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Powi(NodeId, i32),
}

/// Hashable structural identity of a node (constants compared by bit pattern).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum NodeKey {
    Const(u64),
    Input(u32),
    Binary(u8, NodeId, NodeId),
    Unary(u8, NodeId),
    Powi(NodeId, i32),
}

impl Node {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Node::Const(_) => "const",
            Node::Input(_) => "input",
            Node::Add(..) => "add",
            Node::Sub(..) => "sub",
            Node::Mul(..) => "mul",
            Node::Div(..) => "div",
            Node::Neg(_) => "neg",
            Node::Sin(_) => "sin",
            Node::Cos(_) => "cos",
            Node::Exp(_) => "exp",
            Node::Log(_) => "log",
            Node::Sqrt(_) => "sqrt",
            Node::Powi(..) => "powi",
        }
    }

    /// Operands in order; unary nodes yield one, leaves none.
    pub fn operands(&self) -> Operands {
        match *self {
            Node::Const(_) | Node::Input(_) => Operands::new(&[]),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                Operands::new(&[a, b])
            }
            Node::Neg(a)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Exp(a)
            | Node::Log(a)
            | Node::Sqrt(a)
            | Node::Powi(a, _) => Operands::new(&[a]),
        }
    }

    /// Same node with operands rewritten through `f`.
    pub(crate) fn map_operands(&self, mut f: impl FnMut(NodeId) -> NodeId) -> Node {
        match *self {
            Node::Const(_) | Node::Input(_) => *self,
            Node::Add(a, b) => Node::Add(f(a), f(b)),
            Node::Sub(a, b) => Node::Sub(f(a), f(b)),
            Node::Mul(a, b) => Node::Mul(f(a), f(b)),
            Node::Div(a, b) => Node::Div(f(a), f(b)),
            Node::Neg(a) => Node::Neg(f(a)),
            Node::Sin(a) => Node::Sin(f(a)),
            Node::Cos(a) => Node::Cos(f(a)),
            Node::Exp(a) => Node::Exp(f(a)),
            Node::Log(a) => Node::Log(f(a)),
            Node::Sqrt(a) => Node::Sqrt(f(a)),
            Node::Powi(a, n) => Node::Powi(f(a), n),
        }
    }

    pub(crate) fn key(&self) -> NodeKey {
        match *self {
            Node::Const(v) => NodeKey::Const(v.to_bits()),
            Node::Input(i) => NodeKey::Input(i),
            Node::Add(a, b) => NodeKey::Binary(0, a, b),
            Node::Sub(a, b) => NodeKey::Binary(1, a, b),
            Node::Mul(a, b) => NodeKey::Binary(2, a, b),
            Node::Div(a, b) => NodeKey::Binary(3, a, b),
            Node::Neg(a) => NodeKey::Unary(0, a),
            Node::Sin(a) => NodeKey::Unary(1, a),
            Node::Cos(a) => NodeKey::Unary(2, a),
            Node::Exp(a) => NodeKey::Unary(3, a),
            Node::Log(a) => NodeKey::Unary(4, a),
            Node::Sqrt(a) => NodeKey::Unary(5, a),
            Node::Powi(a, n) => NodeKey::Powi(a, n),
        }
    }

    /// Numeric value of this node given its operand values.
    #[inline]
    pub(crate) fn apply(&self, inputs: &[f64], a: f64, b: f64) -> Result<f64, EvalError> {
        Ok(match *self {
            Node::Const(v) => v,
            Node::Input(i) => inputs[i as usize],
            Node::Add(..) => scalar::add(a, b),
            Node::Sub(..) => scalar::sub(a, b),
            Node::Mul(..) => scalar::mul(a, b),
            Node::Div(..) => scalar::div(a, b)?,
            Node::Neg(_) => scalar::neg(a),
            Node::Sin(_) => scalar::sin(a),
            Node::Cos(_) => scalar::cos(a),
            Node::Exp(_) => scalar::exp(a),
            Node::Log(_) => scalar::log(a)?,
            Node::Sqrt(_) => scalar::sqrt(a)?,
            Node::Powi(_, n) => scalar::powi(a, n)?,
        })
    }
}

/// Up to two operands without allocating.
#[derive(Clone, Copy, Debug)]
pub struct Operands {
    ids: [NodeId; 2],
    len: u8,
}

impl Operands {
    fn new(ids: &[NodeId]) -> Self {
        let mut out = [NodeId(0); 2];
        out[..ids.len()].copy_from_slice(ids);
        Operands {
            ids: out,
            len: ids.len() as u8,
        }
    }

    pub fn as_slice(&self) -> &[NodeId] {
        &self.ids[..self.len as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("symbol `{0}` is already defined")]
    DuplicateSymbol(String),
    #[error("node {0} does not belong to this graph")]
    ForeignNode(NodeId),
    #[error("node {0} is not an input symbol")]
    NotASymbol(NodeId),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
}

/// Numeric evaluation failures. Division and logarithm nodes guard their
/// domain instead of propagating inf/NaN.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("division by near-zero denominator {0:e}")]
    DivisionByZero(f64),
    #[error("logarithm of non-positive argument {0:e}")]
    LogDomain(f64),
    #[error("square root of negative argument {0:e}")]
    SqrtDomain(f64),
    #[error("expected {expected} input values, got {got}")]
    InputCount { expected: usize, got: usize },
}

/// Append-only symbolic expression DAG.
#[derive(Clone, Debug, Default)]
pub struct ExprGraph {
    nodes: Vec<Node>,
    symbols: Vec<(String, NodeId)>,
    by_name: HashMap<String, usize>,
}

impl ExprGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Symbol table in declaration order: `(name, input node)`.
    pub fn symbols(&self) -> &[(String, NodeId)] {
        &self.symbols
    }

    pub fn symbol_count(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn lookup(&self, name: &str) -> Result<NodeId, GraphError> {
        self.symbol_index(name)
            .map(|i| self.symbols[i].1)
            .ok_or_else(|| GraphError::UnknownSymbol(name.to_string()))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub(crate) fn check(&self, id: NodeId) -> Result<(), GraphError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(GraphError::ForeignNode(id))
        }
    }

    /// Declares a new input symbol.
    pub fn symbol(&mut self, name: &str) -> Result<NodeId, GraphError> {
        if self.by_name.contains_key(name) {
            return Err(GraphError::DuplicateSymbol(name.to_string()));
        }
        let slot = self.symbols.len();
        let id = self.push(Node::Input(slot as u32));
        self.symbols.push((name.to_string(), id));
        self.by_name.insert(name.to_string(), slot);
        Ok(id)
    }

    /// Appends `node` verbatim, with no rewriting.
    ///
    /// Panics if an operand does not precede the new node.
    pub fn push(&mut self, node: Node) -> NodeId {
        let next = self.nodes.len();
        for op in node.operands().as_slice() {
            assert!(
                op.index() < next,
                "operand {op} does not precede node n{next}"
            );
        }
        if let Node::Input(i) = node {
            assert!(
                (i as usize) <= self.symbols.len(),
                "input nodes must be created through symbol()"
            );
        }
        self.nodes.push(node);
        NodeId::from_index(next)
    }

    pub fn constant(&mut self, v: f64) -> NodeId {
        self.push(Node::Const(v))
    }

    pub fn zero(&mut self) -> NodeId {
        self.constant(0.0)
    }

    pub fn one(&mut self) -> NodeId {
        self.constant(1.0)
    }

    /// Literal value of a constant node.
    pub fn const_value(&self, id: NodeId) -> Option<f64> {
        match self.nodes[id.index()] {
            Node::Const(v) => Some(v),
            _ => None,
        }
    }

    fn is_const(&self, id: NodeId, v: f64) -> bool {
        self.const_value(id) == Some(v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if self.is_const(a, 0.0) {
            return b;
        }
        if self.is_const(b, 0.0) {
            return a;
        }
        self.push(Node::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if self.is_const(b, 0.0) {
            return a;
        }
        if self.is_const(a, 0.0) {
            return self.neg(b);
        }
        self.push(Node::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if self.is_const(a, 0.0) || self.is_const(b, 0.0) {
            return self.zero();
        }
        if self.is_const(a, 1.0) {
            return b;
        }
        if self.is_const(b, 1.0) {
            return a;
        }
        if self.is_const(a, -1.0) {
            return self.neg(b);
        }
        if self.is_const(b, -1.0) {
            return self.neg(a);
        }
        self.push(Node::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if self.is_const(a, 0.0) {
            return self.zero();
        }
        if self.is_const(b, 1.0) {
            return a;
        }
        self.push(Node::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        match self.nodes[a.index()] {
            Node::Neg(inner) => inner,
            Node::Const(v) => self.constant(-v),
            _ => self.push(Node::Neg(a)),
        }
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.push(Node::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.push(Node::Cos(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Node::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Node::Log(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.push(Node::Sqrt(a))
    }

    /// Integer power. General powers go through `exp(y * log(x))`.
    pub fn powi(&mut self, a: NodeId, n: i32) -> NodeId {
        match n {
            0 => self.one(),
            1 => a,
            _ => self.push(Node::Powi(a, n)),
        }
    }

    pub fn scale(&mut self, k: f64, a: NodeId) -> NodeId {
        let c = self.constant(k);
        self.mul(c, a)
    }

    /// Left-to-right sum; an empty sum is a literal zero.
    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        let mut it = terms.iter().copied();
        match it.next() {
            None => self.zero(),
            Some(first) => it.fold(first, |acc, t| self.add(acc, t)),
        }
    }

    /// Left-to-right dot product.
    pub fn dot(&mut self, a: &[NodeId], b: &[NodeId]) -> NodeId {
        assert_eq!(a.len(), b.len());
        let prods: Vec<NodeId> = a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect();
        self.sum(&prods)
    }

    fn input_check(&self, inputs: &[f64]) -> Result<(), EvalError> {
        if inputs.len() != self.symbols.len() {
            return Err(EvalError::InputCount {
                expected: self.symbols.len(),
                got: inputs.len(),
            });
        }
        Ok(())
    }

    /// Evaluates every node up to the highest requested output in one
    /// forward sweep. `inputs` is indexed by symbol position.
    pub fn eval(&self, inputs: &[f64], outputs: &[NodeId]) -> Result<Vec<f64>, EvalError> {
        self.input_check(inputs)?;
        let Some(top) = outputs.iter().map(|o| o.index()).max() else {
            return Ok(Vec::new());
        };
        let live = self.reachable(outputs);
        let mut vals = vec![0.0; top + 1];
        for i in 0..=top {
            if !live[i] {
                continue;
            }
            let node = &self.nodes[i];
            let ops = node.operands();
            let ops = ops.as_slice();
            let a = ops.first().map_or(0.0, |o| vals[o.index()]);
            let b = ops.get(1).map_or(0.0, |o| vals[o.index()]);
            vals[i] = node.apply(inputs, a, b)?;
        }
        Ok(outputs.iter().map(|o| vals[o.index()]).collect())
    }

    /// Evaluates `outputs` by expanding the DAG as a tree: shared
    /// subexpressions are recomputed every time they are referenced. This
    /// is the naive baseline the compiled tape is measured against.
    pub fn eval_tree(&self, inputs: &[f64], outputs: &[NodeId]) -> Result<Vec<f64>, EvalError> {
        self.input_check(inputs)?;
        outputs
            .iter()
            .map(|&o| self.eval_subtree(inputs, o))
            .collect()
    }

    fn eval_subtree(&self, inputs: &[f64], id: NodeId) -> Result<f64, EvalError> {
        let node = &self.nodes[id.index()];
        let (a, b) = match *node {
            Node::Const(_) | Node::Input(_) => (0.0, 0.0),
            Node::Add(x, y) | Node::Sub(x, y) | Node::Mul(x, y) | Node::Div(x, y) => {
                let a = self.eval_subtree(inputs, x)?;
                (a, self.eval_subtree(inputs, y)?)
            }
            Node::Neg(x)
            | Node::Sin(x)
            | Node::Cos(x)
            | Node::Exp(x)
            | Node::Log(x)
            | Node::Sqrt(x)
            | Node::Powi(x, _) => (self.eval_subtree(inputs, x)?, 0.0),
        };
        node.apply(inputs, a, b)
    }

    /// Number of node visits [`ExprGraph::eval_tree`] performs for `outputs`.
    pub fn tree_size(&self, outputs: &[NodeId]) -> f64 {
        let top = match outputs.iter().map(|o| o.index()).max() {
            Some(t) => t,
            None => return 0.0,
        };
        let mut size = vec![0.0f64; top + 1];
        for i in 0..=top {
            size[i] = 1.0
                + self.nodes[i]
                    .operands()
                    .as_slice()
                    .iter()
                    .map(|o| size[o.index()])
                    .sum::<f64>();
        }
        outputs.iter().map(|o| size[o.index()]).sum()
    }

    /// Marks nodes reachable from `roots`.
    pub fn reachable(&self, roots: &[NodeId]) -> Vec<bool> {
        let top = roots.iter().map(|o| o.index()).max().map_or(0, |t| t + 1);
        let mut live = vec![false; top];
        for r in roots {
            live[r.index()] = true;
        }
        for i in (0..top).rev() {
            if live[i] {
                for o in self.nodes[i].operands().as_slice() {
                    live[o.index()] = true;
                }
            }
        }
        live
    }

    /// Count of distinct nodes needed to compute `roots`.
    pub fn live_count(&self, roots: &[NodeId]) -> usize {
        self.reachable(roots).iter().filter(|&&b| b).count()
    }
}
