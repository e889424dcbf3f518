use std::fmt::Write as _;

use super::{scalar, EvalError, ExprGraph, GraphError, Node, NodeId};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TapeOp {
    Const(f64),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Powi(i32),
}

impl TapeOp {
    fn name(&self) -> &'static str {
        match self {
            TapeOp::Const(_) => "const",
            TapeOp::Add => "add",
            TapeOp::Sub => "sub",
            TapeOp::Mul => "mul",
            TapeOp::Div => "div",
            TapeOp::Neg => "neg",
            TapeOp::Sin => "sin",
            TapeOp::Cos => "cos",
            TapeOp::Exp => "exp",
            TapeOp::Log => "log",
            TapeOp::Sqrt => "sqrt",
            TapeOp::Powi(_) => "powi",
        }
    }

    fn arity(&self) -> usize {
        match self {
            TapeOp::Const(_) => 0,
            TapeOp::Add | TapeOp::Sub | TapeOp::Mul | TapeOp::Div => 2,
            _ => 1,
        }
    }
}

/// One tape instruction: `dst = op(a, b)`. Unused source slots are 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TapeInstr {
    pub op: TapeOp,
    pub dst: u32,
    pub a: u32,
    pub b: u32,
}

/// Flat, dead-code-free evaluation program compiled from an [`ExprGraph`].
///
/// Slots are assigned by a linear scan over node lifetimes, so a slot is
/// reused as soon as its previous value has had its last reader. Evaluation
/// only touches the caller's workspace, which makes a tape safe to share
/// between threads.
#[derive(Clone, Debug)]
pub struct CompiledTape {
    instrs: Vec<TapeInstr>,
    n_slots: usize,
    n_symbols: usize,
    /// (symbol name, symbol index, slot) for inputs the outputs depend on.
    inputs: Vec<(String, usize, u32)>,
    outputs: Vec<(String, u32)>,
}

impl CompiledTape {
    /// Compiles `outputs` (named `out0`, `out1`, ...).
    pub fn compile(graph: &ExprGraph, outputs: &[NodeId]) -> Result<Self, GraphError> {
        let named: Vec<(String, NodeId)> = outputs
            .iter()
            .enumerate()
            .map(|(i, &o)| (format!("out{i}"), o))
            .collect();
        Self::compile_named(graph, &named)
    }

    pub fn compile_named(
        graph: &ExprGraph,
        outputs: &[(String, NodeId)],
    ) -> Result<Self, GraphError> {
        for (_, o) in outputs {
            graph.check(*o)?;
        }
        let roots: Vec<NodeId> = outputs.iter().map(|(_, o)| *o).collect();
        let live = graph.reachable(&roots);
        let top = live.len();

        const NEVER: usize = usize::MAX;
        let mut last_use = vec![NEVER; top];
        let mut pinned = vec![false; top];
        for r in &roots {
            pinned[r.index()] = true;
        }
        for (i, node) in graph.nodes()[..top].iter().enumerate() {
            if live[i] {
                for o in node.operands().as_slice() {
                    last_use[o.index()] = i;
                }
            }
        }

        let mut slot_of = vec![u32::MAX; top];
        let mut free: Vec<u32> = Vec::new();
        let mut n_slots: u32 = 0;
        let mut alloc = |free: &mut Vec<u32>| -> u32 {
            free.pop().unwrap_or_else(|| {
                n_slots += 1;
                n_slots - 1
            })
        };

        let mut inputs = Vec::new();
        for (i, _) in live.iter().enumerate().take(top).filter(|(_, &l)| l) {
            {
                if let Node::Input(sym) = graph.nodes()[i] {
                    let s = alloc(&mut free);
                    slot_of[i] = s;
                    inputs.push((graph.symbols()[sym as usize].0.clone(), sym as usize, s));
                }
            }
        }

        let mut instrs = Vec::new();
        for i in 0..top {
            if !live[i] {
                continue;
            }
            let node = graph.nodes()[i];
            if let Node::Input(_) = node {
                continue;
            }
            let ops = node.operands();
            let ops = ops.as_slice();
            let src: Vec<u32> = ops.iter().map(|o| slot_of[o.index()]).collect();
            for (k, o) in ops.iter().enumerate() {
                let j = o.index();
                let repeated = ops[..k].contains(o);
                if last_use[j] == i && !pinned[j] && !repeated {
                    free.push(slot_of[j]);
                }
            }
            let dst = alloc(&mut free);
            slot_of[i] = dst;
            let op = match node {
                Node::Const(v) => TapeOp::Const(v),
                Node::Add(..) => TapeOp::Add,
                Node::Sub(..) => TapeOp::Sub,
                Node::Mul(..) => TapeOp::Mul,
                Node::Div(..) => TapeOp::Div,
                Node::Neg(_) => TapeOp::Neg,
                Node::Sin(_) => TapeOp::Sin,
                Node::Cos(_) => TapeOp::Cos,
                Node::Exp(_) => TapeOp::Exp,
                Node::Log(_) => TapeOp::Log,
                Node::Sqrt(_) => TapeOp::Sqrt,
                Node::Powi(_, n) => TapeOp::Powi(n),
                Node::Input(_) => unreachable!(),
            };
            instrs.push(TapeInstr {
                op,
                dst,
                a: src.first().copied().unwrap_or(0),
                b: src.get(1).copied().unwrap_or(0),
            });
        }

        Ok(CompiledTape {
            instrs,
            n_slots: n_slots as usize,
            n_symbols: graph.symbol_count(),
            inputs,
            outputs: outputs
                .iter()
                .map(|(name, o)| (name.clone(), slot_of[o.index()]))
                .collect(),
        })
    }

    pub fn instructions(&self) -> &[TapeInstr] {
        &self.instrs
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Number of input values [`CompiledTape::eval`] expects (the source
    /// graph's full symbol count, used or not).
    pub fn n_inputs(&self) -> usize {
        self.n_symbols
    }

    pub fn output_names(&self) -> impl Iterator<Item = &str> {
        self.outputs.iter().map(|(n, _)| n.as_str())
    }

    /// A correctly sized scratch buffer for [`CompiledTape::eval`].
    pub fn workspace(&self) -> Vec<f64> {
        vec![0.0; self.n_slots]
    }

    /// Runs the tape. `inputs` is indexed by symbol position in the source
    /// graph; `ws` must hold at least [`CompiledTape::n_slots`] values.
    pub fn eval(&self, inputs: &[f64], ws: &mut [f64], out: &mut [f64]) -> Result<(), EvalError> {
        if inputs.len() != self.n_symbols {
            return Err(EvalError::InputCount {
                expected: self.n_symbols,
                got: inputs.len(),
            });
        }
        assert!(ws.len() >= self.n_slots, "workspace too small");
        assert!(out.len() >= self.outputs.len(), "output buffer too small");
        for (_, sym, slot) in &self.inputs {
            ws[*slot as usize] = inputs[*sym];
        }
        for ins in &self.instrs {
            let a = ws[ins.a as usize];
            let b = ws[ins.b as usize];
            ws[ins.dst as usize] = match ins.op {
                TapeOp::Const(v) => v,
                TapeOp::Add => scalar::add(a, b),
                TapeOp::Sub => scalar::sub(a, b),
                TapeOp::Mul => scalar::mul(a, b),
                TapeOp::Div => scalar::div(a, b)?,
                TapeOp::Neg => scalar::neg(a),
                TapeOp::Sin => scalar::sin(a),
                TapeOp::Cos => scalar::cos(a),
                TapeOp::Exp => scalar::exp(a),
                TapeOp::Log => scalar::log(a)?,
                TapeOp::Sqrt => scalar::sqrt(a)?,
                TapeOp::Powi(n) => scalar::powi(a, n)?,
            };
        }
        for (k, (_, slot)) in self.outputs.iter().enumerate() {
            out[k] = ws[*slot as usize];
        }
        Ok(())
    }

    /// Convenience wrapper allocating its own workspace and output.
    pub fn eval_vec(&self, inputs: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.outputs.len()];
        self.eval(inputs, &mut ws, &mut out)?;
        Ok(out)
    }

    /// Line-oriented text listing, one instruction per line
    /// (`slot3 = mul slot1 slot2`).
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (name, _, slot) in &self.inputs {
            let _ = writeln!(s, "input {name} -> slot{slot}");
        }
        for ins in &self.instrs {
            let _ = write!(s, "slot{} = {}", ins.dst, ins.op.name());
            match ins.op {
                TapeOp::Const(v) => {
                    let _ = write!(s, " {v:?}");
                }
                TapeOp::Powi(n) => {
                    let _ = write!(s, " slot{} {n}", ins.a);
                }
                op => {
                    let srcs = [ins.a, ins.b];
                    for src in &srcs[..op.arity()] {
                        let _ = write!(s, " slot{src}");
                    }
                }
            }
            s.push('\n');
        }
        for (name, slot) in &self.outputs {
            let _ = writeln!(s, "output {name} <- slot{slot}");
        }
        s
    }
}
