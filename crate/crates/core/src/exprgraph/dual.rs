use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{scalar, EvalError, ExprGraph, Node, NodeId};

/// Forward-mode dual number `value + derivative·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct DualNumber {
    pub value: f64,
    pub derivative: f64,
}

impl DualNumber {
    pub const fn new(value: f64, derivative: f64) -> Self {
        DualNumber { value, derivative }
    }

    pub const fn constant(value: f64) -> Self {
        DualNumber::new(value, 0.0)
    }

    pub fn sin(self) -> Self {
        DualNumber::new(self.value.sin(), self.derivative * self.value.cos())
    }

    pub fn cos(self) -> Self {
        DualNumber::new(self.value.cos(), -self.derivative * self.value.sin())
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        DualNumber::new(e, self.derivative * e)
    }

    pub fn ln(self) -> Result<Self, EvalError> {
        Ok(DualNumber::new(
            scalar::log(self.value)?,
            self.derivative / self.value,
        ))
    }

    pub fn sqrt(self) -> Result<Self, EvalError> {
        let r = scalar::sqrt(self.value)?;
        Ok(DualNumber::new(r, self.derivative / (2.0 * r)))
    }

    pub fn powi(self, n: i32) -> Result<Self, EvalError> {
        let v = scalar::powi(self.value, n)?;
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * scalar::powi(self.value, n - 1)? * self.derivative
        };
        Ok(DualNumber::new(v, d))
    }

    pub fn checked_div(self, rhs: Self) -> Result<Self, EvalError> {
        let v = scalar::div(self.value, rhs.value)?;
        Ok(DualNumber::new(
            v,
            (self.derivative - v * rhs.derivative) / rhs.value,
        ))
    }
}

impl Add for DualNumber {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        DualNumber::new(self.value + rhs.value, self.derivative + rhs.derivative)
    }
}

impl Sub for DualNumber {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        DualNumber::new(self.value - rhs.value, self.derivative - rhs.derivative)
    }
}

impl Mul for DualNumber {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        DualNumber::new(
            self.value * rhs.value,
            self.derivative * rhs.value + self.value * rhs.derivative,
        )
    }
}

/// Panics on a zero denominator; use [`DualNumber::checked_div`] for the
/// guarded form.
impl Div for DualNumber {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self.checked_div(rhs).expect("dual division by zero")
    }
}

impl Neg for DualNumber {
    type Output = Self;
    fn neg(self) -> Self {
        DualNumber::new(-self.value, -self.derivative)
    }
}

impl ExprGraph {
    /// Forward-mode evaluation along `seed` (one entry per symbol). Returns
    /// output values and their directional derivatives.
    pub fn eval_dual(
        &self,
        inputs: &[f64],
        seed: &[f64],
        outputs: &[NodeId],
    ) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        if inputs.len() != self.symbol_count() || seed.len() != self.symbol_count() {
            return Err(EvalError::InputCount {
                expected: self.symbol_count(),
                got: inputs.len().min(seed.len()),
            });
        }
        let Some(top) = outputs.iter().map(|o| o.index()).max() else {
            return Ok((Vec::new(), Vec::new()));
        };
        let live = self.reachable(outputs);
        let mut vals = vec![DualNumber::default(); top + 1];
        for i in 0..=top {
            if !live[i] {
                continue;
            }
            let v = |id: NodeId| vals[id.index()];
            vals[i] = match self.nodes()[i] {
                Node::Const(c) => DualNumber::constant(c),
                Node::Input(s) => DualNumber::new(inputs[s as usize], seed[s as usize]),
                Node::Add(a, b) => v(a) + v(b),
                Node::Sub(a, b) => v(a) - v(b),
                Node::Mul(a, b) => v(a) * v(b),
                Node::Div(a, b) => v(a).checked_div(v(b))?,
                Node::Neg(a) => -v(a),
                Node::Sin(a) => v(a).sin(),
                Node::Cos(a) => v(a).cos(),
                Node::Exp(a) => v(a).exp(),
                Node::Log(a) => v(a).ln()?,
                Node::Sqrt(a) => v(a).sqrt()?,
                Node::Powi(a, n) => v(a).powi(n)?,
            };
        }
        Ok(outputs
            .iter()
            .map(|o| (vals[o.index()].value, vals[o.index()].derivative))
            .unzip())
    }
}
