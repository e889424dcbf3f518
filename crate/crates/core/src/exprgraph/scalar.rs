//! Scalar semantics shared by every evaluator (graph sweep, tree expansion,
//! compiled tape). Keeping one definition per op is what makes tape output
//! bitwise identical to graph evaluation.

use super::EvalError;

/// Denominators with smaller magnitude are rejected.
pub const MIN_DENOMINATOR: f64 = 1e-300;

#[inline(always)]
pub fn add(a: f64, b: f64) -> f64 {
    a + b
}

#[inline(always)]
pub fn sub(a: f64, b: f64) -> f64 {
    a - b
}

#[inline(always)]
pub fn mul(a: f64, b: f64) -> f64 {
    a * b
}

#[inline(always)]
pub fn div(a: f64, b: f64) -> Result<f64, EvalError> {
    if b.abs() < MIN_DENOMINATOR {
        Err(EvalError::DivisionByZero(b))
    } else {
        Ok(a / b)
    }
}

#[inline(always)]
pub fn neg(a: f64) -> f64 {
    -a
}

#[inline(always)]
pub fn sin(a: f64) -> f64 {
    a.sin()
}

#[inline(always)]
pub fn cos(a: f64) -> f64 {
    a.cos()
}

#[inline(always)]
pub fn exp(a: f64) -> f64 {
    a.exp()
}

#[inline(always)]
pub fn log(a: f64) -> Result<f64, EvalError> {
    if a > 0.0 {
        Ok(a.ln())
    } else {
        Err(EvalError::LogDomain(a))
    }
}

#[inline(always)]
pub fn sqrt(a: f64) -> Result<f64, EvalError> {
    if a >= 0.0 {
        Ok(a.sqrt())
    } else {
        Err(EvalError::SqrtDomain(a))
    }
}

#[inline(always)]
pub fn powi(a: f64, n: i32) -> Result<f64, EvalError> {
    if n < 0 && a.abs() < MIN_DENOMINATOR {
        Err(EvalError::DivisionByZero(a))
    } else {
        Ok(a.powi(n))
    }
}
