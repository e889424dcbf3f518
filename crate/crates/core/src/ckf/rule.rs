use nalgebra::{DMatrix, DVector};

use super::CkfError;

/// Third-degree spherical-radial cubature rule: `2n` points `±sqrt(n) e_j`
/// with equal weights `1/(2n)`.
///
/// Points are ordered `+e_0, ..., +e_{n-1}, -e_0, ..., -e_{n-1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubatureRule {
    n: usize,
}

impl CubatureRule {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "cubature rule needs n >= 1");
        CubatureRule { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of points, `m = 2n`.
    pub fn m(&self) -> usize {
        2 * self.n
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.m() as f64
    }

    /// Point radius `sqrt(m/2) = sqrt(n)`.
    pub fn radius(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    /// `(axis, sign)` of point `i`.
    pub fn axis(&self, i: usize) -> (usize, f64) {
        if i < self.n {
            (i, 1.0)
        } else {
            (i - self.n, -1.0)
        }
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        let (j, sign) = self.axis(i);
        let mut p = DVector::zeros(self.n);
        p[j] = sign * self.radius();
        p
    }

    /// All points as the columns of an `n x m` matrix.
    pub fn points(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.m(), |r, c| {
            let (j, sign) = self.axis(c);
            if r == j {
                sign * self.radius()
            } else {
                0.0
            }
        })
    }

    /// Sigma point `S xi_i + mu`, i.e. `mu ± sqrt(n) S[:, j]`.
    pub fn sigma_point(&self, i: usize, mu: &DVector<f64>, s: &DMatrix<f64>) -> DVector<f64> {
        let (j, sign) = self.axis(i);
        mu + s.column(j) * (sign * self.radius())
    }
}

/// `E[f(w)]` for `w ~ N(mu, S S^T)`.
///
/// Substituting `w = S z + mu` turns the integral into one against the
/// standard normal, and the rule's points already carry the `sqrt(m/2)`
/// radius, so the weighted-Gaussian form `sum w_i f(sqrt(2 Sigma) xi_i + mu)`
/// reduces to `sum_i f(S xi_i + mu) / m`.
pub fn gaussian_expectation(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    mu: &DVector<f64>,
    s: &DMatrix<f64>,
    rule: &CubatureRule,
) -> Result<DVector<f64>, CkfError> {
    let mut acc: Option<DVector<f64>> = None;
    for i in 0..rule.m() {
        let y = f(&rule.sigma_point(i, mu, s));
        if y.iter().any(|v| !v.is_finite()) {
            return Err(CkfError::NonFinite { point: i });
        }
        acc = Some(match acc {
            None => y,
            Some(a) => a + y,
        });
    }
    Ok(acc.expect("rule has at least two points") * rule.weight())
}
