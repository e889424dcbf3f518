//! Square-root cubature Kalman filter over neural-network weights.
//!
//! The weights follow an identity process model `W_{k+1} = W_k + v_k` and
//! are observed through `a_k = phi(x_k, W_k) + r_k`. The filter carries the
//! lower-triangular factor `S` of the covariance `P = S S^T`.

mod rule;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuralnet::{MlpSpec, NetError};

pub use rule::{gaussian_expectation, CubatureRule};
pub use train::{train_online, Evaluator, StepLog, TrainResult};

/// Eigenvalue floor used when a covariance has to be repaired.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Diagonal jitter for the single retry of the innovation-covariance solve.
pub const SOLVE_JITTER: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CkfError {
    #[error("filter diverged at step {step}: innovation covariance is not positive definite")]
    Divergence {
        step: usize,
        report: Box<PosteriorReport>,
    },
    #[error("non-finite measurement prediction at sigma point {point}")]
    NonFinite { point: usize },
    #[error("step {step}: non-finite measurement prediction at sigma point {point}")]
    NonFiniteAt { step: usize, point: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Which residual the gain multiplies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnovationSign {
    /// `a - a_hat` (the Kalman innovation).
    #[default]
    MeasurementMinusPrediction,
    /// `a_hat - a`; kept only to demonstrate that it diverges.
    PredictionMinusMeasurement,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Initial covariance `P0 = p0 I`.
    pub p0: f64,
    /// Initial weights are drawn from `N(0, w0_std^2)`.
    pub w0_std: f64,
    /// Process noise `Q = q I`.
    pub q: f64,
    /// Measurement noise `R = r I`.
    pub r: f64,
    pub seed: u64,
    pub innovation: InnovationSign,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            p0: 0.1,
            w0_std: 0.1,
            q: 1e-8,
            r: 1e-6,
            seed: 0,
            innovation: InnovationSign::MeasurementMinusPrediction,
        }
    }
}

/// Diagnostics of one measurement update.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorReport {
    /// `a - a_hat` (before any sign convention is applied).
    pub innovation: DVector<f64>,
    /// `P'`.
    pub innovation_cov: DMatrix<f64>,
    /// `K`.
    pub gain: DMatrix<f64>,
    pub predicted: DVector<f64>,
    pub cov_diag_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CkfState {
    pub w: DVector<f64>,
    /// Lower-triangular, positive diagonal, `P = S S^T`.
    pub s: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub k: usize,
    pub innovation_sign: InnovationSign,
    q_sqrt: Option<DMatrix<f64>>,
    r_sqrt: DMatrix<f64>,
}

/// Lower-triangular `L` with `L L^T = A A^T`, via QR of `A^T`; diagonal made
/// non-negative.
pub fn tria(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let r = a.transpose().qr().r();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n.min(r.nrows()) {
        let sign = if r[(i, i)] < 0.0 { -1.0 } else { 1.0 };
        for j in i..n {
            l[(j, i)] = sign * r[(i, j)];
        }
    }
    l
}

/// Square-root factor of a covariance that may be only semidefinite: tries
/// Cholesky, then falls back to an eigen-decomposition with eigenvalues
/// floored at `floor`.
pub fn psd_factor(p: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (p + p.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return ch.l();
    }
    let eig = sym.symmetric_eigen();
    let mut v = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let d = l.max(floor).sqrt();
        v.column_mut(j).scale_mut(d);
    }
    tria(&v)
}

fn valid_factor(s: &DMatrix<f64>) -> bool {
    s.iter().all(|v| v.is_finite()) && (0..s.nrows()).all(|i| s[(i, i)] > 0.0)
}

fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|&v| v == 0.0)
}

impl CkfState {
    pub fn new(
        w: DVector<f64>,
        p0: &DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self, CkfError> {
        let n = w.len();
        for (m, expected) in [(p0, n), (&q, n)] {
            if m.shape() != (expected, expected) {
                return Err(CkfError::Dimension {
                    expected,
                    got: m.nrows(),
                });
            }
        }
        if r.nrows() != r.ncols() {
            return Err(CkfError::Dimension {
                expected: r.nrows(),
                got: r.ncols(),
            });
        }
        let s = psd_factor(p0, EIGEN_FLOOR);
        let q_sqrt = (!is_zero(&q)).then(|| psd_factor(&q, 0.0));
        let r_sqrt = psd_factor(&r, 0.0);
        Ok(CkfState {
            w,
            s,
            q,
            r,
            k: 0,
            innovation_sign: InnovationSign::default(),
            q_sqrt,
            r_sqrt,
        })
    }

    /// `P0 = p0 I`, `Q = q I`, `R = r I`.
    pub fn isotropic(w: DVector<f64>, p0: f64, q: f64, r: f64, n_out: usize) -> Self {
        let n = w.len();
        CkfState::new(
            w,
            &(DMatrix::identity(n, n) * p0),
            DMatrix::identity(n, n) * q,
            DMatrix::identity(n_out, n_out) * r,
        )
        .expect("isotropic shapes are consistent")
    }

    /// Seeded initial state for `n_w` weights and `n_out` measurements.
    pub fn initial(n_w: usize, n_out: usize, cfg: &FilterConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.w0_std).expect("valid std. dev.");
        let w = DVector::from_fn(n_w, |_, _| normal.sample(&mut rng));
        let mut st = CkfState::isotropic(w, cfg.p0, cfg.q, cfg.r, n_out);
        st.innovation_sign = cfg.innovation;
        st
    }

    /// Replaces the factor, e.g. when resuming from a checkpoint.
    pub fn with_factor(mut self, s: DMatrix<f64>) -> Self {
        self.s = s;
        self
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.s * self.s.transpose()
    }

    pub fn cov_diag_max(&self) -> f64 {
        self.s
            .row_iter()
            .map(|r| r.norm_squared())
            .fold(0.0, f64::max)
    }

    /// Identity-model time update `P <- P + Q` as `S <- tria([S | Q^{1/2}])`.
    pub fn predict(&mut self) {
        if let Some(qs) = &self.q_sqrt {
            let n = self.n();
            let mut m = DMatrix::zeros(n, 2 * n);
            m.columns_mut(0, n).copy_from(&self.s);
            m.columns_mut(n, n).copy_from(qs);
            self.s = tria(&m);
        }
    }

    /// The same time update carried out literally: propagate every cubature
    /// point through the identity model and re-estimate mean and covariance.
    pub fn predict_literal(&mut self) {
        let n = self.n();
        let rule = CubatureRule::new(n);
        let pts: Vec<DVector<f64>> = (0..rule.m())
            .map(|i| rule.sigma_point(i, &self.w, &self.s))
            .collect();
        let mut mean = DVector::zeros(n);
        for p in &pts {
            mean += p;
        }
        mean *= rule.weight();
        let mut p = DMatrix::zeros(n, n);
        for x in &pts {
            p.ger(rule.weight(), x, x, 1.0);
        }
        p.ger(-1.0, &mean, &mean, 1.0);
        p += &self.q;
        self.w = mean;
        self.s = psd_factor(&p, EIGEN_FLOOR);
    }

    /// Measurement update with `h(w)` the predicted measurement. Sigma-point
    /// evaluations run in parallel; all reductions are in point order.
    pub fn update_with<H>(&mut self, a: &DVector<f64>, h: H) -> Result<PosteriorReport, CkfError>
    where
        H: Fn(&[f64]) -> Result<DVector<f64>, CkfError> + Sync,
    {
        let n = self.n();
        let p = a.len();
        if self.r.nrows() != p {
            return Err(CkfError::Dimension {
                expected: self.r.nrows(),
                got: p,
            });
        }
        let rule = CubatureRule::new(n);
        let m = rule.m();
        let (w, s) = (&self.w, &self.s);
        let ys: Vec<DVector<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let wi = rule.sigma_point(i, w, s);
                let y = h(wi.as_slice())?;
                if y.len() != p {
                    return Err(CkfError::Dimension {
                        expected: p,
                        got: y.len(),
                    });
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(CkfError::NonFiniteAt {
                        step: self.k,
                        point: i,
                    });
                }
                Ok(y)
            })
            .collect::<Result<_, _>>()?;

        let mut a_hat = DVector::zeros(p);
        for y in &ys {
            a_hat += y;
        }
        a_hat *= rule.weight();

        // Centred, weight-scaled deviations: Y_c = (Y_i - a_hat) / sqrt(m).
        let sm = (m as f64).sqrt();
        let mut yc = DMatrix::zeros(p, m);
        for (i, y) in ys.iter().enumerate() {
            yc.set_column(i, &((y - &a_hat) / sm));
        }
        let p_yy = &yc * yc.transpose() + &self.r;
        // X_c = S [I, -I] / sqrt(2), so P_wy = X_c Y_c^T = S (Y_+ - Y_-)^T / sqrt(2).
        let diff = yc.columns(0, n) - yc.columns(n, n);
        let p_wy = s * diff.transpose() * std::f64::consts::FRAC_1_SQRT_2;

        let innovation = a - &a_hat;
        let Some(gain) = solve_gain(&p_yy, &p_wy) else {
            return Err(CkfError::Divergence {
                step: self.k,
                report: Box::new(PosteriorReport {
                    innovation,
                    innovation_cov: p_yy,
                    gain: DMatrix::zeros(n, p),
                    predicted: a_hat,
                    cov_diag_max: self.cov_diag_max(),
                }),
            });
        };
        let step = match self.innovation_sign {
            InnovationSign::MeasurementMinusPrediction => &gain * &innovation,
            InnovationSign::PredictionMinusMeasurement => -(&gain * &innovation),
        };

        // S <- tria([X_c - K Y_c | K R^{1/2}])
        let mut big = DMatrix::zeros(n, m + p);
        let ky = &gain * &yc;
        let half = std::f64::consts::FRAC_1_SQRT_2;
        for j in 0..n {
            let col = s.column(j) * half;
            big.set_column(j, &(&col - ky.column(j)));
            big.set_column(n + j, &(-&col - ky.column(n + j)));
        }
        big.columns_mut(m, p).copy_from(&(&gain * &self.r_sqrt));
        let mut s_new = tria(&big);
        if !valid_factor(&s_new) {
            s_new = psd_factor(&(&big * big.transpose()), EIGEN_FLOOR);
        }

        self.w += step;
        self.s = s_new;
        self.k += 1;
        Ok(PosteriorReport {
            innovation,
            innovation_cov: p_yy,
            gain,
            predicted: a_hat,
            cov_diag_max: self.cov_diag_max(),
        })
    }

    /// Update with the network `phi(x, w)` as the measurement function.
    pub fn update(
        &mut self,
        spec: &MlpSpec,
        x: &[f64],
        a: &DVector<f64>,
    ) -> Result<PosteriorReport, CkfError> {
        if spec.n_weights() != self.n() {
            return Err(CkfError::Dimension {
                expected: spec.n_weights(),
                got: self.n(),
            });
        }
        self.update_with(a, |w| Ok(spec.forward(w, x)?))
    }
}

/// `K = P_wy P_yy^{-1}` through a Cholesky solve of `P_yy K^T = P_wy^T`,
/// retried once after symmetrizing and adding diagonal jitter.
fn solve_gain(p_yy: &DMatrix<f64>, p_wy: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let rhs = p_wy.transpose();
    if let Some(ch) = p_yy.clone().cholesky() {
        return Some(ch.solve(&rhs).transpose());
    }
    let mut sym = (p_yy + p_yy.transpose()) * 0.5;
    for i in 0..sym.nrows() {
        sym[(i, i)] += SOLVE_JITTER;
    }
    sym.cholesky().map(|ch| ch.solve(&rhs).transpose())
}
