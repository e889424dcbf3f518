//! Fixed-step simulation of the coupled rigid-body and aerodynamic-lag ODE,
//! PD tracking of sinusoidal joint references, and inverse-dynamics
//! extraction of aerodynamic training targets
//! `a = D q'' + C q' + G - B1 u1 + c∘q'`.

use std::f64::consts::TAU;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aero::{AeroGroundTruth, AeroOutput};
use crate::multibody::{
    DynamicsError, DynamicsTerms, MultibodyModel, Terms, TermsWorkspace, VehicleState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("t = {t:.6} s: {source}")]
    Dynamics { t: f64, source: DynamicsError },
    #[error("t = {t:.6} s: mass matrix not positive definite at q = {q:?}")]
    Singular { t: f64, q: Vec<f64> },
    #[error("t = {t:.6} s: non-finite state, integration diverged")]
    Divergence { t: f64 },
    #[error("invalid simulation config: {0}")]
    Config(String),
}

/// Sinusoidal reference `offset + amplitude sin(2 pi frequency t + phase)`.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct JointReference {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub offset: f64,
}

impl JointReference {
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let w = TAU * self.frequency;
        let arg = w * t + self.phase;
        (
            self.offset + self.amplitude * arg.sin(),
            self.amplitude * w * arg.cos(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AccelerationSource {
    /// `q''` from forward dynamics at the sample state.
    #[default]
    Model,
    /// Central difference of the integrated velocities.
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub sample_stride: usize,
    pub seed: u64,
    /// One reference per actuated DOF, in `q_a` order. Missing entries hold 0.
    pub joints: Vec<JointReference>,
    pub kp: f64,
    pub kd: f64,
    pub aero: bool,
    pub damping: bool,
    /// Initial `q` and `q'`; shorter vectors are zero-padded.
    pub q0: Vec<f64>,
    pub qdot0: Vec<f64>,
    /// Std. dev. of a seeded Gaussian perturbation added to `q0` and `qdot0`.
    pub initial_jitter: f64,
    pub acceleration: AccelerationSource,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-4,
            duration: 0.2,
            sample_stride: 100,
            seed: 0,
            joints: Vec::new(),
            kp: 0.0,
            kd: 0.0,
            aero: true,
            damping: true,
            q0: Vec::new(),
            qdot0: Vec::new(),
            initial_jitter: 0.0,
            acceleration: AccelerationSource::Model,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, model: &MultibodyModel) -> Result<(), SimError> {
        let bad = |s: String| Err(SimError::Config(s));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!(
                "duration must be non-negative, got {}",
                self.duration
            ));
        }
        if self.sample_stride == 0 {
            return bad("sample_stride must be at least 1".into());
        }
        if self.joints.len() > model.n_actuated() {
            return bad(format!(
                "{} joint references for {} actuated joints",
                self.joints.len(),
                model.n_actuated()
            ));
        }
        let nyquist = 0.5 / self.dt;
        for (i, j) in self.joints.iter().enumerate() {
            if j.frequency.abs() * 100.0 > nyquist {
                return bad(format!(
                    "joint reference {i}: {} Hz is within 100x of the {nyquist} Hz Nyquist limit",
                    j.frequency
                ));
            }
        }
        if self.q0.len() > model.n_q() || self.qdot0.len() > model.n_q() {
            return bad("initial state longer than the model's n_q".into());
        }
        if self.initial_jitter.is_nan() || self.initial_jitter < 0.0 {
            return bad("initial_jitter must be non-negative".into());
        }
        Ok(())
    }

    /// Number of integration steps, `round(duration / dt)`.
    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
}

/// `u1 = kp (q_ref - q_a) + kd (q'_ref - q'_a)`.
pub fn pd_tracking_torque(
    qa: &[f64],
    qda: &[f64],
    q_ref: &[f64],
    qd_ref: &[f64],
    gains: PdGains,
) -> DVector<f64> {
    DVector::from_fn(qa.len(), |i, _| {
        gains.kp * (q_ref[i] - qa[i]) + gains.kd * (qd_ref[i] - qda[i])
    })
}

/// One classical Runge-Kutta step of `y' = f(t, y)`.
pub fn rk4_step<E>(
    mut f: impl FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    t: f64,
    y: &[f64],
    dt: f64,
) -> Result<Vec<f64>, E> {
    let n = y.len();
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { (0..n).map(|i| y[i] + a * k[i]).collect() };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k1))?;
    let k3 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k2))?;
    let k4 = f(t + dt, &axpy(dt, &k3))?;
    Ok((0..n)
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Vehicle state plus the aerodynamic lag states.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub vehicle: VehicleState,
    pub xi: DVector<f64>,
}

impl SimState {
    fn stacked(&self) -> Vec<f64> {
        let v = &self.vehicle;
        v.q.iter()
            .chain(v.qdot.iter())
            .chain(self.xi.iter())
            .copied()
            .collect()
    }

    fn unstack(y: &[f64], n: usize, t: f64) -> SimState {
        SimState {
            vehicle: VehicleState::new(
                DVector::from_column_slice(&y[..n]),
                DVector::from_column_slice(&y[n..2 * n]),
                t,
            ),
            xi: DVector::from_column_slice(&y[2 * n..]),
        }
    }
}

/// Everything the dynamics evaluates at one state.
#[derive(Clone, Debug)]
pub struct Forward {
    pub qddot: DVector<f64>,
    pub xidot: DVector<f64>,
    pub terms: Terms,
    pub aero: AeroOutput,
}

/// Inverse-dynamics measurement at a sample instant.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub t: f64,
    /// `[q; q']`.
    pub x: DVector<f64>,
    /// Generalized aerodynamic force recovered from the equations of motion.
    pub a: DVector<f64>,
}

/// One full-rate trajectory record.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    /// Applied aerodynamic `B2 u2`.
    pub aero: DVector<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub trajectory: Vec<TrajectoryRow>,
    pub samples: Vec<TrainingSample>,
    /// Aerodynamic `B2 u2` applied by the simulator at each sample instant.
    pub applied: Vec<DVector<f64>>,
}

pub struct Simulator<'a> {
    model: &'a MultibodyModel,
    terms: &'a DynamicsTerms,
    aero: AeroGroundTruth,
    damping: DVector<f64>,
    config: SimConfig,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a MultibodyModel,
        terms: &'a DynamicsTerms,
        config: SimConfig,
    ) -> Result<Self, SimError> {
        config.validate(model)?;
        let mut aero = AeroGroundTruth::new(model);
        aero.params.enabled &= config.aero;
        let damping = if config.damping {
            DVector::from_vec(model.damping())
        } else {
            DVector::zeros(model.n_q())
        };
        Ok(Simulator {
            model,
            terms,
            aero,
            damping,
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn aero(&self) -> &AeroGroundTruth {
        &self.aero
    }

    pub fn aero_mut(&mut self) -> &mut AeroGroundTruth {
        &mut self.aero
    }

    pub fn damping(&self) -> &DVector<f64> {
        &self.damping
    }

    pub fn workspace(&self) -> TermsWorkspace {
        self.terms.workspace()
    }

    /// Actuated-joint reference positions and velocities at `t`.
    pub fn reference(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let na = self.model.n_actuated();
        let mut q = vec![0.0; na];
        let mut qd = vec![0.0; na];
        for (i, j) in self.config.joints.iter().enumerate() {
            (q[i], qd[i]) = j.eval(t);
        }
        (q, qd)
    }

    pub fn control(&self, t: f64, q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
        let off = self.model.actuated_offset();
        let (qr, qdr) = self.reference(t);
        pd_tracking_torque(
            &q.as_slice()[off..],
            &qdot.as_slice()[off..],
            &qr,
            &qdr,
            PdGains {
                kp: self.config.kp,
                kd: self.config.kd,
            },
        )
    }

    pub fn initial_state(&self) -> SimState {
        let n = self.model.n_q();
        let pad = |v: &[f64]| {
            let mut out = DVector::zeros(n);
            out.rows_mut(0, v.len()).copy_from_slice(v);
            out
        };
        let mut q = pad(&self.config.q0);
        let mut qdot = pad(&self.config.qdot0);
        if self.config.initial_jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            let normal = Normal::new(0.0, self.config.initial_jitter).expect("valid std. dev.");
            for v in q.iter_mut().chain(qdot.iter_mut()) {
                *v += normal.sample(&mut rng);
            }
        }
        let mut vehicle = VehicleState::new(q, qdot, 0.0);
        vehicle.wrap_angles(self.model);
        SimState {
            vehicle,
            xi: DVector::zeros(self.aero.n_lag()),
        }
    }

    /// `q'' = D^{-1} (B1 u1 + B2 u2 - C q' - G - c∘q')` and `xi'`.
    pub fn forward_dynamics(
        &self,
        state: &SimState,
        u1: &DVector<f64>,
        ws: &mut TermsWorkspace,
    ) -> Result<Forward, SimError> {
        let v = &state.vehicle;
        let (terms, kin) = self
            .terms
            .eval_all(v.q.as_slice(), v.qdot.as_slice(), ws)
            .map_err(|source| SimError::Dynamics { t: v.t, source })?;
        let ek = self.aero.all_kinematics(&kin, &v.qdot);
        let aero = self.aero.element_forces(&kin, &ek, state.xi.as_slice());
        let mut xidot = DVector::zeros(self.aero.n_lag());
        self.aero
            .lag_dynamics(&ek, state.xi.as_slice(), xidot.as_mut_slice());
        let rhs = &terms.b1 * u1 + &aero.generalized
            - &terms.c * &v.qdot
            - &terms.g
            - self.damping.component_mul(&v.qdot);
        let chol = terms
            .d
            .clone()
            .cholesky()
            .ok_or_else(|| SimError::Singular {
                t: v.t,
                q: v.q.iter().copied().collect(),
            })?;
        let qddot = chol.solve(&rhs);
        Ok(Forward {
            qddot,
            xidot,
            terms,
            aero,
        })
    }

    fn derivative(&self, t: f64, y: &[f64], ws: &mut TermsWorkspace) -> Result<Vec<f64>, SimError> {
        let n = self.model.n_q();
        let state = SimState::unstack(y, n, t);
        let u1 = self.control(t, &state.vehicle.q, &state.vehicle.qdot);
        let f = self.forward_dynamics(&state, &u1, ws)?;
        Ok(state
            .vehicle
            .qdot
            .iter()
            .chain(f.qddot.iter())
            .chain(f.xidot.iter())
            .copied()
            .collect())
    }

    /// Advances `state` by `dt` with RK4 (control re-evaluated at every
    /// stage), then wraps Euler angles.
    pub fn step_rk4(
        &self,
        state: &SimState,
        dt: f64,
        ws: &mut TermsWorkspace,
    ) -> Result<SimState, SimError> {
        if dt == 0.0 {
            return Ok(state.clone());
        }
        let t = state.vehicle.t;
        let y = rk4_step(
            |tt, yy| self.derivative(tt, yy, ws),
            t,
            &state.stacked(),
            dt,
        )?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Divergence { t: t + dt });
        }
        let mut next = SimState::unstack(&y, self.model.n_q(), t + dt);
        next.vehicle.wrap_angles(self.model);
        Ok(next)
    }

    /// `a = D q'' + C q' + G - B1 u1 + c∘q'`.
    pub fn extract_training_sample(
        &self,
        terms: &Terms,
        state: &VehicleState,
        qddot: &DVector<f64>,
        u1: &DVector<f64>,
    ) -> TrainingSample {
        let a = &terms.d * qddot + &terms.c * &state.qdot + &terms.g - &terms.b1 * u1
            + self.damping.component_mul(&state.qdot);
        TrainingSample {
            t: state.t,
            x: state.x(),
            a,
        }
    }

    /// Total mechanical energy `T + V`.
    pub fn energy(&self, state: &VehicleState) -> Result<f64, SimError> {
        let (t, v) = self
            .terms
            .energy(state.q.as_slice(), state.qdot.as_slice())
            .map_err(|source| SimError::Dynamics { t: state.t, source })?;
        Ok(t + v)
    }

    /// Integrates from the configured initial state, logging every step and
    /// sampling every `sample_stride` steps.
    pub fn run(&self) -> Result<ExperimentOutput, SimError> {
        self.run_from(self.initial_state())
    }

    pub fn run_from(&self, mut state: SimState) -> Result<ExperimentOutput, SimError> {
        let n_steps = self.config.n_steps();
        let dt = self.config.dt;
        let stride = self.config.sample_stride;
        let mut ws = self.workspace();
        let mut out = ExperimentOutput::default();
        let mut prev_qdot = state.vehicle.qdot.clone();
        for k in 0..n_steps {
            state.vehicle.t = k as f64 * dt;
            let v = &state.vehicle;
            let u1 = self.control(v.t, &v.q, &v.qdot);
            let f = self.forward_dynamics(&state, &u1, &mut ws)?;
            out.trajectory.push(TrajectoryRow {
                t: v.t,
                q: v.q.clone(),
                qdot: v.qdot.clone(),
                aero: f.aero.generalized.clone(),
            });
            let pending = (k % stride == 0).then(|| {
                out.applied.push(f.aero.generalized.clone());
                (f, u1)
            });
            let next = self.step_rk4(&state, dt, &mut ws)?;
            if let Some((f, u1)) = pending {
                let qddot = match self.config.acceleration {
                    AccelerationSource::Model => f.qddot.clone(),
                    AccelerationSource::FiniteDifference => {
                        if k == 0 {
                            (&next.vehicle.qdot - &state.vehicle.qdot) / dt
                        } else {
                            (&next.vehicle.qdot - &prev_qdot) / (2.0 * dt)
                        }
                    }
                };
                out.samples.push(self.extract_training_sample(
                    &f.terms,
                    &state.vehicle,
                    &qddot,
                    &u1,
                ));
            }
            prev_qdot = state.vehicle.qdot.clone();
            state = next;
        }
        Ok(out)
    }
}

/// Dense LU solve of `D q'' = rhs`, an independent check on the Cholesky path.
pub fn lu_accelerations(terms: &Terms, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    terms.d.clone().lu().solve(rhs)
}
