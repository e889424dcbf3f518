#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wingfit::multibody::{derive_dynamics, DynamicsTerms, MultibodyModel};

pub fn model_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("models")
        .join(format!("{name}.mdl"))
}

pub fn load(name: &str) -> (MultibodyModel, DynamicsTerms) {
    let m = MultibodyModel::from_file(model_path(name)).unwrap();
    let t = derive_dynamics(&m);
    (m, t)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random `(q, q')` with every coordinate in ±`q_span` and rates in ±`v_span`.
pub fn random_state(
    rng: &mut ChaCha8Rng,
    n: usize,
    q_span: f64,
    v_span: f64,
) -> (Vec<f64>, Vec<f64>) {
    let q = (0..n).map(|_| rng.random_range(-q_span..q_span)).collect();
    let v = (0..n).map(|_| rng.random_range(-v_span..v_span)).collect();
    (q, v)
}

pub fn max_abs<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Symmetric flapping and folding at 10 Hz under PD tracking, 200 ms.
pub fn aerobat_config() -> wingfit::simulate::SimConfig {
    use std::f64::consts::{FRAC_PI_2, TAU};
    use wingfit::simulate::{JointReference, SimConfig};
    let flap = JointReference {
        amplitude: 0.6,
        frequency: 10.0,
        phase: 0.0,
        offset: 0.0,
    };
    let fold = JointReference {
        amplitude: 0.3,
        frequency: 10.0,
        phase: FRAC_PI_2,
        offset: 0.3,
    };
    let w = 0.6 * TAU * 10.0;
    SimConfig {
        dt: 1e-4,
        duration: 0.2,
        sample_stride: 100,
        seed: 7,
        joints: vec![flap.clone(), flap, fold.clone(), fold],
        kp: 4.0,
        kd: 0.012,
        q0: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.6],
        qdot0: vec![3.0, 0.0, 0.0, 0.0, 0.0, 0.0, w, w, 0.0, 0.0],
        ..SimConfig::default()
    }
}
