use nalgebra::DVector;

use super::{CkfError, CkfState};
use crate::neuralnet::MlpSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    /// Filter step index after this update (1-based).
    pub step: usize,
    pub innovation_norm: f64,
    /// Normalized MSE on the evaluation set with the updated weights, or NaN
    /// without one.
    pub nmse: f64,
    pub cov_diag_max: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub state: CkfState,
    pub log: Vec<StepLog>,
    /// Weight mean after every update.
    pub weights: Vec<DVector<f64>>,
}

/// Scores a weight vector, e.g. NMSE on held-out data.
pub type Evaluator<'a> = &'a dyn Fn(&[f64]) -> f64;

/// Sequential predict/update over `(x, a)` pairs. `evaluate` scores the
/// current weight mean after each update (typically on held-out data).
pub fn train_online(
    mut state: CkfState,
    spec: &MlpSpec,
    stream: &[(DVector<f64>, DVector<f64>)],
    evaluate: Option<Evaluator<'_>>,
) -> Result<TrainResult, CkfError> {
    let mut log = Vec::with_capacity(stream.len());
    let mut weights = Vec::with_capacity(stream.len());
    for (x, a) in stream {
        state.predict();
        let report = state.update(spec, x.as_slice(), a)?;
        log.push(StepLog {
            step: state.k,
            innovation_norm: report.innovation.norm(),
            nmse: evaluate.map_or(f64::NAN, |f| f(state.w.as_slice())),
            cov_diag_max: report.cov_diag_max,
        });
        weights.push(state.w.clone());
    }
    Ok(TrainResult {
        state,
        log,
        weights,
    })
}
