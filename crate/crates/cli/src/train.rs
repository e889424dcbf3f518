use std::path::{Path, PathBuf};

use nalgebra::DVector;
use wingfit::ckf::{train_online, CkfState, StepLog};
use wingfit::multibody::derive_dynamics;
use wingfit::neuralnet::Checkpoint;
use wingfit::surrogate::{feature_indices, Surrogate};
use wingfit::table::{samples_from_table, Table};

use crate::config::ExperimentConfig;
use crate::error::{io_error, CliError};
use crate::simulate::{create_out_dir, load_model, run_experiment, write_experiment};

pub const TRAINING_CSV: &str = "training.csv";
pub const FORCES_CSV: &str = "forces.csv";
pub const CHECKPOINT: &str = "checkpoint.txt";

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Normalized MSE of the final weights on the evaluation set.
    pub nmse: f64,
    pub cov_diag_max: f64,
    /// Filter steps taken in total, including any before a resume.
    pub steps: usize,
    pub log: Vec<StepLog>,
    pub weights: Vec<f64>,
    /// Number of evaluation records (trajectory rows or samples).
    pub n_eval: usize,
    pub training: PathBuf,
    pub forces: PathBuf,
    pub checkpoint: PathBuf,
}

type Pair = (DVector<f64>, DVector<f64>);

/// `train`: online SR-CKF training of the surrogate on the sample stream.
///
/// The stream is the configured samples, repeated `epochs` times and cut
/// at `steps` updates. With `resume`, scalers, weights, covariance factor
/// and step count come from the checkpoint and training continues at the
/// next stream position, reproducing an uninterrupted run.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainReport, CliError> {
    let model = load_model(cfg.model_path()?)?;
    let n_q = model.n_q();
    create_out_dir(&cfg.out)?;

    let (samples, eval_t, eval): (Vec<Pair>, Vec<f64>, Vec<Pair>) = match &cfg.train.samples {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Input(format!(
                    "sample file not found: {}",
                    path.display()
                )));
            }
            let s = samples_from_table(&Table::load(path)?, n_q)?;
            let pairs: Vec<Pair> = s.iter().map(|s| (s.x.clone(), s.a.clone())).collect();
            (pairs.clone(), s.iter().map(|s| s.t).collect(), pairs)
        }
        None => {
            let terms = derive_dynamics(&model);
            let result = run_experiment(&model, &terms, cfg)?;
            write_experiment(&cfg.out, n_q, &result)?;
            let pairs = result
                .samples
                .iter()
                .map(|s| (s.x.clone(), s.a.clone()))
                .collect();
            let eval = result
                .trajectory
                .iter()
                .map(|r| {
                    let x =
                        DVector::from_iterator(2 * n_q, r.q.iter().chain(r.qdot.iter()).copied());
                    (x, r.aero.clone())
                })
                .collect();
            (pairs, result.trajectory.iter().map(|r| r.t).collect(), eval)
        }
    };
    if samples.is_empty() {
        return Err(CliError::Input(
            "no training samples (duration shorter than one sample stride?)".into(),
        ));
    }

    let checkpoint = match resume {
        Some(p) => Some(Checkpoint::load(p).map_err(|e| CliError::Input(e.to_string()))?),
        None => None,
    };
    let surrogate = match &checkpoint {
        Some(cp) => {
            if cp.spec.output_dim() != n_q || cp.features.iter().any(|&f| f >= 2 * n_q) {
                return Err(CliError::Input(
                    "checkpoint does not match the model's dimensions".into(),
                ));
            }
            Surrogate::from_checkpoint(cp)
        }
        None => {
            let features =
                feature_indices(&model, &cfg.network.features).map_err(CliError::Input)?;
            Surrogate::fit(&cfg.network, features, n_q, &samples)
                .map_err(|e| CliError::Input(e.to_string()))?
        }
    };
    let spec = &surrogate.spec;
    let n_w = spec.n_weights();

    let mut state = CkfState::initial(n_w, n_q, &cfg.filter);
    if let Some(cp) = &checkpoint {
        let s = cp.sqrt_cov.clone().ok_or_else(|| {
            CliError::Input("checkpoint has no covariance factor; cannot resume".into())
        })?;
        state.w = DVector::from_column_slice(&cp.weights);
        state = state.with_factor(s);
        state.k = cp.step;
    }

    let stream_once = surrogate.normalize(&samples);
    let epochs = cfg.train.epochs.max(1);
    let full = epochs * stream_once.len();
    let total = cfg.train.steps.map_or(full, |s| s.min(full));
    if state.k > total {
        return Err(CliError::Usage(format!(
            "checkpoint is at step {} but training stops at step {total}",
            state.k
        )));
    }
    let stream: Vec<Pair> = (state.k..total)
        .map(|i| stream_once[i % stream_once.len()].clone())
        .collect();

    let score = |w: &[f64]| surrogate.nmse(w, &eval).unwrap_or(f64::NAN);
    let result = train_online(state, spec, &stream, Some(&score))?;
    let state = result.state;
    let weights: Vec<f64> = state.w.iter().copied().collect();
    let nmse = score(&weights);
    let cov_diag_max = state.cov_diag_max();

    let mut trace = Table::new(
        ["step", "innovation_norm", "nmse", "cov_diag_max"]
            .iter()
            .map(|s| s.to_string()),
    );
    for l in &result.log {
        trace.push(vec![
            l.step as f64,
            l.innovation_norm,
            l.nmse,
            l.cov_diag_max,
        ]);
    }
    let training = cfg.out.join(TRAINING_CSV);
    trace.save(&training)?;

    let names = model.dof_names();
    let mut forces = Table::new(
        std::iter::once("t".to_string())
            .chain(names.iter().map(|d| format!("actual_{d}")))
            .chain(names.iter().map(|d| format!("predicted_{d}"))),
    );
    for (t, (x, a)) in eval_t.iter().zip(&eval) {
        let p = surrogate
            .predict(&weights, x)
            .map_err(|e| CliError::Input(e.to_string()))?;
        let mut row = Vec::with_capacity(1 + 2 * n_q);
        row.push(*t);
        row.extend(a.iter().chain(p.iter()));
        forces.push(row);
    }
    let forces_path = cfg.out.join(FORCES_CSV);
    forces.save(&forces_path)?;

    let checkpoint_path = cfg.out.join(CHECKPOINT);
    surrogate
        .checkpoint(&weights, state.k, Some(state.s.clone()))
        .save(&checkpoint_path)
        .map_err(|e| io_error(&checkpoint_path, e))?;

    println!(
        "train: {} weights, steps {}..{} of {total}",
        n_w,
        total - result.log.len(),
        state.k
    );
    println!(
        "final normalized MSE = {nmse:.6e} ({:.4}%) over {} records",
        100.0 * nmse,
        eval.len()
    );
    println!("max diag(P) = {cov_diag_max:.6e}");
    for p in [&training, &forces_path, &checkpoint_path] {
        println!("wrote {}", p.display());
    }
    Ok(TrainReport {
        nmse,
        cov_diag_max,
        steps: state.k,
        log: result.log,
        weights,
        n_eval: eval.len(),
        training,
        forces: forces_path,
        checkpoint: checkpoint_path,
    })
}
