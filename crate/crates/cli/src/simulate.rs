use std::path::{Path, PathBuf};

use wingfit::multibody::{derive_dynamics, DynamicsTerms, MultibodyModel};
use wingfit::simulate::{ExperimentOutput, Simulator};
use wingfit::table::{samples_table, trajectory_table};

use crate::config::ExperimentConfig;
use crate::error::{io_error, CliError};

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const SAMPLES_CSV: &str = "samples.csv";

pub fn load_model(path: &Path) -> Result<MultibodyModel, CliError> {
    if !path.is_file() {
        return Err(CliError::Input(format!(
            "model file not found: {}",
            path.display()
        )));
    }
    Ok(MultibodyModel::from_file(path)?)
}

pub fn create_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))
}

#[derive(Clone, Debug)]
pub struct SimulateReport {
    pub trajectory: PathBuf,
    pub samples: PathBuf,
    pub rows: usize,
    pub n_samples: usize,
}

/// Simulates the configured experiment.
pub fn run_experiment(
    model: &MultibodyModel,
    terms: &DynamicsTerms,
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutput, CliError> {
    let sim = Simulator::new(model, terms, cfg.sim.clone())?;
    Ok(sim.run()?)
}

pub fn write_experiment(
    out: &Path,
    n_q: usize,
    result: &ExperimentOutput,
) -> Result<SimulateReport, CliError> {
    create_out_dir(out)?;
    let trajectory = out.join(TRAJECTORY_CSV);
    let samples = out.join(SAMPLES_CSV);
    trajectory_table(&result.trajectory, n_q).save(&trajectory)?;
    samples_table(&result.samples, n_q).save(&samples)?;
    Ok(SimulateReport {
        trajectory,
        samples,
        rows: result.trajectory.len(),
        n_samples: result.samples.len(),
    })
}

/// `simulate`: trajectory and sample CSVs in the output directory.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimulateReport, CliError> {
    let model = load_model(cfg.model_path()?)?;
    let terms = derive_dynamics(&model);
    let result = run_experiment(&model, &terms, cfg)?;
    let report = write_experiment(&cfg.out, model.n_q(), &result)?;
    println!(
        "simulate: {} ({} DOF), {} steps of {} s -> {} rows, {} samples",
        model.name,
        model.n_q(),
        cfg.sim.n_steps(),
        cfg.sim.dt,
        report.rows,
        report.n_samples
    );
    println!("wrote {}", report.trajectory.display());
    println!("wrote {}", report.samples.display());
    Ok(report)
}
