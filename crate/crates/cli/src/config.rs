//! Experiment configuration file.
//!
//! ```toml
//! format = 1
//! model = "../crates/core/models/aerobat-lite.mdl"  # relative to this file
//! out = "out/aerobat-lite"                         # relative to the working directory
//! seed = 7                                         # overrides sim.seed and filter.seed
//!
//! [sim]       # SimConfig
//! [filter]    # FilterConfig
//! [network]   # NetworkConfig
//! [train]     # samples = "path.csv", epochs = 1, steps = 20
//! [bench]     # iters = 1000, warmup = 100
//! ```
//!
//! Precedence, lowest to highest: built-in defaults, the config file,
//! command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use wingfit::ckf::FilterConfig;
use wingfit::simulate::SimConfig;
use wingfit::surrogate::NetworkConfig;

use crate::error::CliError;

pub const CONFIG_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    /// Sample CSV to train on; simulated inline when absent.
    pub samples: Option<PathBuf>,
    /// Passes over the sample stream (1 = a single online pass).
    pub epochs: usize,
    /// Stop after this many filter updates in total.
    pub steps: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            samples: None,
            epochs: 1,
            steps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    /// Timed evaluations per term and backend.
    pub iters: usize,
    /// Untimed evaluations before timing.
    pub warmup: usize,
    /// States cycled through during timing.
    pub states: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            iters: 1000,
            warmup: 100,
            states: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub sim: SimConfig,
    pub filter: FilterConfig,
    pub network: NetworkConfig,
    pub train: TrainSettings,
    pub bench: BenchSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: None,
            out: PathBuf::from("out"),
            seed: 0,
            sim: SimConfig::default(),
            filter: FilterConfig::default(),
            network: NetworkConfig::default(),
            train: TrainSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    format: u32,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    #[serde(default)]
    sim: SimConfig,
    #[serde(default)]
    filter: FilterConfig,
    #[serde(default)]
    network: NetworkConfig,
    #[serde(default)]
    train: TrainSettings,
    #[serde(default)]
    bench: BenchSettings,
}

/// Values given on the command line; `None` leaves the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub dt: Option<f64>,
    pub stride: Option<usize>,
    pub steps: Option<usize>,
    pub epochs: Option<usize>,
    pub iters: Option<usize>,
    pub samples: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, CliError> {
        let f: FileConfig =
            toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))?;
        if f.format != CONFIG_FORMAT {
            return Err(CliError::Input(format!(
                "config: unsupported format {} (expected {CONFIG_FORMAT})",
                f.format
            )));
        }
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let mut cfg = ExperimentConfig {
            model: f.model.map(rel),
            out: f.out.unwrap_or_else(|| PathBuf::from("out")),
            seed: f.seed.unwrap_or(f.sim.seed),
            sim: f.sim,
            filter: f.filter,
            network: f.network,
            train: TrainSettings {
                samples: f.train.samples.map(rel),
                ..f.train
            },
            bench: f.bench,
        };
        cfg.sync_seed();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// Defaults or `config`, then `over` on top.
    pub fn resolve(config: Option<&Path>, over: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(over);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = &o.model {
            self.model = Some(m.clone());
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = o.duration {
            self.sim.duration = d;
        }
        if let Some(d) = o.dt {
            self.sim.dt = d;
        }
        if let Some(s) = o.stride {
            self.sim.sample_stride = s;
        }
        if let Some(s) = o.steps {
            self.train.steps = Some(s);
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(i) = o.iters {
            self.bench.iters = i;
        }
        if let Some(s) = &o.samples {
            self.train.samples = Some(s.clone());
        }
        self.sync_seed();
    }

    fn sync_seed(&mut self) {
        self.sim.seed = self.seed;
        self.filter.seed = self.seed;
    }

    pub fn model_path(&self) -> Result<&Path, CliError> {
        self.model.as_deref().ok_or_else(|| {
            CliError::Usage("no model given (use --model or `model` in --config)".into())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let text = r#"
format = 1
model = "m.mdl"
seed = 3
[sim]
dt = 2e-4
duration = 0.1
"#;
        let mut cfg = ExperimentConfig::from_toml_str(text, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.model.as_deref(), Some(Path::new("/cfg/m.mdl")));
        assert_eq!((cfg.sim.seed, cfg.filter.seed), (3, 3));
        cfg.apply(&Overrides {
            dt: Some(1e-4),
            seed: Some(9),
            ..Overrides::default()
        });
        assert_eq!(cfg.sim.dt, 1e-4);
        assert_eq!(cfg.sim.duration, 0.1);
        assert_eq!((cfg.sim.seed, cfg.filter.seed), (9, 9));
    }

    #[test]
    fn wrong_format_is_rejected() {
        let e = ExperimentConfig::from_toml_str("format = 2", Path::new(".")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(ExperimentConfig::from_toml_str("format = 1\nbogus = 1", Path::new(".")).is_err());
    }
}
