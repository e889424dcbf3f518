//! Glue between simulated samples and the filter: feature selection,
//! standardization and physical-unit scoring of the network surrogate.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::multibody::{q_symbol, qd_symbol, MultibodyModel};
use crate::neuralnet::{Activation, Checkpoint, MlpSpec, NetError, Standardizer};

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Hidden layer widths; every hidden layer uses softplus.
    pub hidden: Vec<usize>,
    pub bias: bool,
    /// Input features as `q.<dof>` / `qd.<dof>`; empty selects all of `[q; q']`.
    pub features: Vec<String>,
    /// Number of leading samples used to fit the standardizers.
    pub warmup: usize,
    pub standardize: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![16, 16],
            bias: true,
            features: Vec::new(),
            warmup: 20,
            standardize: true,
        }
    }
}

/// Network, feature map and scalers; everything needed to turn a state into
/// a force prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    pub spec: MlpSpec,
    /// Indices into `[q; q']`.
    pub features: Vec<usize>,
    pub input_scaler: Standardizer,
    pub output_scaler: Standardizer,
}

/// Resolves feature names against a model's DOFs.
pub fn feature_indices(model: &MultibodyModel, names: &[String]) -> Result<Vec<usize>, String> {
    let n = model.n_q();
    if names.is_empty() {
        return Ok((0..2 * n).collect());
    }
    names
        .iter()
        .map(|name| {
            model
                .dof_names()
                .iter()
                .enumerate()
                .find_map(|(i, d)| {
                    if *name == q_symbol(d) {
                        Some(i)
                    } else if *name == qd_symbol(d) {
                        Some(n + i)
                    } else {
                        None
                    }
                })
                .ok_or_else(|| format!("unknown feature `{name}`"))
        })
        .collect()
}

impl Surrogate {
    /// Builds the network and fits the scalers on the first `warmup` pairs.
    pub fn fit(
        cfg: &NetworkConfig,
        features: Vec<usize>,
        n_out: usize,
        samples: &[(DVector<f64>, DVector<f64>)],
    ) -> Result<Self, NetError> {
        let mut sizes = vec![features.len()];
        sizes.extend(&cfg.hidden);
        sizes.push(n_out);
        let mut act = vec![Activation::Softplus; sizes.len() - 1];
        *act.last_mut().unwrap() = Activation::Identity;
        let spec = MlpSpec::new(sizes, act, cfg.bias)?;
        let warm = &samples[..cfg.warmup.clamp(1, samples.len().max(1)).min(samples.len())];
        let (input_scaler, output_scaler) = if cfg.standardize && !warm.is_empty() {
            let xs: Vec<DVector<f64>> = warm.iter().map(|(x, _)| select(&features, x)).collect();
            let ys: Vec<&DVector<f64>> = warm.iter().map(|(_, a)| a).collect();
            (Standardizer::fit(&xs), Standardizer::fit(ys))
        } else {
            (
                Standardizer::identity(features.len()),
                Standardizer::identity(n_out),
            )
        };
        Ok(Surrogate {
            spec,
            features,
            input_scaler,
            output_scaler,
        })
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Self {
        Surrogate {
            spec: cp.spec.clone(),
            features: cp.features.clone(),
            input_scaler: cp.input_scaler.clone(),
            output_scaler: cp.output_scaler.clone(),
        }
    }

    /// Standardized network input for a full state `[q; q']`.
    pub fn input(&self, x: &DVector<f64>) -> DVector<f64> {
        self.input_scaler
            .apply(select(&self.features, x).as_slice())
    }

    /// Standardized training pairs.
    pub fn normalize(
        &self,
        samples: &[(DVector<f64>, DVector<f64>)],
    ) -> Vec<(DVector<f64>, DVector<f64>)> {
        samples
            .iter()
            .map(|(x, a)| (self.input(x), self.output_scaler.apply(a.as_slice())))
            .collect()
    }

    /// Force prediction in physical units.
    pub fn predict(&self, w: &[f64], x: &DVector<f64>) -> Result<DVector<f64>, NetError> {
        let z = self.spec.forward(w, self.input(x).as_slice())?;
        Ok(self.output_scaler.invert(z.as_slice()))
    }

    /// `sum |phi - a|^2 / sum |a|^2` over `data`, in physical units.
    pub fn nmse(&self, w: &[f64], data: &[(DVector<f64>, DVector<f64>)]) -> Result<f64, NetError> {
        let mut err = 0.0;
        let mut pow = 0.0;
        for (x, a) in data {
            let p = self.predict(w, x)?;
            err += (p - a).norm_squared();
            pow += a.norm_squared();
        }
        Ok(if pow > 0.0 { err / pow } else { err })
    }

    pub fn checkpoint(
        &self,
        weights: &[f64],
        step: usize,
        sqrt_cov: Option<nalgebra::DMatrix<f64>>,
    ) -> Checkpoint {
        Checkpoint {
            spec: self.spec.clone(),
            features: self.features.clone(),
            step,
            input_scaler: self.input_scaler.clone(),
            output_scaler: self.output_scaler.clone(),
            weights: weights.to_vec(),
            sqrt_cov,
        }
    }
}

fn select(features: &[usize], x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(features.len(), features.iter().map(|&i| x[i]))
}
