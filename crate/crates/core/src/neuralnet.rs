//! Feed-forward surrogate `phi(x, W)` with softplus hidden layers and a flat
//! weight vector.
//!
//! Flat layout is layer-major; each layer is its row-major augmented matrix
//! `[W | b]` of shape `fan_out x (fan_in + 1)` (or `fan_out x fan_in` with
//! biases disabled), so `n_w = sum (fan_in + 1) fan_out`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("expected {expected} values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Identity,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "softplus" => Some(Activation::Softplus),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(s),
            Activation::Identity => s,
        }
    }
}

/// `ln(1 + e^s)`, evaluated as `s + ln(1 + e^{-s})` for large `s`.
#[inline]
pub fn softplus(s: f64) -> f64 {
    if s > 30.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// Position of one layer inside the flat weight vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerLayout {
    fn stride(&self, bias: bool) -> usize {
        self.fan_in + bias as usize
    }

    fn len(&self, bias: bool) -> usize {
        self.fan_out * self.stride(bias)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    bias: bool,
    layout: Vec<LayerLayout>,
    n_weights: usize,
}

impl MlpSpec {
    /// `layer_sizes` includes input and output widths; one activation per
    /// weight layer, the last of which must be the identity.
    pub fn new(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        bias: bool,
    ) -> Result<Self, NetError> {
        if layer_sizes.len() < 2 {
            return Err(NetError::Spec(
                "need at least input and output layers".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(NetError::Spec("layer widths must be positive".into()));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(NetError::Spec(format!(
                "{} activations for {} weight layers",
                activations.len(),
                layer_sizes.len() - 1
            )));
        }
        if activations.last() != Some(&Activation::Identity) {
            return Err(NetError::Spec("output activation must be identity".into()));
        }
        let mut layout = Vec::new();
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            let l = LayerLayout {
                offset,
                fan_in: w[0],
                fan_out: w[1],
            };
            offset += l.len(bias);
            layout.push(l);
        }
        Ok(MlpSpec {
            layer_sizes,
            activations,
            bias,
            layout,
            n_weights: offset,
        })
    }

    /// Softplus on every hidden layer, identity output, biases on.
    pub fn softplus_net(layer_sizes: &[usize]) -> Result<Self, NetError> {
        let n = layer_sizes.len().saturating_sub(1);
        let mut act = vec![Activation::Softplus; n];
        if let Some(last) = act.last_mut() {
            *last = Activation::Identity;
        }
        MlpSpec::new(layer_sizes.to_vec(), act, true)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn n_weights(&self) -> usize {
        self.n_weights
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn max_width(&self) -> usize {
        *self.layer_sizes.iter().max().unwrap()
    }

    /// `phi(x, w)` into `out`.
    pub fn forward_into(&self, w: &[f64], x: &[f64], out: &mut [f64]) -> Result<(), NetError> {
        self.check(w.len(), self.n_weights)?;
        self.check(x.len(), self.input_dim())?;
        self.check(out.len(), self.output_dim())?;
        let width = self.max_width();
        let mut cur = vec![0.0; width];
        let mut next = vec![0.0; width];
        cur[..x.len()].copy_from_slice(x);
        for (l, act) in self.layout.iter().zip(&self.activations) {
            let stride = l.stride(self.bias);
            for r in 0..l.fan_out {
                let row = &w[l.offset + r * stride..l.offset + (r + 1) * stride];
                let mut s = if self.bias { row[l.fan_in] } else { 0.0 };
                for c in 0..l.fan_in {
                    s += row[c] * cur[c];
                }
                next[r] = act.apply(s);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        out.copy_from_slice(&cur[..self.output_dim()]);
        Ok(())
    }

    pub fn forward(&self, w: &[f64], x: &[f64]) -> Result<DVector<f64>, NetError> {
        let mut out = DVector::zeros(self.output_dim());
        self.forward_into(w, x, out.as_mut_slice())?;
        Ok(out)
    }

    /// Per-column evaluation of an input batch `[x_1, ..., x_m]`.
    pub fn forward_batch(&self, w: &[f64], xs: &DMatrix<f64>) -> Result<DMatrix<f64>, NetError> {
        let mut out = DMatrix::zeros(self.output_dim(), xs.ncols());
        for (j, x) in xs.column_iter().enumerate() {
            let y = self.forward(w, x.as_slice())?;
            out.set_column(j, &y);
        }
        Ok(out)
    }

    fn check(&self, got: usize, expected: usize) -> Result<(), NetError> {
        if got == expected {
            Ok(())
        } else {
            Err(NetError::Dimension { expected, got })
        }
    }

    /// Splits a flat vector into per-layer `(W, b)`.
    pub fn unflatten(&self, flat: &FlatWeights) -> Result<Vec<Layer>, NetError> {
        self.check(flat.w.len(), self.n_weights)?;
        Ok(self
            .layout
            .iter()
            .map(|l| {
                let stride = l.stride(self.bias);
                let blk = &flat.w[l.offset..l.offset + l.len(self.bias)];
                Layer {
                    weights: DMatrix::from_fn(l.fan_out, l.fan_in, |r, c| blk[r * stride + c]),
                    bias: self
                        .bias
                        .then(|| DVector::from_fn(l.fan_out, |r, _| blk[r * stride + l.fan_in])),
                }
            })
            .collect())
    }

    /// Stacks per-layer parameters into the flat layout.
    pub fn flatten(&self, layers: &[Layer]) -> Result<FlatWeights, NetError> {
        self.check(layers.len(), self.layout.len())?;
        let mut w = vec![0.0; self.n_weights];
        for (l, layer) in self.layout.iter().zip(layers) {
            if layer.weights.shape() != (l.fan_out, l.fan_in)
                || layer.bias.is_some() != self.bias
                || layer.bias.as_ref().is_some_and(|b| b.len() != l.fan_out)
            {
                return Err(NetError::Spec("layer shape does not match spec".into()));
            }
            let stride = l.stride(self.bias);
            for r in 0..l.fan_out {
                for c in 0..l.fan_in {
                    w[l.offset + r * stride + c] = layer.weights[(r, c)];
                }
                if let Some(b) = &layer.bias {
                    w[l.offset + r * stride + l.fan_in] = b[r];
                }
            }
        }
        Ok(FlatWeights::new(self, w))
    }

    fn header(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        let acts: Vec<&str> = self.activations.iter().map(|a| a.name()).collect();
        format!(
            "layers {}\nactivations {}\nbias {}\n",
            sizes.join(" "),
            acts.join(" "),
            self.bias
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_out x fan_in`.
    pub weights: DMatrix<f64>,
    pub bias: Option<DVector<f64>>,
}

/// All parameters stacked in layout order, with per-layer offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatWeights {
    pub w: Vec<f64>,
    pub offsets: Vec<usize>,
}

impl FlatWeights {
    pub fn new(spec: &MlpSpec, w: Vec<f64>) -> Self {
        FlatWeights {
            w,
            offsets: spec.layout.iter().map(|l| l.offset).collect(),
        }
    }
}

/// Per-feature affine map `(v - mean) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Standardizer {
            mean: DVector::zeros(n),
            scale: DVector::from_element(n, 1.0),
        }
    }

    /// Mean and standard deviation of `samples`; a feature whose spread is
    /// below `1e-6` of the largest spread gets that floor as its scale.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a DVector<f64>>) -> Self {
        let v: Vec<&DVector<f64>> = samples.into_iter().collect();
        assert!(!v.is_empty(), "cannot fit a standardizer to no samples");
        let n = v[0].len();
        let m = v.len() as f64;
        let mut mean = DVector::zeros(n);
        for s in &v {
            mean += *s;
        }
        mean /= m;
        let mut var = DVector::<f64>::zeros(n);
        for s in &v {
            let d = *s - &mean;
            var += d.component_mul(&d);
        }
        let std = (var / m).map(f64::sqrt);
        let floor = (std.max() * 1e-6).max(1e-300);
        let scale = std.map(|s| if s > floor { s } else { floor.max(1e-12) });
        Standardizer { mean, scale }
    }

    pub fn apply(&self, v: &[f64]) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| (v[i] - self.mean[i]) / self.scale[i])
    }

    pub fn invert(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_fn(z.len(), |i, _| z[i] * self.scale[i] + self.mean[i])
    }

    fn write(&self, name: &str, s: &mut String) {
        let _ = writeln!(s, "{name} {}", self.mean.len());
        let _ = writeln!(s, "{}", join(self.mean.iter()));
        let _ = writeln!(s, "{}", join(self.scale.iter()));
    }
}

fn join<'a>(v: impl Iterator<Item = &'a f64>) -> String {
    v.map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ")
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Text checkpoint of a network and, optionally, the filter that trains it.
///
/// ```text
/// wingfit-checkpoint 1
/// layers 12 16 16 10
/// activations softplus softplus identity
/// bias true
/// features 0 2 ...            (indices into [q; q'])
/// step 20
/// input_scaler 12             (mean line, scale line follow)
/// output_scaler 10
/// weights 650                 (one line, n_w values)
/// sqrt_cov 650                (optional; n_w lines of the lower factor, row-major)
/// ```
///
/// Values are written with 17 significant digits and read back exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub features: Vec<usize>,
    pub step: usize,
    pub input_scaler: Standardizer,
    pub output_scaler: Standardizer,
    pub weights: Vec<f64>,
    pub sqrt_cov: Option<DMatrix<f64>>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut s = format!("wingfit-checkpoint {CHECKPOINT_VERSION}\n");
        s.push_str(&self.spec.header());
        let feats: Vec<String> = self.features.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(s, "features {}", feats.join(" "));
        let _ = writeln!(s, "step {}", self.step);
        self.input_scaler.write("input_scaler", &mut s);
        self.output_scaler.write("output_scaler", &mut s);
        let _ = writeln!(s, "weights {}", self.weights.len());
        let _ = writeln!(s, "{}", join(self.weights.iter()));
        if let Some(sc) = &self.sqrt_cov {
            let _ = writeln!(s, "sqrt_cov {}", sc.nrows());
            for r in sc.row_iter() {
                let _ = writeln!(s, "{}", join(r.iter()));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NetError> {
        let err = |m: &str| NetError::Checkpoint(m.to_string());
        let mut lines = text.lines();
        let mut keyed = |key: &str| -> Result<Vec<String>, NetError> {
            let line = lines
                .next()
                .ok_or_else(|| err(&format!("missing `{key}`")))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(err(&format!("expected `{key}`, found `{line}`")));
            }
            Ok(it.map(str::to_string).collect())
        };
        let version = keyed("wingfit-checkpoint")?;
        if version != [CHECKPOINT_VERSION.to_string()] {
            return Err(err("unsupported checkpoint version"));
        }
        let num = |s: &String| s.parse::<usize>().map_err(|_| err("bad integer"));
        let sizes = keyed("layers")?
            .iter()
            .map(num)
            .collect::<Result<Vec<_>, _>>()?;
        let acts = keyed("activations")?
            .iter()
            .map(|a| Activation::parse(a).ok_or_else(|| err("unknown activation")))
            .collect::<Result<Vec<_>, _>>()?;
        let bias = match keyed("bias")?.as_slice() {
            [b] if b == "true" => true,
            [b] if b == "false" => false,
            _ => return Err(err("bias must be true or false")),
        };
        let spec = MlpSpec::new(sizes, acts, bias)?;
        let features = keyed("features")?
            .iter()
            .map(num)
            .collect::<Result<Vec<_>, _>>()?;
        let step = match keyed("step")?.as_slice() {
            [s] => num(s)?,
            _ => return Err(err("bad step")),
        };
        Self::parse_body(text, spec, features, step)
    }

    fn parse_body(
        text: &str,
        spec: MlpSpec,
        features: Vec<usize>,
        step: usize,
    ) -> Result<Self, NetError> {
        let err = |m: String| NetError::Checkpoint(m);
        let mut lines = text.lines().skip(6);
        let mut next = || {
            lines
                .next()
                .ok_or_else(|| err("truncated checkpoint".into()))
        };
        fn floats(line: &str, n: usize) -> Result<Vec<f64>, NetError> {
            let v = line
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| NetError::Checkpoint("bad number".into()))?;
            if v.len() != n {
                return Err(NetError::Checkpoint(format!(
                    "expected {n} values, found {}",
                    v.len()
                )));
            }
            Ok(v)
        }
        fn header(line: &str, key: &str) -> Result<usize, NetError> {
            match line.split_whitespace().collect::<Vec<_>>().as_slice() {
                [k, n] if *k == key => n
                    .parse()
                    .map_err(|_| NetError::Checkpoint("bad integer".into())),
                _ => Err(NetError::Checkpoint(format!(
                    "expected `{key}`, found `{line}`"
                ))),
            }
        }
        let mut scalers = Vec::new();
        for key in ["input_scaler", "output_scaler"] {
            let n = header(next()?, key)?;
            let mean = floats(next()?, n)?;
            let scale = floats(next()?, n)?;
            scalers.push(Standardizer {
                mean: DVector::from_vec(mean),
                scale: DVector::from_vec(scale),
            });
        }
        let n_w = header(next()?, "weights")?;
        if n_w != spec.n_weights() {
            return Err(err(format!(
                "{n_w} weights for a network with {}",
                spec.n_weights()
            )));
        }
        let weights = floats(next()?, n_w)?;
        let sqrt_cov = match lines.next() {
            None => None,
            Some(line) => {
                let n = header(line, "sqrt_cov")?;
                if n != n_w {
                    return Err(err("covariance factor size mismatch".into()));
                }
                let mut m = DMatrix::zeros(n, n);
                for r in 0..n {
                    let line = lines
                        .next()
                        .ok_or_else(|| err("truncated covariance factor".into()))?;
                    let row = floats(line, n)?;
                    for (c, v) in row.into_iter().enumerate() {
                        m[(r, c)] = v;
                    }
                }
                Some(m)
            }
        };
        let output_scaler = scalers.pop().unwrap();
        let input_scaler = scalers.pop().unwrap();
        if input_scaler.mean.len() != spec.input_dim()
            || output_scaler.mean.len() != spec.output_dim()
            || features.len() != spec.input_dim()
        {
            return Err(err(
                "scaler or feature width does not match the network".into()
            ));
        }
        Ok(Checkpoint {
            spec,
            features,
            step,
            input_scaler,
            output_scaler,
            weights,
            sqrt_cov,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}
