//! Feature extractor `G`, temperature-scaled label predictor `F` and domain
//! discriminator `D`, plus the gradient-reversal boundary between `G` and `D`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    affine_backward, affine_forward, relu_backward, relu_forward, sgd_momentum_step,
    sigmoid, softmax_temperature, LayerParams, Matrix, Rng,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub class_count: usize,
    pub disc_hidden: usize,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 2,
            hidden_dims: vec![64],
            feature_dim: 16,
            class_count: 4,
            disc_hidden: 32,
            temperature: 1.8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.class_count < 2 || self.disc_hidden == 0 {
            return Err(Error::Parameter(format!("degenerate model config {self:?}")));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::Parameter("hidden widths must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Stack of affine layers with ReLU between them (and optionally after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<LayerParams>,
    final_relu: bool,
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl Mlp {
    fn glorot(widths: &[usize], final_relu: bool, rng: &mut Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| LayerParams::glorot(w[0], w[1], rng))
            .collect();
        Mlp { layers, final_relu }
    }

    fn relu_after(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.final_relu
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = affine_forward(&h, layer)?;
            cache.inputs.push(h);
            h = if self.relu_after(i) { relu_forward(&z) } else { z.clone() };
            cache.pre.push(z);
        }
        Ok((h, cache))
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = affine_forward(&h, layer)?;
            h = if self.relu_after(i) { relu_forward(&z) } else { z };
        }
        Ok(h)
    }

    /// Accumulates parameter gradients and returns the gradient at the input.
    pub fn backward(&mut self, cache: &MlpCache, grad_out: &Matrix) -> Result<Matrix> {
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if self.relu_after(i) {
                g = relu_backward(&cache.pre[i], &g)?;
            }
            g = affine_backward(&cache.inputs[i], &mut self.layers[i], &g)?;
        }
        Ok(g)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, LayerParams::fan_out)
    }
}

/// `G`: affine+ReLU blocks ending in a ReLU embedding of width `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor(pub Mlp);

/// `F`: one affine map `D → C` read through a temperature softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPredictor {
    pub net: Mlp,
    pub temperature: f64,
}

/// `D`: `D → hidden` ReLU `→ 1`, sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDiscriminator(pub Mlp);

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub extractor: FeatureExtractor,
    pub classifier: LabelPredictor,
    pub discriminator: DomainDiscriminator,
}

impl Model {
    /// Glorot-uniform initialisation drawn in the order G, F, D.
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut g_widths = vec![cfg.input_dim];
        g_widths.extend(&cfg.hidden_dims);
        g_widths.push(cfg.feature_dim);
        Ok(Model {
            extractor: FeatureExtractor(Mlp::glorot(&g_widths, true, rng)),
            classifier: LabelPredictor {
                net: Mlp::glorot(&[cfg.feature_dim, cfg.class_count], false, rng),
                temperature: cfg.temperature,
            },
            discriminator: DomainDiscriminator(Mlp::glorot(
                &[cfg.feature_dim, cfg.disc_hidden, 1],
                false,
                rng,
            )),
        })
    }

    pub fn config(&self) -> ModelConfig {
        let g = &self.extractor.0.layers;
        ModelConfig {
            input_dim: g[0].fan_in(),
            hidden_dims: g[..g.len() - 1].iter().map(LayerParams::fan_out).collect(),
            feature_dim: self.extractor.0.output_dim(),
            class_count: self.classifier.net.output_dim(),
            disc_hidden: self.discriminator.0.layers[0].fan_out(),
            temperature: self.classifier.temperature,
        }
    }

    pub fn forward_features(&self, x: &Matrix) -> Result<Matrix> {
        self.extractor.0.infer(x)
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        self.classifier.net.infer(features)
    }

    /// Temperature softmax of `F`'s logits.
    pub fn classify(&self, features: &Matrix, temperature: f64) -> Result<Matrix> {
        softmax_temperature(&self.logits(features)?, temperature)
    }

    /// Class decisions by `argmax` of the raw logits (temperature-free).
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.logits(&self.forward_features(x)?)?.argmax_rows())
    }

    /// Probability that each row came from the source domain.
    pub fn discriminate(&self, features: &Matrix) -> Result<Vec<f64>> {
        let s = self.discriminator.0.infer(features)?;
        Ok(s.as_slice().iter().map(|&v| sigmoid(v)).collect())
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.extractor
            .0
            .layers
            .iter()
            .chain(&self.classifier.net.layers)
            .chain(&self.discriminator.0.layers)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.extractor
            .0
            .layers
            .iter_mut()
            .chain(self.classifier.net.layers.iter_mut())
            .chain(self.discriminator.0.layers.iter_mut())
    }

    pub fn zero_grad(&mut self) {
        self.layers_mut().for_each(LayerParams::zero_grad);
    }

    pub fn reset_momentum(&mut self) {
        self.layers_mut().for_each(LayerParams::reset_momentum);
    }

    /// One momentum-SGD update of every layer. All gradients are checked for
    /// finiteness before any parameter moves.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if let Some(bad) = self
            .layers()
            .position(|p| !p.grad_weight.is_finite() || p.grad_bias.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::Divergence(format!("non-finite gradient in layer {bad}")));
        }
        for p in self.layers_mut() {
            sgd_momentum_step(p, lr)?;
        }
        Ok(())
    }

    /// All weights and biases flattened in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.layers() {
            out.extend_from_slice(p.weight.as_slice());
            out.extend_from_slice(&p.bias);
        }
        out
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.layers() {
            out.extend_from_slice(p.grad_weight.as_slice());
            out.extend_from_slice(&p.grad_bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.layers().map(LayerParams::param_count).sum();
        if values.len() != total {
            return Err(Error::dim("set_flat_params", total, values.len()));
        }
        let mut rest = values;
        for p in self.layers_mut() {
            let (w, tail) = rest.split_at(p.weight.as_slice().len());
            p.weight.as_mut_slice().copy_from_slice(w);
            let (b, tail) = tail.split_at(p.bias.len());
            p.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    /// Number of flattened parameters belonging to `G` (they come first).
    pub fn extractor_param_count(&self) -> usize {
        self.extractor.0.layers.iter().map(LayerParams::param_count).sum()
    }
}

/// Gradient-reversal boundary: the gradient handed back to `G` from the domain
/// loss is `−λ` times the gradient the discriminator computed.
pub fn grl_backward(grad_features: &Matrix, lambda: f64) -> Matrix {
    grad_features.scale(-lambda)
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

const SNAPSHOT_MAGIC: &[u8; 8] = b"PROTOSNP";
const SNAPSHOT_VERSION: u32 = 1;

/// Model parameters, optimiser buffers and the training step that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub step: u64,
    pub model: Model,
}

impl ModelSnapshot {
    pub fn new(step: u64, model: Model) -> Self {
        ModelSnapshot { step, model }
    }

    /// Layout: magic, version, step, temperature, layer counts of G/F/D,
    /// tensor count, `(rows, cols)` shape table, then every tensor as
    /// little-endian `f64` (per layer: weight, bias, weight momentum, bias
    /// momentum). Gradient buffers are transient and not stored.
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let nets = [
            &m.extractor.0.layers,
            &m.classifier.net.layers,
            &m.discriminator.0.layers,
        ];
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&m.classifier.temperature.to_le_bytes());
        for n in nets {
            out.extend_from_slice(&(n.len() as u32).to_le_bytes());
        }
        let layers: Vec<&LayerParams> = m.layers().collect();
        out.extend_from_slice(&((layers.len() * 4) as u32).to_le_bytes());
        for p in &layers {
            let (r, c) = p.weight.shape();
            for (rows, cols) in [(r, c), (1, c), (r, c), (1, c)] {
                out.extend_from_slice(&(rows as u32).to_le_bytes());
                out.extend_from_slice(&(cols as u32).to_le_bytes());
            }
        }
        for p in layers {
            for t in [
                p.weight.as_slice(),
                &p.bias,
                p.momentum_weight.as_slice(),
                &p.momentum_bias,
            ] {
                for v in t {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("not a snapshot file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported snapshot version {version}, expected {SNAPSHOT_VERSION}"
            )));
        }
        let step = r.u64()?;
        let temperature = r.f64()?;
        let counts = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        if counts[0] == 0 || counts[1] != 1 || counts[2] != 2 {
            return Err(Error::Snapshot(format!("unexpected layer counts {counts:?}")));
        }
        let n_tensors = r.u32()? as usize;
        let n_layers: usize = counts.iter().sum();
        if n_tensors != 4 * n_layers {
            return Err(Error::Snapshot(format!(
                "{n_tensors} tensors for {n_layers} layers"
            )));
        }
        let shapes: Vec<(usize, usize)> = (0..n_tensors)
            .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
            .collect::<Result<_>>()?;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let s = &shapes[4 * l..4 * l + 4];
            let (rows, cols) = s[0];
            if s[1] != (1, cols) || s[2] != (rows, cols) || s[3] != (1, cols) {
                return Err(Error::Snapshot(format!("inconsistent shapes for layer {l}: {s:?}")));
            }
            let weight = Matrix::from_vec(rows, cols, r.f64s(rows * cols)?)?;
            let bias = r.f64s(cols)?;
            let mut p = LayerParams::new(weight, bias)?;
            p.momentum_weight = Matrix::from_vec(rows, cols, r.f64s(rows * cols)?)?;
            p.momentum_bias = r.f64s(cols)?;
            layers.push(p);
        }
        if r.pos != bytes.len() {
            return Err(Error::Snapshot(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let d = layers.split_off(counts[0] + 1);
        let f = layers.split_off(counts[0]);
        let g = layers;
        let chained = |ls: &[LayerParams]| ls.windows(2).all(|w| w[0].fan_out() == w[1].fan_in());
        let feature_dim = g.last().map_or(0, LayerParams::fan_out);
        if !chained(&g) || !chained(&d) || f[0].fan_in() != feature_dim || d[0].fan_in() != feature_dim || d[1].fan_out() != 1 {
            return Err(Error::Snapshot("layer shapes do not chain".into()));
        }
        Ok(ModelSnapshot {
            step,
            model: Model {
                extractor: FeatureExtractor(Mlp { layers: g, final_relu: true }),
                classifier: LabelPredictor {
                    net: Mlp { layers: f, final_relu: false },
                    temperature,
                },
                discriminator: DomainDiscriminator(Mlp { layers: d, final_relu: false }),
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks the stored architecture against `expected`
    /// (temperature excluded, since variants may change it).
    pub fn load_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let snap = Self::load(path)?;
        let mut found = snap.model.config();
        found.temperature = expected.temperature;
        if &found != expected {
            return Err(Error::Snapshot(format!(
                "architecture mismatch: snapshot has {found:?}, expected {expected:?}"
            )));
        }
        Ok(snap)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Snapshot("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
