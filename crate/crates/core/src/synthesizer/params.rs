use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DecoderType, ModelConfig, MEL_BINS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    #[serde(rename = "type")]
    pub decoder: DecoderType,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub lstmp_proj_dim: usize,
    pub prenet_dims: Vec<usize>,
    pub postnet_layers: usize,
    pub postnet_channels: usize,
    pub postnet_kernel: usize,
    pub ar_dropout: f64,
    pub speaker_conditioned: bool,
    pub embedding_dim: Option<usize>,
}

impl DecoderConfig {
    pub fn from_model_config(model: &ModelConfig, input_dim: usize) -> Self {
        Self {
            decoder: model.decoder,
            input_dim,
            hidden_dim: model.hidden_dim,
            lstmp_proj_dim: model.lstmp_proj_dim,
            prenet_dims: model.prenet_dims.clone(),
            postnet_layers: model.postnet_layers,
            postnet_channels: model.postnet_channels,
            postnet_kernel: model.postnet_kernel,
            ar_dropout: model.ar_dropout,
            speaker_conditioned: model.speaker_conditioned,
            embedding_dim: model.speaker_conditioned.then_some(model.embedding_dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.lstmp_proj_dim == 0 {
            return bad("input_dim, hidden_dim and lstmp_proj_dim must be positive".into());
        }
        if self.decoder.is_autoregressive() && !(0.0..1.0).contains(&self.ar_dropout) {
            return bad(format!("ar_dropout must be in [0, 1), got {}", self.ar_dropout));
        }
        if self.speaker_conditioned {
            if self.decoder != DecoderType::Taco2Ar {
                return bad(format!("speaker conditioning is only supported by taco2_ar, not {}", self.decoder));
            }
            if !matches!(self.embedding_dim, Some(d) if d > 0) {
                return bad("speaker-conditioned models need a positive embedding_dim".into());
            }
        }
        if self.decoder == DecoderType::Taco2Ar {
            if self.prenet_dims.is_empty() || self.prenet_dims.contains(&0) {
                return bad("taco2_ar needs non-empty, positive prenet_dims".into());
            }
            if self.postnet_layers > 0 && (self.postnet_kernel % 2 == 0 || self.postnet_channels == 0) {
                return bad("postnet_kernel must be odd and postnet_channels positive".into());
            }
        }
        Ok(())
    }

    pub fn has_postnet(&self) -> bool {
        self.decoder == DecoderType::Taco2Ar && self.postnet_layers > 0
    }

    /// Width of the input to the first recurrent layer.
    pub fn first_layer_input_width(&self) -> usize {
        match self.decoder {
            DecoderType::Simple => self.hidden_dim,
            DecoderType::SimpleAr => self.hidden_dim + MEL_BINS,
            DecoderType::Taco2Ar => {
                self.prenet_dims.last().copied().unwrap_or(0)
                    + self.input_dim
                    + if self.speaker_conditioned { self.embedding_dim.unwrap_or(0) } else { 0 }
            }
        }
    }

    /// `(name, rows, cols)` of every learnable tensor, in a fixed order.
    pub(crate) fn tensor_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut shapes = Vec::new();
        let (h, p) = (self.hidden_dim, self.lstmp_proj_dim);
        match self.decoder {
            DecoderType::Simple | DecoderType::SimpleAr => {
                shapes.push(("ffn.weight".into(), self.input_dim, h));
                shapes.push(("ffn.bias".into(), 1, h));
                let mut input = self.first_layer_input_width();
                for layer in ["lstmp1", "lstmp2"] {
                    shapes.push((format!("{layer}.weight"), input + p, 4 * h));
                    shapes.push((format!("{layer}.bias"), 1, 4 * h));
                    shapes.push((format!("{layer}.proj"), h, p));
                    input = p;
                }
                shapes.push(("out.weight".into(), p, MEL_BINS));
                shapes.push(("out.bias".into(), 1, MEL_BINS));
            }
            DecoderType::Taco2Ar => {
                let mut input = MEL_BINS;
                for (i, &d) in self.prenet_dims.iter().enumerate() {
                    shapes.push((format!("prenet.{i}.weight"), input, d));
                    shapes.push((format!("prenet.{i}.bias"), 1, d));
                    input = d;
                }
                let mut input = self.first_layer_input_width();
                for layer in ["lstm1", "lstm2"] {
                    shapes.push((format!("{layer}.weight"), input + h, 4 * h));
                    shapes.push((format!("{layer}.bias"), 1, 4 * h));
                    input = h;
                }
                shapes.push(("out.weight".into(), h, MEL_BINS));
                shapes.push(("out.bias".into(), 1, MEL_BINS));
                let k = self.postnet_kernel;
                for i in 0..self.postnet_layers {
                    let cin = if i == 0 { MEL_BINS } else { self.postnet_channels };
                    let cout = if i + 1 == self.postnet_layers { MEL_BINS } else { self.postnet_channels };
                    shapes.push((format!("postnet.{i}.weight"), k * cin, cout));
                    shapes.push((format!("postnet.{i}.bias"), 1, cout));
                }
            }
        }
        shapes
    }
}

/// Per-dimension mean / standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

const STD_FLOOR: f64 = 1e-4;

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    /// Pooled statistics over all frames of all sequences.
    pub fn from_frames<'a>(seqs: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Option<Array1<f64>> = None;
        let mut sq: Option<Array1<f64>> = None;
        for s in seqs {
            let dim = s.ncols();
            let (sum, sq) = (
                sum.get_or_insert_with(|| Array1::zeros(dim)),
                sq.get_or_insert_with(|| Array1::zeros(dim)),
            );
            if sum.len() != dim {
                return Err(Error::DimMismatch { expected: sum.len(), found: dim });
            }
            for row in s.rows() {
                *sum += &row;
                *sq += &row.mapv(|v| v * v);
            }
            count += s.nrows();
        }
        let (Some(sum), Some(sq)) = (sum, sq) else {
            return Err(Error::EmptyInput("frames for statistics"));
        };
        if count == 0 {
            return Err(Error::EmptyInput("frames for statistics"));
        }
        let n = count as f64;
        let mean = sum / n;
        let var = sq / n - mean.mapv(|m| m * m);
        let std = var.mapv(|v| v.max(0.0).sqrt().max(STD_FLOOR));
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, frames: &Array2<f64>) -> Array2<f64> {
        (frames - &self.mean) / &self.std
    }

    pub fn denormalize(&self, frames: &Array2<f64>) -> Array2<f64> {
        frames * &self.std + &self.mean
    }
}

/// Learnable tensors of one decoder plus the non-learned input statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    config: DecoderConfig,
    seed: u64,
    tensors: Vec<(String, Array2<f64>)>,
    input_stats: FeatureStats,
}

impl ModelParameters {
    pub(crate) fn from_parts(
        config: DecoderConfig,
        seed: u64,
        tensors: Vec<(String, Array2<f64>)>,
        input_stats: FeatureStats,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = config.tensor_shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::Malformed(format!(
                "expected {} tensors for this config, found {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, r, c), (tname, t)) in shapes.iter().zip(&tensors) {
            if name != tname || t.dim() != (*r, *c) {
                return Err(Error::Malformed(format!(
                    "tensor `{tname}` {:?} does not match expected `{name}` ({r}, {c})",
                    t.dim()
                )));
            }
        }
        if input_stats.dim() != config.input_dim {
            return Err(Error::DimMismatch { expected: config.input_dim, found: input_stats.dim() });
        }
        if tensors.iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { config, seed, tensors, input_stats })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tensors(&self) -> &[(String, Array2<f64>)] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [(String, Array2<f64>)] {
        &mut self.tensors
    }

    /// Overwrites one scalar of tensor `tensor` (flat row-major `index`).
    pub fn set_element(&mut self, tensor: usize, index: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("model parameters"));
        }
        let t = &mut self
            .tensors
            .get_mut(tensor)
            .ok_or_else(|| Error::InvalidInput(format!("no tensor {tensor}")))?
            .1;
        let slot = t
            .as_slice_mut()
            .and_then(|s| s.get_mut(index))
            .ok_or_else(|| Error::InvalidInput(format!("index {index} out of range")))?;
        *slot = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn input_stats(&self) -> &FeatureStats {
        &self.input_stats
    }

    pub fn set_input_stats(&mut self, stats: FeatureStats) -> Result<()> {
        if stats.dim() != self.config.input_dim {
            return Err(Error::DimMismatch { expected: self.config.input_dim, found: stats.dim() });
        }
        self.input_stats = stats;
        Ok(())
    }
}

/// Deterministic initialization: every tensor uniform in `±1/sqrt(fan_in)`
/// (biases use the fan-in of their layer), LSTM forget-gate biases offset by 1.
pub fn build_decoder(config: &DecoderConfig, seed: u64) -> Result<ModelParameters> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_dim;
    let mut fan_in = 1;
    let tensors = config
        .tensor_shapes()
        .into_iter()
        .map(|(name, rows, cols)| {
            if name.ends_with(".weight") {
                fan_in = rows;
            }
            let fan = if name.ends_with(".bias") { fan_in } else { rows };
            let bound = 1.0 / (fan as f64).sqrt();
            let mut t = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound));
            if name.starts_with("lstm") && name.ends_with(".bias") {
                // gate order i, f, g, o
                t.slice_mut(ndarray::s![.., h..2 * h]).mapv_inplace(|v| v + 1.0);
            }
            (name, t)
        })
        .collect();
    ModelParameters::from_parts(config.clone(), seed, tensors, FeatureStats::identity(config.input_dim))
}
