//! Weakly-supervised city projectors: a fully connected network over x-vectors
//! and a 1-D CNN over prosodic contours, both ending in a 5-way softmax whose
//! output is used as a compact dialect feature.

mod layers;
mod train;

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::City;
use crate::error::{Error, Result};
use crate::seed;

pub use layers::{Layer, Tensor};
pub use train::{train_projector, EpochStats, Optimizer, Sample, TrainConfig, TrainHistory};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const N_CITIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectorKind {
    #[serde(rename = "FC")]
    Fc,
    #[serde(rename = "CNN")]
    Cnn,
}

/// Weight initialization: uniform(-s, s) with `s = scale / sqrt(fan_in)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub seed: u64,
    pub scale: f64,
}

impl InitSpec {
    pub fn zeros() -> Self {
        InitSpec {
            seed: 0,
            scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for FcSpec {
    fn default() -> Self {
        FcSpec {
            input_dim: crate::corpus::XVECTOR_DIM,
            hidden: vec![256, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnSpec {
    pub in_channels: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

impl Default for CnnSpec {
    fn default() -> Self {
        CnnSpec {
            in_channels: 4,
            conv1_channels: 16,
            conv2_channels: 32,
            kernel: 5,
            pool: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorModel {
    pub kind: ProjectorKind,
    pub layers: Vec<Layer>,
    pub city_order: [City; N_CITIES],
}

fn init_values(n: usize, fan_in: usize, init: InitSpec, rng: &mut impl Rng) -> Vec<f64> {
    let s = init.scale / (fan_in as f64).sqrt();
    if s == 0.0 {
        return vec![0.0; n];
    }
    (0..n).map(|_| rng.gen_range(-s..s)).collect()
}

fn linear(inputs: usize, outputs: usize, init: InitSpec, rng: &mut impl Rng) -> Layer {
    Layer::Linear {
        inputs,
        outputs,
        weight: init_values(inputs * outputs, inputs, init, rng),
        bias: init_values(outputs, inputs, init, rng),
    }
}

fn conv(
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    init: InitSpec,
    rng: &mut impl Rng,
) -> Layer {
    let fan_in = in_channels * kernel;
    Layer::Conv1d {
        in_channels,
        out_channels,
        kernel,
        weight: init_values(out_channels * in_channels * kernel, fan_in, init, rng),
        bias: init_values(out_channels, fan_in, init, rng),
    }
}

/// `input -> hidden... -> 5` with ReLU between layers.
pub fn build_fc(spec: &FcSpec, init: InitSpec) -> ProjectorModel {
    let mut rng = seed::rng(init.seed, "projector/fc/init");
    let mut layers = Vec::new();
    let mut width = spec.input_dim;
    for &h in &spec.hidden {
        layers.push(linear(width, h, init, &mut rng));
        layers.push(Layer::Relu);
        width = h;
    }
    layers.push(linear(width, N_CITIES, init, &mut rng));
    ProjectorModel {
        kind: ProjectorKind::Fc,
        layers,
        city_order: City::ALL,
    }
}

/// conv -> ReLU -> maxpool -> conv -> ReLU -> global average -> linear(5).
pub fn build_cnn(spec: &CnnSpec, init: InitSpec) -> ProjectorModel {
    let mut rng = seed::rng(init.seed, "projector/cnn/init");
    let layers = vec![
        conv(
            spec.in_channels,
            spec.conv1_channels,
            spec.kernel,
            init,
            &mut rng,
        ),
        Layer::Relu,
        Layer::MaxPool1d { size: spec.pool },
        conv(
            spec.conv1_channels,
            spec.conv2_channels,
            spec.kernel,
            init,
            &mut rng,
        ),
        Layer::Relu,
        Layer::GlobalAvgPool,
        linear(spec.conv2_channels, N_CITIES, init, &mut rng),
    ];
    ProjectorModel {
        kind: ProjectorKind::Cnn,
        layers,
        city_order: City::ALL,
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl ProjectorModel {
    pub fn input_channels(&self) -> usize {
        match self.layers.first() {
            Some(Layer::Linear { inputs, .. }) => *inputs,
            Some(Layer::Conv1d { in_channels, .. }) => *in_channels,
            _ => 0,
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(Layer::n_parameters).sum()
    }

    /// Shortest input length (frames) that survives every layer.
    pub fn min_input_len(&self) -> usize {
        (1..100_000)
            .find(|&len| self.output_len(len).is_some())
            .unwrap_or(usize::MAX)
    }

    fn output_len(&self, mut len: usize) -> Option<usize> {
        for layer in &self.layers {
            len = layer.output_len(len)?;
        }
        Some(len)
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = self.input_channels();
        match self.kind {
            ProjectorKind::Fc => {
                if x.channels * x.len != want {
                    return Err(Error::DimensionMismatch {
                        expected: want,
                        actual: x.channels * x.len,
                    });
                }
            }
            ProjectorKind::Cnn => {
                if x.channels != want {
                    return Err(Error::DimensionMismatch {
                        expected: want,
                        actual: x.channels,
                    });
                }
                let min_frames = self.min_input_len();
                if x.len < min_frames {
                    return Err(Error::TooShort {
                        frames: x.len,
                        min_frames,
                    });
                }
            }
        }
        Ok(())
    }

    pub(crate) fn prepare(&self, x: &Tensor) -> Tensor {
        match self.kind {
            ProjectorKind::Fc => Tensor::vector(x.data.clone()),
            ProjectorKind::Cnn => x.clone(),
        }
    }

    /// Pre-softmax scores.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = self.prepare(x);
        for layer in &self.layers {
            a = layer.forward(&a);
        }
        Ok(a.data)
    }

    /// City probabilities in [`City::ALL`] order.
    pub fn project(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_parameters());
        for l in &self.layers {
            if let Some((w, b)) = l.params() {
                out.extend_from_slice(w);
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_parameters() {
            return Err(Error::DimensionMismatch {
                expected: self.n_parameters(),
                actual: values.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            if let Some((w, b)) = l.params_mut() {
                let (nw, nb) = (w.len(), b.len());
                w.copy_from_slice(&values[offset..offset + nw]);
                b.copy_from_slice(&values[offset + nw..offset + nw + nb]);
                offset += nw + nb;
            }
        }
        Ok(())
    }

    /// Mean cross-entropy over `batch` and its gradient, flattened in
    /// [`ProjectorModel::parameters`] order.
    pub fn loss_and_gradient(&self, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
        let mut grads: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| vec![0.0; l.n_parameters()])
            .collect();
        let mut loss = 0.0;
        for s in batch {
            self.check_input(&s.input)?;
            loss += self.accumulate(s, &mut grads);
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        let flat = grads.into_iter().flatten().map(|g| g * scale).collect();
        Ok((loss * scale, flat))
    }

    /// Forward + backward for one sample; adds parameter gradients into
    /// `grads` (one buffer per layer) and returns the sample's loss.
    pub(crate) fn accumulate(&self, s: &Sample, grads: &mut [Vec<f64>]) -> f64 {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(self.prepare(&s.input));
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("input present"));
            acts.push(next);
        }
        let p = softmax(&acts.last().expect("logits").data);
        let loss = -p[s.label].max(f64::MIN_POSITIVE).ln();
        let mut grad = p;
        grad[s.label] -= 1.0;
        let mut dy = Tensor {
            channels: grad.len(),
            len: 1,
            data: grad,
        };
        for (i, layer) in self.layers.iter().enumerate().rev() {
            dy = layer.backward(&acts[i], &dy, &mut grads[i]);
        }
        loss
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            kind: self.kind,
            city_order: self.city_order.to_vec(),
            layers: self.layers.iter().map(LayerFile::from).collect(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Weights come back rounded to f32.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported projector version {}",
                file.version
            )));
        }
        let city_order: [City; N_CITIES] = file
            .city_order
            .try_into()
            .map_err(|_| Error::Serde("city_order must list 5 cities".into()))?;
        let layers = file
            .layers
            .into_iter()
            .map(Layer::try_from)
            .collect::<Result<Vec<_>>>()?;
        Ok(ProjectorModel {
            kind: file.kind,
            layers,
            city_order,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    kind: ProjectorKind,
    city_order: Vec<City>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LayerFile {
    Linear {
        inputs: usize,
        outputs: usize,
        weight: String,
        bias: String,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        weight: String,
        bias: String,
    },
    Relu,
    MaxPool1d {
        size: usize,
    },
    GlobalAvgPool,
}

fn encode_blob(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_blob(s: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = B64.decode(s).map_err(|e| Error::Serde(e.to_string()))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Serde(format!(
            "weight blob has {} bytes, expected {}",
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

impl From<&Layer> for LayerFile {
    fn from(l: &Layer) -> Self {
        match l {
            Layer::Linear {
                inputs,
                outputs,
                weight,
                bias,
            } => LayerFile::Linear {
                inputs: *inputs,
                outputs: *outputs,
                weight: encode_blob(weight),
                bias: encode_blob(bias),
            },
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
                weight,
                bias,
            } => LayerFile::Conv1d {
                in_channels: *in_channels,
                out_channels: *out_channels,
                kernel: *kernel,
                weight: encode_blob(weight),
                bias: encode_blob(bias),
            },
            Layer::Relu => LayerFile::Relu,
            Layer::MaxPool1d { size } => LayerFile::MaxPool1d { size: *size },
            Layer::GlobalAvgPool => LayerFile::GlobalAvgPool,
        }
    }
}

impl TryFrom<LayerFile> for Layer {
    type Error = Error;

    fn try_from(f: LayerFile) -> Result<Self> {
        Ok(match f {
            LayerFile::Linear {
                inputs,
                outputs,
                weight,
                bias,
            } => Layer::Linear {
                inputs,
                outputs,
                weight: decode_blob(&weight, inputs * outputs)?,
                bias: decode_blob(&bias, outputs)?,
            },
            LayerFile::Conv1d {
                in_channels,
                out_channels,
                kernel,
                weight,
                bias,
            } => Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
                weight: decode_blob(&weight, out_channels * in_channels * kernel)?,
                bias: decode_blob(&bias, out_channels)?,
            },
            LayerFile::Relu => Layer::Relu,
            LayerFile::MaxPool1d { size } => {
                if size == 0 {
                    return Err(Error::Serde("max-pool size must be positive".into()));
                }
                Layer::MaxPool1d { size }
            }
            LayerFile::GlobalAvgPool => Layer::GlobalAvgPool,
        })
    }
}

#[cfg(test)]
mod tests;
