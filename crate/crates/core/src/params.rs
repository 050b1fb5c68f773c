//! Named parameter tensors for the encoder and every head.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};

/// A dense row-major tensor with a stable name.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { name: name.into(), shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_data(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::DimensionMismatch { expected: len, got: data.len() });
        }
        Ok(Tensor { name: name.into(), shape: shape.to_vec(), data })
    }

    /// Uniform entries in `[-scale, scale]`, drawn from a stream keyed by
    /// `(seed, name)` so the draw does not depend on which other tensors exist.
    pub fn uniform(name: impl Into<String>, shape: &[usize], scale: f64, seed: u64) -> Self {
        let mut t = Tensor::zeros(name, shape);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &t.name));
        for x in &mut t.data {
            *x = rng.random_range(-scale..=scale);
        }
        t
    }

    /// Glorot-uniform init for a `[rows, cols]` matrix.
    pub fn xavier(name: impl Into<String>, rows: usize, cols: usize, seed: u64) -> Self {
        let scale = crate::math::sqrt(6.0 / (rows + cols) as f64);
        Tensor::uniform(name, &[rows, cols], scale, seed)
    }

    pub fn zeros_like(&self) -> Tensor {
        Tensor::zeros(self.name.clone(), &self.shape)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// FNV-1a based stream key.
fn stream_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Identifies one trainable tensor of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Embedding,
    Position,
    Hidden,
    HiddenBias,
    Output,
    OutputBias,
    Projection,
    MeanHead,
    MeanBias,
    VarHead,
    VarBias,
    NullLabel,
    NullMention,
    LinearHead,
    LinearBias,
    CrfStart,
    CrfEnd,
    CrfTransitions,
    CdtRoles,
    PaBilinear,
}

impl ParamId {
    pub const ENCODER: [ParamId; 6] =
        [ParamId::Embedding, ParamId::Position, ParamId::Hidden, ParamId::HiddenBias, ParamId::Output, ParamId::OutputBias];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Embedding => "encoder.embedding",
            ParamId::Position => "encoder.position",
            ParamId::Hidden => "encoder.hidden.weight",
            ParamId::HiddenBias => "encoder.hidden.bias",
            ParamId::Output => "encoder.output.weight",
            ParamId::OutputBias => "encoder.output.bias",
            ParamId::Projection => "transfer.projection",
            ParamId::MeanHead => "transfer.mean.weight",
            ParamId::MeanBias => "transfer.mean.bias",
            ParamId::VarHead => "transfer.var.weight",
            ParamId::VarBias => "transfer.var.bias",
            ParamId::NullLabel => "proto.null.label",
            ParamId::NullMention => "proto.null.mention",
            ParamId::LinearHead => "linear.weight",
            ParamId::LinearBias => "linear.bias",
            ParamId::CrfStart => "crf.start",
            ParamId::CrfEnd => "crf.end",
            ParamId::CrfTransitions => "crf.transitions",
            ParamId::CdtRoles => "crf.collapsed",
            ParamId::PaBilinear => "crf.pa.bilinear",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        ALL_IDS.iter().copied().find(|id| id.name() == name)
    }

    pub fn is_encoder(self) -> bool {
        ParamId::ENCODER.contains(&self)
    }
}

const ALL_IDS: [ParamId; 20] = [
    ParamId::Embedding,
    ParamId::Position,
    ParamId::Hidden,
    ParamId::HiddenBias,
    ParamId::Output,
    ParamId::OutputBias,
    ParamId::Projection,
    ParamId::MeanHead,
    ParamId::MeanBias,
    ParamId::VarHead,
    ParamId::VarBias,
    ParamId::NullLabel,
    ParamId::NullMention,
    ParamId::LinearHead,
    ParamId::LinearBias,
    ParamId::CrfStart,
    ParamId::CrfEnd,
    ParamId::CrfTransitions,
    ParamId::CdtRoles,
    ParamId::PaBilinear,
];

/// Encoder plus the heads a method configuration needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub heads: BTreeMap<ParamId, Tensor>,
}

impl ModelParams {
    pub fn new(encoder: EncoderParams) -> Self {
        ModelParams { encoder, heads: BTreeMap::new() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        match id {
            ParamId::Embedding => Some(&self.encoder.embedding),
            ParamId::Position => Some(&self.encoder.position),
            ParamId::Hidden => Some(&self.encoder.hidden),
            ParamId::HiddenBias => Some(&self.encoder.hidden_bias),
            ParamId::Output => Some(&self.encoder.output),
            ParamId::OutputBias => Some(&self.encoder.output_bias),
            other => self.heads.get(&other),
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        match id {
            ParamId::Embedding => Some(&mut self.encoder.embedding),
            ParamId::Position => Some(&mut self.encoder.position),
            ParamId::Hidden => Some(&mut self.encoder.hidden),
            ParamId::HiddenBias => Some(&mut self.encoder.hidden_bias),
            ParamId::Output => Some(&mut self.encoder.output),
            ParamId::OutputBias => Some(&mut self.encoder.output_bias),
            other => self.heads.get_mut(&other),
        }
    }

    /// The tensor `id`, or an error naming it.
    pub fn tensor(&self, id: ParamId) -> Result<&Tensor> {
        self.get(id).ok_or_else(|| Error::InvalidConfig(alloc::format!("model has no `{}` tensor", id.name())))
    }

    pub fn insert(&mut self, id: ParamId, tensor: Tensor) {
        if let Some(t) = self.get_mut(id) {
            *t = tensor;
        } else {
            self.heads.insert(id, tensor);
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        ParamId::ENCODER.iter().copied().chain(self.heads.keys().copied()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.ids().into_iter().map(move |id| (id, self.get(id).expect("listed id")))
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            encoder: self.encoder.zeros_like(),
            heads: self.heads.iter().map(|(k, v)| (*k, v.zeros_like())).collect(),
        }
    }

    pub fn n_values(&self) -> usize {
        self.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|(_, t)| t.is_finite())
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    /// Flat `(name, shape, data)` view, encoder first.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.iter().map(|(id, t)| (id.name().to_string(), t.shape.clone(), t.data.as_slice())).collect()
    }

    /// Rebuild from named tensors; shapes are validated against the
    /// encoder configuration.
    pub fn from_tensors(config: EncoderConfig, tensors: Vec<Tensor>) -> Result<ModelParams> {
        let mut encoder = EncoderParams::zeros(config)?;
        let mut heads = BTreeMap::new();
        let mut seen_encoder = 0;
        for t in tensors {
            let id = ParamId::from_name(&t.name)
                .ok_or_else(|| Error::Parse(alloc::format!("unknown tensor `{}`", t.name)))?;
            if id.is_encoder() {
                let slot = match id {
                    ParamId::Embedding => &mut encoder.embedding,
                    ParamId::Position => &mut encoder.position,
                    ParamId::Hidden => &mut encoder.hidden,
                    ParamId::HiddenBias => &mut encoder.hidden_bias,
                    ParamId::Output => &mut encoder.output,
                    _ => &mut encoder.output_bias,
                };
                if slot.shape != t.shape {
                    return Err(Error::Parse(alloc::format!("tensor `{}` has shape {:?}, expected {:?}", t.name, t.shape, slot.shape)));
                }
                *slot = t;
                seen_encoder += 1;
            } else {
                heads.insert(id, t);
            }
        }
        if seen_encoder != ParamId::ENCODER.len() {
            return Err(Error::Parse("checkpoint is missing encoder tensors".into()));
        }
        Ok(ModelParams { encoder, heads })
    }
}
