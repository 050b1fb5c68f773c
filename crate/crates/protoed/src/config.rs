//! TOML training configuration.
//!
//! ```toml
//! method = "unified-baseline"        # preset name or "source=..,distance=..,..."
//! seed = 0
//! paradigm = "sequence"              # or "span"
//!
//! [optimizer]
//! lr_grid = [1e-5, 2e-5, 5e-5, 1e-4]
//! steps = 200                        # default: 200 for scaled distances, else 500
//!
//! [sampling]
//! k_train = 5
//! k_dev = 2
//! ```

use std::fs;
use std::path::Path;

use protoed_core::corpus::Paradigm;
use protoed_core::encoder::{EncoderConfig, DEFAULT_MOMENTUM};
use protoed_core::method::MethodConfig;
use protoed_core::training::{TrainOptions, CL_THRESHOLD, DEFAULT_LR_GRID, DEFAULT_QUEUE_CAPACITY, NEG_RATIO};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::BenchSpec;
use crate::checkpoint::parse_paradigm;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr_grid: Vec<f64>,
    pub steps: Option<usize>,
    pub source_steps: Option<usize>,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr_grid: DEFAULT_LR_GRID.to_vec(),
            steps: None,
            source_steps: None,
            warmup_fraction: 0.1,
            weight_decay: 1e-5,
            clip_norm: 1.0,
            batch_size: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub buckets: usize,
    pub dim: usize,
    pub hidden: usize,
    pub context: usize,
    pub window: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let c = EncoderConfig::default();
        EncoderSection { buckets: c.buckets, dim: c.dim, hidden: c.hidden, context: c.context, window: c.window }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub k_train: usize,
    pub k_dev: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { k_train: 5, k_dev: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: String,
    pub seed: u64,
    pub paradigm: String,
    pub queue_capacity: usize,
    pub momentum: f64,
    pub cl_threshold: usize,
    pub neg_ratio: usize,
    pub max_span_len: usize,
    pub episode: Option<[usize; 2]>,
    pub optimizer: OptimizerConfig,
    pub encoder: EncoderSection,
    pub sampling: SamplingConfig,
    pub benchmark: BenchSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: "unified-baseline".into(),
            seed: 0,
            paradigm: "sequence".into(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            momentum: DEFAULT_MOMENTUM,
            cl_threshold: CL_THRESHOLD,
            neg_ratio: NEG_RATIO,
            max_span_len: protoed_core::corpus::DEFAULT_MAX_SPAN_LEN,
            episode: None,
            optimizer: OptimizerConfig::default(),
            encoder: EncoderSection::default(),
            sampling: SamplingConfig::default(),
            benchmark: BenchSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.options()?;
        cfg.method()?;
        cfg.paradigm()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn method(&self) -> Result<MethodConfig> {
        Ok(self.method.parse::<MethodConfig>()?)
    }

    pub fn paradigm(&self) -> Result<Paradigm> {
        parse_paradigm(&self.paradigm).ok_or_else(|| Error::Config(format!("unknown paradigm `{}`", self.paradigm)))
    }

    pub fn options(&self) -> Result<TrainOptions> {
        let e = &self.encoder;
        let o = &self.optimizer;
        let options = TrainOptions {
            encoder: EncoderConfig { buckets: e.buckets, dim: e.dim, hidden: e.hidden, context: e.context, window: e.window },
            lr_grid: o.lr_grid.clone(),
            steps: o.steps,
            source_steps: o.source_steps,
            warmup_fraction: o.warmup_fraction,
            weight_decay: o.weight_decay,
            clip_norm: o.clip_norm,
            batch_size: o.batch_size,
            queue_capacity: self.queue_capacity,
            momentum: self.momentum,
            cl_threshold: self.cl_threshold,
            neg_ratio: self.neg_ratio,
            episode: self.episode.map(|[s, q]| (s, q)),
            max_span_len: self.max_span_len,
        };
        options.validate()?;
        Ok(options)
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
