//! Losses, optimization and experiment runs.

pub mod gradcheck;
pub mod infer;
pub mod losses;
pub mod model;
pub mod optim;
pub mod run;

pub use infer::{build_memory, GroupSet, TrainedModel};
pub use losses::{
    ce_loss, default_episode_shape, episode_split, fused_loss, inbatch_cl_logits, moco_cl_logits, ClQueue, EpisodeSplit,
    MentionRef, DEFAULT_QUEUE_CAPACITY,
};
pub use model::{build_loss, init_model, BatchLoss, BatchSpec, BranchKind, BranchPlan, ClResolved, LossContext, PreparedData, StepInputs};
pub use optim::{clip_grad_norm, AdamW, OptimizerSpec, DEFAULT_LR_GRID};
pub use run::{run_class_transfer, run_low_resource, train, train_step, RunOutcome, TrainState};

use alloc::vec::Vec;

use crate::corpus::DEFAULT_MAX_SPAN_LEN;
use crate::encoder::{EncoderConfig, DEFAULT_MOMENTUM};
use crate::error::{Error, Result};
use crate::method::MethodConfig;

/// Train-set sentence count from which contrastive keys come from the
/// momentum queue instead of the batch.
pub const CL_THRESHOLD: usize = 128;
/// N.A. contrastive units kept per trigger unit in a batch.
pub const NEG_RATIO: usize = 3;

/// Everything about a run except the method and the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub encoder: EncoderConfig,
    pub lr_grid: Vec<f64>,
    /// Overrides the per-method step count.
    pub steps: Option<usize>,
    /// Step count of the source stage of class transfer.
    pub source_steps: Option<usize>,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub queue_capacity: usize,
    pub momentum: f64,
    pub cl_threshold: usize,
    pub neg_ratio: usize,
    /// Support/query sizes; derived from the shot count when unset.
    pub episode: Option<(usize, usize)>,
    pub max_span_len: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            encoder: EncoderConfig::default(),
            lr_grid: DEFAULT_LR_GRID.to_vec(),
            steps: None,
            source_steps: None,
            warmup_fraction: 0.1,
            weight_decay: 1e-5,
            clip_norm: 1.0,
            batch_size: 128,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            momentum: DEFAULT_MOMENTUM,
            cl_threshold: CL_THRESHOLD,
            neg_ratio: NEG_RATIO,
            episode: None,
            max_span_len: DEFAULT_MAX_SPAN_LEN,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.lr_grid.is_empty() {
            return Err(Error::InvalidConfig("empty lr grid".into()));
        }
        for &lr in &self.lr_grid {
            self.optimizer(lr, 1).validate()?;
        }
        if self.steps == Some(0) || self.source_steps == Some(0) {
            return Err(Error::InvalidConfig("step counts must be positive".into()));
        }
        if self.queue_capacity == 0 {
            return Err(Error::InvalidConfig("queue capacity must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1]".into()));
        }
        if matches!(self.episode, Some((0, _))) {
            return Err(Error::InvalidConfig("support size must be positive".into()));
        }
        Ok(())
    }

    /// 200 steps for scaled distances, 500 otherwise, unless overridden.
    pub fn steps_for(&self, method: &MethodConfig) -> usize {
        self.steps.unwrap_or(if method.is_scaled() { 200 } else { 500 })
    }

    pub fn optimizer(&self, lr: f64, total_steps: usize) -> OptimizerSpec {
        OptimizerSpec {
            lr,
            weight_decay: self.weight_decay,
            warmup_fraction: self.warmup_fraction,
            total_steps,
            batch_size: self.batch_size,
            clip_norm: self.clip_norm,
        }
    }
}
