//! Training loop, the low-resource run and the class-transfer pipeline.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Mention};
use crate::encoder::{self, momentum_update, EncoderParams, MomentumEncoder};
use crate::error::{Error, Result};
use crate::eval::{micro_f1, Prf, SeedScore};
use crate::math;
use crate::method::MethodConfig;
use crate::params::ModelParams;
use crate::proto;
use crate::sampler::{assert_labels_within, TransferSplit};
use crate::tape::Tape;

use super::infer::{build_memory, TrainedModel};
use super::losses::{default_episode_shape, ClQueue};
use super::model::{build_loss, init_model, BatchSpec, BranchPlan, LossContext, PreparedData, StepInputs};
use super::optim::{clip_grad_norm, AdamW, OptimizerSpec};
use super::TrainOptions;

/// Salt separating the batch-sampling stream from parameter init.
const STEP_STREAM: u64 = 0x5851_f42d_4c95_7f2d;

/// Mutable training state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: AdamW,
    pub queue: Option<ClQueue>,
    pub momentum: Option<MomentumEncoder>,
}

impl TrainState {
    pub fn new(params: ModelParams, plan: &BranchPlan, options: &TrainOptions) -> Result<Self> {
        let (queue, momentum) = if plan.uses_queue() {
            (Some(ClQueue::new(options.queue_capacity)?), Some(MomentumEncoder::new(&params.encoder, options.momentum)?))
        } else {
            (None, None)
        };
        Ok(TrainState { optimizer: AdamW::new(&params), params, queue, momentum })
    }
}

/// One optimizer step. Returns the loss before the update, or `None` when
/// the batch produced no loss term (the state is left untouched then).
pub fn train_step(
    state: &mut TrainState,
    method: &MethodConfig,
    plan: &BranchPlan,
    data: &PreparedData,
    inputs: &StepInputs,
    opt: &OptimizerSpec,
    step: usize,
) -> Result<Option<f64>> {
    let mut grads = state.params.zeros_like();
    let loss = {
        let ctx = LossContext { method, plan, data, queue: state.queue.as_ref() };
        let mut tape = Tape::new(&state.params);
        let Some(batch) = build_loss(&mut tape, &ctx, inputs) else { return Ok(None) };
        let loss = tape.scalar(batch.total);
        if !loss.is_finite() {
            let detail = batch
                .branches
                .iter()
                .map(|(k, v)| format!("{k:?}={}", tape.scalar(*v)))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(Error::NonFinite { step, detail });
        }
        tape.backward(batch.total, &mut grads);
        loss
    };
    if !grads.is_finite() {
        return Err(Error::NonFinite { step, detail: String::from("gradient") });
    }
    clip_grad_norm(&mut grads, opt.clip_norm);
    state.optimizer.step(&mut state.params, &grads, opt.lr_at(step), opt.weight_decay);
    if let (Some(queue), Some(momentum)) = (state.queue.as_mut(), state.momentum.as_mut()) {
        momentum_update(&state.params.encoder, momentum)?;
        enqueue_keys(queue, &momentum.shadow, &state.params, method, data, inputs)?;
    }
    Ok(Some(loss))
}

/// Push the batch's contrastive units, encoded by the shadow encoder and
/// transferred with the current heads.
fn enqueue_keys(
    queue: &mut ClQueue,
    shadow: &EncoderParams,
    params: &ModelParams,
    method: &MethodConfig,
    data: &PreparedData,
    inputs: &StepInputs,
) -> Result<()> {
    let dim = shadow.dim();
    let mut encoded: Vec<Option<Vec<f64>>> = alloc::vec![None; inputs.sentences.len()];
    for &(p, u) in &inputs.cl_units {
        let s = inputs.sentences[p];
        let enc = encoded[p].get_or_insert_with(|| encoder::forward(&data.ids[s], shadow).0);
        let unit = data.units[s][u];
        let rows: Vec<&[f64]> = (unit.start..unit.end).map(|i| &enc[i * dim..(i + 1) * dim]).collect();
        let key = proto::transfer(&math::mean_of(&rows), method.transfer, params)?.flat();
        queue.push(key, unit.label);
    }
    Ok(())
}

fn min_type_count(train: &Dataset) -> usize {
    train.type_counts().into_iter().min().unwrap_or(0)
}

/// Train `method` on `train` for `steps` steps at `lr`. With
/// `init_encoder`, the encoder starts from those weights.
pub fn train(
    method: &MethodConfig,
    train: &Dataset,
    options: &TrainOptions,
    lr: f64,
    steps: usize,
    seed: u64,
    init_encoder: Option<&EncoderParams>,
) -> Result<TrainedModel> {
    method.validate()?;
    options.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let plan = BranchPlan::new(method, train.len(), options.cl_threshold);
    let mut params = init_model(method, train.schema().len(), options.encoder, seed)?;
    if let Some(enc) = init_encoder {
        if enc.config != options.encoder {
            return Err(Error::InvalidConfig("initial encoder has a different configuration".into()));
        }
        params.encoder = enc.clone();
    }
    let data = PreparedData::new(train, &options.encoder, options.max_span_len)?;
    let opt = options.optimizer(lr, steps);
    opt.validate()?;
    let spec = BatchSpec {
        batch_size: options.batch_size,
        episode: options.episode.unwrap_or_else(|| default_episode_shape(min_type_count(train))),
        neg_ratio: options.neg_ratio,
    };
    let mut state = TrainState::new(params, &plan, options)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ STEP_STREAM);
    for step in 0..steps {
        let inputs = StepInputs::sample(train, &data, &plan, &spec, &mut rng)?;
        train_step(&mut state, method, &plan, &data, &inputs, &opt, step)?;
    }
    let memory = build_memory(method, &plan, &state.params, &data)?;
    Ok(TrainedModel {
        method: *method,
        plan,
        params: state.params,
        schema: train.schema().clone(),
        paradigm: train.paradigm(),
        max_span_len: options.max_span_len,
        memory,
    })
}

fn gold_of(dataset: &Dataset) -> Vec<(String, Vec<Mention>)> {
    dataset.sentences().iter().map(|s| (String::from(s.id()), s.mentions().to_vec())).collect()
}

/// Micro P/R/F1 of `model` on `dataset`.
pub fn evaluate(model: &TrainedModel, dataset: &Dataset) -> Result<Prf> {
    micro_f1(&model.predict(dataset)?, &gold_of(dataset))
}

/// A finished run: the selected model and its test score.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: TrainedModel,
    pub lr: f64,
    pub dev_f1: Option<f64>,
    pub score: SeedScore,
}

/// Train once per learning rate of the grid, keep the model with the best
/// dev F1 (the first on ties) and score it on `test`. An empty dev set
/// skips the sweep and uses the first rate.
pub fn run_low_resource(
    method: &MethodConfig,
    train_set: &Dataset,
    dev: &Dataset,
    test: &Dataset,
    options: &TrainOptions,
    seed: u64,
    init_encoder: Option<&EncoderParams>,
) -> Result<RunOutcome> {
    options.validate()?;
    let steps = options.steps_for(method);
    let grid: &[f64] = if dev.is_empty() { &options.lr_grid[..1] } else { &options.lr_grid };
    let mut best: Option<(TrainedModel, f64, Option<f64>)> = None;
    for &lr in grid {
        let model = train(method, train_set, options, lr, steps, seed, init_encoder)?;
        let dev_f1 = if dev.is_empty() { None } else { Some(evaluate(&model, dev)?.f1) };
        let better = match (&best, dev_f1) {
            (None, _) => true,
            (Some((_, _, Some(b))), Some(f)) => f > *b,
            _ => false,
        };
        if better {
            best = Some((model, lr, dev_f1));
        }
    }
    let (model, lr, dev_f1) = best.expect("non-empty grid");
    let prf = evaluate(&model, test)?;
    Ok(RunOutcome { model, lr, dev_f1, score: SeedScore { seed, precision: prf.precision, recall: prf.recall, f1: prf.f1 } })
}

/// Train a source model on the source split, copy its encoder into a
/// fresh target model and run the target as in [`run_low_resource`].
/// `source = None` skips the source stage.
#[allow(clippy::too_many_arguments)]
pub fn run_class_transfer(
    source: Option<&MethodConfig>,
    target: &MethodConfig,
    split: &TransferSplit,
    target_train: &Dataset,
    target_dev: &Dataset,
    target_test: &Dataset,
    options: &TrainOptions,
    seed: u64,
) -> Result<RunOutcome> {
    split.check_leakage()?;
    let allowed: BTreeSet<&str> = split.target_types.iter().map(String::as_str).collect();
    for d in [target_train, target_dev, target_test] {
        assert_labels_within(d, &allowed)?;
        if d.schema().types() != split.target_types.as_slice() {
            return Err(Error::Leakage("target data schema differs from the target types".into()));
        }
    }
    let source_ids: BTreeSet<&str> = split.source_data.sentences().iter().map(|s| s.id()).collect();
    for d in [target_train, target_dev, target_test] {
        if let Some(s) = d.sentences().iter().find(|s| source_ids.contains(s.id())) {
            return Err(Error::Leakage(format!("sentence `{}` is in the source data", s.id())));
        }
    }
    let encoder = match source {
        None => None,
        Some(m) => {
            let lr = options.lr_grid[0];
            let steps = options.source_steps.unwrap_or_else(|| options.steps_for(m));
            Some(train(m, &split.source_data, options, lr, steps, seed, None)?.params.encoder)
        }
    };
    run_low_resource(target, target_train, target_dev, target_test, options, seed, encoder.as_ref())
}
