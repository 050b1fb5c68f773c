//! Model layout, branch planning, batch preparation and the
//! differentiable fused loss.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{enumerate_spans, Dataset, Paradigm, TagSet};
use crate::crf;
use crate::encoder::{self, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::method::{Aggregation, ClMode, CrfKind, MethodConfig, Source};
use crate::params::{ModelParams, ParamId, Tensor};
use crate::proto::{SetAggregation, TransferKind};
use crate::tape::{Tape, Var};

use super::losses::{split_mentions, ClQueue};

/// Contrastive key source after resolving `auto`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClResolved {
    InBatch,
    Moco,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BranchKind {
    Label,
    Linear,
    Prototype,
    Contrastive,
    Crf,
}

/// Which loss branches a method trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchPlan {
    pub label: bool,
    pub linear: bool,
    /// Prototypical mention branch: aggregation and whether each type's
    /// set also holds its label embedding.
    pub prototype: Option<(SetAggregation, bool)>,
    pub contrastive: Option<ClResolved>,
    /// Branch whose logits feed the CRF.
    pub emission: Option<BranchKind>,
    pub crf: CrfKind,
}

impl BranchPlan {
    pub fn new(method: &MethodConfig, n_train_sentences: usize, cl_threshold: usize) -> Self {
        let contrastive = match method.cl {
            ClMode::None => None,
            ClMode::InBatch => Some(ClResolved::InBatch),
            ClMode::Moco => Some(ClResolved::Moco),
            ClMode::Auto if n_train_sentences < cl_threshold => Some(ClResolved::InBatch),
            ClMode::Auto => Some(ClResolved::Moco),
        };
        let set_agg = if method.aggregation == Aggregation::Score { SetAggregation::Score } else { SetAggregation::Feature };
        let mut plan = BranchPlan { label: false, linear: false, prototype: None, contrastive: None, emission: None, crf: method.crf };
        match method.source {
            Source::None => plan.linear = true,
            Source::Label => plan.label = true,
            Source::Mentions => match contrastive {
                Some(c) => plan.contrastive = Some(c),
                None => plan.prototype = Some((set_agg, false)),
            },
            // The mention branch of a loss-level fusion is the contrastive
            // one; without it only the label branch remains.
            Source::Both if method.aggregation == Aggregation::Loss => {
                plan.label = true;
                plan.contrastive = contrastive;
            }
            Source::Both => plan.prototype = Some((set_agg, true)),
        }
        if method.crf != CrfKind::None {
            plan.emission = Some(if plan.label {
                BranchKind::Label
            } else if plan.linear {
                BranchKind::Linear
            } else if plan.prototype.is_some() {
                BranchKind::Prototype
            } else {
                BranchKind::Contrastive
            });
        }
        plan
    }

    pub fn uses_queue(&self) -> bool {
        self.contrastive == Some(ClResolved::Moco)
    }
}

/// Width of the Gaussian heads for an encoder of width `m`.
pub fn gaussian_dim(m: usize) -> usize {
    (m / 2).max(1)
}

/// Width of the flat transferred vectors.
pub fn transfer_width(kind: TransferKind, m: usize) -> usize {
    match kind {
        TransferKind::Identity | TransferKind::Normalize => m,
        TransferKind::DownProject(n) | TransferKind::DownProjectNormalize(n) => n,
        TransferKind::Reparameterize => 2 * gaussian_dim(m),
    }
}

/// Scale of the uniform init of null prototypes.
pub const NULL_INIT_SCALE: f64 = 0.5;
/// Scale of the uniform init of the PA-CRF bilinear form.
pub const PA_INIT_SCALE: f64 = 0.1;

/// Fresh parameters for `method` over `n_types` event types. Each tensor
/// draws from its own `(seed, name)` stream.
pub fn init_model(method: &MethodConfig, n_types: usize, encoder: EncoderConfig, seed: u64) -> Result<ModelParams> {
    method.validate()?;
    let m = encoder.dim;
    let mut params = ModelParams::new(EncoderParams::init(encoder, seed)?);
    let mut put = |id: ParamId, t: Tensor| params.insert(id, t);
    match method.transfer {
        TransferKind::DownProject(n) | TransferKind::DownProjectNormalize(n) => {
            if n > m {
                return Err(Error::InvalidConfig(alloc::format!("projection width {n} exceeds encoder width {m}")));
            }
            put(ParamId::Projection, Tensor::xavier(ParamId::Projection.name(), n, m, seed));
        }
        TransferKind::Reparameterize => {
            let g = gaussian_dim(m);
            put(ParamId::MeanHead, Tensor::xavier(ParamId::MeanHead.name(), g, m, seed));
            put(ParamId::MeanBias, Tensor::zeros(ParamId::MeanBias.name(), &[g]));
            put(ParamId::VarHead, Tensor::xavier(ParamId::VarHead.name(), g, m, seed));
            put(ParamId::VarBias, Tensor::zeros(ParamId::VarBias.name(), &[g]));
        }
        TransferKind::Identity | TransferKind::Normalize => {}
    }
    if method.source.uses_label() {
        put(ParamId::NullLabel, Tensor::uniform(ParamId::NullLabel.name(), &[m], NULL_INIT_SCALE, seed));
    }
    if method.source.uses_mentions() {
        put(ParamId::NullMention, Tensor::uniform(ParamId::NullMention.name(), &[m], NULL_INIT_SCALE, seed));
    }
    if method.source == Source::None {
        put(ParamId::LinearHead, Tensor::xavier(ParamId::LinearHead.name(), n_types + 1, m, seed));
        put(ParamId::LinearBias, Tensor::zeros(ParamId::LinearBias.name(), &[n_types + 1]));
    }
    let n_tags = TagSet::new(n_types).len();
    match method.crf {
        CrfKind::None => {}
        CrfKind::Vanilla => {
            put(ParamId::CrfStart, Tensor::zeros(ParamId::CrfStart.name(), &[n_tags]));
            put(ParamId::CrfEnd, Tensor::zeros(ParamId::CrfEnd.name(), &[n_tags]));
            put(ParamId::CrfTransitions, Tensor::zeros(ParamId::CrfTransitions.name(), &[n_tags, n_tags]));
        }
        CrfKind::Cdt => put(ParamId::CdtRoles, Tensor::zeros(ParamId::CdtRoles.name(), &[crf::N_ROLES])),
        CrfKind::Pa => {
            let w = transfer_width(method.transfer, m);
            put(ParamId::PaBilinear, Tensor::uniform(ParamId::PaBilinear.name(), &[w, w], PA_INIT_SCALE, seed));
        }
    }
    Ok(params)
}

/// A scoring unit: a token (sequence labeling) or a candidate span (span
/// classification), with its gold label index (N.A. last).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Unit {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

/// Hashed ids, units and gold tags of a dataset, computed once.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub ids: Vec<Vec<usize>>,
    pub units: Vec<Vec<Unit>>,
    /// Gold BIO tag indices (sequence labeling only).
    pub tags: Vec<Vec<usize>>,
    /// Per sentence, per mention: the unit indices it covers.
    pub mention_units: Vec<Vec<Vec<usize>>>,
    pub label_ids: Vec<Vec<usize>>,
    pub n_types: usize,
    pub paradigm: Paradigm,
}

impl PreparedData {
    pub fn new(dataset: &Dataset, encoder: &EncoderConfig, max_span_len: usize) -> Result<Self> {
        let schema = dataset.schema();
        let n_types = schema.len();
        let tagset = TagSet::new(n_types);
        let paradigm = dataset.paradigm();
        let mut data = PreparedData {
            ids: Vec::with_capacity(dataset.len()),
            units: Vec::with_capacity(dataset.len()),
            tags: Vec::new(),
            mention_units: Vec::with_capacity(dataset.len()),
            label_ids: Vec::with_capacity(n_types),
            n_types,
            paradigm,
        };
        for ty in schema.types() {
            let toks = encoder::label_tokens(&schema.label_text(ty));
            if toks.is_empty() {
                return Err(Error::Empty("label text"));
            }
            data.label_ids.push(encoder::bucket_ids(&toks, encoder));
        }
        for s in dataset.sentences() {
            data.ids.push(encoder::bucket_ids(s.tokens(), encoder));
            let label_of = |m: &crate::corpus::Mention| schema.label_index(Some(&m.label));
            match paradigm {
                Paradigm::SequenceLabeling => {
                    let units = (0..s.len())
                        .map(|i| Ok(Unit { start: i, end: i + 1, label: schema.label_index(s.label_at(i))? }))
                        .collect::<Result<Vec<_>>>()?;
                    data.units.push(units);
                    data.mention_units.push(s.mentions().iter().map(|m| (m.start..m.end).collect()).collect());
                    data.tags.push(tagset.encode(s, schema)?);
                }
                Paradigm::SpanClassification => {
                    let spans = enumerate_spans(s.len(), max_span_len.max(1));
                    let mut units = Vec::with_capacity(spans.len());
                    let mut mention_units = vec![Vec::new(); s.mentions().len()];
                    for (u, &(a, b)) in spans.iter().enumerate() {
                        let hit = s.mentions().iter().position(|m| m.start == a && m.end == b);
                        let label = match hit {
                            Some(k) => {
                                mention_units[k].push(u);
                                label_of(&s.mentions()[k])?
                            }
                            None => n_types,
                        };
                        units.push(Unit { start: a, end: b, label });
                    }
                    data.units.push(units);
                    data.mention_units.push(mention_units);
                }
            }
        }
        Ok(data)
    }

    pub fn n_labels(&self) -> usize {
        self.n_types + 1
    }
}

/// Everything one step's loss reads, drawn before the tape is built so
/// the loss is a deterministic function of the parameters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepInputs {
    /// Dataset indices of the sentences encoded this step.
    pub sentences: Vec<usize>,
    /// `(position in sentences, unit)` scored by label / linear branches.
    pub label_units: Vec<(usize, usize)>,
    pub support: Vec<(usize, usize)>,
    pub query: Vec<(usize, usize)>,
    pub query_sentences: Vec<usize>,
    pub cl_units: Vec<(usize, usize)>,
    pub crf_sentences: Vec<usize>,
}

/// Sampling knobs for [`StepInputs::sample`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub episode: (usize, usize),
    /// N.A. contrastive units kept per trigger unit.
    pub neg_ratio: usize,
}

impl StepInputs {
    pub fn sample(
        dataset: &Dataset,
        data: &PreparedData,
        plan: &BranchPlan,
        spec: &BatchSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let n = dataset.len();
        if n == 0 {
            return Err(Error::Empty("training set"));
        }
        let sentences: Vec<usize> = if n <= spec.batch_size {
            (0..n).collect()
        } else {
            let mut pick = index::sample(rng, n, spec.batch_size).into_vec();
            pick.sort_unstable();
            pick
        };
        let pos_of: BTreeMap<usize, usize> = sentences.iter().enumerate().map(|(p, &s)| (s, p)).collect();
        let na = data.n_types;
        let mut inputs = StepInputs { sentences: sentences.clone(), ..Default::default() };
        if plan.label || plan.linear {
            for (p, &s) in sentences.iter().enumerate() {
                inputs.label_units.extend((0..data.units[s].len()).map(|u| (p, u)));
            }
        }
        if plan.prototype.is_some() {
            let (k_s, k_q) = spec.episode;
            let split = split_mentions(dataset, &sentences, k_s, k_q, rng, false)?;
            let units_of = |r: &super::losses::MentionRef| {
                let p = pos_of[&r.sentence];
                data.mention_units[r.sentence][r.mention].iter().map(move |&u| (p, u))
            };
            inputs.support = split.support.iter().flat_map(units_of).collect();
            let mut qs: Vec<usize> = split.query.iter().map(|r| pos_of[&r.sentence]).collect();
            qs.dedup();
            let mut query: Vec<(usize, usize)> = split.query.iter().flat_map(units_of).collect();
            for &p in &qs {
                let s = sentences[p];
                query.extend(data.units[s].iter().enumerate().filter(|(_, u)| u.label == na).map(|(u, _)| (p, u)));
            }
            query.sort_unstable();
            inputs.query = query;
            inputs.query_sentences = qs;
        }
        if plan.contrastive.is_some() {
            let mut triggers = Vec::new();
            let mut negatives = Vec::new();
            for (p, &s) in sentences.iter().enumerate() {
                for (u, unit) in data.units[s].iter().enumerate() {
                    if unit.label == na {
                        negatives.push((p, u));
                    } else {
                        triggers.push((p, u));
                    }
                }
            }
            let keep = (spec.neg_ratio * triggers.len()).min(negatives.len());
            negatives.shuffle(rng);
            negatives.truncate(keep);
            triggers.extend(negatives);
            triggers.sort_unstable();
            inputs.cl_units = triggers;
        }
        if plan.crf != CrfKind::None {
            inputs.crf_sentences = match plan.emission {
                Some(BranchKind::Prototype) => inputs.query_sentences.clone(),
                _ => (0..sentences.len()).collect(),
            };
        }
        Ok(inputs)
    }
}

/// What the loss builder needs besides the tape.
pub struct LossContext<'a> {
    pub method: &'a MethodConfig,
    pub plan: &'a BranchPlan,
    pub data: &'a PreparedData,
    pub queue: Option<&'a ClQueue>,
}

/// Fused loss and its per-branch terms.
pub struct BatchLoss {
    pub total: Var,
    pub branches: Vec<(BranchKind, Var)>,
}

/// Differentiable transfer of `x`.
pub fn transfer_var(tape: &mut Tape, x: Var, kind: TransferKind) -> Var {
    match kind {
        TransferKind::Identity => x,
        TransferKind::Normalize => tape.normalize(x),
        TransferKind::DownProject(_) => tape.affine(ParamId::Projection, None, x),
        TransferKind::DownProjectNormalize(_) => {
            let n = tape.normalize(x);
            tape.affine(ParamId::Projection, None, n)
        }
        TransferKind::Reparameterize => {
            let mean = tape.affine(ParamId::MeanHead, Some(ParamId::MeanBias), x);
            let raw = tape.affine(ParamId::VarHead, Some(ParamId::VarBias), x);
            let var = tape.softplus_eps(raw);
            tape.concat(&[mean, var])
        }
    }
}

fn mean_of_rows(tape: &mut Tape, enc: Var, start: usize, end: usize, dim: usize) -> Var {
    if end - start == 1 {
        return tape.row(enc, start, dim);
    }
    let rows: Vec<Var> = (start..end).map(|i| tape.row(enc, i, dim)).collect();
    tape.mean(&rows)
}

fn mean_term(tape: &mut Tape, terms: &[Var]) -> Option<Var> {
    if terms.is_empty() {
        return None;
    }
    let s = tape.sum(terms);
    Some(tape.scale(s, 1.0 / terms.len() as f64))
}

struct Builder<'t, 'p, 'c> {
    tape: &'t mut Tape<'p>,
    ctx: &'c LossContext<'c>,
    inputs: &'c StepInputs,
    dim: usize,
    enc: Vec<Var>,
    reps: BTreeMap<(usize, usize), Var>,
    transferred: BTreeMap<(usize, usize), Var>,
    /// Per-unit label logits of the emission branch.
    emissions: BTreeMap<(usize, usize), Var>,
}

impl Builder<'_, '_, '_> {
    fn rep(&mut self, p: usize, u: usize) -> Var {
        if let Some(&v) = self.reps.get(&(p, u)) {
            return v;
        }
        let unit = self.ctx.data.units[self.inputs.sentences[p]][u];
        let v = mean_of_rows(self.tape, self.enc[p], unit.start, unit.end, self.dim);
        self.reps.insert((p, u), v);
        v
    }

    fn tr(&mut self, p: usize, u: usize) -> Var {
        if let Some(&v) = self.transferred.get(&(p, u)) {
            return v;
        }
        let r = self.rep(p, u);
        let v = transfer_var(self.tape, r, self.ctx.method.transfer);
        self.transferred.insert((p, u), v);
        v
    }

    fn gold(&self, p: usize, u: usize) -> usize {
        self.ctx.data.units[self.inputs.sentences[p]][u].label
    }

    /// Transferred label embeddings per type.
    fn label_prototypes(&mut self) -> Vec<Var> {
        let ids = self.ctx.data.label_ids.clone();
        ids.iter()
            .map(|ids| {
                let e = self.tape.encode(ids);
                let h = mean_of_rows(self.tape, e, 0, ids.len(), self.dim);
                transfer_var(self.tape, h, self.ctx.method.transfer)
            })
            .collect()
    }

    fn null_prototype(&mut self, id: ParamId) -> Var {
        let v = self.tape.param(id);
        transfer_var(self.tape, v, self.ctx.method.transfer)
    }

    fn score_units(&mut self, units: &[(usize, usize)], groups: &[Vec<Var>], emit: bool) -> Vec<Var> {
        let kind = self.ctx.method.distance;
        let mut terms = Vec::new();
        for &(p, u) in units {
            let gold = self.gold(p, u);
            let q = self.tr(p, u);
            let logits = self.tape.group_logits(q, groups.to_vec(), kind);
            if emit {
                self.emissions.insert((p, u), logits);
            }
            if !groups[gold].is_empty() {
                terms.push(self.tape.nll(logits, gold));
            }
        }
        terms
    }

    fn label_branch(&mut self) -> (Option<Var>, Vec<Var>) {
        let mut protos = self.label_prototypes();
        protos.push(self.null_prototype(ParamId::NullLabel));
        let groups: Vec<Vec<Var>> = protos.iter().map(|&p| vec![p]).collect();
        let emit = self.ctx.plan.emission == Some(BranchKind::Label);
        let terms = self.score_units(&self.inputs.label_units.clone(), &groups, emit);
        (mean_term(self.tape, &terms), protos)
    }

    fn linear_branch(&mut self) -> Option<Var> {
        let emit = self.ctx.plan.emission == Some(BranchKind::Linear);
        let mut terms = Vec::new();
        for &(p, u) in &self.inputs.label_units.clone() {
            let r = self.rep(p, u);
            let logits = self.tape.affine(ParamId::LinearHead, Some(ParamId::LinearBias), r);
            if emit {
                self.emissions.insert((p, u), logits);
            }
            terms.push(self.tape.nll(logits, self.gold(p, u)));
        }
        mean_term(self.tape, &terms)
    }

    /// Returns the loss and, for feature aggregation, one prototype per
    /// label (`None` when some type had no support this step).
    fn prototype_branch(&mut self, agg: SetAggregation, union_label: bool) -> (Option<Var>, Option<Vec<Var>>) {
        let n_types = self.ctx.data.n_types;
        let mut sets: Vec<Vec<Var>> = vec![Vec::new(); n_types];
        for &(p, u) in &self.inputs.support.clone() {
            let t = self.gold(p, u);
            let v = self.tr(p, u);
            sets[t].push(v);
        }
        if union_label {
            for (t, l) in self.label_prototypes().into_iter().enumerate() {
                sets[t].push(l);
            }
        }
        let mut groups: Vec<Vec<Var>> = match agg {
            SetAggregation::Score => sets,
            SetAggregation::Feature => sets
                .into_iter()
                .map(|s| match s.len() {
                    0 => Vec::new(),
                    1 => s,
                    _ => vec![self.tape.mean(&s)],
                })
                .collect(),
        };
        groups.push(vec![self.null_prototype(ParamId::NullMention)]);
        let emit = self.ctx.plan.emission == Some(BranchKind::Prototype);
        let terms = self.score_units(&self.inputs.query.clone(), &groups, emit);
        if emit {
            // the CRF needs every token of the query sentences
            let extra: Vec<(usize, usize)> = self
                .inputs
                .query_sentences
                .iter()
                .flat_map(|&p| (0..self.ctx.data.units[self.inputs.sentences[p]].len()).map(move |u| (p, u)))
                .filter(|k| !self.emissions.contains_key(k))
                .collect();
            let kind = self.ctx.method.distance;
            for (p, u) in extra {
                let q = self.tr(p, u);
                let logits = self.tape.group_logits(q, groups.clone(), kind);
                self.emissions.insert((p, u), logits);
            }
        }
        let loss = mean_term(self.tape, &terms);
        let feature = (agg == SetAggregation::Feature && groups.iter().all(|g| g.len() == 1))
            .then(|| groups.iter().map(|g| g[0]).collect());
        (loss, feature)
    }

    fn contrastive_branch(&mut self, mode: ClResolved) -> Option<Var> {
        let n_labels = self.ctx.data.n_labels();
        let kind = self.ctx.method.distance;
        let units = self.inputs.cl_units.clone();
        let vars: Vec<Var> = units.iter().map(|&(p, u)| self.tr(p, u)).collect();
        let mut base: Vec<Vec<Var>> = vec![Vec::new(); n_labels];
        match mode {
            ClResolved::InBatch => {
                for (&(p, u), &v) in units.iter().zip(&vars) {
                    base[self.gold(p, u)].push(v);
                }
            }
            ClResolved::Moco => {
                if let Some(queue) = self.ctx.queue {
                    for (key, label) in queue.iter() {
                        let c = self.tape.constant(key.clone());
                        base[*label].push(c);
                    }
                }
            }
        }
        let without = |groups: &[Vec<Var>], label: usize, v: Var| -> Vec<Vec<Var>> {
            let mut g = groups.to_vec();
            g[label].retain(|&k| k != v);
            g
        };
        let mut terms = Vec::new();
        for (&(p, u), &v) in units.iter().zip(&vars) {
            let gold = self.gold(p, u);
            let groups = match mode {
                ClResolved::InBatch => without(&base, gold, v),
                ClResolved::Moco => base.clone(),
            };
            if groups[gold].is_empty() {
                continue;
            }
            let logits = self.tape.group_logits(v, groups, kind);
            terms.push(self.tape.nll(logits, gold));
        }
        if self.ctx.plan.emission == Some(BranchKind::Contrastive) {
            let in_batch: BTreeMap<(usize, usize), Var> = units.iter().copied().zip(vars.iter().copied()).collect();
            for &p in &self.inputs.crf_sentences.clone() {
                for u in 0..self.ctx.data.units[self.inputs.sentences[p]].len() {
                    let q = self.tr(p, u);
                    let groups = match (mode, in_batch.get(&(p, u))) {
                        (ClResolved::InBatch, Some(&v)) => without(&base, self.gold(p, u), v),
                        _ => base.clone(),
                    };
                    let logits = self.tape.group_logits(q, groups, kind);
                    self.emissions.insert((p, u), logits);
                }
            }
        }
        mean_term(self.tape, &terms)
    }

    fn crf_branch(&mut self, feature_protos: Option<&[Var]>) -> Option<Var> {
        let n_types = self.ctx.data.n_types;
        let n_labels = n_types + 1;
        let tagset = TagSet::new(n_types);
        let nt = tagset.len();
        let emission_map = crf::emission_gather(n_types);
        let (start, end, trans) = match self.ctx.plan.crf {
            CrfKind::None => return None,
            CrfKind::Vanilla => (
                self.tape.param(ParamId::CrfStart),
                self.tape.param(ParamId::CrfEnd),
                self.tape.param(ParamId::CrfTransitions),
            ),
            CrfKind::Cdt => {
                let roles = self.tape.param(ParamId::CdtRoles);
                let trans = self.tape.gather(roles, crf::role_gather(n_types));
                (self.tape.constant(crf::collapsed_start(n_types)), self.tape.constant(vec![0.0; nt]), trans)
            }
            CrfKind::Pa => {
                let protos = feature_protos?.to_vec();
                let projected: Vec<Var> = protos.iter().map(|&c| self.tape.affine(ParamId::PaBilinear, None, c)).collect();
                let mut scores = Vec::with_capacity(n_labels * n_labels);
                for &a in &protos {
                    for &wb in &projected {
                        scores.push(self.tape.dot(a, wb));
                    }
                }
                let table = self.tape.concat(&scores);
                let idx = crf::pa_gather(n_types).into_iter().map(Some).collect();
                let trans = self.tape.gather(table, idx);
                (self.tape.constant(vec![0.0; nt]), self.tape.constant(vec![0.0; nt]), trans)
            }
        };
        let mut terms = Vec::new();
        for &p in &self.inputs.crf_sentences.clone() {
            let s = self.inputs.sentences[p];
            let n = self.ctx.data.units[s].len();
            let rows: Option<Vec<Var>> = (0..n).map(|u| self.emissions.get(&(p, u)).copied()).collect();
            let Some(rows) = rows else { continue };
            let flat = self.tape.concat(&rows);
            let idx = (0..n).flat_map(|i| emission_map.iter().map(move |&l| Some(i * n_labels + l))).collect();
            let mut em = self.tape.gather(flat, idx);
            let gold = self.ctx.data.tags[s].clone();
            let feasible = gold.iter().enumerate().all(|(i, &k)| self.tape.value(em)[i * nt + k] > f64::NEG_INFINITY);
            if !feasible {
                continue;
            }
            if self.ctx.plan.crf == CrfKind::Cdt {
                em = self.tape.detach(em);
            }
            terms.push(self.tape.crf_nll(em, start, end, trans, nt, gold));
        }
        mean_term(self.tape, &terms)
    }
}

/// Build the fused loss of one step on `tape`; `None` when no branch has
/// a term (for example a cold key queue).
pub fn build_loss(tape: &mut Tape, ctx: &LossContext, inputs: &StepInputs) -> Option<BatchLoss> {
    let dim = tape.params().encoder.dim();
    let enc: Vec<Var> = inputs.sentences.iter().map(|&s| tape.encode(&ctx.data.ids[s])).collect();
    let mut b = Builder {
        tape,
        ctx,
        inputs,
        dim,
        enc,
        reps: BTreeMap::new(),
        transferred: BTreeMap::new(),
        emissions: BTreeMap::new(),
    };
    let mut branches = Vec::new();
    let mut feature_protos = None;
    if ctx.plan.label {
        let (loss, protos) = b.label_branch();
        if let Some(l) = loss {
            branches.push((BranchKind::Label, l));
        }
        if ctx.plan.emission == Some(BranchKind::Label) {
            feature_protos = Some(protos);
        }
    }
    if ctx.plan.linear {
        if let Some(l) = b.linear_branch() {
            branches.push((BranchKind::Linear, l));
        }
    }
    if let Some((agg, union_label)) = ctx.plan.prototype {
        let (loss, protos) = b.prototype_branch(agg, union_label);
        if let Some(l) = loss {
            branches.push((BranchKind::Prototype, l));
        }
        if ctx.plan.emission == Some(BranchKind::Prototype) {
            feature_protos = protos;
        }
    }
    if let Some(mode) = ctx.plan.contrastive {
        if let Some(l) = b.contrastive_branch(mode) {
            branches.push((BranchKind::Contrastive, l));
        }
    }
    if ctx.plan.crf != CrfKind::None && ctx.data.paradigm == Paradigm::SequenceLabeling {
        if let Some(l) = b.crf_branch(feature_protos.as_deref()) {
            branches.push((BranchKind::Crf, l));
        }
    }
    if branches.is_empty() {
        return None;
    }
    let vars: Vec<Var> = branches.iter().map(|(_, v)| *v).collect();
    let total = b.tape.sum(&vars);
    Some(BatchLoss { total, branches })
}
