//! Prototype memories built from the training set, and decoding.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{enumerate_spans, Dataset, Mention, Paradigm, Schema, Sentence, TagSet};
use crate::crf::{self, CollapsedTransitions, TransitionTable};
use crate::encoder;
use crate::error::{Error, Result};
use crate::math;
use crate::method::{CrfKind, MethodConfig};
use crate::params::{ModelParams, ParamId};
use crate::proto::{self, SetAggregation};

use super::model::{BranchKind, BranchPlan, PreparedData};

/// Per-label vectors a branch scores against, in transfer space.
pub type GroupSet = Vec<Vec<Vec<f64>>>;

/// A trained model ready for prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub method: MethodConfig,
    pub plan: BranchPlan,
    pub params: ModelParams,
    pub schema: Schema,
    pub paradigm: Paradigm,
    pub max_span_len: usize,
    /// Scoring memories per prototype branch.
    pub memory: Vec<(BranchKind, GroupSet)>,
}

fn mean_rows(enc: &[f64], dim: usize, start: usize, end: usize) -> Vec<f64> {
    let rows: Vec<&[f64]> = (start..end).map(|i| &enc[i * dim..(i + 1) * dim]).collect();
    math::mean_of(&rows)
}

fn transfer_flat(h: &[f64], method: &MethodConfig, params: &ModelParams) -> Result<Vec<f64>> {
    Ok(proto::transfer(h, method.transfer, params)?.flat())
}

fn label_vectors(data: &PreparedData, method: &MethodConfig, params: &ModelParams) -> Result<Vec<Vec<f64>>> {
    let dim = params.encoder.dim();
    data.label_ids
        .iter()
        .map(|ids| {
            let (enc, _) = encoder::forward(ids, &params.encoder);
            transfer_flat(&mean_rows(&enc, dim, 0, ids.len()), method, params)
        })
        .collect()
}

fn null_vector(id: ParamId, method: &MethodConfig, params: &ModelParams) -> Result<Vec<f64>> {
    transfer_flat(&params.tensor(id)?.data, method, params)
}

/// Build the scoring memories of every prototype branch of `plan` from
/// the full training set.
pub fn build_memory(
    method: &MethodConfig,
    plan: &BranchPlan,
    params: &ModelParams,
    data: &PreparedData,
) -> Result<Vec<(BranchKind, GroupSet)>> {
    let dim = params.encoder.dim();
    let n_types = data.n_types;
    let mut out = Vec::new();
    if plan.label {
        let mut groups: GroupSet = label_vectors(data, method, params)?.into_iter().map(|v| vec![v]).collect();
        groups.push(vec![null_vector(ParamId::NullLabel, method, params)?]);
        out.push((BranchKind::Label, groups));
    }
    if plan.prototype.is_none() && plan.contrastive.is_none() {
        return Ok(out);
    }
    // transferred unit vectors of the training set, by gold label
    let mut mentions: GroupSet = vec![Vec::new(); n_types];
    let mut na_units: Vec<Vec<f64>> = Vec::new();
    for (s, ids) in data.ids.iter().enumerate() {
        let (enc, _) = encoder::forward(ids, &params.encoder);
        let units = &data.units[s];
        for unit_ids in &data.mention_units[s] {
            let Some(&first) = unit_ids.first() else { continue };
            let t = units[first].label;
            for &u in unit_ids {
                mentions[t].push(transfer_flat(&mean_rows(&enc, dim, units[u].start, units[u].end), method, params)?);
            }
        }
        if plan.contrastive.is_some() {
            for u in units.iter().filter(|u| u.label == n_types) {
                na_units.push(transfer_flat(&mean_rows(&enc, dim, u.start, u.end), method, params)?);
            }
        }
    }
    if let Some((agg, union_label)) = plan.prototype {
        let mut sets = mentions.clone();
        if union_label {
            for (t, l) in label_vectors(data, method, params)?.into_iter().enumerate() {
                sets[t].push(l);
            }
        }
        let mut groups: GroupSet = match agg {
            SetAggregation::Score => sets,
            SetAggregation::Feature => sets
                .into_iter()
                .enumerate()
                .map(|(t, s)| {
                    if s.is_empty() {
                        return Err(Error::MissingPrototype(alloc::format!("#{t}")));
                    }
                    let rows: Vec<&[f64]> = s.iter().map(Vec::as_slice).collect();
                    Ok(vec![math::mean_of(&rows)])
                })
                .collect::<Result<_>>()?,
        };
        groups.push(vec![null_vector(ParamId::NullMention, method, params)?]);
        out.push((BranchKind::Prototype, groups));
    }
    if plan.contrastive.is_some() {
        let mut groups = mentions;
        groups.push(na_units);
        out.push((BranchKind::Contrastive, groups));
    }
    Ok(out)
}

/// Per label, the mean negated distance from `query` to the group;
/// `-inf` for empty groups.
pub fn group_logits(query: &[f64], groups: &[Vec<Vec<f64>>], kind: proto::DistanceKind) -> Vec<f64> {
    groups
        .iter()
        .map(|g| {
            if g.is_empty() {
                f64::NEG_INFINITY
            } else {
                g.iter().map(|k| proto::neg_distance(query, k, kind)).sum::<f64>() / g.len() as f64
            }
        })
        .collect()
}

/// First index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl TrainedModel {
    fn union_groups(&self) -> GroupSet {
        let n_labels = self.schema.n_labels();
        let mut union: GroupSet = vec![Vec::new(); n_labels];
        for (_, groups) in &self.memory {
            for (u, g) in union.iter_mut().zip(groups) {
                u.extend(g.iter().cloned());
            }
        }
        union
    }

    fn emission_groups(&self) -> Option<&GroupSet> {
        let kind = self.plan.emission?;
        self.memory.iter().find(|(k, _)| *k == kind).map(|(_, g)| g)
    }

    /// Per-unit label logits of a sentence.
    fn unit_logits(&self, ids: &[usize], spans: &[(usize, usize)], groups: Option<&GroupSet>) -> Result<Vec<Vec<f64>>> {
        let dim = self.params.encoder.dim();
        let (enc, _) = encoder::forward(ids, &self.params.encoder);
        spans
            .iter()
            .map(|&(a, b)| {
                let h = mean_rows(&enc, dim, a, b);
                match groups {
                    Some(g) => Ok(group_logits(&transfer_flat(&h, &self.method, &self.params)?, g, self.method.distance)),
                    None => {
                        let w = self.params.tensor(ParamId::LinearHead)?;
                        let bias = self.params.tensor(ParamId::LinearBias)?;
                        Ok((0..w.shape[0]).map(|r| math::dot(w.row(r), &h) + bias.data[r]).collect())
                    }
                }
            })
            .collect()
    }

    fn transitions(&self) -> Result<TransitionTable> {
        let n_types = self.schema.len();
        let nt = TagSet::new(n_types).len();
        match self.method.crf {
            CrfKind::None => Ok(TransitionTable::zeros(nt)),
            CrfKind::Vanilla => TransitionTable::new(
                nt,
                self.params.tensor(ParamId::CrfStart)?.data.clone(),
                self.params.tensor(ParamId::CrfEnd)?.data.clone(),
                self.params.tensor(ParamId::CrfTransitions)?.data.clone(),
            ),
            CrfKind::Cdt => {
                let mut ct = CollapsedTransitions::zeros();
                ct.roles.copy_from_slice(&self.params.tensor(ParamId::CdtRoles)?.data);
                Ok(crf::expand_collapsed(&ct, n_types))
            }
            CrfKind::Pa => {
                let groups = self.emission_groups().ok_or(Error::MissingPrototype("emission branch".into()))?;
                let protos = groups
                    .iter()
                    .map(|g| {
                        let rows: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
                        if rows.is_empty() {
                            Err(Error::MissingPrototype("PA prototype".into()))
                        } else {
                            Ok(math::mean_of(&rows))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                crf::pa_transitions(&protos, &self.params.tensor(ParamId::PaBilinear)?.data)
            }
        }
    }

    /// Predicted mentions for every sentence of `dataset`, keyed by id.
    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<(String, Vec<Mention>)>> {
        if dataset.schema().types() != self.schema.types() {
            return Err(Error::InvalidSchema("prediction schema differs from the training schema".into()));
        }
        let linear = self.plan.linear;
        let crf_on = self.method.crf != CrfKind::None;
        if crf_on && self.paradigm == Paradigm::SpanClassification {
            return Err(Error::InvalidConfig("CRF decoding needs the sequence-labeling paradigm".into()));
        }
        let union = self.union_groups();
        let groups = if linear {
            None
        } else if crf_on {
            Some(self.emission_groups().ok_or(Error::MissingPrototype("emission branch".into()))?)
        } else {
            Some(&union)
        };
        let table = if crf_on { Some(self.transitions()?) } else { None };
        let tagset = TagSet::new(self.schema.len());
        let mut out = Vec::with_capacity(dataset.len());
        for s in dataset.sentences() {
            let ids = encoder::bucket_ids(s.tokens(), &self.params.encoder.config);
            let mentions = match (self.paradigm, &table) {
                (_, _) if s.is_empty() => Vec::new(),
                (Paradigm::SequenceLabeling, Some(table)) => {
                    let spans: Vec<(usize, usize)> = (0..s.len()).map(|i| (i, i + 1)).collect();
                    let logits = self.unit_logits(&ids, &spans, groups)?;
                    let em = crf::emissions_from_logits(&logits, self.schema.len());
                    let (path, _) = crf::crf_viterbi(&em, table)?;
                    tagset.decode(&path, &self.schema)
                }
                (Paradigm::SequenceLabeling, None) => {
                    let spans: Vec<(usize, usize)> = (0..s.len()).map(|i| (i, i + 1)).collect();
                    let labels: Vec<usize> = self.unit_logits(&ids, &spans, groups)?.iter().map(|l| argmax(l)).collect();
                    self.merge_tokens(&labels)
                }
                (Paradigm::SpanClassification, _) => self.select_spans(s, &ids, groups)?,
            };
            out.push((String::from(s.id()), mentions));
        }
        Ok(out)
    }

    /// Runs of equal non-N.A. token labels become mentions.
    fn merge_tokens(&self, labels: &[usize]) -> Vec<Mention> {
        let na = self.schema.len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < labels.len() {
            if labels[i] == na {
                i += 1;
                continue;
            }
            let mut j = i + 1;
            while j < labels.len() && labels[j] == labels[i] {
                j += 1;
            }
            out.push(Mention::new(i, j, self.schema.label_name(labels[i])));
            i = j;
        }
        out
    }

    /// Non-N.A. candidate spans, best score first, kept while they do not
    /// overlap an already kept span.
    fn select_spans(&self, s: &Sentence, ids: &[usize], groups: Option<&GroupSet>) -> Result<Vec<Mention>> {
        let na = self.schema.len();
        let spans = enumerate_spans(s.len(), self.max_span_len.max(1));
        let logits = self.unit_logits(ids, &spans, groups)?;
        let mut cands: Vec<(f64, usize, usize)> = logits
            .iter()
            .enumerate()
            .filter_map(|(k, l)| {
                let y = argmax(l);
                (y != na).then_some((l[y], k, y))
            })
            .collect();
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut taken = vec![false; s.len()];
        let mut out = Vec::new();
        for (_, k, y) in cands {
            let (a, b) = spans[k];
            if taken[a..b].iter().any(|&t| t) {
                continue;
            }
            taken[a..b].iter_mut().for_each(|t| *t = true);
            out.push(Mention::new(a, b, self.schema.label_name(y)));
        }
        out.sort();
        Ok(out)
    }
}
