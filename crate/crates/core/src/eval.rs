//! Micro-averaged trigger scoring and aggregation over repeated runs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::Mention;
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pooled counts behind a [`Prf`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub n_pred: usize,
    pub n_gold: usize,
}

impl Counts {
    pub fn prf(&self) -> Prf {
        let Counts { tp, n_pred, n_gold } = *self;
        let precision = if n_pred == 0 {
            if n_gold == 0 { 1.0 } else { 0.0 }
        } else {
            tp as f64 / n_pred as f64
        };
        let recall = if n_gold == 0 {
            if n_pred == 0 { 1.0 } else { 0.0 }
        } else {
            tp as f64 / n_gold as f64
        };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1 }
    }
}

/// Exact `(span, type)` matching pooled over sentences.
///
/// Mentions are compared as sets per sentence. Gold sentences absent from
/// `predictions` count as having no predictions; a predicted sentence id
/// absent from `gold` is an error.
pub fn micro_counts(predictions: &[(String, Vec<Mention>)], gold: &[(String, Vec<Mention>)]) -> Result<Counts> {
    let mut gold_sets: BTreeMap<&str, BTreeSet<&Mention>> = BTreeMap::new();
    for (id, ms) in gold {
        gold_sets.entry(id.as_str()).or_default().extend(ms.iter());
    }
    let mut pred_sets: BTreeMap<&str, BTreeSet<&Mention>> = BTreeMap::new();
    for (id, ms) in predictions {
        if !gold_sets.contains_key(id.as_str()) {
            return Err(Error::UnknownSentence(id.clone()));
        }
        pred_sets.entry(id.as_str()).or_default().extend(ms.iter());
    }
    let mut c = Counts::default();
    for (id, g) in &gold_sets {
        c.n_gold += g.len();
        if let Some(p) = pred_sets.get(id) {
            c.n_pred += p.len();
            c.tp += p.intersection(g).count();
        }
    }
    Ok(c)
}

pub fn micro_f1(predictions: &[(String, Vec<Mention>)], gold: &[(String, Vec<Mention>)]) -> Result<Prf> {
    Ok(micro_counts(predictions, gold)?.prf())
}

/// Mean and sample standard deviation (`n - 1` denominator, absent for a
/// single run).
pub fn aggregate_runs(values: &[f64]) -> Result<(f64, Option<f64>)> {
    if values.is_empty() {
        return Err(Error::Empty("run scores"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, None));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, Some(math::sqrt(ss / (n - 1.0)))))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedScore {
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-seed scores and their F1 aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub scores: Vec<SeedScore>,
    pub mean_f1: f64,
    pub std_f1: Option<f64>,
}

impl RunReport {
    pub fn from_scores(scores: Vec<SeedScore>) -> Result<Self> {
        let f1s: Vec<f64> = scores.iter().map(|s| s.f1).collect();
        let (mean_f1, std_f1) = aggregate_runs(&f1s)?;
        Ok(RunReport { scores, mean_f1, std_f1 })
    }
}
