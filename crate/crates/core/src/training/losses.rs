//! Plain-vector losses, contrastive logits, the key queue and
//! support/query splitting.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::math;
use crate::proto::{neg_distance, DistanceKind};

/// `-log softmax(logits)[gold]`. Labels outside the softmax carry `-inf`.
pub fn ce_loss(logits: &[f64], gold: usize) -> Result<f64> {
    match logits.get(gold) {
        Some(&g) if g > f64::NEG_INFINITY => Ok(math::log_sum_exp(logits) - g),
        _ => Err(Error::MissingPrototype(alloc::format!("gold label #{gold}"))),
    }
}

/// Exact sum of branch losses.
pub fn fused_loss(branch_losses: &[f64]) -> Result<f64> {
    if branch_losses.is_empty() {
        return Err(Error::Empty("branch losses"));
    }
    Ok(branch_losses.iter().sum())
}

fn mean_logits<'a>(
    query: &[f64],
    keys: impl Iterator<Item = (&'a [f64], usize)>,
    kind: DistanceKind,
    n_labels: usize,
) -> Vec<f64> {
    let mut sums = vec![0.0; n_labels];
    let mut counts = vec![0usize; n_labels];
    for (k, label) in keys {
        sums[label] += neg_distance(query, k, kind);
        counts[label] += 1;
    }
    sums.iter().zip(&counts).map(|(&s, &c)| if c == 0 { f64::NEG_INFINITY } else { s / c as f64 }).collect()
}

/// Logits of batch item `i` against every other item: per label, the mean
/// of negated distances. Labels without keys get `-inf`.
pub fn inbatch_cl_logits(reps: &[(Vec<f64>, usize)], i: usize, kind: DistanceKind, n_labels: usize) -> Result<Vec<f64>> {
    if reps.len() < 2 {
        return Err(Error::Empty("in-batch keys"));
    }
    let query = &reps.get(i).ok_or(Error::DimensionMismatch { expected: reps.len(), got: i })?.0;
    let keys = reps.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, (v, l))| (v.as_slice(), *l));
    Ok(mean_logits(query, keys, kind, n_labels))
}

/// Logits of `query` against the queued keys.
pub fn moco_cl_logits(query: &[f64], queue: &ClQueue, kind: DistanceKind, n_labels: usize) -> Result<Vec<f64>> {
    if queue.is_empty() {
        return Err(Error::Empty("key queue"));
    }
    Ok(mean_logits(query, queue.iter().map(|(v, l)| (v.as_slice(), *l)), kind, n_labels))
}

pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

/// Bounded FIFO of `(key vector, label)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ClQueue {
    capacity: usize,
    items: VecDeque<(Vec<f64>, usize)>,
}

impl ClQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("queue capacity must be positive".into()));
        }
        Ok(ClQueue { capacity, items: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Append, evicting the oldest item when full.
    pub fn push(&mut self, key: Vec<f64>, label: usize) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((key, label));
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &(Vec<f64>, usize)> {
        self.items.iter()
    }
}

/// A mention addressed by sentence and mention index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct MentionRef {
    pub sentence: usize,
    pub mention: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpisodeSplit {
    pub support: Vec<MentionRef>,
    pub query: Vec<MentionRef>,
}

/// Support/query shape used by prototypical training for a given shot count.
pub fn default_episode_shape(k: usize) -> (usize, usize) {
    match k {
        0..=2 => (1, 1),
        3..=5 => (2, 3),
        _ => (5, 5),
    }
}

/// Split the mentions of `train` into `k_s` support mentions per type and
/// up to `k_q` query mentions per type from the rest. Types are visited
/// rarest first; within a type mentions are shuffled.
pub fn episode_split(train: &Dataset, k_s: usize, k_q: usize, seed: u64) -> Result<EpisodeSplit> {
    if k_s == 0 {
        return Err(Error::InvalidConfig("support size must be positive".into()));
    }
    let all: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    split_mentions(train, &all, k_s, k_q, &mut rng, true)
}

/// Core of [`episode_split`] over a subset of sentences. In lenient mode
/// a type with fewer than `k_s + 1` mentions keeps one for the query when
/// it has two or more, and otherwise contributes support only.
pub(crate) fn split_mentions(
    train: &Dataset,
    sentences: &[usize],
    k_s: usize,
    k_q: usize,
    rng: &mut ChaCha8Rng,
    strict: bool,
) -> Result<EpisodeSplit> {
    let schema = train.schema();
    let mut by_type: Vec<Vec<MentionRef>> = vec![Vec::new(); schema.len()];
    for &s in sentences {
        for (m, mention) in train.sentences()[s].mentions().iter().enumerate() {
            let t = schema.index_of(&mention.label).ok_or_else(|| Error::UnknownType(mention.label.clone()))?;
            by_type[t].push(MentionRef { sentence: s, mention: m });
        }
    }
    let mut order: Vec<usize> = (0..schema.len()).collect();
    order.sort_by(|&a, &b| by_type[a].len().cmp(&by_type[b].len()).then_with(|| schema.types()[a].cmp(&schema.types()[b])));
    let mut split = EpisodeSplit { support: Vec::new(), query: Vec::new() };
    for t in order {
        let pool = &mut by_type[t];
        let c = pool.len();
        if strict && c < k_s + 1 {
            return Err(Error::InfeasibleShot { ty: schema.types()[t].clone(), k: k_s + 1, available: c });
        }
        pool.shuffle(rng);
        let ks = if c >= 2 { k_s.min(c - 1) } else { c };
        let kq = k_q.min(c - ks);
        split.support.extend_from_slice(&pool[..ks]);
        split.query.extend_from_slice(&pool[ks..ks + kq]);
    }
    split.support.sort();
    split.query.sort();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Mention, Paradigm, Schema, Sentence};
    use alloc::collections::BTreeSet;
    use alloc::string::String;

    #[test]
    fn ce_examples() {
        assert!((ce_loss(&[0.3; 4], 2).unwrap() - math::ln(4.0)).abs() < 1e-12);
        assert!(ce_loss(&[1000.0, 0.0], 0).unwrap() < 1e-12);
        assert!(ce_loss(&[0.0, f64::NEG_INFINITY], 1).is_err());
        assert!(ce_loss(&[0.0], 3).is_err());
    }

    #[test]
    fn fused_is_sum() {
        assert_eq!(fused_loss(&[0.7, 0.3]).unwrap(), 1.0);
        assert_eq!(fused_loss(&[0.25]).unwrap(), 0.25);
        assert!(fused_loss(&[]).is_err());
    }

    #[test]
    fn inbatch_excludes_self() {
        let reps = vec![(vec![1.0, 0.0], 0), (vec![1.0, 0.0], 0)];
        assert_eq!(inbatch_cl_logits(&reps, 0, DistanceKind::Euclidean, 2).unwrap(), vec![0.0, f64::NEG_INFINITY]);
        let reps = vec![(vec![1.0, 0.0], 0), (vec![5.0, 0.0], 1)];
        let l = inbatch_cl_logits(&reps, 0, DistanceKind::Euclidean, 2).unwrap();
        assert_eq!(l, vec![f64::NEG_INFINITY, -4.0]);
        assert!(inbatch_cl_logits(&reps[..1], 0, DistanceKind::Euclidean, 2).is_err());
    }

    #[test]
    fn queue_is_fifo() {
        let mut q = ClQueue::new(2).unwrap();
        assert!(moco_cl_logits(&[0.0], &q, DistanceKind::Cosine, 1).is_err());
        q.push(vec![1.0], 0);
        q.push(vec![2.0], 0);
        q.push(vec![3.0], 1);
        let items: Vec<f64> = q.iter().map(|(v, _)| v[0]).collect();
        assert_eq!(items, vec![2.0, 3.0]);
        let l = moco_cl_logits(&[3.0], &q, DistanceKind::Euclidean, 2).unwrap();
        assert_eq!(l, vec![-1.0, 0.0]);
    }

    fn toy() -> Dataset {
        let schema = Schema::new(["A", "B"]).unwrap();
        let toks = |n: usize| (0..n).map(|i| alloc::format!("w{i}")).collect::<Vec<String>>();
        let s = vec![
            Sentence::new("s0", toks(3), vec![Mention::new(0, 1, "A"), Mention::new(2, 3, "B")]).unwrap(),
            Sentence::new("s1", toks(2), vec![Mention::new(1, 2, "A")]).unwrap(),
            Sentence::new("s2", toks(2), vec![Mention::new(0, 1, "B")]).unwrap(),
        ];
        Dataset::new(schema, s, Paradigm::SequenceLabeling).unwrap()
    }

    #[test]
    fn episode_one_one() {
        let d = toy();
        for seed in 0..10 {
            let e = episode_split(&d, 1, 1, seed).unwrap();
            assert_eq!(e.support.len(), 2);
            assert_eq!(e.query.len(), 2);
            let s: BTreeSet<_> = e.support.iter().collect();
            assert!(e.query.iter().all(|q| !s.contains(q)));
        }
        assert!(matches!(episode_split(&d, 2, 1, 0), Err(Error::InfeasibleShot { .. })));
    }
}
