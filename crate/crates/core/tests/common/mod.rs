//! Reference implementations and random instance generators shared by the
//! property tests and the acceptance target. Nothing here calls into the
//! library code it is compared against.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use protoed_core::corpus::{Dataset, Mention, Paradigm, Schema, Sentence};
use protoed_core::crf::TransitionTable;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn type_name(i: usize) -> String {
    format!("T{i:02}")
}

/// Random corpus with `1..=max_types` types and `1..=max_sentences`
/// sentences. Type frequencies are skewed so rare types are common.
pub fn random_dataset(rng: &mut ChaCha8Rng, max_types: usize, max_sentences: usize) -> Dataset {
    let n_types = rng.random_range(1..=max_types);
    let n_sentences = rng.random_range(1..=max_sentences);
    let weights: Vec<f64> = (0..n_types).map(|_| rng.random_range(0.05..1.0f64).powi(3)).collect();
    let total: f64 = weights.iter().sum();
    let mut sentences = Vec::with_capacity(n_sentences);
    for s in 0..n_sentences {
        let len = rng.random_range(3..=10);
        let tokens: Vec<String> = (0..len).map(|_| format!("w{}", rng.random_range(0..30))).collect();
        let mut mentions = Vec::new();
        let mut pos = 0;
        while pos < len && mentions.len() < 3 {
            if rng.random_bool(0.25) {
                let width = if pos + 1 < len && rng.random_bool(0.2) { 2 } else { 1 };
                let mut x = rng.random_range(0.0..total);
                let mut ty = n_types - 1;
                for (i, w) in weights.iter().enumerate() {
                    if x < *w {
                        ty = i;
                        break;
                    }
                    x -= w;
                }
                mentions.push(Mention::new(pos, pos + width, type_name(ty)));
                pos += width;
            } else {
                pos += 1;
            }
        }
        sentences.push(Sentence::new(format!("s{s}"), tokens, mentions).unwrap());
    }
    let schema = Schema::new((0..n_types).map(type_name)).unwrap();
    Dataset::new(schema, sentences, Paradigm::SequenceLabeling).unwrap()
}

/// Mentions per schema type.
pub fn count_types(d: &Dataset) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = d.schema().types().iter().map(|t| (t.clone(), 0)).collect();
    for s in d.sentences() {
        for m in s.mentions() {
            *counts.get_mut(&m.label).unwrap() += 1;
        }
    }
    counts
}

/// Every type has at least `k` mentions and dropping any one sentence
/// breaks that.
pub fn check_k_shot(subset: &Dataset, k: usize) -> Result<(), String> {
    let counts = count_types(subset);
    if let Some((t, c)) = counts.iter().find(|(_, c)| **c < k) {
        return Err(format!("type {t} has {c} < {k} mentions"));
    }
    for s in subset.sentences() {
        let mut after = counts.clone();
        for m in s.mentions() {
            *after.get_mut(&m.label).unwrap() -= 1;
        }
        if after.values().all(|c| *c >= k) {
            return Err(format!("sentence {} is removable", s.id()));
        }
    }
    Ok(())
}

pub fn random_table(rng: &mut ChaCha8Rng, t: usize, integer: bool) -> TransitionTable {
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| if integer { rng.random_range(-2i32..=2) as f64 } else { rng.random_range(-3.0..3.0) })
            .collect()
    };
    let start = draw(t);
    let end = draw(t);
    let trans = draw(t * t);
    TransitionTable::new(t, start, end, trans).unwrap()
}

pub fn random_emissions(rng: &mut ChaCha8Rng, n: usize, t: usize, integer: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..t)
                .map(|_| if integer { rng.random_range(-2i32..=2) as f64 } else { rng.random_range(-4.0..4.0) })
                .collect()
        })
        .collect()
}

/// All tag paths of length `n` over `t` tags in lexicographic order.
pub fn all_paths(n: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out.into_iter().flat_map(|p: Vec<usize>| (0..t).map(move |k| [p.clone(), vec![k]].concat())).collect();
    }
    out
}

pub fn brute_path_score(em: &[Vec<f64>], table: &TransitionTable, path: &[usize]) -> f64 {
    let mut s = table.start[path[0]] + em[0][path[0]];
    for i in 1..path.len() {
        s += table.get(path[i - 1], path[i]) + em[i][path[i]];
    }
    s + table.end[path[path.len() - 1]]
}

pub fn brute_log_partition(em: &[Vec<f64>], table: &TransitionTable) -> f64 {
    let scores: Vec<f64> = all_paths(em.len(), table.n_tags()).iter().map(|p| brute_path_score(em, table, p)).collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln()
}

/// Best path; the lexicographically smallest among ties.
pub fn brute_viterbi(em: &[Vec<f64>], table: &TransitionTable) -> (Vec<usize>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for p in all_paths(em.len(), table.n_tags()) {
        let s = brute_path_score(em, table, &p);
        if s > best.1 {
            best = (p, s);
        }
    }
    best
}

pub type Predictions = Vec<(String, Vec<Mention>)>;

/// Random gold corpus and predictions that partly agree with it.
pub fn random_prediction_pair(rng: &mut ChaCha8Rng) -> (Predictions, Predictions) {
    let n = rng.random_range(0..8);
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    let rand_mention = |rng: &mut ChaCha8Rng| {
        let s = rng.random_range(0..6);
        Mention::new(s, s + rng.random_range(1..3), type_name(rng.random_range(0..3)))
    };
    for i in 0..n {
        let id = format!("s{i}");
        let g: Vec<Mention> = (0..rng.random_range(0..4)).map(|_| rand_mention(rng)).collect();
        if rng.random_bool(0.8) {
            let mut p: Vec<Mention> = g.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
            p.extend((0..rng.random_range(0..3)).map(|_| rand_mention(rng)));
            pred.push((id.clone(), p));
        }
        gold.push((id, g));
    }
    (pred, gold)
}

/// Precision, recall and F1 by explicit counting over deduplicated
/// `(sentence, start, end, type)` tuples. No predictions and no gold
/// scores 1 on all three; one side empty scores 0 on the other.
pub fn counting_prf(pred: &[(String, Vec<Mention>)], gold: &[(String, Vec<Mention>)]) -> (f64, f64, f64) {
    let flat = |xs: &[(String, Vec<Mention>)]| {
        let mut v: Vec<(String, usize, usize, String)> = xs
            .iter()
            .flat_map(|(id, ms)| ms.iter().map(move |m| (id.clone(), m.start, m.end, m.label.clone())))
            .collect();
        v.sort();
        v.dedup();
        v
    };
    let p = flat(pred);
    let g = flat(gold);
    let tp = p.iter().filter(|x| g.contains(x)).count() as f64;
    let (np, ng) = (p.len() as f64, g.len() as f64);
    let precision = if np == 0.0 { if ng == 0.0 { 1.0 } else { 0.0 } } else { tp / np };
    let recall = if ng == 0.0 { if np == 0.0 { 1.0 } else { 0.0 } } else { tp / ng };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

/// Mean and sample standard deviation via the sum-of-squares form.
pub fn textbook_mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    (mean, Some(((sq - n * mean * mean) / (n - 1.0)).max(0.0).sqrt()))
}

/// Reference bounded FIFO.
pub struct FifoModel<T> {
    pub capacity: usize,
    pub items: VecDeque<T>,
}

impl<T> FifoModel<T> {
    pub fn new(capacity: usize) -> Self {
        FifoModel { capacity, items: VecDeque::new() }
    }

    pub fn push(&mut self, x: T) {
        self.items.push_back(x);
        while self.items.len() > self.capacity {
            self.items.pop_front();
        }
    }
}

/// `-log softmax(logits)[gold]` without any shifting.
pub fn naive_ce(logits: &[f64], gold: usize) -> f64 {
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    -(logits[gold].exp() / z).ln()
}

/// Per label, the mean negated distance over keys, by a double loop.
pub fn brute_mean_logits(query: &[f64], keys: &[(Vec<f64>, usize)], n_labels: usize, dist: impl Fn(&[f64], &[f64]) -> f64) -> Vec<f64> {
    (0..n_labels)
        .map(|y| {
            let mut sum = 0.0;
            let mut count = 0;
            for (k, l) in keys {
                if *l == y {
                    sum += -dist(query, k);
                    count += 1;
                }
            }
            if count == 0 { f64::NEG_INFINITY } else { sum / count as f64 }
        })
        .collect()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cosine distance as used on already normalized vectors: the negated dot.
pub fn neg_dot(a: &[f64], b: &[f64]) -> f64 {
    -a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}
