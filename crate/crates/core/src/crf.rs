//! Linear-chain CRF: log-partition, marginals, Viterbi, and the collapsed
//! and prototype-derived transition tables.
//!
//! All scores are log-space `f64`. Forbidden transitions are `-inf`.

use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{Tag, TagSet};
use crate::error::{Error, Result};
use crate::math;

/// Transition scores over a tag alphabet plus start and stop scores.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionTable {
    n_tags: usize,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// Row-major `[from, to]`.
    pub trans: Vec<f64>,
}

impl TransitionTable {
    pub fn zeros(n_tags: usize) -> Self {
        TransitionTable { n_tags, start: vec![0.0; n_tags], end: vec![0.0; n_tags], trans: vec![0.0; n_tags * n_tags] }
    }

    pub fn new(n_tags: usize, start: Vec<f64>, end: Vec<f64>, trans: Vec<f64>) -> Result<Self> {
        if start.len() != n_tags || end.len() != n_tags {
            return Err(Error::DimensionMismatch { expected: n_tags, got: start.len().max(end.len()) });
        }
        if trans.len() != n_tags * n_tags {
            return Err(Error::DimensionMismatch { expected: n_tags * n_tags, got: trans.len() });
        }
        Ok(TransitionTable { n_tags, start, end, trans })
    }

    pub(crate) fn from_parts(n_tags: usize, start: Vec<f64>, end: Vec<f64>, trans: Vec<f64>) -> Self {
        debug_assert_eq!(trans.len(), n_tags * n_tags);
        TransitionTable { n_tags, start, end, trans }
    }

    pub fn n_tags(&self) -> usize {
        self.n_tags
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.n_tags + to]
    }
}

fn check(emissions: &[Vec<f64>], table: &TransitionTable) -> Result<Vec<f64>> {
    if emissions.is_empty() {
        return Err(Error::Empty("emissions"));
    }
    let mut flat = Vec::with_capacity(emissions.len() * table.n_tags);
    for row in emissions {
        if row.len() != table.n_tags {
            return Err(Error::DimensionMismatch { expected: table.n_tags, got: row.len() });
        }
        flat.extend_from_slice(row);
    }
    Ok(flat)
}

/// Forward scores `alpha[i * t + k]`.
fn forward_scores(em: &[f64], t: usize, table: &TransitionTable) -> Vec<f64> {
    let n = em.len() / t;
    let mut alpha = vec![0.0; n * t];
    for k in 0..t {
        alpha[k] = table.start[k] + em[k];
    }
    let mut buf = vec![0.0; t];
    for i in 1..n {
        for k in 0..t {
            for (s, b) in buf.iter_mut().enumerate() {
                *b = alpha[(i - 1) * t + s] + table.trans[s * t + k];
            }
            alpha[i * t + k] = em[i * t + k] + math::log_sum_exp(&buf);
        }
    }
    alpha
}

/// Backward scores `beta[i * t + k]` (excluding position `i`'s emission).
fn backward_scores(em: &[f64], t: usize, table: &TransitionTable) -> Vec<f64> {
    let n = em.len() / t;
    let mut beta = vec![0.0; n * t];
    beta[(n - 1) * t..].copy_from_slice(&table.end);
    let mut buf = vec![0.0; t];
    for i in (0..n - 1).rev() {
        for s in 0..t {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = table.trans[s * t + k] + em[(i + 1) * t + k] + beta[(i + 1) * t + k];
            }
            beta[i * t + s] = math::log_sum_exp(&buf);
        }
    }
    beta
}

pub(crate) fn log_partition_flat(em: &[f64], t: usize, table: &TransitionTable) -> f64 {
    let n = em.len() / t;
    let alpha = forward_scores(em, t, table);
    let last: Vec<f64> = (0..t).map(|k| alpha[(n - 1) * t + k] + table.end[k]).collect();
    math::log_sum_exp(&last)
}

pub(crate) fn path_score_flat(em: &[f64], t: usize, table: &TransitionTable, path: &[usize]) -> f64 {
    let mut score = table.start[path[0]] + table.end[path[path.len() - 1]];
    for (i, &k) in path.iter().enumerate() {
        score += em[i * t + k];
    }
    for w in path.windows(2) {
        score += table.trans[w[0] * t + w[1]];
    }
    score
}

/// Posterior marginals: per-position tag probabilities and expected
/// transition counts summed over positions.
pub struct Marginals {
    pub unary: Vec<f64>,
    pub pairwise: Vec<f64>,
}

pub(crate) fn marginals_flat(em: &[f64], t: usize, table: &TransitionTable) -> Marginals {
    let n = em.len() / t;
    let alpha = forward_scores(em, t, table);
    let beta = backward_scores(em, t, table);
    let last: Vec<f64> = (0..t).map(|k| alpha[(n - 1) * t + k] + table.end[k]).collect();
    let log_z = math::log_sum_exp(&last);
    let unary = alpha.iter().zip(&beta).map(|(a, b)| math::exp(a + b - log_z)).collect();
    let mut pairwise = vec![0.0; t * t];
    for i in 0..n.saturating_sub(1) {
        for s in 0..t {
            let a = alpha[i * t + s];
            if a == f64::NEG_INFINITY {
                continue;
            }
            for k in 0..t {
                let v = a + table.trans[s * t + k] + em[(i + 1) * t + k] + beta[(i + 1) * t + k] - log_z;
                pairwise[s * t + k] += math::exp(v);
            }
        }
    }
    Marginals { unary, pairwise }
}

/// `log Σ_paths exp(score(path))`.
pub fn crf_log_partition(emissions: &[Vec<f64>], transitions: &TransitionTable) -> Result<f64> {
    let em = check(emissions, transitions)?;
    Ok(log_partition_flat(&em, transitions.n_tags, transitions))
}

/// Summed emission, transition, start and stop potentials of `path`.
pub fn path_score(emissions: &[Vec<f64>], transitions: &TransitionTable, path: &[usize]) -> Result<f64> {
    let em = check(emissions, transitions)?;
    if path.len() != emissions.len() {
        return Err(Error::DimensionMismatch { expected: emissions.len(), got: path.len() });
    }
    if let Some(&bad) = path.iter().find(|&&k| k >= transitions.n_tags) {
        return Err(Error::DimensionMismatch { expected: transitions.n_tags, got: bad });
    }
    Ok(path_score_flat(&em, transitions.n_tags, transitions, path))
}

/// `log Z - score(gold)`.
pub fn crf_nll(emissions: &[Vec<f64>], transitions: &TransitionTable, gold: &[usize]) -> Result<f64> {
    Ok(crf_log_partition(emissions, transitions)? - path_score(emissions, transitions, gold)?)
}

/// Best path and its score. Among equally scored paths the
/// lexicographically smallest tag sequence is returned.
pub fn crf_viterbi(emissions: &[Vec<f64>], transitions: &TransitionTable) -> Result<(Vec<usize>, f64)> {
    let em = check(emissions, transitions)?;
    let t = transitions.n_tags;
    let n = emissions.len();
    // best[i * t + k]: best score of positions i.. given tag k at i,
    // including emission i and the stop score.
    let mut best = vec![0.0; n * t];
    for k in 0..t {
        best[(n - 1) * t + k] = em[(n - 1) * t + k] + transitions.end[k];
    }
    for i in (0..n - 1).rev() {
        for s in 0..t {
            let m = (0..t)
                .map(|k| transitions.trans[s * t + k] + best[(i + 1) * t + k])
                .fold(f64::NEG_INFINITY, f64::max);
            best[i * t + s] = em[i * t + s] + m;
        }
    }
    let pick = |cands: &mut dyn Iterator<Item = f64>| -> usize {
        let vals: Vec<f64> = cands.collect();
        let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        vals.iter().position(|&v| v == top).unwrap_or(0)
    };
    let mut path = Vec::with_capacity(n);
    path.push(pick(&mut (0..t).map(|k| transitions.start[k] + best[k])));
    for i in 1..n {
        let prev = path[i - 1];
        path.push(pick(&mut (0..t).map(|k| transitions.trans[prev * t + k] + best[i * t + k])));
    }
    let score = path_score_flat(&em, t, transitions, &path);
    Ok((path, score))
}

/// Abstract transition roles shared by all event types.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    OutsideToBegin = 0,
    OutsideToOutside = 1,
    BeginToInsideSame = 2,
    BeginToBegin = 3,
    BeginToOutside = 4,
    InsideToInsideSame = 5,
    InsideToBegin = 6,
    InsideToOutside = 7,
    ToInsideDifferent = 8,
}

pub const N_ROLES: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct CollapsedTransitions {
    pub roles: [f64; N_ROLES],
}

impl CollapsedTransitions {
    pub fn zeros() -> Self {
        CollapsedTransitions { roles: [0.0; N_ROLES] }
    }

    pub fn get(&self, role: Role) -> f64 {
        self.roles[role as usize]
    }
}

/// Role of the transition `from -> to`, `None` when forbidden (`O -> I`).
pub fn transition_role(tags: &TagSet, from: usize, to: usize) -> Option<Role> {
    use Tag::*;
    Some(match (tags.tag(from), tags.tag(to)) {
        (Outside, Outside) => Role::OutsideToOutside,
        (Outside, Begin(_)) => Role::OutsideToBegin,
        (Outside, Inside(_)) => return None,
        (Begin(_), Outside) => Role::BeginToOutside,
        (Begin(_), Begin(_)) => Role::BeginToBegin,
        (Begin(a), Inside(b)) if a == b => Role::BeginToInsideSame,
        (Inside(_), Outside) => Role::InsideToOutside,
        (Inside(_), Begin(_)) => Role::InsideToBegin,
        (Inside(a), Inside(b)) if a == b => Role::InsideToInsideSame,
        (Begin(_) | Inside(_), Inside(_)) => Role::ToInsideDifferent,
    })
}

/// Role index per `[from, to]` cell, for gathering role scores.
pub fn role_gather(n_types: usize) -> Vec<Option<usize>> {
    let tags = TagSet::new(n_types);
    let t = tags.len();
    (0..t * t).map(|k| transition_role(&tags, k / t, k % t).map(|r| r as usize)).collect()
}

/// Start scores for collapsed tables: zero except `-inf` into `I` tags.
pub fn collapsed_start(n_types: usize) -> Vec<f64> {
    let tags = TagSet::new(n_types);
    (0..tags.len())
        .map(|k| if matches!(tags.tag(k), Tag::Inside(_)) { f64::NEG_INFINITY } else { 0.0 })
        .collect()
}

/// Concrete BIO table where each tag pair receives its role's score.
pub fn expand_collapsed(ct: &CollapsedTransitions, n_types: usize) -> TransitionTable {
    let tags = TagSet::new(n_types);
    let trans = role_gather(n_types).into_iter().map(|r| r.map_or(f64::NEG_INFINITY, |r| ct.roles[r])).collect();
    TransitionTable { n_tags: tags.len(), start: collapsed_start(n_types), end: vec![0.0; tags.len()], trans }
}

/// Emission index map: each BIO tag reads its label's logit
/// (`O` reads N.A., the last label).
pub fn emission_gather(n_types: usize) -> Vec<usize> {
    let tags = TagSet::new(n_types);
    (0..tags.len()).map(|k| tags.label_of(k)).collect()
}

/// Per-position label logits (`n_types + 1` each, N.A. last) to BIO emissions.
pub fn emissions_from_logits(logits: &[Vec<f64>], n_types: usize) -> Vec<Vec<f64>> {
    let map = emission_gather(n_types);
    logits.iter().map(|row| map.iter().map(|&l| row[l]).collect()).collect()
}

/// Viterbi over label logits with the expanded collapsed table; used only
/// at decoding time.
pub fn cdt_decode(logits: &[Vec<f64>], ct: &CollapsedTransitions, n_types: usize) -> Result<Vec<usize>> {
    if let Some(row) = logits.iter().find(|r| r.len() != n_types + 1) {
        return Err(Error::DimensionMismatch { expected: n_types + 1, got: row.len() });
    }
    let table = expand_collapsed(ct, n_types);
    Ok(crf_viterbi(&emissions_from_logits(logits, n_types), &table)?.0)
}

/// Label-pair index `(from * n_labels + to)` per BIO `[from, to]` cell.
pub fn pa_gather(n_types: usize) -> Vec<usize> {
    let tags = TagSet::new(n_types);
    let t = tags.len();
    let n_labels = n_types + 1;
    (0..t * t).map(|k| tags.label_of(k / t) * n_labels + tags.label_of(k % t)).collect()
}

/// Prototype-derived transitions: `score(y -> y') = c_y^T W c_y'` over the
/// label prototypes (N.A. last), spread over BIO tags by label.
pub fn pa_transitions(prototypes: &[Vec<f64>], bilinear: &[f64]) -> Result<TransitionTable> {
    let n_labels = prototypes.len();
    if n_labels < 2 {
        return Err(Error::MissingPrototype("N.A.".into()));
    }
    let dim = prototypes[0].len();
    if bilinear.len() != dim * dim {
        return Err(Error::DimensionMismatch { expected: dim * dim, got: bilinear.len() });
    }
    if let Some(p) = prototypes.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
    }
    let mut label_scores = vec![0.0; n_labels * n_labels];
    for (a, pa) in prototypes.iter().enumerate() {
        for (b, pb) in prototypes.iter().enumerate() {
            let wpb: Vec<f64> = (0..dim).map(|r| math::dot(&bilinear[r * dim..(r + 1) * dim], pb)).collect();
            label_scores[a * n_labels + b] = math::dot(pa, &wpb);
        }
    }
    let n_types = n_labels - 1;
    let n_tags = TagSet::new(n_types).len();
    let trans = pa_gather(n_types).into_iter().map(|i| label_scores[i]).collect();
    Ok(TransitionTable { n_tags, start: vec![0.0; n_tags], end: vec![0.0; n_tags], trans })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scores_partition_is_log_paths() {
        let t = TransitionTable::zeros(2);
        let em = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!((crf_log_partition(&em, &t).unwrap() - math::ln(4.0)).abs() < 1e-12);
    }

    #[test]
    fn single_position_is_logsumexp() {
        let mut t = TransitionTable::zeros(3);
        t.start = vec![0.1, -0.2, 0.3];
        t.end = vec![0.5, 0.0, -1.0];
        let em = vec![vec![1.0, 2.0, 0.5]];
        let expected = math::log_sum_exp(&[1.6, 1.8, -0.2]);
        assert!((crf_log_partition(&em, &t).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let t = TransitionTable::zeros(2);
        assert!(crf_log_partition(&[vec![0.0; 3]], &t).is_err());
        assert!(crf_viterbi(&[], &t).is_err());
        assert!(TransitionTable::new(2, vec![0.0; 2], vec![0.0; 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn viterbi_with_zero_transitions_is_argmax() {
        let t = TransitionTable::zeros(3);
        let em = vec![vec![0.0, 5.0, 1.0], vec![3.0, 0.0, 1.0], vec![0.0, 1.0, 4.0]];
        let (path, score) = crf_viterbi(&em, &t).unwrap();
        assert_eq!(path, vec![1, 0, 2]);
        assert_eq!(score, 12.0);
    }

    #[test]
    fn viterbi_respects_forbidden_transitions() {
        let tags = TagSet::new(1);
        let mut t = TransitionTable::zeros(tags.len());
        t.trans[tags.index(Tag::Outside) * 3 + tags.index(Tag::Inside(0))] = f64::NEG_INFINITY;
        // I is preferred everywhere, but O -> I is forbidden.
        let em = vec![vec![1.0, 0.0, 0.5], vec![0.0, 0.0, 3.0]];
        let (path, _) = crf_viterbi(&em, &t).unwrap();
        for w in path.windows(2) {
            assert!(!(w[0] == 0 && w[1] == 2));
        }
    }

    #[test]
    fn collapsed_roles_map_as_named() {
        let tags = TagSet::new(2);
        let (ba, ia, ib) = (tags.index(Tag::Begin(0)), tags.index(Tag::Inside(0)), tags.index(Tag::Inside(1)));
        assert_eq!(transition_role(&tags, ba, ia), Some(Role::BeginToInsideSame));
        assert_eq!(transition_role(&tags, ba, ib), Some(Role::ToInsideDifferent));
        assert_eq!(transition_role(&tags, 0, ia), None);
        let mut ct = CollapsedTransitions::zeros();
        ct.roles[Role::BeginToInsideSame as usize] = 0.7;
        let table = expand_collapsed(&ct, 2);
        assert_eq!(table.get(ba, ia), 0.7);
        assert_eq!(table.get(ba, ib), 0.0);
        assert_eq!(table.get(0, ia), f64::NEG_INFINITY);
    }

    #[test]
    fn cdt_with_zero_roles_is_per_position_argmax() {
        let logits = vec![vec![0.1, 2.0, 0.3], vec![0.0, 1.0, 3.0], vec![4.0, 0.0, 0.1]];
        let path = cdt_decode(&logits, &CollapsedTransitions::zeros(), 2).unwrap();
        let tags = TagSet::new(2);
        let labels: Vec<usize> = path.iter().map(|&k| tags.label_of(k)).collect();
        assert_eq!(labels, vec![1, 2, 0]);
    }

    #[test]
    fn cdt_strong_negative_diff_role_blocks_type_switches() {
        let mut ct = CollapsedTransitions::zeros();
        ct.roles[Role::ToInsideDifferent as usize] = -1e6;
        ct.roles[Role::BeginToBegin as usize] = -1e6;
        ct.roles[Role::InsideToBegin as usize] = -1e6;
        let logits = vec![vec![3.0, 0.0, 0.0], vec![0.0, 3.0, 0.0], vec![0.0, 0.0, 3.0]];
        let path = cdt_decode(&logits, &ct, 2).unwrap();
        let tags = TagSet::new(2);
        for w in path.windows(2) {
            if let (Tag::Begin(a) | Tag::Inside(a), Tag::Inside(b)) = (tags.tag(w[0]), tags.tag(w[1])) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn pa_zero_bilinear_gives_zero_table() {
        let protos = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        let table = pa_transitions(&protos, &[0.0; 4]).unwrap();
        assert!(table.trans.iter().all(|&x| x == 0.0));
        assert_eq!(table.n_tags(), 5);
    }

    #[test]
    fn pa_identical_prototypes_are_interchangeable() {
        let protos = vec![vec![0.3, -0.2], vec![0.3, -0.2], vec![1.0, 0.5]];
        let w = [0.4, -1.0, 0.7, 0.2];
        let table = pa_transitions(&protos, &w).unwrap();
        let swapped = vec![protos[1].clone(), protos[0].clone(), protos[2].clone()];
        assert_eq!(pa_transitions(&swapped, &w).unwrap(), table);
        assert!(pa_transitions(&protos[..1], &w).is_err());
    }

    #[test]
    fn nll_is_non_negative_and_zero_for_forced_path() {
        let tags = TagSet::new(1);
        let mut t = TransitionTable::zeros(tags.len());
        let em = vec![vec![0.2, 1.0, -0.3], vec![0.0, 0.5, 2.0]];
        assert!(crf_nll(&em, &t, &[1, 2]).unwrap() > 0.0);
        // make [B, I] the only finite path
        t.start = vec![f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        for from in 0..3 {
            for to in 0..3 {
                if !(from == 1 && to == 2) {
                    t.trans[from * 3 + to] = f64::NEG_INFINITY;
                }
            }
        }
        assert!(crf_nll(&em, &t, &[1, 2]).unwrap().abs() < 1e-12);
    }
}
