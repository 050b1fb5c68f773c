//! Planted-trigger synthetic corpora.
//!
//! Every event type owns a small pool of trigger words and a particle word
//! that may follow a trigger to form a two-token phrase. All other tokens
//! come from a shared distractor vocabulary. The vocabulary depends only on
//! the sizes in the spec, so corpora drawn with different seeds share it.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Mention, Paradigm, Schema, Sentence};
use crate::encoder;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_types: usize,
    pub n_sentences: usize,
    /// Distractor vocabulary size.
    pub vocab_size: usize,
    /// Trigger words per type.
    pub pool_size: usize,
    /// Probability that a sentence carries no trigger.
    pub distractor_rate: f64,
    /// Probability of a second trigger in a planted sentence.
    pub second_trigger_rate: f64,
    /// Probability that a trigger is followed by its type's particle.
    pub phrase_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// When set, words are chosen so no two share a hash bucket.
    pub buckets: Option<usize>,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_types: 10,
            n_sentences: 1000,
            vocab_size: 400,
            pool_size: 4,
            distractor_rate: 0.3,
            second_trigger_rate: 0.15,
            phrase_rate: 0.1,
            min_len: 6,
            max_len: 14,
            buckets: Some(encoder::EncoderConfig::default().buckets),
            id_prefix: String::from("syn"),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic spec: {m}")));
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        for (name, p) in [
            ("distractor_rate", self.distractor_rate),
            ("second_trigger_rate", self.second_trigger_rate),
            ("phrase_rate", self.phrase_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        let planted = self.distractor_rate < 1.0;
        if planted && (self.n_types == 0 || self.pool_size == 0) {
            return bad("planted sentences need at least one type with a non-empty pool");
        }
        if self.phrase_rate > 0.0 && planted && self.max_len < 2 {
            return bad("phrases need max_len >= 2");
        }
        if let Some(b) = self.buckets {
            let words = self.vocab_size + self.n_types * (self.pool_size + 1);
            if words > b {
                return bad(&format!("{words} words cannot get distinct buckets out of {b}"));
            }
        }
        Ok(())
    }

    pub fn type_names(&self) -> Vec<String> {
        (0..self.n_types).map(|t| format!("Event{t:02}")).collect()
    }
}

/// The words of a synthetic corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVocab {
    pub distractors: Vec<String>,
    pub pools: Vec<Vec<String>>,
    pub particles: Vec<String>,
}

impl SyntheticVocab {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut taken = BTreeSet::new();
        let mut word = |stem: String| -> String {
            let Some(b) = spec.buckets else { return stem };
            let mut candidate = stem.clone();
            let mut salt = 0;
            while !taken.insert(encoder::bucket(&candidate, b)) {
                salt += 1;
                candidate = format!("{stem}{}", (b'a' + (salt % 26) as u8) as char);
                if salt >= 26 {
                    candidate = format!("{stem}{salt}");
                }
            }
            candidate
        };
        let pools = (0..spec.n_types)
            .map(|t| (0..spec.pool_size).map(|j| word(format!("trig{t}x{j}"))).collect())
            .collect();
        let particles = (0..spec.n_types).map(|t| word(format!("part{t}"))).collect();
        let distractors = (0..spec.vocab_size).map(|i| word(format!("w{i}"))).collect();
        Ok(SyntheticVocab { distractors, pools, particles })
    }

    /// Each type's label text: its pool words joined by spaces.
    pub fn label_texts(&self, spec: &SyntheticSpec) -> BTreeMap<String, String> {
        spec.type_names().into_iter().zip(self.pools.iter().map(|p| p.join(" "))).collect()
    }
}

/// Generate a corpus. Type frequencies follow `1 / (rank + 1)` weights;
/// planted triggers are never adjacent.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let vocab = SyntheticVocab::new(spec)?;
    let types = spec.type_names();
    let schema = Schema::new(types.clone())?.with_label_texts(vocab.label_texts(spec))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights: Vec<f64> = (0..spec.n_types).map(|t| 1.0 / (t + 1) as f64).collect();
    let total: f64 = weights.iter().sum();
    let pick_type = |rng: &mut ChaCha8Rng| -> usize {
        let mut u = rng.random::<f64>() * total;
        for (t, w) in weights.iter().enumerate() {
            if u < *w {
                return t;
            }
            u -= w;
        }
        spec.n_types - 1
    };
    let mut sentences = Vec::with_capacity(spec.n_sentences);
    for i in 0..spec.n_sentences {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut tokens: Vec<String> =
            (0..len).map(|_| vocab.distractors[rng.random_range(0..vocab.distractors.len())].clone()).collect();
        let mut mentions = Vec::new();
        if rng.random::<f64>() >= spec.distractor_rate {
            let n_triggers = if rng.random::<f64>() < spec.second_trigger_rate { 2 } else { 1 };
            let mut used = alloc::vec![false; len];
            for _ in 0..n_triggers {
                let t = pick_type(&mut rng);
                let phrase = len >= 2 && rng.random::<f64>() < spec.phrase_rate;
                let width = if phrase { 2 } else { 1 };
                // a start is free if the span and one token of margin on each side are unused
                let free: Vec<usize> = (0..=len - width)
                    .filter(|&s| (s.saturating_sub(1)..(s + width + 1).min(len)).all(|k| !used[k]))
                    .collect();
                if free.is_empty() {
                    continue;
                }
                let start = free[rng.random_range(0..free.len())];
                tokens[start] = vocab.pools[t][rng.random_range(0..spec.pool_size)].clone();
                if phrase {
                    tokens[start + 1] = vocab.particles[t].clone();
                }
                for u in &mut used[start..start + width] {
                    *u = true;
                }
                mentions.push(Mention::new(start, start + width, types[t].clone()));
            }
        }
        sentences.push(Sentence::new(format!("{}{}-{i}", spec.id_prefix, spec.seed), tokens, mentions)?);
    }
    Dataset::new(schema, sentences, Paradigm::SequenceLabeling)
}

/// Bag-of-trigger-words tagger: a pool word opens a mention of its type,
/// extended over an immediately following particle of the same type.
pub fn rule_oracle(dataset: &Dataset, spec: &SyntheticSpec) -> Result<Vec<(String, Vec<Mention>)>> {
    let vocab = SyntheticVocab::new(spec)?;
    let types = spec.type_names();
    let mut trigger_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (t, pool) in vocab.pools.iter().enumerate() {
        for w in pool {
            trigger_of.insert(w.as_str(), t);
        }
    }
    Ok(dataset
        .sentences()
        .iter()
        .map(|s| {
            let toks = s.tokens();
            let mut out = Vec::new();
            for (i, tok) in toks.iter().enumerate() {
                if let Some(&t) = trigger_of.get(tok.as_str()) {
                    let end = if toks.get(i + 1) == Some(&vocab.particles[t]) { i + 2 } else { i + 1 };
                    out.push(Mention::new(i, end, types[t].clone()));
                }
            }
            (String::from(s.id()), out)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::micro_f1;

    fn gold(d: &Dataset) -> Vec<(String, Vec<Mention>)> {
        d.sentences().iter().map(|s| (String::from(s.id()), s.mentions().to_vec())).collect()
    }

    #[test]
    fn all_distractors_means_no_mentions() {
        let spec = SyntheticSpec { distractor_rate: 1.0, n_sentences: 50, ..Default::default() };
        assert_eq!(gen_synthetic(&spec).unwrap().n_mentions(), 0);
    }

    #[test]
    fn single_type_always_planted() {
        let spec = SyntheticSpec { n_types: 1, distractor_rate: 0.0, n_sentences: 60, ..Default::default() };
        let d = gen_synthetic(&spec).unwrap();
        assert!(d.sentences().iter().all(|s| !s.mentions().is_empty()));
    }

    #[test]
    fn rule_oracle_is_perfect() {
        let spec = SyntheticSpec { n_sentences: 300, phrase_rate: 0.4, second_trigger_rate: 0.5, seed: 9, ..Default::default() };
        let d = gen_synthetic(&spec).unwrap();
        let f = micro_f1(&rule_oracle(&d, &spec).unwrap(), &gold(&d)).unwrap();
        assert_eq!(f.f1, 1.0);
    }

    #[test]
    fn deterministic_and_vocab_shared_across_seeds() {
        let spec = SyntheticSpec { n_sentences: 20, ..Default::default() };
        assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 5, ..spec.clone() };
        assert_eq!(SyntheticVocab::new(&spec).unwrap(), SyntheticVocab::new(&other).unwrap());
    }

    #[test]
    fn words_get_distinct_buckets() {
        let spec = SyntheticSpec { buckets: Some(1024), ..Default::default() };
        let v = SyntheticVocab::new(&spec).unwrap();
        let all: Vec<&String> = v.distractors.iter().chain(v.pools.iter().flatten()).chain(&v.particles).collect();
        let buckets: BTreeSet<usize> = all.iter().map(|w| encoder::bucket(w, 1024)).collect();
        assert_eq!(buckets.len(), all.len());
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        assert!(gen_synthetic(&SyntheticSpec { min_len: 0, ..Default::default() }).is_err());
        assert!(gen_synthetic(&SyntheticSpec { pool_size: 0, ..Default::default() }).is_err());
        assert!(gen_synthetic(&SyntheticSpec { buckets: Some(16), ..Default::default() }).is_err());
    }
}
