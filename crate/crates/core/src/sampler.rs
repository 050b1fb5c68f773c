//! K-shot sentence sampling and class-transfer splits.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Schema, Sentence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleSpec {
    pub k_train: usize,
    pub k_dev: usize,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(k_train: usize, k_dev: usize, seed: u64) -> Result<Self> {
        if k_train == 0 {
            return Err(Error::InvalidConfig("k_train must be positive".into()));
        }
        if k_dev > k_train {
            return Err(Error::InvalidConfig(format!("k_dev ({k_dev}) exceeds k_train ({k_train})")));
        }
        Ok(SampleSpec { k_train, k_dev, seed })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleStats {
    pub n_sentences: usize,
    pub n_mentions: usize,
    pub avg_shot: f64,
}

/// Source/target partition for the class-transfer setting.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferSplit {
    pub source_types: Vec<String>,
    pub target_types: Vec<String>,
    pub source_data: Dataset,
    pub target_pool: Dataset,
}

/// Schema types sorted by ascending corpus frequency, ties by name.
pub fn types_by_frequency(dataset: &Dataset) -> Vec<(String, usize)> {
    let mut order: Vec<(String, usize)> =
        dataset.schema().types().iter().cloned().zip(dataset.type_counts()).collect();
    order.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    order
}

/// Greedy K-shot sentence sampling.
///
/// Types are visited rarest first; for each, sentences containing it are
/// drawn uniformly until it has `k` mentions, counting every mention of each
/// drawn sentence. A final pass drops any sentence whose removal keeps every
/// type at `k` or more. Sentences are returned in corpus order.
pub fn greedy_sample(dataset: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    let kept = greedy_sample_indices(dataset, k, seed)?;
    dataset.with_sentences(kept.into_iter().map(|i| dataset.sentences()[i].clone()).collect())
}

/// Index form of [`greedy_sample`].
pub fn greedy_sample_indices(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be positive".into()));
    }
    let schema = dataset.schema();
    let order = types_by_frequency(dataset);
    if let Some((ty, available)) = order.iter().find(|(_, c)| *c < k) {
        return Err(Error::InfeasibleShot { ty: ty.clone(), k, available: *available });
    }
    let sentence_types: Vec<Vec<usize>> = dataset
        .sentences()
        .iter()
        .map(|s| s.mentions().iter().filter_map(|m| schema.index_of(&m.label)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut available = alloc::vec![true; dataset.len()];
    let mut counter = alloc::vec![0usize; schema.len()];
    let mut selected: Vec<usize> = Vec::new();

    for (ty, _) in &order {
        let y = schema.index_of(ty).expect("type from schema");
        while counter[y] < k {
            let candidates: Vec<usize> = (0..dataset.len())
                .filter(|&i| available[i] && sentence_types[i].contains(&y))
                .collect();
            // Counts are checked above, so candidates can only run out if
            // the counter is already satisfied.
            let pick = candidates[rng.random_range(0..candidates.len())];
            available[pick] = false;
            for &t in &sentence_types[pick] {
                counter[t] += 1;
            }
            selected.push(pick);
        }
    }

    let mut kept: Vec<usize> = Vec::with_capacity(selected.len());
    let mut dropped = BTreeSet::new();
    for &s in &selected {
        for &t in &sentence_types[s] {
            counter[t] -= 1;
        }
        if counter.iter().any(|&c| c < k) {
            for &t in &sentence_types[s] {
                counter[t] += 1;
            }
        } else {
            dropped.insert(s);
        }
    }
    kept.extend(selected.iter().copied().filter(|s| !dropped.contains(s)));
    kept.sort_unstable();
    Ok(kept)
}

/// Train and dev samples; dev is drawn from the sentences not in train,
/// with `seed + 1`. `k_dev == 0` yields an empty dev set.
pub fn sample_train_dev(dataset: &Dataset, spec: &SampleSpec) -> Result<(Dataset, Dataset)> {
    let train_idx = greedy_sample_indices(dataset, spec.k_train, spec.seed)?;
    let train_set: BTreeSet<usize> = train_idx.iter().copied().collect();
    let train = dataset.with_sentences(train_idx.iter().map(|&i| dataset.sentences()[i].clone()).collect())?;
    if spec.k_dev == 0 {
        return Ok((train, dataset.with_sentences(Vec::new())?));
    }
    let rest = dataset.with_sentences(
        dataset
            .sentences()
            .iter()
            .enumerate()
            .filter(|(i, _)| !train_set.contains(i))
            .map(|(_, s)| s.clone())
            .collect(),
    )?;
    let dev = greedy_sample(&rest, spec.k_dev, spec.seed.wrapping_add(1))?;
    Ok((train, dev))
}

/// The `n` most frequent types (ties by name).
pub fn most_frequent_types(dataset: &Dataset, n: usize) -> Vec<String> {
    let mut order = types_by_frequency(dataset);
    order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    order.into_iter().take(n).map(|(t, _)| t).collect()
}

/// Split types and sentences into a source dataset and a target pool.
///
/// The target pool holds every sentence with at least one target-type
/// mention, with source-type mentions removed (they become N.A.). All other
/// sentences form the source dataset, with target-type mentions removed.
pub fn split_class_transfer(dataset: &Dataset, source_types: &[String]) -> Result<TransferSplit> {
    let schema = dataset.schema();
    let source: BTreeSet<String> = source_types.iter().cloned().collect();
    if source.is_empty() {
        return Err(Error::InvalidSplit("no source types".into()));
    }
    for t in &source {
        if schema.index_of(t).is_none() {
            return Err(Error::UnknownType(t.clone()));
        }
    }
    if source.len() >= schema.len() {
        return Err(Error::InvalidSplit("source types cover the whole schema; target schema would be empty".into()));
    }
    let target: BTreeSet<String> = schema.types().iter().filter(|t| !source.contains(*t)).cloned().collect();
    let source_schema = schema.restrict(&source)?;
    let target_schema = schema.restrict(&target)?;

    let mut pool: Vec<Sentence> = Vec::new();
    let mut rest: Vec<Sentence> = Vec::new();
    for s in dataset.sentences() {
        if s.mentions().iter().any(|m| target.contains(&m.label)) {
            pool.push(s.retain_mentions(|m| target.contains(&m.label)));
        } else {
            rest.push(s.retain_mentions(|m| source.contains(&m.label)));
        }
    }
    let split = TransferSplit {
        source_types: source_schema.types().to_vec(),
        target_types: target_schema.types().to_vec(),
        source_data: Dataset::new(source_schema, rest, dataset.paradigm())?,
        target_pool: Dataset::new(target_schema, pool, dataset.paradigm())?,
    };
    split.check_leakage()?;
    Ok(split)
}

impl TransferSplit {
    /// Verify disjoint types, disjoint sentences and absence of cross labels.
    pub fn check_leakage(&self) -> Result<()> {
        let src: BTreeSet<&str> = self.source_types.iter().map(String::as_str).collect();
        let tgt: BTreeSet<&str> = self.target_types.iter().map(String::as_str).collect();
        if let Some(t) = src.intersection(&tgt).next() {
            return Err(Error::Leakage(format!("type `{t}` is both source and target")));
        }
        let src_ids: BTreeSet<&str> = self.source_data.sentences().iter().map(Sentence::id).collect();
        if let Some(s) = self.target_pool.sentences().iter().find(|s| src_ids.contains(s.id())) {
            return Err(Error::Leakage(format!("sentence `{}` in both source and target pool", s.id())));
        }
        assert_labels_within(&self.target_pool, &tgt)?;
        assert_labels_within(&self.source_data, &src)?;
        Ok(())
    }
}

/// Error if any mention of `dataset` carries a label outside `allowed`.
pub fn assert_labels_within(dataset: &Dataset, allowed: &BTreeSet<&str>) -> Result<()> {
    for s in dataset.sentences() {
        if let Some(m) = s.mentions().iter().find(|m| !allowed.contains(m.label.as_str())) {
            return Err(Error::Leakage(format!("sentence `{}` carries out-of-schema label `{}`", s.id(), m.label)));
        }
    }
    Ok(())
}

/// Sentence count, mention count and mean mentions per type.
pub fn sample_stats(subset: &Dataset) -> Result<SampleStats> {
    let schema: &Schema = subset.schema();
    if schema.is_empty() {
        return Err(Error::Empty("schema"));
    }
    let counts = subset.type_counts();
    let total: usize = counts.iter().sum();
    Ok(SampleStats {
        n_sentences: subset.len(),
        n_mentions: subset.n_mentions(),
        avg_shot: total as f64 / schema.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Mention, Paradigm};
    use alloc::string::ToString;
    use alloc::vec;

    fn sent(id: &str, labels: &[&str]) -> Sentence {
        let tokens = (0..labels.len().max(1)).map(|i| alloc::format!("w{i}")).collect();
        let mentions = labels.iter().enumerate().map(|(i, l)| Mention::new(i, i + 1, *l)).collect();
        Sentence::new(id, tokens, mentions).unwrap()
    }

    fn ds(types: &[&str], sentences: Vec<Sentence>) -> Dataset {
        Dataset::new(Schema::new(types.iter().copied()).unwrap(), sentences, Paradigm::SequenceLabeling).unwrap()
    }

    fn ids(d: &Dataset) -> Vec<String> {
        d.sentences().iter().map(|s| s.id().to_string()).collect()
    }

    #[test]
    fn only_feasible_cover_is_returned() {
        let d = ds(&["A", "B"], vec![sent("s1", &["A"]), sent("s2", &["B"])]);
        assert_eq!(ids(&greedy_sample(&d, 1, 0).unwrap()), ["s1", "s2"]);
    }

    #[test]
    fn pruning_removes_redundant_sentence_for_every_order() {
        // B is rarer and processed first, so s3 is always drawn; s1 is then
        // either never drawn or pruned.
        let d = ds(&["A", "B"], vec![sent("s1", &["A"]), sent("s3", &["A", "B"])]);
        for seed in 0..32 {
            assert_eq!(ids(&greedy_sample(&d, 1, seed).unwrap()), ["s3"]);
        }
    }

    #[test]
    fn infeasible_k_names_the_type() {
        let d = ds(&["A", "B"], vec![sent("s1", &["B"])]);
        match greedy_sample(&d, 1, 0) {
            Err(Error::InfeasibleShot { ty, .. }) => assert_eq!(ty, "A"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sampling_is_deterministic_and_dev_disjoint() {
        let sentences = (0..40).map(|i| sent(&alloc::format!("s{i}"), &[["A", "B", "C"][i % 3]])).collect();
        let d = ds(&["A", "B", "C"], sentences);
        let spec = SampleSpec::new(3, 2, 9).unwrap();
        let (t1, d1) = sample_train_dev(&d, &spec).unwrap();
        let (t2, d2) = sample_train_dev(&d, &spec).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(d1, d2);
        let train_ids: BTreeSet<String> = ids(&t1).into_iter().collect();
        assert!(ids(&d1).iter().all(|i| !train_ids.contains(i)));
        assert_eq!(t1.type_counts(), vec![3, 3, 3]);
        assert_eq!(d1.type_counts(), vec![2, 2, 2]);
    }

    #[test]
    fn sample_spec_rejects_bad_shots() {
        assert!(SampleSpec::new(0, 0, 0).is_err());
        assert!(SampleSpec::new(2, 3, 0).is_err());
    }

    #[test]
    fn class_transfer_split_examples() {
        let d = ds(
            &["A", "B", "C"],
            vec![sent("mixed", &["A", "B"]), sent("src", &["A"]), sent("none", &[]), sent("tgt", &["C"])],
        );
        let split = split_class_transfer(&d, &["A".to_string()]).unwrap();
        assert_eq!(split.source_types, ["A"]);
        assert_eq!(split.target_types, ["B", "C"]);
        assert_eq!(ids(&split.target_pool), ["mixed", "tgt"]);
        assert_eq!(split.target_pool.sentences()[0].mentions(), &[Mention::new(1, 2, "B")]);
        assert_eq!(ids(&split.source_data), ["src", "none"]);
        assert_eq!(split.source_data.sentences()[0], d.sentences()[1]);
    }

    #[test]
    fn class_transfer_rejects_full_source() {
        let d = ds(&["A", "B"], vec![sent("s", &["A"])]);
        assert!(split_class_transfer(&d, &["A".to_string(), "B".to_string()]).is_err());
        assert!(split_class_transfer(&d, &[]).is_err());
    }

    #[test]
    fn most_frequent_breaks_ties_by_name() {
        let d = ds(&["C", "B", "A"], vec![sent("s1", &["A", "B"]), sent("s2", &["C", "C"])]);
        assert_eq!(most_frequent_types(&d, 2), ["C", "A"]);
    }

    #[test]
    fn stats_examples() {
        let d = ds(&["A", "B"], vec![sent("s1", &["A", "A", "B"]), sent("s2", &["A", "B"])]);
        let st = sample_stats(&d).unwrap();
        assert_eq!(st.avg_shot, 2.5);
        assert_eq!(st.n_sentences, 2);
        assert_eq!(st.n_mentions, 5);
        let empty = ds(&["A", "B"], vec![]);
        assert_eq!(sample_stats(&empty).unwrap().avg_shot, 0.0);
        let no_schema = ds(&[], vec![]);
        assert!(sample_stats(&no_schema).is_err());
    }
}
