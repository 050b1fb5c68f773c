//! Synthetic benchmarks: a fixed few-shot pool and test set, with per-seed
//! train/dev samples.

use protoed_core::corpus::Dataset;
use protoed_core::sampler::{most_frequent_types, sample_train_dev, split_class_transfer, SampleSpec, TransferSplit};
use protoed_core::synthetic::{gen_synthetic, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSpec {
    pub n_types: usize,
    pub pool_sentences: usize,
    pub test_sentences: usize,
    pub vocab_size: usize,
    pub pool_size: usize,
    pub distractor_rate: f64,
    pub second_trigger_rate: f64,
    pub phrase_rate: f64,
    /// Seed of the pool corpus; the test corpus uses `seed + 1`.
    pub seed: u64,
    /// Source types of the class-transfer split (most frequent first).
    pub n_source_types: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        BenchSpec {
            n_types: 10,
            pool_sentences: 1000,
            test_sentences: 2000,
            vocab_size: 50,
            pool_size: s.pool_size,
            distractor_rate: s.distractor_rate,
            second_trigger_rate: s.second_trigger_rate,
            phrase_rate: s.phrase_rate,
            seed: 100,
            n_source_types: 6,
        }
    }
}

impl BenchSpec {
    pub fn synthetic(&self, n_sentences: usize, seed: u64, prefix: &str) -> SyntheticSpec {
        SyntheticSpec {
            n_types: self.n_types,
            n_sentences,
            vocab_size: self.vocab_size,
            pool_size: self.pool_size,
            distractor_rate: self.distractor_rate,
            second_trigger_rate: self.second_trigger_rate,
            phrase_rate: self.phrase_rate,
            id_prefix: prefix.into(),
            seed,
            ..SyntheticSpec::default()
        }
    }
}

/// Low-resource benchmark: few-shot samples are drawn from `pool`.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub pool: Dataset,
    pub test: Dataset,
}

impl Benchmark {
    pub fn synthetic(spec: &BenchSpec) -> Result<Self> {
        Ok(Benchmark {
            pool: gen_synthetic(&spec.synthetic(spec.pool_sentences, spec.seed, "pool"))?,
            test: gen_synthetic(&spec.synthetic(spec.test_sentences, spec.seed + 1, "test"))?,
        })
    }

    pub fn sample(&self, k_train: usize, k_dev: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        Ok(sample_train_dev(&self.pool, &SampleSpec::new(k_train, k_dev, seed)?)?)
    }
}

/// Class-transfer benchmark: a source/target split of the pool and the
/// target part of a separate test corpus.
#[derive(Clone, Debug)]
pub struct TransferBenchmark {
    pub split: TransferSplit,
    pub test: Dataset,
}

impl TransferBenchmark {
    pub fn synthetic(spec: &BenchSpec) -> Result<Self> {
        let base = Benchmark::synthetic(spec)?;
        let source = most_frequent_types(&base.pool, spec.n_source_types);
        let split = split_class_transfer(&base.pool, &source)?;
        let test = split_class_transfer(&base.test, &source)?.target_pool;
        Ok(TransferBenchmark { split, test })
    }

    pub fn sample(&self, k_train: usize, k_dev: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        Ok(sample_train_dev(&self.split.target_pool, &SampleSpec::new(k_train, k_dev, seed)?)?)
    }
}
