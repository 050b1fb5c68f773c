//! Experiment grids over method configurations and seeds.

use std::fmt::Write as _;

use protoed_core::eval::{aggregate_runs, SeedScore};
use protoed_core::method::MethodConfig;
use protoed_core::training::{run_class_transfer, run_low_resource, RunOutcome, TrainOptions};
use serde::Serialize;

use crate::bench::{Benchmark, TransferBenchmark};
use crate::config::SamplingConfig;
use crate::error::Result;
use crate::runlog::{RunLog, RunRecord};

/// A named method configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct GridEntry {
    pub id: String,
    pub method: MethodConfig,
}

impl GridEntry {
    /// Parse a preset name or a raw `key=value,...` form; the id is the text.
    pub fn parse(text: &str) -> Result<Self> {
        Ok(GridEntry { id: text.to_string(), method: text.parse()? })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellRun {
    pub seed: u64,
    pub lr: f64,
    pub dev_f1: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Aggregate of one grid cell over seeds; failed seeds are kept aside.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub id: String,
    pub runs: Vec<CellRun>,
    pub failures: Vec<(u64, String)>,
    pub mean_f1: Option<f64>,
    pub std_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridTable {
    pub rows: Vec<GridRow>,
}

impl GridTable {
    pub fn row(&self, id: &str) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn n_failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures.len()).sum()
    }

    /// Plain-text table: id, runs, mean F1, sample std, failures.
    pub fn render(&self) -> String {
        let w = self.rows.iter().map(|r| r.id.len()).max().unwrap_or(2).max(6);
        let mut out = format!("{:<w$}  {:>4}  {:>7}  {:>7}  {:>6}\n", "config", "runs", "mean_f1", "std_f1", "failed");
        let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<w$}  {:>4}  {:>7}  {:>7}  {:>6}",
                r.id,
                r.runs.len(),
                fmt(r.mean_f1),
                fmt(r.std_f1),
                r.failures.len()
            );
        }
        out
    }
}

fn row_from(id: String, runs: Vec<CellRun>, failures: Vec<(u64, String)>) -> GridRow {
    let f1s: Vec<f64> = runs.iter().map(|r| r.f1).collect();
    let (mean_f1, std_f1) = match aggregate_runs(&f1s) {
        Ok((m, s)) => (Some(m), s),
        Err(_) => (None, None),
    };
    GridRow { id, runs, failures, mean_f1, std_f1 }
}

/// Logging context of a grid.
pub struct GridLog<'a> {
    pub log: &'a RunLog,
    pub config_hash: &'a str,
}

/// Run `run(cell, seed)` for every cell and seed. A failing run is
/// recorded in its row and the grid continues.
pub fn run_cells<F>(ids: &[String], methods: &[String], seeds: &[u64], log: Option<&GridLog>, mut run: F) -> Result<GridTable>
where
    F: FnMut(usize, u64) -> protoed_core::Result<RunOutcome>,
{
    let mut rows = Vec::with_capacity(ids.len());
    for (c, id) in ids.iter().enumerate() {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for &seed in seeds {
            let outcome = run(c, seed);
            let mut record = RunRecord {
                config_hash: log.map(|l| l.config_hash.to_string()).unwrap_or_default(),
                cell: id.clone(),
                method: methods[c].clone(),
                seed,
                lr: None,
                dev_f1: None,
                precision: None,
                recall: None,
                f1: None,
                error: None,
            };
            match outcome {
                Ok(o) => {
                    let SeedScore { precision, recall, f1, .. } = o.score;
                    record.lr = Some(o.lr);
                    record.dev_f1 = o.dev_f1;
                    record.precision = Some(precision);
                    record.recall = Some(recall);
                    record.f1 = Some(f1);
                    runs.push(CellRun { seed, lr: o.lr, dev_f1: o.dev_f1, precision, recall, f1 });
                }
                Err(e) => {
                    record.error = Some(e.to_string());
                    failures.push((seed, e.to_string()));
                }
            }
            if let Some(l) = log {
                l.log.append(&record)?;
            }
        }
        rows.push(row_from(id.clone(), runs, failures));
    }
    Ok(GridTable { rows })
}

/// Low-resource grid: every entry on every seed's few-shot sample.
pub fn grid(
    entries: &[GridEntry],
    seeds: &[u64],
    bench: &Benchmark,
    sampling: SamplingConfig,
    options: &TrainOptions,
    log: Option<&GridLog>,
) -> Result<GridTable> {
    let ids: Vec<String> = entries.iter().map(|e| e.id.clone()).collect();
    let methods: Vec<String> = entries.iter().map(|e| e.method.to_string()).collect();
    run_cells(&ids, &methods, seeds, log, |c, seed| {
        let (train, dev) = bench.sample(sampling.k_train, sampling.k_dev, seed).map_err(core_error)?;
        run_low_resource(&entries[c].method, &train, &dev, &bench.test, options, seed, None)
    })
}

/// Id of a transfer cell.
pub fn transfer_cell_id(source: Option<&GridEntry>, target: &GridEntry) -> String {
    format!("{} -> {}", source.map_or("none", |s| s.id.as_str()), target.id)
}

/// Class-transfer grid over `sources x targets`; a `None` source trains
/// the target from scratch.
pub fn transfer_grid(
    sources: &[Option<GridEntry>],
    targets: &[GridEntry],
    seeds: &[u64],
    bench: &TransferBenchmark,
    sampling: SamplingConfig,
    options: &TrainOptions,
    log: Option<&GridLog>,
) -> Result<GridTable> {
    let pairs: Vec<(Option<&GridEntry>, &GridEntry)> =
        sources.iter().flat_map(|s| targets.iter().map(move |t| (s.as_ref(), t))).collect();
    let ids: Vec<String> = pairs.iter().map(|(s, t)| transfer_cell_id(*s, t)).collect();
    let methods: Vec<String> = pairs
        .iter()
        .map(|(s, t)| format!("{} -> {}", s.map_or("none".into(), |s| s.method.to_string()), t.method))
        .collect();
    run_cells(&ids, &methods, seeds, log, |c, seed| {
        let (s, t) = pairs[c];
        let (train, dev) = bench.sample(sampling.k_train, sampling.k_dev, seed).map_err(core_error)?;
        run_class_transfer(s.map(|s| &s.method), &t.method, &bench.split, &train, &dev, &bench.test, options, seed)
    })
}

fn core_error(e: crate::error::Error) -> protoed_core::Error {
    match e {
        crate::error::Error::Core(c) => c,
        other => protoed_core::Error::InvalidConfig(other.to_string()),
    }
}
