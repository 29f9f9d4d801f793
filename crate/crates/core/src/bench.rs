//! Parameter sweeps over (method, f, ε) and their CSV reports.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::corpus::{split_queries, Corpus};
use crate::error::{Error, Result};
use crate::oracle::{compare_results, oracle_detect, ResultDiff};
use crate::par::ExecMode;
use crate::protocol::{
    run_local, DetectionReport, LocalRunOptions, MatrixCache, QueryDoc, SessionConfig,
};
use crate::select::SelectionMethod;

pub const CSV_HEADER: [&str; 11] = [
    "method",
    "f",
    "epsilon",
    "pairs_total",
    "pairs_filtered",
    "filter_ratio",
    "full_products",
    "bytes_sent_alice",
    "bytes_sent_bob",
    "wall_ms",
    "similar_pairs",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: SelectionMethod,
    pub f: usize,
    pub epsilon: f64,
    pub pairs_total: u64,
    pub pairs_filtered: u64,
    pub filter_ratio: f64,
    pub full_products: u64,
    pub bytes_sent_alice: u64,
    pub bytes_sent_bob: u64,
    /// Summed over all queries.
    pub wall_ms: f64,
    pub similar_pairs: u64,
}

impl BenchRow {
    pub fn from_report(report: &DetectionReport) -> Self {
        let m = &report.metrics;
        Self {
            method: report.method,
            f: report.f,
            epsilon: report.epsilon,
            pairs_total: m.pairs_total,
            pairs_filtered: m.pairs_filtered,
            filter_ratio: m.filter_ratio(),
            full_products: m.full_products,
            bytes_sent_alice: m.bytes_sent_alice,
            bytes_sent_bob: m.bytes_sent_bob,
            wall_ms: report
                .query_times
                .iter()
                .map(|d| d.as_secs_f64() * 1e3)
                .sum(),
            similar_pairs: report.similar_pairs().len() as u64,
        }
    }

    fn record(&self) -> [String; 11] {
        [
            self.method.to_string(),
            self.f.to_string(),
            self.epsilon.to_string(),
            self.pairs_total.to_string(),
            self.pairs_filtered.to_string(),
            format!("{:.6}", self.filter_ratio),
            self.full_products.to_string(),
            self.bytes_sent_alice.to_string(),
            self.bytes_sent_bob.to_string(),
            format!("{:.3}", self.wall_ms),
            self.similar_pairs.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

fn row_order(a: &BenchRow, b: &BenchRow) -> std::cmp::Ordering {
    a.method
        .cmp(&b.method)
        .then(a.f.cmp(&b.f))
        .then(a.epsilon.total_cmp(&b.epsilon))
}

impl BenchReport {
    /// Orders rows by method, then f, then ε.
    pub fn sort(&mut self) {
        self.rows.sort_by(row_order);
    }
}

pub fn write_report_csv_to<W: Write>(report: &BenchReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    let mut rows: Vec<&BenchRow> = report.rows.iter().collect();
    rows.sort_by(|a, b| row_order(a, b));
    for row in rows {
        w.write_record(row.record()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_csv(report: &BenchReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_report_csv_to(report, std::io::BufWriter::new(file))
}

/// `⌈pct/100 · n⌉`, at least 1 and at most `n`.
pub fn dims_from_pct(pct: f64, n: usize) -> Result<usize> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::range(format!(
            "dimension percentage {pct} outside (0, 100]"
        )));
    }
    let f = (pct / 100.0 * n as f64 - 1e-9).ceil() as usize;
    Ok(f.clamp(1, n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchGrid {
    pub methods: Vec<SelectionMethod>,
    pub dims: Vec<usize>,
    pub tolerances: Vec<f64>,
    pub queries: usize,
    pub seed: u64,
    pub overlap: bool,
}

/// A grid cell whose similar-pair set disagreed with the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMismatch {
    pub method: SelectionMethod,
    pub f: usize,
    pub epsilon: f64,
    pub diff: ResultDiff,
}

#[derive(Debug, Clone, Default)]
pub struct BenchOutcome {
    pub report: BenchReport,
    pub runs: Vec<DetectionReport>,
    pub mismatches: Vec<CellMismatch>,
}

/// Splits off the query documents and returns them with Bob's targets.
pub fn prepare_parties(
    corpus: &Corpus,
    queries: usize,
    seed: u64,
    overlap: bool,
) -> Result<(Vec<QueryDoc>, Arc<Vec<crate::vector::DocumentVector>>)> {
    let split = split_queries(corpus.len(), queries, seed, overlap)?;
    let alice = split
        .queries
        .iter()
        .map(|&i| QueryDoc::from_corpus(corpus, i))
        .collect();
    let bob = split
        .targets
        .iter()
        .map(|&i| corpus.vectors()[i].clone())
        .collect();
    Ok((alice, Arc::new(bob)))
}

/// Runs every cell in-process, sequentially, checking each against the oracle.
///
/// BASE has no `f`; it gets one cell per ε with `f = n`.
pub fn run_grid(corpus: &Corpus, grid: &BenchGrid, exec: ExecMode) -> Result<BenchOutcome> {
    let n = corpus.vocabulary_size();
    let (queries, targets) = prepare_parties(corpus, grid.queries, grid.seed, grid.overlap)?;
    let alice_vectors: Vec<_> = queries.iter().map(|q| q.vector.clone()).collect();
    let cache = MatrixCache::new();
    let opts = LocalRunOptions {
        mask_seed: grid.seed ^ 0xa11ce,
        exec,
        cache: Some(cache),
    };

    let mut outcome = BenchOutcome::default();
    for &epsilon in &grid.tolerances {
        let oracle = oracle_detect(&alice_vectors, &targets, epsilon, exec)?;
        for &method in &grid.methods {
            let dims: Vec<usize> = if method.filters() {
                grid.dims.clone()
            } else {
                vec![n]
            };
            for f in dims {
                let config = SessionConfig::new(n, f, method, epsilon).with_seed(grid.seed);
                let report = run_local(&config, &queries, Arc::clone(&targets), &opts)?;
                if report.aborted {
                    return Err(Error::Session(format!(
                        "{method} f={f} ε={epsilon}: {}",
                        report.error.as_deref().unwrap_or("aborted")
                    )));
                }
                let diff = compare_results(&report, &oracle);
                if !diff.is_empty() {
                    outcome.mismatches.push(CellMismatch {
                        method,
                        f,
                        epsilon,
                        diff,
                    });
                }
                outcome.report.rows.push(BenchRow::from_report(&report));
                outcome.runs.push(report);
            }
        }
    }
    outcome.report.sort();
    Ok(outcome)
}
