//! Run diagnostics: confidence histograms, output-entropy summaries, and
//! the on-disk metrics formats.
//!
//! Column order in the CSVs is part of the public contract:
//!
//! - epochs CSV: `epoch,train_loss,grad_norm,val_error_pct`
//! - histogram CSV: `bin_lo,bin_hi,count`
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read/write cycle is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::mlp::{self, MlpParams};
use crate::regularizers::RegularizerSpec;
use crate::trainer::{EpochRecord, RunMetrics};

/// Default bin count for max-probability histograms.
pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

/// Histogram of per-example max softmax probabilities over [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceHistogram {
    /// `bins + 1` strictly increasing edges spanning [0, 1].
    pub edges: Vec<f64>,
    /// Counts per bin; the top bin includes its right edge so p = 1 lands
    /// in it.
    pub counts: Vec<u64>,
    pub dataset_tag: String,
    pub model_tag: String,
}

impl ConfidenceHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of examples in the top bin.
    pub fn top_bin_fraction(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        *self.counts.last().expect("at least one bin") as f64 / total as f64
    }
}

/// Runs an eval-mode forward pass over a feature split and histograms the
/// per-example max softmax probability into `bins` uniform bins on [0, 1].
pub fn max_prob_histogram(
    params: &MlpParams,
    features: ArrayView2<f64>,
    bins: usize,
) -> Result<ConfidenceHistogram> {
    if bins < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 bins, got {bins}"
        )));
    }
    if features.nrows() == 0 {
        return Err(Error::InvalidInput("empty split".to_string()));
    }
    let mut counts = vec![0u64; bins];
    for_each_eval_row(params, features, |lp| {
        let max_p = lp
            .iter()
            .map(|&l| l.exp())
            .fold(f64::NEG_INFINITY, f64::max);
        let idx = ((max_p * bins as f64) as usize).min(bins - 1);
        counts[idx] += 1;
    })?;
    let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    Ok(ConfidenceHistogram {
        edges,
        counts,
        dataset_tag: String::new(),
        model_tag: String::new(),
    })
}

/// Summary statistics of the per-example output entropy (nats).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyStats {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// Per-example entropy of the eval-mode output distribution over a split.
pub fn entropy_stats(params: &MlpParams, features: ArrayView2<f64>) -> Result<EntropyStats> {
    if features.nrows() == 0 {
        return Err(Error::InvalidInput("empty split".to_string()));
    }
    let mut entropies = Vec::with_capacity(features.nrows());
    for_each_eval_row(params, features, |lp| {
        entropies.push(math::entropy_from_log_probs(lp));
    })?;
    let mut sorted = entropies.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite entropies"));
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(EntropyStats {
        mean: entropies.iter().sum::<f64>() / n as f64,
        median,
        min: sorted[0],
        max: sorted[n - 1],
        count: n,
    })
}

fn for_each_eval_row(
    params: &MlpParams,
    features: ArrayView2<f64>,
    mut f: impl FnMut(&[f64]),
) -> Result<()> {
    let n = features.nrows();
    let chunk = 512;
    let k = params.arch().classes;
    let mut lp = vec![0.0; k];
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let logits = mlp::forward_eval(params, features.slice(ndarray::s![start..end, ..]))?;
        for row in logits.outer_iter() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            for (o, &v) in lp.iter_mut().zip(row.iter()) {
                *o = v - lse;
            }
            f(&lp);
        }
        start = end;
    }
    Ok(())
}

/// Mean per-epoch gradient norm over the final `n` recorded epochs.
pub fn mean_grad_norm_last_epochs(metrics: &RunMetrics, n: usize) -> f64 {
    let records = &metrics.epochs;
    let take = n.min(records.len());
    if take == 0 {
        return 0.0;
    }
    records[records.len() - take..]
        .iter()
        .map(|r| r.grad_norm)
        .sum::<f64>()
        / take as f64
}

/// The self-describing summary record written next to the epochs CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub schema_version: u32,
    pub test_error_pct: Option<f64>,
    pub best_epoch: usize,
    pub best_val_error_pct: Option<f64>,
    pub epochs_run: usize,
    pub seed: u64,
    pub regularizer: RegularizerSpec,
    pub hyperparams: Hyperparams,
}

/// Scalar hyperparameters echoed into the summary record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub clip_norm: Option<f64>,
    pub dropout_keep_prob: Option<f64>,
}

impl RunSummary {
    pub fn new(config: &crate::trainer::TrainConfig, metrics: &RunMetrics) -> Self {
        Self {
            schema_version: 1,
            test_error_pct: metrics.test_error_pct,
            best_epoch: metrics.best_epoch,
            best_val_error_pct: metrics.best_val_error_pct,
            epochs_run: metrics.epochs_run,
            seed: config.seed,
            regularizer: config.regularizer.clone(),
            hyperparams: Hyperparams {
                learning_rate: config.learning_rate,
                max_epochs: config.max_epochs,
                batch_size: config.batch_size,
                early_stop_patience: config.early_stop_patience,
                clip_norm: config.clip_norm,
                dropout_keep_prob: config.dropout_keep_prob,
            },
        }
    }
}

/// Header line of the per-epoch CSV.
pub const RUN_CSV_HEADER: &str = "epoch,train_loss,grad_norm,val_error_pct";

/// One CSV row (no newline) for an epoch record. An empty validation
/// column means the run had no validation split.
pub fn epoch_csv_line(r: &EpochRecord) -> String {
    let val = r.val_error_pct.map(|v| v.to_string()).unwrap_or_default();
    format!("{},{},{},{}", r.epoch, r.train_loss, r.grad_norm, val)
}

/// Renders the full per-epoch CSV.
pub fn run_csv_string(records: &[EpochRecord]) -> String {
    let mut out = String::from(RUN_CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{}", epoch_csv_line(r)).expect("writing to string cannot fail");
    }
    out
}

/// Parses a CSV produced by [`run_csv_string`].
pub fn parse_run_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty CSV".to_string()))?;
    if header != RUN_CSV_HEADER {
        return Err(Error::InvalidInput(format!("unexpected header {header:?}")));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::InvalidInput(format!(
                "line {}: expected 4 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                Error::InvalidInput(format!("line {}: bad {what} {s:?}", i + 2))
            })
        };
        records.push(EpochRecord {
            epoch: fields[0]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("line {}: bad epoch", i + 2)))?,
            train_loss: parse(fields[1], "train_loss")?,
            grad_norm: parse(fields[2], "grad_norm")?,
            val_error_pct: if fields[3].is_empty() {
                None
            } else {
                Some(parse(fields[3], "val_error_pct")?)
            },
        });
    }
    Ok(records)
}

/// Renders the histogram CSV.
pub fn histogram_csv_string(hist: &ConfidenceHistogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, &count) in hist.counts.iter().enumerate() {
        writeln!(out, "{},{},{}", hist.edges[i], hist.edges[i + 1], count)
            .expect("writing to string cannot fail");
    }
    out
}

/// Parses a CSV produced by [`histogram_csv_string`]. Tags are not stored
/// in the CSV and come back empty.
pub fn parse_histogram_csv(text: &str) -> Result<ConfidenceHistogram> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty CSV".to_string()))?;
    if header != "bin_lo,bin_hi,count" {
        return Err(Error::InvalidInput(format!("unexpected header {header:?}")));
    }
    let mut edges: Vec<f64> = Vec::new();
    let mut counts = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "line {}: expected 3 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let lo: f64 = fields[0]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("line {}: bad bin_lo", i + 2)))?;
        let hi: f64 = fields[1]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("line {}: bad bin_hi", i + 2)))?;
        let count: u64 = fields[2]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("line {}: bad count", i + 2)))?;
        if edges.is_empty() {
            edges.push(lo);
        } else if *edges.last().expect("non-empty") != lo {
            return Err(Error::InvalidInput(format!(
                "line {}: bins are not contiguous",
                i + 2
            )));
        }
        edges.push(hi);
        counts.push(count);
    }
    if counts.is_empty() {
        return Err(Error::InvalidInput("histogram CSV has no bins".to_string()));
    }
    Ok(ConfidenceHistogram {
        edges,
        counts,
        dataset_tag: String::new(),
        model_tag: String::new(),
    })
}

/// Writes a run's artifacts into `dir`: `epochs.csv`, `summary.json`, and
/// `histogram.csv` when a histogram is given (omitted cleanly otherwise).
pub fn write_metrics<P: AsRef<Path>>(
    dir: P,
    metrics: &RunMetrics,
    summary: &RunSummary,
    histogram: Option<&ConfidenceHistogram>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("epochs.csv"), run_csv_string(&metrics.epochs))?;
    let mut json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::InvalidState(format!("summary serialization failed: {e}")))?;
    json.push('\n');
    std::fs::write(dir.join("summary.json"), json)?;
    if let Some(hist) = histogram {
        std::fs::write(dir.join("histogram.csv"), histogram_csv_string(hist))?;
    }
    Ok(())
}
