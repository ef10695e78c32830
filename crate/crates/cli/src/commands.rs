//! The four subcommands: train, gridsearch, gradcheck, histogram.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use outreg::gradcheck::{self, CheckOptions};
use outreg::mlp;
use outreg::regularizers::RegularizerSpec;
use outreg::reporting::{self, RunSummary};
use outreg::trainer;
use outreg::{Error, LabeledDataset, Result};

use crate::config::{spec_slug, ExperimentConfig};

/// Threshold the gradcheck command enforces on every report.
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

pub struct RunOverrides {
    pub out_dir: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub threads: usize,
    pub dry_run: bool,
}

fn apply_overrides(config: &mut ExperimentConfig, overrides: &RunOverrides) {
    if let Some(out) = &overrides.out_dir {
        config.out_dir = out.clone();
    }
    if let Some(seeds) = &overrides.seeds {
        config.seeds = seeds.clone();
    }
}

fn print_resolved(config: &ExperimentConfig) -> Result<()> {
    let mut rendered = serde_json::to_value(config)
        .map_err(|e| Error::InvalidState(format!("config serialization failed: {e}")))?;
    if let Some(root) = config.resolved_data_root()? {
        rendered["dataset"]["root"] = serde_json::Value::String(root.display().to_string());
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&rendered).expect("valid JSON value")
    );
    Ok(())
}

struct Job {
    seed: u64,
    spec: RegularizerSpec,
    dir: PathBuf,
    label: String,
    /// Grid point index; 0 for plain training runs.
    point: usize,
}

/// Runs jobs across a small worker pool. Each job writes only inside its
/// own directory, so concurrent execution cannot interleave outputs.
fn run_jobs(
    jobs: &[Job],
    threads: usize,
    config: &ExperimentConfig,
    dataset: &LabeledDataset,
) -> Vec<Result<RunSummary>> {
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<RunSummary>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let workers = threads.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= jobs.len() {
                    break;
                }
                let outcome = run_one(&jobs[idx], config, dataset);
                *results[idx].lock().expect("no poisoned job slot") = Some(outcome);
            });
        }
    });
    results
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("no poisoned job slot")
                .expect("every job ran")
        })
        .collect()
}

fn run_one(job: &Job, config: &ExperimentConfig, dataset: &LabeledDataset) -> Result<RunSummary> {
    use std::io::Write as _;
    let train_config = config.train_config(job.spec.clone(), job.seed);

    // Stream each epoch's record to epochs.csv as it completes, so long
    // runs can be monitored (and partial telemetry survives divergence).
    std::fs::create_dir_all(&job.dir)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(job.dir.join("epochs.csv"))?);
    writeln!(csv, "{}", reporting::RUN_CSV_HEADER)?;
    let mut stream_error = None;
    let result = trainer::train_run_observed(
        &train_config,
        dataset,
        &config.architecture,
        |record| {
            let line = reporting::epoch_csv_line(record);
            if let Err(e) = writeln!(csv, "{line}").and_then(|()| csv.flush()) {
                stream_error.get_or_insert(e);
            }
        },
    );
    let (params, metrics) = result?;
    if let Some(e) = stream_error {
        return Err(e.into());
    }
    drop(csv);

    let summary = RunSummary::new(&train_config, &metrics);
    let mut json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::InvalidState(format!("summary serialization failed: {e}")))?;
    json.push('\n');
    std::fs::write(job.dir.join("summary.json"), json)?;
    mlp::save_checkpoint(job.dir.join("checkpoint.bin"), &params)?;
    eprintln!(
        "{}: best val {} at epoch {}, test {}",
        job.label,
        fmt_pct(summary.best_val_error_pct),
        summary.best_epoch,
        fmt_pct(summary.test_error_pct),
    );
    Ok(summary)
}

fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.2}%"),
        None => "n/a".to_string(),
    }
}

/// `train`: one run per seed, each writing epochs.csv, summary.json, and
/// checkpoint.bin under `<out_dir>/seed_<s>/`.
pub fn cmd_train(config_path: &Path, overrides: &RunOverrides) -> Result<()> {
    let mut config = ExperimentConfig::load(config_path)?;
    apply_overrides(&mut config, overrides);
    config.validate()?;
    let spec = config.train_regularizer()?;
    if overrides.dry_run {
        return print_resolved(&config);
    }
    // Load data before creating any outputs: a bad data path must not
    // leave a partially written out_dir behind.
    let dataset = config.load_dataset()?;
    let jobs: Vec<Job> = config
        .seeds
        .iter()
        .map(|&seed| Job {
            seed,
            spec: spec.clone(),
            dir: config.out_dir.join(format!("seed_{seed}")),
            label: format!("seed {seed}"),
            point: 0,
        })
        .collect();
    let results = run_jobs(&jobs, overrides.threads, &config, &dataset);
    for result in results {
        result?;
    }
    Ok(())
}

/// `gridsearch`: every grid point × seed (resuming past completed runs),
/// then a ranked table and a ready-to-run config for the best point.
pub fn cmd_gridsearch(config_path: &Path, overrides: &RunOverrides) -> Result<()> {
    let mut config = ExperimentConfig::load(config_path)?;
    apply_overrides(&mut config, overrides);
    config.validate()?;
    let grid = config.grid_specs()?;
    if overrides.dry_run {
        return print_resolved(&config);
    }
    let dataset = config.load_dataset()?;

    let mut jobs = Vec::new();
    let mut completed: Vec<(usize, u64, RunSummary)> = Vec::new();
    for (point, spec) in grid.iter().enumerate() {
        for &seed in &config.seeds {
            let dir = config
                .out_dir
                .join("grid")
                .join(format!("point_{point:02}_{}", spec_slug(spec)))
                .join(format!("seed_{seed}"));
            let summary_path = dir.join("summary.json");
            if summary_path.is_file() {
                // Resume: trust the existing artifact instead of retraining.
                let text = std::fs::read_to_string(&summary_path)?;
                let summary: RunSummary = serde_json::from_str(&text).map_err(|e| {
                    Error::InvalidState(format!(
                        "unreadable summary {}: {e}",
                        summary_path.display()
                    ))
                })?;
                eprintln!("point {point} seed {seed}: already complete, skipping");
                completed.push((point, seed, summary));
            } else {
                jobs.push(Job {
                    seed,
                    spec: spec.clone(),
                    dir,
                    label: format!("point {point} ({}) seed {seed}", spec_slug(spec)),
                    point,
                });
            }
        }
    }

    let mut failures: Vec<(String, Error)> = Vec::new();
    let job_results = run_jobs(&jobs, overrides.threads, &config, &dataset);
    for (job, result) in jobs.iter().zip(job_results) {
        match result {
            Ok(summary) => completed.push((job.point, job.seed, summary)),
            Err(e) => failures.push((job.label.clone(), e)),
        }
    }
    for (label, error) in &failures {
        eprintln!("{label} failed: {error}");
    }

    // Rank points by mean validation error over their completed seeds;
    // points missing seeds rank after fully completed ones.
    let mut rows: Vec<GridRow> = grid
        .iter()
        .enumerate()
        .map(|(point, spec)| {
            let vals: Vec<f64> = completed
                .iter()
                .filter(|(p, _, s)| *p == point && s.best_val_error_pct.is_some())
                .map(|(_, _, s)| s.best_val_error_pct.expect("filtered"))
                .collect();
            GridRow {
                point,
                spec: spec.clone(),
                completed_seeds: vals.len(),
                mean_val_error_pct: if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                },
            }
        })
        .collect();
    let full = config.seeds.len();
    rows.sort_by(|a, b| {
        let a_complete = a.completed_seeds == full;
        let b_complete = b.completed_seeds == full;
        b_complete
            .cmp(&a_complete)
            .then_with(|| match (a.mean_val_error_pct, b.mean_val_error_pct) {
                (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            })
            .then_with(|| a.point.cmp(&b.point))
    });

    let mut table = String::from("rank,point,regularizer,mean_val_error_pct,completed_seeds\n");
    for (rank, row) in rows.iter().enumerate() {
        let mean = row
            .mean_val_error_pct
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(
            table,
            "{},{},{},{},{}",
            rank + 1,
            row.point,
            spec_slug(&row.spec),
            mean,
            row.completed_seeds
        )
        .expect("writing to string cannot fail");
    }
    std::fs::create_dir_all(&config.out_dir)?;
    std::fs::write(config.out_dir.join("grid_results.csv"), &table)?;
    print!("{table}");

    let best = rows
        .iter()
        .find(|r| r.completed_seeds == full && r.mean_val_error_pct.is_some());
    match best {
        Some(row) => {
            let mut best_config = config.clone();
            best_config.regularizer = Some(row.spec.clone());
            best_config.grid = None;
            best_config.out_dir = config.out_dir.join("best_run");
            let mut json = serde_json::to_string_pretty(&best_config)
                .map_err(|e| Error::InvalidState(format!("config serialization failed: {e}")))?;
            json.push('\n');
            std::fs::write(config.out_dir.join("best_config.json"), json)?;
            eprintln!(
                "best: point {} ({}) mean val error {}",
                row.point,
                spec_slug(&row.spec),
                fmt_pct(row.mean_val_error_pct)
            );
            Ok(())
        }
        None => Err(failures
            .into_iter()
            .next()
            .map(|(_, e)| e)
            .unwrap_or_else(|| {
                Error::InvalidState("no grid point completed on all seeds".to_string())
            })),
    }
}

struct GridRow {
    point: usize,
    spec: RegularizerSpec,
    completed_seeds: usize,
    mean_val_error_pct: Option<f64>,
}

/// `gradcheck`: the finite-difference oracle suite. Prints the worst
/// relative error per check; any check at or above the threshold fails
/// the command.
pub fn cmd_gradcheck(opts: &CheckOptions) -> Result<bool> {
    let reports = gradcheck::default_suite(opts)?;
    let mut all_pass = true;
    for report in &reports {
        let pass = report.passes(GRADCHECK_THRESHOLD);
        all_pass &= pass;
        println!(
            "{:<55} instances {:>4}  max rel err {:>10.3e}  {}",
            report.name,
            report.instances,
            report.max_rel_err,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(all_pass)
}

/// `histogram`: eval-mode confidence histogram and entropy summary of a
/// checkpoint over one split of the configured dataset.
pub fn cmd_histogram(
    checkpoint: &Path,
    config_path: &Path,
    split: &str,
    bins: usize,
    out_dir: &Path,
) -> Result<()> {
    let params = mlp::load_checkpoint(checkpoint)?;
    let config = ExperimentConfig::load(config_path)?;
    config.validate()?;
    let dataset = config.load_dataset()?;
    let range = match split {
        "train" => dataset.splits().train.clone(),
        "val" => dataset.splits().val.clone(),
        "test" => dataset.splits().test.clone(),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown split {other:?}; expected train, val, or test"
            )))
        }
    };
    if range.is_empty() {
        return Err(Error::InvalidInput(format!("split {split:?} is empty")));
    }
    let features = dataset.split_features(&range);
    let mut hist = reporting::max_prob_histogram(&params, features, bins)?;
    hist.dataset_tag = split.to_string();
    hist.model_tag = checkpoint
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stats = reporting::entropy_stats(&params, features)?;

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("histogram.csv"),
        reporting::histogram_csv_string(&hist),
    )?;
    let mut json = serde_json::to_string_pretty(&stats)
        .map_err(|e| Error::InvalidState(format!("stats serialization failed: {e}")))?;
    json.push('\n');
    std::fs::write(out_dir.join("entropy_stats.json"), json)?;
    println!(
        "{} examples, top-bin fraction {:.4}, mean entropy {:.4} nats",
        hist.total(),
        hist.top_bin_fraction(),
        stats.mean
    );
    Ok(())
}
