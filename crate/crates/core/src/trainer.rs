//! SGD training loop with early stopping, gradient-norm telemetry, and a
//! grid-search driver.
//!
//! A run is deterministic in (config, seed): the master seed feeds
//! separate streams for parameter init, per-epoch shuffling, dropout
//! masks, and label noise, so identical configs replay bit-identical
//! metrics.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};
use crate::mlp::{self, Architecture, DropoutSampler, Gradients, MlpParams};
use crate::regularizers::{self, RegularizerKind, RegularizerSpec};

/// Hyperparameters of a single training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Stop after this many consecutive epochs without a validation
    /// improvement.
    pub early_stop_patience: usize,
    /// Optional global-norm gradient clipping threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    /// Keep probability for inverted dropout on hidden activations;
    /// `None` disables dropout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_keep_prob: Option<f64>,
    pub regularizer: RegularizerSpec,
    pub seed: u64,
}

impl TrainConfig {
    /// A config with the defaults used throughout: 100 epochs, batch 64,
    /// patience 10, no clipping, no dropout.
    pub fn new(learning_rate: f64, regularizer: RegularizerSpec, seed: u64) -> Self {
        Self {
            learning_rate,
            max_epochs: 100,
            batch_size: 64,
            early_stop_patience: 10,
            clip_norm: None,
            dropout_keep_prob: None,
            regularizer,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".to_string()));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::InvalidConfig(
                "early-stop patience must be at least 1".to_string(),
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".to_string()));
        }
        if let Some(clip) = self.clip_norm {
            if !clip.is_finite() || clip <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "clip norm must be positive, got {clip}"
                )));
            }
        }
        if let Some(keep) = self.dropout_keep_prob {
            if !keep.is_finite() || keep <= 0.0 || keep > 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "dropout keep probability must lie in (0, 1], got {keep}"
                )));
            }
        }
        Ok(())
    }
}

/// One completed epoch of telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the epoch, nats.
    pub train_loss: f64,
    /// Mean per-step global gradient norm over the epoch (pre-clip).
    pub grad_norm: f64,
    /// Validation error in percent; `None` when the validation split is
    /// empty.
    pub val_error_pct: Option<f64>,
}

/// Everything a run reports: per-epoch telemetry plus final summary
/// quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    /// Test error of the best-validation parameters, percent; `None`
    /// when the test split is empty.
    pub test_error_pct: Option<f64>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_error_pct: Option<f64>,
    pub epochs_run: usize,
    pub wall_time_secs: f64,
}

/// w ← w − lr·g elementwise. Rejects non-finite gradients.
pub fn sgd_step(params: &mut MlpParams, grads: &Gradients, learning_rate: f64) -> Result<()> {
    if grads.weights.len() != params.weights.len() {
        return Err(Error::InvalidState(format!(
            "gradients cover {} layers, params have {}",
            grads.weights.len(),
            params.weights.len()
        )));
    }
    if !global_grad_norm(grads).is_finite() {
        return Err(Error::TrainingDiverged(
            "non-finite gradient in sgd_step".to_string(),
        ));
    }
    for (w, g) in params.weights.iter_mut().zip(&grads.weights) {
        w.scaled_add(-learning_rate, g);
    }
    for (b, g) in params.biases.iter_mut().zip(&grads.biases) {
        b.scaled_add(-learning_rate, g);
    }
    Ok(())
}

/// L2 norm of all parameter gradients concatenated.
pub fn global_grad_norm(grads: &Gradients) -> f64 {
    grads
        .iter_all()
        .map(|&v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// If the global norm exceeds `clip_norm`, scales every gradient by
/// clip_norm/norm. Returns the pre-clip norm.
pub fn clip_by_global_norm(grads: &mut Gradients, clip_norm: f64) -> f64 {
    let norm = global_grad_norm(grads);
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    norm
}

/// Classification error in percent of `params` on the given split.
pub fn error_pct(
    params: &MlpParams,
    dataset: &LabeledDataset,
    range: &std::ops::Range<usize>,
) -> Result<f64> {
    let n = range.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty split".to_string()));
    }
    let labels = dataset.split_labels(range);
    let features = dataset.split_features(range);
    let mut wrong = 0usize;
    let chunk = 512;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let preds = mlp::predict(params, features.slice(ndarray::s![start..end, ..]))?;
        for (p, &y) in preds.iter().zip(&labels[start..end]) {
            if *p != y {
                wrong += 1;
            }
        }
        start = end;
    }
    Ok(100.0 * wrong as f64 / n as f64)
}

/// Runs the SGD protocol: shuffle the train split each epoch, evaluate
/// the regularized loss with the annealed penalty weight, update, track
/// validation error, and stop early when it fails to improve for
/// `early_stop_patience` consecutive epochs. Returns the parameters from
/// the best-validation epoch.
///
/// A `UnigramLabelSmoothing` regularizer with no prior gets one computed
/// from the train-split labels before the first epoch.
pub fn train_run(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    arch: &Architecture,
) -> Result<(MlpParams, RunMetrics)> {
    train_run_observed(config, dataset, arch, |_| {})
}

/// [`train_run`] with a per-epoch observer, so callers can stream each
/// completed [`EpochRecord`] (e.g. append it to a metrics file) while
/// training is still running.
pub fn train_run_observed(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    arch: &Architecture,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(MlpParams, RunMetrics)> {
    config.validate()?;
    arch.validate()?;
    if arch.input_dim != dataset.dim() {
        return Err(Error::InvalidArchitecture(format!(
            "architecture expects {}-dimensional input, dataset is {}-dimensional",
            arch.input_dim,
            dataset.dim()
        )));
    }
    if arch.classes != dataset.num_classes() {
        return Err(Error::InvalidArchitecture(format!(
            "architecture has {} classes, dataset has {}",
            arch.classes,
            dataset.num_classes()
        )));
    }
    let train_range = dataset.splits().train.clone();
    if train_range.is_empty() {
        return Err(Error::InvalidInput("empty training split".to_string()));
    }

    let mut spec = config.regularizer.clone();
    if spec.kind == RegularizerKind::UnigramLabelSmoothing && spec.prior.is_none() {
        let (prior, _mask) =
            regularizers::unigram_prior(dataset.split_labels(&train_range), arch.classes)?;
        spec.prior = Some(prior);
    }
    spec.validate(arch.classes)?;

    // Independent deterministic streams derived from the run seed.
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let init_seed = master.next_u64();
    let shuffle_seed = master.next_u64();
    let dropout_seed = master.next_u64();
    let noise_seed = master.next_u64();

    let start = Instant::now();
    let mut params = mlp::init_params(arch, init_seed)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut dropout = match config.dropout_keep_prob {
        Some(keep) => Some(DropoutSampler::new(keep, dropout_seed)?),
        None => None,
    };

    let val_range = dataset.splits().val.clone();
    let test_range = dataset.splits().test.clone();
    let n_train = train_range.len();
    let features = dataset.features();
    let all_labels = dataset.labels();

    let mut indices: Vec<usize> = train_range.clone().collect();
    let mut batch_x = Array2::zeros((config.batch_size.min(n_train), dataset.dim()));
    let mut batch_y = vec![0usize; config.batch_size.min(n_train)];

    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best_params: Option<MlpParams> = None;
    let mut best_epoch = 0usize;
    let mut best_val: Option<f64> = None;
    let mut epochs_without_improvement = 0usize;
    let mut global_step: u64 = 0;

    let mut epochs_run = 0usize;
    for epoch in 1..=config.max_epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0usize;

        for chunk in indices.chunks(config.batch_size) {
            let bs = chunk.len();
            if batch_x.nrows() != bs {
                batch_x = Array2::zeros((bs, dataset.dim()));
                batch_y.resize(bs, 0);
            }
            for (r, &src) in chunk.iter().enumerate() {
                batch_x.row_mut(r).assign(&features.row(src));
                batch_y[r] = all_labels[src];
            }
            if spec.kind == RegularizerKind::LabelNoise {
                for y in batch_y.iter_mut() {
                    *y = regularizers::apply_label_noise(
                        *y,
                        spec.epsilon,
                        arch.classes,
                        spec.noise_excludes_true,
                        &mut noise_rng,
                    )?;
                }
            }

            let (logits, trace) = mlp::forward_train(&params, batch_x.view(), dropout.as_mut())?;
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite logits at epoch {epoch}, step {global_step}"
                )));
            }
            let loss = regularizers::evaluate(&spec, logits.view(), &batch_y[..bs], global_step)?;
            if !loss.loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite loss at epoch {epoch}, step {global_step}"
                )));
            }
            let mut grads = mlp::backward(&trace, &params, loss.grad_logits.view())?;
            let norm = global_grad_norm(&grads);
            if !norm.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite gradient at epoch {epoch}, step {global_step}"
                )));
            }
            if let Some(clip) = config.clip_norm {
                clip_by_global_norm(&mut grads, clip);
            }
            sgd_step(&mut params, &grads, config.learning_rate)?;

            loss_sum += loss.loss * bs as f64;
            norm_sum += norm;
            batches += 1;
            global_step += 1;
        }

        let val_error = if val_range.is_empty() {
            None
        } else {
            Some(error_pct(&params, dataset, &val_range)?)
        };
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_train as f64,
            grad_norm: norm_sum / batches as f64,
            val_error_pct: val_error,
        });
        on_epoch(records.last().expect("just pushed"));
        epochs_run = epoch;

        match val_error {
            Some(err) => {
                let improved = best_val.is_none_or(|best| err < best);
                if improved {
                    best_val = Some(err);
                    best_epoch = epoch;
                    best_params = Some(params.clone());
                    epochs_without_improvement = 0;
                } else {
                    epochs_without_improvement += 1;
                    if epochs_without_improvement >= config.early_stop_patience {
                        break;
                    }
                }
            }
            None => {
                // No validation split: keep the last parameters.
                best_epoch = epoch;
            }
        }
    }

    let final_params = best_params.unwrap_or(params);
    let test_error = if test_range.is_empty() {
        None
    } else {
        Some(error_pct(&final_params, dataset, &test_range)?)
    };
    let metrics = RunMetrics {
        epochs: records,
        test_error_pct: test_error,
        best_epoch,
        best_val_error_pct: best_val,
        epochs_run,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((final_params, metrics))
}

/// Outcome of one grid point: the spec it ran and either its metrics or
/// the error that stopped it.
#[derive(Debug)]
pub struct GridPointResult {
    /// Position in the original grid.
    pub index: usize,
    pub spec: RegularizerSpec,
    pub outcome: Result<RunMetrics>,
}

impl GridPointResult {
    pub fn best_val_error(&self) -> Option<f64> {
        self.outcome
            .as_ref()
            .ok()
            .and_then(|m| m.best_val_error_pct)
    }
}

/// Grid-search outcome, ranked by best validation error (failures last).
#[derive(Debug)]
pub struct GridSearchResult {
    pub ranked: Vec<GridPointResult>,
}

impl GridSearchResult {
    /// The validation-best spec, if any point succeeded.
    pub fn best(&self) -> Option<&GridPointResult> {
        self.ranked.first().filter(|p| p.outcome.is_ok())
    }
}

/// Trains one run per grid point (same base config, substituted
/// regularizer) and ranks the outcomes by validation error. Per-point
/// failures are captured, not propagated, so one divergent setting does
/// not abort the sweep.
pub fn grid_search(
    base_config: &TrainConfig,
    grid: &[RegularizerSpec],
    dataset: &LabeledDataset,
    arch: &Architecture,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty grid".to_string()));
    }
    let mut results: Vec<GridPointResult> = grid
        .iter()
        .cloned()
        .enumerate()
        .map(|(index, spec)| {
            let config = TrainConfig {
                regularizer: spec.clone(),
                ..base_config.clone()
            };
            let outcome = train_run(&config, dataset, arch).map(|(_, metrics)| metrics);
            GridPointResult {
                index,
                spec,
                outcome,
            }
        })
        .collect();
    results.sort_by(|a, b| match (a.best_val_error(), b.best_val_error()) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
    Ok(GridSearchResult { ranked: results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic_blobs;
    use approx::assert_abs_diff_eq;

    fn blob_config(regularizer: RegularizerSpec, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            max_epochs: 50,
            batch_size: 16,
            early_stop_patience: 10,
            clip_norm: None,
            dropout_keep_prob: None,
            regularizer,
            seed,
        }
    }

    fn blob_dataset() -> LabeledDataset {
        let mut ds = synthetic_blobs(3, 80, 4, 10.0, 11).unwrap();
        ds.split_tail(30, 30).unwrap();
        ds
    }

    #[test]
    fn sgd_step_arithmetic() {
        let arch = Architecture::new(2, vec![], 2).unwrap();
        let mut params = mlp::init_params(&arch, 0).unwrap();
        params.weights[0].fill(1.0);
        let mut grads = Gradients::zeros_like(&params);
        grads.weights[0].fill(0.5);
        sgd_step(&mut params, &grads, 0.1).unwrap();
        for &v in params.weights[0].iter() {
            assert_abs_diff_eq!(v, 0.95, epsilon = 1e-15);
        }

        // zero gradient and zero learning rate leave params unchanged
        let snapshot = params.clone();
        let zero = Gradients::zeros_like(&params);
        sgd_step(&mut params, &zero, 0.1).unwrap();
        assert_eq!(params, snapshot);
        sgd_step(&mut params, &grads, 0.0).unwrap();
        assert_eq!(params, snapshot);
    }

    #[test]
    fn sgd_step_rejects_non_finite() {
        let arch = Architecture::new(2, vec![], 2).unwrap();
        let mut params = mlp::init_params(&arch, 0).unwrap();
        let mut grads = Gradients::zeros_like(&params);
        grads.weights[0][[0, 0]] = f64::NAN;
        assert!(matches!(
            sgd_step(&mut params, &grads, 0.1),
            Err(Error::TrainingDiverged(_))
        ));
    }

    #[test]
    fn global_norm_pythagorean_and_oracle() {
        let arch = Architecture::new(1, vec![1], 2).unwrap();
        let params = mlp::init_params(&arch, 0).unwrap();
        let mut grads = Gradients::zeros_like(&params);
        assert_eq!(global_grad_norm(&grads), 0.0);

        grads.weights[0][[0, 0]] = 3.0;
        grads.weights[1][[0, 0]] = 4.0;
        assert_abs_diff_eq!(global_grad_norm(&grads), 5.0, epsilon = 1e-15);

        // brute-force flatten oracle on pseudo-random values
        let mut flat = Vec::new();
        let mut v = 0.37_f64;
        for w in grads.weights.iter_mut().chain(std::iter::empty()) {
            for x in w.iter_mut() {
                v = (v * 997.0).fract() - 0.5;
                *x = v;
                flat.push(v);
            }
        }
        for b in grads.biases.iter_mut() {
            for x in b.iter_mut() {
                v = (v * 997.0).fract() - 0.5;
                *x = v;
                flat.push(v);
            }
        }
        let oracle = flat.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_abs_diff_eq!(global_grad_norm(&grads), oracle, epsilon = 1e-12);
    }

    #[test]
    fn clip_by_global_norm_scales() {
        let arch = Architecture::new(1, vec![1], 2).unwrap();
        let params = mlp::init_params(&arch, 0).unwrap();
        let mut grads = Gradients::zeros_like(&params);
        grads.weights[0][[0, 0]] = 3.0;
        grads.weights[1][[0, 0]] = 4.0;

        // under the threshold: unchanged
        let pre = clip_by_global_norm(&mut grads, 10.0);
        assert_abs_diff_eq!(pre, 5.0, epsilon = 1e-15);
        assert_eq!(grads.weights[0][[0, 0]], 3.0);

        // over the threshold: scaled to exactly the clip norm
        let pre = clip_by_global_norm(&mut grads, 2.5);
        assert_abs_diff_eq!(pre, 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(grads.weights[0][[0, 0]], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(grads.weights[1][[0, 0]], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(global_grad_norm(&grads), 2.5, epsilon = 1e-9);
    }

    #[test]
    fn separable_blobs_reach_zero_train_error() {
        let ds = blob_dataset();
        let arch = Architecture::new(4, vec![16], 3).unwrap();
        let config = blob_config(RegularizerSpec::none(), 7);
        let (params, metrics) = train_run(&config, &ds, &arch).unwrap();
        assert!(metrics.epochs_run <= 50);
        let train_err = error_pct(&params, &ds, &ds.splits().train).unwrap();
        assert_eq!(train_err, 0.0, "train error {train_err}%");
    }

    #[test]
    fn identical_seed_replays_identical_run() {
        let ds = blob_dataset();
        let arch = Architecture::new(4, vec![8], 3).unwrap();
        let config = blob_config(RegularizerSpec::confidence_penalty(0.5), 13);
        let (params_a, metrics_a) = train_run(&config, &ds, &arch).unwrap();
        let (params_b, metrics_b) = train_run(&config, &ds, &arch).unwrap();
        assert_eq!(metrics_a.epochs, metrics_b.epochs);
        assert_eq!(params_a, params_b);

        let other = TrainConfig {
            seed: 14,
            ..config
        };
        let (_, metrics_c) = train_run(&other, &ds, &arch).unwrap();
        assert_ne!(metrics_a.epochs, metrics_c.epochs);
    }

    #[test]
    fn early_stopping_returns_best_validation_epoch() {
        let ds = blob_dataset();
        let arch = Architecture::new(4, vec![8], 3).unwrap();
        let mut config = blob_config(RegularizerSpec::none(), 3);
        config.early_stop_patience = 3;
        config.max_epochs = 40;
        let (_, metrics) = train_run(&config, &ds, &arch).unwrap();
        let best_recorded = metrics
            .epochs
            .iter()
            .filter_map(|r| r.val_error_pct)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(metrics.best_val_error_pct.unwrap(), best_recorded);
        let best_record = &metrics.epochs[metrics.best_epoch - 1];
        assert_eq!(best_record.val_error_pct.unwrap(), best_recorded);
    }

    #[test]
    fn divergence_reports_epoch_and_step() {
        let ds = blob_dataset();
        let arch = Architecture::new(4, vec![8], 3).unwrap();
        let mut config = blob_config(RegularizerSpec::none(), 3);
        config.learning_rate = 1e12;
        match train_run(&config, &ds, &arch) {
            Err(Error::TrainingDiverged(msg)) => {
                assert!(msg.contains("epoch"), "{msg}");
                assert!(msg.contains("step"), "{msg}");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn label_noise_runs_are_deterministic_and_distinct() {
        let ds = blob_dataset();
        let arch = Architecture::new(4, vec![8], 3).unwrap();
        let mut config = blob_config(RegularizerSpec::label_noise(0.3), 21);
        config.max_epochs = 5;
        let (_, a) = train_run(&config, &ds, &arch).unwrap();
        let (_, b) = train_run(&config, &ds, &arch).unwrap();
        assert_eq!(a.epochs, b.epochs);

        // the noiseless loss stream differs
        let mut clean = config.clone();
        clean.regularizer = RegularizerSpec::none();
        let (_, c) = train_run(&clean, &ds, &arch).unwrap();
        assert_ne!(a.epochs, c.epochs);
    }

    #[test]
    fn unigram_prior_resolved_from_train_split() {
        let mut ds = synthetic_blobs_with_unbalanced();
        ds.split_tail(20, 20).unwrap();
        let arch = Architecture::new(3, vec![8], 3).unwrap();
        let mut config = blob_config(RegularizerSpec::unigram_label_smoothing(0.1), 2);
        config.max_epochs = 3;
        let result = train_run(&config, &ds, &arch);
        assert!(result.is_ok(), "{result:?}");
    }

    fn synthetic_blobs_with_unbalanced() -> LabeledDataset {
        crate::dataio::synthetic_blobs_with_counts(&[80, 40, 40], 3, 9.0, 4).unwrap()
    }

    #[test]
    fn grid_of_one_equals_single_run() {
        let ds = blob_dataset();
        let arch = Architecture::new(4, vec![8], 3).unwrap();
        let mut config = blob_config(RegularizerSpec::confidence_penalty(0.3), 5);
        config.max_epochs = 8;
        let (_, direct) = train_run(&config, &ds, &arch).unwrap();
        let grid = grid_search(
            &config,
            &[RegularizerSpec::confidence_penalty(0.3)],
            &ds,
            &arch,
        )
        .unwrap();
        assert_eq!(grid.ranked.len(), 1);
        let metrics = grid.ranked[0].outcome.as_ref().unwrap();
        assert_eq!(metrics.epochs, direct.epochs);
    }

    #[test]
    fn grid_search_survives_failing_points() {
        let ds = blob_dataset();
        let arch = Architecture::new(4, vec![8], 3).unwrap();
        let mut config = blob_config(RegularizerSpec::none(), 5);
        config.max_epochs = 4;
        // gamma > ln K makes the hinge point fail validation at run time
        let grid = vec![
            RegularizerSpec::none(),
            RegularizerSpec::hinge_confidence_penalty(1.0, 5.0),
        ];
        let result = grid_search(&config, &grid, &ds, &arch).unwrap();
        assert_eq!(result.ranked.len(), 2);
        assert!(result.best().is_some());
        assert!(result.ranked[0].outcome.is_ok());
        assert!(result.ranked[1].outcome.is_err());
    }
}
