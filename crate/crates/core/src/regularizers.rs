//! The loss zoo: every training objective returns its value together with
//! the analytic gradient with respect to the logits.
//!
//! All losses reduce over the batch by mean, so penalty weights transfer
//! across batch sizes. Losses are in nats.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, ProbVector};

/// Which training objective to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    /// Plain negative log-likelihood.
    None,
    /// NLL − β·H(p): penalizes low-entropy (overconfident) outputs.
    ConfidencePenalty,
    /// NLL + β·max(0, Γ − H(p)): the penalty is active only below the
    /// entropy threshold Γ.
    HingeConfidencePenalty,
    /// Cross-entropy against (1−ε)·onehot + ε·uniform targets.
    UniformLabelSmoothing,
    /// Cross-entropy against (1−ε)·onehot + ε·prior targets, where the
    /// prior is the empirical class frequency of the training labels.
    UnigramLabelSmoothing,
    /// NLL on labels that are stochastically replaced at rate ε. The
    /// corruption is applied by the caller via [`apply_label_noise`];
    /// the loss itself is NLL.
    LabelNoise,
}

/// How the penalty weight β evolves over training steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealMode {
    Constant,
    LinearRamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    pub mode: AnnealMode,
    /// Steps until the ramp reaches the full β. Must be positive when
    /// `mode` is `LinearRamp`.
    #[serde(default)]
    pub ramp_steps: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            mode: AnnealMode::Constant,
            ramp_steps: 0,
        }
    }
}

/// Full description of a training objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    /// Penalty weight β (confidence-penalty kinds).
    #[serde(default)]
    pub beta: f64,
    /// Entropy threshold Γ in nats (hinge kind only).
    #[serde(default)]
    pub gamma: f64,
    /// Smoothing or noise mass ε in [0, 1].
    #[serde(default)]
    pub epsilon: f64,
    /// Smoothing prior; present exactly when `kind` is
    /// `UnigramLabelSmoothing`. Usually filled in from the training
    /// labels by [`unigram_prior`] rather than written by hand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<ProbVector>,
    #[serde(default)]
    pub anneal: AnnealSchedule,
    /// When true, label-noise redraws never return the true label.
    #[serde(default)]
    pub noise_excludes_true: bool,
}

impl RegularizerSpec {
    pub fn none() -> Self {
        Self::with_kind(RegularizerKind::None)
    }

    pub fn confidence_penalty(beta: f64) -> Self {
        Self {
            beta,
            ..Self::with_kind(RegularizerKind::ConfidencePenalty)
        }
    }

    pub fn hinge_confidence_penalty(beta: f64, gamma: f64) -> Self {
        Self {
            beta,
            gamma,
            ..Self::with_kind(RegularizerKind::HingeConfidencePenalty)
        }
    }

    pub fn uniform_label_smoothing(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::with_kind(RegularizerKind::UniformLabelSmoothing)
        }
    }

    pub fn unigram_label_smoothing(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::with_kind(RegularizerKind::UnigramLabelSmoothing)
        }
    }

    pub fn label_noise(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::with_kind(RegularizerKind::LabelNoise)
        }
    }

    fn with_kind(kind: RegularizerKind) -> Self {
        Self {
            kind,
            beta: 0.0,
            gamma: 0.0,
            epsilon: 0.0,
            prior: None,
            anneal: AnnealSchedule::default(),
            noise_excludes_true: false,
        }
    }

    /// Validates every invariant against a class count, including that the
    /// prior is present exactly for the unigram kind. Call this once the
    /// spec is fully resolved (prior filled in).
    pub fn validate(&self, classes: usize) -> Result<()> {
        self.validate_unresolved(classes)?;
        if self.kind == RegularizerKind::UnigramLabelSmoothing && self.prior.is_none() {
            return Err(Error::InvalidConfig(
                "unigram label smoothing requires a prior".to_string(),
            ));
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate) but tolerates a missing unigram
    /// prior, for configs validated before the training labels are
    /// available to compute it.
    pub fn validate_unresolved(&self, classes: usize) -> Result<()> {
        if classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "beta must be finite and nonnegative, got {}",
                self.beta
            )));
        }
        if !self.epsilon.is_finite() || !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.kind == RegularizerKind::HingeConfidencePenalty {
            let ln_k = (classes as f64).ln();
            if !self.gamma.is_finite() || self.gamma < 0.0 || self.gamma > ln_k {
                return Err(Error::InvalidConfig(format!(
                    "gamma must lie in [0, ln {classes} = {ln_k:.6}], got {}",
                    self.gamma
                )));
            }
        }
        if self.anneal.mode == AnnealMode::LinearRamp && self.anneal.ramp_steps == 0 {
            return Err(Error::InvalidConfig(
                "linear_ramp annealing requires ramp_steps > 0".to_string(),
            ));
        }
        if self.kind != RegularizerKind::UnigramLabelSmoothing {
            if let Some(prior) = &self.prior {
                return Err(Error::InvalidConfig(format!(
                    "prior (length {}) only belongs with unigram label smoothing",
                    prior.len()
                )));
            }
        } else if let Some(prior) = &self.prior {
            if prior.len() != classes {
                return Err(Error::InvalidConfig(format!(
                    "prior has {} classes, dataset has {classes}",
                    prior.len()
                )));
            }
        }
        Ok(())
    }
}

/// Loss value (mean over the batch, nats) and its gradient with respect
/// to every logit.
#[derive(Clone, Debug)]
pub struct LossResult {
    pub loss: f64,
    /// Shape (batch, classes); row b is ∂loss/∂z_b.
    pub grad_logits: Array2<f64>,
}

/// The penalty weight in effect at a given step: β for constant mode,
/// β·min(1, step/ramp_steps) for a linear ramp.
pub fn effective_beta(spec: &RegularizerSpec, step: u64) -> f64 {
    match spec.anneal.mode {
        AnnealMode::Constant => spec.beta,
        AnnealMode::LinearRamp => {
            let frac = (step as f64 / spec.anneal.ramp_steps as f64).min(1.0);
            spec.beta * frac
        }
    }
}

fn validate_batch(logits: &ArrayView2<f64>, labels: &[usize]) -> Result<usize> {
    let (batch, k) = (logits.nrows(), logits.ncols());
    if batch == 0 {
        return Err(Error::InvalidInput("empty batch".to_string()));
    }
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    if labels.len() != batch {
        return Err(Error::InvalidInput(format!(
            "batch has {batch} rows but {} labels",
            labels.len()
        )));
    }
    if let Some(bad) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite logit at flat index {bad}"
        )));
    }
    for &y in labels {
        if y >= k {
            return Err(Error::InvalidLabel {
                label: y,
                classes: k,
            });
        }
    }
    Ok(k)
}

/// Mean negative log-likelihood: −(1/B) Σ_b log softmax(z_b)\[y_b\].
/// Gradient row b is (softmax(z_b) − onehot(y_b)) / B.
pub fn nll_loss(logits: ArrayView2<f64>, labels: &[usize]) -> Result<LossResult> {
    validate_batch(&logits, labels)?;
    Ok(nll_loss_unchecked(logits, labels))
}

fn nll_loss_unchecked(logits: ArrayView2<f64>, labels: &[usize]) -> LossResult {
    let (batch, k) = (logits.nrows(), logits.ncols());
    let inv_b = 1.0 / batch as f64;
    let mut grad = Array2::zeros((batch, k));
    let mut lp = vec![0.0; k];
    let mut total = 0.0;
    for (b, row) in logits.outer_iter().enumerate() {
        row_log_softmax(&row, &mut lp);
        total += -lp[labels[b]];
        let mut g = grad.row_mut(b);
        for i in 0..k {
            let onehot = if i == labels[b] { 1.0 } else { 0.0 };
            g[i] = (lp[i].exp() - onehot) * inv_b;
        }
    }
    LossResult {
        loss: total * inv_b,
        grad_logits: grad,
    }
}

/// NLL − β·(mean entropy). With β = 0 this is bitwise identical to
/// [`nll_loss`].
pub fn confidence_penalty_loss(
    logits: ArrayView2<f64>,
    labels: &[usize],
    beta: f64,
) -> Result<LossResult> {
    validate_batch(&logits, labels)?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "beta must be finite and nonnegative, got {beta}"
        )));
    }
    Ok(confidence_penalty_unchecked(logits, labels, beta))
}

fn confidence_penalty_unchecked(
    logits: ArrayView2<f64>,
    labels: &[usize],
    beta: f64,
) -> LossResult {
    let (batch, k) = (logits.nrows(), logits.ncols());
    let inv_b = 1.0 / batch as f64;
    let mut grad = Array2::zeros((batch, k));
    let mut lp = vec![0.0; k];
    let mut ent_grad = vec![0.0; k];
    let mut total = 0.0;
    for (b, row) in logits.outer_iter().enumerate() {
        row_log_softmax(&row, &mut lp);
        let h = math::entropy_from_log_probs(&lp);
        math::entropy_grad_from_log_probs(&lp, h, &mut ent_grad);
        total += -lp[labels[b]] - beta * h;
        let mut g = grad.row_mut(b);
        for i in 0..k {
            let onehot = if i == labels[b] { 1.0 } else { 0.0 };
            g[i] = (lp[i].exp() - onehot) * inv_b - (beta * ent_grad[i]) * inv_b;
        }
    }
    LossResult {
        loss: total * inv_b,
        grad_logits: grad,
    }
}

/// NLL + β·(mean max(0, Γ − H)). The penalty gradient is −β·∂H/∂z where
/// H < Γ strictly, and exactly zero where H ≥ Γ (subgradient choice at
/// the kink: inactive).
pub fn hinge_confidence_penalty_loss(
    logits: ArrayView2<f64>,
    labels: &[usize],
    beta: f64,
    gamma: f64,
) -> Result<LossResult> {
    let k = validate_batch(&logits, labels)?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "beta must be finite and nonnegative, got {beta}"
        )));
    }
    let ln_k = (k as f64).ln();
    if !gamma.is_finite() || gamma < 0.0 || gamma > ln_k {
        return Err(Error::InvalidConfig(format!(
            "gamma must lie in [0, ln {k} = {ln_k:.6}], got {gamma}"
        )));
    }
    Ok(hinge_unchecked(logits, labels, beta, gamma))
}

fn hinge_unchecked(logits: ArrayView2<f64>, labels: &[usize], beta: f64, gamma: f64) -> LossResult {
    let (batch, k) = (logits.nrows(), logits.ncols());
    let inv_b = 1.0 / batch as f64;
    let mut grad = Array2::zeros((batch, k));
    let mut lp = vec![0.0; k];
    let mut ent_grad = vec![0.0; k];
    let mut total = 0.0;
    for (b, row) in logits.outer_iter().enumerate() {
        row_log_softmax(&row, &mut lp);
        let h = math::entropy_from_log_probs(&lp);
        let active = h < gamma;
        let penalty = if active { beta * (gamma - h) } else { 0.0 };
        total += -lp[labels[b]] + penalty;
        let mut g = grad.row_mut(b);
        if active {
            math::entropy_grad_from_log_probs(&lp, h, &mut ent_grad);
            for i in 0..k {
                let onehot = if i == labels[b] { 1.0 } else { 0.0 };
                g[i] = (lp[i].exp() - onehot) * inv_b - (beta * ent_grad[i]) * inv_b;
            }
        } else {
            for i in 0..k {
                let onehot = if i == labels[b] { 1.0 } else { 0.0 };
                g[i] = (lp[i].exp() - onehot) * inv_b;
            }
        }
    }
    LossResult {
        loss: total * inv_b,
        grad_logits: grad,
    }
}

/// Smoothed target distribution t = (1−ε)·onehot(y) + ε·prior.
pub fn smooth_targets(label: usize, epsilon: f64, prior: &ProbVector) -> Result<ProbVector> {
    if !epsilon.is_finite() || !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    let k = prior.len();
    if label >= k {
        return Err(Error::InvalidLabel { label, classes: k });
    }
    let values = prior
        .values()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let onehot = if i == label { 1.0 } else { 0.0 };
            (1.0 - epsilon) * onehot + epsilon * p
        })
        .collect();
    ProbVector::new(values)
}

/// Cross-entropy against smoothed targets:
/// −(1/B) Σ_b Σ_i t_{b,i} log softmax(z_b)_i with
/// t_b = (1−ε)·onehot(y_b) + ε·prior. Gradient row b is
/// (softmax(z_b) − t_b) / B. With ε = 0 this is bitwise identical to
/// [`nll_loss`]; in general it decomposes as
/// (1−ε)·NLL + ε·CE(prior, p).
pub fn smoothed_ce_loss(
    logits: ArrayView2<f64>,
    labels: &[usize],
    epsilon: f64,
    prior: &ProbVector,
) -> Result<LossResult> {
    let k = validate_batch(&logits, labels)?;
    if !epsilon.is_finite() || !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    if prior.len() != k {
        return Err(Error::InvalidConfig(format!(
            "prior has {} classes, logits have {k}",
            prior.len()
        )));
    }
    Ok(smoothed_ce_unchecked(logits, labels, epsilon, prior.values()))
}

fn smoothed_ce_unchecked(
    logits: ArrayView2<f64>,
    labels: &[usize],
    epsilon: f64,
    prior: &[f64],
) -> LossResult {
    let (batch, k) = (logits.nrows(), logits.ncols());
    let inv_b = 1.0 / batch as f64;
    let mut grad = Array2::zeros((batch, k));
    let mut lp = vec![0.0; k];
    let mut total = 0.0;
    for (b, row) in logits.outer_iter().enumerate() {
        row_log_softmax(&row, &mut lp);
        let mut row_ce = 0.0;
        let mut g = grad.row_mut(b);
        for i in 0..k {
            let onehot = if i == labels[b] { 1.0 } else { 0.0 };
            let t = (1.0 - epsilon) * onehot + epsilon * prior[i];
            row_ce += t * lp[i];
            g[i] = (lp[i].exp() - t) * inv_b;
        }
        total += -row_ce;
    }
    LossResult {
        loss: total * inv_b,
        grad_logits: grad,
    }
}

/// Empirical class frequencies of `labels` over `classes` classes, plus a
/// mask marking which classes were ever observed. The mask is what lets a
/// training setup zero out network outputs for labels that never occur.
pub fn unigram_prior(labels: &[usize], classes: usize) -> Result<(ProbVector, Vec<bool>)> {
    if labels.is_empty() {
        return Err(Error::InvalidInput(
            "cannot build a unigram prior from an empty label set".to_string(),
        ));
    }
    if classes < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    let mut counts = vec![0usize; classes];
    for &y in labels {
        if y >= classes {
            return Err(Error::InvalidLabel {
                label: y,
                classes,
            });
        }
        counts[y] += 1;
    }
    let total = labels.len() as f64;
    let prior = ProbVector::new(counts.iter().map(|&c| c as f64 / total).collect())?;
    let mask = counts.iter().map(|&c| c > 0).collect();
    Ok((prior, mask))
}

/// With probability ε, replaces `label` with a class drawn uniformly.
/// By default the draw ranges over all classes, so it may return the true
/// label; `exclude_true` redraws from the other K−1 classes instead.
pub fn apply_label_noise<R: Rng + ?Sized>(
    label: usize,
    epsilon: f64,
    classes: usize,
    exclude_true: bool,
    rng: &mut R,
) -> Result<usize> {
    if !epsilon.is_finite() || !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    if label >= classes {
        return Err(Error::InvalidLabel { label, classes });
    }
    if classes < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        if exclude_true {
            let r = rng.random_range(0..classes - 1);
            Ok(if r >= label { r + 1 } else { r })
        } else {
            Ok(rng.random_range(0..classes))
        }
    } else {
        Ok(label)
    }
}

/// Evaluates the loss described by `spec` on a batch, applying the anneal
/// schedule at `step`. `LabelNoise` evaluates as plain NLL: the label
/// corruption is a data transform done by the caller.
pub fn evaluate(
    spec: &RegularizerSpec,
    logits: ArrayView2<f64>,
    labels: &[usize],
    step: u64,
) -> Result<LossResult> {
    let k = validate_batch(&logits, labels)?;
    spec.validate(k)?;
    Ok(evaluate_unchecked(spec, logits, labels, step, k))
}

fn evaluate_unchecked(
    spec: &RegularizerSpec,
    logits: ArrayView2<f64>,
    labels: &[usize],
    step: u64,
    k: usize,
) -> LossResult {
    match spec.kind {
        RegularizerKind::None | RegularizerKind::LabelNoise => nll_loss_unchecked(logits, labels),
        RegularizerKind::ConfidencePenalty => {
            confidence_penalty_unchecked(logits, labels, effective_beta(spec, step))
        }
        RegularizerKind::HingeConfidencePenalty => {
            hinge_unchecked(logits, labels, effective_beta(spec, step), spec.gamma)
        }
        RegularizerKind::UniformLabelSmoothing => {
            let uniform = vec![1.0 / k as f64; k];
            smoothed_ce_unchecked(logits, labels, spec.epsilon, &uniform)
        }
        RegularizerKind::UnigramLabelSmoothing => {
            let prior = spec
                .prior
                .as_ref()
                .expect("validated unigram spec carries a prior");
            smoothed_ce_unchecked(logits, labels, spec.epsilon, prior.values())
        }
    }
}

/// Evaluates `spec` with the classes where `mask` is false removed from
/// the model's output: equivalent to pinning those logits at −∞ before
/// the softmax. Probabilities and gradients for masked classes are
/// exactly zero.
pub fn masked_loss(
    spec: &RegularizerSpec,
    logits: ArrayView2<f64>,
    labels: &[usize],
    step: u64,
    mask: &[bool],
) -> Result<LossResult> {
    let (batch, k) = (logits.nrows(), logits.ncols());
    if batch == 0 {
        return Err(Error::InvalidInput("empty batch".to_string()));
    }
    if mask.len() != k {
        return Err(Error::InvalidMask(format!(
            "mask covers {} classes, logits have {k}",
            mask.len()
        )));
    }
    let kept: Vec<usize> = (0..k).filter(|&i| mask[i]).collect();
    if kept.is_empty() {
        return Err(Error::InvalidMask("every class is masked".to_string()));
    }
    if let Some(bad) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite logit at flat index {bad}"
        )));
    }
    let mut new_index = vec![usize::MAX; k];
    for (ni, &oi) in kept.iter().enumerate() {
        new_index[oi] = ni;
    }
    for &y in labels {
        if y >= k {
            return Err(Error::InvalidLabel {
                label: y,
                classes: k,
            });
        }
        if !mask[y] {
            return Err(Error::InvalidMask(format!("true label {y} is masked")));
        }
    }
    if labels.len() != batch {
        return Err(Error::InvalidInput(format!(
            "batch has {batch} rows but {} labels",
            labels.len()
        )));
    }

    // Reduce to the kept-class subspace.
    let kk = kept.len();
    let mut reduced = Array2::zeros((batch, kk));
    for (b, row) in logits.outer_iter().enumerate() {
        for (ni, &oi) in kept.iter().enumerate() {
            reduced[[b, ni]] = row[oi];
        }
    }
    let reduced_labels: Vec<usize> = labels.iter().map(|&y| new_index[y]).collect();

    let mut reduced_spec = spec.clone();
    if spec.kind == RegularizerKind::UnigramLabelSmoothing {
        let prior = spec.prior.as_ref().ok_or_else(|| {
            Error::InvalidConfig("unigram label smoothing requires a prior".to_string())
        })?;
        if prior.len() != k {
            return Err(Error::InvalidConfig(format!(
                "prior has {} classes, logits have {k}",
                prior.len()
            )));
        }
        for (i, &p) in prior.values().iter().enumerate() {
            if !mask[i] && p != 0.0 {
                return Err(Error::InvalidMask(format!(
                    "prior assigns mass {p} to masked class {i}"
                )));
            }
        }
        let reduced_prior: Vec<f64> = kept.iter().map(|&oi| prior.values()[oi]).collect();
        // Kept entries of a valid prior with zero masked mass still sum to 1.
        reduced_spec.prior = Some(ProbVector::new(reduced_prior)?);
    }
    reduced_spec.validate(kk.max(2))?;

    let reduced_result = if kk == 1 {
        // Degenerate single-class subspace: p = 1, every loss and gradient
        // in the zoo is zero there.
        LossResult {
            loss: 0.0,
            grad_logits: Array2::zeros((batch, 1)),
        }
    } else {
        evaluate_unchecked(&reduced_spec, reduced.view(), &reduced_labels, step, kk)
    };

    // Scatter gradients back; masked columns stay exactly zero.
    let mut grad = Array2::zeros((batch, k));
    for b in 0..batch {
        for (ni, &oi) in kept.iter().enumerate() {
            grad[[b, oi]] = reduced_result.grad_logits[[b, ni]];
        }
    }
    Ok(LossResult {
        loss: reduced_result.loss,
        grad_logits: grad,
    })
}

fn row_log_softmax(row: &ndarray::ArrayView1<f64>, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &v in row {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}
