//! Central finite-difference checking of every analytic gradient in the
//! crate.
//!
//! The numeric side only ever evaluates loss *values*, so it stays
//! independent of the analytic gradient paths it verifies. The same
//! suite backs the `gradcheck` CLI command and the test suites.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::math::{self, LogitVector};
use crate::mlp::{self, Architecture, MlpParams};
use crate::regularizers::{self, RegularizerSpec};

/// Outcome of one named check: the worst relative error seen across all
/// instances.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < threshold
    }
}

/// Settings shared by the whole suite.
#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    /// Class count for the vector-op checks.
    pub classes: usize,
    /// Random instances per check.
    pub instances: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Relative factor applied to analytic gradients before comparison;
    /// nonzero values deliberately break the checks (a mutation
    /// self-test for the harness).
    pub analytic_perturbation: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            classes: 10,
            instances: 50,
            seed: 0x5EED,
            step: 1e-5,
            analytic_perturbation: 0.0,
        }
    }
}

/// Central finite differences of a scalar function: one gradient entry
/// per input coordinate, step h per side.
pub fn central_difference<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = f(&work);
        work[i] = orig - step;
        let minus = f(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// ‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, 1e-10): scale-free disagreement between an
/// analytic and a numeric gradient.
pub fn gradient_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / norm(analytic).max(norm(numeric)).max(1e-10)
}

fn random_logits<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(-4.0..4.0)).collect()
}

fn perturb(grad: &mut [f64], factor: f64) {
    if factor != 0.0 {
        for g in grad.iter_mut() {
            *g *= 1.0 + factor;
        }
    }
}

/// Checks ∂H(softmax(z))/∂z against finite differences of the entropy.
pub fn check_entropy_gradient(opts: &CheckOptions) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut max_rel: f64 = 0.0;
    for _ in 0..opts.instances {
        let z = random_logits(&mut rng, opts.classes);
        let lv = LogitVector::new(z.clone()).expect("finite random logits");
        let mut analytic = math::entropy_grad_logits(&lv);
        perturb(&mut analytic, opts.analytic_perturbation);
        let numeric = central_difference(
            |zz| {
                let lv = LogitVector::new(zz.to_vec()).expect("finite perturbed logits");
                math::entropy(&math::softmax(&lv))
            },
            &z,
            opts.step,
        );
        max_rel = max_rel.max(gradient_rel_err(&analytic, &numeric));
    }
    CheckReport {
        name: format!("entropy_grad_logits k={}", opts.classes),
        instances: opts.instances,
        max_rel_err: max_rel,
    }
}

/// The loss-zoo specs exercised by the batch and network checks, paired
/// with short names. The hinge threshold sits at 0.7·ln K; the unigram
/// prior is a fixed ragged distribution.
pub fn loss_zoo(classes: usize) -> Vec<(String, RegularizerSpec)> {
    let ln_k = (classes as f64).ln();
    let mut unigram = RegularizerSpec::unigram_label_smoothing(0.3);
    let weights: Vec<f64> = (0..classes).map(|i| 1.0 + (i % 3) as f64).collect();
    unigram.prior = Some(
        math::ProbVector::renormalize(weights).expect("positive weights"),
    );
    vec![
        ("nll".to_string(), RegularizerSpec::none()),
        (
            "confidence_penalty".to_string(),
            RegularizerSpec::confidence_penalty(1.3),
        ),
        (
            "hinge_confidence_penalty".to_string(),
            RegularizerSpec::hinge_confidence_penalty(0.9, 0.7 * ln_k),
        ),
        (
            "uniform_label_smoothing".to_string(),
            RegularizerSpec::uniform_label_smoothing(0.17),
        ),
        ("unigram_label_smoothing".to_string(), unigram),
    ]
}

/// Checks a batch loss's logit gradient against finite differences of its
/// value, over random (z, y) instances with batch sizes cycling 1..=3.
pub fn check_loss_gradient(
    name: &str,
    spec: &RegularizerSpec,
    opts: &CheckOptions,
) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ fnv1a(name));
    let k = opts.classes;
    let mut max_rel: f64 = 0.0;
    for i in 0..opts.instances {
        let batch = 1 + i % 3;
        let flat: Vec<f64> = (0..batch * k)
            .map(|_| rng.random_range(-4.0..4.0))
            .collect();
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..k)).collect();
        let logits = Array2::from_shape_vec((batch, k), flat.clone()).expect("shape");
        let result =
            regularizers::evaluate(spec, logits.view(), &labels, 0).expect("valid instance");
        let mut analytic: Vec<f64> = result.grad_logits.iter().copied().collect();
        perturb(&mut analytic, opts.analytic_perturbation);
        let numeric = central_difference(
            |zz| {
                let logits = ArrayView2::from_shape((batch, k), zz).expect("shape");
                regularizers::evaluate(spec, logits, &labels, 0)
                    .expect("valid instance")
                    .loss
            },
            &flat,
            opts.step,
        );
        max_rel = max_rel.max(gradient_rel_err(&analytic, &numeric));
    }
    CheckReport {
        name: format!("loss {name} k={k}"),
        instances: opts.instances,
        max_rel_err: max_rel,
    }
}

fn flatten_params(params: &MlpParams) -> Vec<f64> {
    let mut flat = Vec::with_capacity(params.arch().num_params());
    for (w, b) in params.weights.iter().zip(&params.biases) {
        flat.extend(w.iter().copied());
        flat.extend(b.iter().copied());
    }
    flat
}

fn unflatten_params(template: &MlpParams, flat: &[f64]) -> MlpParams {
    let mut params = template.clone();
    let mut pos = 0;
    for (w, b) in params.weights.iter_mut().zip(params.biases.iter_mut()) {
        for v in w.iter_mut() {
            *v = flat[pos];
            pos += 1;
        }
        for v in b.iter_mut() {
            *v = flat[pos];
            pos += 1;
        }
    }
    assert_eq!(pos, flat.len());
    params
}

/// End-to-end network check: analytic parameter gradients from backward
/// against finite differences of the full loss, for one spec on a toy
/// architecture, over `opts.instances` random (params, x, y) draws. Runs
/// without dropout so the loss is a deterministic function of the
/// parameters.
pub fn check_mlp_gradient(
    arch: &Architecture,
    name: &str,
    spec: &RegularizerSpec,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ fnv1a(name) ^ 0xA5A5);
    let batch = 3;
    // A parameter step of `opts.step` moves any pre-activation far less
    // than this; instances closer to a ReLU kink are redrawn so central
    // differences never straddle a non-differentiable point.
    let kink_margin = 1e-3;
    let mut max_rel: f64 = 0.0;
    for instance in 0..opts.instances {
        let mut x = Array2::zeros((batch, arch.input_dim));
        let mut labels = Vec::new();
        let mut params = mlp::init_params(arch, opts.seed)?;
        let mut drew_safe_instance = false;
        for attempt in 0..50u64 {
            for v in x.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            labels = (0..batch)
                .map(|_| rng.random_range(0..arch.classes))
                .collect();
            // Scaled-up init so hidden units land on both sides of the ReLU.
            params = mlp::init_params(arch, opts.seed ^ (instance as u64) ^ (attempt << 32))?;
            for w in &mut params.weights {
                w.mapv_inplace(|v| v * 60.0);
            }
            let (_, trace) = mlp::forward_train(&params, x.view(), None)?;
            if trace.min_abs_pre_activation() > kink_margin {
                drew_safe_instance = true;
                break;
            }
        }
        assert!(drew_safe_instance, "no kink-free instance in 50 draws");

        let (logits, trace) = mlp::forward_train(&params, x.view(), None)?;
        let loss = regularizers::evaluate(spec, logits.view(), &labels, 0)?;
        let grads = mlp::backward(&trace, &params, loss.grad_logits.view())?;
        let mut analytic = Vec::with_capacity(arch.num_params());
        for (w, b) in grads.weights.iter().zip(&grads.biases) {
            analytic.extend(w.iter().copied());
            analytic.extend(b.iter().copied());
        }
        perturb(&mut analytic, opts.analytic_perturbation);

        let flat = flatten_params(&params);
        let numeric = central_difference(
            |theta| {
                let p = unflatten_params(&params, theta);
                let logits = mlp::forward_eval(&p, x.view()).expect("valid forward");
                regularizers::evaluate(spec, logits.view(), &labels, 0)
                    .expect("valid loss")
                    .loss
            },
            &flat,
            opts.step,
        );
        max_rel = max_rel.max(gradient_rel_err(&analytic, &numeric));
    }
    Ok(CheckReport {
        name: format!(
            "mlp {name} arch={}x{:?}x{}",
            arch.input_dim, arch.hidden, arch.classes
        ),
        instances: opts.instances,
        max_rel_err: max_rel,
    })
}

/// The full default suite: entropy gradient, every loss in the zoo, and
/// the end-to-end network check per loss on a small two-hidden-layer
/// architecture.
pub fn default_suite(opts: &CheckOptions) -> Result<Vec<CheckReport>> {
    let mut reports = vec![check_entropy_gradient(opts)];
    for (name, spec) in loss_zoo(opts.classes) {
        reports.push(check_loss_gradient(&name, &spec, opts));
    }
    let toy = Architecture::new(4, vec![8, 6], 3)?;
    for (name, spec) in loss_zoo(toy.classes) {
        reports.push(check_mlp_gradient(&toy, &name, &spec, opts)?);
    }
    Ok(reports)
}

// Cheap stable string hash for decorrelating per-check RNG streams.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_on_quadratic() {
        // f(x) = Σ i·x_i², gradient 2·i·x_i
        let f = |x: &[f64]| -> f64 {
            x.iter()
                .enumerate()
                .map(|(i, &v)| i as f64 * v * v)
                .sum()
        };
        let x = [0.5, -1.0, 2.0, 0.1];
        let g = central_difference(f, &x, 1e-5);
        for (i, (&xi, &gi)) in x.iter().zip(&g).enumerate() {
            let expect = 2.0 * i as f64 * xi;
            assert!((gi - expect).abs() < 1e-8, "coord {i}: {gi} vs {expect}");
        }
    }

    #[test]
    fn entropy_gradient_check_passes() {
        let report = check_entropy_gradient(&CheckOptions::default());
        assert!(report.passes(1e-6), "{report:?}");
    }

    #[test]
    fn loss_zoo_checks_pass_small_k() {
        let opts = CheckOptions {
            classes: 2,
            instances: 20,
            ..CheckOptions::default()
        };
        for (name, spec) in loss_zoo(2) {
            let report = check_loss_gradient(&name, &spec, &opts);
            assert!(report.passes(1e-5), "{report:?}");
        }
    }

    #[test]
    fn mlp_check_passes_for_single_hidden_layer() {
        let arch = Architecture::new(4, vec![8], 3).unwrap();
        let opts = CheckOptions::default();
        let report =
            check_mlp_gradient(&arch, "nll", &RegularizerSpec::none(), &opts).unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn perturbation_breaks_the_suite() {
        let opts = CheckOptions {
            analytic_perturbation: 1e-3,
            instances: 5,
            ..CheckOptions::default()
        };
        let report = check_entropy_gradient(&opts);
        assert!(!report.passes(1e-4), "{report:?}");
    }
}
