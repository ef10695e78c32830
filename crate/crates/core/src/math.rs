//! Numerically stable softmax-family primitives and entropy/KL computations.
//!
//! All entropies and divergences are in nats. Probability vectors live on
//! the simplex and are validated at construction; the operations below are
//! then total on their typed inputs.

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the simplex sum check on [`ProbVector`] inputs.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Pre-softmax class scores. Entries are finite and there are at least
/// two classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "logit vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite logit {} at index {bad}",
                values[bad]
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A point on the probability simplex: entries in [0, 1] summing to 1
/// within [`SIMPLEX_TOL`], with at least two classes.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "probability vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "probability {v} at index {i} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, not 1 within {SIMPLEX_TOL:e}"
            )));
        }
        Ok(Self { values })
    }

    /// The uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    /// Builds a simplex point from nonnegative weights by dividing through
    /// by their sum. This is the only place inputs are rescaled; the `new`
    /// constructor rejects off-simplex input instead of fixing it up.
    pub fn renormalize(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "probability vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "weight {v} at index {i} not a finite nonnegative value"
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidInput(
                "cannot renormalize weights that sum to zero".to_string(),
            ));
        }
        Self::new(values.into_iter().map(|v| v / sum).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: Deserializer<'de>,
    {
        let values = Vec::<f64>::deserialize(deserializer)?;
        ProbVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// log(Σ exp(z_i)), evaluated with max-subtraction so any finite input is
/// safe from overflow.
pub(crate) fn logsumexp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

pub(crate) fn log_softmax_into(z: &[f64], out: &mut [f64]) {
    debug_assert_eq!(z.len(), out.len());
    let lse = logsumexp(z);
    for (o, &v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
}

/// Entropy in nats from log-probabilities; terms with p = 0 contribute 0.
pub(crate) fn entropy_from_log_probs(lp: &[f64]) -> f64 {
    lp.iter()
        .map(|&l| {
            let p = l.exp();
            if p > 0.0 {
                -p * l
            } else {
                0.0
            }
        })
        .sum()
}

/// ∂H/∂z_i = p_i (−log p_i − H), written into `out`. Entries with p_i = 0
/// get gradient 0 (the limiting value).
pub(crate) fn entropy_grad_from_log_probs(lp: &[f64], h: f64, out: &mut [f64]) {
    for (o, &l) in out.iter_mut().zip(lp) {
        let p = l.exp();
        *o = if p > 0.0 { p * (-l - h) } else { 0.0 };
    }
}

/// z_i − logsumexp(z). Exponentiating the result yields a [`ProbVector`].
pub fn log_softmax(z: &LogitVector) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    log_softmax_into(z.values(), &mut out);
    out
}

/// exp(log_softmax(z)).
pub fn softmax(z: &LogitVector) -> ProbVector {
    let lp = log_softmax(z);
    ProbVector::new(lp.into_iter().map(f64::exp).collect())
        .expect("softmax output is on the simplex")
}

/// Shannon entropy H(p) = −Σ p_i log p_i, in nats. Lies in [0, ln K].
pub fn entropy(p: &ProbVector) -> f64 {
    p.values()
        .iter()
        .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
        .sum()
}

/// Gradient of H(softmax(z)) with respect to the logits:
/// ∂H/∂z_i = p_i (−log p_i − H). The entries sum to zero.
pub fn entropy_grad_logits(z: &LogitVector) -> Vec<f64> {
    let lp = log_softmax(z);
    let h = entropy_from_log_probs(&lp);
    let mut out = vec![0.0; lp.len()];
    entropy_grad_from_log_probs(&lp, h, &mut out);
    out
}

/// D_KL(p ‖ u) = Σ p_i log(K p_i) = ln K − H(p), in nats.
///
/// Computed by direct summation rather than through [`entropy`], so the
/// `kl_to_uniform(p) + entropy(p) = ln K` identity is a genuine check of
/// two routes.
pub fn kl_to_uniform(p: &ProbVector) -> f64 {
    let k = p.len() as f64;
    let sum: f64 = p
        .values()
        .iter()
        .map(|&v| if v > 0.0 { v * (k * v).ln() } else { 0.0 })
        .sum();
    sum.max(0.0)
}

/// D_KL(u ‖ p) = Σ (1/K) log((1/K)/p_i), in nats.
///
/// Diverges when some p_i = 0; that case returns `f64::INFINITY` rather
/// than an error, since the divergence is genuinely infinite there.
pub fn kl_from_uniform(p: &ProbVector) -> f64 {
    let k = p.len() as f64;
    let inv_k = 1.0 / k;
    let mut sum = 0.0;
    for &v in p.values() {
        if v == 0.0 {
            return f64::INFINITY;
        }
        sum += inv_k * (inv_k / v).ln();
    }
    sum.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn logits(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    fn probs(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn log_softmax_symmetric_pair() {
        let out = log_softmax(&logits(&[0.0, 0.0]));
        assert_abs_diff_eq!(out[0], -(2.0f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -(2.0f64.ln()), epsilon = 1e-15);
    }

    #[test]
    fn log_softmax_shift_invariant_constant() {
        for c in [-3.0, 0.0, 17.5] {
            let out = log_softmax(&logits(&[c, c, c, c]));
            for v in out {
                assert_abs_diff_eq!(v, -(4.0f64.ln()), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn log_softmax_no_overflow_on_large_logits() {
        let out = log_softmax(&logits(&[1000.0, 0.0]));
        assert!(out[0].abs() < 1e-12);
        assert_abs_diff_eq!(out[1], -1000.0, epsilon = 1e-9);
        let out = log_softmax(&logits(&[700.0, -700.0]));
        assert!(out.iter().all(|v| v.is_finite() || *v < 0.0));
    }

    #[test]
    fn softmax_ratio_and_uniform() {
        let p = softmax(&logits(&[0.0, 3.0f64.ln()]));
        assert_abs_diff_eq!(p.values()[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p.values()[1], 0.75, epsilon = 1e-12);

        let p = softmax(&logits(&[0.0; 10]));
        for &v in p.values() {
            assert_abs_diff_eq!(v, 0.1, epsilon = 1e-15);
        }

        // shift invariance in the ratio
        let p = softmax(&logits(&[5.0, 5.0 + 2.0f64.ln()]));
        assert_abs_diff_eq!(p.values()[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.values()[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(LogitVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(LogitVector::new(vec![f64::INFINITY, 0.0]).is_err());
        assert!(LogitVector::new(vec![1.0]).is_err());
    }

    #[test]
    fn entropy_point_mass_and_uniform() {
        assert_eq!(entropy(&probs(&[1.0, 0.0, 0.0])), 0.0);
        let u = ProbVector::uniform(10).unwrap();
        assert_abs_diff_eq!(entropy(&u), 10.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn entropy_hand_value() {
        assert_abs_diff_eq!(
            entropy(&probs(&[0.25, 0.75])),
            0.5623351446188083,
            epsilon = 1e-12
        );
    }

    #[test]
    fn off_simplex_rejected() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.5 + 1e-7]).is_err());
        // within tolerance is accepted
        assert!(ProbVector::new(vec![0.5, 0.5 + 1e-12]).is_ok());
    }

    #[test]
    fn renormalize_is_explicit() {
        let p = ProbVector::renormalize(vec![2.0, 1.0, 1.0]).unwrap();
        assert_eq!(p.values(), &[0.5, 0.25, 0.25]);
        assert!(ProbVector::renormalize(vec![0.0, 0.0]).is_err());
        assert!(ProbVector::renormalize(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn entropy_grad_zero_at_uniform() {
        for c in [0.0, -2.5, 40.0] {
            let g = entropy_grad_logits(&logits(&[c; 6]));
            for v in g {
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn entropy_grad_hand_value() {
        let g = entropy_grad_logits(&logits(&[0.0, 3.0f64.ln()]));
        assert_abs_diff_eq!(g[0], 0.20598980412527058, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], -0.20598980412527058, epsilon = 1e-12);
        assert_abs_diff_eq!(g[0] + g[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn entropy_grad_handles_underflowed_probs() {
        // p_1 underflows to exactly 0; its gradient entry must be 0, not NaN.
        let g = entropy_grad_logits(&logits(&[800.0, 0.0]));
        assert_eq!(g[1], 0.0);
        assert!(g[0].is_finite());
    }

    #[test]
    fn kl_to_uniform_values() {
        let u = ProbVector::uniform(4).unwrap();
        assert_abs_diff_eq!(kl_to_uniform(&u), 0.0, epsilon = 1e-12);

        assert_abs_diff_eq!(
            kl_to_uniform(&probs(&[0.25, 0.75])),
            0.130812035941137,
            epsilon = 1e-12
        );

        let mut point = vec![0.0; 10];
        point[0] = 1.0;
        assert_abs_diff_eq!(
            kl_to_uniform(&probs(&point)),
            10.0f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn kl_from_uniform_values() {
        let u = ProbVector::uniform(7).unwrap();
        assert_abs_diff_eq!(kl_from_uniform(&u), 0.0, epsilon = 1e-12);

        assert_abs_diff_eq!(
            kl_from_uniform(&probs(&[0.25, 0.75])),
            0.1438410362258904,
            epsilon = 1e-12
        );

        // brute-force summation oracle on a concentrated distribution
        let mut v = vec![0.01; 10];
        v[0] = 0.91;
        let brute: f64 = v.iter().map(|&p| 0.1 * (0.1f64 / p).ln()).sum();
        assert_abs_diff_eq!(kl_from_uniform(&probs(&v)), brute, epsilon = 1e-12);
    }

    #[test]
    fn kl_from_uniform_infinite_on_zero_support() {
        let p = probs(&[1.0, 0.0, 0.0]);
        assert_eq!(kl_from_uniform(&p), f64::INFINITY);
    }

    #[test]
    fn prob_vector_serde_validates() {
        let p: ProbVector = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(p.values(), &[0.25, 0.75]);
        assert!(serde_json::from_str::<ProbVector>("[0.5, 0.6]").is_err());
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[0.25,0.75]");
    }
}
