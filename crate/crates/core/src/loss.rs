//! Mixture-of-Gaussians trajectory loss.
//!
//! Each of the K hypotheses is the mean of an isotropic unit-variance
//! Gaussian over the whole future; the confidences `c = softmax(logits)` are
//! the mixture weights. The loss is the negative log-likelihood of the
//! ground truth with the `(2π)^-T` normalizer dropped:
//!
//! ```text
//! L = -logsumexp_k( log c_k - ½ Σ_t valid_t · |gt_t - mean_{k,t}|² )
//! ```
//!
//! Gradients go through the posterior responsibilities
//! `r = softmax_k(log c_k - ½ SSE_k)`:
//! `∂L/∂mean_{k,t} = r_k (mean_{k,t} - gt_t)` on valid steps and
//! `∂L/∂logit_k = c_k - r_k`.

use crate::error::{Error, Result};
use crate::geom::Vec2;

/// K trajectory hypotheses in the local frame plus their confidence logits.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureOutput {
    /// Row-major `[K][T_f][2]`.
    pub means: Vec<f64>,
    pub logits: Vec<f64>,
    pub k: usize,
    pub horizon: usize,
}

impl MixtureOutput {
    pub fn new(means: Vec<f64>, logits: Vec<f64>, k: usize, horizon: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::ShapeMismatch("mixture needs K >= 1".into()));
        }
        if means.len() != k * horizon * 2 || logits.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "means {} / logits {} do not fit K={k}, T_f={horizon}",
                means.len(),
                logits.len()
            )));
        }
        Ok(MixtureOutput {
            means,
            logits,
            k,
            horizon,
        })
    }

    pub fn mean(&self, k: usize, t: usize) -> Vec2 {
        let i = (k * self.horizon + t) * 2;
        Vec2::new(self.means[i], self.means[i + 1])
    }

    pub fn trajectory(&self, k: usize) -> Vec<Vec2> {
        (0..self.horizon).map(|t| self.mean(k, t)).collect()
    }

    pub fn confidences(&self) -> Vec<f64> {
        softmax_confidences(&self.logits)
    }

    pub fn is_finite(&self) -> bool {
        self.means.iter().chain(&self.logits).all(|x| x.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub points: Vec<Vec2>,
    pub valid: Vec<bool>,
}

impl GroundTruth {
    pub fn new(points: Vec<Vec2>, valid: Vec<bool>) -> Result<Self> {
        if points.len() != valid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} validity flags",
                points.len(),
                valid.len()
            )));
        }
        Ok(GroundTruth { points, valid })
    }

    pub fn all_valid(points: Vec<Vec2>) -> Self {
        let valid = vec![true; points.len()];
        GroundTruth { points, valid }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|z| z - lse).collect()
}

/// Max-shifted softmax; sums to one.
pub fn softmax_confidences(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NllGradient {
    /// Same layout as [`MixtureOutput::means`].
    pub d_means: Vec<f64>,
    pub d_logits: Vec<f64>,
}

/// Per-hypothesis pieces shared by the loss and its gradient.
struct Posterior {
    loss: f64,
    confidences: Vec<f64>,
    responsibilities: Vec<f64>,
}

fn check(out: &MixtureOutput, gt: &GroundTruth) -> Result<()> {
    if gt.len() != out.horizon || gt.valid.len() != out.horizon {
        return Err(Error::ShapeMismatch(format!(
            "prediction horizon {} vs ground truth {}",
            out.horizon,
            gt.len()
        )));
    }
    if out.means.len() != out.k * out.horizon * 2 || out.logits.len() != out.k || out.k == 0 {
        return Err(Error::ShapeMismatch("malformed mixture output".into()));
    }
    if !gt.valid.iter().any(|&v| v) {
        return Err(Error::NoValidSteps);
    }
    Ok(())
}

fn sse(out: &MixtureOutput, gt: &GroundTruth, k: usize) -> f64 {
    let base = k * out.horizon * 2;
    let mut acc = 0.0;
    for (t, (p, &valid)) in gt.points.iter().zip(&gt.valid).enumerate() {
        if valid {
            let dx = out.means[base + 2 * t] - p.x;
            let dy = out.means[base + 2 * t + 1] - p.y;
            acc += dx * dx + dy * dy;
        }
    }
    acc
}

fn posterior(out: &MixtureOutput, gt: &GroundTruth) -> Result<Posterior> {
    check(out, gt)?;
    let log_c = log_softmax(&out.logits);
    let scores: Vec<f64> = (0..out.k).map(|k| log_c[k] - 0.5 * sse(out, gt, k)).collect();
    let lse = logsumexp(&scores);
    Ok(Posterior {
        loss: -lse,
        confidences: log_c.iter().map(|l| l.exp()).collect(),
        responsibilities: scores.iter().map(|s| (s - lse).exp()).collect(),
    })
}

pub fn nll_loss(out: &MixtureOutput, gt: &GroundTruth) -> Result<f64> {
    posterior(out, gt).map(|p| p.loss)
}

pub fn nll_gradient(out: &MixtureOutput, gt: &GroundTruth) -> Result<NllGradient> {
    nll_loss_and_gradient(out, gt).map(|(_, g)| g)
}

pub fn nll_loss_and_gradient(out: &MixtureOutput, gt: &GroundTruth) -> Result<(f64, NllGradient)> {
    let post = posterior(out, gt)?;
    let mut d_means = vec![0.0; out.means.len()];
    for k in 0..out.k {
        let r = post.responsibilities[k];
        let base = k * out.horizon * 2;
        for (t, (p, &valid)) in gt.points.iter().zip(&gt.valid).enumerate() {
            if valid {
                d_means[base + 2 * t] = r * (out.means[base + 2 * t] - p.x);
                d_means[base + 2 * t + 1] = r * (out.means[base + 2 * t + 1] - p.y);
            }
        }
    }
    let d_logits = post
        .confidences
        .iter()
        .zip(&post.responsibilities)
        .map(|(c, r)| c - r)
        .collect();
    Ok((post.loss, NllGradient { d_means, d_logits }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(mean: Vec2, gt: Vec2) -> (MixtureOutput, GroundTruth) {
        (
            MixtureOutput::new(vec![mean.x, mean.y], vec![0.0], 1, 1).unwrap(),
            GroundTruth::all_valid(vec![gt]),
        )
    }

    #[test]
    fn softmax_examples() {
        let c = softmax_confidences(&[0.0; 6]);
        assert!(c.iter().all(|x| (x - 1.0 / 6.0).abs() < 1e-15));
        let c = softmax_confidences(&[2f64.ln(), 0.0]);
        assert!((c[0] - 2.0 / 3.0).abs() < 1e-15 && (c[1] - 1.0 / 3.0).abs() < 1e-15);
        let a = softmax_confidences(&[0.3, -1.2, 4.0]);
        let b = softmax_confidences(&[100.3, 98.8, 104.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let c = softmax_confidences(&[1e308, -1e308, 0.0]);
        assert_eq!(c, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn exact_hit_is_zero() {
        let (o, g) = single(Vec2::new(3.0, -2.0), Vec2::new(3.0, -2.0));
        assert_eq!(nll_loss(&o, &g).unwrap(), 0.0);
        let grad = nll_gradient(&o, &g).unwrap();
        assert!(grad.d_means.iter().chain(&grad.d_logits).all(|&x| x == 0.0));
    }

    #[test]
    fn unit_offset_is_one() {
        let (o, g) = single(Vec2::ZERO, Vec2::new(1.0, 1.0));
        assert!((nll_loss(&o, &g).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn far_outlier_underflows_benignly() {
        let horizon = 80;
        let gt: Vec<Vec2> = (0..horizon).map(|t| Vec2::new(t as f64, 0.5 * t as f64)).collect();
        let mut means = Vec::new();
        for p in &gt {
            means.extend([p.x, p.y]);
        }
        for p in &gt {
            means.extend([p.x + 100.0, p.y]);
        }
        let o = MixtureOutput::new(means, vec![0.0, 0.0], 2, horizon).unwrap();
        let l = nll_loss(&o, &GroundTruth::all_valid(gt)).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn huge_errors_stay_finite() {
        let (o, g) = single(Vec2::new(1e4, -1e4), Vec2::ZERO);
        let l = nll_loss(&o, &g).unwrap();
        assert!(l.is_finite() && (l - 1e8).abs() < 1e-6);
    }

    #[test]
    fn shape_and_validity_errors() {
        let (o, _) = single(Vec2::ZERO, Vec2::ZERO);
        let g2 = GroundTruth::all_valid(vec![Vec2::ZERO; 2]);
        assert!(matches!(nll_loss(&o, &g2), Err(Error::ShapeMismatch(_))));
        let none = GroundTruth::new(vec![Vec2::ZERO], vec![false]).unwrap();
        assert!(matches!(nll_loss(&o, &none), Err(Error::NoValidSteps)));
    }

    fn arb_case() -> impl Strategy<Value = (MixtureOutput, GroundTruth)> {
        (1usize..5, 1usize..8).prop_flat_map(|(k, t)| {
            (
                proptest::collection::vec(-20.0f64..20.0, k * t * 2),
                proptest::collection::vec(-5.0f64..5.0, k),
                proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0), t),
                proptest::collection::vec(any::<bool>(), t),
            )
                .prop_map(move |(means, logits, pts, mut valid)| {
                    valid[0] = true;
                    let points = pts.into_iter().map(|(x, y)| Vec2::new(x, y)).collect();
                    (
                        MixtureOutput::new(means, logits, k, t).unwrap(),
                        GroundTruth::new(points, valid).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn logsumexp_sandwich((o, g) in arb_case()) {
            let l = nll_loss(&o, &g).unwrap();
            let c = o.confidences();
            let per_k: Vec<f64> = (0..o.k).map(|k| -c[k].ln() + 0.5 * sse(&o, &g, k)).collect();
            let best = per_k.iter().copied().fold(f64::INFINITY, f64::min);
            // -log Σ e^{-a_k} lies in [min a - log K, min a]
            prop_assert!(l <= best + 1e-9);
            prop_assert!(l >= best - (o.k as f64).ln() - 1e-9);
        }

        #[test]
        fn permutation_invariant((o, g) in arb_case()) {
            let mut perm: Vec<usize> = (0..o.k).collect();
            perm.reverse();
            let mut means = Vec::new();
            for &k in &perm {
                means.extend_from_slice(&o.means[k * o.horizon * 2..(k + 1) * o.horizon * 2]);
            }
            let logits = perm.iter().map(|&k| o.logits[k]).collect();
            let p = MixtureOutput::new(means, logits, o.k, o.horizon).unwrap();
            let a = nll_loss(&o, &g).unwrap();
            let b = nll_loss(&p, &g).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn logit_gradient_sums_to_zero((o, g) in arb_case()) {
            let grad = nll_gradient(&o, &g).unwrap();
            prop_assert!(grad.d_logits.iter().sum::<f64>().abs() < 1e-12);
        }

        #[test]
        fn invalid_steps_are_ignored((o, g) in arb_case(), shift in -50.0f64..50.0) {
            let mut moved = g.clone();
            for (p, &v) in moved.points.iter_mut().zip(&g.valid) {
                if !v {
                    *p += Vec2::new(shift, -shift);
                }
            }
            prop_assert_eq!(nll_loss(&o, &g).unwrap(), nll_loss(&o, &moved).unwrap());
            prop_assert_eq!(nll_gradient(&o, &g).unwrap(), nll_gradient(&o, &moved).unwrap());
        }

        #[test]
        fn single_hypothesis_is_half_sse((o, g) in arb_case()) {
            let one = MixtureOutput::new(o.means[..o.horizon * 2].to_vec(), vec![o.logits[0]], 1, o.horizon).unwrap();
            let l = nll_loss(&one, &g).unwrap();
            prop_assert!((l - 0.5 * sse(&one, &g, 0)).abs() <= 1e-12 * l.max(1.0));
        }
    }
}
