//! Label-smoothed cross-entropy and the two phase objectives of the
//! min-max game.
//!
//! With N identities and smoothing constant epsilon, the target for ground
//! truth y puts `1 - (N-1)*eps/N` on y and `eps/N` elsewhere. Cross-entropy
//! uses the log-softmax form and reduces over the batch by arithmetic mean.
//!
//! The game is realized as two signed combinations of the same four
//! cross-entropy terms (clean, erased, transformed, noised):
//!
//! * classifier phase, minimized over classifier parameters:
//!   `L(clean) - l1*L(erased) - l2*L(transformed) - l3*L(noised)` — the sign
//!   flip turns the minimization into ascent on the adversarial terms;
//! * extractor phase, minimized over extractor parameters:
//!   `L(clean) + l1*L(erased) + l2*L(transformed) + l3*L(noised)`.

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Relative weights of the three adversarial terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.15,
            lambda3: 0.1,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(Error::InvalidConfig(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Smoothed target distributions, one row per label.
pub fn smoothed_targets(labels: &[usize], num_classes: usize, epsilon: f64) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "epsilon {epsilon} outside [0, 1)"
        )));
    }
    let mut q = Array2::from_elem((labels.len(), num_classes), epsilon / num_classes as f64);
    let on = 1.0 - (num_classes as f64 - 1.0) * epsilon / num_classes as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes,
            });
        }
        q[[i, y]] = on;
    }
    Ok(q)
}

fn check_batch(logits: &Array2<f64>, targets: &Array2<f64>) -> Result<()> {
    if logits.dim() != targets.dim() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs targets {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    Ok(())
}

/// Mean over the batch of `-sum_i q_i log softmax(logits)_i`.
pub fn ce_loss(logits: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    ce_loss_and_grad(logits, targets).map(|(l, _)| l)
}

/// Cross-entropy and its gradient w.r.t. the logits,
/// `(softmax - q) / batch`.
pub fn ce_loss_and_grad(logits: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_batch(logits, targets)?;
    let (b, _n) = logits.dim();
    let bf = b as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for ((lrow, qrow), mut grow) in logits
        .rows()
        .into_iter()
        .zip(targets.rows())
        .zip(grad.rows_mut())
    {
        let max = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lrow.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for (j, (&l, &q)) in lrow.iter().zip(qrow.iter()).enumerate() {
            let logp = l - lse;
            total -= q * logp;
            grow[j] = (logp.exp() - q) / bf;
        }
    }
    Ok((total / bf, grad))
}

/// Classifier-phase objective: ascent on the adversarial terms folded into a
/// single minimized scalar.
pub fn classifier_phase_objective(
    logits_clean: &Array2<f64>,
    logits_e: &Array2<f64>,
    logits_t: &Array2<f64>,
    logits_n: &Array2<f64>,
    targets: &Array2<f64>,
    w: &LossWeights,
) -> Result<f64> {
    Ok(ce_loss(logits_clean, targets)? - w.lambda1 * ce_loss(logits_e, targets)?
        - w.lambda2 * ce_loss(logits_t, targets)?
        - w.lambda3 * ce_loss(logits_n, targets)?)
}

/// Extractor-phase objective: the total loss minimized over the extractor.
pub fn extractor_phase_objective(
    logits_clean: &Array2<f64>,
    logits_e: &Array2<f64>,
    logits_t: &Array2<f64>,
    logits_n: &Array2<f64>,
    targets: &Array2<f64>,
    w: &LossWeights,
) -> Result<f64> {
    Ok(ce_loss(logits_clean, targets)?
        + w.lambda1 * ce_loss(logits_e, targets)?
        + w.lambda2 * ce_loss(logits_t, targets)?
        + w.lambda3 * ce_loss(logits_n, targets)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, stream};
    use rand::Rng as _;

    #[test]
    fn smoothed_targets_direct_values() {
        let q = smoothed_targets(&[3], 10, 0.1).unwrap();
        assert!((q[[0, 3]] - 0.91).abs() < 1e-12);
        for j in 0..10 {
            if j != 3 {
                assert!((q[[0, j]] - 0.01).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_epsilon_is_one_hot() {
        let q = smoothed_targets(&[1, 0], 3, 0.0).unwrap();
        assert_eq!(q[[0, 1]], 1.0);
        assert_eq!(q[[0, 0]], 0.0);
        assert_eq!(q[[1, 0]], 1.0);
    }

    #[test]
    fn targets_sum_to_one_on_grid() {
        for &n in &[2usize, 10, 702] {
            for &eps in &[0.0, 0.1, 0.5] {
                let q = smoothed_targets(&[0, n - 1], n, eps).unwrap();
                for row in q.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-6, "n={n} eps={eps}");
                }
                let on = 1.0 - (n as f64 - 1.0) * eps / n as f64;
                assert_eq!(q[[0, 0]], on);
            }
        }
    }

    #[test]
    fn label_out_of_range_rejected() {
        assert!(matches!(
            smoothed_targets(&[5], 5, 0.1),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn uniform_logits_give_log_n() {
        let logits = Array2::zeros((3, 4));
        let q = smoothed_targets(&[0, 1, 2], 4, 0.1).unwrap();
        let l = ce_loss(&logits, &q).unwrap();
        assert!((l - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let mut logits = Array2::zeros((1, 5));
        logits[[0, 2]] = 50.0;
        let q = smoothed_targets(&[2], 5, 0.0).unwrap();
        let l = ce_loss(&logits, &q).unwrap();
        assert!(l < 1e-12, "loss {l}");
    }

    #[test]
    fn ce_matches_direct_formula() {
        // independent route: direct -sum q log softmax without the
        // log-sum-exp rearrangement
        let mut rng = derive_rng(0, stream::INIT, 3);
        let logits = Array2::from_shape_fn((6, 9), |_| rng.random::<f64>() * 6.0 - 3.0);
        let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..9)).collect();
        let q = smoothed_targets(&labels, 9, 0.1).unwrap();
        let fast = ce_loss(&logits, &q).unwrap();
        let mut direct = 0.0;
        for (lrow, qrow) in logits.rows().into_iter().zip(q.rows()) {
            let z: f64 = lrow.iter().map(|&v| v.exp()).sum();
            for (&l, &qv) in lrow.iter().zip(qrow.iter()) {
                direct -= qv * (l.exp() / z).ln();
            }
        }
        direct /= 6.0;
        assert!((fast - direct).abs() <= 1e-6, "{fast} vs {direct}");
    }

    #[test]
    fn ce_bounded_below_by_target_entropy() {
        let mut rng = derive_rng(1, stream::INIT, 3);
        let q = smoothed_targets(&[2, 7], 11, 0.5).unwrap();
        let entropy: f64 = -q
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|&p| p * p.ln()).sum::<f64>())
            .sum::<f64>()
            / 2.0;
        for _ in 0..50 {
            let logits = Array2::from_shape_fn((2, 11), |_| rng.random::<f64>() * 10.0 - 5.0);
            let l = ce_loss(&logits, &q).unwrap();
            assert!(l >= entropy - 1e-6);
        }
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let mut rng = derive_rng(2, stream::INIT, 3);
        let logits = Array2::from_shape_fn((4, 6), |_| rng.random::<f64>() * 2.0 - 1.0);
        let q = smoothed_targets(&[0, 2, 4, 5], 6, 0.1).unwrap();
        let (_, grad) = ce_loss_and_grad(&logits, &q).unwrap();
        for _ in 0..20 {
            let i = rng.random_range(0..4);
            let j = rng.random_range(0..6);
            let h = 1e-6;
            let mut lp = logits.clone();
            lp[[i, j]] += h;
            let mut lm = logits.clone();
            lm[[i, j]] -= h;
            let fd = (ce_loss(&lp, &q).unwrap() - ce_loss(&lm, &q).unwrap()) / (2.0 * h);
            assert!((fd - grad[[i, j]]).abs() < 1e-8);
        }
    }

    #[test]
    fn phase_objectives_collapse_algebraically() {
        let mut rng = derive_rng(3, stream::INIT, 3);
        let logits = Array2::from_shape_fn((5, 7), |_| rng.random::<f64>());
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..7)).collect();
        let q = smoothed_targets(&labels, 7, 0.1).unwrap();
        let base = ce_loss(&logits, &q).unwrap();
        let w = LossWeights::default();
        // identical logits everywhere: closed-form collapse
        let cls = classifier_phase_objective(&logits, &logits, &logits, &logits, &q, &w).unwrap();
        assert!((cls - (1.0 - 0.35) * base).abs() < 1e-12);
        let ext = extractor_phase_objective(&logits, &logits, &logits, &logits, &q, &w).unwrap();
        assert!((ext - 1.35 * base).abs() < 1e-12);
        // zero weights: both reduce to the baseline loss
        let z = LossWeights::ZERO;
        let c0 = classifier_phase_objective(&logits, &logits, &logits, &logits, &q, &z).unwrap();
        let e0 = extractor_phase_objective(&logits, &logits, &logits, &logits, &q, &z).unwrap();
        assert_eq!(c0, base);
        assert_eq!(e0, base);
    }
}
