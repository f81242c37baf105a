//! Task losses and their gradients.
//!
//! Concordance uses population (1/N) moments. A zero denominator (both
//! series constant with equal means) yields 0, not 1.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::curation::{AuVector, ExpressionId, VaPair};
use crate::math::{ln, log_sum_exp, sigmoid, softmax};
use crate::task::{NUM_AUS, NUM_EXPRESSIONS};
use crate::{Error, Result};

pub use crate::clip_align::{contrastive_loss, contrastive_loss_grad, ContrastiveLoss};

/// Clamp applied to probabilities before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CccStats {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov: f64,
}

impl CccStats {
    pub fn compute(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Shape {
                expected: format!("{} values", x.len()),
                got: format!("{}", y.len()),
            });
        }
        if x.len() < 2 {
            return Err(Error::Contract(format!("ccc needs at least 2 values, got {}", x.len())));
        }
        let n = x.len() as f64;
        // a constant series gets its exact value as mean, so its deviations
        // and covariance are exactly zero
        let mean = |v: &[f64]| {
            if v.iter().all(|&a| a == v[0]) {
                v[0]
            } else {
                v.iter().sum::<f64>() / n
            }
        };
        let (mean_x, mean_y) = (mean(x), mean(y));
        let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
        for (&a, &b) in x.iter().zip(y) {
            let (dx, dy) = (a - mean_x, b - mean_y);
            var_x += dx * dx;
            var_y += dy * dy;
            cov += dx * dy;
        }
        Ok(Self {
            mean_x,
            mean_y,
            var_x: var_x / n,
            var_y: var_y / n,
            cov: cov / n,
        })
    }

    pub fn denominator(&self) -> f64 {
        let d = self.mean_x - self.mean_y;
        self.var_x + self.var_y + d * d
    }

    pub fn ccc(&self) -> f64 {
        let den = self.denominator();
        if den == 0.0 {
            0.0
        } else {
            2.0 * self.cov / den
        }
    }
}

/// Lin's concordance correlation coefficient.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(CccStats::compute(x, y)?.ccc())
}

/// Gradient of `ccc(x, y)` with respect to `x`.
pub fn ccc_grad(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let s = CccStats::compute(x, y)?;
    let den = s.denominator();
    if den == 0.0 {
        return Ok(vec![0.0; x.len()]);
    }
    let n = x.len() as f64;
    let shift = s.mean_x - s.mean_y;
    Ok(x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let dcov = (yi - s.mean_y) / n;
            let dden = 2.0 * (xi - s.mean_x) / n + 2.0 * shift / n;
            (2.0 * dcov * den - 2.0 * s.cov * dden) / (den * den)
        })
        .collect())
}

fn split_va(pairs: &[VaPair]) -> (Vec<f64>, Vec<f64>) {
    pairs.iter().map(|p| (p.valence, p.arousal)).unzip()
}

/// `1 − (CCC_valence + CCC_arousal) / 2`, computed over the whole batch.
pub fn ccc_loss(pred: &[VaPair], target: &[VaPair]) -> Result<f64> {
    let (pv, pa) = split_va(pred);
    let (tv, ta) = split_va(target);
    Ok(1.0 - (ccc(&pv, &tv)? + ccc(&pa, &ta)?) / 2.0)
}

/// Gradient of [`ccc_loss`] with respect to the predictions.
pub fn ccc_loss_grad(pred: &[VaPair], target: &[VaPair]) -> Result<Vec<VaPair>> {
    let (pv, pa) = split_va(pred);
    let (tv, ta) = split_va(target);
    let gv = ccc_grad(&pv, &tv)?;
    let ga = ccc_grad(&pa, &ta)?;
    Ok(gv
        .into_iter()
        .zip(ga)
        .map(|(v, a)| VaPair {
            valence: -v / 2.0,
            arousal: -a / 2.0,
        })
        .collect())
}

fn check_label(logits: &[f64], label: ExpressionId) -> Result<usize> {
    if logits.len() != NUM_EXPRESSIONS {
        return Err(Error::Shape {
            expected: format!("{NUM_EXPRESSIONS} logits"),
            got: format!("{}", logits.len()),
        });
    }
    usize::try_from(label.0)
        .ok()
        .filter(|&l| l < NUM_EXPRESSIONS)
        .ok_or_else(|| Error::Label(format!("expression label {}", label.0)))
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: ExpressionId) -> Result<f64> {
    let l = check_label(logits, label)?;
    Ok(log_sum_exp(logits) - logits[l])
}

/// `softmax(logits) − onehot(label)`.
pub fn cross_entropy_grad(logits: &[f64], label: ExpressionId) -> Result<Vec<f64>> {
    let l = check_label(logits, label)?;
    let mut g = softmax(logits);
    g[l] -= 1.0;
    Ok(g)
}

fn check_aus(probs: &[f64], labels: &AuVector) -> Result<()> {
    if probs.len() != NUM_AUS {
        return Err(Error::Shape {
            expected: format!("{NUM_AUS} probabilities"),
            got: format!("{}", probs.len()),
        });
    }
    if labels.0.iter().any(|&y| y != 0 && y != 1) {
        return Err(Error::Label(format!("AU labels {:?}", labels.0)));
    }
    Ok(())
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Mean over the twelve AUs of the binary cross-entropy.
pub fn binary_cross_entropy(probs: &[f64], labels: &AuVector) -> Result<f64> {
    check_aus(probs, labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels.0.iter())
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            if y == 1 {
                -ln(p)
            } else {
                -ln(1.0 - p)
            }
        })
        .sum();
    Ok(total / NUM_AUS as f64)
}

/// Gradient of [`binary_cross_entropy`] with respect to the probabilities;
/// zero where the clamp is active.
pub fn binary_cross_entropy_grad(probs: &[f64], labels: &AuVector) -> Result<Vec<f64>> {
    check_aus(probs, labels)?;
    Ok(probs
        .iter()
        .zip(labels.0.iter())
        .map(|(&p, &y)| {
            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                return 0.0;
            }
            let g = if y == 1 { -1.0 / p } else { 1.0 / (1.0 - p) };
            g / NUM_AUS as f64
        })
        .collect())
}

/// Gradient of the binary cross-entropy with respect to pre-logistic
/// logits, `(σ(z) − y) / 12`. Used for training so saturated units keep a
/// gradient.
pub fn bce_logit_grad(logits: &[f64], labels: &AuVector) -> Result<Vec<f64>> {
    check_aus(logits, labels)?;
    Ok(logits
        .iter()
        .zip(labels.0.iter())
        .map(|(&z, &y)| (sigmoid(z) - f64::from(y)) / NUM_AUS as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_relative_error, numeric_gradient};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ccc_reference_cases() {
        assert!(close(ccc(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap(), 1.0, 1e-15));
        // cov = -2/3, var = 2/3 each, equal means
        assert!(close(ccc(&[0.0, 1.0, 2.0], &[2.0, 1.0, 0.0]).unwrap(), -1.0, 1e-15));
        assert_eq!(ccc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ccc(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.0);
        // 0.3 has no exact binary mean over 20 copies
        let varying: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        assert_eq!(ccc(&[0.3; 20], &varying).unwrap(), 0.0);
    }

    #[test]
    fn ccc_errors() {
        assert!(ccc(&[1.0], &[1.0]).is_err());
        assert!(ccc(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn ccc_loss_cases() {
        let p = |v: f64, a: f64| VaPair { valence: v, arousal: a };
        let t = [p(0.0, 0.0), p(0.5, 0.2), p(1.0, 0.4)];
        assert!(close(ccc_loss(&t, &t).unwrap(), 0.0, 1e-15));
        let anti = [p(1.0, 0.0), p(0.5, 0.2), p(0.0, 0.4)];
        assert!(close(ccc_loss(&anti, &t).unwrap(), 1.0, 1e-12));
        let flat = [p(0.3, 0.1), p(0.3, 0.1), p(0.3, 0.1)];
        assert!(close(ccc_loss(&flat, &t).unwrap(), 1.0, 1e-15));
    }

    #[test]
    fn ccc_gradient_matches_finite_differences() {
        let x = [0.3, -0.2, 0.9, 0.1, -0.7];
        let y = [0.1, 0.0, 0.8, 0.4, -0.5];
        let g = ccc_grad(&x, &y).unwrap();
        let n = numeric_gradient(&x, 1e-5, &|v| ccc(v, &y).unwrap());
        assert!(max_relative_error(&g, &n) < 1e-6);
    }

    #[test]
    fn ce_cases() {
        assert!(close(cross_entropy(&[0.0; 8], ExpressionId(3)).unwrap(), ln(8.0), 1e-12));
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let mut logits = [0.0; 8];
            logits[2] = k as f64 * 0.5;
            let l = cross_entropy(&logits, ExpressionId(2)).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(cross_entropy(&[0.0; 8], ExpressionId(8)).is_err());
        assert!(cross_entropy(&[0.0; 8], ExpressionId(-1)).is_err());
    }

    #[test]
    fn bce_cases() {
        let y = AuVector([1, 0, 1, 0, 1, 0, 1, 0, 1, 1, 0, 0]);
        let exact: Vec<f64> = y.0.iter().map(|&v| f64::from(v)).collect();
        assert!(binary_cross_entropy(&exact, &y).unwrap() <= 1.2e-6);
        assert!(close(binary_cross_entropy(&[0.5; 12], &y).unwrap(), ln(2.0), 1e-12));
        assert!(binary_cross_entropy(&[0.5; 12], &AuVector([-1; 12])).is_err());
        assert!(binary_cross_entropy(&[0.5; 11], &y).is_err());
    }

    #[test]
    fn bce_logit_grad_is_chain_rule_of_prob_grad() {
        let y = AuVector([1, 0, 1, 0, 1, 0, 1, 0, 1, 1, 0, 0]);
        let z: Vec<f64> = (0..12).map(|i| (i as f64 - 6.0) * 0.3).collect();
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let gp = binary_cross_entropy_grad(&p, &y).unwrap();
        let gz = bce_logit_grad(&z, &y).unwrap();
        for i in 0..12 {
            assert!(close(gp[i] * p[i] * (1.0 - p[i]), gz[i], 1e-12));
        }
    }
}
