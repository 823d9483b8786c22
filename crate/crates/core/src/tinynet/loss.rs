//! Weighted, optionally label-smoothed, softmax cross-entropy.

use crate::error::{Error, Result};

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn smoothed_target(k: usize, target: usize, eps: f64) -> impl Iterator<Item = f64> {
    (0..k).map(move |j| if j == target { 1.0 - eps } else { 0.0 } + eps / k as f64)
}

fn check(logits: &[f64], target: usize, class_weights: &[f64], eps: f64) -> Result<()> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput("non-finite logits".into()));
    }
    if target >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "target {target} out of range for {} classes",
            logits.len()
        )));
    }
    if class_weights.len() != logits.len() {
        return Err(Error::Dimension {
            expected: logits.len(),
            got: class_weights.len(),
        });
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidInput(format!("label smoothing {eps} not in [0, 1)")));
    }
    Ok(())
}

/// `w[target] * sum_k -q_k ln p_k` with `q = (1 - eps) onehot + eps / K`.
pub fn loss(logits: &[f64], target: usize, class_weights: &[f64], eps: f64) -> Result<f64> {
    check(logits, target, class_weights, eps)?;
    let logp = log_softmax(logits);
    let ce: f64 = smoothed_target(logits.len(), target, eps)
        .zip(&logp)
        .map(|(q, lp)| if q == 0.0 { 0.0 } else { -q * lp })
        .sum();
    Ok(class_weights[target] * ce)
}

/// Loss together with its gradient with respect to the logits,
/// `w[target] * (p - q)`.
pub fn loss_and_grad(
    logits: &[f64],
    target: usize,
    class_weights: &[f64],
    eps: f64,
) -> Result<(f64, Vec<f64>)> {
    let value = loss(logits, target, class_weights, eps)?;
    let w = class_weights[target];
    let grad = softmax(logits)
        .into_iter()
        .zip(smoothed_target(logits.len(), target, eps))
        .map(|(p, q)| w * (p - q))
        .collect();
    Ok((value, grad))
}
