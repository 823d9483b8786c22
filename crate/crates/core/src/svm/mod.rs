//! One-vs-rest linear SVM trained by dual coordinate descent.
//!
//! Each binary problem minimizes `½(‖w‖² + b²) + C Σ max(0, 1 − y (w·x + b))`.
//! The bias is handled as an extra constant-one feature, so it shares the
//! regularizer with the weights. Coefficients are rounded to f32 once
//! training finishes so that a saved model predicts exactly like the
//! in-memory one.

mod io;

pub use io::{decode_svm, encode_svm, load_svm, save_svm, SVM_MAGIC, SVM_VERSION};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    pub standardize: bool,
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            standardize: false,
            tol: 1e-4,
            max_epochs: 1000,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) || self.max_epochs == 0 {
            return Err(Error::Config("tolerance and epoch limit must be positive".into()));
        }
        Ok(())
    }
}

/// Per-dimension z-scoring fitted on training data. Constant dimensions
/// get scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub n_classes: usize,
    pub dim: usize,
    pub c: f64,
    /// One weight vector per class.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub standardization: Option<Standardization>,
}

impl SvmModel {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidInput("an SVM needs at least 2 classes".into()));
        }
        if self.weights.len() != self.n_classes || self.bias.len() != self.n_classes {
            return Err(Error::Shape(format!(
                "{} weight vectors and {} biases for {} classes",
                self.weights.len(),
                self.bias.len(),
                self.n_classes
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| w.len() != self.dim) {
            return Err(Error::Dimension {
                expected: self.dim,
                got: w.len(),
            });
        }
        if let Some(s) = &self.standardization {
            if s.mean.len() != self.dim || s.scale.len() != self.dim {
                return Err(Error::Shape("standardization vectors do not match the feature dim".into()));
            }
        }
        let finite = self.weights.iter().flatten().chain(&self.bias).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite SVM coefficients".into()));
        }
        Ok(())
    }

    /// `w_k · x + b_k` for every class.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        let scaled;
        let x = match &self.standardization {
            Some(s) => {
                scaled = s.apply(x);
                &scaled[..]
            }
            None => x,
        };
        Ok(self.weights.iter().zip(&self.bias).map(|(w, b)| dot(w, x) + b).collect())
    }
}

/// Result of one binary problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
    /// Largest projected-gradient magnitude seen in the final sweep.
    pub max_violation: f64,
    /// Objective of the returned solution after each epoch.
    pub objective_trace: Vec<f64>,
    /// Objective of the raw coordinate-descent iterate after each epoch.
    pub iterate_objective: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `½(‖w‖² + b²) + C Σ max(0, 1 − y_i (w·x_i + b))` with `y_i ∈ {−1, +1}`.
pub fn primal_objective(w: &[f64], b: f64, x: &[Vec<f64>], signs: &[f64], c: f64) -> f64 {
    let reg = 0.5 * (dot(w, w) + b * b);
    let hinge: f64 = x
        .iter()
        .zip(signs)
        .map(|(xi, y)| (1.0 - y * (dot(w, xi) + b)).max(0.0))
        .sum();
    reg + c * hinge
}

/// Dual coordinate descent for one binary problem with labels in {−1, +1}.
///
/// The dual objective falls every step but the primal objective of the
/// iterate can rise between epochs, so the epoch-end iterate with the lowest
/// primal objective is kept and returned.
pub fn train_binary(
    x: &[Vec<f64>],
    signs: &[f64],
    c: f64,
    seed: u64,
    tol: f64,
    max_epochs: usize,
) -> Result<BinaryFit> {
    if x.is_empty() || x.len() != signs.len() {
        return Err(Error::InvalidInput("binary SVM needs equally many rows and labels".into()));
    }
    let d = x[0].len();
    let n = x.len();
    let qd: Vec<f64> = x.iter().map(|xi| dot(xi, xi) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::new();
    let mut raw = Vec::new();
    let mut best = (f64::INFINITY, Vec::new(), 0.0, Vec::new());
    let mut max_violation = f64::INFINITY;
    let mut epochs = 0;

    while epochs < max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        max_violation = 0.0f64;
        for &i in &order {
            let y = signs[i];
            let g = y * (dot(&w, &x[i]) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y;
                for (wj, xj) in w.iter_mut().zip(&x[i]) {
                    *wj += delta * xj;
                }
                b += delta;
            }
        }
        let objective = primal_objective(&w, b, x, signs, c);
        raw.push(objective);
        if objective <= best.0 {
            best = (objective, w.clone(), b, alpha.clone());
        }
        trace.push(best.0);
        if max_violation < tol {
            break;
        }
    }
    let (_, weights, bias, alpha) = best;
    Ok(BinaryFit {
        weights,
        bias,
        alpha,
        epochs,
        converged: max_violation < tol,
        max_violation,
        objective_trace: trace,
        iterate_objective: raw,
    })
}

fn check_training_set(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<usize> {
    if n_classes < 2 {
        return Err(Error::InvalidInput("an SVM needs at least 2 classes".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < n_classes {
        return Err(Error::InvalidInput(format!(
            "{} examples for {n_classes} classes",
            x.len()
        )));
    }
    let d = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: row.len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    let mut counts = vec![0usize; n_classes];
    for &label in y {
        if label >= n_classes {
            return Err(Error::InvalidInput(format!("label {label} out of range for {n_classes} classes")));
        }
        counts[label] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!("class {k} has no training examples")));
    }
    Ok(d)
}

/// Trains one binary problem per class and also returns their diagnostics.
pub fn svm_train_detailed(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    cfg: &SvmConfig,
) -> Result<(SvmModel, Vec<BinaryFit>)> {
    cfg.validate()?;
    let dim = check_training_set(x, y, n_classes)?;
    let standardization = cfg.standardize.then(|| Standardization::fit(x));
    let scaled: Vec<Vec<f64>>;
    let data = match &standardization {
        Some(s) => {
            scaled = x.iter().map(|r| s.apply(r)).collect();
            &scaled[..]
        }
        None => x,
    };

    let mut fits = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let signs: Vec<f64> = y.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
        let seed = cfg.seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        fits.push(train_binary(data, &signs, cfg.c, seed, cfg.tol, cfg.max_epochs)?);
    }

    let round = |v: f64| v as f32 as f64;
    let model = SvmModel {
        n_classes,
        dim,
        c: cfg.c,
        weights: fits.iter().map(|f| f.weights.iter().map(|&v| round(v)).collect()).collect(),
        bias: fits.iter().map(|f| round(f.bias)).collect(),
        standardization,
    };
    model.validate()?;
    Ok((model, fits))
}

pub fn svm_train(x: &[Vec<f64>], y: &[usize], n_classes: usize, cfg: &SvmConfig) -> Result<SvmModel> {
    svm_train_detailed(x, y, n_classes, cfg).map(|(m, _)| m)
}

/// Predicted class and the per-class decision values. Ties go to the
/// smallest class index.
pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<(usize, Vec<f64>)> {
    let dv = model.decision_values(x)?;
    let mut best = 0;
    for (k, v) in dv.iter().enumerate() {
        if *v > dv[best] {
            best = k;
        }
    }
    Ok((best, dv))
}
