//! Stochastic gradient descent with momentum and L2 weight decay.

use super::backprop::Gradients;
use super::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    /// Per-class loss weights; `None` derives inverse-frequency weights from
    /// the training labels.
    pub class_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl TrainConfig {
    /// Emotion pretraining schedule.
    pub fn pretrain() -> Self {
        Self {
            lr: 0.001,
            weight_decay: 1e-4,
            momentum: 0.8,
            max_epochs: 50,
            early_stop_patience: 5,
            batch_size: 16,
            class_weights: None,
            seed: 0,
        }
    }

    /// Fine-tuning schedule: longer, without momentum.
    pub fn finetune() -> Self {
        Self {
            momentum: 0.0,
            max_epochs: 300,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.early_stop_patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience, batch size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0, 1) and weight decay be >= 0".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != n_classes {
                return Err(Error::Dimension {
                    expected: n_classes,
                    got: w.len(),
                });
            }
            if w.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `g' = g + wd * p` (decaying weights only), `v = momentum * v + g'`,
/// `p -= lr * v`. `velocity` is zero-initialized on first use.
pub fn sgd_step(params: &mut [Param], grads: &Gradients, velocity: &mut Vec<Vec<f64>>, cfg: &TrainConfig) {
    if velocity.len() != params.len() {
        *velocity = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
    }
    for ((p, g), v) in params.iter_mut().zip(&grads.values).zip(velocity.iter_mut()) {
        if !p.kind.trainable() {
            continue;
        }
        let wd = if p.kind.decays() { cfg.weight_decay } else { 0.0 };
        for ((x, &gx), vx) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
            let step = gx + wd * *x;
            *vx = cfg.momentum * *vx + step;
            *x -= cfg.lr * *vx;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynet::ParamKind;

    fn scalar(kind: ParamKind, v: f64) -> Vec<Param> {
        vec![Param {
            name: "p".into(),
            kind,
            shape: vec![1],
            data: vec![v],
        }]
    }

    fn g(v: f64) -> Gradients {
        Gradients { values: vec![vec![v]] }
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::pretrain()
        };
        let mut p = scalar(ParamKind::ConvWeight, 0.37);
        let mut vel = Vec::new();
        sgd_step(&mut p, &g(0.0), &mut vel, &cfg);
        assert_eq!(p[0].data, vec![0.37]);
    }

    #[test]
    fn vanilla_step() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            momentum: 0.0,
            lr: 0.1,
            ..TrainConfig::pretrain()
        };
        let mut p = scalar(ParamKind::ConvWeight, 1.0);
        sgd_step(&mut p, &g(2.5), &mut Vec::new(), &cfg);
        assert_eq!(p[0].data, vec![1.0 - 0.1 * 2.5]);
    }

    #[test]
    fn two_momentum_steps() {
        let cfg = TrainConfig {
            lr: 0.001,
            weight_decay: 1e-4,
            momentum: 0.8,
            ..TrainConfig::pretrain()
        };
        let mut p = scalar(ParamKind::HeadWeight, 0.5);
        let mut vel = Vec::new();
        sgd_step(&mut p, &g(0.2), &mut vel, &cfg);
        sgd_step(&mut p, &g(-0.1), &mut vel, &cfg);
        // hand iteration
        let v1 = 0.2 + 1e-4 * 0.5;
        let p1 = 0.5 - 0.001 * v1;
        let v2 = 0.8 * v1 + (-0.1 + 1e-4 * p1);
        let p2 = p1 - 0.001 * v2;
        assert!((p[0].data[0] - p2).abs() < 1e-15);
    }

    #[test]
    fn no_decay_on_norm_and_bias() {
        let cfg = TrainConfig {
            weight_decay: 0.5,
            lr: 0.1,
            ..TrainConfig::pretrain()
        };
        for kind in [ParamKind::NormScale, ParamKind::NormShift, ParamKind::HeadBias] {
            let mut p = scalar(kind, 1.0);
            sgd_step(&mut p, &g(0.0), &mut Vec::new(), &cfg);
            assert_eq!(p[0].data, vec![1.0]);
        }
        let mut p = scalar(ParamKind::RunningMean, 1.0);
        sgd_step(&mut p, &g(5.0), &mut Vec::new(), &cfg);
        assert_eq!(p[0].data, vec![1.0]);
    }

    #[test]
    fn schedules() {
        let p = TrainConfig::pretrain();
        assert_eq!((p.lr, p.weight_decay, p.momentum, p.max_epochs, p.early_stop_patience), (0.001, 1e-4, 0.8, 50, 5));
        let f = TrainConfig::finetune();
        assert_eq!((f.momentum, f.max_epochs), (0.0, 300));
    }
}
