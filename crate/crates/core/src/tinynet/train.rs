//! Mini-batch training loop with devel-UAR early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backprop::loss_grad_and_stats;
use super::optim::{sgd_step, TrainConfig};
use super::{argmax, NetModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics;

const RUNNING_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: FeatureMatrix,
    pub label: usize,
}

/// Inverse-frequency weights normalized to mean one: `w_k = N / (K n_k)`.
pub fn class_weights_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("no class counts".into()));
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!("class {k} has no examples")));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&n| total as f64 / (k * n as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub devel_uar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
}

/// Tracks strict improvements of a score. Ties do not count as improvement,
/// so the earliest best epoch wins.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the score of `epoch`; returns `(improved, should_stop)`.
    pub fn observe(&mut self, epoch: usize, score: f64) -> (bool, bool) {
        if score > self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Generic epoch loop. `run_epoch` trains one epoch and returns
/// `(train_loss, devel_uar)`; `keep` is called whenever the devel score
/// strictly improves so the caller can snapshot its state.
pub fn fit<S>(
    state: &mut S,
    max_epochs: usize,
    patience: usize,
    mut run_epoch: impl FnMut(&mut S, usize) -> Result<(f64, f64)>,
    mut keep: impl FnMut(&mut S, usize),
) -> Result<TrainHistory> {
    let mut stopper = EarlyStopping::new(patience);
    let mut epochs = Vec::new();
    let mut early_stopped = false;
    for epoch in 1..=max_epochs {
        let (train_loss, devel_uar) = run_epoch(state, epoch)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            devel_uar,
        });
        let (improved, stop) = stopper.observe(epoch, devel_uar);
        if improved {
            keep(state, epoch);
        }
        if stop {
            early_stopped = epoch < max_epochs;
            break;
        }
    }
    Ok(TrainHistory {
        stopped_epoch: epochs.len(),
        best_epoch: stopper.best_epoch(),
        early_stopped,
        epochs,
    })
}

fn check_set(set: &[LabeledFeatures], n_classes: usize, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidInput(format!("{what} set is empty")));
    }
    if let Some(bad) = set.iter().find(|e| e.label >= n_classes) {
        return Err(Error::InvalidInput(format!(
            "{what} label {} out of range for {n_classes} classes",
            bad.label
        )));
    }
    Ok(())
}

pub fn predict_all(model: &NetModel, set: &[LabeledFeatures]) -> Result<Vec<usize>> {
    set.iter()
        .map(|e| model.forward(&e.features).map(|(_, l)| argmax(&l)))
        .collect()
}

pub fn devel_uar(model: &NetModel, devel: &[LabeledFeatures]) -> Result<f64> {
    let truth: Vec<usize> = devel.iter().map(|e| e.label).collect();
    let pred = predict_all(model, devel)?;
    metrics::uar(&truth, &pred, model.config.n_classes)
}

struct TrainState {
    model: NetModel,
    best: NetModel,
    velocity: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

/// Trains with shuffled mini-batches and returns the parameters from the
/// epoch with the best devel UAR.
pub fn train(
    model: &NetModel,
    train_set: &[LabeledFeatures],
    devel_set: &[LabeledFeatures],
    cfg: &TrainConfig,
) -> Result<(NetModel, TrainHistory)> {
    let k = model.config.n_classes;
    cfg.validate(k)?;
    check_set(train_set, k, "train")?;
    check_set(devel_set, k, "devel")?;
    let weights = match &cfg.class_weights {
        Some(w) => w.clone(),
        None => {
            let mut counts = vec![0; k];
            train_set.iter().for_each(|e| counts[e.label] += 1);
            class_weights_from_counts(&counts)?
        }
    };
    let eps = model.config.label_smoothing;

    let mut state = TrainState {
        model: model.clone(),
        best: model.clone(),
        velocity: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        order: (0..train_set.len()).collect(),
    };

    let history = fit(
        &mut state,
        cfg.max_epochs,
        cfg.early_stop_patience,
        |st, _epoch| {
            st.order.shuffle(&mut st.rng);
            let mut loss_sum = 0.0;
            for chunk in st.order.chunks(cfg.batch_size) {
                let batch: Vec<(&FeatureMatrix, usize)> = chunk
                    .iter()
                    .map(|&i| (&train_set[i].features, train_set[i].label))
                    .collect();
                let (l, g, stats) = loss_grad_and_stats(&st.model, &batch, &weights, eps, true)?;
                loss_sum += l * batch.len() as f64;
                sgd_step(&mut st.model.params, &g, &mut st.velocity, cfg);
                for obs in stats {
                    let rm = &mut st.model.params[obs.mean_idx].data;
                    for (r, m) in rm.iter_mut().zip(&obs.mean) {
                        *r = RUNNING_MOMENTUM * *r + (1.0 - RUNNING_MOMENTUM) * m;
                    }
                    let rv = &mut st.model.params[obs.var_idx].data;
                    for (r, v) in rv.iter_mut().zip(&obs.unbiased_var) {
                        *r = RUNNING_MOMENTUM * *r + (1.0 - RUNNING_MOMENTUM) * v;
                    }
                }
                st.model.apply_precision();
            }
            let train_loss = loss_sum / train_set.len() as f64;
            if !train_loss.is_finite() {
                return Err(Error::InvalidInput("training diverged (non-finite loss)".into()));
            }
            Ok((train_loss, devel_uar(&st.model, devel_set)?))
        },
        |st, _| st.best = st.model.clone(),
    )?;
    Ok((state.best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use crate::tinynet::backprop::batch_loss;
    use crate::tinynet::NetConfig;

    #[test]
    fn weights_from_counts() {
        assert_eq!(class_weights_from_counts(&[5, 5, 5]).unwrap(), vec![1.0; 3]);
        let w = class_weights_from_counts(&[1, 3]).unwrap();
        assert_eq!(w[0], 2.0);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(class_weights_from_counts(&[3, 0]).is_err());
    }

    #[test]
    fn emotion_corpus_weights() {
        let counts = [2167, 2167, 2167, 1795, 2047, 1863, 593];
        let w = class_weights_from_counts(&counts).unwrap();
        let total: usize = counts.iter().sum();
        assert_eq!(total, 12799);
        for (wk, &n) in w.iter().zip(&counts) {
            assert_eq!(*wk, 12799.0 / (7.0 * n as f64));
        }
        assert_eq!(argmax(&w), 6);
        let mean: f64 = w.iter().zip(&counts).map(|(w, &n)| w * n as f64).sum::<f64>() / total as f64;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scripted_early_stop() {
        let script = [0.50, 0.60, 0.60, 0.59, 0.58, 0.57, 0.55, 0.9, 0.9];
        let mut kept = Vec::new();
        let h = fit(
            &mut kept,
            50,
            5,
            |_, epoch| Ok((1.0, script[epoch - 1])),
            |kept, epoch| kept.push(epoch),
        )
        .unwrap();
        assert_eq!(h.stopped_epoch, 7);
        assert_eq!(h.best_epoch, 2);
        assert!(h.early_stopped);
        assert_eq!(kept, vec![1, 2]);
    }

    #[test]
    fn runs_to_max_without_stall() {
        let h = fit(&mut (), 4, 5, |_, e| Ok((0.0, e as f64)), |_, _| {}).unwrap();
        assert_eq!((h.stopped_epoch, h.best_epoch, h.early_stopped), (4, 4, false));
    }

    fn toy(n: usize) -> Vec<LabeledFeatures> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let values = (0..8 * 4).map(|j| sign * (0.5 + 0.1 * ((i * 7 + j) % 5) as f64)).collect();
                LabeledFeatures {
                    features: FeatureMatrix::new(8, 4, values, FeatureKind::Mfcc).unwrap(),
                    label,
                }
            })
            .collect()
    }

    fn full_batch_loss(m: &NetModel, set: &[LabeledFeatures]) -> f64 {
        let batch: Vec<(&FeatureMatrix, usize)> = set.iter().map(|e| (&e.features, e.label)).collect();
        batch_loss(m, &batch, &[1.0, 1.0], 0.0).unwrap()
    }

    #[test]
    fn one_epoch_decreases_loss() {
        let set = toy(16);
        let mut cfg = NetConfig::test_preset(8, 2);
        cfg.seed = 5;
        let m = NetModel::new(cfg).unwrap();
        let tc = TrainConfig {
            max_epochs: 1,
            batch_size: 16,
            ..TrainConfig::pretrain()
        };
        let before = full_batch_loss(&m, &set);
        let mut velocity = Vec::new();
        let batch: Vec<(&FeatureMatrix, usize)> = set.iter().map(|e| (&e.features, e.label)).collect();
        let mut after_model = m.clone();
        let (_, g, _) = loss_grad_and_stats(&m, &batch, &[1.0, 1.0], 0.0, true).unwrap();
        sgd_step(&mut after_model.params, &g, &mut velocity, &tc);
        assert!(full_batch_loss(&after_model, &set) < before);
    }

    #[test]
    fn deterministic_history() {
        let set = toy(12);
        let mut cfg = NetConfig::test_preset(8, 2);
        cfg.seed = 1;
        let m = NetModel::new(cfg).unwrap();
        let tc = TrainConfig {
            max_epochs: 3,
            batch_size: 4,
            lr: 0.01,
            seed: 9,
            ..TrainConfig::pretrain()
        };
        let (a, ha) = train(&m, &set, &set, &tc).unwrap();
        let (b, hb) = train(&m, &set, &set, &tc).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert!(ha.best_epoch <= ha.stopped_epoch && ha.stopped_epoch <= 3);
    }

    #[test]
    fn rejects_bad_sets() {
        let m = NetModel::new(NetConfig::test_preset(8, 2)).unwrap();
        let tc = TrainConfig::pretrain();
        assert!(train(&m, &[], &toy(2), &tc).is_err());
        let mut bad = toy(4);
        bad[0].label = 5;
        assert!(train(&m, &bad, &toy(2), &tc).is_err());
    }
}
