//! Training-mode forward pass (batch normalization statistics) and exact
//! reverse-mode gradients of the mean batch loss.

use super::layers::{
    batch_stats, conv3x3, conv3x3_backward, global_average, normalize, normalize_backward, relu_inplace, relu_mask,
    Map,
};
use super::loss::{loss, loss_and_grad};
use super::{input_map, NetModel, Unit};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// One gradient buffer per parameter, aligned with `NetModel::params`.
/// Running statistics get all-zero buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &NetModel) -> Self {
        Self {
            values: model.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }
}

/// Batch statistics observed by one normalization layer.
#[derive(Debug, Clone)]
pub(crate) struct NormObservation {
    pub mean_idx: usize,
    pub var_idx: usize,
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

struct UnitCache {
    input: Vec<Map>,
    xhat: Vec<Map>,
    var: Vec<f64>,
    count: usize,
    /// Rectified outputs, kept only for units followed by a rectifier.
    output: Option<Vec<Map>>,
}

struct BlockCache {
    a: UnitCache,
    b: UnitCache,
    output: Vec<Map>,
}

struct StageCache {
    down: UnitCache,
    blocks: Vec<BlockCache>,
}

struct Forward<'m> {
    model: &'m NetModel,
    observations: Vec<NormObservation>,
}

impl Forward<'_> {
    fn unit(&mut self, xs: &[Map], u: &Unit, relu: bool) -> (Vec<Map>, UnitCache) {
        let p = &self.model.params;
        let conv: Vec<Map> = xs
            .iter()
            .map(|x| conv3x3(x, &p[u.conv].data, u.out_ch, u.stride))
            .collect();
        let stats = batch_stats(&conv);
        let (mut ys, xhat) = normalize(&conv, &stats.mean, &stats.var, &p[u.gamma].data, &p[u.beta].data);
        let n = stats.count as f64;
        self.observations.push(NormObservation {
            mean_idx: u.mean,
            var_idx: u.var,
            mean: stats.mean.clone(),
            unbiased_var: stats
                .var
                .iter()
                .map(|v| if n > 1.0 { v * n / (n - 1.0) } else { *v })
                .collect(),
        });
        let output = if relu {
            ys.iter_mut().for_each(relu_inplace);
            Some(ys.clone())
        } else {
            None
        };
        let cache = UnitCache {
            input: xs.to_vec(),
            xhat,
            var: stats.var,
            count: stats.count,
            output,
        };
        (ys, cache)
    }
}

fn unit_backward(model: &NetModel, u: &Unit, cache: UnitCache, mut dys: Vec<Map>, grads: &mut Gradients) -> Vec<Map> {
    if let Some(out) = &cache.output {
        for (d, o) in dys.iter_mut().zip(out) {
            relu_mask(d, o);
        }
    }
    let mut dgamma = std::mem::take(&mut grads.values[u.gamma]);
    let mut dbeta = std::mem::take(&mut grads.values[u.beta]);
    let dconv = normalize_backward(
        &dys,
        &cache.xhat,
        &cache.var,
        &model.params[u.gamma].data,
        cache.count,
        &mut dgamma,
        &mut dbeta,
    );
    grads.values[u.gamma] = dgamma;
    grads.values[u.beta] = dbeta;

    let weight = &model.params[u.conv].data;
    let dweight = &mut grads.values[u.conv];
    cache
        .input
        .iter()
        .zip(&dconv)
        .map(|(x, d)| conv3x3_backward(x, weight, d, u.stride, dweight))
        .collect()
}

/// Mean weighted loss over the batch, its gradient, and the batch
/// normalization statistics seen on the way. Without `backward` the
/// gradient is left at zero.
pub(crate) fn loss_grad_and_stats(
    model: &NetModel,
    batch: &[(&FeatureMatrix, usize)],
    class_weights: &[f64],
    eps: f64,
    backward: bool,
) -> Result<(f64, Gradients, Vec<NormObservation>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    for (f, _) in batch {
        model.check_input(f)?;
    }
    let plan = model.plan();
    let mut fw = Forward {
        model,
        observations: Vec::new(),
    };

    let mut xs: Vec<Map> = batch.iter().map(|(f, _)| input_map(f)).collect();
    let mut caches = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        let (ys, down) = fw.unit(&xs, &stage.down, true);
        xs = ys;
        let mut blocks = Vec::with_capacity(stage.blocks.len());
        for (ua, ub) in &stage.blocks {
            let (h, a) = fw.unit(&xs, ua, true);
            let (mut ys, b) = fw.unit(&h, ub, false);
            for (y, x) in ys.iter_mut().zip(&xs) {
                for (o, s) in y.data.iter_mut().zip(&x.data) {
                    *o += s;
                }
                relu_inplace(y);
            }
            blocks.push(BlockCache { a, b, output: ys.clone() });
            xs = ys;
        }
        caches.push(StageCache { down, blocks });
    }
    let observations = fw.observations;

    // pooling, head and loss
    let k = model.config.n_classes;
    let bsz = batch.len() as f64;
    let head_w = &model.params[plan.head_w].data;
    let mut grads = Gradients::zeros_like(model);
    if !backward {
        let mut total = 0.0;
        for (x, (_, target)) in xs.iter().zip(batch) {
            total += loss(&model.head_logits(&global_average(x)), *target, class_weights, eps)?;
        }
        return Ok((total / bsz, grads, observations));
    }
    let mut total = 0.0;
    let mut dxs = Vec::with_capacity(xs.len());
    for (x, (_, target)) in xs.iter().zip(batch) {
        let e = global_average(x);
        let logits = model.head_logits(&e);
        let (l, dz) = loss_and_grad(&logits, *target, class_weights, eps)?;
        total += l;
        let dz: Vec<f64> = dz.into_iter().map(|v| v / bsz).collect();
        for (c, &ec) in e.iter().enumerate() {
            for j in 0..k {
                grads.values[plan.head_w][c * k + j] += ec * dz[j];
            }
        }
        for j in 0..k {
            grads.values[plan.head_b][j] += dz[j];
        }
        let positions = x.positions() as f64;
        let mut dx = x.zeros_like();
        for c in 0..x.c {
            let de: f64 = (0..k).map(|j| head_w[c * k + j] * dz[j]).sum();
            dx.plane_mut(c).iter_mut().for_each(|v| *v = de / positions);
        }
        dxs.push(dx);
    }

    for (stage, cache) in plan.stages.iter().zip(caches).rev() {
        for ((ua, ub), bc) in stage.blocks.iter().zip(cache.blocks).rev() {
            for (d, o) in dxs.iter_mut().zip(&bc.output) {
                relu_mask(d, o);
            }
            let skip = dxs.clone();
            let dh = unit_backward(model, ub, bc.b, dxs, &mut grads);
            let mut dmain = unit_backward(model, ua, bc.a, dh, &mut grads);
            for (m, s) in dmain.iter_mut().zip(&skip) {
                for (a, b) in m.data.iter_mut().zip(&s.data) {
                    *a += b;
                }
            }
            dxs = dmain;
        }
        dxs = unit_backward(model, &stage.down, cache.down, dxs, &mut grads);
    }

    Ok((total / bsz, grads, observations))
}

/// Mean weighted loss of the batch in training mode and its exact gradient
/// with respect to every parameter.
pub fn grad(
    model: &NetModel,
    batch: &[(&FeatureMatrix, usize)],
    class_weights: &[f64],
    eps: f64,
) -> Result<(f64, Gradients)> {
    let (l, g, _) = loss_grad_and_stats(model, batch, class_weights, eps, true)?;
    Ok((l, g))
}

/// Training-mode loss only; used by finite-difference checks.
pub fn batch_loss(
    model: &NetModel,
    batch: &[(&FeatureMatrix, usize)],
    class_weights: &[f64],
    eps: f64,
) -> Result<f64> {
    loss_grad_and_stats(model, batch, class_weights, eps, false).map(|(l, _, _)| l)
}
