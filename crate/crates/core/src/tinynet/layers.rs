//! 3x3 convolution, per-channel normalization and rectifier kernels on
//! channel-major feature maps.
//!
//! Convolutions pad by replicating the edge row/column, so a constant input
//! map stays constant through every layer regardless of its size.

pub(crate) const BN_EPS: f64 = 1e-5;

/// `c x h x w` map, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn plane_mut(&mut self, ch: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[ch * n..(ch + 1) * n]
    }

    pub fn positions(&self) -> usize {
        self.h * self.w
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.c, self.h, self.w)
    }
}

pub(crate) fn conv_out_len(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

/// For each kernel offset, the clamped input index of every output index.
fn tap_table(in_len: usize, out_len: usize, stride: usize) -> [Vec<usize>; 3] {
    std::array::from_fn(|k| {
        (0..out_len)
            .map(|o| (o * stride + k).saturating_sub(1).min(in_len - 1))
            .collect()
    })
}

/// `weight` is `[out_ch][in_ch][3][3]`.
pub(crate) fn conv3x3(input: &Map, weight: &[f64], out_ch: usize, stride: usize) -> Map {
    debug_assert_eq!(weight.len(), out_ch * input.c * 9);
    let (oh, ow) = (conv_out_len(input.h, stride), conv_out_len(input.w, stride));
    let rows = tap_table(input.h, oh, stride);
    let cols = tap_table(input.w, ow, stride);
    let mut out = Map::zeros(out_ch, oh, ow);
    for oc in 0..out_ch {
        let out_plane = out.plane_mut(oc);
        for ic in 0..input.c {
            let in_plane = input.plane(ic);
            let kernel = &weight[(oc * input.c + ic) * 9..][..9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = kernel[ky * 3 + kx];
                    let cx = &cols[kx];
                    for (oy, &iy) in rows[ky].iter().enumerate() {
                        let src = &in_plane[iy * input.w..(iy + 1) * input.w];
                        let dst = &mut out_plane[oy * ow..(oy + 1) * ow];
                        for (d, &ix) in dst.iter_mut().zip(cx) {
                            *d += wv * src[ix];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates the weight gradient into `dweight` and returns the input gradient.
pub(crate) fn conv3x3_backward(
    input: &Map,
    weight: &[f64],
    dout: &Map,
    stride: usize,
    dweight: &mut [f64],
) -> Map {
    let (oh, ow) = (dout.h, dout.w);
    let rows = tap_table(input.h, oh, stride);
    let cols = tap_table(input.w, ow, stride);
    let mut din = input.zeros_like();
    for oc in 0..dout.c {
        let g_plane = dout.plane(oc);
        for ic in 0..input.c {
            let in_plane = input.plane(ic);
            let base = (oc * input.c + ic) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[base + ky * 3 + kx];
                    let cx = &cols[kx];
                    let mut acc = 0.0;
                    let din_plane = din.plane_mut(ic);
                    for (oy, &iy) in rows[ky].iter().enumerate() {
                        let g = &g_plane[oy * ow..(oy + 1) * ow];
                        let src = &in_plane[iy * input.w..(iy + 1) * input.w];
                        let dst = &mut din_plane[iy * input.w..(iy + 1) * input.w];
                        for (&gv, &ix) in g.iter().zip(cx) {
                            acc += gv * src[ix];
                            dst[ix] += wv * gv;
                        }
                    }
                    dweight[base + ky * 3 + kx] += acc;
                }
            }
        }
    }
    din
}

/// Per-channel statistics of a batch, taken over every sample and position.
#[derive(Debug, Clone)]
pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    pub count: usize,
}

pub(crate) fn batch_stats(xs: &[Map]) -> BatchStats {
    let c = xs[0].c;
    let count: usize = xs.iter().map(Map::positions).sum();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let s: f64 = xs.iter().map(|x| x.plane(ch).iter().sum::<f64>()).sum();
        let m = s / count as f64;
        let v: f64 = xs
            .iter()
            .map(|x| x.plane(ch).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
            .sum();
        mean[ch] = m;
        var[ch] = v / count as f64;
    }
    BatchStats { mean, var, count }
}

/// Normalizes with the given statistics and applies the affine transform.
/// Returns the outputs and the normalized (pre-affine) values.
pub(crate) fn normalize(
    xs: &[Map],
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<Map>, Vec<Map>) {
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut ys = Vec::with_capacity(xs.len());
    let mut xhats = Vec::with_capacity(xs.len());
    for x in xs {
        let mut xhat = x.clone();
        let mut y = x.zeros_like();
        for ch in 0..x.c {
            let (m, s, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for (xh, yv) in xhat.plane_mut(ch).iter_mut().zip(y.plane_mut(ch)) {
                *xh = (*xh - m) * s;
                *yv = g * *xh + b;
            }
        }
        ys.push(y);
        xhats.push(xhat);
    }
    (ys, xhats)
}

/// Inference-mode normalization of a single map.
pub(crate) fn normalize_one(x: &mut Map, mean: &[f64], var: &[f64], gamma: &[f64], beta: &[f64]) {
    for ch in 0..x.c {
        let s = 1.0 / (var[ch] + BN_EPS).sqrt();
        let (m, g, b) = (mean[ch], gamma[ch], beta[ch]);
        for v in x.plane_mut(ch) {
            *v = g * (*v - m) * s + b;
        }
    }
}

/// Backward through batch-statistics normalization. Accumulates into
/// `dgamma`/`dbeta` and returns the input gradients.
pub(crate) fn normalize_backward(
    dys: &[Map],
    xhats: &[Map],
    var: &[f64],
    gamma: &[f64],
    count: usize,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<Map> {
    let c = xhats[0].c;
    let m = count as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for (dy, xh) in dys.iter().zip(xhats) {
        for ch in 0..c {
            for (d, x) in dy.plane(ch).iter().zip(xh.plane(ch)) {
                sum_dy[ch] += d;
                sum_dy_xhat[ch] += d * x;
            }
        }
    }
    for ch in 0..c {
        dgamma[ch] += sum_dy_xhat[ch];
        dbeta[ch] += sum_dy[ch];
    }
    dys.iter()
        .zip(xhats)
        .map(|(dy, xh)| {
            let mut dx = dy.zeros_like();
            for ch in 0..c {
                let k = gamma[ch] / (var[ch] + BN_EPS).sqrt() / m;
                let (sd, sdx) = (sum_dy[ch], sum_dy_xhat[ch]);
                for ((o, d), x) in dx.plane_mut(ch).iter_mut().zip(dy.plane(ch)).zip(xh.plane(ch)) {
                    *o = k * (m * d - sd - x * sdx);
                }
            }
            dx
        })
        .collect()
}

pub(crate) fn relu_inplace(x: &mut Map) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the rectifier output was not positive.
pub(crate) fn relu_mask(grad: &mut Map, output: &Map) {
    for (g, o) in grad.data.iter_mut().zip(&output.data) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) fn global_average(x: &Map) -> Vec<f64> {
    let n = x.positions() as f64;
    (0..x.c).map(|ch| x.plane(ch).iter().sum::<f64>() / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &Map, weight: &[f64], out_ch: usize, stride: usize) -> Map {
        let oh = (input.h + 2 - 3) / stride + 1;
        let ow = (input.w + 2 - 3) / stride + 1;
        let mut out = Map::zeros(out_ch, oh, ow);
        for oc in 0..out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ic in 0..input.c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy as isize * stride as isize + ky as isize - 1).clamp(0, input.h as isize - 1) as usize;
                                let ix = (ox as isize * stride as isize + kx as isize - 1).clamp(0, input.w as isize - 1) as usize;
                                s += weight[((oc * input.c + ic) * 3 + ky) * 3 + kx]
                                    * input.data[(ic * input.h + iy) * input.w + ix];
                            }
                        }
                    }
                    out.data[(oc * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 12.9898).sin() * 0.5).collect()
    }

    #[test]
    fn conv_matches_naive() {
        for (h, w, stride) in [(5, 4, 1), (7, 3, 2), (1, 1, 2), (6, 6, 2)] {
            let input = Map { c: 2, h, w, data: pseudo(2 * h * w, 1.0) };
            let weight = pseudo(3 * 2 * 9, 2.0);
            let fast = conv3x3(&input, &weight, 3, stride);
            let slow = naive_conv(&input, &weight, 3, stride);
            assert_eq!((fast.h, fast.w), (slow.h, slow.w));
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_input_stays_constant() {
        let input = Map { c: 1, h: 9, w: 5, data: vec![0.7; 45] };
        let weight = pseudo(4 * 9, 3.0);
        let out = conv3x3(&input, &weight, 4, 2);
        for ch in 0..4 {
            let p = out.plane(ch);
            assert!(p.iter().all(|v| (v - p[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> == <x, conv_backward(g)> and == <w, dW>
        let input = Map { c: 2, h: 5, w: 4, data: pseudo(40, 4.0) };
        let weight = pseudo(2 * 2 * 9, 5.0);
        for stride in [1, 2] {
            let y = conv3x3(&input, &weight, 2, stride);
            let g = Map { data: pseudo(y.data.len(), 6.0), ..y.clone() };
            let mut dw = vec![0.0; weight.len()];
            let dx = conv3x3_backward(&input, &weight, &g, stride, &mut dw);
            let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
            let via_x: f64 = input.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
            let via_w: f64 = weight.iter().zip(&dw).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-10);
            assert!((lhs - via_w).abs() < 1e-10);
        }
    }

    #[test]
    fn normalization_zero_mean_unit_var() {
        let xs = vec![
            Map { c: 2, h: 3, w: 2, data: pseudo(12, 7.0) },
            Map { c: 2, h: 2, w: 2, data: pseudo(8, 8.0) },
        ];
        let stats = batch_stats(&xs);
        assert_eq!(stats.count, 10);
        let (ys, _) = normalize(&xs, &stats.mean, &stats.var, &[1.0, 1.0], &[0.0, 0.0]);
        let after = batch_stats(&ys);
        for ch in 0..2 {
            assert!(after.mean[ch].abs() < 1e-12);
            assert!((after.var[ch] - stats.var[ch] / (stats.var[ch] + BN_EPS)).abs() < 1e-9);
        }
    }
}
