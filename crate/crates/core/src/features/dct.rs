//! Orthonormal DCT-II and its inverse, via precomputed cosine tables.

use std::f64::consts::PI;

/// `n_out x n_in` orthonormal DCT-II basis.
#[derive(Debug, Clone)]
pub struct Dct {
    n_in: usize,
    n_out: usize,
    basis: Vec<f64>,
}

impl Dct {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        assert!(n_out <= n_in && n_in > 0);
        let mut basis = Vec::with_capacity(n_in * n_out);
        for k in 0..n_out {
            let scale = if k == 0 {
                (1.0 / n_in as f64).sqrt()
            } else {
                (2.0 / n_in as f64).sqrt()
            };
            for n in 0..n_in {
                basis.push(scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos());
            }
        }
        Self { n_in, n_out, basis }
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        for (k, o) in out.iter_mut().enumerate().take(self.n_out) {
            let row = &self.basis[k * self.n_in..(k + 1) * self.n_in];
            *o = row.iter().zip(x).map(|(b, v)| b * v).sum();
        }
    }

    /// Transposed basis (DCT-III); exact inverse when `n_out == n_in`.
    pub fn inverse(&self, c: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, &ck) in c.iter().enumerate().take(self.n_out) {
            let row = &self.basis[k * self.n_in..(k + 1) * self.n_in];
            for (o, b) in out.iter_mut().zip(row) {
                *o += ck * b;
            }
        }
    }
}

pub fn dct2_ortho(x: &[f64], n_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_out];
    Dct::new(x.len(), n_out).forward(x, &mut out);
    out
}

pub fn idct_ortho(c: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    Dct::new(n, c.len()).inverse(c, &mut out);
    out
}
