//! HTK-style mel scale and triangular filterbank.

use super::FeatureConfig;
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// The `n_mels + 2` band edges, in Hz, equally spaced on the mel scale.
pub fn mel_grid_hz(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let step = (hi - lo) / (n_mels + 1) as f64;
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect()
}

/// Row-major `n_mels x (n_fft / 2 + 1)` filterbank. Filter `i` rises from
/// grid point `i` to a peak of 1.0 at grid point `i + 1` and falls to zero
/// at grid point `i + 2`.
///
/// With many filters and a short transform, low-frequency filters can be
/// narrower than one bin and end up all zero.
pub fn mel_filterbank(cfg: &FeatureConfig, sample_rate: u32) -> Result<Vec<Vec<f64>>> {
    let nyquist = sample_rate as f64 / 2.0;
    if cfg.fmax_hz > nyquist + 1e-9 {
        return Err(Error::Config(format!(
            "fmax {} Hz exceeds Nyquist {} Hz",
            cfg.fmax_hz, nyquist
        )));
    }
    if !(cfg.fmin_hz >= 0.0 && cfg.fmin_hz < cfg.fmax_hz) {
        return Err(Error::Config(format!(
            "mel range [{}, {}] Hz is empty",
            cfg.fmin_hz, cfg.fmax_hz
        )));
    }
    if cfg.n_mels == 0 || cfg.n_fft < 2 {
        return Err(Error::Config("n_mels and n_fft must be positive".into()));
    }

    let n_bins = cfg.n_fft / 2 + 1;
    let grid = mel_grid_hz(cfg.n_mels, cfg.fmin_hz, cfg.fmax_hz);
    let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
    let bank = (0..cfg.n_mels)
        .map(|i| {
            let (left, center, right) = (grid[i], grid[i + 1], grid[i + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f < left || f > right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect();
    Ok(bank)
}
