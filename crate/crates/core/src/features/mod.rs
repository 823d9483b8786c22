//! Short-time spectral features: log mel filterbank energies and MFCCs.
//!
//! Processing chain: pre-emphasis, framing (trailing partial frame dropped),
//! windowing, zero-padded power spectrum, mel filterbank, natural log with an
//! absolute floor, and for MFCCs an orthonormal DCT-II per frame.

mod dct;
mod io;
mod mel;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::dataset_io::AudioClip;
use crate::error::{Error, Result};

pub use dct::{dct2_ortho, idct_ortho, Dct};
pub use io::{decode_features, encode_features, read_features, write_features, FEATURES_MAGIC};
pub use mel::{hz_to_mel, mel_filterbank, mel_grid_hz, mel_to_hz};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Mfcc,
    LogFbank,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Mfcc => 0,
            FeatureKind::LogFbank => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Mfcc),
            1 => Some(FeatureKind::LogFbank),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::LogFbank => "logfbank",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mfcc" => Ok(FeatureKind::Mfcc),
            "logfbank" => Ok(FeatureKind::LogFbank),
            other => Err(Error::Config(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    /// Symmetric Hamming, `0.54 - 0.46 cos(2 pi n / (N - 1))`.
    Hamming,
    /// Symmetric Hann.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let denom = (len.max(2) - 1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * std::f64::consts::PI * n as f64 / denom;
                match self {
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hamming" => Ok(Window::Hamming),
            "hann" => Ok(Window::Hann),
            "rectangular" => Ok(Window::Rectangular),
            other => Err(Error::Config(format!("unknown window {other:?}"))),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Hamming => "hamming",
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub win_len_s: f64,
    pub step_s: f64,
    pub window: Window,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub preemph: f64,
    pub n_fft: usize,
    pub n_mfcc: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            win_len_s: 0.025,
            step_s: 0.01,
            window: Window::Hamming,
            n_mels: 256,
            fmin_hz: 50.0,
            fmax_hz: 8000.0,
            preemph: 0.97,
            n_fft: 512,
            n_mfcc: 40,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn win_samples(&self, sample_rate: u32) -> usize {
        (self.win_len_s * sample_rate as f64).round() as usize
    }

    pub fn step_samples(&self, sample_rate: u32) -> usize {
        (self.step_s * sample_rate as f64).round() as usize
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let win = self.win_samples(sample_rate);
        if win == 0 || self.step_samples(sample_rate) == 0 {
            return Err(Error::Config("window and step must span at least one sample".into()));
        }
        if self.n_fft < win {
            return Err(Error::Config(format!(
                "n_fft {} shorter than the {win}-sample window",
                self.n_fft
            )));
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return Err(Error::Config(format!(
                "n_mfcc {} must be in 1..={}",
                self.n_mfcc, self.n_mels
            )));
        }
        if !(0.0..1.0).contains(&self.preemph) {
            return Err(Error::Config(format!("pre-emphasis {} not in [0, 1)", self.preemph)));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log floor must be positive".into()));
        }
        if self.fmax_hz > sample_rate as f64 / 2.0 {
            return Err(Error::Config(format!(
                "fmax {} Hz exceeds Nyquist for {sample_rate} Hz",
                self.fmax_hz
            )));
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz) {
            return Err(Error::Config("fmin must lie in [0, fmax)".into()));
        }
        Ok(())
    }

    /// Number of whole frames in a signal of `len` samples.
    pub fn frame_count(&self, len: usize, sample_rate: u32) -> usize {
        let win = self.win_samples(sample_rate);
        if len < win {
            0
        } else {
            1 + (len - win) / self.step_samples(sample_rate)
        }
    }
}

/// Time x coefficient matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, kind: FeatureKind) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} feature matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(Self {
            rows,
            cols,
            values,
            kind,
        })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.cols..(t + 1) * self.cols]
    }
}

pub fn pre_emphasize(signal: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(signal.len());
    if let Some(&first) = signal.first() {
        out.push(first);
        out.extend(signal.windows(2).map(|w| w[1] - alpha * w[0]));
    }
    out
}

/// Precomputed window, filterbank, transform plan and DCT basis for one
/// (config, sample rate) pair. Reuse it across clips.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    sample_rate: u32,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
    dct: Dct,
}

impl fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("cfg", &self.cfg)
            .field("sample_rate", &self.sample_rate)
            .finish_non_exhaustive()
    }
}

impl FeatureExtractor {
    pub fn new(cfg: &FeatureConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        Ok(Self {
            window: cfg.window.coefficients(cfg.win_samples(sample_rate)),
            filterbank: mel_filterbank(cfg, sample_rate)?,
            fft: FftPlanner::new().plan_fft_forward(cfg.n_fft),
            dct: Dct::new(cfg.n_mels, cfg.n_mfcc),
            cfg: cfg.clone(),
            sample_rate,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &[Vec<f64>] {
        &self.filterbank
    }

    /// `|X[k]|^2` for `k in 0..=n_fft/2` of a frame zero-padded to `n_fft`.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.cfg.n_fft)
            .collect();
        self.fft.process(&mut buf);
        buf[..self.cfg.n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    fn check_clip(&self, clip: &AudioClip) -> Result<usize> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::InvalidInput(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.sample_rate, clip.sample_rate
            )));
        }
        let frames = self.cfg.frame_count(clip.len(), self.sample_rate);
        if frames == 0 {
            return Err(Error::InvalidInput(format!(
                "clip of {} samples is shorter than one {}-sample window",
                clip.len(),
                self.cfg.win_samples(self.sample_rate)
            )));
        }
        Ok(frames)
    }

    pub fn logfbank(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let frames = self.check_clip(clip)?;
        let win = self.window.len();
        let step = self.cfg.step_samples(self.sample_rate);
        let emphasized = pre_emphasize(&clip.samples, self.cfg.preemph);
        let floor = self.cfg.log_floor;

        let mut values = Vec::with_capacity(frames * self.cfg.n_mels);
        let mut frame = vec![0.0; win];
        for t in 0..frames {
            let start = t * step;
            for ((f, &x), &w) in frame.iter_mut().zip(&emphasized[start..start + win]).zip(&self.window) {
                *f = x * w;
            }
            let power = self.power_spectrum(&frame);
            values.extend(self.filterbank.iter().map(|filt| {
                let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
                e.max(floor).ln()
            }));
        }
        FeatureMatrix::new(frames, self.cfg.n_mels, values, FeatureKind::LogFbank)
    }

    pub fn mfcc(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let fbank = self.logfbank(clip)?;
        Ok(self.cepstrum(&fbank))
    }

    /// DCT-II of every log filterbank row, truncated to `n_mfcc`.
    pub fn cepstrum(&self, fbank: &FeatureMatrix) -> FeatureMatrix {
        let n = self.cfg.n_mfcc;
        let mut values = vec![0.0; fbank.rows * n];
        for t in 0..fbank.rows {
            self.dct.forward(fbank.row(t), &mut values[t * n..(t + 1) * n]);
        }
        FeatureMatrix {
            rows: fbank.rows,
            cols: n,
            values,
            kind: FeatureKind::Mfcc,
        }
    }

    pub fn extract(&self, clip: &AudioClip, kind: FeatureKind) -> Result<FeatureMatrix> {
        match kind {
            FeatureKind::Mfcc => self.mfcc(clip),
            FeatureKind::LogFbank => self.logfbank(clip),
        }
    }
}

pub fn logfbank(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    FeatureExtractor::new(cfg, clip.sample_rate)?.logfbank(clip)
}

pub fn mfcc(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    FeatureExtractor::new(cfg, clip.sample_rate)?.mfcc(clip)
}
