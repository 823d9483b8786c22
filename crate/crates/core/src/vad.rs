//! Energy and zero-crossing voice activity detection.
//!
//! A frame is voiced when its RMS energy exceeds a mode-dependent multiple of
//! a robust noise floor (10th percentile of all frame energies) and its
//! zero-crossing rate stays below a ceiling. Unvoiced frames are then cut,
//! keeping a short hangover after each voiced run.

use crate::dataset_io::AudioClip;
use crate::error::{Error, Result};

pub const SUPPORTED_RATES: [u32; 4] = [8000, 16000, 32000, 48000];
const NOISE_FLOOR_MIN: f64 = 1e-5;
const NOISE_PERCENTILE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct VadConfig {
    /// Aggressiveness, 0 (lenient) to 3 (strict).
    pub mode: u8,
    pub frame_ms: u32,
    pub hangover_frames: usize,
    /// Energy ratio over the noise floor required per mode.
    pub thresholds: [f64; 4],
    /// Maximum zero-crossing rate, as a fraction of the Nyquist rate.
    pub max_zcr: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            mode: 2,
            frame_ms: 30,
            hangover_frames: 2,
            thresholds: [1.5, 2.0, 3.0, 4.5],
            max_zcr: 0.35,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode > 3 {
            return Err(Error::Config(format!("vad mode {} not in 0..=3", self.mode)));
        }
        if ![10, 20, 30].contains(&self.frame_ms) {
            return Err(Error::Config(format!(
                "vad frame length {} ms not one of 10, 20, 30",
                self.frame_ms
            )));
        }
        if self.thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("vad thresholds must be nondecreasing".into()));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.thresholds[self.mode as usize]
    }

    pub fn frame_len(&self, sample_rate: u32) -> usize {
        (sample_rate as usize * self.frame_ms as usize) / 1000
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameDecisions {
    pub flags: Vec<bool>,
    pub frame_len_samples: usize,
}

impl FrameDecisions {
    pub fn voiced_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

pub fn frame_rms(frame: &[f64]) -> f64 {
    (frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64).sqrt()
}

/// Sign changes per sample pair; 1.0 for an alternating (Nyquist) signal.
pub fn zero_crossing_rate(frame: &[f64]) -> f64 {
    if frame.len() < 2 {
        return 0.0;
    }
    let crossings = frame
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count();
    crossings as f64 / (frame.len() - 1) as f64
}

/// 10th-percentile (nearest rank) of the frame energies, floored.
pub fn noise_floor(rms: &[f64]) -> f64 {
    let mut sorted = rms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((NOISE_PERCENTILE * sorted.len() as f64).ceil() as usize).max(1) - 1;
    sorted[rank].max(NOISE_FLOOR_MIN)
}

pub fn classify_frames(clip: &AudioClip, cfg: &VadConfig) -> Result<FrameDecisions> {
    cfg.validate()?;
    if !SUPPORTED_RATES.contains(&clip.sample_rate) {
        return Err(Error::InvalidInput(format!(
            "vad does not support {} Hz (supported: {SUPPORTED_RATES:?})",
            clip.sample_rate
        )));
    }
    let frame_len = cfg.frame_len(clip.sample_rate);
    if clip.len() < frame_len {
        return Err(Error::InvalidInput(format!(
            "clip of {} samples is shorter than one {} ms frame",
            clip.len(),
            cfg.frame_ms
        )));
    }

    let frames: Vec<&[f64]> = clip.samples.chunks_exact(frame_len).collect();
    let rms: Vec<f64> = frames.iter().map(|f| frame_rms(f)).collect();
    let gate = cfg.threshold() * noise_floor(&rms);
    let flags = frames
        .iter()
        .zip(&rms)
        .map(|(f, &e)| e > gate && zero_crossing_rate(f) < cfg.max_zcr)
        .collect();
    Ok(FrameDecisions {
        flags,
        frame_len_samples: frame_len,
    })
}

/// Indices of frames kept: every voiced frame plus up to `hangover`
/// unvoiced frames directly after each voiced run.
pub fn kept_frames(flags: &[bool], hangover: usize) -> Vec<usize> {
    let mut kept = Vec::new();
    let mut since_voiced: Option<usize> = None;
    for (i, &voiced) in flags.iter().enumerate() {
        if voiced {
            since_voiced = Some(0);
            kept.push(i);
        } else if let Some(n) = since_voiced {
            if n < hangover {
                kept.push(i);
                since_voiced = Some(n + 1);
            } else {
                since_voiced = None;
            }
        }
    }
    kept
}

/// Concatenates the kept frames. A clip with no voiced frame is returned
/// unchanged. Samples past the last whole frame are dropped.
pub fn filter_voiced(
    clip: &AudioClip,
    decisions: &FrameDecisions,
    hangover_frames: usize,
) -> Result<AudioClip> {
    let frame_len = decisions.frame_len_samples;
    if frame_len == 0 || clip.len() / frame_len != decisions.flags.len() {
        return Err(Error::Shape(format!(
            "{} decisions of {} samples do not cover a {}-sample clip",
            decisions.flags.len(),
            frame_len,
            clip.len()
        )));
    }
    if decisions.voiced_count() == 0 {
        return Ok(clip.clone());
    }
    let mut samples = Vec::with_capacity(clip.len());
    for i in kept_frames(&decisions.flags, hangover_frames) {
        samples.extend_from_slice(&clip.samples[i * frame_len..(i + 1) * frame_len]);
    }
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
    })
}

/// Classify and filter in one call.
pub fn apply_vad(clip: &AudioClip, cfg: &VadConfig) -> Result<AudioClip> {
    let decisions = classify_frames(clip, cfg)?;
    filter_voiced(clip, &decisions, cfg.hangover_frames)
}
