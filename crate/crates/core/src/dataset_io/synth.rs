//! Deterministic synthetic corpora: one harmonic pitch per class.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{Manifest, ManifestEntry, Split};
use super::wav::{write_wav, AudioClip};
use crate::error::{Error, Result};

/// Parameters of a synthetic dataset.
///
/// Class `k` has fundamental `base_hz * (k + 1) + offset_hz`. The defaults
/// give the 200 Hz pitch ladder; a nonzero offset produces a pitch set
/// disjoint from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
    pub base_hz: f64,
    pub offset_hz: f64,
    /// Train and devel fractions per class; the remainder goes to test.
    pub train_frac: f64,
    pub devel_frac: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_per_class: 20,
            n_classes: 3,
            duration_s: 1.0,
            sample_rate: 16000,
            seed: 0,
            base_hz: 200.0,
            offset_hz: 0.0,
            train_frac: 0.6,
            devel_frac: 0.2,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.n_classes == 0 {
            return Err(Error::Config("synth counts must be positive".into()));
        }
        if !(self.duration_s > 0.0) || self.sample_rate == 0 {
            return Err(Error::Config(
                "synth duration and sample rate must be positive".into(),
            ));
        }
        if self.train_frac < 0.0 || self.devel_frac < 0.0 || self.train_frac + self.devel_frac > 1.0 {
            return Err(Error::Config("split fractions must lie in [0, 1]".into()));
        }
        let top = self.fundamental(self.n_classes - 1) * 1.03 * 3.0;
        if top >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Config(format!(
                "third harmonic of the highest class ({top:.0} Hz) exceeds Nyquist"
            )));
        }
        Ok(())
    }

    pub fn fundamental(&self, class: usize) -> f64 {
        self.base_hz * (class + 1) as f64 + self.offset_hz
    }

    /// Per-class (train, devel, test) counts.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.n_per_class as f64;
        let train = (n * self.train_frac).round() as usize;
        let devel = ((n * self.devel_frac).round() as usize).min(self.n_per_class - train);
        (train, devel, self.n_per_class - train - devel)
    }
}

/// Renders clip `index` of `class`. Each clip owns a ChaCha stream, so the
/// output does not depend on generation order.
pub fn synth_clip(spec: &SynthSpec, class: usize, index: usize) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream((class * spec.n_per_class + index) as u64);

    let sr = spec.sample_rate as f64;
    let n = (spec.duration_s * sr).round().max(1.0) as usize;
    let f0 = spec.fundamental(class) * (1.0 + 0.03 * rng.random_range(-1.0..1.0));
    let phase = rng.random_range(0.0..2.0 * PI);
    let env_phase = rng.random_range(0.0..2.0 * PI);
    let gain = rng.random_range(0.5..1.0);
    // noise-only lead-in and tail, up to 10% of the clip each
    let lead = (rng.random_range(0.0..0.1) * n as f64) as usize;
    let tail = (rng.random_range(0.0..0.1) * n as f64) as usize;
    let voiced_end = n - tail;

    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let noise = 0.01 * rng.random_range(-1.0..1.0);
            if i < lead || i >= voiced_end {
                return noise;
            }
            let env = 1.0 + 0.5 * (2.0 * PI * 4.0 * t + env_phase).sin();
            let theta = 2.0 * PI * f0 * t + phase;
            let tone = theta.sin() + 0.4 * (2.0 * theta).sin() + 0.2 * (3.0 * theta).sin();
            0.3 * gain * env * tone + noise
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: spec.sample_rate,
    }
}

/// Writes `n_per_class * n_classes` WAV files plus `manifest.csv` into
/// `out_dir` and returns the manifest (with absolute paths).
pub fn synth_dataset(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (n_train, n_devel, _) = spec.split_counts();

    let mut relative = Vec::with_capacity(spec.n_classes * spec.n_per_class);
    for class in 0..spec.n_classes {
        for index in 0..spec.n_per_class {
            let id = format!("c{class}_{index:04}");
            let file = format!("{id}.wav");
            write_wav(out_dir.join(&file), &synth_clip(spec, class, index))?;
            let split = if index < n_train {
                Split::Train
            } else if index < n_train + n_devel {
                Split::Devel
            } else {
                Split::Test
            };
            relative.push(ManifestEntry {
                id,
                path: PathBuf::from(file),
                label: class,
                split,
            });
        }
    }
    let manifest = Manifest::new(relative)?;
    manifest.save(out_dir.join("manifest.csv"))?;

    let entries = manifest
        .entries
        .into_iter()
        .map(|e| ManifestEntry {
            path: out_dir.join(e.path),
            ..e
        })
        .collect();
    Ok(Manifest { entries })
}
