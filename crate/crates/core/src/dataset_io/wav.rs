//! Minimal RIFF/WAVE reader and writer for 16-bit mono PCM.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const PCM_FORMAT: u16 = 1;
const FULL_SCALE: f64 = 32768.0;

/// Mono PCM signal with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0 + 1e-6) {
            return Err(Error::InvalidInput(format!(
                "sample {bad} outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn quantize(x: f64) -> i16 {
    (x * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Encodes a clip as a canonical 44-byte-header WAV file.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip)).map_err(|e| Error::io(path, e))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Format {
    code: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes a WAV byte buffer. Unknown chunks are skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(Error::Truncated("shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::WavFormat("not a RIFF/WAVE container".into()));
    }

    let mut pos = 12;
    let mut format: Option<Format> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(Error::Truncated("fmt chunk".into()));
                }
                format = Some(Format {
                    code: u16_at(bytes, body),
                    channels: u16_at(bytes, body + 2),
                    sample_rate: u32_at(bytes, body + 4),
                    bits: u16_at(bytes, body + 14),
                });
            }
            b"data" => {
                let fmt = format
                    .as_ref()
                    .ok_or_else(|| Error::WavFormat("data chunk before fmt chunk".into()))?;
                check_format(fmt)?;
                if body + size > bytes.len() {
                    return Err(Error::Truncated(format!(
                        "data chunk declares {size} bytes, {} present",
                        bytes.len() - body
                    )));
                }
                if size % 2 != 0 {
                    return Err(Error::Truncated("odd byte count in 16-bit data".into()));
                }
                let samples: Vec<f64> = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / FULL_SCALE)
                    .collect();
                if samples.is_empty() {
                    return Err(Error::InvalidInput("wav contains no samples".into()));
                }
                return Ok(AudioClip {
                    samples,
                    sample_rate: fmt.sample_rate,
                });
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err(Error::Truncated("no data chunk".into()))
}

fn check_format(fmt: &Format) -> Result<()> {
    if fmt.code != PCM_FORMAT {
        return Err(Error::WavFormat(format!(
            "format code {} (only integer PCM, code 1, is supported)",
            fmt.code
        )));
    }
    if fmt.channels != 1 {
        return Err(Error::WavFormat(format!(
            "{} channels (only mono is supported)",
            fmt.channels
        )));
    }
    if fmt.bits != 16 {
        return Err(Error::WavFormat(format!(
            "{} bits per sample (only 16-bit is supported)",
            fmt.bits
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::WavFormat("sample rate 0".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(channels: u16, bits: u16, code: u16, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&code.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&16000u32.to_le_bytes());
        out.extend_from_slice(&(16000u32 * channels as u32 * bits as u32 / 8).to_le_bytes());
        out.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn single_sample_scaling() {
        let bytes = header(1, 16, 1, &16384i16.to_le_bytes());
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.samples, vec![0.5]);
        assert_eq!(clip.sample_rate, 16000);
    }

    #[test]
    fn rejects_stereo() {
        let bytes = header(2, 16, 1, &[0, 0, 0, 0]);
        let err = decode_wav(&bytes).unwrap_err();
        assert!(matches!(err, Error::WavFormat(ref m) if m.contains("channels")), "{err}");
    }

    #[test]
    fn rejects_float_and_8bit() {
        let err = decode_wav(&header(1, 32, 3, &[0; 4])).unwrap_err();
        assert!(matches!(err, Error::WavFormat(ref m) if m.contains("format code")));
        let err = decode_wav(&header(1, 8, 1, &[0; 4])).unwrap_err();
        assert!(matches!(err, Error::WavFormat(ref m) if m.contains("bits")));
    }

    #[test]
    fn rejects_truncated_data() {
        let mut bytes = header(1, 16, 1, &[1, 0, 2, 0, 3, 0]);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(decode_wav(&bytes), Err(Error::Truncated(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut bytes = header(1, 16, 1, &1000i16.to_le_bytes());
        // splice a LIST chunk with an odd length between fmt and data
        let data_at = bytes.len() - 10;
        let mut list = b"LIST".to_vec();
        list.extend_from_slice(&3u32.to_le_bytes());
        list.extend_from_slice(&[1, 2, 3, 0]);
        bytes.splice(data_at..data_at, list);
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.samples, vec![1000.0 / 32768.0]);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            read_wav("/nonexistent/x.wav"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn round_trip_160_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (0..160).map(|i| ((i as f64) * 0.37).sin() * 0.9).collect();
        let clip = AudioClip::new(samples.clone(), 16000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.len(), 160);
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    proptest::proptest! {
        #[test]
        fn round_trip_within_one_lsb(samples in proptest::collection::vec(-1.0f64..=1.0, 1..400)) {
            let clip = AudioClip::new(samples.clone(), 16000).unwrap();
            let back = decode_wav(&encode_wav(&clip)).unwrap();
            proptest::prop_assert_eq!(back.len(), samples.len());
            for (a, b) in samples.iter().zip(&back.samples) {
                proptest::prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
