//! `ESKS` SVM model files.
//!
//! Layout (little endian): magic `ESKS`, u16 version, u32 K, u32 D, f64 C,
//! u8 standardization flag, then D f64 means and D f64 scales when the flag
//! is set, then K rows of D f32 weights followed by one f32 bias.

use std::fs;
use std::path::Path;

use super::{Standardization, SvmModel};
use crate::error::{Error, Result};

pub const SVM_MAGIC: &[u8; 4] = b"ESKS";
pub const SVM_VERSION: u16 = 1;

pub fn encode_svm(model: &SvmModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SVM_MAGIC);
    out.extend_from_slice(&SVM_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.n_classes as u32).to_le_bytes());
    out.extend_from_slice(&(model.dim as u32).to_le_bytes());
    out.extend_from_slice(&model.c.to_le_bytes());
    match &model.standardization {
        Some(s) => {
            out.push(1);
            for v in s.mean.iter().chain(&s.scale) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    for (w, b) in model.weights.iter().zip(&model.bias) {
        for v in w.iter().chain(std::iter::once(b)) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    if *pos + n > bytes.len() {
        return Err(Error::Truncated(format!("SVM file ends at byte {}", bytes.len())));
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

pub fn decode_svm(bytes: &[u8]) -> Result<SvmModel> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 4)?;
    if magic != SVM_MAGIC {
        return Err(Error::BadMagic {
            expected: "ESKS".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = u16::from_le_bytes(take(bytes, &mut pos, 2)?.try_into().unwrap());
    if version != SVM_VERSION {
        return Err(Error::Version {
            expected: SVM_VERSION,
            found: version,
        });
    }
    let u32_at = |pos: &mut usize| -> Result<usize> {
        Ok(u32::from_le_bytes(take(bytes, pos, 4)?.try_into().unwrap()) as usize)
    };
    let n_classes = u32_at(&mut pos)?;
    let dim = u32_at(&mut pos)?;
    let c = f64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().unwrap());
    let f64s = |pos: &mut usize, n: usize| -> Result<Vec<f64>> {
        Ok(take(bytes, pos, 8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let standardization = match take(bytes, &mut pos, 1)?[0] {
        0 => None,
        1 => Some(Standardization {
            mean: f64s(&mut pos, dim)?,
            scale: f64s(&mut pos, dim)?,
        }),
        f => return Err(Error::InvalidInput(format!("bad standardization flag {f}"))),
    };
    let mut weights = Vec::with_capacity(n_classes);
    let mut bias = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let row: Vec<f64> = take(bytes, &mut pos, 4 * (dim + 1))?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        bias.push(row[dim]);
        weights.push(row[..dim].to_vec());
    }
    if pos != bytes.len() {
        return Err(Error::InvalidInput("trailing bytes in SVM file".into()));
    }
    let model = SvmModel {
        n_classes,
        dim,
        c,
        weights,
        bias,
        standardization,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_svm(path: impl AsRef<Path>, model: &SvmModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_svm(model)).map_err(|e| Error::io(path, e))
}

pub fn load_svm(path: impl AsRef<Path>) -> Result<SvmModel> {
    let path = path.as_ref();
    decode_svm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
