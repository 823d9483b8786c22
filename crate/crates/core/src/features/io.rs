//! `ESKF` feature files: magic, u32 rows, u32 cols, u8 kind, then
//! rows x cols little-endian f32 values in row-major order.

use std::fs;
use std::path::Path;

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

pub const FEATURES_MAGIC: &[u8; 4] = b"ESKF";
const HEADER_LEN: usize = 13;

pub fn encode_features(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.values.len());
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols as u32).to_le_bytes());
    out.push(m.kind.code());
    for &v in &m.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated("feature header".into()));
    }
    if &bytes[..4] != FEATURES_MAGIC {
        return Err(Error::BadMagic {
            expected: "ESKF".into(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let kind = FeatureKind::from_code(bytes[12])
        .ok_or_else(|| Error::InvalidInput(format!("unknown feature kind code {}", bytes[12])))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != rows * cols * 4 {
        return Err(Error::Truncated(format!(
            "{rows}x{cols} features need {} bytes, found {}",
            rows * cols * 4,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::new(rows, cols, values, kind)
}

pub fn write_features(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(m)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    decode_features(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let m = FeatureMatrix::new(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, -5.5], FeatureKind::LogFbank)
            .unwrap();
        let bytes = encode_features(&m);
        assert_eq!(&bytes[..4], b"ESKF");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(bytes[12], 1);
        assert_eq!(&bytes[13 + 20..], &(-5.5f32).to_le_bytes());
        assert_eq!(decode_features(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_bad_input() {
        let m = FeatureMatrix::new(1, 2, vec![1.0, 2.0], FeatureKind::Mfcc).unwrap();
        let mut bytes = encode_features(&m);
        bytes.pop();
        assert!(matches!(decode_features(&bytes), Err(Error::Truncated(_))));
        let mut bytes = encode_features(&m);
        bytes[0] = b'X';
        assert!(matches!(decode_features(&bytes), Err(Error::BadMagic { .. })));
    }
}
