//! Utterance embeddings: pooled acoustic vectors from the network, textual
//! vectors read from file, and their concatenation.
//!
//! CSV layout: a header `id,<dim>` followed by rows `utterance_id,v0,v1,...`.
//! Values are written in shortest round-trip form, so save/load is bit exact.
//! The bulk binary layout is `ESKE`, u32 count, u32 dim, then per row a u16
//! id length, the UTF-8 id and `dim` little-endian f64 values.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::tinynet::NetModel;

pub const TEXT_EMBED_DIM: usize = 768;
pub const EMBEDDINGS_MAGIC: &[u8; 4] = b"ESKE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Acoustic,
    Textual,
    Fused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub utterance_id: String,
    pub values: Vec<f64>,
    pub source: EmbeddingSource,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Pooled network representation of one utterance; the head is not used.
pub fn extract_embedding(model: &NetModel, id: &str, features: &FeatureMatrix) -> Result<EmbeddingVector> {
    Ok(EmbeddingVector {
        utterance_id: id.to_string(),
        values: model.embed(features)?,
        source: EmbeddingSource::Acoustic,
    })
}

/// Acoustic values followed by textual values.
pub fn fuse_concat(acoustic: &EmbeddingVector, textual: &EmbeddingVector) -> Result<EmbeddingVector> {
    if acoustic.utterance_id != textual.utterance_id {
        return Err(Error::InvalidInput(format!(
            "cannot fuse {:?} with {:?}",
            acoustic.utterance_id, textual.utterance_id
        )));
    }
    let mut values = Vec::with_capacity(acoustic.dim() + textual.dim());
    values.extend_from_slice(&acoustic.values);
    values.extend_from_slice(&textual.values);
    Ok(EmbeddingVector {
        utterance_id: acoustic.utterance_id.clone(),
        values,
        source: EmbeddingSource::Fused,
    })
}

/// Concatenates every acoustic vector with the textual vector of the same
/// id. A missing textual vector is an error.
pub fn fuse_with_text(
    acoustic: &[EmbeddingVector],
    textual: &BTreeMap<String, EmbeddingVector>,
) -> Result<Vec<EmbeddingVector>> {
    acoustic
        .iter()
        .map(|a| {
            let t = textual
                .get(&a.utterance_id)
                .ok_or_else(|| Error::MissingId(a.utterance_id.clone()))?;
            fuse_concat(a, t)
        })
        .collect()
}

pub fn embeddings_to_csv(rows: &[EmbeddingVector]) -> Result<String> {
    let dim = rows.first().map_or(0, EmbeddingVector::dim);
    let mut out = format!("id,{dim}\n");
    for r in rows {
        if r.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: r.dim(),
            });
        }
        out.push_str(&r.utterance_id);
        for v in &r.values {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses embedding CSV. `expected_dim`, when given, must agree with both the
/// header and every row.
pub fn parse_embeddings(
    text: &str,
    expected_dim: Option<usize>,
    source: EmbeddingSource,
) -> Result<Vec<EmbeddingVector>> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, h)| h.trim()).unwrap_or("");
    let declared = match header.split_once(',') {
        Some(("id", "dim")) => None,
        Some(("id", d)) => Some(d.trim().parse::<usize>().map_err(|_| Error::Parse {
            line: 1,
            msg: format!("header dimension {d:?} is not an integer"),
        })?),
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header \"id,<dim>\", found {header:?}"),
            })
        }
    };
    if let (Some(d), Some(e)) = (declared, expected_dim) {
        if d != e {
            return Err(Error::Dimension { expected: e, got: d });
        }
    }
    let mut dim = declared.or(expected_dim);

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or("").to_string();
        let values: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: format!("non-numeric value {f:?}"),
                    })
            })
            .collect::<Result<_>>()?;
        let d = *dim.get_or_insert(values.len());
        if values.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: values.len(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { line: line_no, id });
        }
        out.push(EmbeddingVector {
            utterance_id: id,
            values,
            source,
        });
    }
    Ok(out)
}

pub fn save_embeddings(path: impl AsRef<Path>, rows: &[EmbeddingVector]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, embeddings_to_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
    source: EmbeddingSource,
) -> Result<Vec<EmbeddingVector>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, expected_dim, source)
}

/// Textual vectors keyed by utterance id, `dim` defaulting to 768.
pub fn load_text_embeddings(
    path: impl AsRef<Path>,
    dim: Option<usize>,
) -> Result<BTreeMap<String, EmbeddingVector>> {
    let rows = load_embeddings(path, Some(dim.unwrap_or(TEXT_EMBED_DIM)), EmbeddingSource::Textual)?;
    Ok(rows.into_iter().map(|r| (r.utterance_id.clone(), r)).collect())
}

pub fn encode_embeddings_bulk(rows: &[EmbeddingVector]) -> Result<Vec<u8>> {
    let dim = rows.first().map_or(0, EmbeddingVector::dim);
    let mut out = Vec::new();
    out.extend_from_slice(EMBEDDINGS_MAGIC);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in rows {
        if r.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: r.dim(),
            });
        }
        let id = r.utterance_id.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| Error::InvalidInput("id too long".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id);
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_embeddings_bulk(bytes: &[u8], source: EmbeddingSource) -> Result<Vec<EmbeddingVector>> {
    let mut r = ByteReader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != EMBEDDINGS_MAGIC {
        return Err(Error::BadMagic {
            expected: "ESKE".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let n = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::InvalidInput("id is not UTF-8".into()))?
            .to_string();
        let values = r
            .take(8 * dim)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(EmbeddingVector {
            utterance_id: id,
            values,
            source,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::InvalidInput("trailing bytes after embeddings".into()));
    }
    Ok(out)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated(format!("need {n} bytes at offset {}", self.pos)));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}
