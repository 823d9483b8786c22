//! `ESKM` model files.
//!
//! Layout (little endian): magic `ESKM`, u16 version, the network config
//! (u8 stage count, per stage u32 blocks and u32 width, u32 embed_dim,
//! u32 n_classes, f64 label smoothing, u64 seed, u32 input_cols,
//! u8 precision), u32 parameter count, then per parameter a u16 name length,
//! the name, u8 kind, u8 rank, u32 dims, u8 value width (4 or 8) and the
//! values. Single-precision models store f32 values.

use std::fs;
use std::path::Path;

use super::{layout, NetConfig, NetModel, Param, ParamKind, Precision};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"ESKM";
pub const MODEL_VERSION: u16 = 1;

pub fn encode_model(model: &NetModel) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(cfg.stages() as u8);
    for (&b, &c) in cfg.blocks_per_stage.iter().zip(&cfg.stage_channels) {
        out.extend_from_slice(&(b as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out.extend_from_slice(&(cfg.embed_dim as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.n_classes as u32).to_le_bytes());
    out.extend_from_slice(&cfg.label_smoothing.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&(cfg.input_cols as u32).to_le_bytes());
    out.push(match cfg.precision {
        Precision::Single => 0,
        Precision::Double => 1,
    });

    let width: u8 = match cfg.precision {
        Precision::Single => 4,
        Precision::Double => 8,
    };
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.kind.code());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(width);
        for &v in &p.data {
            if width == 4 {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::Truncated(format!("model file ends at byte {}", self.b.len())));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<NetModel> {
    let mut r = Reader { b: bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic {
            expected: "ESKM".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let stages = r.u8()? as usize;
    let mut blocks_per_stage = Vec::with_capacity(stages);
    let mut stage_channels = Vec::with_capacity(stages);
    for _ in 0..stages {
        blocks_per_stage.push(r.u32()?);
        stage_channels.push(r.u32()?);
    }
    let config = NetConfig {
        blocks_per_stage,
        stage_channels,
        embed_dim: r.u32()?,
        n_classes: r.u32()?,
        label_smoothing: r.f64()?,
        seed: r.u64()?,
        input_cols: r.u32()?,
        precision: match r.u8()? {
            0 => Precision::Single,
            1 => Precision::Double,
            other => return Err(Error::InvalidInput(format!("unknown precision code {other}"))),
        },
    };
    config.validate()?;

    let (_, specs) = layout(&config);
    let count = r.u32()?;
    if count != specs.len() {
        return Err(Error::Shape(format!(
            "config implies {} parameter tensors, file has {count}",
            specs.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for spec in specs {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::InvalidInput("parameter name is not UTF-8".into()))?;
        let kind = ParamKind::from_code(r.u8()?)
            .ok_or_else(|| Error::InvalidInput(format!("unknown kind for {name}")))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if name != spec.name || kind != spec.kind || shape != spec.shape {
            return Err(Error::Shape(format!(
                "parameter {name} {shape:?} does not match expected {} {:?}",
                spec.name, spec.shape
            )));
        }
        let n: usize = shape.iter().product();
        let data = match r.u8()? {
            4 => r
                .take(4 * n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            8 => r
                .take(8 * n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<f64>>(),
            w => return Err(Error::InvalidInput(format!("value width {w}"))),
        };
        if data.iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite values in {name}")));
        }
        params.push(Param {
            name,
            kind,
            shape,
            data,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::InvalidInput("trailing bytes in model file".into()));
    }
    Ok(NetModel { config, params })
}

pub fn save_model(path: impl AsRef<Path>, model: &NetModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetModel> {
    let path = path.as_ref();
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

impl NetModel {
    /// Checks that this model has the architecture of `expected` (head size
    /// included).
    pub fn expect_architecture(&self, expected: &NetConfig) -> Result<()> {
        let c = &self.config;
        if c.blocks_per_stage != expected.blocks_per_stage
            || c.stage_channels != expected.stage_channels
            || c.embed_dim != expected.embed_dim
            || c.n_classes != expected.n_classes
        {
            return Err(Error::Shape(format!(
                "model has stages {:?}/{:?}, embed {} and {} classes; expected {:?}/{:?}, {} and {}",
                c.blocks_per_stage,
                c.stage_channels,
                c.embed_dim,
                c.n_classes,
                expected.blocks_per_stage,
                expected.stage_channels,
                expected.embed_dim,
                expected.n_classes
            )));
        }
        Ok(())
    }
}
