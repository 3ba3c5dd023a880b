//! Binary model files.
//!
//! Layout, all integers little-endian: magic `ATRM`, u32 format version,
//! config block, u32 trained epochs, u32 tensor count, then per tensor a u64
//! length and its f64 values. A CRC-32 of everything before it closes the
//! file.

use std::fs;
use std::path::Path;

use atelier_core::classifier::{CnnConfig, CnnModel, ConvStage, Pool, FORMAT_VERSION};

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"ATRM";

pub fn encode_model(model: &CnnModel) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let u32_le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32_le(&mut out, cfg.input_size);
    u32_le(&mut out, cfg.input_channels);
    u32_le(&mut out, cfg.conv_layers.len());
    for stage in &cfg.conv_layers {
        u32_le(&mut out, stage.filters);
        u32_le(&mut out, stage.kernel);
        out.push(match stage.pool {
            Pool::None => 0,
            Pool::Max2 => 1,
        });
    }
    u32_le(&mut out, cfg.dense_units);
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&cfg.learning_rate.to_le_bytes());
    out.extend_from_slice(&cfg.momentum.to_le_bytes());
    u32_le(&mut out, cfg.epochs);
    u32_le(&mut out, cfg.batch_size);
    u32_le(&mut out, model.trained_epochs());
    let tensors = model.params().tensors();
    u32_le(&mut out, tensors.len());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_model(model: &CnnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CnnModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<usize> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.u64().map(f64::from_bits)
    }
}

/// Parses model bytes; `path` only labels errors.
pub fn decode_model(bytes: &[u8], path: &Path) -> Result<CnnModel> {
    let corrupt = |message: &str| Error::Unreadable {
        path: path.into(),
        message: message.into(),
    };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        // A file cut short inside the header is still a checksum failure.
        if bytes.len() < 8 && MAGIC.starts_with(&bytes[..bytes.len().min(4)]) {
            return Err(Error::Checksum { path: path.into() });
        }
        return Err(corrupt("not a model file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version == 0 || version > FORMAT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Checksum { path: path.into() });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Checksum { path: path.into() });
    }

    let mut c = Cursor { bytes: body, pos: 8 };
    let parsed = (|| {
        let input_size = c.u32()?;
        let input_channels = c.u32()?;
        let n_stages = c.u32()?;
        let mut conv_layers = Vec::new();
        for _ in 0..n_stages {
            let filters = c.u32()?;
            let kernel = c.u32()?;
            let pool = match c.u8()? {
                0 => Pool::None,
                1 => Pool::Max2,
                _ => return None,
            };
            conv_layers.push(ConvStage::new(filters, kernel, pool));
        }
        let config = CnnConfig {
            input_size,
            input_channels,
            conv_layers,
            dense_units: c.u32()?,
            seed: c.u64()?,
            learning_rate: c.f64()?,
            momentum: c.f64()?,
            epochs: c.u32()?,
            batch_size: c.u32()?,
        };
        let trained_epochs = c.u32()?;
        let n_tensors = c.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let len = usize::try_from(c.u64()?).ok()?;
            let raw = c.take(len.checked_mul(8)?)?;
            tensors.push(
                raw.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            );
        }
        (c.pos == body.len()).then_some((config, tensors, trained_epochs))
    })();
    let (config, tensors, trained_epochs) =
        parsed.ok_or_else(|| corrupt("malformed model body"))?;
    CnnModel::from_parts(config, tensors, trained_epochs).map_err(|e| Error::Unreadable {
        path: path.into(),
        message: e.to_string(),
    })
}
