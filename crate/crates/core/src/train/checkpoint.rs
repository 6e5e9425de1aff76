//! Binary checkpoint format.
//!
//! ```text
//! "BVM1" | u32 version | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 values
//! u32 CRC32 of every preceding byte
//! ```
//! All integers and reals are little-endian. The first tensor, `model.config`,
//! records the architecture so a checkpoint can be loaded without a config file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::{Activation, FusionConfig};
use crate::grid::GridSpec;
use crate::tensorops::ParamTensor;

use super::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"BVM1";
pub const VERSION: u32 = 1;
const CONFIG_TENSOR: &str = "model.config";

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

fn encode_config(c: &ModelConfig) -> Vec<f32> {
    let act = match c.fusion.heatmap_activation {
        Activation::Sigmoid => 0.0,
        Activation::Relu => 1.0,
        Activation::None => 2.0,
    };
    vec![
        c.grid.h_cells as f32,
        c.grid.w_cells as f32,
        c.grid.cell_size_m as f32,
        c.fusion.channels as f32,
        c.fusion.memory_capacity as f32,
        c.fusion.heatmap_channels as f32,
        c.fusion.dilation.0 as f32,
        c.fusion.dilation.1 as f32,
        act,
        c.temporal as u8 as f32,
        c.heatmap_input as u8 as f32,
    ]
}

fn decode_config(v: &[f32]) -> Result<ModelConfig> {
    if v.len() != 11 || v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(corrupt("malformed model.config tensor"));
    }
    let u = |x: f32| -> Result<usize> {
        if x.fract() != 0.0 {
            return Err(corrupt("non-integer field in model.config"));
        }
        Ok(x as usize)
    };
    let flag = |x: f32| -> Result<bool> {
        match u(x)? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(corrupt("bad flag in model.config")),
        }
    };
    let heatmap_activation = match u(v[8])? {
        0 => Activation::Sigmoid,
        1 => Activation::Relu,
        _ => return Err(corrupt("bad heatmap activation in model.config")),
    };
    let config = ModelConfig {
        grid: GridSpec { h_cells: u(v[0])?, w_cells: u(v[1])?, cell_size_m: v[2] as f64 },
        fusion: FusionConfig {
            channels: u(v[3])?,
            memory_capacity: u(v[4])?,
            heatmap_channels: u(v[5])?,
            dilation: (u(v[6])?, u(v[7])?),
            heatmap_activation,
        },
        temporal: flag(v[9])?,
        heatmap_input: flag(v[10])?,
    };
    config.validate().map_err(|e| corrupt(format!("invalid model.config: {e}")))?;
    Ok(config)
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f32]) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
    let rank = u8::try_from(shape.len()).map_err(|_| Error::InvalidArgument(format!("rank too high: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(rank);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension too large: {name}")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn checkpoint_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let named = params.named_params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(named.len() as u32 + 1).to_le_bytes());
    let cfg = encode_config(&params.config);
    put_tensor(&mut out, CONFIG_TENSOR, &[cfg.len()], &cfg)?;
    for (name, p) in named {
        put_tensor(&mut out, &name, &p.shape, &p.values)?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// A tensor read back from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Validates framing and checksum and returns the raw tensors in file order.
pub fn parse_tensors(bytes: &[u8]) -> Result<Vec<StoredTensor>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    if bytes.len() < 16 {
        return Err(corrupt("truncated"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let stored_crc = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(corrupt("checksum mismatch"));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("tensor name is not UTF-8"))?.to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("tensor too large"))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(StoredTensor { name, shape, values });
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after the last tensor"));
    }
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let tensors = parse_tensors(bytes)?;
    let first = tensors.first().ok_or_else(|| corrupt("no tensors"))?;
    if first.name != CONFIG_TENSOR {
        return Err(corrupt("first tensor must be model.config"));
    }
    let config = decode_config(&first.values)?;
    // Shapes come from a fresh model of the recorded architecture.
    let mut params = ModelParams::init(&config, 0)?;
    let names: Vec<(String, Vec<usize>)> =
        params.named_params().into_iter().map(|(n, p)| (n, p.shape.clone())).collect();
    if tensors.len() - 1 != names.len() {
        return Err(corrupt(format!("expected {} tensors, found {}", names.len(), tensors.len() - 1)));
    }
    for ((name, shape), (slot, stored)) in names.iter().zip(params.params_mut().into_iter().zip(&tensors[1..])) {
        if &stored.name != name || &stored.shape != shape {
            return Err(corrupt(format!(
                "expected tensor {name} {shape:?}, found {} {:?}",
                stored.name, stored.shape
            )));
        }
        *slot = ParamTensor::new(stored.shape.clone(), stored.values.clone())?;
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    parse_checkpoint(&std::fs::read(path)?)
}
