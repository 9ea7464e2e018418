//! Binary checkpoint and latent files.
//!
//! Checkpoint, all integers `u32` and reals little-endian:
//!
//! ```text
//! "3RINN" | version | z_grain_dim | R: f64 | alpha: f64 | record count
//! per record: name length | name (UTF-8) | rank | extents... | f32 values
//! ```
//!
//! Records follow the canonical parameter order. The block count, dense
//! depth and width are recovered from the record shapes.
//!
//! Latent: `"3RZ0" | rank | extents... | f32 values`.

use std::path::Path;

use super::{init_weights, NetworkConfig, NetworkError, NetworkParams, Result};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 5] = b"3RINN";
const LATENT_MAGIC: &[u8; 4] = b"3RZ0";

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor<T: Real>(buf: &mut Vec<u8>, t: &Tensor<T>) {
    put_u32(buf, t.shape().len());
    for &e in t.shape() {
        put_u32(buf, e);
    }
    for v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(NetworkError::Truncated(format!(
                "{} ends at byte {} while {} more were expected",
                self.what,
                self.bytes.len(),
                n
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rank = self.u32()?;
        if rank > 8 {
            return Err(NetworkError::Malformed(format!(
                "rank {rank} in {}",
                self.what
            )));
        }
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| NetworkError::Malformed("extents overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Tensor::new(shape, data)?)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Serialize to bytes; values are stored as `f32`.
pub fn checkpoint_bytes<T: Real>(params: &NetworkParams<T>) -> Vec<u8> {
    let named = params.weights.named();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION as usize);
    put_u32(&mut buf, params.config.z_grain_dim);
    buf.extend_from_slice(&params.r_target.to_le_bytes());
    buf.extend_from_slice(&params.config.alpha.to_le_bytes());
    put_u32(&mut buf, named.len());
    for (name, t) in named {
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        put_tensor(&mut buf, t);
    }
    buf
}

pub fn save_checkpoint<T: Real>(params: &NetworkParams<T>, path: &Path) -> Result<()> {
    write_file(path, &checkpoint_bytes(params))
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<NetworkParams<f32>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "checkpoint",
    };
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC
    {
        return Err(NetworkError::BadMagic("checkpoint".into()));
    }
    r.take(CHECKPOINT_MAGIC.len())?;
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(NetworkError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let z_grain_dim = r.u32()?;
    let r_target = r.f64()?;
    let alpha = r.f64()?;
    let count = r.u32()?;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| NetworkError::Malformed("parameter name is not UTF-8".into()))?;
        records.push((name, r.tensor()?));
    }
    if r.pos != bytes.len() {
        return Err(NetworkError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    let find = |name: &str| records.iter().find(|(n, _)| n == name).map(|(_, t)| t);
    let blocks = (0..)
        .take_while(|i| find(&format!("block{i}.phi.layer0.weight")).is_some())
        .count();
    let layers = (0..)
        .take_while(|i| find(&format!("block0.phi.layer{i}.weight")).is_some())
        .count();
    let hidden = if layers > 1 {
        find("block0.phi.layer0.weight")
            .map(|t| t.shape()[0])
            .unwrap_or(0)
    } else {
        NetworkConfig::default().hidden
    };
    let config = NetworkConfig {
        blocks,
        hidden,
        layers,
        z_grain_dim,
        alpha,
        ..NetworkConfig::default()
    };
    config
        .validate()
        .map_err(|e| NetworkError::Malformed(e.to_string()))?;
    let skeleton = init_weights::<f32>(&config, 0, true);
    let expected = skeleton.named();
    if expected.len() != records.len() {
        return Err(NetworkError::Malformed(format!(
            "{} records, architecture needs {}",
            records.len(),
            expected.len()
        )));
    }
    for ((en, et), (rn, rt)) in expected.iter().zip(&records) {
        if en != rn || et.shape() != rt.shape() {
            return Err(NetworkError::Malformed(format!(
                "record `{rn}` {:?} where `{en}` {:?} was expected",
                rt.shape(),
                et.shape()
            )));
        }
    }
    let tensors: Vec<Tensor<f32>> = records.into_iter().map(|(_, t)| t).collect();
    Ok(NetworkParams {
        config,
        r_target,
        weights: skeleton.zip_leaves(&tensors),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams<f32>> {
    parse_checkpoint(&read_file(path)?)
}

pub fn latent_bytes<T: Real>(z: &Tensor<T>) -> Vec<u8> {
    let mut buf = LATENT_MAGIC.to_vec();
    put_tensor(&mut buf, z);
    buf
}

pub fn write_latent<T: Real>(z: &Tensor<T>, path: &Path) -> Result<()> {
    write_file(path, &latent_bytes(z))
}

pub fn parse_latent(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < LATENT_MAGIC.len() || &bytes[..LATENT_MAGIC.len()] != LATENT_MAGIC {
        return Err(NetworkError::BadMagic("latent file".into()));
    }
    let mut r = Reader {
        bytes,
        pos: LATENT_MAGIC.len(),
        what: "latent file",
    };
    let t = r.tensor()?;
    if r.pos != bytes.len() {
        return Err(NetworkError::Malformed(
            "trailing bytes in latent file".into(),
        ));
    }
    Ok(t)
}

pub fn read_latent(path: &Path) -> Result<Tensor<f32>> {
    parse_latent(&read_file(path)?)
}
