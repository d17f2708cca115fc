//! Checkpoints: a flat binary container of named parameter tensors.
//!
//! Layout (all integers little-endian):
//!   magic "ULCK" | version u16 | dtype width u8 | pad u8 | count u32
//!   then per parameter:
//!   name_len u16 | name bytes | rank u8 | dims u32 x rank | raw values
//!
//! Values round-trip bit-exactly; loading validates names and shapes against
//! the receiving network.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::network::Network;
use crate::autodiff::Tensor;
use crate::real::Real;

const MAGIC: &[u8; 4] = b"ULCK";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("checkpoint stores {got}-byte elements, network uses {expected}-byte")]
    DtypeMismatch { expected: u8, got: u8 },
    #[error("truncated or corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint has no parameter named {0}")]
    MissingParam(String),
    #[error("checkpoint parameter {0} unknown to this network")]
    UnknownParam(String),
    #[error("parameter {name}: checkpoint shape {got:?}, network shape {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

pub fn save_checkpoint<T: Real>(
    net: &Network<T>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(T::BYTES);
    buf.push(0);
    buf.extend_from_slice(&(net.params().len() as u32).to_le_bytes());
    for p in net.params() {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut buf);
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt(format!(
                "needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
}

/// Loads parameter values into an existing network of the same architecture.
pub fn load_checkpoint<T: Real>(
    net: &mut Network<T>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let buf = fs::read(path)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let width = cur.u8()?;
    if width != T::BYTES {
        return Err(CheckpointError::DtypeMismatch {
            expected: T::BYTES,
            got: width,
        });
    }
    cur.u8()?;
    let count = cur.u32()? as usize;
    let mut loaded: Vec<(String, Tensor<T>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("non-utf8 parameter name".into()))?;
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * T::BYTES as usize)?;
        let data: Vec<T> = raw
            .chunks_exact(T::BYTES as usize)
            .map(T::read_le)
            .collect();
        loaded.push((name, Tensor::from_parts(shape, data)));
    }
    if cur.pos != buf.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            buf.len() - cur.pos
        )));
    }
    // Validate fully before mutating anything.
    for (name, t) in &loaded {
        let Ok(existing) = net.param(name) else {
            return Err(CheckpointError::UnknownParam(name.clone()));
        };
        if existing.shape() != t.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: existing.shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
    }
    for p in net.params() {
        if !loaded.iter().any(|(n, _)| n == &p.name) {
            return Err(CheckpointError::MissingParam(p.name.clone()));
        }
    }
    for (name, t) in loaded {
        net.set_param(&name, t).expect("validated above");
    }
    Ok(())
}
