//! On-disk dataset container, bit-exact across export/import.
//!
//! Layout (little-endian):
//!   magic "ULDS" | version u16 | dtype width u8 | pad u8
//!   n u32 | n_classes u32 | n_attrs u32 | rank u8 | sample dims u32 x rank
//!   labels u32 x n | attrs u32 x n | values raw x (n * sample)

use std::fs;
use std::path::Path;

use super::{DataError, GroupedDataset, Result};
use crate::autodiff::Tensor;
use crate::real::Real;

const MAGIC: &[u8; 4] = b"ULDS";
const VERSION: u16 = 1;

pub fn export_dataset<T: Real>(ds: &GroupedDataset<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(T::BYTES);
    buf.push(0);
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    buf.extend_from_slice(&ds.n_classes().to_le_bytes());
    buf.extend_from_slice(&ds.n_attrs().to_le_bytes());
    buf.push(ds.sample_shape().len() as u8);
    for &d in ds.sample_shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &y in ds.labels() {
        buf.extend_from_slice(&y.to_le_bytes());
    }
    for &a in ds.attrs() {
        buf.extend_from_slice(&a.to_le_bytes());
    }
    for &v in ds.inputs().data() {
        v.write_le(&mut buf);
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Cur<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cur<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(DataError::Truncated {
                needed: self.pos + n,
                got: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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

pub fn import_dataset<T: Real>(path: &Path) -> Result<GroupedDataset<T>> {
    let buf = fs::read(path)?;
    let mut cur = Cur { buf: &buf, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        let mut got = [0u8; 4];
        got.copy_from_slice(magic);
        return Err(DataError::BadMagic {
            expected: u32::from_be_bytes(*MAGIC),
            got: u32::from_be_bytes(got),
        });
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(DataError::Invalid(format!(
            "unsupported container version {version}"
        )));
    }
    let width = cur.u8()?;
    if width != T::BYTES {
        return Err(DataError::Invalid(format!(
            "container stores {width}-byte elements, expected {}",
            T::BYTES
        )));
    }
    cur.u8()?;
    let n = cur.u32()? as usize;
    let n_classes = cur.u32()?;
    let n_attrs = cur.u32()?;
    let rank = cur.u8()? as usize;
    let mut sample = Vec::with_capacity(rank);
    for _ in 0..rank {
        sample.push(cur.u32()? as usize);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(cur.u32()?);
    }
    let mut attrs = Vec::with_capacity(n);
    for _ in 0..n {
        attrs.push(cur.u32()?);
    }
    let per: usize = sample.iter().product();
    let raw = cur.take(n * per * T::BYTES as usize)?;
    if cur.pos != buf.len() {
        return Err(DataError::Invalid(format!(
            "{} trailing bytes in container",
            buf.len() - cur.pos
        )));
    }
    let data: Vec<T> = raw
        .chunks_exact(T::BYTES as usize)
        .map(T::read_le)
        .collect();
    let mut shape = vec![n];
    shape.extend_from_slice(&sample);
    GroupedDataset::new(Tensor::from_vec(shape, data)?, labels, attrs, n_classes, n_attrs)
}
