//! Versioned little-endian container for named tensors.
//!
//! Layout: magic `FBNW`, `u32` version, `u32` tensor count, then per tensor
//! `u16` name length, UTF-8 name, `u8` dtype (1 = f64), `u8` rank,
//! `u32` dims, and the raw values.

use std::io::{Read, Write};
use std::path::Path;

use super::cnn::{CnnParams, ReferenceCnn};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"FBNW";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f64>,
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[NamedTensor]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u16).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[DTYPE_F64, t.dims.len() as u8])?;
        for d in &t.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &t.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("weights file truncated".into()))?;
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

pub fn read_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not a weights file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported weights version {version}"
        )));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = c.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::Format(format!(
                "tensor {name}: unknown dtype {dtype}"
            )));
        }
        let rank = c.u8()? as usize;
        let dims = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let n = n.ok_or_else(|| Error::Format(format!("tensor {name}: size overflow")))?;
        let raw = c.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(NamedTensor { name, dims, values });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after tensors".into()));
    }
    Ok(out)
}

impl ReferenceCnn {
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = vec![
            NamedTensor {
                name: "meta.input_hw_classes".into(),
                dims: vec![3],
                values: vec![
                    self.height as f64,
                    self.width as f64,
                    self.num_classes as f64,
                ],
            },
            NamedTensor {
                name: "norm.mean".into(),
                dims: vec![3],
                values: self.mean.to_vec(),
            },
            NamedTensor {
                name: "norm.std".into(),
                dims: vec![3],
                values: self.std.to_vec(),
            },
        ];
        for (name, t) in CnnParams::NAMES.iter().zip(self.params.tensors()) {
            out.push(NamedTensor {
                name: (*name).into(),
                dims: vec![t.len() as u32],
                values: t.clone(),
            });
        }
        out
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<ReferenceCnn> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .map(|t| &t.values)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
        };
        let meta = find("meta.input_hw_classes")?;
        if meta.len() != 3 {
            return Err(Error::Format("bad meta tensor".into()));
        }
        let mut net = ReferenceCnn::zeros(meta[0] as usize, meta[1] as usize, meta[2] as usize)?;
        let mean = find("norm.mean")?;
        let std = find("norm.std")?;
        if mean.len() != 3 || std.len() != 3 {
            return Err(Error::Format("bad normalization tensors".into()));
        }
        net.mean.copy_from_slice(mean);
        net.std.copy_from_slice(std);
        for (name, slot) in CnnParams::NAMES.iter().zip(net.params.tensors_mut()) {
            let t = find(name)?;
            if t.len() != slot.len() {
                return Err(Error::Format(format!(
                    "tensor {name} has {} values, expected {}",
                    t.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(t);
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_tensors(&mut buf, &self.to_tensors()).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ReferenceCnn> {
        Self::from_tensors(&read_tensors(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ReferenceCnn> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
