//! Raw binary dump of an explanation.
//!
//! Header: magic `FBEX`, `u32` version, `u8` kind (0 = attribution as
//! little-endian `f32`, 1 = mask packed 8 pixels per byte, LSB first),
//! `u32` width, `u32` height, `u32` target, `u8` method-name length and
//! the method name.

use std::io::Write;

use super::{Explanation, ExplanationKind, MethodId};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"FBEX";
const VERSION: u32 = 1;

pub fn write_explanation<W: Write>(mut w: W, e: &Explanation) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[u8::from(e.is_binary())])?;
    for v in [e.width as u32, e.height as u32, e.target as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let name = e.method.name().as_bytes();
    w.write_all(&[name.len() as u8])?;
    w.write_all(name)?;
    match &e.kind {
        ExplanationKind::Attribution(a) => {
            for v in a {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        ExplanationKind::BinaryMap(m) => {
            for chunk in m.chunks(8) {
                let byte = chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |b, (i, &on)| b | (u8::from(on) << i));
                w.write_all(&[byte])?;
            }
        }
    }
    Ok(())
}

pub fn read_explanation(bytes: &[u8]) -> Result<Explanation> {
    let bad = |m: &str| Error::Format(format!("explanation dump: {m}"));
    let u32_at = |o: usize| -> Result<u32> {
        bytes
            .get(o..o + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| bad("truncated header"))
    };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(bad("bad magic"));
    }
    if u32_at(4)? != VERSION {
        return Err(bad("unsupported version"));
    }
    let kind = *bytes.get(8).ok_or_else(|| bad("truncated header"))?;
    let (width, height, target) = (
        u32_at(9)? as usize,
        u32_at(13)? as usize,
        u32_at(17)? as usize,
    );
    let name_len = *bytes.get(21).ok_or_else(|| bad("truncated header"))? as usize;
    let name = bytes
        .get(22..22 + name_len)
        .ok_or_else(|| bad("truncated header"))?;
    let method: MethodId = std::str::from_utf8(name)
        .map_err(|_| bad("method name"))?
        .parse()?;
    let body = &bytes[22 + name_len..];
    let n = width * height;
    let kind = match kind {
        0 if body.len() == n * 4 => ExplanationKind::Attribution(
            body.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
        ),
        1 if body.len() == n.div_ceil(8) => {
            ExplanationKind::BinaryMap((0..n).map(|i| body[i / 8] >> (i % 8) & 1 == 1).collect())
        }
        0 | 1 => return Err(bad("payload size does not match dimensions")),
        _ => return Err(bad("unknown kind")),
    };
    Ok(Explanation {
        width,
        height,
        kind,
        method,
        target,
    })
}
