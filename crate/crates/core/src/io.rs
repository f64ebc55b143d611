//! Binary field dumps and hashing helpers.
//!
//! Frame layout, all little-endian: magic `FVMF`, `u32` version, `u64` cell
//! count, `u32` component count (always 4), `f64` time, then
//! `cells × 4` `f64` values, row-major (cell by cell).

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::euler::Cons;

pub const FRAME_MAGIC: &[u8; 4] = b"FVMF";
pub const FRAME_VERSION: u32 = 1;

pub fn write_frame(out: &mut impl Write, time: f64, w: &[Cons]) -> Result<()> {
    let mut buf = Vec::with_capacity(28 + 32 * w.len());
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    buf.extend_from_slice(&(w.len() as u64).to_le_bytes());
    buf.extend_from_slice(&4u32.to_le_bytes());
    buf.extend_from_slice(&time.to_le_bytes());
    for c in w {
        for v in c.0 {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn take<const N: usize>(input: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input
        .read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated frame: {e}")))?;
    Ok(b)
}

/// Read one frame; returns the time and the field.
pub fn read_frame(input: &mut impl Read) -> Result<(f64, Vec<Cons>)> {
    if &take::<4>(input)? != FRAME_MAGIC {
        return Err(Error::Format("not a frame file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(input)?);
    if version != FRAME_VERSION {
        return Err(Error::Format(format!("unsupported frame version {version}")));
    }
    let cells = u64::from_le_bytes(take(input)?) as usize;
    let comps = u32::from_le_bytes(take(input)?);
    if comps != 4 {
        return Err(Error::Format(format!("expected 4 components, found {comps}")));
    }
    let time = f64::from_le_bytes(take(input)?);
    let mut w = Vec::with_capacity(cells);
    for _ in 0..cells {
        let mut c = [0.0; 4];
        for v in &mut c {
            *v = f64::from_le_bytes(take(input)?);
        }
        w.push(Cons(c));
    }
    Ok((time, w))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a field's exact bit pattern.
pub fn field_hash(w: &[Cons]) -> String {
    let mut h = Sha256::new();
    for c in w {
        for v in c.0 {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
