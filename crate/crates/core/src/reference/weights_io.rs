//! TTBW weight files.
//!
//! Layout: `"TTBW"`, then little-endian `u32` rows, cols and bit-width, then
//! the entries row-major as little-endian two's-complement integers. Each
//! entry occupies the smallest whole number of bytes holding the bit-width
//! (one byte up to 8 bits, two up to 16). Several records may be
//! concatenated in one file.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Result, SimError};
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"TTBW";

fn format_err<T>(reason: impl Into<String>) -> Result<T> {
    Err(SimError::Format {
        format: "TTBW",
        reason: reason.into(),
    })
}

fn entry_bytes(bits: u32) -> Result<usize> {
    match bits {
        1..=8 => Ok(1),
        9..=16 => Ok(2),
        _ => format_err(format!("unsupported bit-width {bits}")),
    }
}

fn in_range(v: i32, bits: u32) -> bool {
    let lo = -(1i32 << (bits - 1));
    let hi = (1i32 << (bits - 1)) - 1;
    (lo..=hi).contains(&v)
}

pub fn write_ttbw<W: Write>(m: &Matrix<i32>, bits: u32, mut w: W) -> Result<()> {
    let width = entry_bytes(bits)?;
    let rows = u32::try_from(m.rows()).or_else(|_| format_err("too many rows"))?;
    let cols = u32::try_from(m.cols()).or_else(|_| format_err("too many columns"))?;
    let mut buf = Vec::with_capacity(16 + m.as_slice().len() * width);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    buf.extend_from_slice(&bits.to_le_bytes());
    for &v in m.as_slice() {
        if !in_range(v, bits) {
            return format_err(format!("value {v} does not fit in {bits} bits"));
        }
        if width == 1 {
            buf.push(v as i8 as u8);
        } else {
            buf.extend_from_slice(&(v as i16).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Read one record; `Ok(None)` on a clean end of stream.
fn read_record<R: Read>(r: &mut R) -> Result<Option<(Matrix<i32>, u32)>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut magic[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return format_err("truncated magic"),
            Ok(k) => got += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if &magic != MAGIC {
        return format_err("bad magic");
    }
    let mut header = [0u8; 12];
    r.read_exact(&mut header).or_else(|_| format_err("truncated header"))?;
    let word = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap());
    let (rows, cols, bits) = (word(0) as usize, word(1) as usize, word(2));
    let width = entry_bytes(bits)?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| SimError::Format {
            format: "TTBW",
            reason: "dimensions overflow".into(),
        })?;
    let mut payload = vec![0u8; count * width];
    r.read_exact(&mut payload)
        .or_else(|_| format_err(format!("payload shorter than {} bytes", count * width)))?;
    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(width) {
        let v = if width == 1 {
            chunk[0] as i8 as i32
        } else {
            i16::from_le_bytes([chunk[0], chunk[1]]) as i32
        };
        if !in_range(v, bits) {
            return format_err(format!("value {v} exceeds declared {bits}-bit width"));
        }
        data.push(v);
    }
    Ok(Some((Matrix::from_vec(rows, cols, data)?, bits)))
}

/// Read every record in the stream, in order.
pub fn read_ttbw<R: Read>(mut r: R) -> Result<Vec<(Matrix<i32>, u32)>> {
    let mut out = Vec::new();
    while let Some(rec) = read_record(&mut r)? {
        out.push(rec);
    }
    if out.is_empty() {
        return format_err("empty stream");
    }
    Ok(out)
}
