//! SAIQ binary stack files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SAIQ"
//! 4       2     version (u16, = 1)
//! 6       1     dtype (1 = c64: interleaved f32 re, im)
//! 7       1     reserved, 0
//! 8       4     n (u32)
//! 12      4     h (u32)
//! 16      4     w (u32)
//! 20      4n    aperture_order (u32 each)
//! 20+4n   8     FNV-1a 64 of the payload
//! 28+4n   8nhw  payload, plane-major, row-major within a plane
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use crate::cvnn::ComplexTensor;
use crate::error::{Error, Result};
use crate::io::{atomic_write, fnv1a64, read_file};
use crate::stack::ApertureStack;

pub const MAGIC: &[u8; 4] = b"SAIQ";
pub const VERSION: u16 = 1;
pub const DTYPE_C64: u8 = 1;
const FIXED_HEADER: usize = 20;

pub fn header_len(n: usize) -> usize {
    FIXED_HEADER + 4 * n + 8
}

pub fn encode_stack(x: &ApertureStack) -> Vec<u8> {
    let (n, h, w) = (x.n(), x.h(), x.w());
    let payload_len = 8 * n * h * w;
    let mut out = Vec::with_capacity(header_len(n) + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_C64);
    out.push(0);
    for d in [n, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &o in x.aperture_order() {
        out.extend_from_slice(&o.to_le_bytes());
    }
    let mut payload = Vec::with_capacity(payload_len);
    for v in x.tensor().data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&fnv1a64(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn need(bytes: &[u8], offset: usize, len: usize, what: &str) -> Result<()> {
    if bytes.len() < offset + len {
        return Err(format_err(
            bytes.len(),
            format!("file ends inside the {what} (needs {} bytes)", offset + len),
        ));
    }
    Ok(())
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn decode_stack(bytes: &[u8]) -> Result<ApertureStack> {
    need(bytes, 0, FIXED_HEADER, "header")?;
    if &bytes[0..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected \"SAIQ\""));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    if bytes[6] != DTYPE_C64 {
        return Err(format_err(6, format!("unsupported dtype tag {}", bytes[6])));
    }
    if bytes[7] != 0 {
        return Err(format_err(7, "reserved byte is not zero"));
    }
    let dims = [u32_at(bytes, 8), u32_at(bytes, 12), u32_at(bytes, 16)];
    for (i, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(format_err(8 + 4 * i, "zero extent"));
        }
    }
    let [n, h, w] = dims.map(|d| d as usize);
    let payload_len = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| format_err(8, "extents overflow"))?;
    let hdr = header_len(n);
    need(bytes, FIXED_HEADER, 4 * n + 8, "aperture order and checksum")?;
    let order: Vec<u32> = (0..n).map(|j| u32_at(bytes, FIXED_HEADER + 4 * j)).collect();
    let checksum = u64::from_le_bytes(bytes[hdr - 8..hdr].try_into().unwrap());
    let payload = &bytes[hdr..];
    if payload.len() != payload_len {
        return Err(format_err(
            hdr + payload.len().min(payload_len),
            format!("payload is {} bytes, header implies {payload_len}", payload.len()),
        ));
    }
    if fnv1a64(payload) != checksum {
        return Err(format_err(hdr - 8, "payload checksum mismatch"));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let tensor = ComplexTensor::from_interleaved(&[n, h, w], data)?;
    ApertureStack::with_order(tensor, order).map_err(|e| format_err(FIXED_HEADER, e.to_string()))
}

pub fn write_stack(path: impl AsRef<Path>, x: &ApertureStack) -> Result<()> {
    atomic_write(path.as_ref(), &encode_stack(x))
}

pub fn read_stack(path: impl AsRef<Path>) -> Result<ApertureStack> {
    decode_stack(&read_file(path.as_ref())?)
}
