//! Model checkpoints ("A2CK").
//!
//! ```text
//! magic "A2CK", version u16, reserved u16,
//! apertures u32, widths 3 x u32, input_scale f32, tensor count u32,
//! per tensor: rank u32, dims rank x u32, interleaved f32 data,
//! trailer: FNV-1a 64 of every preceding byte
//! ```
//!
//! Little-endian throughout. The tensor list must match the architecture
//! implied by `apertures` and `widths`.

use std::path::Path;

use crate::cvnn::ComplexTensor;
use crate::error::{Error, Result};
use crate::io::{atomic_write, fnv1a64, read_file};
use crate::model::{ModelParams, LEVELS};

pub const MAGIC: &[u8; 4] = b"A2CK";
pub const VERSION: u16 = 1;

pub fn encode_checkpoint(p: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(p.apertures as u32).to_le_bytes());
    for w in p.widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&p.input_scale.to_le_bytes());
    out.extend_from_slice(&(p.tensors.len() as u32).to_le_bytes());
    for t in &p.tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                msg: format!("checkpoint ends inside {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: at as u64,
            msg: msg.into(),
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 8 + 4 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: "checkpoint too short".into(),
        });
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.err(0, "bad magic, expected \"A2CK\""));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    r.take(2, "reserved")?;
    if fnv1a64(body) != stored {
        return Err(r.err(body.len(), "checkpoint checksum mismatch"));
    }
    let apertures = r.u32("aperture count")? as usize;
    let mut widths = [0usize; LEVELS];
    for w in &mut widths {
        *w = r.u32("widths")? as usize;
    }
    let input_scale = f32::from_le_bytes(r.take(4, "input scale")?.try_into().unwrap());
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let at = r.pos;
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(r.err(at, format!("tensor rank {rank} is implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dims")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| r.err(at, "tensor size overflows"))?;
        let data = r
            .take(numel, "tensor data")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(ComplexTensor::from_interleaved(&shape, data)?);
    }
    if r.pos != body.len() {
        return Err(r.err(r.pos, "trailing bytes after the last tensor"));
    }
    let params = ModelParams {
        apertures,
        widths,
        input_scale,
        tensors,
    };
    params.validate().map_err(|e| r.err(12, e.to_string()))?;
    Ok(params)
}

pub fn write_checkpoint(path: impl AsRef<Path>, p: &ModelParams) -> Result<()> {
    atomic_write(path.as_ref(), &encode_checkpoint(p))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_checkpoint(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn round_trip() {
        let mut p = init_model(3, 5).unwrap();
        p.input_scale = 0.25;
        assert_eq!(decode_checkpoint(&encode_checkpoint(&p)).unwrap(), p);
    }

    #[test]
    fn corruption_detected() {
        let p = init_model(2, 1).unwrap();
        let mut b = encode_checkpoint(&p);
        let mid = b.len() / 2;
        b[mid] ^= 0x40;
        assert!(matches!(decode_checkpoint(&b), Err(Error::Format { .. })));
        let b = encode_checkpoint(&p);
        assert!(matches!(decode_checkpoint(&b[..b.len() - 3]), Err(Error::Format { .. })));
    }

    #[test]
    fn architecture_mismatch_rejected() {
        let mut p = init_model(2, 1).unwrap();
        p.apertures = 3;
        assert!(matches!(decode_checkpoint(&encode_checkpoint(&p)), Err(Error::Format { .. })));
    }
}
