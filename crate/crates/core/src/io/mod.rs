//! On-disk formats and the run configuration.
//!
//! Every writer goes through [`atomic_write`]: bytes land in a temporary
//! file next to the destination, which is then renamed over it.

pub mod checkpoint;
pub mod config;
pub mod png;
pub mod saiq;
pub mod tables;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use config::RunConfig;
pub use png::write_bmode_png;
pub use saiq::{read_stack, write_stack};

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
