//! CSV outputs: training traces and embedding exports.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::objectives::EmbeddingPyramid;
use crate::ttt::TrainingTrace;

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        offset: e.position().map(|p| p.byte()).unwrap_or(0),
        msg: e.to_string(),
    }
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::arg(format!("csv buffer: {e}")))
}

/// One row per step: losses, then per-level mean cosines.
pub fn trace_csv(trace: &TrainingTrace) -> Result<Vec<u8>> {
    let levels = trace.steps.first().map_or(0, |s| s.per_level_cos.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["step", "swap", "con", "total"].map(String::from).to_vec();
    for kind in ["cos_anatomy", "cos_noise", "cos_cross"] {
        for k in 1..=levels {
            header.push(format!("{kind}_l{k}"));
        }
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, s) in trace.steps.iter().enumerate() {
        let mut row = vec![(i + 1).to_string(), s.swap.to_string(), s.con.to_string(), s.total.to_string()];
        row.extend(s.per_level_cos.iter().map(|c| c.anatomy.to_string()));
        row.extend(s.per_level_cos.iter().map(|c| c.noise.to_string()));
        row.extend(s.per_level_cos.iter().map(|c| c.cross.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &TrainingTrace) -> Result<()> {
    atomic_write(path.as_ref(), &trace_csv(trace)?)
}

pub const EMBEDDING_ROLES: [&str; 4] = ["A1", "A2", "N1", "N2"];

/// One row per channel vector, labelled `layer` (1-based) and `role`.
/// Levels have different vector lengths, so shorter rows are padded with
/// empty cells up to the longest.
pub fn embeddings_csv(pyramids: [&EmbeddingPyramid; 4]) -> Result<Vec<u8>> {
    let levels = pyramids[0].levels.len();
    if pyramids.iter().any(|p| p.levels.len() != levels) {
        return Err(Error::arg("embedding pyramids have different depths"));
    }
    let width = pyramids
        .iter()
        .flat_map(|p| p.levels.iter().map(|l| l.dim))
        .max()
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["layer", "role", "channel"].map(String::from).to_vec();
    header.extend((0..width).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..levels {
        for (role, p) in EMBEDDING_ROLES.iter().zip(pyramids) {
            let level = &p.levels[k];
            for c in 0..level.channels {
                let mut row = vec![(k + 1).to_string(), role.to_string(), c.to_string()];
                row.extend(level.vector(c).iter().map(|v| v.to_string()));
                row.resize(3 + width, String::new());
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    finish(w)
}

pub fn export_embeddings(path: impl AsRef<Path>, pyramids: [&EmbeddingPyramid; 4]) -> Result<()> {
    atomic_write(path.as_ref(), &embeddings_csv(pyramids)?)
}
