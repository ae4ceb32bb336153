//! Denoising methods behind one interface, and the resumable metrics sweep
//! over noise level x geometry x aperture count x method.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{coherence_factor, phase_coherence_factor, srad};
use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};
use crate::io::config::RunConfig;
use crate::io::tables::{csv_err, finish};
use crate::io::{atomic_write, read_file};
use crate::metrics::{evaluate_envelope_with_bins, MetricsReport};
use crate::phantom::{generate_dataset, Geometry, PhantomSpec};
use crate::stack::ApertureStack;
use crate::ttt::denoise;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// The noisy coherent compound, untouched.
    Raw,
    A2a,
    Cf,
    Pcf,
    Srad,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Raw, Method::A2a, Method::Cf, Method::Pcf, Method::Srad];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::A2a => "a2a",
            Method::Cf => "cf",
            Method::Pcf => "pcf",
            Method::Srad => "srad",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown method {s:?}")))
    }
}

/// A method's result: a complex frame, or only an envelope for SRAD.
#[derive(Clone, Debug, PartialEq)]
pub enum MethodOutput {
    Field(ComplexField),
    Envelope(RealField),
}

impl MethodOutput {
    pub fn envelope(&self) -> RealField {
        match self {
            MethodOutput::Field(y) => y.envelope(),
            MethodOutput::Envelope(e) => e.clone(),
        }
    }

    /// The output as a complex frame; envelopes get zero phase.
    pub fn into_field(self) -> ComplexField {
        match self {
            MethodOutput::Field(y) => y,
            MethodOutput::Envelope(e) => ComplexField {
                h: e.h,
                w: e.w,
                data: e.data.iter().map(|&v| num_complex::Complex32::new(v, 0.0)).collect(),
            },
        }
    }
}

pub fn run_method(method: Method, noisy: &ApertureStack, cfg: &RunConfig) -> Result<MethodOutput> {
    let b = &cfg.baselines;
    Ok(match method {
        Method::Raw => MethodOutput::Field(noisy.compound()),
        Method::A2a => MethodOutput::Field(denoise(noisy, &cfg.ttt)?.1),
        Method::Cf => MethodOutput::Field(coherence_factor(noisy)?.1),
        Method::Pcf => MethodOutput::Field(phase_coherence_factor(noisy, b.pcf_gamma)?.1),
        Method::Srad => MethodOutput::Envelope(srad(&noisy.compound().envelope(), b.srad_steps, b.srad_dt)?),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub geometries: Vec<Geometry>,
    pub apertures: Vec<usize>,
    pub methods: Vec<Method>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 10.0, 20.0, 30.0],
            geometries: vec![Geometry::Circle, Geometry::Star],
            apertures: vec![4, 8],
            methods: Method::ALL.to_vec(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() || self.geometries.is_empty() || self.apertures.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("every sweep axis needs at least one value".into()));
        }
        if self.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::Config("sweep snr_db values must be numbers or +inf".into()));
        }
        if let Some(n) = self.apertures.iter().find(|n| !(2..=8).contains(*n)) {
            return Err(Error::Config(format!("sweep aperture count {n} is outside 2..=8")));
        }
        if self.cells().len() != self.cells().iter().map(SweepCell::key).collect::<HashSet<_>>().len() {
            return Err(Error::Config("sweep axes contain duplicate values".into()));
        }
        Ok(())
    }

    /// All cells, methods varying fastest.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &snr_db in &self.snr_db {
            for &geometry in &self.geometries {
                for &apertures in &self.apertures {
                    for &method in &self.methods {
                        out.push(SweepCell {
                            snr_db,
                            geometry,
                            apertures,
                            method,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepCell {
    pub snr_db: f64,
    pub geometry: Geometry,
    pub apertures: usize,
    pub method: Method,
}

type CellKey = (u64, Geometry, usize, Method);

impl SweepCell {
    fn key(&self) -> CellKey {
        (self.snr_db.to_bits(), self.geometry, self.apertures, self.method)
    }

    pub fn phantom(&self, base: &PhantomSpec) -> PhantomSpec {
        PhantomSpec {
            snr_db: self.snr_db,
            geometry: self.geometry,
            apertures: self.apertures,
            sidelobe_offsets: if base.sidelobe_offsets.len() == self.apertures {
                base.sidelobe_offsets.clone()
            } else {
                Vec::new()
            },
            ..base.clone()
        }
    }
}

/// One CSV row: the cell coordinates followed by its metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub input_snr_db: f64,
    pub geometry: Geometry,
    pub apertures: usize,
    pub method: Method,
    pub snr_db: f64,
    pub cnr: f64,
    pub gcnr: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl SweepRow {
    pub fn new(cell: &SweepCell, r: &MetricsReport) -> Self {
        Self {
            input_snr_db: cell.snr_db,
            geometry: cell.geometry,
            apertures: cell.apertures,
            method: cell.method,
            snr_db: r.snr_db,
            cnr: r.cnr,
            gcnr: r.gcnr,
            psnr_db: r.psnr_db,
            ssim: r.ssim,
        }
    }

    pub fn cell(&self) -> SweepCell {
        SweepCell {
            snr_db: self.input_snr_db,
            geometry: self.geometry,
            apertures: self.apertures,
            method: self.method,
        }
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            snr_db: self.snr_db,
            cnr: self.cnr,
            gcnr: self.gcnr,
            psnr_db: self.psnr_db,
            ssim: self.ssim,
        }
    }
}

pub fn parse_rows(bytes: &[u8]) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    parse_rows(&read_file(path)?)
}

fn lock_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".lock");
    PathBuf::from(s)
}

/// Appends `row` unless its cell is already recorded. Holds an exclusive
/// lock on a sibling `.lock` file and rewrites the CSV atomically, so
/// concurrent sweeps never interleave or duplicate rows. Returns whether
/// the row was written.
pub fn append_row(csv_path: &Path, row: &SweepRow) -> Result<bool> {
    let lp = lock_path(csv_path);
    let lock = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lp)
        .map_err(|e| Error::io(&lp, e))?;
    lock.lock().map_err(|e| Error::io(&lp, e))?;
    let existing = if csv_path.exists() { read_file(csv_path)? } else { Vec::new() };
    let key = row.cell().key();
    if parse_rows(&existing)?.iter().any(|r| r.cell().key() == key) {
        return Ok(false);
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(existing.is_empty())
        .from_writer(existing);
    w.serialize(row).map_err(csv_err)?;
    atomic_write(csv_path, &finish(w)?)?;
    Ok(true)
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub written: usize,
    /// Cells already present in the CSV.
    pub skipped: usize,
    pub failed: Vec<(SweepCell, Error)>,
}

/// Metrics of one method on one generated phantom.
pub fn evaluate_cell(cell: &SweepCell, cfg: &RunConfig) -> Result<MetricsReport> {
    let spec = cell.phantom(&cfg.phantom);
    let bundle = generate_dataset(&spec)?;
    evaluate_method(cell.method, &bundle.noisy_stack, &bundle.clean_compound, &spec, cfg)
}

fn evaluate_method(
    method: Method,
    noisy: &ApertureStack,
    clean: &ComplexField,
    spec: &PhantomSpec,
    cfg: &RunConfig,
) -> Result<MetricsReport> {
    let roi = RunConfig {
        phantom: spec.clone(),
        ..cfg.clone()
    }
    .roi()?;
    let out = run_method(method, noisy, cfg)?;
    evaluate_envelope_with_bins(
        &out.envelope(),
        &clean.envelope(),
        &roi,
        cfg.metrics.dynamic_range,
        cfg.metrics.gcnr_bins,
    )
}

/// Runs every cell of `cfg.sweep` not yet present in `csv_path`, appending
/// one row per finished cell. A failing cell is logged and left out, and
/// the sweep moves on.
pub fn run_sweep(cfg: &RunConfig, csv_path: &Path) -> Result<SweepOutcome> {
    cfg.sweep.validate()?;
    let mut outcome = SweepOutcome::default();
    let cells = cfg.sweep.cells();
    for group in cells.chunks(cfg.sweep.methods.len()) {
        let done: HashSet<CellKey> = read_rows(csv_path)?.iter().map(|r| r.cell().key()).collect();
        let pending: Vec<&SweepCell> = group.iter().filter(|c| !done.contains(&c.key())).collect();
        outcome.skipped += group.len() - pending.len();
        if pending.is_empty() {
            continue;
        }
        let spec = pending[0].phantom(&cfg.phantom);
        let bundle = match generate_dataset(&spec) {
            Ok(b) => b,
            Err(e) => {
                log::error!("phantom for {:?} failed: {e}", pending[0]);
                outcome
                    .failed
                    .extend(pending.iter().map(|c| (**c, Error::Numeric(e.to_string()))));
                continue;
            }
        };
        for cell in pending {
            log::info!(
                "cell snr={} geometry={} n={} method={}",
                cell.snr_db,
                cell.geometry.as_str(),
                cell.apertures,
                cell.method.as_str()
            );
            match evaluate_method(cell.method, &bundle.noisy_stack, &bundle.clean_compound, &spec, cfg) {
                Ok(report) => {
                    if append_row(csv_path, &SweepRow::new(cell, &report))? {
                        outcome.written += 1;
                    } else {
                        outcome.skipped += 1;
                    }
                }
                Err(e) => {
                    log::error!("cell {cell:?} failed: {e}");
                    outcome.failed.push((*cell, e));
                }
            }
        }
    }
    Ok(outcome)
}
