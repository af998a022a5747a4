//! Output formats: time-series CSV, snapshot header/payload pairs and the
//! run manifest.
//!
//! A snapshot is a JSON header next to a raw payload of little-endian `f64`
//! values, species-major, cells row-major with `x` fastest.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Result, SktError};
use crate::grid::{FieldKind, Grid, GridField};
use crate::simulator::{PathRecord, Snapshot};

pub use config::{canonical_hash, canonical_json, parse_config, ParsedConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const LAYOUT: &str = "species-major, row-major x-fastest";
pub const DTYPE: &str = "f64-le";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `{:e}` renders the shortest representation that round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

pub fn timeseries_header(n_species: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "H".into(), "dissipation".into()];
    h.extend((1..=n_species).map(|i| format!("mass_{i}")));
    h.push("min_u".into());
    h.push("max_u".into());
    h.extend((1..=n_species).map(|i| format!("l2_{i}")));
    h.push("newton_iters".into());
    h
}

/// Writes the scalar series of a record as CSV.
pub fn write_timeseries(path: &Path, rec: &PathRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(timeseries_header(rec.n_species)).map_err(csv_err)?;
    for k in 0..rec.len() {
        let mut row = vec![fmt_f64(rec.times[k]), fmt_f64(rec.entropy[k]), fmt_f64(rec.dissipation[k])];
        row.extend(rec.mass[k].iter().map(|x| fmt_f64(*x)));
        row.push(fmt_f64(rec.min_u[k]));
        row.push(fmt_f64(rec.max_u[k]));
        row.extend(rec.l2[k].iter().map(|x| fmt_f64(*x)));
        row.push(rec.newton_iters[k].to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a table of already formatted cells.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> SktError {
    SktError::Io(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub version: u32,
    pub dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub t: f64,
    pub step: usize,
    pub species: usize,
    pub kind: FieldKind,
    pub layout: String,
    pub dtype: String,
    pub payload: String,
    pub payload_sha256: String,
}

/// A snapshot read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSnapshot {
    pub header: SnapshotHeader,
    pub grid: Grid,
    pub field: GridField,
    header_path: PathBuf,
}

impl LoadedSnapshot {
    pub fn payload_path(&self) -> PathBuf {
        self.header_path.with_file_name(&self.header.payload)
    }
}

/// Writes `<stem>.json` and `<stem>.bin` into `dir`; returns both paths.
pub fn write_snapshot(dir: &Path, stem: &str, grid: &Grid, field: &GridField, t: f64, step: usize) -> Result<(PathBuf, PathBuf)> {
    field.check_shape(field.n_species(), grid.len())?;
    let payload: Vec<u8> = field.values().iter().flat_map(|x| x.to_le_bytes()).collect();
    let bin_name = format!("{stem}.bin");
    let header = SnapshotHeader {
        version: FORMAT_VERSION,
        dim: grid.dim(),
        nx: grid.nx(),
        ny: grid.ny(),
        lx: grid.lx(),
        ly: grid.ly(),
        t,
        step,
        species: field.n_species(),
        kind: field.kind(),
        layout: LAYOUT.into(),
        dtype: DTYPE.into(),
        payload: bin_name.clone(),
        payload_sha256: sha256_hex(&payload),
    };
    let bin_path = dir.join(&bin_name);
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&bin_path, &payload)?;
    fs::write(&json_path, serde_json::to_string_pretty(&header).expect("serializable") + "\n")?;
    Ok((json_path, bin_path))
}

pub fn read_snapshot(header_path: &Path) -> Result<LoadedSnapshot> {
    let text = fs::read_to_string(header_path)?;
    let header: SnapshotHeader =
        serde_json::from_str(&text).map_err(|e| SktError::Io(format!("{}: {e}", header_path.display())))?;
    if header.layout != LAYOUT || header.dtype != DTYPE {
        return Err(SktError::Io("unsupported snapshot layout".into()));
    }
    let grid = match header.dim {
        1 => Grid::new_1d(header.nx, header.lx)?,
        2 => Grid::new_2d(header.nx, header.ny, header.lx, header.ly)?,
        d => return Err(SktError::Io(format!("unsupported snapshot dimension {d}"))),
    };
    let bytes = fs::read(header_path.with_file_name(&header.payload))?;
    if sha256_hex(&bytes) != header.payload_sha256 {
        return Err(SktError::Io("snapshot payload checksum mismatch".into()));
    }
    if bytes.len() != 8 * header.species * grid.len() {
        return Err(SktError::Io("snapshot payload has the wrong size".into()));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let field = GridField::new(header.kind, header.species, grid.len(), values)?;
    Ok(LoadedSnapshot { header, grid, field, header_path: header_path.to_path_buf() })
}

/// Writes every saved density of a record as `snap_<step>`.
pub fn write_record_snapshots(dir: &Path, rec: &PathRecord) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for Snapshot { step, t, u, .. } in rec.snapshots() {
        let (j, b) = write_snapshot(dir, &format!("snap_{step:06}"), &rec.grid, u, *t, *step)?;
        out.push(j);
        out.push(b);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of a run. Everything except `wall_clock` is a deterministic
/// function of the configuration and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    pub config: Value,
    pub outputs: Vec<OutputEntry>,
    pub wall_clock: WallClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_unix: f64,
    pub elapsed_seconds: f64,
}

impl RunManifest {
    /// Hashes `files` (paths relative to `out_dir`) into the output listing.
    pub fn list_outputs(out_dir: &Path, files: &[PathBuf]) -> Result<Vec<OutputEntry>> {
        let mut entries = files
            .iter()
            .map(|f| {
                let full = if f.is_absolute() { f.clone() } else { out_dir.join(f) };
                let bytes = fs::read(&full)?;
                let rel = full.strip_prefix(out_dir).unwrap_or(&full).to_string_lossy().replace('\\', "/");
                Ok(OutputEntry { file: rel, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
            })
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by(|a, b| a.file.cmp(&b.file));
        Ok(entries)
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self).expect("serializable") + "\n")?;
        Ok(path)
    }

    /// Re-hashes every listed output; returns the files whose checksum differs.
    pub fn verify(&self, out_dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for e in &self.outputs {
            let bytes = fs::read(out_dir.join(&e.file))?;
            if sha256_hex(&bytes) != e.sha256 || bytes.len() as u64 != e.bytes {
                bad.push(e.file.clone());
            }
        }
        Ok(bad)
    }
}
