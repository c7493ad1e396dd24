//! File formats: forward-model manifest plus binary blob, JSON documents and CSV tables.
//!
//! All writers go through [`write_atomic`], which writes a sibling temporary
//! file and renames it over the destination.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::equivalence::SweepTable;
use crate::error::{Error, Result};
use crate::focality::FocalityReport;
use crate::model::{ForwardModel, Montage, SolveReport};

pub const FORWARD_FORMAT: &str = "hingeplace-forward";
pub const FORWARD_VERSION: u32 = 1;

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let res = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub field: String,
    pub coords: String,
    pub volumes: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            field: "V/m per mA".into(),
            coords: "m".into(),
            volumes: "m^3".into(),
        }
    }
}

/// One contiguous run of little-endian `f64` values inside the blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub offset_bytes: u64,
    pub n_values: u64,
    pub sha256: String,
}

/// JSON manifest of a forward-model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardManifest {
    pub format: String,
    pub version: u32,
    pub n_electrodes: usize,
    pub n_voxels: usize,
    pub block_order: Vec<String>,
    pub layout: String,
    pub dtype: String,
    pub endianness: String,
    pub units: Units,
    pub electrode_ids: Vec<String>,
    pub reference: String,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub sections: Vec<Section>,
}

fn le_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Blob path next to a manifest path: `model.json` becomes `model.bin`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes the manifest at `path` and the blob beside it.
///
/// The blob holds the `3M x N` matrix row-major in `[x; y; z]` block order,
/// then voxel coordinates (`M x 3`, row-major), then voxel volumes.
pub fn write_forward(path: &Path, fm: &ForwardModel) -> Result<ForwardManifest> {
    let t = fm.matrix();
    let (rows, cols) = t.shape();
    let parts: [(&str, Vec<u8>); 3] = [
        ("matrix", le_bytes((0..rows).flat_map(|r| (0..cols).map(move |c| t[(r, c)])))),
        ("voxel_coords", le_bytes(fm.voxel_coords().iter().flat_map(|p| p.iter().copied()))),
        ("voxel_volumes", le_bytes(fm.voxel_volumes().iter().copied())),
    ];
    let mut blob = Vec::new();
    let mut sections = Vec::new();
    for (name, bytes) in &parts {
        sections.push(Section {
            name: name.to_string(),
            offset_bytes: blob.len() as u64,
            n_values: (bytes.len() / 8) as u64,
            sha256: sha_hex(bytes),
        });
        blob.extend_from_slice(bytes);
    }
    let bpath = blob_path(path);
    let manifest = ForwardManifest {
        format: FORWARD_FORMAT.into(),
        version: FORWARD_VERSION,
        n_electrodes: cols,
        n_voxels: fm.n_voxels(),
        block_order: vec!["x".into(), "y".into(), "z".into()],
        layout: "row-major".into(),
        dtype: "f64".into(),
        endianness: "little".into(),
        units: Units::default(),
        electrode_ids: fm.electrode_ids().to_vec(),
        reference: fm.reference_note().to_string(),
        blob: bpath
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sections,
    };
    write_atomic(&bpath, &blob)?;
    write_json(path, &manifest)?;
    Ok(manifest)
}

fn section<'a>(man: &ForwardManifest, blob: &'a [u8], name: &str, n_values: usize) -> Result<Vec<f64>> {
    let s = man
        .sections
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Format(format!("manifest lacks section {name}")))?;
    if s.n_values as usize != n_values {
        return Err(Error::Format(format!(
            "section {name} holds {} values, dimensions imply {n_values}",
            s.n_values
        )));
    }
    let start = s.offset_bytes as usize;
    let end = start + 8 * n_values;
    let bytes: &'a [u8] = blob
        .get(start..end)
        .ok_or_else(|| Error::Format(format!("section {name} runs past the end of the blob")))?;
    if sha_hex(bytes) != s.sha256 {
        return Err(Error::Format(format!("checksum mismatch in section {name}")));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8 bytes")))
        .collect())
}

/// Reads and verifies a forward-model file written by [`write_forward`].
pub fn read_forward(path: &Path) -> Result<ForwardModel> {
    let man: ForwardManifest = read_json(path)?;
    if man.format != FORWARD_FORMAT {
        return Err(Error::Format(format!("unexpected format tag {:?}", man.format)));
    }
    if man.version != FORWARD_VERSION {
        return Err(Error::Format(format!("unsupported version {}", man.version)));
    }
    if man.dtype != "f64" || man.endianness != "little" || man.layout != "row-major" {
        return Err(Error::Format("only little-endian row-major f64 blobs are supported".into()));
    }
    if man.block_order != ["x", "y", "z"] {
        return Err(Error::Format(format!("unsupported block order {:?}", man.block_order)));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let blob = fs::read(dir.join(&man.blob))?;
    let (m, n) = (man.n_voxels, man.n_electrodes);
    let t = section(&man, &blob, "matrix", 3 * m * n)?;
    let coords = section(&man, &blob, "voxel_coords", 3 * m)?;
    let volumes = section(&man, &blob, "voxel_volumes", m)?;
    let t = DMatrix::from_row_slice(3 * m, n, &t);
    let coords = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    ForwardModel::new(t, coords, volumes, man.electrode_ids, man.reference)
}

/// Montage document with electrode labels and an optional solver report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MontageFile {
    pub units: String,
    pub electrode_ids: Vec<String>,
    pub currents: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SolveReport>,
}

impl MontageFile {
    pub fn new(ids: &[String], montage: &Montage, report: Option<SolveReport>) -> Result<Self> {
        if ids.len() != montage.len() {
            return Err(Error::dims("electrode ids", montage.len(), ids.len()));
        }
        Ok(Self {
            units: "mA".into(),
            electrode_ids: ids.to_vec(),
            currents: montage.currents.clone(),
            report,
        })
    }

    pub fn montage(&self) -> Result<Montage> {
        if self.units != "mA" {
            return Err(Error::Format(format!("montage currents must be in mA, got {:?}", self.units)));
        }
        if self.electrode_ids.len() != self.currents.len() {
            return Err(Error::dims("electrode ids", self.currents.len(), self.electrode_ids.len()));
        }
        Ok(Montage::new(self.currents.clone()))
    }
}

/// Serializes rows to RFC-4180 CSV with a header, in memory.
pub fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub const SWEEP_PAIR_COLUMNS: [&str; 7] =
    ["target", "i_safe_mA", "i_tot_mul", "param_a", "param_b", "diff_percent", "flag"];
pub const SWEEP_CELL_COLUMNS: [&str; 6] =
    ["target", "i_safe_mA", "i_tot_mul", "median_diff_percent", "n_pairs", "n_flagged"];
pub const FOCALITY_COLUMNS: [&str; 10] = [
    "i_safe_mA",
    "i_tot_mul",
    "lcmv_metric",
    "hp_metric",
    "relative_decrease_percent",
    "hp_power",
    "tol_x",
    "tol_y",
    "tol_z",
    "retuned",
];

/// Per-pair and per-cell CSV bytes of a sweep.
pub fn sweep_csv(table: &SweepTable) -> Result<(Vec<u8>, Vec<u8>)> {
    let pairs: Vec<_> = table
        .pairs
        .iter()
        .map(|p| (p.target, p.i_safe, p.i_tot_mul, p.param_a, p.param_b, p.diff_percent, p.flag.clone()))
        .collect();
    let cells: Vec<_> = table
        .cells
        .iter()
        .map(|c| (c.target, c.i_safe, c.i_tot_mul, c.median_diff_percent, c.n_pairs, c.n_flagged))
        .collect();
    Ok((csv_bytes(&pairs, &SWEEP_PAIR_COLUMNS)?, csv_bytes(&cells, &SWEEP_CELL_COLUMNS)?))
}

pub fn focality_csv(report: &FocalityReport) -> Result<Vec<u8>> {
    let rows: Vec<_> = report
        .cells
        .iter()
        .map(|c| {
            (
                c.i_safe,
                c.i_tot_mul,
                c.lcmv_metric,
                c.hp_metric,
                c.relative_decrease(),
                c.hp_power,
                c.hp_triplet[0],
                c.hp_triplet[1],
                c.hp_triplet[2],
                c.retuned,
            )
        })
        .collect();
    csv_bytes(&rows, &FOCALITY_COLUMNS)
}
