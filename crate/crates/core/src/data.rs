//! On-disk formats.
//!
//! An epoch dataset is a directory:
//!
//! - `meta.json`: schema version, shapes, sampling rate, catalogs, dtype and
//!   the generator config hash;
//! - `epochs.bin`: little-endian float32, C order `n_epochs x P x T`;
//! - `index.csv`: `epoch_id,label_id,domain_id`;
//! - `manifest.json` (optional): generator config, its hash and the SHA-256 of
//!   every data file.
//!
//! Embedding matrices are headerless CSV files of float rows, optionally with
//! a `<file>.meta.json` sidecar such as `{"curvature": -1.0}` for Lorentz rows.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifold::{Curvature, LorentzPoint};
use crate::synth::EpochDataset;

pub const SCHEMA_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const EPOCHS_FILE: &str = "epochs.bin";
pub const INDEX_FILE: &str = "index.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub n_channels: usize,
    pub n_times: usize,
    pub sampling_rate: f64,
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
    pub n_epochs: usize,
    pub dtype: String,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub generator: serde_json::Value,
    pub config_hash: String,
    /// File name to SHA-256 hex digest.
    pub files: std::collections::BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the dataset files into `dir` (created if missing). When
/// `generator` is given, a manifest recording it is written too.
pub fn write_dataset(dir: &Path, ds: &EpochDataset, generator: Option<&serde_json::Value>) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = DatasetMeta {
        schema_version: SCHEMA_VERSION,
        n_channels: ds.n_channels,
        n_times: ds.n_times,
        sampling_rate: ds.sampling_rate,
        class_names: ds.class_names.clone(),
        domain_names: ds.domain_names.clone(),
        n_epochs: ds.len(),
        dtype: "float32".into(),
        provenance: ds.provenance.clone(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_file(&dir.join(META_FILE), format!("{json}\n").as_bytes())?;

    let mut bytes = vec![0u8; ds.epochs.len() * 4];
    LittleEndian::write_f32_into(&ds.epochs, &mut bytes);
    write_file(&dir.join(EPOCHS_FILE), &bytes)?;

    let path = dir.join(INDEX_FILE);
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(f);
    let mut body = String::from("epoch_id,label_id,domain_id\n");
    for i in 0..ds.len() {
        body.push_str(&format!("{i},{},{}\n", ds.labels[i], ds.domains[i]));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;

    if let Some(generator) = generator {
        let mut files = std::collections::BTreeMap::new();
        for name in [META_FILE, EPOCHS_FILE, INDEX_FILE] {
            files.insert(name.to_string(), sha256_file(&dir.join(name))?);
        }
        let manifest = Manifest {
            toolkit_version: crate::VERSION.into(),
            generator: generator.clone(),
            config_hash: ds.provenance.clone(),
            files,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_file(&dir.join(MANIFEST_FILE), format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn read_dataset(dir: &Path) -> Result<EpochDataset> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Parse(format!("unsupported dataset schema version {}", meta.schema_version)));
    }
    if meta.dtype != "float32" {
        return Err(Error::Parse(format!("unsupported dtype {:?}", meta.dtype)));
    }

    let path = dir.join(EPOCHS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = meta.n_epochs * meta.n_channels * meta.n_times * 4;
    if bytes.len() != expected {
        return Err(Error::Parse(format!("{}: {} bytes, expected {expected}", path.display(), bytes.len())));
    }
    let mut epochs = vec![0f32; bytes.len() / 4];
    LittleEndian::read_f32_into(&bytes, &mut epochs);

    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("epoch_id,label_id,domain_id") {
        return Err(Error::Parse(format!("{}: missing header", path.display())));
    }
    let mut labels = Vec::with_capacity(meta.n_epochs);
    let mut domains = Vec::with_capacity(meta.n_epochs);
    for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |s: &str| s.parse::<u64>().map_err(|_| Error::Parse(format!("{} row {}: bad integer {s:?}", path.display(), row + 1)));
        if fields.len() != 3 {
            return Err(Error::Parse(format!("{} row {}: expected 3 fields", path.display(), row + 1)));
        }
        if parse(fields[0])? != labels.len() as u64 {
            return Err(Error::Parse(format!("{} row {}: epoch ids must be 0..n in order", path.display(), row + 1)));
        }
        labels.push(parse(fields[1])? as u32);
        domains.push(parse(fields[2])? as u32);
    }
    if labels.len() != meta.n_epochs {
        return Err(Error::Parse(format!("{}: {} rows for {} epochs", path.display(), labels.len(), meta.n_epochs)));
    }
    let ds = EpochDataset {
        epochs,
        n_channels: meta.n_channels,
        n_times: meta.n_times,
        labels,
        domains,
        class_names: meta.class_names,
        domain_names: meta.domain_names,
        sampling_rate: meta.sampling_rate,
        provenance: meta.provenance,
    };
    ds.validate()?;
    Ok(ds)
}

/// Parses a headerless CSV of float rows. Blank lines and lines starting with
/// `#` are skipped; non-finite values are rejected with their row number.
pub fn parse_matrix(text: &str, source: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                let v: f64 = f.trim().parse().map_err(|_| Error::Parse(format!("{source} row {}: not a number: {:?}", i + 1, f.trim())))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse(format!("{source} row {}: non-finite value {v}", i + 1)))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!("{source} row {}: {} columns, expected {}", i + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingMeta {
    pub curvature: f64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, &path.display().to_string())
}

/// Curvature from the sidecar, or `None` when there is no sidecar.
pub fn read_sidecar(path: &Path) -> Result<Option<Curvature>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: EmbeddingMeta = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", side.display())))?;
    Ok(Some(Curvature::new(meta.curvature)?))
}

/// Reads Lorentz rows `[t, s_1..s_n]`; curvature from the sidecar, default
/// `-1`. Rows off the manifold by more than `tol` are listed in the error.
pub fn read_lorentz(path: &Path, tol: f64) -> Result<Vec<LorentzPoint>> {
    let rows = read_matrix(path)?;
    let k = read_sidecar(path)?.unwrap_or_default();
    lorentz_rows(rows, k, tol, &path.display().to_string())
}

pub fn lorentz_rows(rows: Vec<Vec<f64>>, k: Curvature, tol: f64, source: &str) -> Result<Vec<LorentzPoint>> {
    if rows.first().is_some_and(|r| r.len() < 2) {
        return Err(Error::Validation(format!("{source}: Lorentz rows need at least 2 columns")));
    }
    let points: Vec<LorentzPoint> = rows.into_iter().map(|r| LorentzPoint::new_unchecked(r, k)).collect();
    let bad: Vec<String> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.is_on_manifold(tol))
        .map(|(i, p)| format!("row {} (residual {:.3e})", i + 1, p.constraint_residual()))
        .collect();
    if !bad.is_empty() {
        let shown = bad.iter().take(20).cloned().collect::<Vec<_>>().join(", ");
        let more = if bad.len() > 20 { format!(" and {} more", bad.len() - 20) } else { String::new() };
        return Err(Error::Validation(format!("{source}: {} off-manifold rows: {shown}{more}", bad.len())));
    }
    Ok(points)
}

/// Writes rows as CSV with full round-trip precision.
pub fn write_matrix(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

pub fn write_lorentz(path: &Path, points: &[LorentzPoint]) -> Result<()> {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.ambient().to_vec()).collect();
    write_matrix(path, &rows)?;
    if let Some(p) = points.first() {
        let meta = EmbeddingMeta { curvature: p.curvature().k() };
        write_file(&sidecar_path(path), serde_json::to_string(&meta).expect("serializes").as_bytes())?;
    }
    Ok(())
}
