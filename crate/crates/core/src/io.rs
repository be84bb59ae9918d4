//! On-disk formats.
//!
//! A dataset is a JSON manifest plus two payload files next to it: the full
//! grid of responses as little-endian `f64` in grid order (gap cells hold the
//! ground truth when known, NaN otherwise) and one byte per cell for the mask
//! (1 = observed, 0 = gap). A model manifest points at its dataset, carries the
//! hyperparameters and solver settings, and references an `f64` payload of the
//! weight vector. SHA-256 digests tie the pieces together so a model whose
//! dataset or weights changed underneath it is rejected as stale.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{GappyDataset, GridSpec, IndexSets};
use crate::kernels::Hyperparams;
use crate::model::{Fit, GpModel};
use crate::solvers::{SolveReport, SolverConfig};

pub const FORMAT_VERSION: u32 = 1;

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name =
        path.file_name().ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(format_error(path, format!("payload length {} is not a multiple of 8", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

fn sibling(manifest: &Path, suffix: &str) -> PathBuf {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    manifest.with_file_name(format!("{stem}.{suffix}"))
}

fn resolve(manifest: &Path, rel: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(rel)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| format_error(path, e.to_string()))
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub d: usize,
    pub names: Vec<String>,
    pub axes: Vec<Vec<f64>>,
    pub mask_encoding: String,
    pub responses_path: String,
    pub mask_path: String,
    /// Whether gap cells in the responses payload hold ground truth.
    pub oracle: bool,
    pub responses_sha256: String,
    pub mask_sha256: String,
    /// Free-form provenance (generator settings and the like).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

fn dataset_payloads(data: &GappyDataset) -> (Vec<u8>, Vec<u8>) {
    let full = match &data.y_full_oracle {
        Some(full) => full.clone(),
        None => {
            let mut full = vec![f64::NAN; data.len()];
            for (&i, &y) in data.idx.observed().iter().zip(&data.y_obs) {
                full[i] = y;
            }
            full
        }
    };
    let mask = data.idx.mask().into_iter().map(u8::from).collect();
    (encode_f64(&full), mask)
}

/// Digest identifying a dataset's contents.
pub fn dataset_digest(data: &GappyDataset) -> String {
    let (responses, mask) = dataset_payloads(data);
    let mut all = sha256_hex(&responses);
    all.push_str(&sha256_hex(&mask));
    sha256_hex(all.as_bytes())
}

pub fn save_dataset(data: &GappyDataset, manifest_path: &Path, meta: serde_json::Value) -> Result<()> {
    let (responses, mask) = dataset_payloads(data);
    let responses_file = sibling(manifest_path, "responses.f64");
    let mask_file = sibling(manifest_path, "mask.u8");
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        d: data.grid.ndim(),
        names: data.grid.names().to_vec(),
        axes: data.grid.axes().to_vec(),
        mask_encoding: "u8".into(),
        responses_path: file_name(&responses_file),
        mask_path: file_name(&mask_file),
        oracle: data.y_full_oracle.is_some(),
        responses_sha256: sha256_hex(&responses),
        mask_sha256: sha256_hex(&mask),
        meta,
    };
    write_atomic(&responses_file, &responses)?;
    write_atomic(&mask_file, &mask)?;
    write_atomic(manifest_path, &to_pretty_json(&manifest)?)
}

pub fn load_dataset_with_manifest(manifest_path: &Path) -> Result<(GappyDataset, DatasetManifest)> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    if manifest.version != FORMAT_VERSION {
        return Err(format_error(manifest_path, format!("unsupported version {}", manifest.version)));
    }
    if manifest.mask_encoding != "u8" {
        return Err(format_error(manifest_path, format!("unsupported mask encoding {:?}", manifest.mask_encoding)));
    }
    if manifest.d != manifest.axes.len() {
        return Err(format_error(manifest_path, "d does not match the number of axes"));
    }
    let grid = GridSpec::with_names(manifest.names.clone(), manifest.axes.clone())?;
    let m = grid.len();

    let responses_path = resolve(manifest_path, &manifest.responses_path);
    let responses = fs::read(&responses_path)?;
    if sha256_hex(&responses) != manifest.responses_sha256 {
        return Err(format_error(&responses_path, "digest mismatch"));
    }
    let full = decode_f64(&responses, &responses_path)?;
    if full.len() != m {
        return Err(format_error(&responses_path, format!("expected {m} values, found {}", full.len())));
    }

    let mask_path = resolve(manifest_path, &manifest.mask_path);
    let mask_bytes = fs::read(&mask_path)?;
    if sha256_hex(&mask_bytes) != manifest.mask_sha256 {
        return Err(format_error(&mask_path, "digest mismatch"));
    }
    if mask_bytes.len() != m {
        return Err(format_error(&mask_path, format!("expected {m} bytes, found {}", mask_bytes.len())));
    }
    let mask = mask_bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(format_error(&mask_path, format!("mask byte {other} is neither 0 nor 1"))),
        })
        .collect::<Result<Vec<bool>>>()?;

    let idx = IndexSets::from_mask(&mask);
    let y_obs = idx.observed().iter().map(|&i| full[i]).collect();
    let oracle = manifest.oracle.then_some(full);
    let data = GappyDataset::new(grid, idx, y_obs, oracle)?;
    Ok((data, manifest))
}

pub fn load_dataset(manifest_path: &Path) -> Result<GappyDataset> {
    Ok(load_dataset_with_manifest(manifest_path)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub version: u32,
    /// Dataset manifest, relative to this file.
    pub dataset: String,
    pub dataset_digest: String,
    pub hyperparameters: serde_json::Value,
    pub solver: SolverConfig,
    pub alpha_path: String,
    pub alpha_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_gaps_path: Option<String>,
    pub report: SolveReport,
}

fn relative_to(base_file: &Path, target: &Path) -> String {
    let base_dir = base_file.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (b, t) = (abs(base_dir), abs(target));
    match t.strip_prefix(&b) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => t.to_string_lossy().into_owned(),
    }
}

/// Writes the fitted model next to `model_path`. The dataset must already be
/// saved at `dataset_manifest`.
pub fn save_model(model: &GpModel, dataset_manifest: &Path, model_path: &Path) -> Result<()> {
    let fit = model.fitted().ok_or(Error::NotFitted)?;
    let alpha_file = sibling(model_path, "alpha.f64");
    let alpha_bytes = encode_f64(&fit.alpha);
    write_atomic(&alpha_file, &alpha_bytes)?;
    let y_gaps_path = match &fit.y_gaps {
        Some(yz) => {
            let p = sibling(model_path, "ygaps.f64");
            write_atomic(&p, &encode_f64(yz))?;
            Some(file_name(&p))
        }
        None => None,
    };
    let manifest = ModelManifest {
        version: FORMAT_VERSION,
        dataset: relative_to(model_path, dataset_manifest),
        dataset_digest: dataset_digest(model.data()),
        hyperparameters: model.hyper().to_json(model.data().grid.names())?,
        solver: fit.solver,
        alpha_path: file_name(&alpha_file),
        alpha_sha256: sha256_hex(&alpha_bytes),
        y_gaps_path,
        report: fit.report.clone(),
    };
    write_atomic(model_path, &to_pretty_json(&manifest)?)
}

/// Loads a model and its weights, rejecting artifacts that no longer match.
pub fn load_model(model_path: &Path) -> Result<GpModel> {
    let manifest: ModelManifest = read_json(model_path)?;
    if manifest.version != FORMAT_VERSION {
        return Err(format_error(model_path, format!("unsupported version {}", manifest.version)));
    }
    let data = load_dataset(&resolve(model_path, &manifest.dataset))?;
    if dataset_digest(&data) != manifest.dataset_digest {
        return Err(Error::Stale("dataset changed since the model was fitted".into()));
    }
    let hyper = Hyperparams::from_json(&manifest.hyperparameters, data.grid.names())?;
    let mut model = GpModel::new(data, hyper)?;

    let alpha_path = resolve(model_path, &manifest.alpha_path);
    let bytes = match fs::read(&alpha_path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::Stale(format!("weight payload {} is missing", alpha_path.display())))
        }
        Err(e) => return Err(e.into()),
    };
    if sha256_hex(&bytes) != manifest.alpha_sha256 {
        return Err(Error::Stale("weight payload does not match the manifest".into()));
    }
    let alpha = decode_f64(&bytes, &alpha_path)?;
    let y_gaps = match &manifest.y_gaps_path {
        Some(p) => {
            let path = resolve(model_path, p);
            Some(decode_f64(&fs::read(&path)?, &path)?)
        }
        None => None,
    };
    model.restore_fit(Fit { alpha, y_gaps, solver: manifest.solver, report: manifest.report })?;
    Ok(model)
}
