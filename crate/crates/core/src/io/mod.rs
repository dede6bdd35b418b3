//! On-disk formats.
//!
//! A dataset directory holds one `scenario_NNNN.csv` per window with columns
//! `t,lambda,z` and optionally `d_true`, `y_true`, `y_obs`; a `features.csv`
//! with columns `scenario_id,f1..fm`; and a `manifest.json` recording the
//! split, the generating agents, the generator spec and a sha256 per file.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::GenSpec;
use crate::error::{Error, Result};
use crate::qp::{AgentParams, PriceSignal};
use crate::scenario::{Dataset, Scenario};

pub const MANIFEST: &str = "manifest.json";
pub const FEATURES: &str = "features.csv";
pub const DATASET_VERSION: u32 = 1;
const OPTIONAL_COLUMNS: [&str; 3] = ["d_true", "y_true", "y_obs"];

pub fn scenario_file_name(id: usize) -> String {
    format!("scenario_{id:04}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileChecksum {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub scenario_id: usize,
    pub params: AgentParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: Option<u64>,
    pub spec: Option<GenSpec>,
    pub horizon: usize,
    pub feature_dim: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub truth: Vec<TruthRecord>,
    pub files: Vec<FileChecksum>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn schema(file: &Path, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Schema { file: file.to_path_buf(), line, column: column.to_string(), message: message.into() }
}

fn fmt_row(values: impl IntoIterator<Item = String>) -> String {
    let mut s = values.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

/// CSV text for one scenario.
pub fn scenario_csv(s: &Scenario) -> String {
    let optional: Vec<(&str, &Vec<f64>)> = OPTIONAL_COLUMNS
        .iter()
        .zip([&s.d_true, &s.y_true, &s.y_obs])
        .filter_map(|(name, v)| v.as_ref().map(|v| (*name, v)))
        .collect();
    let mut out = fmt_row(["t", "lambda", "z"].into_iter().chain(optional.iter().map(|(n, _)| *n)).map(String::from));
    for t in 0..s.horizon() {
        let row = [t.to_string(), s.lambda.as_slice()[t].to_string(), s.z[t].to_string()]
            .into_iter()
            .chain(optional.iter().map(|(_, v)| v[t].to_string()));
        out.push_str(&fmt_row(row));
    }
    out
}

pub fn features_csv(scenarios: &[&Scenario]) -> String {
    let m = scenarios.first().map_or(0, |s| s.features.len());
    let mut out = fmt_row(std::iter::once("scenario_id".to_string()).chain((1..=m).map(|j| format!("f{j}"))));
    for s in scenarios {
        out.push_str(&fmt_row(std::iter::once(s.id.to_string()).chain(s.features.iter().map(f64::to_string))));
    }
    out
}

/// Writes every file and a manifest; returns the manifest.
pub fn write_dataset(dir: &Path, dataset: &Dataset, spec: Option<&GenSpec>) -> Result<Manifest> {
    dataset.validate()?;
    fs::create_dir_all(dir)?;
    let all: Vec<&Scenario> = dataset.all().collect();
    let mut files = Vec::with_capacity(all.len() + 1);
    let mut write = |name: String, text: String| -> Result<()> {
        fs::write(dir.join(&name), text.as_bytes())?;
        files.push(FileChecksum { sha256: sha256_hex(text.as_bytes()), name });
        Ok(())
    };
    for s in &all {
        write(scenario_file_name(s.id), scenario_csv(s))?;
    }
    write(FEATURES.to_string(), features_csv(&all))?;
    let manifest = Manifest {
        version: DATASET_VERSION,
        seed: spec.map(|s| s.seed),
        spec: spec.cloned(),
        horizon: dataset.horizon().unwrap(),
        feature_dim: dataset.feature_dim().unwrap(),
        train: dataset.train.iter().map(|s| s.id).collect(),
        test: dataset.test.iter().map(|s| s.id).collect(),
        truth: all
            .iter()
            .filter_map(|s| s.truth_params.clone().map(|params| TruthRecord { scenario_id: s.id, params }))
            .collect(),
        files,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn parse_f64(file: &Path, line: u64, column: &str, raw: Option<&str>) -> Result<f64> {
    let raw = raw.map(str::trim).filter(|r| !r.is_empty()).ok_or_else(|| schema(file, line, column, "missing value"))?;
    let v: f64 = raw.parse().map_err(|_| schema(file, line, column, format!("not a number: {raw:?}")))?;
    if !v.is_finite() {
        return Err(schema(file, line, column, "non-finite value"));
    }
    Ok(v)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| schema(path, 0, "", format!("cannot open: {e}")))?;
    Ok(csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file))
}

/// Columns of one scenario file keyed by header name.
fn read_columns(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut rdr = reader(path)?;
    let headers: Vec<String> = rdr.headers().map_err(|e| schema(path, 1, "", e.to_string()))?.iter().map(String::from).collect();
    for required in ["t", "lambda", "z"] {
        if !headers.iter().any(|h| h == required) {
            return Err(schema(path, 1, required, "required column missing"));
        }
    }
    if let Some(h) = headers.iter().find(|h| !["t", "lambda", "z"].contains(&h.as_str()) && !OPTIONAL_COLUMNS.contains(&h.as_str())) {
        return Err(schema(path, 1, h, "unknown column"));
    }
    let mut cols: BTreeMap<String, Vec<f64>> = headers.iter().map(|h| (h.clone(), Vec::new())).collect();
    for (row, rec) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let rec = rec.map_err(|e| schema(path, line, "", e.to_string()))?;
        if rec.len() != headers.len() {
            let col = headers.get(rec.len()).map_or("", String::as_str);
            return Err(schema(path, line, col, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        for (i, h) in headers.iter().enumerate() {
            let v = parse_f64(path, line, h, rec.get(i))?;
            cols.get_mut(h).unwrap().push(v);
        }
        if cols["t"][row] != row as f64 {
            return Err(schema(path, line, "t", format!("expected step {row}")));
        }
    }
    Ok(cols)
}

fn read_scenario(path: &Path, id: usize, features: Vec<f64>, horizon: Option<usize>) -> Result<Scenario> {
    let mut cols = read_columns(path)?;
    let n = cols["t"].len();
    if n == 0 {
        return Err(schema(path, 2, "t", "no rows"));
    }
    if let Some(h) = horizon {
        if n != h {
            return Err(schema(path, n as u64 + 2, "t", format!("expected {h} rows, found {n}")));
        }
    }
    let lambda = PriceSignal::new(cols.remove("lambda").unwrap()).map_err(|e| schema(path, 2, "lambda", e.to_string()))?;
    Ok(Scenario {
        id,
        lambda,
        features,
        z: cols.remove("z").unwrap(),
        d_true: cols.remove("d_true"),
        y_true: cols.remove("y_true"),
        y_obs: cols.remove("y_obs"),
        truth_params: None,
    })
}

fn read_features(path: &Path) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut rdr = reader(path)?;
    let headers: Vec<String> = rdr.headers().map_err(|e| schema(path, 1, "", e.to_string()))?.iter().map(String::from).collect();
    if headers.first().map(String::as_str) != Some("scenario_id") {
        return Err(schema(path, 1, "scenario_id", "first column must be scenario_id"));
    }
    let mut out = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let rec = rec.map_err(|e| schema(path, line, "", e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(schema(path, line, "", format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        let id: usize = rec[0].parse().map_err(|_| schema(path, line, "scenario_id", format!("bad id {:?}", &rec[0])))?;
        let feats = (1..headers.len()).map(|j| parse_f64(path, line, &headers[j], rec.get(j))).collect::<Result<Vec<_>>>()?;
        if out.insert(id, feats).is_some() {
            return Err(schema(path, line, "scenario_id", format!("duplicate id {id}")));
        }
    }
    Ok(out)
}

pub fn read_manifest(dir: &Path) -> Result<Option<Manifest>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map(Some).map_err(|e| schema(&path, e.line() as u64, "", e.to_string()))
}

/// Recomputes every checksum listed in the manifest.
pub fn verify_checksums(dir: &Path, manifest: &Manifest) -> Result<()> {
    for f in &manifest.files {
        let path = dir.join(&f.name);
        let bytes = fs::read(&path).map_err(|e| schema(&path, 0, "", format!("cannot read: {e}")))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(schema(&path, 0, "sha256", "checksum mismatch with manifest"));
        }
    }
    Ok(())
}

fn scenario_ids(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    if !dir.is_dir() {
        return Err(schema(dir, 0, "", "dataset directory not found"));
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(id) = name.strip_prefix("scenario_").and_then(|r| r.strip_suffix(".csv")) {
            let id = id.parse().map_err(|_| schema(&path, 0, "", "scenario file name must be scenario_<id>.csv"))?;
            ids.push((id, path));
        }
    }
    ids.sort();
    Ok(ids)
}

/// Every scenario in `dir`, sorted by id. Truth parameters come from the
/// manifest when one exists.
pub fn load_scenarios(dir: &Path) -> Result<Vec<Scenario>> {
    let manifest = read_manifest(dir)?;
    if let Some(m) = &manifest {
        verify_checksums(dir, m)?;
    }
    let features_path = dir.join(FEATURES);
    let mut features = read_features(&features_path)?;
    let truth: BTreeMap<usize, AgentParams> =
        manifest.iter().flat_map(|m| m.truth.iter().map(|r| (r.scenario_id, r.params.clone()))).collect();
    let horizon = manifest.as_ref().map(|m| m.horizon);
    let mut out = Vec::new();
    let mut width = None;
    for (id, path) in scenario_ids(dir)? {
        let f = features.remove(&id).ok_or_else(|| schema(&features_path, 0, "scenario_id", format!("no features for scenario {id}")))?;
        let mut s = read_scenario(&path, id, f, horizon.or(width))?;
        width = Some(s.horizon());
        s.truth_params = truth.get(&id).cloned();
        out.push(s);
    }
    if out.is_empty() {
        return Err(schema(dir, 0, "", "no scenario files"));
    }
    Ok(out)
}

/// Scenarios split as the manifest records; everything trains without one.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(schema(dir, 0, "", "dataset directory not found"));
    }
    let manifest = read_manifest(dir)?;
    let mut by_id: BTreeMap<usize, Scenario> = load_scenarios(dir)?.into_iter().map(|s| (s.id, s)).collect();
    let dataset = match manifest {
        Some(m) => {
            let mut take = |ids: &[usize]| -> Result<Vec<Scenario>> {
                ids.iter()
                    .map(|id| by_id.remove(id).ok_or_else(|| schema(&dir.join(MANIFEST), 0, "train", format!("scenario {id} missing"))))
                    .collect()
            };
            Dataset { train: take(&m.train)?, test: take(&m.test)? }
        }
        None => Dataset { train: by_id.into_values().collect(), test: Vec::new() },
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| schema(path, e.line() as u64, "", e.to_string()))
}
