//! On-disk persistence for templates, keyrings, models and reports.
//!
//! A template store is a directory holding `templates.csv` and
//! `manifest.json`. Plain stores use the header
//! `client_id,sample_id,d,v0,...`; protected stores insert a `key_id`
//! column after `sample_id`. Values are written with 17 significant digits.
//!
//! ```json
//! {"schema_version": 1, "dim": 64, "count": 200, "protected": true,
//!  "key_ids": ["common"], "features": {"block_h": 8, "block_w": 8, "normalized": true}}
//! ```
//!
//! Model files are JSON:
//!
//! ```json
//! {"schema_version": 1, "kernel": {"kind": "linear"}, "C": 1.0, "bias": 1.0,
//!  "support": [{"alpha": 0.5, "label": 1, "vector": [1.0]}], "trained_on_key": null}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalx::{fmt17, EvalReport};
use crate::features::BlockSpec;
use crate::kernels::KernelSpec;
use crate::keyring::{KeyCondition, KeyringError};
use crate::svm::SvmModel;
use crate::transform::{ProtectedTemplate, Template};

pub const STORE_SCHEMA_VERSION: u32 = 1;
pub const TEMPLATES_FILE: &str = "templates.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("unsupported schema version {found}, expected {expected}")]
    SchemaVersionMismatch { found: u64, expected: u32 },
    #[error(transparent)]
    Keyring(#[from] KeyringError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn json_err(e: serde_json::Error) -> StoreError {
    StoreError::Parse { line: e.line() as u64, message: e.to_string() }
}

fn read(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, text: &str) -> Result<(), StoreError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Parses a versioned JSON document, rejecting other schema versions.
fn parse_versioned<T: DeserializeOwned>(text: &str) -> Result<T, StoreError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(json_err)?;
    let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0);
    if found != u64::from(STORE_SCHEMA_VERSION) {
        return Err(StoreError::SchemaVersionMismatch { found, expected: STORE_SCHEMA_VERSION });
    }
    T::deserialize(raw).map_err(|e| StoreError::Parse { line: 1, message: e.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub block_h: usize,
    pub block_w: usize,
    pub normalized: bool,
}

impl FeatureMeta {
    pub fn new(spec: BlockSpec, normalized: bool) -> Self {
        Self { block_h: spec.block_h, block_w: spec.block_w, normalized }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub dim: usize,
    pub count: usize,
    pub protected: bool,
    pub key_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureMeta>,
}

/// A store is either entirely plain or entirely protected.
#[derive(Debug, Clone, PartialEq)]
pub enum TemplateSet {
    Plain(Vec<Template>),
    Protected(Vec<ProtectedTemplate>),
}

impl TemplateSet {
    pub fn len(&self) -> usize {
        match self {
            TemplateSet::Plain(v) => v.len(),
            TemplateSet::Protected(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_protected(&self) -> bool {
        matches!(self, TemplateSet::Protected(_))
    }

    pub fn dim(&self) -> usize {
        match self {
            TemplateSet::Plain(v) => v.first().map_or(0, |t| t.values.len()),
            TemplateSet::Protected(v) => v.first().map_or(0, |t| t.values.len()),
        }
    }

    pub fn key_ids(&self) -> Vec<String> {
        match self {
            TemplateSet::Plain(_) => Vec::new(),
            TemplateSet::Protected(v) => {
                v.iter().map(|t| t.key_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
            }
        }
    }

    pub fn into_plain(self) -> Option<Vec<Template>> {
        match self {
            TemplateSet::Plain(v) => Some(v),
            TemplateSet::Protected(_) => None,
        }
    }

    pub fn into_protected(self) -> Option<Vec<ProtectedTemplate>> {
        match self {
            TemplateSet::Protected(v) => Some(v),
            TemplateSet::Plain(_) => None,
        }
    }
}

fn csv_err(e: csv::Error) -> StoreError {
    let line = e.position().map_or(0, |p| p.line());
    StoreError::Parse { line, message: e.to_string() }
}

fn rows_csv<'a>(
    protected: bool,
    dim: usize,
    rows: impl Iterator<Item = (&'a str, &'a str, Option<&'a str>, &'a [f64])>,
) -> Result<Vec<u8>, StoreError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["client_id".to_string(), "sample_id".to_string()];
    if protected {
        header.push("key_id".into());
    }
    header.push("d".into());
    header.extend((0..dim).map(|k| format!("v{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for (client, sample, key, values) in rows {
        let mut rec = vec![client.to_string(), sample.to_string()];
        rec.extend(key.map(str::to_string));
        rec.push(values.len().to_string());
        rec.extend(values.iter().map(|&v| fmt17(v)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| StoreError::Parse { line: 0, message: e.to_string() })
}

/// Writes a template store into `dir`, creating it if needed.
pub fn save_templates(dir: &Path, set: &TemplateSet, features: Option<FeatureMeta>) -> Result<Manifest, StoreError> {
    let dim = set.dim();
    let check = |d: usize| {
        if d == dim {
            Ok(())
        } else {
            Err(StoreError::ManifestMismatch(format!("mixed dimensions {dim} and {d}")))
        }
    };
    let bytes = match set {
        TemplateSet::Plain(v) => {
            v.iter().try_for_each(|t| check(t.values.len()))?;
            rows_csv(false, dim, v.iter().map(|t| (t.client_id.as_str(), t.sample_id.as_str(), None, &t.values[..])))?
        }
        TemplateSet::Protected(v) => {
            v.iter().try_for_each(|t| check(t.values.len()))?;
            rows_csv(
                true,
                dim,
                v.iter().map(|t| (t.client_id.as_str(), t.sample_id.as_str(), Some(t.key_id.as_str()), &t.values[..])),
            )?
        }
    };
    let manifest = Manifest {
        schema_version: STORE_SCHEMA_VERSION,
        dim,
        count: set.len(),
        protected: set.is_protected(),
        key_ids: set.key_ids(),
        features,
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join(TEMPLATES_FILE);
    fs::write(&csv_path, bytes).map_err(io_err(&csv_path))?;
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&dir.join(MANIFEST_FILE), &manifest_text)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, StoreError> {
    parse_versioned(&read(&dir.join(MANIFEST_FILE))?)
}

/// Reads and validates a template store.
pub fn load_templates(dir: &Path) -> Result<TemplateSet, StoreError> {
    let manifest = load_manifest(dir)?;
    let csv_path = dir.join(TEMPLATES_FILE);
    let text = read(&csv_path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());

    let header = r.headers().map_err(csv_err)?.clone();
    let protected = header.get(2) == Some("key_id");
    if protected != manifest.protected {
        return Err(StoreError::ManifestMismatch(format!(
            "manifest says protected={}, file header says protected={protected}",
            manifest.protected
        )));
    }
    let lead = if protected { 4 } else { 3 };
    if header.len() != lead + manifest.dim {
        return Err(StoreError::ManifestMismatch(format!(
            "header has {} value columns, manifest dim is {}",
            header.len().saturating_sub(lead),
            manifest.dim
        )));
    }

    let mut plain = Vec::new();
    let mut prot = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| StoreError::Parse { line, message };
        if rec.len() < lead {
            return Err(bad(format!("expected at least {lead} fields, found {}", rec.len())));
        }
        let d: usize = rec[lead - 1].parse().map_err(|_| bad(format!("bad dimension {:?}", &rec[lead - 1])))?;
        if rec.len() != lead + d {
            return Err(bad(format!("declared d={d} but found {} values", rec.len() - lead)));
        }
        if d != manifest.dim {
            return Err(StoreError::ManifestMismatch(format!("line {line} has d={d}, manifest dim is {}", manifest.dim)));
        }
        let values = rec
            .iter()
            .skip(lead)
            .map(|s| match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(bad(format!("bad value {s:?}"))),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let (client_id, sample_id) = (rec[0].to_string(), rec[1].to_string());
        if protected {
            prot.push(ProtectedTemplate { client_id, sample_id, key_id: rec[2].to_string(), values });
        } else {
            plain.push(Template { client_id, sample_id, values });
        }
    }

    let set = if protected { TemplateSet::Protected(prot) } else { TemplateSet::Plain(plain) };
    if set.len() != manifest.count {
        return Err(StoreError::ManifestMismatch(format!(
            "manifest count {} but file has {} rows",
            manifest.count,
            set.len()
        )));
    }
    let mut expected_keys = manifest.key_ids.clone();
    expected_keys.sort();
    expected_keys.dedup();
    if set.key_ids() != expected_keys {
        return Err(StoreError::ManifestMismatch(format!(
            "manifest key ids {:?} but file has {:?}",
            manifest.key_ids,
            set.key_ids()
        )));
    }
    Ok(set)
}

pub fn save_keyring(path: &Path, kc: &KeyCondition) -> Result<(), StoreError> {
    write(path, &kc.to_json())
}

pub fn load_keyring(path: &Path) -> Result<KeyCondition, StoreError> {
    Ok(KeyCondition::from_json(&read(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportEntry {
    pub alpha: f64,
    pub label: i8,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub kernel: KernelSpec,
    #[serde(rename = "C")]
    pub c_param: f64,
    pub bias: f64,
    pub support: Vec<SupportEntry>,
    pub trained_on_key: Option<String>,
}

impl From<&SvmModel> for ModelFile {
    fn from(m: &SvmModel) -> Self {
        ModelFile {
            schema_version: STORE_SCHEMA_VERSION,
            kernel: m.kernel,
            c_param: m.c_param,
            bias: m.bias,
            support: m
                .support_vectors
                .iter()
                .zip(&m.alphas)
                .zip(&m.labels)
                .map(|((v, &alpha), &label)| SupportEntry { alpha, label, vector: v.clone() })
                .collect(),
            trained_on_key: m.trained_on_key.clone(),
        }
    }
}

impl From<ModelFile> for SvmModel {
    fn from(f: ModelFile) -> Self {
        let mut m = SvmModel {
            kernel: f.kernel,
            support_vectors: Vec::with_capacity(f.support.len()),
            alphas: Vec::with_capacity(f.support.len()),
            labels: Vec::with_capacity(f.support.len()),
            bias: f.bias,
            c_param: f.c_param,
            trained_on_key: f.trained_on_key,
        };
        for s in f.support {
            m.support_vectors.push(s.vector);
            m.alphas.push(s.alpha);
            m.labels.push(s.label);
        }
        m
    }
}

pub fn model_to_json(m: &SvmModel) -> String {
    serde_json::to_string_pretty(&ModelFile::from(m)).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<SvmModel, StoreError> {
    let file: ModelFile = parse_versioned(text)?;
    Ok(file.into())
}

pub fn save_model(path: &Path, m: &SvmModel) -> Result<(), StoreError> {
    write(path, &model_to_json(m))
}

pub fn load_model(path: &Path) -> Result<SvmModel, StoreError> {
    model_from_json(&read(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSetFile {
    schema_version: u32,
    models: BTreeMap<String, ModelFile>,
}

/// One-vs-rest models keyed by client id, in a single JSON file.
pub fn save_models(path: &Path, models: &BTreeMap<String, SvmModel>) -> Result<(), StoreError> {
    let file = ModelSetFile {
        schema_version: STORE_SCHEMA_VERSION,
        models: models.iter().map(|(c, m)| (c.clone(), ModelFile::from(m))).collect(),
    };
    write(path, &serde_json::to_string_pretty(&file).expect("models serialize"))
}

pub fn load_models(path: &Path) -> Result<BTreeMap<String, SvmModel>, StoreError> {
    let file: ModelSetFile = parse_versioned(&read(path)?)?;
    if let Some(m) = file.models.values().find(|m| m.schema_version != STORE_SCHEMA_VERSION) {
        return Err(StoreError::SchemaVersionMismatch {
            found: u64::from(m.schema_version),
            expected: STORE_SCHEMA_VERSION,
        });
    }
    Ok(file.models.into_iter().map(|(c, m)| (c, m.into())).collect())
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    schema_version: u32,
    #[serde(flatten)]
    report: EvalReport,
}

pub fn report_to_json(r: &EvalReport) -> String {
    serde_json::to_string_pretty(&ReportFile { schema_version: STORE_SCHEMA_VERSION, report: r.clone() })
        .expect("report serializes")
}

pub fn report_from_json(text: &str) -> Result<EvalReport, StoreError> {
    let file: ReportFile = parse_versioned(text)?;
    Ok(file.report)
}

/// Writes the report as JSON to `json_path` and its curve as CSV to `csv_path`.
pub fn save_report(json_path: &Path, csv_path: &Path, r: &EvalReport) -> Result<(), StoreError> {
    write(json_path, &report_to_json(r))?;
    write(csv_path, &r.curve_csv())
}

pub fn load_report(path: &Path) -> Result<EvalReport, StoreError> {
    report_from_json(&read(path)?)
}
