//! Key conditions: one key shared by every client, or one key per client.
//!
//! Seeds are derived from a master seed with SHA-256: the first eight bytes
//! (little endian) of `SHA-256(master_seed.to_le_bytes() || label)`. The
//! common key uses the label `"common"`, per-client keys use
//! `"client:" + client_id`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::transform::{expand_key, protect_with, KeyRegistry, OrthogonalMatrix, ProtectedTemplate, Template,
                       TransformError, TransformKey, TransformKind};

pub const KEYRING_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KeyringError {
    #[error("no key for client {0}")]
    MissingKey(String),
    #[error("client list is empty")]
    NoClients,
    #[error("keys disagree on dimension: {0} vs {1}")]
    MixedDimensions(usize, usize),
    #[error("clients {0} and {1} share a seed")]
    DuplicateSeed(String, String),
    #[error("keyring references unknown key id {0}")]
    UnknownKeyId(String),
    #[error("unsupported keyring schema version {0}")]
    SchemaVersionMismatch(u32),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("keyring JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    Common,
    PerClient,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KeyCondition {
    CommonKey(TransformKey),
    PerClientKeys(BTreeMap<String, TransformKey>),
}

/// Stable seed derivation from a master seed and a label.
pub fn derive_seed(master_seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn assign_keys<S: AsRef<str>>(
    client_ids: &[S],
    mode: KeyMode,
    master_seed: u64,
    kind: TransformKind,
    dim: usize,
) -> Result<KeyCondition, KeyringError> {
    if client_ids.is_empty() {
        return Err(KeyringError::NoClients);
    }
    if dim == 0 {
        return Err(TransformError::ZeroDimension.into());
    }
    match mode {
        KeyMode::Common => Ok(KeyCondition::CommonKey(TransformKey::new(
            "common",
            derive_seed(master_seed, "common"),
            kind,
            dim,
        ))),
        KeyMode::PerClient => {
            let unique: BTreeSet<&str> = client_ids.iter().map(AsRef::as_ref).collect();
            let mut used = HashMap::new();
            let mut keys = BTreeMap::new();
            for client in unique {
                let label = format!("client:{client}");
                let mut seed = derive_seed(master_seed, &label);
                // collisions are astronomically unlikely; re-derive if one occurs
                let mut bump = 0u32;
                while used.contains_key(&seed) {
                    bump += 1;
                    seed = derive_seed(master_seed, &format!("{label}#{bump}"));
                }
                used.insert(seed, client);
                keys.insert(client.to_string(), TransformKey::new(format!("k-{client}"), seed, kind, dim));
            }
            Ok(KeyCondition::PerClientKeys(keys))
        }
    }
}

impl KeyCondition {
    pub fn mode(&self) -> KeyMode {
        match self {
            KeyCondition::CommonKey(_) => KeyMode::Common,
            KeyCondition::PerClientKeys(_) => KeyMode::PerClient,
        }
    }

    pub fn key_for(&self, client_id: &str) -> Option<&TransformKey> {
        match self {
            KeyCondition::CommonKey(k) => Some(k),
            KeyCondition::PerClientKeys(m) => m.get(client_id),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            KeyCondition::CommonKey(k) => k.dim,
            KeyCondition::PerClientKeys(m) => m.values().next().map_or(0, |k| k.dim),
        }
    }

    /// Checks shared dimension and pairwise-distinct per-client seeds.
    pub fn validate(&self) -> Result<(), KeyringError> {
        let KeyCondition::PerClientKeys(m) = self else { return Ok(()) };
        let mut seeds: HashMap<u64, &str> = HashMap::new();
        let dim = self.dim();
        for (client, key) in m {
            if key.dim != dim {
                return Err(KeyringError::MixedDimensions(dim, key.dim));
            }
            if let Some(other) = seeds.insert(key.seed, client) {
                return Err(KeyringError::DuplicateSeed(other.to_string(), client.clone()));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> KeyringFile {
        let mut keys = KeyRegistry::default();
        let mut clients = BTreeMap::new();
        match self {
            KeyCondition::CommonKey(k) => keys.insert(k),
            KeyCondition::PerClientKeys(m) => {
                for (client, k) in m {
                    keys.insert(k);
                    clients.insert(client.clone(), k.key_id.clone());
                }
            }
        }
        KeyringFile { schema_version: KEYRING_SCHEMA_VERSION, mode: self.mode(), keys, clients }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("keyring serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, KeyringError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != KEYRING_SCHEMA_VERSION {
            return Err(KeyringError::SchemaVersionMismatch(version));
        }
        KeyringFile::deserialize(raw)?.into_condition()
    }
}

/// On-disk keyring: the key registry plus the client → key assignment.
///
/// ```json
/// {"schema_version": 1, "mode": "per_client",
///  "keys": {"k-alice": {"seed": 1, "kind": "permutation", "dim": 64}},
///  "clients": {"alice": "k-alice"}}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyringFile {
    pub schema_version: u32,
    pub mode: KeyMode,
    pub keys: KeyRegistry,
    #[serde(default)]
    pub clients: BTreeMap<String, String>,
}

impl KeyringFile {
    pub fn into_condition(self) -> Result<KeyCondition, KeyringError> {
        let kc = match self.mode {
            KeyMode::Common => {
                let key = self.keys.keys().next().ok_or(KeyringError::NoClients)?;
                KeyCondition::CommonKey(key)
            }
            KeyMode::PerClient => {
                let mut m = BTreeMap::new();
                for (client, key_id) in self.clients {
                    let key = self.keys.get(&key_id).ok_or(KeyringError::UnknownKeyId(key_id))?;
                    m.insert(client, key);
                }
                if m.is_empty() {
                    return Err(KeyringError::NoClients);
                }
                KeyCondition::PerClientKeys(m)
            }
        };
        kc.validate()?;
        Ok(kc)
    }
}

/// Protects every template with its client's key. Each distinct key is
/// expanded once.
pub fn protect_dataset(templates: &[Template], kc: &KeyCondition) -> Result<Vec<ProtectedTemplate>, KeyringError> {
    let mut expanded: HashMap<&str, OrthogonalMatrix> = HashMap::new();
    let mut out = Vec::with_capacity(templates.len());
    for t in templates {
        let key = kc.key_for(&t.client_id).ok_or_else(|| KeyringError::MissingKey(t.client_id.clone()))?;
        if t.dim() != key.dim {
            return Err(TransformError::DimensionMismatch { expected: key.dim, got: t.dim() }.into());
        }
        if !expanded.contains_key(key.key_id.as_str()) {
            expanded.insert(key.key_id.as_str(), expand_key(key)?);
        }
        out.push(protect_with(&expanded[key.key_id.as_str()], &key.key_id, t)?);
    }
    Ok(out)
}
