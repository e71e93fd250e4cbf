//! Key-seeded random orthogonal transforms and template protection.
//!
//! A [`TransformKey`] is the client secret. It expands deterministically into
//! an [`OrthogonalMatrix`] `Q`, and a template `f` is protected as `Q f`.
//!
//! Key expansion is portable: the generator is xoshiro256++ seeded through
//! SplitMix64 (`Xoshiro256PlusPlus::seed_from_u64`). Bounded integers use
//! Lemire's widening-multiply rejection method and standard normals use the
//! Box-Muller transform on 53-bit uniforms, both implemented here so that
//! no upstream sampling change can alter the matrix a key expands to.

use std::collections::BTreeMap;
use std::fmt;

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm below which a projected Gram-Schmidt column counts as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Re-draws attempted for a degenerate column before giving up.
pub const MAX_COLUMN_REDRAWS: usize = 8;
/// Dimension above which a second orthogonalization pass is applied.
pub const REORTHOGONALIZE_ABOVE: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("key dimension must be at least 1")]
    ZeroDimension,
    #[error("Gram-Schmidt column {column} stayed degenerate after {MAX_COLUMN_REDRAWS} re-draws")]
    DegenerateMatrix { column: usize },
    #[error("template {sample_id} of client {client_id} has a non-finite entry")]
    NonFinite { client_id: String, sample_id: String },
    #[error("empty key id")]
    EmptyKeyId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Permutation,
    GramSchmidt,
    /// Test-only kind; expands to the identity regardless of seed.
    Identity,
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Permutation => "permutation",
            TransformKind::GramSchmidt => "gram_schmidt",
            TransformKind::Identity => "identity",
        })
    }
}

/// A client secret `p_i`.
///
/// `Debug` redacts the seed so keys can be logged without leaking it.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransformKey {
    pub key_id: String,
    pub seed: u64,
    pub kind: TransformKind,
    pub dim: usize,
}

impl fmt::Debug for TransformKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransformKey")
            .field("key_id", &self.key_id)
            .field("seed", &"<redacted>")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .finish()
    }
}

impl TransformKey {
    pub fn new(key_id: impl Into<String>, seed: u64, kind: TransformKind, dim: usize) -> Self {
        Self { key_id: key_id.into(), seed, kind, dim }
    }

    pub fn identity(key_id: impl Into<String>, dim: usize) -> Self {
        Self::new(key_id, 0, TransformKind::Identity, dim)
    }

    pub fn spec(&self) -> KeySpec {
        KeySpec { seed: self.seed, kind: self.kind, dim: self.dim }
    }
}

/// The `{seed, kind, dim}` record stored in a key registry file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeySpec {
    pub seed: u64,
    pub kind: TransformKind,
    pub dim: usize,
}

/// Key registry: a JSON object mapping `key_id` to `{seed, kind, dim}`.
///
/// This is secret material and stays on the client side.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyRegistry(pub BTreeMap<String, KeySpec>);

impl KeyRegistry {
    pub fn insert(&mut self, key: &TransformKey) {
        self.0.insert(key.key_id.clone(), key.spec());
    }

    pub fn get(&self, key_id: &str) -> Option<TransformKey> {
        self.0
            .get(key_id)
            .map(|s| TransformKey::new(key_id, s.seed, s.kind, s.dim))
    }

    pub fn keys(&self) -> impl Iterator<Item = TransformKey> + '_ {
        self.0
            .iter()
            .map(|(id, s)| TransformKey::new(id.clone(), s.seed, s.kind, s.dim))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// An expanded key `Q_p`.
#[derive(Debug, Clone, PartialEq)]
pub enum OrthogonalMatrix {
    Identity { dim: usize },
    /// `(Q f)[i] = f[perm[i]]`, i.e. `Q[i][perm[i]] = 1`.
    Permutation { perm: Vec<usize> },
    /// Dense row-major `dim × dim` matrix.
    Dense { dim: usize, data: Vec<f64> },
}

impl OrthogonalMatrix {
    pub fn dim(&self) -> usize {
        match self {
            OrthogonalMatrix::Identity { dim } => *dim,
            OrthogonalMatrix::Permutation { perm } => perm.len(),
            OrthogonalMatrix::Dense { dim, .. } => *dim,
        }
    }

    /// `Q x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, TransformError> {
        let dim = self.dim();
        if x.len() != dim {
            return Err(TransformError::DimensionMismatch { expected: dim, got: x.len() });
        }
        Ok(match self {
            OrthogonalMatrix::Identity { .. } => x.to_vec(),
            OrthogonalMatrix::Permutation { perm } => perm.iter().map(|&p| x[p]).collect(),
            OrthogonalMatrix::Dense { data, .. } => data
                .chunks_exact(dim)
                .map(|row| row.iter().zip(x).map(|(q, v)| q * v).sum())
                .collect(),
        })
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let dim = self.dim();
        match self {
            OrthogonalMatrix::Dense { data, .. } => data.clone(),
            OrthogonalMatrix::Identity { .. } => {
                let mut m = vec![0.0; dim * dim];
                (0..dim).for_each(|i| m[i * dim + i] = 1.0);
                m
            }
            OrthogonalMatrix::Permutation { perm } => {
                let mut m = vec![0.0; dim * dim];
                perm.iter().enumerate().for_each(|(i, &p)| m[i * dim + p] = 1.0);
                m
            }
        }
    }
}

/// Deterministic sampling stream behind key expansion.
struct KeyStream {
    rng: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl KeyStream {
    fn new(seed: u64) -> Self {
        Self { rng: Xoshiro256PlusPlus::seed_from_u64(seed), spare_normal: None }
    }

    /// Uniform integer in `0..bound` (Lemire, unbiased).
    fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = (self.rng.next_u64() as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform in `(0, 1]`.
    fn open_unit(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        (bits + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.open_unit();
        let u2 = self.open_unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Expands a key into its orthogonal matrix. Pure in `(seed, kind, dim)`.
pub fn expand_key(key: &TransformKey) -> Result<OrthogonalMatrix, TransformError> {
    let dim = key.dim;
    if dim == 0 {
        return Err(TransformError::ZeroDimension);
    }
    match key.kind {
        TransformKind::Identity => Ok(OrthogonalMatrix::Identity { dim }),
        TransformKind::Permutation => {
            let mut stream = KeyStream::new(key.seed);
            let mut perm: Vec<usize> = (0..dim).collect();
            for i in (1..dim).rev() {
                let j = stream.below(i as u64 + 1) as usize;
                perm.swap(i, j);
            }
            Ok(OrthogonalMatrix::Permutation { perm })
        }
        TransformKind::GramSchmidt => {
            let mut stream = KeyStream::new(key.seed);
            let mut draw_column = || (0..dim).map(|_| stream.standard_normal()).collect::<Vec<_>>();
            let columns: Vec<Vec<f64>> = (0..dim).map(|_| draw_column()).collect();
            let q = orthonormalize_columns(columns, draw_column)?;
            let mut data = vec![0.0; dim * dim];
            for (j, col) in q.iter().enumerate() {
                for (i, v) in col.iter().enumerate() {
                    data[i * dim + j] = *v;
                }
            }
            Ok(OrthogonalMatrix::Dense { dim, data })
        }
    }
}

/// Modified Gram-Schmidt over `columns`, re-drawing a column through
/// `redraw` whenever its projected norm falls below [`DEGENERATE_NORM`].
pub(crate) fn orthonormalize_columns<F>(
    columns: Vec<Vec<f64>>,
    mut redraw: F,
) -> Result<Vec<Vec<f64>>, TransformError>
where
    F: FnMut() -> Vec<f64>,
{
    let dim = columns.len();
    let passes = if dim > REORTHOGONALIZE_ABOVE { 2 } else { 1 };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);

    for (j, mut v) in columns.into_iter().enumerate() {
        let mut attempts = 0;
        loop {
            for _ in 0..passes {
                for q in &basis {
                    let proj: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(q).for_each(|(x, qi)| *x -= proj * qi);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm >= DEGENERATE_NORM && norm.is_finite() {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
                break;
            }
            if attempts == MAX_COLUMN_REDRAWS {
                return Err(TransformError::DegenerateMatrix { column: j });
            }
            attempts += 1;
            v = redraw();
        }
    }
    Ok(basis)
}

/// A feature vector `f_{i,j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub client_id: String,
    pub sample_id: String,
    pub values: Vec<f64>,
}

impl Template {
    pub fn new(
        client_id: impl Into<String>,
        sample_id: impl Into<String>,
        values: Vec<f64>,
    ) -> Result<Self, TransformError> {
        let t = Self { client_id: client_id.into(), sample_id: sample_id.into(), values };
        t.check_finite()?;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    fn check_finite(&self) -> Result<(), TransformError> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TransformError::NonFinite {
                client_id: self.client_id.clone(),
                sample_id: self.sample_id.clone(),
            })
        }
    }
}

/// A protected template `Q_p f`, labelled with the id of the key used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedTemplate {
    pub client_id: String,
    pub sample_id: String,
    pub key_id: String,
    pub values: Vec<f64>,
}

impl ProtectedTemplate {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Protects one template with an already expanded matrix.
pub fn protect_with(
    q: &OrthogonalMatrix,
    key_id: &str,
    t: &Template,
) -> Result<ProtectedTemplate, TransformError> {
    if key_id.is_empty() {
        return Err(TransformError::EmptyKeyId);
    }
    t.check_finite()?;
    Ok(ProtectedTemplate {
        client_id: t.client_id.clone(),
        sample_id: t.sample_id.clone(),
        key_id: key_id.to_string(),
        values: q.apply(&t.values)?,
    })
}

pub fn protect(t: &Template, key: &TransformKey) -> Result<ProtectedTemplate, TransformError> {
    if t.dim() != key.dim {
        return Err(TransformError::DimensionMismatch { expected: key.dim, got: t.dim() });
    }
    protect_with(&expand_key(key)?, &key.key_id, t)
}

/// Element-wise [`protect`], expanding the key once. Order is preserved.
pub fn protect_batch(
    ts: &[Template],
    key: &TransformKey,
) -> Result<Vec<ProtectedTemplate>, TransformError> {
    if ts.is_empty() {
        return Ok(Vec::new());
    }
    let q = expand_key(key)?;
    ts.iter().map(|t| protect_with(&q, &key.key_id, t)).collect()
}
