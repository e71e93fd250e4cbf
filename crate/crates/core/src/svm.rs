//! Binary C-SVM trained by sequential minimal optimization, plus
//! one-vs-rest training over enrolled clients.
//!
//! The solver works on the dual in minimization form
//! `f(α) = ½ αᵀQα − eᵀα` with `Q_kl = y_k y_l K(x_k, x_l)`, subject to
//! `yᵀα = 0` and `0 ≤ α ≤ C`, and keeps the gradient `G = Qα − e` up to date.
//! Each step picks the maximal violating pair: `i` maximizes `−y_i G_i` over
//! the indices allowed to move up, `j` minimizes `−y_j G_j` over those
//! allowed to move down (equivalently, maximizes `|E_i − E_j|`). It stops
//! once the gap `m − M` is within `kkt_tol`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{gram, GramMatrix, KernelError, KernelSpec};
use crate::transform::{ProtectedTemplate, Template};

/// Above this many training vectors the Gram matrix is not precomputed.
pub const DENSE_GRAM_LIMIT: usize = 4096;

/// Curvature floor for non-positive-definite pairs.
const TAU: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("training data is empty")]
    EmptyData,
    #[error("labels must be +1 or -1, got {0}")]
    InvalidLabel(i8),
    #[error("{vectors} vectors but {labels} labels")]
    LengthMismatch { vectors: usize, labels: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("solver stopped after {iterations} iterations with KKT gap {gap:.3e}")]
    NoConvergence { model: Box<SvmModel>, iterations: usize, gap: f64 },
    #[error("one-vs-rest training needs at least two clients, found {0}")]
    NotEnoughClients(usize),
    #[error("client {client_id}: {source}")]
    Client {
        client_id: String,
        #[source]
        source: Box<SvmError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub c_param: f64,
    pub kkt_tol: f64,
    /// Fallback sweeps allowed without progress before giving up.
    pub max_passes: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { c_param: 1.0, kkt_tol: 1e-3, max_passes: 10, max_iters: 1_000_000, seed: 0 }
    }
}

impl SolverConfig {
    pub fn with_c(c_param: f64) -> Self {
        Self { c_param, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SvmError> {
        if !(self.c_param.is_finite() && self.c_param > 0.0) {
            return Err(SvmError::InvalidConfig(format!("C must be positive, got {}", self.c_param)));
        }
        if !(self.kkt_tol.is_finite() && self.kkt_tol > 0.0) {
            return Err(SvmError::InvalidConfig(format!("kkt_tol must be positive, got {}", self.kkt_tol)));
        }
        if self.max_iters == 0 || self.max_passes == 0 {
            return Err(SvmError::InvalidConfig("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

/// Training vectors with ±1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<i8>,
    /// `(client_id, sample_id)` per vector; may be empty.
    pub ids: Vec<(String, String)>,
}

impl LabeledSet {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<i8>) -> Result<Self, SvmError> {
        let set = Self { vectors, labels, ids: Vec::new() };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn validate(&self) -> Result<(), SvmError> {
        if self.vectors.len() != self.labels.len() {
            return Err(SvmError::LengthMismatch { vectors: self.vectors.len(), labels: self.labels.len() });
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l != 1 && l != -1) {
            return Err(SvmError::InvalidLabel(bad));
        }
        validate_vectors(&self.vectors)
    }
}

fn validate_vectors<V: AsRef<[f64]>>(vectors: &[V]) -> Result<(), SvmError> {
    let Some(first) = vectors.first() else { return Err(SvmError::EmptyData) };
    let d = first.as_ref().len();
    for v in vectors {
        let v = v.as_ref();
        if v.len() != d {
            return Err(SvmError::DimensionMismatch { expected: d, got: v.len() });
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(SvmError::NonFinite);
        }
    }
    Ok(())
}

/// A trained binary classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub labels: Vec<i8>,
    pub bias: f64,
    pub c_param: f64,
    pub trained_on_key: Option<String>,
}

impl SvmModel {
    pub fn dim(&self) -> Option<usize> {
        self.support_vectors.first().map(Vec::len)
    }
}

/// Full solver output, including the zero multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alphas: Vec<f64>,
    pub bias: f64,
    /// `Σα − ½ΣΣ α_k α_l y_k y_l K_kl` at the returned point.
    pub objective: f64,
    pub iterations: usize,
    /// Final maximal-violation gap `m − M`.
    pub gap: f64,
    pub converged: bool,
}

enum KernelSource<'a, V> {
    Dense(&'a GramMatrix),
    OnTheFly { spec: KernelSpec, vectors: &'a [V] },
}

impl<V: AsRef<[f64]>> KernelSource<'_, V> {
    fn diag(&self, k: usize) -> f64 {
        match self {
            KernelSource::Dense(g) => g.get(k, k),
            KernelSource::OnTheFly { spec, vectors } => spec.eval_unchecked(vectors[k].as_ref(), vectors[k].as_ref()),
        }
    }

    fn row<'b>(&'b self, k: usize, buf: &'b mut Vec<f64>) -> &'b [f64] {
        match self {
            KernelSource::Dense(g) => g.row(k),
            KernelSource::OnTheFly { spec, vectors } => {
                buf.clear();
                let xk = vectors[k].as_ref();
                buf.extend(vectors.iter().map(|v| spec.eval_unchecked(xk, v.as_ref())));
                buf
            }
        }
    }
}

struct Smo<'a, V> {
    kernel: KernelSource<'a, V>,
    y: Vec<f64>,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    c: f64,
    row_i: Vec<f64>,
    row_j: Vec<f64>,
}

impl<V: AsRef<[f64]>> Smo<'_, V> {
    fn can_move_up(&self, k: usize) -> bool {
        if self.y[k] > 0.0 { self.alpha[k] < self.c } else { self.alpha[k] > 0.0 }
    }

    fn can_move_down(&self, k: usize) -> bool {
        if self.y[k] > 0.0 { self.alpha[k] > 0.0 } else { self.alpha[k] < self.c }
    }

    fn violation(&self, k: usize) -> f64 {
        -self.y[k] * self.grad[k]
    }

    /// `(i, m, j, M)` for the maximal violating pair.
    fn select(&self) -> Option<(usize, f64, usize, f64)> {
        let mut up: Option<(usize, f64)> = None;
        let mut low: Option<(usize, f64)> = None;
        for k in 0..self.y.len() {
            let v = self.violation(k);
            if self.can_move_up(k) && up.is_none_or(|(_, best)| v > best) {
                up = Some((k, v));
            }
            if self.can_move_down(k) && low.is_none_or(|(_, best)| v < best) {
                low = Some((k, v));
            }
        }
        match (up, low) {
            (Some((i, m)), Some((j, big_m))) => Some((i, m, j, big_m)),
            _ => None,
        }
    }

    /// Analytic two-variable update with clipping; returns whether α moved.
    fn update_pair(&mut self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let c = self.c;
        let (yi, yj) = (self.y[i], self.y[j]);
        let k_ii = self.kernel.diag(i);
        let k_jj = self.kernel.diag(j);
        let k_ij = self.kernel.row(i, &mut self.row_i)[j];
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        let mut quad = k_ii + k_jj - 2.0 * k_ij;
        if quad <= 0.0 {
            quad = TAU;
        }

        if yi != yj {
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else {
                if ai < 0.0 {
                    ai = 0.0;
                    aj = -diff;
                }
                if aj > c {
                    aj = c;
                    ai = c + diff;
                }
            }
        } else {
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = sum;
                }
                if ai < 0.0 {
                    ai = 0.0;
                    aj = sum;
                }
            }
        }
        ai = ai.clamp(0.0, c);
        aj = aj.clamp(0.0, c);

        let d_i = ai - old_i;
        let d_j = aj - old_j;
        if d_i == 0.0 && d_j == 0.0 {
            return false;
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;

        let row_i = self.kernel.row(i, &mut self.row_i);
        let row_j = self.kernel.row(j, &mut self.row_j);
        for k in 0..self.grad.len() {
            self.grad[k] += self.y[k] * (yi * row_i[k] * d_i + yj * row_j[k] * d_j);
        }
        true
    }

    fn bias(&self) -> f64 {
        let free: Vec<f64> = (0..self.y.len())
            .filter(|&k| self.alpha[k] > 0.0 && self.alpha[k] < self.c)
            .map(|k| self.violation(k))
            .collect();
        if !free.is_empty() {
            return free.iter().sum::<f64>() / free.len() as f64;
        }
        match self.select() {
            Some((_, m, _, big_m)) => 0.5 * (m + big_m),
            None => 0.0,
        }
    }

    fn objective(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.grad)
            .map(|(a, g)| a - 0.5 * a * (g + 1.0))
            .sum()
    }

    fn run(mut self, cfg: &SolverConfig) -> DualSolution {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..self.y.len()).collect();
        let mut iterations = 0;
        let mut stalled = 0;
        let (converged, gap) = loop {
            let Some((i, m, j, big_m)) = self.select() else { break (true, 0.0) };
            let gap = m - big_m;
            if gap <= cfg.kkt_tol {
                break (true, gap);
            }
            if iterations >= cfg.max_iters {
                break (false, gap);
            }
            iterations += 1;
            if self.update_pair(i, j) {
                stalled = 0;
                continue;
            }
            // fallback: seeded sweep over other violating partners of i
            order.shuffle(&mut rng);
            let mut moved = false;
            for idx in 0..order.len() {
                let k = order[idx];
                if k != i && self.can_move_down(k) && self.violation(k) < m - cfg.kkt_tol && self.update_pair(i, k) {
                    moved = true;
                    break;
                }
            }
            if !moved {
                stalled += 1;
                if stalled >= cfg.max_passes {
                    break (false, gap);
                }
            }
        };
        DualSolution {
            bias: self.bias(),
            objective: self.objective(),
            alphas: self.alpha,
            iterations,
            gap,
            converged,
        }
    }
}

fn check_labels(labels: &[i8]) -> Result<(), SvmError> {
    if let Some(&bad) = labels.iter().find(|&&l| l != 1 && l != -1) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if !(labels.contains(&1) && labels.contains(&-1)) {
        return Err(SvmError::SingleClassData);
    }
    Ok(())
}

fn solve_with<V: AsRef<[f64]>>(
    kernel: KernelSource<'_, V>,
    labels: &[i8],
    cfg: &SolverConfig,
) -> DualSolution {
    let n = labels.len();
    Smo {
        kernel,
        y: labels.iter().map(|&l| l as f64).collect(),
        alpha: vec![0.0; n],
        grad: vec![-1.0; n],
        c: cfg.c_param,
        row_i: Vec::new(),
        row_j: Vec::new(),
    }
    .run(cfg)
}

fn solve_vectors<V: AsRef<[f64]> + Sync>(
    vectors: &[V],
    labels: &[i8],
    kernel: &KernelSpec,
    cfg: &SolverConfig,
    gram_cache: Option<&GramMatrix>,
) -> Result<DualSolution, SvmError> {
    if let Some(g) = gram_cache {
        return Ok(solve_with::<V>(KernelSource::Dense(g), labels, cfg));
    }
    if vectors.len() <= DENSE_GRAM_LIMIT {
        let g = gram(kernel, vectors)?;
        Ok(solve_with::<V>(KernelSource::Dense(&g), labels, cfg))
    } else {
        Ok(solve_with(KernelSource::OnTheFly { spec: *kernel, vectors }, labels, cfg))
    }
}

/// Solves the dual and returns every multiplier.
pub fn solve_dual(data: &LabeledSet, kernel: &KernelSpec, cfg: &SolverConfig) -> Result<DualSolution, SvmError> {
    data.validate()?;
    cfg.validate()?;
    kernel.validate()?;
    check_labels(&data.labels)?;
    solve_vectors(&data.vectors, &data.labels, kernel, cfg, None)
}

fn build_model<V: AsRef<[f64]>>(
    vectors: &[V],
    labels: &[i8],
    solution: &DualSolution,
    kernel: &KernelSpec,
    cfg: &SolverConfig,
    trained_on_key: Option<String>,
) -> SvmModel {
    let mut model = SvmModel {
        kernel: *kernel,
        support_vectors: Vec::new(),
        alphas: Vec::new(),
        labels: Vec::new(),
        bias: solution.bias,
        c_param: cfg.c_param,
        trained_on_key,
    };
    for (k, &a) in solution.alphas.iter().enumerate() {
        if a > 0.0 {
            model.support_vectors.push(vectors[k].as_ref().to_vec());
            model.alphas.push(a);
            model.labels.push(labels[k]);
        }
    }
    model
}

fn finish(model: SvmModel, solution: &DualSolution) -> Result<SvmModel, SvmError> {
    if solution.converged {
        Ok(model)
    } else {
        Err(SvmError::NoConvergence { model: Box::new(model), iterations: solution.iterations, gap: solution.gap })
    }
}

/// Trains a binary classifier. On hitting the iteration cap the partially
/// optimized model is returned inside [`SvmError::NoConvergence`].
pub fn train_binary(data: &LabeledSet, kernel: &KernelSpec, cfg: &SolverConfig) -> Result<SvmModel, SvmError> {
    let solution = solve_dual(data, kernel, cfg)?;
    let model = build_model(&data.vectors, &data.labels, &solution, kernel, cfg, None);
    finish(model, &solution)
}

/// `Σ α_k y_k K(sv_k, x) + b`.
pub fn decision_score(model: &SvmModel, x: &[f64]) -> Result<f64, SvmError> {
    if let Some(d) = model.dim() {
        if x.len() != d {
            return Err(SvmError::DimensionMismatch { expected: d, got: x.len() });
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(SvmError::NonFinite);
    }
    let sum: f64 = model
        .support_vectors
        .iter()
        .zip(&model.alphas)
        .zip(&model.labels)
        .map(|((sv, a), &y)| a * y as f64 * model.kernel.eval_unchecked(sv, x))
        .sum();
    Ok(sum + model.bias)
}

/// `+1` iff the score is strictly positive.
pub fn classify(model: &SvmModel, x: &[f64]) -> Result<i8, SvmError> {
    Ok(sign_of_score(decision_score(model, x)?))
}

pub fn sign_of_score(score: f64) -> i8 {
    if score > 0.0 { 1 } else { -1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Accepts iff `score ≥ tau`.
pub fn decide(score: f64, tau: f64) -> Decision {
    if score >= tau { Decision::Accept } else { Decision::Reject }
}

pub fn authenticate(model: &SvmModel, query: &[f64], tau: f64) -> Result<(Decision, f64), SvmError> {
    let score = decision_score(model, query)?;
    Ok((decide(score, tau), score))
}

/// Anything that can be enrolled: a plain or a protected template.
pub trait Enrolled {
    fn client_id(&self) -> &str;
    fn sample_id(&self) -> &str;
    fn values(&self) -> &[f64];
    fn key_id(&self) -> Option<&str>;
}

impl Enrolled for Template {
    fn client_id(&self) -> &str {
        &self.client_id
    }
    fn sample_id(&self) -> &str {
        &self.sample_id
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn key_id(&self) -> Option<&str> {
        None
    }
}

impl Enrolled for ProtectedTemplate {
    fn client_id(&self) -> &str {
        &self.client_id
    }
    fn sample_id(&self) -> &str {
        &self.sample_id
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn key_id(&self) -> Option<&str> {
        Some(&self.key_id)
    }
}

struct Enrollment<'a> {
    clients: Vec<&'a str>,
    client_of: Vec<&'a str>,
    keys: Vec<Option<&'a str>>,
    vectors: Vec<&'a [f64]>,
    cache: Option<GramMatrix>,
}

impl<'a> Enrollment<'a> {
    /// Orders templates by `(client_id, sample_id)` so that neither input
    /// order nor client order affects any model.
    fn new<T: Enrolled>(templates: &'a [T], kernel: &KernelSpec, cfg: &SolverConfig) -> Result<Self, SvmError> {
        cfg.validate()?;
        kernel.validate()?;
        let mut sorted: Vec<&T> = templates.iter().collect();
        sorted.sort_by(|a, b| (a.client_id(), a.sample_id()).cmp(&(b.client_id(), b.sample_id())));
        let client_of: Vec<&str> = sorted.iter().map(|t| t.client_id()).collect();
        let mut clients = client_of.clone();
        clients.dedup();
        if clients.len() < 2 {
            return Err(SvmError::NotEnoughClients(clients.len()));
        }
        let vectors: Vec<&[f64]> = sorted.iter().map(|t| t.values()).collect();
        validate_vectors(&vectors)?;
        let cache = if vectors.len() <= DENSE_GRAM_LIMIT { Some(gram(kernel, &vectors)?) } else { None };
        let keys = sorted.iter().map(|t| t.key_id()).collect();
        Ok(Self { clients, client_of, keys, vectors, cache })
    }

    fn train(&self, client: &str, kernel: &KernelSpec, cfg: &SolverConfig) -> Result<SvmModel, SvmError> {
        let labels: Vec<i8> = self.client_of.iter().map(|&c| if c == client { 1 } else { -1 }).collect();
        check_labels(&labels)?;
        let mut keys = self.client_of.iter().zip(&self.keys).filter(|(c, _)| **c == client).map(|(_, k)| *k);
        let first = keys.next().flatten();
        let key = if keys.all(|k| k == first) { first.map(str::to_string) } else { None };
        let solution = solve_vectors(&self.vectors, &labels, kernel, cfg, self.cache.as_ref())?;
        let model = build_model(&self.vectors, &labels, &solution, kernel, cfg, key);
        finish(model, &solution)
    }
}

/// One model per client: that client's templates labelled `+1`, all others
/// `−1`. The Gram matrix is shared across clients.
pub fn train_one_vs_rest<T: Enrolled + Sync>(
    templates: &[T],
    kernel: &KernelSpec,
    cfg: &SolverConfig,
) -> Result<BTreeMap<String, SvmModel>, SvmError> {
    let enrollment = Enrollment::new(templates, kernel, cfg)?;
    enrollment
        .clients
        .par_iter()
        .map(|&client| {
            enrollment
                .train(client, kernel, cfg)
                .map(|m| (client.to_string(), m))
                .map_err(|e| SvmError::Client { client_id: client.to_string(), source: Box::new(e) })
        })
        .collect()
}

/// The model [`train_one_vs_rest`] would produce for `client_id` alone.
pub fn train_client<T: Enrolled>(
    templates: &[T],
    client_id: &str,
    kernel: &KernelSpec,
    cfg: &SolverConfig,
) -> Result<SvmModel, SvmError> {
    Enrollment::new(templates, kernel, cfg)?
        .train(client_id, kernel, cfg)
        .map_err(|e| SvmError::Client { client_id: client_id.to_string(), source: Box::new(e) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> SvmModel {
        let data = LabeledSet::new(vec![vec![0.0], vec![2.0]], vec![1, -1]).unwrap();
        train_binary(&data, &KernelSpec::Linear, &SolverConfig::with_c(10.0)).unwrap()
    }

    #[test]
    fn two_point_analytic() {
        let m = two_point();
        for a in &m.alphas {
            assert!((a - 0.5).abs() < 1e-12);
        }
        assert!((m.bias - 1.0).abs() < 1e-12);
        assert!(decision_score(&m, &[1.0]).unwrap().abs() < 1e-9);
        assert!((decision_score(&m, &[0.0]).unwrap() - 1.0).abs() < 1e-9);
        assert!((decision_score(&m, &[2.0]).unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn xor_with_rbf() {
        let data = LabeledSet::new(
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![1, 1, -1, -1],
        )
        .unwrap();
        let m = train_binary(&data, &KernelSpec::Rbf { gamma: 2.0 }, &SolverConfig::with_c(10.0)).unwrap();
        for (x, &y) in data.vectors.iter().zip(&data.labels) {
            assert_eq!(classify(&m, x).unwrap(), y);
        }
    }

    #[test]
    fn single_class_rejected() {
        let data = LabeledSet::new(vec![vec![0.0], vec![1.0]], vec![1, 1]).unwrap();
        assert!(matches!(
            train_binary(&data, &KernelSpec::Linear, &SolverConfig::default()),
            Err(SvmError::SingleClassData)
        ));
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(LabeledSet::new(vec![vec![0.0]], vec![2]), Err(SvmError::InvalidLabel(2))));
        assert!(matches!(LabeledSet::new(vec![vec![0.0]], vec![]), Err(SvmError::LengthMismatch { .. })));
        assert!(matches!(
            LabeledSet::new(vec![vec![0.0], vec![0.0, 1.0]], vec![1, -1]),
            Err(SvmError::DimensionMismatch { .. })
        ));
        assert!(matches!(LabeledSet::new(vec![], vec![]), Err(SvmError::EmptyData)));
        let data = LabeledSet::new(vec![vec![0.0], vec![2.0]], vec![1, -1]).unwrap();
        assert!(matches!(
            train_binary(&data, &KernelSpec::Linear, &SolverConfig::with_c(-1.0)),
            Err(SvmError::InvalidConfig(_))
        ));
    }

    #[test]
    fn iteration_cap_returns_flagged_model() {
        let data = LabeledSet::new(
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![1, 1, -1, -1],
        )
        .unwrap();
        let cfg = SolverConfig { max_iters: 1, c_param: 10.0, ..SolverConfig::default() };
        match train_binary(&data, &KernelSpec::Rbf { gamma: 2.0 }, &cfg) {
            Err(SvmError::NoConvergence { model, iterations, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(model.alphas.len(), 2);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_model_scores_bias() {
        let m = SvmModel {
            kernel: KernelSpec::Linear,
            support_vectors: vec![],
            alphas: vec![],
            labels: vec![],
            bias: -0.25,
            c_param: 1.0,
            trained_on_key: None,
        };
        assert_eq!(decision_score(&m, &[3.0, 4.0]).unwrap(), -0.25);
    }

    #[test]
    fn bias_shift_shifts_scores() {
        let mut m = two_point();
        let before = decision_score(&m, &[0.3]).unwrap();
        m.bias += 0.75;
        assert!((decision_score(&m, &[0.3]).unwrap() - before - 0.75).abs() < 1e-12);
    }

    #[test]
    fn sign_and_threshold_conventions() {
        assert_eq!(sign_of_score(0.7), 1);
        assert_eq!(sign_of_score(-0.7), -1);
        assert_eq!(sign_of_score(0.0), -1);
        assert_eq!(decide(0.4, 0.4), Decision::Accept);
        assert_eq!(decide(0.4, 0.5), Decision::Reject);
        assert_eq!(decide(-1e300, f64::MIN), Decision::Accept);
        assert_eq!(decide(-1e300, f64::NEG_INFINITY), Decision::Accept);
    }

    #[test]
    fn dimension_checked_at_scoring() {
        let m = two_point();
        assert!(matches!(decision_score(&m, &[1.0, 2.0]), Err(SvmError::DimensionMismatch { .. })));
        assert!(matches!(authenticate(&m, &[1.0, 2.0], 0.0), Err(SvmError::DimensionMismatch { .. })));
    }

    fn t(client: &str, sample: &str, values: Vec<f64>) -> Template {
        Template::new(client, sample, values).unwrap()
    }

    #[test]
    fn one_vs_rest_shapes() {
        let ts = vec![t("a", "1", vec![1.0, 0.0]), t("b", "1", vec![-1.0, 0.0])];
        let models = train_one_vs_rest(&ts, &KernelSpec::Linear, &SolverConfig::default()).unwrap();
        assert_eq!(models.len(), 2);
        assert!(decision_score(&models["a"], &[1.0, 0.0]).unwrap() > 0.0);
        assert!(decision_score(&models["b"], &[-1.0, 0.0]).unwrap() > 0.0);

        let one = vec![t("a", "1", vec![1.0]), t("a", "2", vec![2.0])];
        assert!(matches!(
            train_one_vs_rest(&one, &KernelSpec::Linear, &SolverConfig::default()),
            Err(SvmError::NotEnoughClients(1))
        ));

        let three = vec![t("x", "1", vec![0.0, 1.0]), t("y", "1", vec![1.0, 0.0]), t("z", "1", vec![1.0, 1.0])];
        let models = train_one_vs_rest(&three, &KernelSpec::Rbf { gamma: 1.0 }, &SolverConfig::default()).unwrap();
        assert_eq!(models.keys().cloned().collect::<Vec<_>>(), vec!["x", "y", "z"]);
        let y = train_client(&three, "y", &KernelSpec::Rbf { gamma: 1.0 }, &SolverConfig::default()).unwrap();
        assert_eq!(y, models["y"]);
    }

    #[test]
    fn one_vs_rest_ignores_input_order() {
        let mut ts: Vec<Template> = (0..12)
            .map(|k| {
                let c = ["p", "q", "r"][k % 3];
                t(c, &format!("{k:02}"), vec![(k as f64 * 0.37).sin(), (k as f64 * 1.3).cos(), (k % 3) as f64])
            })
            .collect();
        let kernel = KernelSpec::Rbf { gamma: 0.8 };
        let a = train_one_vs_rest(&ts, &kernel, &SolverConfig::default()).unwrap();
        ts.reverse();
        let b = train_one_vs_rest(&ts, &kernel, &SolverConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn on_the_fly_matches_dense() {
        let vectors: Vec<Vec<f64>> = (0..20).map(|k| vec![(k as f64).sin(), (k as f64 * 0.7).cos()]).collect();
        let labels: Vec<i8> = (0..20).map(|k| if k % 2 == 0 { 1 } else { -1 }).collect();
        let kernel = KernelSpec::Rbf { gamma: 1.5 };
        let cfg = SolverConfig::with_c(3.0);
        let dense = solve_vectors(&vectors, &labels, &kernel, &cfg, None).unwrap();
        let lazy = solve_with(KernelSource::OnTheFly { spec: kernel, vectors: &vectors }, &labels, &cfg);
        assert_eq!(dense, lazy);
    }
}
