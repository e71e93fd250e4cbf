//! Verification-protocol evaluation: FAR/FRR curves, equal error rate, the
//! common-key, per-client-key and leak experiments, and a synthetic
//! stand-in dataset.
//!
//! Acceptance follows `score ≥ τ`, so `FAR(τ)` counts impostor scores `≥ τ`
//! and `FRR(τ)` counts genuine scores `< τ`. The curve is evaluated at the
//! sorted union of all scores plus `±∞`. The EER is located between the two
//! adjacent curve points where `FAR − FRR` changes sign, interpolating both
//! rates linearly in `τ`; an exact crossing point is returned as is.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::KernelSpec;
use crate::keyring::{derive_seed, protect_dataset, KeyCondition, KeyringError};
use crate::svm::{decision_score, train_client, train_one_vs_rest, Enrolled, SolverConfig, SvmError, SvmModel};
use crate::transform::{expand_key, protect_with, Template, TransformError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score set needs at least one genuine and one impostor score")]
    EmptyScores,
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("no model for claimed identity {0}")]
    UnknownClaim(String),
    #[error("unknown client {0}")]
    UnknownClient(String),
    #[error("{queries} queries but {claims} claims")]
    ClaimCountMismatch { queries: usize, claims: usize },
    #[error("experiment needs at least two clients, found {0}")]
    NotEnoughClients(usize),
    #[error("client {0} has fewer than two samples")]
    NotEnoughSamples(String),
    #[error("leak simulations need per-client keys")]
    NotPerClient,
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Keyring(#[from] KeyringError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    /// Fraction of impostor scores `≥ tau`.
    pub fn far_at(&self, tau: f64) -> f64 {
        fraction(&self.impostor, |s| s >= tau)
    }

    /// Fraction of genuine scores `< tau`.
    pub fn frr_at(&self, tau: f64) -> f64 {
        fraction(&self.genuine, |s| s < tau)
    }

    /// Both lists sorted ascending.
    pub fn sorted(&self) -> ScoreSet {
        let sort = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        ScoreSet { genuine: sort(&self.genuine), impostor: sort(&self.impostor) }
    }
}

fn fraction(scores: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| pred(s)).count() as f64 / scores.len() as f64
}

/// `±∞` thresholds are written as the strings `"inf"` / `"-inf"` in JSON.
mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub kernel: KernelSpec,
    #[serde(rename = "C")]
    pub c_param: f64,
    /// `"none"`, `"common"` or `"per_client"`, with the transform kind.
    pub key_condition: String,
    pub curve: Vec<RatePoint>,
    pub eer: f64,
    #[serde(with = "threshold_serde")]
    pub eer_threshold: f64,
    pub scores: ScoreSet,
}

impl EvalReport {
    pub fn far_at(&self, tau: f64) -> f64 {
        self.scores.far_at(tau)
    }

    /// `tau,far,frr` rows at 17 significant digits.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("tau,far,frr\n");
        for p in &self.curve {
            out.push_str(&format!("{},{},{}\n", fmt17(p.threshold), fmt17(p.far), fmt17(p.frr)));
        }
        out
    }
}

/// Decimal with 17 significant digits; `inf` / `-inf` for infinities.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Scores each query against the model of its claimed identity.
pub fn score_protocol<T: Enrolled + Sync>(
    models: &BTreeMap<String, SvmModel>,
    queries: &[T],
    claims: &[String],
) -> Result<ScoreSet, EvalError> {
    if queries.len() != claims.len() {
        return Err(EvalError::ClaimCountMismatch { queries: queries.len(), claims: claims.len() });
    }
    let mut set = ScoreSet::default();
    for (q, claim) in queries.iter().zip(claims) {
        let model = models.get(claim).ok_or_else(|| EvalError::UnknownClaim(claim.clone()))?;
        let score = decision_score(model, q.values())?;
        if claim == q.client_id() {
            set.genuine.push(score);
        } else {
            set.impostor.push(score);
        }
    }
    Ok(set)
}

/// All-vs-all scoring: every query against every model.
fn score_all_vs_all<T: Enrolled + Sync>(
    models: &BTreeMap<String, SvmModel>,
    queries: &[T],
) -> Result<ScoreSet, EvalError> {
    let scored: Vec<Vec<(bool, f64)>> = queries
        .par_iter()
        .map(|q| {
            models
                .iter()
                .map(|(client, m)| Ok((client == q.client_id(), decision_score(m, q.values())?)))
                .collect::<Result<Vec<_>, SvmError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut set = ScoreSet::default();
    for (genuine, s) in scored.into_iter().flatten() {
        if genuine {
            set.genuine.push(s);
        } else {
            set.impostor.push(s);
        }
    }
    Ok(set)
}

pub fn far_frr_curve(s: &ScoreSet) -> Result<Vec<RatePoint>, EvalError> {
    if s.genuine.is_empty() || s.impostor.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    if !s.genuine.iter().chain(&s.impostor).all(|v| v.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let sorted = s.sorted();
    let (gen, imp) = (&sorted.genuine, &sorted.impostor);
    let mut thresholds: Vec<f64> = Vec::with_capacity(gen.len() + imp.len() + 2);
    thresholds.push(f64::NEG_INFINITY);
    thresholds.extend(gen.iter().chain(imp.iter()).copied());
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (n_gen, n_imp) = (gen.len() as f64, imp.len() as f64);
    Ok(thresholds
        .into_iter()
        .map(|tau| {
            let imp_below = imp.partition_point(|&x| x < tau);
            let gen_below = gen.partition_point(|&x| x < tau);
            RatePoint {
                threshold: tau,
                far: (imp.len() - imp_below) as f64 / n_imp,
                frr: gen_below as f64 / n_gen,
            }
        })
        .collect())
}

/// `(eer, τ*)`. When the bracketing pair includes a `±∞` sentinel the
/// threshold is the finite endpoint.
pub fn eer(curve: &[RatePoint]) -> (f64, f64) {
    if let Some(p) = curve.iter().find(|p| p.far == p.frr) {
        return (p.far, p.threshold);
    }
    for w in curve.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (da, db) = (a.far - a.frr, b.far - b.frr);
        if da > 0.0 && db < 0.0 {
            let t = da / (da - db);
            let rate = a.far + t * (b.far - a.far);
            let tau = match (a.threshold.is_finite(), b.threshold.is_finite()) {
                (true, true) => a.threshold + t * (b.threshold - a.threshold),
                (true, false) => a.threshold,
                (false, true) => b.threshold,
                (false, false) => 0.0,
            };
            return (rate, tau);
        }
    }
    // unreachable for curves built by far_frr_curve
    let last = curve.last().copied().unwrap_or(RatePoint { threshold: 0.0, far: 0.0, frr: 0.0 });
    (0.5 * (last.far + last.frr), last.threshold)
}

/// Parameters of the synthetic stand-in dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub clients: usize,
    pub per_client: usize,
    pub dim: usize,
    /// Radius of the sphere client means are drawn on.
    pub separation: f64,
    /// Per-coordinate standard deviation of sample noise.
    pub noise: f64,
    /// Norm of a component common to every client (zero disables it).
    pub shared: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(clients: usize, per_client: usize, dim: usize, separation: f64, noise: f64, seed: u64) -> Self {
        Self { clients, per_client, dim, separation, noise, shared: 0.0, seed }
    }

    pub fn with_shared(mut self, shared: f64) -> Self {
        self.shared = shared;
        self
    }
}

fn random_direction(rng: &mut Xoshiro256PlusPlus, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = crate::numeric::norm(&v);
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit-normalized samples `shared + mean_c + noise·z`, with each client
/// mean drawn uniformly on the sphere of radius `separation`.
///
/// Client ids are `c00, c01, …` and sample ids `s000, s001, …`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Vec<Template> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let dim = spec.dim.max(1);
    let shared: Vec<f64> = random_direction(&mut rng, dim).into_iter().map(|x| x * spec.shared).collect();
    let cw = spec.clients.saturating_sub(1).to_string().len().max(2);
    let sw = spec.per_client.saturating_sub(1).to_string().len().max(3);
    let mut out = Vec::with_capacity(spec.clients * spec.per_client);
    for c in 0..spec.clients {
        let mean: Vec<f64> = random_direction(&mut rng, dim).into_iter().map(|x| x * spec.separation).collect();
        for s in 0..spec.per_client {
            let mut v: Vec<f64> = (0..dim)
                .map(|k| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    shared[k] + mean[k] + spec.noise * z
                })
                .collect();
            let norm = crate::numeric::norm(&v);
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            out.push(Template {
                client_id: format!("c{c:0cw$}"),
                sample_id: format!("s{s:0sw$}"),
                values: v,
            });
        }
    }
    out
}

/// Per-client enrollment/query partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Template>,
    pub query: Vec<Template>,
}

/// Splits each client's samples in half (training gets `⌊m/2⌋`). The
/// partition is keyed by sorted sample ids and `split_seed`, so input order
/// does not matter. Both halves come out sorted by `(client_id, sample_id)`.
pub fn split_templates(templates: &[Template], split_seed: u64) -> Result<Split, EvalError> {
    let mut by_client: BTreeMap<&str, Vec<&Template>> = BTreeMap::new();
    for t in templates {
        by_client.entry(&t.client_id).or_default().push(t);
    }
    if by_client.len() < 2 {
        return Err(EvalError::NotEnoughClients(by_client.len()));
    }
    let mut split = Split { train: Vec::new(), query: Vec::new() };
    for (client, mut samples) in by_client {
        if samples.len() < 2 {
            return Err(EvalError::NotEnoughSamples(client.to_string()));
        }
        samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(split_seed, &format!("split:{client}")));
        samples.shuffle(&mut rng);
        let n_train = samples.len() / 2;
        let (train, query) = samples.split_at(n_train);
        let mut train: Vec<Template> = train.iter().map(|t| (*t).clone()).collect();
        let mut query: Vec<Template> = query.iter().map(|t| (*t).clone()).collect();
        train.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        query.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        split.train.extend(train);
        split.query.extend(query);
    }
    Ok(split)
}

fn describe(kc: Option<&KeyCondition>) -> String {
    match kc {
        None => "none".into(),
        Some(KeyCondition::CommonKey(k)) => format!("common/{}", k.kind),
        Some(KeyCondition::PerClientKeys(m)) => {
            let kind = m.values().next().map(|k| k.kind.to_string()).unwrap_or_default();
            format!("per_client/{kind}")
        }
    }
}

fn report(
    scenario: &str,
    kernel: &KernelSpec,
    cfg: &SolverConfig,
    kc: Option<&KeyCondition>,
    scores: ScoreSet,
) -> Result<EvalReport, EvalError> {
    let curve = far_frr_curve(&scores)?;
    let (eer, eer_threshold) = eer(&curve);
    Ok(EvalReport {
        scenario: scenario.to_string(),
        kernel: *kernel,
        c_param: cfg.c_param,
        key_condition: describe(kc),
        curve,
        eer,
        eer_threshold,
        scores,
    })
}

/// The verification experiment: split each client's samples in half,
/// protect both halves under `kc` (or leave them plain when `None`), train
/// one model per enrollee, then score every query against every model.
pub fn run_experiment(
    templates: &[Template],
    kc: Option<&KeyCondition>,
    kernel: &KernelSpec,
    cfg: &SolverConfig,
    split_seed: u64,
) -> Result<EvalReport, EvalError> {
    let split = split_templates(templates, split_seed)?;
    let scores = match kc {
        None => {
            let models = train_one_vs_rest(&split.train, kernel, cfg)?;
            score_all_vs_all(&models, &split.query)?
        }
        Some(kc) => {
            let train = protect_dataset(&split.train, kc)?;
            let query = protect_dataset(&split.query, kc)?;
            let models = train_one_vs_rest(&train, kernel, cfg)?;
            score_all_vs_all(&models, &query)?
        }
    };
    let scenario = match kc {
        None => "plain",
        Some(KeyCondition::CommonKey(_)) => "common-key",
        Some(KeyCondition::PerClientKeys(_)) => "per-client-keys",
    };
    report(scenario, kernel, cfg, kc, scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attack {
    KeyLeak,
    TemplateLeak,
}

/// Scores against one victim's model under per-client keys.
///
/// Genuine scores are always the victim's own protected queries. Impostors
/// depend on `attack`:
/// - `None`: every other client's queries under that client's own key;
/// - `KeyLeak`: every other client's queries under the victim's key;
/// - `TemplateLeak`: the victim's plain queries under each other client's key.
pub fn victim_scores(
    templates: &[Template],
    kc: &KeyCondition,
    victim: &str,
    kernel: &KernelSpec,
    cfg: &SolverConfig,
    split_seed: u64,
    attack: Option<Attack>,
) -> Result<ScoreSet, EvalError> {
    let KeyCondition::PerClientKeys(keys) = kc else { return Err(EvalError::NotPerClient) };
    let clients: BTreeSet<&str> = templates.iter().map(|t| t.client_id.as_str()).collect();
    if !clients.contains(victim) {
        return Err(EvalError::UnknownClient(victim.to_string()));
    }
    let victim_key = keys.get(victim).ok_or_else(|| EvalError::UnknownClient(victim.to_string()))?;
    let split = split_templates(templates, split_seed)?;
    let train = protect_dataset(&split.train, kc)?;
    let model = train_client(&train, victim, kernel, cfg)?;

    let victim_q = expand_key(victim_key)?;
    let (own, others): (Vec<&Template>, Vec<&Template>) =
        split.query.iter().partition(|t| t.client_id == victim);

    let mut set = ScoreSet::default();
    for t in &own {
        let p = protect_with(&victim_q, &victim_key.key_id, t)?;
        set.genuine.push(decision_score(&model, &p.values)?);
    }
    match attack {
        None | Some(Attack::KeyLeak) => {
            let mut expanded = BTreeMap::new();
            for t in &others {
                let key = match attack {
                    Some(Attack::KeyLeak) => victim_key,
                    _ => keys.get(&t.client_id).ok_or_else(|| KeyringError::MissingKey(t.client_id.clone()))?,
                };
                if !expanded.contains_key(&key.key_id) {
                    expanded.insert(key.key_id.clone(), expand_key(key)?);
                }
                let p = protect_with(&expanded[&key.key_id], &key.key_id, t)?;
                set.impostor.push(decision_score(&model, &p.values)?);
            }
        }
        Some(Attack::TemplateLeak) => {
            for (attacker, key) in keys.iter().filter(|(c, _)| c.as_str() != victim && clients.contains(c.as_str())) {
                let _ = attacker;
                let q = expand_key(key)?;
                for t in &own {
                    let p = protect_with(&q, &key.key_id, t)?;
                    set.impostor.push(decision_score(&model, &p.values)?);
                }
            }
        }
    }
    Ok(set)
}

fn victim_report(
    templates: &[Template],
    kc: &KeyCondition,
    victim: &str,
    kernel: &KernelSpec,
    cfg: &SolverConfig,
    split_seed: u64,
    attack: Option<Attack>,
) -> Result<EvalReport, EvalError> {
    let scores = victim_scores(templates, kc, victim, kernel, cfg, split_seed, attack)?;
    let scenario = match attack {
        None => "victim-baseline",
        Some(Attack::KeyLeak) => "key-leak",
        Some(Attack::TemplateLeak) => "template-leak",
    };
    report(scenario, kernel, cfg, Some(kc), scores)
}

/// Honest per-client-key scores against the victim's model; the reference
/// the leak scenarios are compared with.
pub fn victim_baseline(
    templates: &[Template],
    kc: &KeyCondition,
    victim: &str,
    kernel: &KernelSpec,
    cfg: &SolverConfig,
    split_seed: u64,
) -> Result<EvalReport, EvalError> {
    victim_report(templates, kc, victim, kernel, cfg, split_seed, None)
}

/// Other clients present their own templates protected with the victim's
/// leaked key.
pub fn simulate_key_leak(
    templates: &[Template],
    kc: &KeyCondition,
    victim: &str,
    kernel: &KernelSpec,
    cfg: &SolverConfig,
    split_seed: u64,
) -> Result<EvalReport, EvalError> {
    victim_report(templates, kc, victim, kernel, cfg, split_seed, Some(Attack::KeyLeak))
}

/// Other clients present the victim's leaked plain templates protected
/// with their own keys.
pub fn simulate_template_leak(
    templates: &[Template],
    kc: &KeyCondition,
    victim: &str,
    kernel: &KernelSpec,
    cfg: &SolverConfig,
    split_seed: u64,
) -> Result<EvalReport, EvalError> {
    victim_report(templates, kc, victim, kernel, cfg, split_seed, Some(Attack::TemplateLeak))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyring::{assign_keys, KeyMode};
    use crate::transform::TransformKind;

    fn scores(genuine: &[f64], impostor: &[f64]) -> ScoreSet {
        ScoreSet { genuine: genuine.to_vec(), impostor: impostor.to_vec() }
    }

    fn point(curve: &[RatePoint], tau: f64) -> RatePoint {
        *curve.iter().find(|p| p.threshold == tau).expect("threshold on curve")
    }

    #[test]
    fn separated_scores() {
        let curve = far_frr_curve(&scores(&[1.0], &[-1.0])).unwrap();
        assert_eq!(ScoreSet::far_at(&scores(&[1.0], &[-1.0]), 0.0), 0.0);
        assert_eq!(scores(&[1.0], &[-1.0]).frr_at(0.0), 0.0);
        assert_eq!(eer(&curve).0, 0.0);
    }

    #[test]
    fn coincident_scores() {
        let s = scores(&[0.0], &[0.0]);
        let curve = far_frr_curve(&s).unwrap();
        let p = point(&curve, 0.0);
        assert_eq!((p.far, p.frr), (1.0, 0.0));
        let next = f64::from_bits(0.0f64.to_bits() + 1);
        assert_eq!((s.far_at(next), s.frr_at(next)), (0.0, 1.0));
        let (rate, tau) = eer(&curve);
        assert_eq!(rate, 0.5);
        assert_eq!(tau, 0.0);
    }

    #[test]
    fn small_curve_brute_force() {
        let s = scores(&[3.0, 1.0], &[2.0, 0.0]);
        let curve = far_frr_curve(&s).unwrap();
        let taus: Vec<f64> = curve.iter().map(|p| p.threshold).collect();
        assert_eq!(taus, vec![f64::NEG_INFINITY, 0.0, 1.0, 2.0, 3.0, f64::INFINITY]);
        let far = [1.0, 1.0, 0.5, 0.5, 0.0, 0.0];
        let frr = [0.0, 0.0, 0.0, 0.5, 0.5, 1.0];
        for (k, p) in curve.iter().enumerate() {
            assert_eq!((p.far, p.frr), (far[k], frr[k]), "at tau {}", p.threshold);
        }
        assert_eq!(eer(&curve), (0.5, 2.0));
    }

    #[test]
    fn interpolated_crossing() {
        // genuine {2}, impostor {1, 3}: (FAR, FRR) goes (0.5, 0) → (0.5, 1) between τ=2 and τ=3
        let curve = far_frr_curve(&scores(&[2.0], &[1.0, 3.0])).unwrap();
        let (rate, tau) = eer(&curve);
        assert_eq!(rate, 0.5);
        assert_eq!(tau, 2.5);
        // genuine {2, 4, 6}, impostor {1, 3}: (1/2, 1/3) at τ=3 → (0, 1/3) at τ=4, t = 1/3
        let curve = far_frr_curve(&scores(&[2.0, 4.0, 6.0], &[1.0, 3.0])).unwrap();
        let (rate, tau) = eer(&curve);
        assert!((rate - 1.0 / 3.0).abs() < 1e-15);
        assert!((tau - 10.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_scores_rejected() {
        assert!(matches!(far_frr_curve(&scores(&[], &[1.0])), Err(EvalError::EmptyScores)));
        assert!(matches!(far_frr_curve(&scores(&[1.0], &[])), Err(EvalError::EmptyScores)));
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let spec = SyntheticSpec::new(2, 2, 5, 1.0, 0.1, 9);
        let ts = gen_synthetic(&spec);
        assert_eq!(ts.len(), 4);
        let ids: BTreeSet<&str> = ts.iter().map(|t| t.client_id.as_str()).collect();
        assert_eq!(ids.len(), 2);
        for t in &ts {
            assert!((crate::numeric::norm(&t.values) - 1.0).abs() < 1e-12);
        }
        assert_eq!(ts, gen_synthetic(&spec));
    }

    #[test]
    fn split_ignores_input_order() {
        let ts = gen_synthetic(&SyntheticSpec::new(3, 5, 4, 1.0, 0.2, 1));
        let a = split_templates(&ts, 7).unwrap();
        let mut rev = ts.clone();
        rev.reverse();
        assert_eq!(a, split_templates(&rev, 7).unwrap());
        assert_eq!(a.train.len(), 6);
        assert_eq!(a.query.len(), 9);
    }

    #[test]
    fn split_preconditions() {
        let one = gen_synthetic(&SyntheticSpec::new(1, 4, 3, 1.0, 0.1, 1));
        assert!(matches!(split_templates(&one, 0), Err(EvalError::NotEnoughClients(1))));
        let thin = gen_synthetic(&SyntheticSpec::new(2, 1, 3, 1.0, 0.1, 1));
        assert!(matches!(split_templates(&thin, 0), Err(EvalError::NotEnoughSamples(_))));
    }

    #[test]
    fn score_protocol_routing() {
        let ts = vec![
            Template::new("a", "1", vec![1.0, 0.0]).unwrap(),
            Template::new("b", "1", vec![-1.0, 0.0]).unwrap(),
        ];
        let models = train_one_vs_rest(&ts, &KernelSpec::Linear, &SolverConfig::default()).unwrap();
        let s = score_protocol(&models, &ts[..1], &["a".to_string()]).unwrap();
        assert_eq!((s.genuine.len(), s.impostor.len()), (1, 0));
        assert!(s.genuine[0] > 0.0);
        let s = score_protocol(&models, &ts, &["b".to_string(), "b".to_string()]).unwrap();
        assert_eq!((s.genuine.len(), s.impostor.len()), (1, 1));
        assert!(matches!(
            score_protocol(&models, &ts[..1], &["zed".to_string()]),
            Err(EvalError::UnknownClaim(c)) if c == "zed"
        ));
    }

    #[test]
    fn identity_key_matches_plain() {
        let ts = gen_synthetic(&SyntheticSpec::new(3, 4, 6, 1.0, 0.3, 5));
        let kernel = KernelSpec::Rbf { gamma: 1.0 };
        let cfg = SolverConfig::with_c(34.0);
        let plain = run_experiment(&ts, None, &kernel, &cfg, 3).unwrap();
        let kc = assign_keys(&["c00"], KeyMode::Common, 0, TransformKind::Identity, 6).unwrap();
        let protected = run_experiment(&ts, Some(&kc), &kernel, &cfg, 3).unwrap();
        assert_eq!(plain.curve, protected.curve);
        assert_eq!(plain.scores, protected.scores);
        assert_eq!(plain.eer.to_bits(), protected.eer.to_bits());
    }

    #[test]
    fn leak_preconditions() {
        let ts = gen_synthetic(&SyntheticSpec::new(3, 4, 6, 1.0, 0.3, 5));
        let ids = ["c00", "c01", "c02"];
        let per = assign_keys(&ids, KeyMode::PerClient, 1, TransformKind::Permutation, 6).unwrap();
        let common = assign_keys(&ids, KeyMode::Common, 1, TransformKind::Permutation, 6).unwrap();
        let (k, c) = (KernelSpec::Linear, SolverConfig::default());
        assert!(matches!(simulate_key_leak(&ts, &per, "nobody", &k, &c, 0), Err(EvalError::UnknownClient(_))));
        assert!(matches!(simulate_template_leak(&ts, &per, "nobody", &k, &c, 0), Err(EvalError::UnknownClient(_))));
        assert!(matches!(simulate_key_leak(&ts, &common, "c00", &k, &c, 0), Err(EvalError::NotPerClient)));
        let r = simulate_key_leak(&ts, &per, "c01", &k, &c, 0).unwrap();
        assert_eq!(r.scenario, "key-leak");
        assert_eq!(r.scores.genuine.len(), 2);
        assert_eq!(r.scores.impostor.len(), 4);
        let r = simulate_template_leak(&ts, &per, "c01", &k, &c, 0).unwrap();
        assert_eq!(r.scenario, "template-leak");
        assert_eq!(r.scores.impostor.len(), 4);
    }

    #[test]
    fn template_leak_with_identity_keys_impersonates() {
        let ts = gen_synthetic(&SyntheticSpec::new(3, 6, 8, 2.0, 0.1, 2));
        let ids = ["c00", "c01", "c02"];
        let mut keys = BTreeMap::new();
        for (n, id) in ids.iter().enumerate() {
            keys.insert(id.to_string(), crate::transform::TransformKey::new(format!("k-{id}"), n as u64, TransformKind::Identity, 8));
        }
        let kc = KeyCondition::PerClientKeys(keys);
        let r = simulate_template_leak(&ts, &kc, "c00", &KernelSpec::Linear, &SolverConfig::default(), 4).unwrap();
        let lowest_genuine = r.scores.genuine.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(r.far_at(lowest_genuine), 1.0);
    }

    #[test]
    fn report_json_round_trip_with_sentinels() {
        let ts = gen_synthetic(&SyntheticSpec::new(2, 4, 3, 1.0, 0.2, 8));
        let r = run_experiment(&ts, None, &KernelSpec::Linear, &SolverConfig::default(), 1).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"-inf\""));
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert!(r.curve_csv().starts_with("tau,far,frr\n-inf,"));
    }
}
