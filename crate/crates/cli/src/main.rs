//! `ppsvm`: command-line driver for template protection, SVM training,
//! verification experiments and the client/server deployment.
//!
//! Runtime errors print a single JSON line `{"error": "..."}` on stderr and
//! exit with status 1; usage errors exit with status 2.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ppsvm_core::evalx::{
    gen_synthetic, run_experiment, simulate_key_leak, simulate_template_leak, victim_baseline, EvalReport,
    SyntheticSpec,
};
use ppsvm_core::features::{extract_dataset, BlockSpec};
use ppsvm_core::keyring::{assign_keys, protect_dataset, KeyCondition, KeyMode};
use ppsvm_core::service::{Client, Server, ServerConfig, ServerState};
use ppsvm_core::store::{self, FeatureMeta, TemplateSet};
use ppsvm_core::svm::{authenticate, train_one_vs_rest};
use ppsvm_core::{KernelSpec, ProtectedTemplate, SolverConfig, Template, TransformKind};

#[derive(Parser)]
#[command(name = "ppsvm", version, about = "SVM verification on orthogonally protected biometric templates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract block-mean templates from a directory of PGM images (one subdirectory per client).
    Extract(ExtractArgs),
    /// Generate a synthetic template store.
    Synth(SynthArgs),
    /// Generate a keyring for the clients of a template store.
    Keygen(KeygenArgs),
    /// Protect a plain template store with a keyring.
    Protect(ProtectArgs),
    /// Train one-vs-rest models on a template store.
    Train(TrainArgs),
    /// Score one stored query against a claimed identity's model.
    Authenticate(AuthenticateArgs),
    /// Run the verification experiment (plain, common key or per-client keys).
    Evaluate(EvaluateArgs),
    /// Run a leak scenario against one victim under per-client keys.
    Attack(AttackArgs),
    /// Run the template server.
    Serve(ServeArgs),
    /// Talk to a running server, protecting templates locally.
    Client(ClientArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelKind {
    Rbf,
    Linear,
    Polynomial,
    RationalQuadratic,
    Wave,
}

#[derive(Args, Clone)]
struct KernelArgs {
    /// Kernel family.
    #[arg(long, value_enum, default_value = "rbf")]
    kernel: KernelKind,
    /// RBF width γ in exp(−γ‖x−y‖²).
    #[arg(long, default_value_t = 81.0)]
    gamma: f64,
    /// Polynomial degree.
    #[arg(long, default_value_t = 2)]
    degree: u32,
    /// Rational-quadratic constant c.
    #[arg(long = "rq-c", default_value_t = 1.0)]
    rq_c: f64,
    /// Wave kernel scale θ.
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// Kernel as JSON, e.g. '{"kind":"rbf","params":{"gamma":0.5}}'; overrides the flags above.
    #[arg(long)]
    kernel_json: Option<String>,
    /// Box constraint C [default: 1 for linear, 34 otherwise].
    #[arg(long = "C")]
    c: Option<f64>,
    /// KKT tolerance of the solver.
    #[arg(long, default_value_t = 1e-3)]
    kkt_tol: f64,
    /// Seed of the solver's fallback sweep.
    #[arg(long, default_value_t = 0)]
    solver_seed: u64,
}

impl KernelArgs {
    fn kernel(&self) -> Result<KernelSpec> {
        let spec = match &self.kernel_json {
            Some(text) => serde_json::from_str(text).context("parsing --kernel-json")?,
            None => match self.kernel {
                KernelKind::Rbf => KernelSpec::Rbf { gamma: self.gamma },
                KernelKind::Linear => KernelSpec::Linear,
                KernelKind::Polynomial => KernelSpec::Polynomial { degree: self.degree },
                KernelKind::RationalQuadratic => KernelSpec::RationalQuadratic { c: self.rq_c },
                KernelKind::Wave => KernelSpec::Wave { theta: self.theta },
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    fn solver(&self, kernel: &KernelSpec) -> Result<SolverConfig> {
        let default_c = if matches!(kernel, KernelSpec::Linear) { 1.0 } else { 34.0 };
        let cfg = SolverConfig { kkt_tol: self.kkt_tol, seed: self.solver_seed, ..SolverConfig::with_c(self.c.unwrap_or(default_c)) };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Permutation,
    GramSchmidt,
    Identity,
}

impl From<KindArg> for TransformKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Permutation => TransformKind::Permutation,
            KindArg::GramSchmidt => TransformKind::GramSchmidt,
            KindArg::Identity => TransformKind::Identity,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    None,
    Common,
    PerClient,
}

#[derive(Args)]
struct ExtractArgs {
    /// Image root: one subdirectory of .pgm files per client.
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value = "./templates")]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    block_h: usize,
    #[arg(long, default_value_t = 6)]
    block_w: usize,
    /// Keep raw block means instead of scaling to [0,1] and unit L2 norm.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    clients: usize,
    #[arg(long, default_value_t = 20)]
    per_client: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Radius of the sphere client means are drawn on.
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Per-coordinate noise standard deviation.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Norm of the component common to all clients.
    #[arg(long, default_value_t = 1.0)]
    shared: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "./templates")]
    out: PathBuf,
}

#[derive(Args)]
struct KeygenArgs {
    /// Template store whose client ids and dimension the keyring covers.
    #[arg(long, default_value = "./templates")]
    templates: PathBuf,
    #[arg(long, value_enum, default_value = "per-client")]
    mode: ModeArg,
    #[arg(long = "key-kind", value_enum, default_value = "permutation")]
    kind: KindArg,
    /// Master seed the keys are derived from.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "./keyring.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ProtectArgs {
    #[arg(long, default_value = "./templates")]
    templates: PathBuf,
    #[arg(long, default_value = "./keyring.json")]
    keyring: PathBuf,
    #[arg(long, default_value = "./protected")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "./protected")]
    templates: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value = "./models.json")]
    out: PathBuf,
}

#[derive(Args)]
struct AuthenticateArgs {
    #[arg(long, default_value = "./models.json")]
    models: PathBuf,
    /// Store holding the query template.
    #[arg(long, default_value = "./protected")]
    templates: PathBuf,
    /// True client id of the query.
    #[arg(long)]
    client: String,
    /// Sample id of the query.
    #[arg(long)]
    sample: String,
    /// Claimed identity [default: the query's own client].
    #[arg(long)]
    claim: Option<String>,
    /// Accept iff score ≥ tau.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Plain template store.
    #[arg(long, default_value = "./templates")]
    templates: PathBuf,
    #[arg(long = "key-kind", value_enum, default_value = "permutation")]
    kind: KindArg,
    /// Master key seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the per-client enrollment/query split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Report JSON output.
    #[arg(long, default_value = "./report.json")]
    report: PathBuf,
    /// FAR/FRR curve CSV output.
    #[arg(long, default_value = "./curve.csv")]
    curve: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_enum, default_value = "none")]
    key_mode: ModeArg,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    KeyLeak,
    TemplateLeak,
    /// Honest impostors against the same victim, for comparison.
    Baseline,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(value_enum)]
    scenario: Scenario,
    /// Victim client id.
    #[arg(long)]
    victim: String,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// Server-side store of protected templates.
    #[arg(long, default_value = "./server-store")]
    store: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Args)]
struct ClientArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    server: String,
    #[command(subcommand)]
    op: ClientOp,
}

#[derive(Subcommand)]
enum ClientOp {
    /// Protect a plain store locally and enroll it.
    Enroll {
        #[arg(long, default_value = "./templates")]
        templates: PathBuf,
        #[arg(long, default_value = "./keyring.json")]
        keyring: PathBuf,
        /// Enroll only this client.
        #[arg(long)]
        client: Option<String>,
    },
    /// Ask the server to train.
    Train,
    /// Protect one stored query locally and authenticate it.
    Authenticate {
        #[arg(long, default_value = "./templates")]
        templates: PathBuf,
        #[arg(long, default_value = "./keyring.json")]
        keyring: PathBuf,
        /// Client whose key protects the query (the presenting client).
        #[arg(long)]
        client: String,
        #[arg(long)]
        sample: String,
        /// Claimed identity [default: --client].
        #[arg(long)]
        claim: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
    },
}

fn print_json(v: serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{v}")?;
    Ok(())
}

fn load_plain(dir: &Path) -> Result<Vec<Template>> {
    store::load_templates(dir)?
        .into_plain()
        .ok_or_else(|| anyhow!("{} holds protected templates; a plain store is needed", dir.display()))
}

fn client_ids(ts: &[Template]) -> Vec<String> {
    ts.iter().map(|t| t.client_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

fn check_key_dim(kc: &KeyCondition, ts: &[Template]) -> Result<()> {
    if let Some(t) = ts.first() {
        if t.values.len() != kc.dim() {
            bail!("keyring dimension {} does not match template dimension {}", kc.dim(), t.values.len());
        }
    }
    Ok(())
}

fn write_report(report: &EvalReport, args: &ExperimentArgs) -> Result<()> {
    store::save_report(&args.report, &args.curve, report)?;
    print_json(json!({
        "scenario": report.scenario,
        "key_condition": report.key_condition,
        "eer": report.eer,
        "eer_threshold": report.eer_threshold,
        "report": args.report,
        "curve": args.curve,
    }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract(a) => {
            let spec = BlockSpec::new(a.block_h, a.block_w)?;
            let ts = extract_dataset(&a.images, spec, !a.no_normalize)?;
            let m = store::save_templates(&a.out, &TemplateSet::Plain(ts), Some(FeatureMeta::new(spec, !a.no_normalize)))?;
            print_json(json!({"templates": m.count, "dim": m.dim, "out": a.out}))
        }
        Command::Synth(a) => {
            if a.clients < 2 || a.per_client < 2 || a.dim == 0 {
                bail!("synth needs at least 2 clients, 2 samples per client and dim ≥ 1");
            }
            let spec = SyntheticSpec::new(a.clients, a.per_client, a.dim, a.separation, a.noise, a.seed).with_shared(a.shared);
            let ts = gen_synthetic(&spec);
            let m = store::save_templates(&a.out, &TemplateSet::Plain(ts), None)?;
            print_json(json!({"templates": m.count, "dim": m.dim, "out": a.out}))
        }
        Command::Keygen(a) => {
            let mode = match a.mode {
                ModeArg::Common => KeyMode::Common,
                ModeArg::PerClient => KeyMode::PerClient,
                ModeArg::None => bail!("keygen needs --mode common or per-client"),
            };
            let ts = load_plain(&a.templates)?;
            let dim = ts.first().map(|t| t.values.len()).ok_or_else(|| anyhow!("template store is empty"))?;
            let kc = assign_keys(&client_ids(&ts), mode, a.seed, a.kind.into(), dim)?;
            store::save_keyring(&a.out, &kc)?;
            print_json(json!({"keyring": a.out, "mode": mode, "dim": dim}))
        }
        Command::Protect(a) => {
            let kc = store::load_keyring(&a.keyring)?;
            let ts = load_plain(&a.templates)?;
            check_key_dim(&kc, &ts)?;
            let prot = protect_dataset(&ts, &kc)?;
            let m = store::save_templates(&a.out, &TemplateSet::Protected(prot), None)?;
            print_json(json!({"templates": m.count, "key_ids": m.key_ids, "out": a.out}))
        }
        Command::Train(a) => {
            let kernel = a.kernel.kernel()?;
            let cfg = a.kernel.solver(&kernel)?;
            let models = match store::load_templates(&a.templates)? {
                TemplateSet::Plain(ts) => train_one_vs_rest(&ts, &kernel, &cfg)?,
                TemplateSet::Protected(ts) => train_one_vs_rest(&ts, &kernel, &cfg)?,
            };
            store::save_models(&a.out, &models)?;
            let summary: BTreeMap<&String, usize> = models.iter().map(|(c, m)| (c, m.support_vectors.len())).collect();
            print_json(json!({"models": summary, "out": a.out}))
        }
        Command::Authenticate(a) => {
            let models = store::load_models(&a.models)?;
            let claim = a.claim.unwrap_or_else(|| a.client.clone());
            let model = models.get(&claim).ok_or_else(|| anyhow!("no model for claimed identity {claim}"))?;
            let values = match store::load_templates(&a.templates)? {
                TemplateSet::Plain(ts) => ts.into_iter().find(|t| t.client_id == a.client && t.sample_id == a.sample).map(|t| t.values),
                TemplateSet::Protected(ts) => {
                    ts.into_iter().find(|t| t.client_id == a.client && t.sample_id == a.sample).map(|t| t.values)
                }
            }
            .ok_or_else(|| anyhow!("no template {}/{} in {}", a.client, a.sample, a.templates.display()))?;
            let (decision, score) = authenticate(model, &values, a.tau)?;
            print_json(json!({"claim": claim, "decision": decision, "score": score}))
        }
        Command::Evaluate(a) => {
            let e = &a.exp;
            let kernel = e.kernel.kernel()?;
            let cfg = e.kernel.solver(&kernel)?;
            let ts = load_plain(&e.templates)?;
            let ids = client_ids(&ts);
            let dim = ts.first().map_or(0, |t| t.values.len());
            let kc = match a.key_mode {
                ModeArg::None => None,
                ModeArg::Common => Some(assign_keys(&ids, KeyMode::Common, e.seed, e.kind.into(), dim)?),
                ModeArg::PerClient => Some(assign_keys(&ids, KeyMode::PerClient, e.seed, e.kind.into(), dim)?),
            };
            let report = run_experiment(&ts, kc.as_ref(), &kernel, &cfg, e.split_seed)?;
            write_report(&report, e)
        }
        Command::Attack(a) => {
            let e = &a.exp;
            let kernel = e.kernel.kernel()?;
            let cfg = e.kernel.solver(&kernel)?;
            let ts = load_plain(&e.templates)?;
            let ids = client_ids(&ts);
            if !ids.contains(&a.victim) {
                bail!("unknown victim {}", a.victim);
            }
            let dim = ts.first().map_or(0, |t| t.values.len());
            let kc = assign_keys(&ids, KeyMode::PerClient, e.seed, e.kind.into(), dim)?;
            let report = match a.scenario {
                Scenario::KeyLeak => simulate_key_leak(&ts, &kc, &a.victim, &kernel, &cfg, e.split_seed)?,
                Scenario::TemplateLeak => simulate_template_leak(&ts, &kc, &a.victim, &kernel, &cfg, e.split_seed)?,
                Scenario::Baseline => victim_baseline(&ts, &kc, &a.victim, &kernel, &cfg, e.split_seed)?,
            };
            write_report(&report, e)
        }
        Command::Serve(a) => {
            let kernel = a.kernel.kernel()?;
            let solver = a.kernel.solver(&kernel)?;
            let state = ServerState::new(ServerConfig { kernel, solver, store_dir: Some(a.store.clone()) })?;
            let server = Server::bind(&a.listen, state).with_context(|| format!("binding {}", a.listen))?;
            eprintln!("{}", json!({"listening": server.local_addr()?.to_string(), "store": a.store}));
            server.run();
            Ok(())
        }
        Command::Client(a) => run_client(a),
    }
}

fn local_protect(templates: &Path, keyring: &Path, filter: impl Fn(&Template) -> bool) -> Result<Vec<ProtectedTemplate>> {
    let kc = store::load_keyring(keyring)?;
    let ts: Vec<Template> = load_plain(templates)?.into_iter().filter(|t| filter(t)).collect();
    check_key_dim(&kc, &ts)?;
    Ok(protect_dataset(&ts, &kc)?)
}

fn run_client(a: ClientArgs) -> Result<()> {
    match a.op {
        ClientOp::Enroll { templates, keyring, client } => {
            let prot = local_protect(&templates, &keyring, |t| client.as_ref().is_none_or(|c| &t.client_id == c))?;
            if prot.is_empty() {
                bail!("nothing to enroll");
            }
            let mut conn = Client::connect(&a.server).with_context(|| format!("connecting to {}", a.server))?;
            let mut by_client: BTreeMap<String, Vec<ProtectedTemplate>> = BTreeMap::new();
            for t in prot {
                by_client.entry(t.client_id.clone()).or_default().push(t);
            }
            let mut total = 0;
            for (id, ts) in &by_client {
                total = conn.enroll(id, ts)?.total;
            }
            print_json(json!({"clients": by_client.len(), "total": total}))
        }
        ClientOp::Train => {
            let mut conn = Client::connect(&a.server).with_context(|| format!("connecting to {}", a.server))?;
            print_json(serde_json::to_value(conn.train()?)?)
        }
        ClientOp::Authenticate { templates, keyring, client, sample, claim, tau } => {
            let prot = local_protect(&templates, &keyring, |t| t.client_id == client && t.sample_id == sample)?;
            let query = prot.first().ok_or_else(|| anyhow!("no template {client}/{sample}"))?;
            let claim = claim.unwrap_or_else(|| client.clone());
            let mut conn = Client::connect(&a.server).with_context(|| format!("connecting to {}", a.server))?;
            let r = conn.authenticate(&claim, query, tau)?;
            print_json(json!({"claim": claim, "decision": r.decision, "score": r.score}))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!("{}", json!({"error": msg}));
            ExitCode::from(1)
        }
    }
}
