use std::collections::BTreeMap;
use std::thread;

use ppsvm_core::evalx::{gen_synthetic, split_templates, SyntheticSpec};
use ppsvm_core::keyring::{assign_keys, protect_dataset, KeyCondition, KeyMode};
use ppsvm_core::service::{Client, ClientError, ErrorCode, Server, ServerConfig, ServerState};
use ppsvm_core::svm::Decision;
use ppsvm_core::{decision_score, protect, train_one_vs_rest, KernelSpec, ProtectedTemplate, SolverConfig, TransformKind};

const DIM: usize = 24;
const CLIENTS: usize = 4;
const TAU: f64 = 0.0;

fn kernel() -> KernelSpec {
    KernelSpec::Rbf { gamma: 1.0 }
}

fn solver() -> SolverConfig {
    SolverConfig::with_c(10.0)
}

struct Fixture {
    kc: KeyCondition,
    train: Vec<ProtectedTemplate>,
    query: Vec<ProtectedTemplate>,
}

fn fixture() -> Fixture {
    let data = gen_synthetic(&SyntheticSpec::new(CLIENTS, 8, DIM, 3.0, 0.1, 21));
    let split = split_templates(&data, 2).unwrap();
    let ids: Vec<&str> = data.iter().map(|t| t.client_id.as_str()).collect();
    let kc = assign_keys(&ids, KeyMode::PerClient, 77, TransformKind::GramSchmidt, DIM).unwrap();
    let train = protect_dataset(&split.train, &kc).unwrap();
    let query = protect_dataset(&split.query, &kc).unwrap();
    Fixture { kc, train, query }
}

fn by_client(ts: &[ProtectedTemplate]) -> BTreeMap<String, Vec<ProtectedTemplate>> {
    let mut out: BTreeMap<String, Vec<ProtectedTemplate>> = BTreeMap::new();
    for t in ts {
        out.entry(t.client_id.clone()).or_default().push(t.clone());
    }
    out
}

fn spawn(state: ServerState) -> ppsvm_core::service::ServerHandle {
    Server::bind("127.0.0.1:0", state).unwrap().spawn().unwrap()
}

fn remote_code<T: std::fmt::Debug>(r: Result<T, ClientError>) -> ErrorCode {
    match r {
        Err(ClientError::Remote { code, .. }) => code,
        other => panic!("expected a remote error, got {other:?}"),
    }
}

#[test]
fn concurrent_session_matches_local_scores() {
    let fx = fixture();
    let handle = spawn(ServerState::in_memory(kernel(), solver()));
    let addr = handle.addr();

    let workers: Vec<_> = by_client(&fx.train)
        .into_iter()
        .map(|(client, ts)| {
            thread::spawn(move || {
                let mut c = Client::connect(addr).unwrap();
                c.enroll(&client, &ts).unwrap()
            })
        })
        .collect();
    for w in workers {
        assert_eq!(w.join().unwrap().stored, 4);
    }

    let mut c = Client::connect(addr).unwrap();
    let first = c.train().unwrap();
    let second = c.train().unwrap();
    assert_eq!(first, second);
    assert_eq!(first.models.len(), CLIENTS);

    let local = train_one_vs_rest(&fx.train, &kernel(), &solver()).unwrap();
    let queries = fx.query.clone();
    let checkers: Vec<_> = queries
        .chunks(4)
        .map(|chunk| {
            let chunk = chunk.to_vec();
            thread::spawn(move || {
                let mut c = Client::connect(addr).unwrap();
                chunk.iter().map(|q| (q.clone(), c.authenticate(&q.client_id, q, TAU).unwrap())).collect::<Vec<_>>()
            })
        })
        .collect();
    for w in checkers {
        for (q, res) in w.join().unwrap() {
            let expected = decision_score(&local[&q.client_id], &q.values).unwrap();
            assert_eq!(res.score, expected);
            assert_eq!(res.decision, Decision::Accept, "genuine {} rejected", q.sample_id);
        }
    }
    handle.shutdown();
}

#[test]
fn wrong_key_and_unknown_client_are_rejected() {
    let fx = fixture();
    let handle = spawn(ServerState::in_memory(kernel(), solver()));
    let mut c = Client::connect(handle.addr()).unwrap();

    let probe = fx.query[0].clone();
    assert_eq!(remote_code(c.authenticate(&probe.client_id, &probe, TAU)), ErrorCode::NotTrained);

    for (client, ts) in by_client(&fx.train) {
        c.enroll(&client, &ts).unwrap();
    }
    c.train().unwrap();

    let KeyCondition::PerClientKeys(keys) = &fx.kc else { unreachable!() };
    let clients: Vec<&String> = keys.keys().collect();
    let data = gen_synthetic(&SyntheticSpec::new(CLIENTS, 8, DIM, 3.0, 0.1, 21));
    let split = split_templates(&data, 2).unwrap();
    for t in &split.query {
        let own = clients.iter().position(|c| **c == t.client_id).unwrap();
        let other = keys[clients[(own + 1) % clients.len()]].clone();
        let forged = protect(t, &other).unwrap();
        let res = c.authenticate(&t.client_id, &forged, TAU).unwrap();
        assert_eq!(res.decision, Decision::Reject, "mismatched key accepted for {}", t.sample_id);
    }

    assert_eq!(remote_code(c.authenticate("nobody", &probe, TAU)), ErrorCode::UnknownClient);
    let mut short = probe.clone();
    short.values.pop();
    assert_eq!(remote_code(c.authenticate(&probe.client_id, &short, TAU)), ErrorCode::DimMismatch);
    handle.shutdown();
}

#[test]
fn store_survives_a_restart() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let config = ServerConfig { kernel: kernel(), solver: solver(), store_dir: Some(tmp.path().join("store")) };

    let handle = spawn(ServerState::new(config.clone()).unwrap());
    let mut c = Client::connect(handle.addr()).unwrap();
    for (client, ts) in by_client(&fx.train) {
        c.enroll(&client, &ts).unwrap();
    }
    let before = c.train().unwrap();
    let probe = fx.query[0].clone();
    let score_before = c.authenticate(&probe.client_id, &probe, TAU).unwrap().score;
    drop(c);
    handle.shutdown();

    let state = ServerState::new(config).unwrap();
    assert_eq!(state.template_count(), fx.train.len());
    let handle = spawn(state);
    let mut c = Client::connect(handle.addr()).unwrap();
    assert_eq!(remote_code(c.authenticate(&probe.client_id, &probe, TAU)), ErrorCode::NotTrained);
    assert_eq!(c.train().unwrap(), before);
    assert_eq!(c.authenticate(&probe.client_id, &probe, TAU).unwrap().score, score_before);

    let again = c.enroll(&probe.client_id, &fx.train[..1]).unwrap();
    assert_eq!(again.total, fx.train.len());
    handle.shutdown();
}

#[test]
fn one_client_is_not_enough_to_train() {
    let fx = fixture();
    let handle = spawn(ServerState::in_memory(kernel(), solver()));
    let mut c = Client::connect(handle.addr()).unwrap();
    let (client, ts) = by_client(&fx.train).into_iter().next().unwrap();
    c.enroll(&client, &ts).unwrap();
    assert_eq!(remote_code(c.train()), ErrorCode::InsufficientData);
    handle.shutdown();
}
