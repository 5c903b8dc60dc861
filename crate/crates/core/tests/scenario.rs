use std::fs;
use std::path::Path;

use fedchain::coordinator::Event;
use fedchain::flclients::ClientBehavior;
use fedchain::ledger::LedgerDump;
use fedchain::scenario::{audit, run, run_in_memory, ScenarioConfig};

fn config(behaviors: Vec<ClientBehavior>, rounds: u64) -> ScenarioConfig {
    let mut config = ScenarioConfig { rounds, ..ScenarioConfig::default() };
    config.dataset.n_clients = behaviors.len();
    config.dataset.samples_per_client = vec![40; behaviors.len()];
    config.dataset.behaviors = behaviors;
    config
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        files.push((rel, fs::read(&entry).unwrap()));
    }
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn same_config_gives_byte_identical_artifacts() {
    let cfg = config(vec![ClientBehavior::Honest, ClientBehavior::Honest, ClientBehavior::Dropout(0.5)], 6);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&cfg, a.path()).unwrap();
    let rb = run(&cfg, b.path()).unwrap();
    assert_eq!(ra.run_id, rb.run_id);
    let files_a = read_all(ra.dir.as_ref().unwrap());
    assert_eq!(files_a, read_all(rb.dir.as_ref().unwrap()));
    let names: Vec<&str> = files_a.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["report.json", "gas.csv", "rewards.csv", "ledger.bin", "attribution.jsonl"] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    assert!(names.iter().any(|n| n.starts_with("blobs")));
}

#[test]
fn ten_rounds_every_five_gives_two_checkpoints() {
    let outcome = run_in_memory(&config(vec![ClientBehavior::Honest; 3], 10)).unwrap();
    let rounds: Vec<u64> = outcome.report.checkpoints.iter().map(|c| c.round).collect();
    assert_eq!(rounds, vec![5, 10]);
    assert!(outcome.report.summary.checkpoints_verified);
    assert_eq!(outcome.report.summary.rounds_closed, 10);
    assert!(outcome.report.summary.reward_conservation);
}

#[test]
fn clean_run_audits_ok_and_tampering_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&config(vec![ClientBehavior::Honest; 3], 5), dir.path()).unwrap();
    let run_dir = outcome.dir.unwrap();
    let clean = audit(&run_dir).unwrap();
    assert!(clean.is_ok(), "{:?}", clean.findings);
    assert_eq!(clean.checkpoints.len(), 1);

    // Deleting the report and rebuilding it from the ledger is byte-identical.
    let original = fs::read(run_dir.join("report.json")).unwrap();
    let dump = LedgerDump::from_bytes(&fs::read(run_dir.join("ledger.bin")).unwrap()).unwrap();
    let store = fedchain::offchain::ContentStore::load(&run_dir.join("blobs")).unwrap();
    let rebuilt = fedchain::scenario::build_report(&dump, &store).unwrap();
    assert_eq!(serde_json::to_vec_pretty(&rebuilt).unwrap(), original[..original.len() - 1]);

    let blob = walk(&run_dir.join("blobs")).pop().unwrap();
    let mut bytes = fs::read(&blob).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&blob, &bytes).unwrap();
    let tampered = audit(&run_dir).unwrap();
    assert!(tampered.findings.iter().any(|f| f.contains("hash mismatch")), "{:?}", tampered.findings);
}

#[test]
fn dropped_score_event_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&config(vec![ClientBehavior::Honest; 3], 5), dir.path()).unwrap();
    let run_dir = outcome.dir.unwrap();
    let mut dump = LedgerDump::from_bytes(&fs::read(run_dir.join("ledger.bin")).unwrap()).unwrap();
    let receipt = dump
        .blocks
        .iter_mut()
        .flat_map(|b| b.receipts.iter_mut())
        .find(|r| r.events.iter().any(|e| matches!(e, Event::AlignmentScoresUpdated { .. })))
        .unwrap();
    receipt.events.retain(|e| !matches!(e, Event::AlignmentScoresUpdated { .. }));
    fs::write(run_dir.join("ledger.bin"), dump.to_bytes()).unwrap();
    let report = audit(&run_dir).unwrap();
    assert!(!report.is_ok());
    assert!(
        report.findings.iter().any(|f| f.contains("differ from the event log")),
        "{:?}",
        report.findings
    );
}

#[test]
fn truncated_ledger_file_fails_audit() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&config(vec![ClientBehavior::Honest; 2], 2), dir.path()).unwrap();
    let run_dir = outcome.dir.unwrap();
    let bytes = fs::read(run_dir.join("ledger.bin")).unwrap();
    fs::write(run_dir.join("ledger.bin"), &bytes[..bytes.len() / 2]).unwrap();
    assert!(!audit(&run_dir).unwrap().is_ok());
}

#[test]
fn missing_run_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(audit(dir.path()).is_err());
}

#[test]
fn negator_is_suppressed() {
    let mut behaviors = vec![ClientBehavior::Honest; 5];
    behaviors.push(ClientBehavior::Negator);
    let outcome = run_in_memory(&config(behaviors, 10)).unwrap();
    let negator = outcome.report.clients.last().unwrap();
    assert!(negator.cumulative_score.is_negative());
    assert_eq!(negator.total_payout, 0);
    assert_eq!(negator.banned_in_round, Some(3));
    assert_eq!(negator.final_stake, negator.initial_stake / 2);
    assert!(outcome.report.clients[..5].iter().all(|c| c.total_payout > 0));
}

#[test]
fn scaler_and_freerider_get_nothing() {
    let behaviors = vec![
        ClientBehavior::Honest,
        ClientBehavior::Honest,
        ClientBehavior::Honest,
        ClientBehavior::Scaler(1_000.0),
        ClientBehavior::Freerider,
    ];
    let outcome = run_in_memory(&config(behaviors, 3)).unwrap();
    let clients = &outcome.report.clients;
    assert_eq!(clients[3].total_payout, 0);
    assert_eq!(clients[4].total_payout, 0);
    assert_eq!(clients[4].cumulative_score, fedchain::numerics::Fixed::ZERO);
    assert!(outcome.report.rounds.iter().all(|r| r.rejected.len() == 1));
}

#[test]
fn honest_fleet_converges() {
    let outcome = run_in_memory(&config(vec![ClientBehavior::Honest; 3], 20)).unwrap();
    let first = outcome.distances[0];
    let last = *outcome.distances.last().unwrap();
    assert!(last <= 0.5 * first, "{first} -> {last}");
}

#[test]
fn more_data_earns_more() {
    let mut cfg = config(vec![ClientBehavior::Honest; 3], 5);
    cfg.dataset.samples_per_client = vec![20, 40, 80];
    let outcome = run_in_memory(&cfg).unwrap();
    let paid: Vec<u128> = outcome.report.clients.iter().map(|c| c.total_payout).collect();
    assert!(paid[0] <= paid[1] && paid[1] <= paid[2], "{paid:?}");
}

#[test]
fn shapley_basis_and_block_cadence_options() {
    let mut cfg = config(vec![ClientBehavior::Honest; 3], 3);
    cfg.reward_basis = fedchain::coordinator::RewardBasis::Shapley;
    cfg.txs_per_block = Some(4);
    let outcome = run_in_memory(&cfg).unwrap();
    assert!(outcome.report.summary.reward_conservation);
    assert!(outcome.attribution.iter().all(|a| a.phi.is_some()));
    assert!(outcome.ledger.blocks().iter().skip(1).all(|b| b.transactions.len() <= 4));
    fedchain::ledger::verify_chain(outcome.ledger.blocks()).unwrap();
}
