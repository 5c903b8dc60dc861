//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Tolerances are pinned below.

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fedchain::coordinator::{ContractConfig, Coordinator};
use fedchain::flclients::ClientBehavior;
use fedchain::ids::ClientId;
use fedchain::incentives::{consistency_adjusted_reward, proportional_split, shapley_exact, AlignmentGame};
use fedchain::ledger::gas::{GasModel, OpClass, DEPLOYMENT_GAS};
use fedchain::ledger::Ledger;
use fedchain::numerics::{Fixed, GradientVector};
use fedchain::offchain::keccak256;
use fedchain::scenario::{audit, gas_sweep, run, run_in_memory, ScenarioConfig, TABLE_SIZES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha3::Digest;

/// One fixed-point unit in the last place.
const ULP: f64 = 1e-9;
const GAS_RELATIVE_TOLERANCE: f64 = 0.15;
const GAS_SWEEP_BUDGET: Duration = Duration::from_secs(10);
const ORACLE_BUDGET: Duration = Duration::from_secs(5);
const SHAPLEY_BUDGET: Duration = Duration::from_secs(10);
const SCORE_ULPS: f64 = 4.0;
const CONVERGENCE_REDUCTION: f64 = 0.5;

/// Reference gas table: register, submit, aggregate, validate, distribute per size.
const TABLE: [(u64, [u64; 5]); 5] = [
    (10, [45_373, 393_262, 499_660, 512_769, 219_961]),
    (100, [45_373, 2_403_817, 3_891_311, 2_153_970, 219_961]),
    (1_000, [45_373, 22_866_722, 37_893_125, 18_609_485, 219_961]),
    (10_000, [45_373, 229_065_242, 386_438_410, 187_515_227, 219_961]),
    (100_000, [45_373, 2_447_670_138, 4_724_606_105, 2_311_631_243, 219_961]),
];
const REFERENCE_DEPLOYMENT_GAS: u64 = 2_371_244;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let elapsed = start.elapsed();
    ensure(elapsed < budget, || format!("took {elapsed:?}, budget {budget:?}"))?;
    Ok(elapsed)
}

fn ac1_gas_table() -> Outcome {
    let start = Instant::now();
    let rows = gas_sweep(&ScenarioConfig::default(), &TABLE_SIZES).map_err(|e| e.to_string())?;
    let elapsed = within_budget(start, GAS_SWEEP_BUDGET)?;
    let mut worst = 0.0f64;
    for (row, (size, expected)) in rows.iter().zip(TABLE) {
        ensure(row.param_size == size, || format!("row for {} where {size} expected", row.param_size))?;
        ensure(row.register == expected[0], || format!("register at {size}: {}", row.register))?;
        ensure(row.distribute == expected[4], || format!("distribute at {size}: {}", row.distribute))?;
        for (k, class) in [OpClass::Submit, OpClass::Aggregate, OpClass::Validate].into_iter().enumerate() {
            let reference = expected[k + 1] as f64;
            let rel = (row.get(class) as f64 - reference).abs() / reference;
            worst = worst.max(rel);
            ensure(rel <= GAS_RELATIVE_TOLERANCE, || {
                format!("{class} at {size}: {} vs {reference} ({:.1}%)", row.get(class), rel * 100.0)
            })?;
        }
    }
    Ok(format!("15 cells within {:.1}% (worst), sweep {elapsed:.2?}", worst * 100.0))
}

fn ac2_deployment() -> Outcome {
    ensure(DEPLOYMENT_GAS == REFERENCE_DEPLOYMENT_GAS, || format!("constant is {DEPLOYMENT_GAS}"))?;
    let ledger = Ledger::genesis(ContractConfig::default(), 10, GasModel::default(), None).map_err(|e| e.to_string())?;
    let receipt = &ledger.blocks()[0].receipts[0];
    ensure(receipt.gas_used == REFERENCE_DEPLOYMENT_GAS, || format!("genesis receipt charged {}", receipt.gas_used))?;
    Ok(format!("genesis receipt gas {}", receipt.gas_used))
}

fn random_fixed(rng: &mut impl Rng, bound: f64) -> Fixed {
    Fixed::from_f64(rng.random_range(-bound..bound)).expect("in range")
}

fn random_vector(rng: &mut impl Rng, dim: usize) -> GradientVector {
    GradientVector::new((0..dim).map(|_| random_fixed(rng, 1.0)).collect()).expect("nonempty")
}

/// One random multi-round instance checked against `f64` oracles.
fn ac3_instance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    const ROUNDS: u64 = 3;
    let n_clients = rng.random_range(1..=8usize);
    let dim = rng.random_range(1..=16usize);
    // Random updates routinely score negative; bans are exercised by AC7, so
    // keep every client in the aggregate here.
    let config = ContractConfig { ban_threshold: u32::MAX, ..ContractConfig::default() };
    let mut coordinator = Coordinator::deploy(config, dim).map_err(|e| e.to_string())?;
    let clients: Vec<(ClientId, u64)> =
        (0..n_clients).map(|i| (ClientId::from_index(i as u64), rng.random_range(1..=100u64))).collect();
    for (id, n) in &clients {
        coordinator.register(*id, 1_000, *n).map_err(|e| e.to_string())?;
    }
    let mut cumulative_oracle: BTreeMap<ClientId, f64> = BTreeMap::new();
    let mut cumulative: BTreeMap<ClientId, Fixed> = BTreeMap::new();
    for round in 1..=ROUNDS {
        let updates: Vec<GradientVector> = clients.iter().map(|_| random_vector(rng, dim)).collect();
        for ((id, _), g) in clients.iter().zip(&updates) {
            coordinator.submit_update(*id, round, g.components(), 0, 1).map_err(|e| e.to_string())?;
        }
        coordinator.validate_round(round).map_err(|e| e.to_string())?;
        coordinator.score_and_reward_round(round).map_err(|e| e.to_string())?;
        coordinator.aggregate_round(round).map_err(|e| e.to_string())?;
        let state = coordinator.round(round).expect("current round").clone();
        let aggregate = state.aggregate.clone().expect("aggregated");

        let total: f64 = clients.iter().map(|(_, n)| *n as f64).sum();
        for k in 0..dim {
            let oracle: f64 = clients
                .iter()
                .zip(&updates)
                .map(|((_, n), g)| *n as f64 * g.components()[k].to_f64())
                .sum::<f64>()
                / total;
            let err = (aggregate.components()[k].to_f64() - oracle).abs();
            ensure(err <= 2.0 * dim as f64 * ULP, || format!("aggregate[{k}] off by {err:e}"))?;
        }
        let agg = aggregate.to_f64s();
        for ((id, n), g) in clients.iter().zip(&updates) {
            let dot: f64 = g.to_f64s().iter().zip(&agg).map(|(a, b)| a * b).sum();
            let oracle = dot * *n as f64 / total;
            let got = state.scores[id];
            ensure((got.to_f64() - oracle).abs() <= SCORE_ULPS * ULP, || {
                format!("score {got} vs oracle {oracle}")
            })?;
            *cumulative_oracle.entry(*id).or_default() += oracle;
            let slot = cumulative.entry(*id).or_insert(Fixed::ZERO);
            *slot = slot.checked_add(got).map_err(|e| e.to_string())?;
        }
        coordinator.close_round(round).map_err(|e| e.to_string())?;
    }

    let history = coordinator.score_history();
    let onchain = fedchain::incentives::cumulative_scores(&history, ROUNDS, clients.iter().map(|(id, _)| *id))
        .map_err(|e| e.to_string())?;
    ensure(onchain == cumulative, || "cumulative scores differ from per-round sums".into())?;
    for (id, total) in &onchain {
        let err = (total.to_f64() - cumulative_oracle[id]).abs();
        ensure(err <= SCORE_ULPS * ULP, || format!("cumulative off by {err:e}"))?;
    }

    let alpha = Fixed::from_f64(rng.random_range(0.0..2.0)).expect("in range");
    let mut weights = BTreeMap::new();
    for (id, total) in &onchain {
        let participation = Fixed::from_f64(rng.random_range(0.0..=1.0)).expect("in range");
        let reward = consistency_adjusted_reward(*total, alpha, participation).map_err(|e| e.to_string())?;
        let oracle = total.to_f64() * (1.0 + alpha.to_f64() * participation.to_f64());
        ensure((reward.to_f64() - oracle).abs() <= SCORE_ULPS * ULP, || {
            format!("reward {reward} vs oracle {oracle}")
        })?;
        weights.insert(*id, reward);
    }
    let pool = 1_000_000u128;
    let payouts = proportional_split(pool, &weights);
    let positive: f64 = weights.values().filter(|w| w.is_positive()).map(|w| w.to_f64()).sum();
    for (id, paid) in &payouts {
        let w = weights[id];
        let oracle = if w.is_positive() { pool as f64 * w.to_f64() / positive } else { 0.0 };
        ensure((*paid as f64 - oracle).abs() < 1.0 + 1e-6, || format!("payout {paid} vs oracle {oracle}"))?;
    }
    Ok(())
}

fn ac3_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xac3);
    for i in 0..100 {
        ac3_instance(&mut rng).map_err(|e| format!("instance {i}: {e}"))?;
    }
    let elapsed = within_budget(start, ORACLE_BUDGET)?;
    Ok(format!("100 instances, {elapsed:.2?}"))
}

/// Shapley values by averaging marginals over all n! orderings, in `f64`.
fn permutation_oracle(players: &[ClientId], value: &dyn Fn(&[ClientId]) -> f64) -> BTreeMap<ClientId, f64> {
    fn permute(
        order: &mut Vec<usize>,
        k: usize,
        players: &[ClientId],
        value: &dyn Fn(&[ClientId]) -> f64,
        acc: &mut [f64],
    ) {
        if k == order.len() {
            let mut coalition: Vec<ClientId> = Vec::new();
            let mut before = value(&coalition);
            for &p in order.iter() {
                coalition.push(players[p]);
                coalition.sort();
                let after = value(&coalition);
                acc[p] += after - before;
                before = after;
            }
            return;
        }
        for i in k..order.len() {
            order.swap(k, i);
            permute(order, k + 1, players, value, acc);
            order.swap(k, i);
        }
    }
    let n = players.len();
    let mut acc = vec![0.0; n];
    permute(&mut (0..n).collect(), 0, players, value, &mut acc);
    let orderings: f64 = (1..=n).map(|k| k as f64).product();
    players.iter().zip(acc).map(|(p, a)| (*p, a / orderings)).collect()
}

struct Game {
    players: Vec<ClientId>,
    values: BTreeMap<Vec<ClientId>, Fixed>,
    symmetric_pair: Option<(ClientId, ClientId)>,
    dummy: Option<ClientId>,
}

/// A random game where players sharing a type are interchangeable and the
/// untyped player (if any) never changes a coalition's value.
fn random_game(rng: &mut ChaCha8Rng) -> Game {
    let n = rng.random_range(2..=8usize);
    let players: Vec<ClientId> = (0..n).map(|i| ClientId::from_index(i as u64)).collect();
    let mut types: Vec<Option<usize>> = (0..n).map(Some).collect();
    types[1] = Some(0);
    let dummy = (n >= 3).then(|| {
        types[n - 1] = None;
        players[n - 1]
    });
    let mut by_profile: BTreeMap<Vec<usize>, Fixed> = BTreeMap::new();
    let mut values = BTreeMap::new();
    for mask in 0u32..(1 << n) {
        let coalition: Vec<ClientId> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| players[i]).collect();
        let mut profile = vec![0usize; n];
        (0..n).filter(|i| mask & (1 << i) != 0).filter_map(|i| types[i]).for_each(|t| profile[t] += 1);
        let value = if profile.iter().all(|c| *c == 0) {
            Fixed::ZERO
        } else {
            *by_profile.entry(profile).or_insert_with(|| random_fixed(rng, 10.0))
        };
        values.insert(coalition, value);
    }
    Game { players: players.clone(), values, symmetric_pair: Some((players[0], players[1])), dummy }
}

fn alignment_game(rng: &mut ChaCha8Rng) -> Game {
    let n = rng.random_range(2..=8usize);
    let dim = rng.random_range(1..=6usize);
    let submissions: BTreeMap<ClientId, GradientVector> =
        (0..n).map(|i| (ClientId::from_index(i as u64), random_vector(rng, dim))).collect();
    let counts: BTreeMap<ClientId, u64> = submissions.keys().map(|id| (*id, rng.random_range(1..50))).collect();
    let game = AlignmentGame::new(&submissions, &counts).expect("valid game");
    let players = game.players();
    let mut values = BTreeMap::new();
    for mask in 0u32..(1 << n) {
        let coalition: Vec<ClientId> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| players[i]).collect();
        values.insert(coalition.clone(), game.value(&coalition).expect("value"));
    }
    Game { players, values, symmetric_pair: None, dummy: None }
}

fn ac4_shapley() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xac4);
    let mut worst_ulps = 0.0f64;
    for g in 0..50 {
        let game = if g % 5 == 4 { alignment_game(&mut rng) } else { random_game(&mut rng) };
        let n = game.players.len() as f64;
        let tol = 4.0 * n * ULP;
        let phi = shapley_exact(&game.players, "table", |s| Ok(game.values[s])).map_err(|e| e.to_string())?;
        let oracle = permutation_oracle(&game.players, &|s| game.values[s].to_f64());
        for (id, value) in &phi.values {
            let err = (value.to_f64() - oracle[id]).abs();
            worst_ulps = worst_ulps.max(err / ULP);
            ensure(err <= tol, || format!("game {g}: φ off the permutation oracle by {err:e}"))?;
        }
        let sum: f64 = phi.values.values().map(|v| v.to_f64()).sum();
        let grand = game.values[&game.players].to_f64();
        ensure((sum - grand).abs() <= tol, || format!("game {g}: efficiency gap {:e}", sum - grand))?;
        if let Some((a, b)) = game.symmetric_pair {
            let gap = (phi.values[&a].to_f64() - phi.values[&b].to_f64()).abs();
            ensure(gap <= 4.0 * ULP, || format!("game {g}: symmetric players differ by {gap:e}"))?;
        }
        if let Some(d) = game.dummy {
            let v = phi.values[&d].to_f64().abs();
            ensure(v <= 4.0 * ULP, || format!("game {g}: dummy player got {v:e}"))?;
        }
    }
    let elapsed = within_budget(start, SHAPLEY_BUDGET)?;
    Ok(format!("50 games, worst deviation {worst_ulps:.1} ulps, {elapsed:.2?}"))
}

fn ac5_keccak() -> Outcome {
    let oracle = |data: &[u8]| -> [u8; 32] { sha3::Keccak256::digest(data).into() };
    ensure(keccak256(b"") == oracle(b""), || "empty input".into())?;
    ensure(keccak256(b"abc") == oracle(b"abc"), || "\"abc\"".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xac5);
    for i in 0..100 {
        let len = rng.random_range(0..=1024usize);
        let data: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        ensure(keccak256(&data) == oracle(&data), || format!("random input {i} (len {len})"))?;
    }
    Ok(format!("empty = {}…, abc, 100 random inputs", &hex::encode(keccak256(b""))[..12]))
}

fn scenario(behaviors: Vec<ClientBehavior>, rounds: u64) -> ScenarioConfig {
    let mut config = ScenarioConfig { rounds, ..ScenarioConfig::default() };
    config.dataset.n_clients = behaviors.len();
    config.dataset.samples_per_client = vec![50; behaviors.len()];
    config.dataset.behaviors = behaviors;
    config
}

fn ac6_checkpoint_integrity() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut behaviors = vec![ClientBehavior::Honest; 4];
    behaviors.push(ClientBehavior::Negator);
    let outcome = run(&scenario(behaviors, 10), tmp.path()).map_err(|e| e.to_string())?;
    let dir = outcome.dir.expect("artifacts written");
    let clean = audit(&dir).map_err(|e| e.to_string())?;
    ensure(clean.is_ok(), || format!("clean run failed audit: {:?}", clean.findings))?;
    ensure(clean.checkpoints.len() == 2, || format!("{} checkpoints", clean.checkpoints.len()))?;
    ensure(clean.checkpoints.iter().all(|c| c.verdict.is_ok() && c.cumulative_matches), || {
        "checkpoint not verified".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xac6);
    let mut mutations = 0;
    for entry in fs::read_dir(dir.join("blobs")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let original = fs::read(&path).map_err(|e| e.to_string())?;
        for _ in 0..8 {
            let mut bytes = original.clone();
            let pos = rng.random_range(0..bytes.len());
            bytes[pos] ^= rng.random_range(1..=255u8);
            fs::write(&path, &bytes).map_err(|e| e.to_string())?;
            let report = audit(&dir).map_err(|e| e.to_string())?;
            ensure(report.checkpoints.iter().any(|c| !c.verdict.is_ok()), || {
                format!("mutation at byte {pos} of {} went undetected", path.display())
            })?;
            mutations += 1;
        }
        fs::write(&path, &original).map_err(|e| e.to_string())?;
    }
    Ok(format!("2 checkpoints verified, {mutations} single-byte mutations detected"))
}

fn ac7_adversary() -> Outcome {
    let mut behaviors = vec![ClientBehavior::Honest; 5];
    behaviors.push(ClientBehavior::Negator);
    let mut config = scenario(behaviors, 10);
    config.ban_threshold = 3;
    config.slash_fraction = 0.5;
    let outcome = run_in_memory(&config).map_err(|e| e.to_string())?;
    let clients = &outcome.report.clients;
    let negator = &clients[5];
    let banned = negator.banned_in_round.ok_or("negator never banned")?;
    ensure(banned <= 4, || format!("negator banned in round {banned}"))?;
    let expected_stake = negator.initial_stake - negator.initial_stake / 2;
    ensure(negator.final_stake == expected_stake, || format!("negator stake {}", negator.final_stake))?;
    ensure(negator.total_payout == 0, || format!("negator earned {}", negator.total_payout))?;
    let honest_min = clients[..5].iter().map(|c| c.total_payout).min().unwrap_or(0);
    ensure(honest_min > 0, || "an honest client earned nothing".into())?;
    Ok(format!(
        "negator banned in round {banned}, stake {} -> {}, honest minimum payout {honest_min}",
        negator.initial_stake, negator.final_stake
    ))
}

fn ac8_convergence() -> Outcome {
    let outcome = run_in_memory(&scenario(vec![ClientBehavior::Honest; 3], 20)).map_err(|e| e.to_string())?;
    let first = outcome.distances[0];
    let last = *outcome.distances.last().expect("20 rounds");
    let reduction = 1.0 - last / first;
    ensure(reduction >= CONVERGENCE_REDUCTION, || format!("distance {first:.4} -> {last:.4}"))?;
    Ok(format!("distance {first:.4} -> {last:.4} ({:.0}% reduction)", reduction * 100.0))
}

fn ac9_determinism() -> Outcome {
    let mut adversarial = scenario(
        vec![
            ClientBehavior::Honest,
            ClientBehavior::Honest,
            ClientBehavior::Negator,
            ClientBehavior::Scaler(1_000.0),
            ClientBehavior::Dropout(0.6),
        ],
        10,
    );
    adversarial.reward_basis = fedchain::coordinator::RewardBasis::Shapley;
    for (name, config) in [("honest", scenario(vec![ClientBehavior::Honest; 4], 10)), ("adversarial", adversarial)] {
        let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
        let ra = run(&config, a.path()).map_err(|e| e.to_string())?;
        let rb = run(&config, b.path()).map_err(|e| e.to_string())?;
        let (da, db) = (ra.dir.clone().expect("written"), rb.dir.clone().expect("written"));
        for file in ["report.json", "gas.csv", "rewards.csv", "ledger.bin", "attribution.jsonl"] {
            let same = fs::read(da.join(file)).ok() == fs::read(db.join(file)).ok();
            ensure(same, || format!("{name}: {file} differs between runs"))?;
        }
        let hashes = |o: &fedchain::scenario::RunOutcome| -> Vec<[u8; 32]> {
            o.ledger.blocks().iter().map(|b| b.header.hash).collect()
        };
        ensure(hashes(&ra) == hashes(&rb), || format!("{name}: block hashes differ"))?;
    }
    Ok("report.json, gas.csv and block hashes identical across runs (2 scenarios)".into())
}

fn ac10_conservation() -> Outcome {
    let mut configs = vec![
        scenario(vec![ClientBehavior::Honest; 4], 10),
        scenario(vec![ClientBehavior::Honest, ClientBehavior::Negator, ClientBehavior::Freerider], 8),
        scenario(vec![ClientBehavior::Dropout(0.3); 3], 10),
    ];
    let mut shapley = scenario(vec![ClientBehavior::Honest, ClientBehavior::Honest, ClientBehavior::Negator], 6);
    shapley.reward_basis = fedchain::coordinator::RewardBasis::Shapley;
    configs.push(shapley);
    let mut rounds_checked = 0;
    for (i, config) in configs.iter().enumerate() {
        let report = run_in_memory(config).map_err(|e| e.to_string())?.report;
        let pool = config.reward_pool_per_round;
        let total: u128 = report.rounds.iter().flat_map(|r| &r.payouts).map(|(_, p)| p).sum();
        ensure(total <= config.rounds as u128 * pool, || format!("run {i}: paid {total}"))?;
        for round in &report.rounds {
            let paid: u128 = round.payouts.iter().map(|(_, p)| p).sum();
            let any_positive = round.scores.iter().any(|(_, s)| s.is_positive());
            ensure(paid <= pool, || format!("run {i} round {}: paid {paid}", round.round))?;
            ensure(!any_positive || paid == pool, || format!("run {i} round {}: paid {paid} of {pool}", round.round))?;
            rounds_checked += 1;
        }
    }
    Ok(format!("{} runs, {rounds_checked} rounds conserve the pool", configs.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("AC1", "gas table structure", ac1_gas_table),
        ("AC2", "deployment gas", ac2_deployment),
        ("AC3", "round-loop oracle equivalence", ac3_oracle_equivalence),
        ("AC4", "Shapley exactness", ac4_shapley),
        ("AC5", "Keccak-256 conformance", ac5_keccak),
        ("AC6", "fairness-checkpoint integrity", ac6_checkpoint_integrity),
        ("AC7", "adversary economics", ac7_adversary),
        ("AC8", "convergence", ac8_convergence),
        ("AC9", "determinism", ac9_determinism),
        ("AC10", "reward conservation", ac10_conservation),
    ];
    let mut failures = 0;
    for (id, name, check) in criteria {
        match check() {
            Ok(detail) => println!("{id:<5} PASS  {name}: {detail}"),
            Err(reason) => {
                failures += 1;
                println!("{id:<5} FAIL  {name}: {reason}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
