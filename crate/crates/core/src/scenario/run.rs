use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::{build_report, report_bytes, rewards_csv, RunReport};
use super::sweep::gas_csv;
use super::{Result, ScenarioConfig, ScenarioError};
use crate::flclients::ClientFleet;
use crate::ids::ClientId;
use crate::incentives::{cumulative_scores, AlignmentGame, MAX_SHAPLEY_CLIENTS};
use crate::ledger::{Ledger, Receipt, Status};
use crate::numerics::Fixed;
use crate::offchain::{publish_checkpoint, ContentStore, FairnessCheckpoint};

/// One line of `attribution.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub round: u64,
    pub client: ClientId,
    #[serde(rename = "S")]
    pub score: Fixed,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<Fixed>,
    pub cumulative: Fixed,
    /// Consistency multiplier in force when the round was paid.
    pub multiplier: Fixed,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    /// Output directory, when artifacts were written.
    pub dir: Option<PathBuf>,
    pub ledger: Ledger,
    pub store: ContentStore,
    pub report: RunReport,
    pub attribution: Vec<AttributionRecord>,
    pub checkpoints: Vec<FairnessCheckpoint>,
    /// Distance of the global model to the ground truth, before round 1 and
    /// after every round.
    pub distances: Vec<f64>,
}

fn require_success(receipt: &Receipt, what: &str) -> Result<()> {
    match &receipt.status {
        Status::Success => Ok(()),
        Status::Reverted(reason) => Err(ScenarioError::Runtime(format!("{what} reverted: {reason}"))),
    }
}

/// Runs the whole scenario without touching the filesystem.
pub fn run_in_memory(config: &ScenarioConfig) -> Result<RunOutcome> {
    config.validate()?;
    let per_round_blocks = config.txs_per_block.is_none();
    let fleet = ClientFleet::new(config.dataset.clone())?;
    let mut ledger =
        Ledger::genesis(config.contract_config()?, config.dataset.dim, config.gas, config.txs_per_block)?;
    let mut store = ContentStore::new();

    let members: Vec<ClientId> = fleet.members().map(|(id, _, _)| id).collect();
    for (id, n_samples, _) in fleet.members() {
        require_success(&ledger.register(id, config.stake, n_samples)?, "registration")?;
    }
    if per_round_blocks {
        ledger.seal_block();
    }

    let mut distances = vec![fleet.distance_to_optimum(&ledger.coordinator().model().weights)];
    let mut running: BTreeMap<ClientId, Fixed> = members.iter().map(|id| (*id, Fixed::ZERO)).collect();
    let mut attribution = Vec::new();
    let mut checkpoints = Vec::new();

    for round in 1..=config.rounds {
        let coordinator = ledger.coordinator();
        let model = coordinator.model().weights.clone();
        let multipliers: BTreeMap<ClientId, Fixed> =
            members.iter().map(|id| (*id, coordinator.multiplier(id))).collect();
        let outputs = fleet.round(round, &model, config.local_epochs, config.learning_rate, |id| {
            coordinator.client(id).is_some_and(|c| !c.banned)
        })?;

        for output in &outputs {
            let Some(update) = &output.submitted else { continue };
            let receipts = ledger.submit_update(output.id, round, update, config.batch_size)?;
            if let Some(Status::Reverted(reason)) = receipts.last().map(|r| &r.status) {
                log::warn!("round {round}: submission from {} reverted: {reason}", output.id);
            }
        }

        if !ledger.coordinator().current_round().submissions.is_empty() {
            require_success(&ledger.validate_round(round), "validation")?;
            require_success(&ledger.score_and_reward_round(round), "scoring")?;
            if !ledger.coordinator().aggregatable().is_empty() {
                require_success(&ledger.aggregate_round(round), "aggregation")?;
            }
        }
        require_success(&ledger.close_round(round), "round close")?;

        let state = ledger.coordinator().round(round).expect("closed round is kept");
        let phi = shapley_for(&ledger, round);
        for (id, score) in &state.scores {
            let total = running.entry(*id).or_insert(Fixed::ZERO);
            *total = total.checked_add(*score).map_err(|e| ScenarioError::Runtime(e.to_string()))?;
            attribution.push(AttributionRecord {
                round,
                client: *id,
                score: *score,
                phi: phi.as_ref().and_then(|p| p.get(id).copied()),
                cumulative: *total,
                multiplier: multipliers[id],
            });
        }
        log::info!(
            "round {round}: {} submissions, {} accepted, paid {}",
            state.submissions.len(),
            state.accepted().count(),
            state.total_payout()
        );

        if round % config.fairness_interval == 0 {
            let coordinator = ledger.coordinator();
            let eligible: Vec<ClientId> =
                coordinator.clients().filter(|c| c.registered_round <= round).map(|c| c.id).collect();
            let cumulative = cumulative_scores(&coordinator.score_history(), round, eligible)
                .map_err(|e| ScenarioError::Runtime(e.to_string()))?;
            let list: Vec<(ClientId, Fixed)> = cumulative.into_iter().collect();
            checkpoints.push(publish_checkpoint(&mut store, &mut ledger, round, &list)?);
        }
        if per_round_blocks {
            ledger.seal_block();
        }
        distances.push(fleet.distance_to_optimum(&ledger.coordinator().model().weights));
    }
    if !per_round_blocks && ledger.pending().next().is_some() {
        ledger.seal_block();
    }

    let report = build_report(&ledger.dump(), &store)?;
    Ok(RunOutcome {
        run_id: config.run_id(),
        dir: None,
        ledger,
        store,
        report,
        attribution,
        checkpoints,
        distances,
    })
}

/// Exact Shapley attribution over the round's accepted submissions, when the
/// cohort is small enough to enumerate.
fn shapley_for(ledger: &Ledger, round: u64) -> Option<BTreeMap<ClientId, Fixed>> {
    let coordinator = ledger.coordinator();
    let state = coordinator.round(round)?;
    let accepted: BTreeMap<ClientId, _> = state.accepted().map(|(id, g)| (*id, g.clone())).collect();
    if accepted.is_empty() || accepted.len() > MAX_SHAPLEY_CLIENTS {
        return None;
    }
    let counts = accepted.keys().map(|id| (*id, coordinator.client(id).map_or(1, |c| c.n_samples))).collect();
    let game = AlignmentGame::new(&accepted, &counts).ok()?;
    game.shapley().ok().map(|a| a.values)
}

/// Runs the scenario and writes every artifact under `out_root/<run-id>/`.
pub fn run(config: &ScenarioConfig, out_root: &Path) -> Result<RunOutcome> {
    let mut outcome = run_in_memory(config)?;
    let dir = out_root.join(&outcome.run_id);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("ledger.bin"), outcome.ledger.dump().to_bytes())?;
    outcome.store.save(&dir.join("blobs"))?;
    fs::write(dir.join("report.json"), report_bytes(&outcome.report))?;
    fs::write(dir.join("gas.csv"), gas_csv(std::slice::from_ref(&outcome.report.gas)))?;
    fs::write(dir.join("rewards.csv"), rewards_csv(&outcome.report))?;
    let mut lines = String::new();
    for record in &outcome.attribution {
        lines.push_str(&serde_json::to_string(record).expect("record serializes"));
        lines.push('\n');
    }
    fs::write(dir.join("attribution.jsonl"), lines)?;
    let mut convergence = String::from("round,distance_to_optimum\n");
    for (round, d) in outcome.distances.iter().enumerate() {
        convergence.push_str(&format!("{round},{d}\n"));
    }
    fs::write(dir.join("convergence.csv"), convergence)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config).expect("config serializes") + "\n")?;
    log::info!("wrote run {} to {}", outcome.run_id, dir.display());
    outcome.dir = Some(dir);
    Ok(outcome)
}
