//! The run report: a pure view over the persisted ledger and blob store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::audit::{checkpoint_audits, scores_from_events, CheckpointAudit};
use super::{Result, ScenarioError};
use crate::coordinator::{Call, Event, Verdict};
use crate::ids::{hex32, ClientId, Hash32};
use crate::ledger::gas::OpClass;
use crate::ledger::LedgerDump;
use crate::numerics::Fixed;
use crate::offchain::ContentStore;

/// One row of the gas table, in the column order of the exported CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasRow {
    pub param_size: u64,
    pub register: u64,
    pub submit: u64,
    pub aggregate: u64,
    pub validate: u64,
    pub distribute: u64,
}

impl GasRow {
    pub fn get(&self, class: OpClass) -> u64 {
        match class {
            OpClass::Register => self.register,
            OpClass::Submit => self.submit,
            OpClass::Aggregate => self.aggregate,
            OpClass::Validate => self.validate,
            OpClass::Distribute => self.distribute,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub height: u64,
    #[serde(with = "hex32")]
    pub head_hash: Hash32,
    #[serde(with = "hex32")]
    pub state_root: Hash32,
    pub transactions: u64,
    pub reverted: u64,
    pub total_gas: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub submitters: Vec<ClientId>,
    pub accepted: Vec<ClientId>,
    pub rejected: Vec<(ClientId, Verdict)>,
    pub scores: Vec<(ClientId, Fixed)>,
    pub payouts: Vec<(ClientId, u128)>,
    pub banned: Vec<ClientId>,
    pub slashed: u128,
    /// Updates averaged into the global model (0 if the round did not aggregate).
    pub contributors: u64,
    pub gas_used: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub id: ClientId,
    pub n_samples: u64,
    pub initial_stake: u128,
    pub final_stake: u128,
    pub total_payout: u128,
    pub cumulative_score: Fixed,
    pub rounds_scored: u64,
    pub banned_in_round: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds_closed: u64,
    pub reward_pool_per_round: u128,
    pub total_paid: u128,
    pub total_slashed: u128,
    /// Every round paid out exactly the pool, or nothing when no score was positive.
    pub reward_conservation: bool,
    pub checkpoints_verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub chain: ChainSummary,
    /// Mean gas per operation, in gas-table layout.
    pub gas: GasRow,
    pub rounds: Vec<RoundRecord>,
    pub clients: Vec<ClientSummary>,
    pub checkpoints: Vec<CheckpointAudit>,
    pub summary: Summary,
}

fn call_round(call: &Call) -> Option<u64> {
    match call {
        Call::Deploy { .. } | Call::Register { .. } => None,
        Call::SubmitUpdate { round, .. }
        | Call::ValidateRound { round }
        | Call::ScoreAndReward { round }
        | Call::AggregateRound { round }
        | Call::CloseRound { round }
        | Call::RecordCheckpoint { round, .. } => Some(*round),
    }
}

fn round_entry(rounds: &mut BTreeMap<u64, RoundRecord>, round: u64) -> &mut RoundRecord {
    rounds.entry(round).or_insert_with(|| RoundRecord { round, ..Default::default() })
}

fn mean(total: u64, count: u64) -> u64 {
    total.checked_div(count).unwrap_or(0)
}

fn gas_row(dump: &LedgerDump, dim: u64) -> GasRow {
    let mut totals: BTreeMap<OpClass, (u64, u64)> = BTreeMap::new();
    let mut uploads = BTreeSet::new();
    for (tx, receipt) in dump.executions() {
        let Some(class) = receipt.gas_class else { continue };
        let slot = totals.entry(class).or_default();
        slot.0 += receipt.gas_used;
        match &tx.call {
            // A multi-batch upload counts as one submit operation.
            Call::SubmitUpdate { round, .. } => {
                uploads.insert((tx.sender, *round));
            }
            _ => slot.1 += 1,
        }
    }
    if let Some(slot) = totals.get_mut(&OpClass::Submit) {
        slot.1 = uploads.len() as u64;
    }
    let per_op = |class| totals.get(&class).map_or(0, |(t, c)| mean(*t, *c));
    GasRow {
        param_size: dim,
        register: per_op(OpClass::Register),
        submit: per_op(OpClass::Submit),
        aggregate: per_op(OpClass::Aggregate),
        validate: per_op(OpClass::Validate),
        distribute: per_op(OpClass::Distribute),
    }
}

/// Builds the report from the ledger and blob store alone.
pub fn build_report(dump: &LedgerDump, store: &ContentStore) -> Result<RunReport> {
    let (dim, config, _) =
        dump.genesis().ok_or_else(|| ScenarioError::Runtime("ledger has no genesis deployment".into()))?;
    let pool = config.reward_pool;
    let head = dump.blocks.last().expect("genesis exists").header.clone();

    let mut rounds: BTreeMap<u64, RoundRecord> = BTreeMap::new();
    let mut clients: BTreeMap<ClientId, ClientSummary> = BTreeMap::new();
    let (mut transactions, mut reverted, mut total_gas) = (0u64, 0u64, 0u64);
    let mut rounds_closed = 0;

    for (tx, receipt) in dump.executions() {
        transactions += 1;
        total_gas += receipt.gas_used;
        if !receipt.is_success() {
            reverted += 1;
        }
        if let Some(round) = call_round(&tx.call) {
            round_entry(&mut rounds, round).gas_used += receipt.gas_used;
        }
        if !receipt.is_success() {
            continue;
        }
        for event in &receipt.events {
            match event {
                Event::ClientRegistered { id, stake, n_samples } => {
                    clients.insert(
                        *id,
                        ClientSummary {
                            id: *id,
                            n_samples: *n_samples,
                            initial_stake: *stake,
                            final_stake: *stake,
                            total_payout: 0,
                            cumulative_score: Fixed::ZERO,
                            rounds_scored: 0,
                            banned_in_round: None,
                        },
                    );
                }
                Event::UpdatesValidated { round, verdicts } => {
                    let r = round_entry(&mut rounds, *round);
                    for (id, verdict) in verdicts {
                        r.submitters.push(*id);
                        if *verdict == Verdict::Accepted {
                            r.accepted.push(*id);
                        } else {
                            r.rejected.push((*id, *verdict));
                        }
                    }
                }
                Event::AlignmentScoresUpdated { round, scores } => {
                    let r = round_entry(&mut rounds, *round);
                    r.scores = scores.clone();
                    for (id, _) in scores {
                        if let Some(c) = clients.get_mut(id) {
                            c.rounds_scored += 1;
                        }
                    }
                }
                Event::RewardsDistributed { round, payouts } => {
                    let r = round_entry(&mut rounds, *round);
                    r.payouts = payouts.clone();
                    for (id, amount) in payouts {
                        if let Some(c) = clients.get_mut(id) {
                            c.total_payout += amount;
                        }
                    }
                }
                Event::ClientBanned { id, round } => {
                    let r = round_entry(&mut rounds, *round);
                    r.banned.push(*id);
                    if let Some(c) = clients.get_mut(id) {
                        c.banned_in_round = Some(*round);
                    }
                }
                Event::StakeSlashed { id, round, amount } => {
                    let r = round_entry(&mut rounds, *round);
                    r.slashed += amount;
                    if let Some(c) = clients.get_mut(id) {
                        c.final_stake = c.final_stake.saturating_sub(*amount);
                    }
                }
                Event::GlobalModelUpdated { round, contributors } => {
                    let r = round_entry(&mut rounds, *round);
                    r.contributors = *contributors;
                }
                Event::RoundClosed { .. } => rounds_closed += 1,
                Event::ContractDeployed { .. }
                | Event::UpdateSubmitted { .. }
                | Event::FairnessCheckpoint { .. }
                | Event::MultipliersUpdated { .. } => {}
            }
        }
    }

    let cumulative = scores_from_events(dump, u64::MAX);
    for (id, total) in cumulative {
        if let Some(c) = clients.get_mut(&id) {
            c.cumulative_score = total;
        }
    }

    let checkpoints = checkpoint_audits(dump, store);
    let rounds: Vec<RoundRecord> = rounds.into_values().collect();
    let total_paid = rounds.iter().flat_map(|r| &r.payouts).map(|(_, p)| p).sum();
    let total_slashed = rounds.iter().map(|r| r.slashed).sum();
    let reward_conservation = rounds.iter().all(|r| {
        let paid: u128 = r.payouts.iter().map(|(_, p)| p).sum();
        let any_positive = r.scores.iter().any(|(_, s)| s.is_positive());
        paid == if any_positive { pool } else { 0 }
    });
    let checkpoints_verified = checkpoints.iter().all(|c| c.verdict.is_ok() && c.cumulative_matches);

    Ok(RunReport {
        chain: ChainSummary {
            height: dump.blocks.len() as u64,
            head_hash: head.hash,
            state_root: head.state_root,
            transactions,
            reverted,
            total_gas,
        },
        gas: gas_row(dump, dim),
        rounds,
        clients: clients.into_values().collect(),
        checkpoints,
        summary: Summary {
            rounds_closed,
            reward_pool_per_round: pool,
            total_paid,
            total_slashed,
            reward_conservation,
            checkpoints_verified,
        },
    })
}

/// Serialized form of the report as written to `report.json`.
pub fn report_bytes(report: &RunReport) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(report).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

/// `round,client,score,payout`, one row per scored client.
pub fn rewards_csv(report: &RunReport) -> String {
    let mut out = String::from("round,client,score,payout\n");
    for round in &report.rounds {
        let payouts: BTreeMap<_, _> = round.payouts.iter().copied().collect();
        for (id, score) in &round.scores {
            let payout = payouts.get(id).copied().unwrap_or(0);
            writeln!(out, "{},{},{},{}", round.round, id, score, payout).expect("writing to a string");
        }
    }
    out
}
