//! The coordinator contract: registration and staking, batched update
//! submission, validation, alignment rewards, FedAvg aggregation, fairness
//! checkpoints and slashing.
//!
//! Each round moves strictly forward through `open → scored → aggregated →
//! closed`. Every entry point checks all of its preconditions before touching
//! state, so a reverted call leaves the contract unchanged.

use std::collections::BTreeMap;

use ethnum::I256;
use serde::{Deserialize, Serialize};

use crate::encoding::Encoder;
use crate::ids::{ClientId, Hash32};
use crate::incentives::{
    alignment_score, consistency_adjusted_reward, participation_share, proportional_split,
    AlignmentGame, RoundScores,
};
use crate::ledger::gas::{GasModel, OpClass};
use crate::numerics::{weighted_mean, Fixed, GradientVector, NumericError, SCALE};
use crate::offchain::keccak256;

mod abi;

pub use abi::{Call, ContractError, Event, Verdict};

pub type Result<T> = std::result::Result<T, ContractError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardBasis {
    #[default]
    Alignment,
    Shapley,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractConfig {
    pub min_stake: u128,
    pub reward_pool: u128,
    /// Norm bound τ on submitted updates.
    pub tau: Fixed,
    /// Consecutive negative rounds (K) that trigger a ban.
    pub ban_threshold: u32,
    /// Fraction σ of stake slashed on ban.
    pub slash_fraction: Fixed,
    pub alpha: Fixed,
    /// Rounds between fairness checkpoints (F).
    pub fairness_interval: u64,
    pub reward_basis: RewardBasis,
}

impl Default for ContractConfig {
    fn default() -> Self {
        ContractConfig {
            min_stake: 1_000,
            reward_pool: 1_000_000,
            tau: Fixed::from_int(10),
            ban_threshold: 3,
            slash_fraction: Fixed::from_raw(SCALE / 2).expect("in range"),
            alpha: Fixed::from_raw(SCALE / 2).expect("in range"),
            fairness_interval: 5,
            reward_basis: RewardBasis::Alignment,
        }
    }
}

impl ContractConfig {
    pub(crate) fn encode(&self, enc: &mut Encoder) {
        enc.u128(self.min_stake)
            .u128(self.reward_pool)
            .fixed(self.tau)
            .u64(self.ban_threshold as u64)
            .fixed(self.slash_fraction)
            .fixed(self.alpha)
            .u64(self.fairness_interval)
            .u8(self.reward_basis as u8);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub id: ClientId,
    pub stake: u128,
    pub n_samples: u64,
    pub registered_round: u64,
    pub rounds_participated: u64,
    pub consecutive_negative: u32,
    pub banned: bool,
    /// Rewards credited so far.
    pub balance: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Open,
    Scored,
    Aggregated,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: u64,
    pub submissions: BTreeMap<ClientId, GradientVector>,
    pub verdicts: Option<BTreeMap<ClientId, Verdict>>,
    pub scores: RoundScores,
    pub aggregate: Option<GradientVector>,
    pub payouts: BTreeMap<ClientId, u128>,
    pub phase: Phase,
}

impl RoundState {
    fn open(round: u64) -> Self {
        RoundState {
            round,
            submissions: BTreeMap::new(),
            verdicts: None,
            scores: BTreeMap::new(),
            aggregate: None,
            payouts: BTreeMap::new(),
            phase: Phase::Open,
        }
    }

    pub fn accepted(&self) -> impl Iterator<Item = (&ClientId, &GradientVector)> {
        let verdicts = self.verdicts.as_ref();
        self.submissions
            .iter()
            .filter(move |(id, _)| verdicts.and_then(|v| v.get(id)) == Some(&Verdict::Accepted))
    }

    pub fn total_payout(&self) -> u128 {
        self.payouts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalModel {
    /// Current model parameters.
    pub weights: GradientVector,
    /// Last aggregated update.
    pub update: Option<GradientVector>,
    /// Round of the last aggregation (0 before any).
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub round: u64,
    pub cid: Hash32,
    pub integrity_hash: Hash32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingUpload {
    round: u64,
    batch_count: u32,
    received: Vec<Fixed>,
    batches: u32,
}

/// How a call is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GasCharge {
    Class(OpClass, u64),
    Base,
    Deployment,
}

impl GasCharge {
    pub fn amount(&self, gas: &GasModel) -> u64 {
        match *self {
            GasCharge::Class(class, params) => gas.charge_gas(class, params),
            GasCharge::Base => gas.base_tx,
            GasCharge::Deployment => gas.deployment,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Coordinator {
    config: ContractConfig,
    dim: usize,
    clients: BTreeMap<ClientId, ClientRecord>,
    model: GlobalModel,
    current: RoundState,
    history: Vec<RoundState>,
    uploads: BTreeMap<ClientId, PendingUpload>,
    participation: BTreeMap<ClientId, Fixed>,
    multipliers: BTreeMap<ClientId, Fixed>,
    checkpoints: Vec<CheckpointRecord>,
    slashed: u128,
}

impl Coordinator {
    /// Deploys with a zero-initialised global model of `dim` parameters.
    pub fn deploy(config: ContractConfig, dim: usize) -> Result<Self> {
        let weights = GradientVector::zeros(dim)?;
        Ok(Coordinator {
            config,
            dim,
            clients: BTreeMap::new(),
            model: GlobalModel { weights, update: None, version: 0 },
            current: RoundState::open(1),
            history: Vec::new(),
            uploads: BTreeMap::new(),
            participation: BTreeMap::new(),
            multipliers: BTreeMap::new(),
            checkpoints: Vec::new(),
            slashed: 0,
        })
    }

    pub fn config(&self) -> &ContractConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn client(&self, id: &ClientId) -> Option<&ClientRecord> {
        self.clients.get(id)
    }

    pub fn clients(&self) -> impl Iterator<Item = &ClientRecord> {
        self.clients.values()
    }

    pub fn is_registered(&self, id: &ClientId) -> bool {
        self.clients.contains_key(id)
    }

    pub fn model(&self) -> &GlobalModel {
        &self.model
    }

    pub fn current_round(&self) -> &RoundState {
        &self.current
    }

    pub fn round(&self, round: u64) -> Option<&RoundState> {
        if round == self.current.round {
            Some(&self.current)
        } else {
            self.history.get(round.checked_sub(1)? as usize)
        }
    }

    pub fn checkpoints(&self) -> &[CheckpointRecord] {
        &self.checkpoints
    }

    /// Multiplier `1 + α·C` applied to a client's payout weight this round.
    pub fn multiplier(&self, id: &ClientId) -> Fixed {
        self.multipliers.get(id).copied().unwrap_or(Fixed::ONE)
    }

    pub fn total_slashed(&self) -> u128 {
        self.slashed
    }

    /// Per-round scores for every round that has been scored.
    pub fn score_history(&self) -> BTreeMap<u64, RoundScores> {
        self.history
            .iter()
            .chain(std::iter::once(&self.current))
            .filter(|r| r.phase >= Phase::Scored)
            .map(|r| (r.round, r.scores.clone()))
            .collect()
    }

    /// Gas charge for `call` against the current state.
    pub fn gas_charge(&self, call: &Call) -> GasCharge {
        let dim = self.dim as u64;
        match call {
            Call::Deploy { .. } => GasCharge::Deployment,
            Call::Register { .. } => GasCharge::Class(OpClass::Register, 0),
            Call::SubmitUpdate { chunk, .. } => GasCharge::Class(OpClass::Submit, chunk.len() as u64),
            Call::ValidateRound { .. } => {
                GasCharge::Class(OpClass::Validate, dim * self.current.submissions.len() as u64)
            }
            Call::ScoreAndReward { .. } => GasCharge::Class(OpClass::Distribute, 0),
            Call::AggregateRound { .. } => {
                GasCharge::Class(OpClass::Aggregate, dim * self.aggregatable().len() as u64)
            }
            Call::CloseRound { .. } | Call::RecordCheckpoint { .. } => GasCharge::Base,
        }
    }

    /// Executes one call. On error the state is unchanged.
    pub fn execute(&mut self, sender: ClientId, call: &Call) -> Result<Vec<Event>> {
        if call.is_system() != sender.is_system() {
            return Err(ContractError::Unauthorized);
        }
        match call {
            Call::Deploy { .. } => Err(ContractError::AlreadyDeployed),
            Call::Register { stake, n_samples } => self.register(sender, *stake, *n_samples),
            Call::SubmitUpdate { round, batch_index, batch_count, chunk } => {
                self.submit_update(sender, *round, chunk, *batch_index, *batch_count)
            }
            Call::ValidateRound { round } => self.validate_round(*round),
            Call::ScoreAndReward { round } => self.score_and_reward_round(*round),
            Call::AggregateRound { round } => self.aggregate_round(*round),
            Call::CloseRound { round } => self.close_round(*round),
            Call::RecordCheckpoint { round, cid, integrity_hash } => {
                self.record_checkpoint(*round, *cid, *integrity_hash)
            }
        }
    }

    pub fn register(&mut self, id: ClientId, stake: u128, n_samples: u64) -> Result<Vec<Event>> {
        if self.clients.contains_key(&id) {
            return Err(ContractError::AlreadyRegistered(id));
        }
        if stake < self.config.min_stake {
            return Err(ContractError::InsufficientStake {
                offered: stake,
                minimum: self.config.min_stake,
            });
        }
        if n_samples == 0 {
            return Err(ContractError::BadSampleCount);
        }
        self.clients.insert(
            id,
            ClientRecord {
                id,
                stake,
                n_samples,
                registered_round: self.current.round,
                rounds_participated: 0,
                consecutive_negative: 0,
                banned: false,
                balance: 0,
            },
        );
        Ok(vec![Event::ClientRegistered { id, stake, n_samples }])
    }

    pub fn submit_update(
        &mut self,
        id: ClientId,
        round: u64,
        chunk: &[Fixed],
        batch_index: u32,
        batch_count: u32,
    ) -> Result<Vec<Event>> {
        let client = self.clients.get(&id).ok_or(ContractError::NotRegistered(id))?;
        if client.banned {
            return Err(ContractError::Banned(id));
        }
        if round != self.current.round
            || self.current.phase != Phase::Open
            || self.current.verdicts.is_some()
        {
            return Err(ContractError::RoundClosed(round));
        }
        if self.current.submissions.contains_key(&id) {
            return Err(ContractError::DuplicateSubmission(id));
        }
        let pending = self.uploads.get(&id).filter(|u| u.round == round);
        let (expected_index, expected_count, received) = match pending {
            Some(u) => (u.batches, u.batch_count, u.received.len()),
            None => (0, batch_count, 0),
        };
        if batch_count == 0 || batch_index != expected_index || batch_count != expected_count {
            return Err(ContractError::OutOfOrderBatch { expected: expected_index, got: batch_index });
        }
        let total = received + chunk.len();
        let last = batch_index + 1 == batch_count;
        if chunk.is_empty() || total > self.dim || (last && total != self.dim) {
            return Err(ContractError::DimMismatch { expected: self.dim as u64, got: total as u64 });
        }

        let mut upload = match self.uploads.remove(&id).filter(|u| u.round == round) {
            Some(u) => u,
            None => PendingUpload { round, batch_count, received: Vec::with_capacity(self.dim), batches: 0 },
        };
        upload.received.extend_from_slice(chunk);
        upload.batches += 1;
        if last {
            let update = GradientVector::new(upload.received)?;
            self.current.submissions.insert(id, update);
        } else {
            self.uploads.insert(id, upload);
        }
        Ok(vec![Event::UpdateSubmitted { id, round, batch_index }])
    }

    fn expect_round(&self, round: u64, call: &str, ok: bool) -> Result<()> {
        if round != self.current.round || !ok {
            return Err(ContractError::WrongPhase {
                round,
                phase: self.round(round).map(|r| r.phase).unwrap_or(Phase::Closed),
                call: call.to_string(),
            });
        }
        Ok(())
    }

    pub fn validate_round(&mut self, round: u64) -> Result<Vec<Event>> {
        let open = self.current.phase == Phase::Open && self.current.verdicts.is_none();
        self.expect_round(round, "validateRound", open)?;
        if self.current.submissions.is_empty() {
            return Err(ContractError::NothingToValidate(round));
        }
        let mut verdicts = BTreeMap::new();
        for (id, update) in &self.current.submissions {
            let verdict = if update.dim() != self.dim {
                Verdict::RejectedDim
            } else if !update.norm_within(self.config.tau)? {
                Verdict::RejectedNorm
            } else {
                Verdict::Accepted
            };
            verdicts.insert(*id, verdict);
        }
        let event = Event::UpdatesValidated {
            round,
            verdicts: verdicts.iter().map(|(id, v)| (*id, *v)).collect(),
        };
        self.current.verdicts = Some(verdicts);
        Ok(vec![event])
    }

    fn sample_counts<'a>(&self, ids: impl Iterator<Item = &'a ClientId>) -> BTreeMap<ClientId, u64> {
        ids.map(|id| (*id, self.clients[id].n_samples)).collect()
    }

    pub fn score_and_reward_round(&mut self, round: u64) -> Result<Vec<Event>> {
        let validated = self.current.phase == Phase::Open && self.current.verdicts.is_some();
        self.expect_round(round, "scoreAndReward", validated)?;

        let accepted: BTreeMap<ClientId, GradientVector> =
            self.current.accepted().map(|(id, g)| (*id, g.clone())).collect();
        let counts = self.sample_counts(accepted.keys());
        let mut scores = RoundScores::new();
        let mut weights = BTreeMap::new();
        if !accepted.is_empty() {
            let total: u64 = counts.values().sum();
            let vectors: Vec<GradientVector> = accepted.values().cloned().collect();
            let ns: Vec<u64> = counts.values().copied().collect();
            // Scores are taken against this round's aggregate, before it is committed.
            let transient = weighted_mean(&vectors, &ns)?;
            for (id, update) in &accepted {
                scores.insert(*id, alignment_score(update, &transient, counts[id], total)?);
            }
            let basis = match self.config.reward_basis {
                RewardBasis::Alignment => scores.clone(),
                RewardBasis::Shapley => {
                    AlignmentGame::new(&accepted, &counts)?.shapley()?.values
                }
            };
            for (id, value) in basis {
                let share = self.participation_at_last_checkpoint(&id);
                weights.insert(id, consistency_adjusted_reward(value, self.config.alpha, share)?);
            }
        }
        let payouts = proportional_split(self.config.reward_pool, &weights);

        // Streaks and bans, computed before any mutation.
        let mut bans = Vec::new();
        let mut streaks = BTreeMap::new();
        for (id, score) in &scores {
            let record = &self.clients[id];
            let streak = if score.is_negative() { record.consecutive_negative + 1 } else { 0 };
            streaks.insert(*id, streak);
            if streak >= self.config.ban_threshold && !record.banned {
                let amount = I256::from(record.stake) * I256::from(self.config.slash_fraction.raw())
                    / I256::from(SCALE);
                let amount = u128::try_from(amount).map_err(|_| NumericError::Overflow)?;
                bans.push((*id, amount.min(record.stake)));
            }
        }

        let mut events = vec![
            Event::AlignmentScoresUpdated {
                round,
                scores: scores.iter().map(|(id, s)| (*id, *s)).collect(),
            },
            Event::RewardsDistributed {
                round,
                payouts: payouts.iter().map(|(id, p)| (*id, *p)).collect(),
            },
        ];
        for (id, amount) in &payouts {
            self.clients.get_mut(id).expect("scored client is registered").balance += amount;
        }
        for (id, streak) in streaks {
            self.clients.get_mut(&id).expect("registered").consecutive_negative = streak;
        }
        for (id, amount) in bans {
            let record = self.clients.get_mut(&id).expect("registered");
            record.banned = true;
            record.stake -= amount;
            self.slashed += amount;
            events.push(Event::ClientBanned { id, round });
            events.push(Event::StakeSlashed { id, round, amount });
        }
        self.current.scores = scores;
        self.current.payouts = payouts;
        self.current.phase = Phase::Scored;
        Ok(events)
    }

    /// Participation share `C` fixed at the last checkpoint (0 before the first).
    fn participation_at_last_checkpoint(&self, id: &ClientId) -> Fixed {
        self.participation.get(id).copied().unwrap_or(Fixed::ZERO)
    }

    /// Accepted submitters that were not banned while scoring.
    pub fn aggregatable(&self) -> Vec<ClientId> {
        self.current
            .accepted()
            .map(|(id, _)| *id)
            .filter(|id| !self.clients[id].banned)
            .collect()
    }

    pub fn aggregate_round(&mut self, round: u64) -> Result<Vec<Event>> {
        self.expect_round(round, "aggregateRound", self.current.phase == Phase::Scored)?;
        let members = self.aggregatable();
        if members.is_empty() {
            return Err(ContractError::NoAcceptedUpdates(round));
        }
        let vectors: Vec<GradientVector> =
            members.iter().map(|id| self.current.submissions[id].clone()).collect();
        let counts: Vec<u64> = members.iter().map(|id| self.clients[id].n_samples).collect();
        let update = weighted_mean(&vectors, &counts)?;
        let weights = self.model.weights.checked_add(&update)?;
        self.model = GlobalModel { weights, update: Some(update.clone()), version: round };
        self.current.aggregate = Some(update);
        self.current.phase = Phase::Aggregated;
        Ok(vec![Event::GlobalModelUpdated { round, contributors: members.len() as u64 }])
    }

    /// Closes the round. Rounds with nothing to aggregate may close straight
    /// from `open` (no submissions) or `scored` (no aggregatable update).
    pub fn close_round(&mut self, round: u64) -> Result<Vec<Event>> {
        let phase = self.current.phase;
        let closable = match phase {
            Phase::Aggregated => true,
            Phase::Scored => self.aggregatable().is_empty(),
            Phase::Open => self.current.submissions.is_empty(),
            Phase::Closed => false,
        };
        self.expect_round(round, "closeRound", closable)?;
        let participants: Vec<ClientId> = self.current.accepted().map(|(id, _)| *id).collect();
        for id in participants {
            self.clients.get_mut(&id).expect("registered").rounds_participated += 1;
        }
        self.uploads.retain(|_, u| u.round != round);
        let mut closed = std::mem::replace(&mut self.current, RoundState::open(round + 1));
        closed.phase = Phase::Closed;
        self.history.push(closed);
        Ok(vec![Event::RoundClosed { round }])
    }

    /// Anchors an off-chain fairness checkpoint and refreshes the consistency
    /// multipliers used for the following rounds.
    pub fn record_checkpoint(
        &mut self,
        round: u64,
        cid: Hash32,
        integrity_hash: Hash32,
    ) -> Result<Vec<Event>> {
        let interval = self.config.fairness_interval;
        let valid = round > 0
            && interval > 0
            && round.is_multiple_of(interval)
            && round < self.current.round
            && self.checkpoints.iter().all(|c| c.round != round);
        if !valid {
            return Err(ContractError::WrongRound(round));
        }
        let mut participation = BTreeMap::new();
        let mut multipliers = BTreeMap::new();
        for record in self.clients.values().filter(|c| c.registered_round <= round) {
            let elapsed = round - record.registered_round + 1;
            let share = participation_share(record.rounds_participated.min(elapsed), elapsed)?;
            let multiplier = consistency_adjusted_reward(Fixed::ONE, self.config.alpha, share)?;
            participation.insert(record.id, share);
            multipliers.insert(record.id, multiplier);
        }
        self.checkpoints.push(CheckpointRecord { round, cid, integrity_hash });
        let event_multipliers = multipliers.iter().map(|(id, m)| (*id, *m)).collect();
        self.participation = participation;
        self.multipliers = multipliers;
        Ok(vec![
            Event::FairnessCheckpoint { round, cid, integrity_hash },
            Event::MultipliersUpdated { round, multipliers: event_multipliers },
        ])
    }

    /// Canonical byte serialization of the full contract state.
    pub fn canonical_state(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u64(self.dim as u64);
        self.config.encode(&mut enc);
        enc.u64(self.clients.len() as u64);
        for c in self.clients.values() {
            enc.id(&c.id)
                .u128(c.stake)
                .u64(c.n_samples)
                .u64(c.registered_round)
                .u64(c.rounds_participated)
                .u64(c.consecutive_negative as u64)
                .u8(c.banned as u8)
                .u128(c.balance);
        }
        enc.u64(self.model.version).fixed_seq(self.model.weights.components());
        match &self.model.update {
            Some(u) => enc.u8(1).fixed_seq(u.components()),
            None => enc.u8(0),
        };
        enc.u64(self.history.len() as u64);
        for r in &self.history {
            encode_round(&mut enc, r);
        }
        encode_round(&mut enc, &self.current);
        enc.u64(self.uploads.len() as u64);
        for (id, u) in &self.uploads {
            enc.id(id).u64(u.round).u64(u.batches as u64).u64(u.batch_count as u64).fixed_seq(&u.received);
        }
        enc.u64(self.multipliers.len() as u64);
        for (id, m) in &self.multipliers {
            enc.id(id).fixed(*m).fixed(self.participation_at_last_checkpoint(id));
        }
        enc.u64(self.checkpoints.len() as u64);
        for c in &self.checkpoints {
            enc.u64(c.round).hash(&c.cid).hash(&c.integrity_hash);
        }
        enc.u128(self.slashed);
        enc.finish()
    }

    pub fn state_root(&self) -> Hash32 {
        keccak256(&self.canonical_state())
    }
}

fn encode_round(enc: &mut Encoder, r: &RoundState) {
    enc.u64(r.round).u8(r.phase as u8).u64(r.submissions.len() as u64);
    for (id, g) in &r.submissions {
        enc.id(id).hash(&keccak256(&{
            let mut inner = Encoder::new();
            inner.fixed_seq(g.components());
            inner.finish()
        }));
    }
    match &r.verdicts {
        Some(v) => {
            enc.u8(1).u64(v.len() as u64);
            for (id, verdict) in v {
                enc.id(id).u8(*verdict as u8);
            }
        }
        None => {
            enc.u8(0);
        }
    }
    enc.u64(r.scores.len() as u64);
    for (id, s) in &r.scores {
        enc.id(id).fixed(*s);
    }
    enc.u64(r.payouts.len() as u64);
    for (id, p) in &r.payouts {
        enc.id(id).u128(*p);
    }
    match &r.aggregate {
        Some(a) => enc.u8(1).fixed_seq(a.components()),
        None => enc.u8(0),
    };
}
