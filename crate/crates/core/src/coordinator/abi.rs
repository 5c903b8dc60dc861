//! Contract calls, events and revert reasons.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ContractConfig;
use crate::encoding::Encoder;
use crate::ids::{hex32, ClientId, Hash32};
use crate::incentives::IncentiveError;
use crate::ledger::gas::GasModel;
use crate::numerics::{Fixed, NumericError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Call {
    Deploy {
        dim: u64,
        config: ContractConfig,
        gas: GasModel,
    },
    Register {
        stake: u128,
        n_samples: u64,
    },
    SubmitUpdate {
        round: u64,
        batch_index: u32,
        batch_count: u32,
        chunk: Vec<Fixed>,
    },
    ValidateRound {
        round: u64,
    },
    ScoreAndReward {
        round: u64,
    },
    AggregateRound {
        round: u64,
    },
    CloseRound {
        round: u64,
    },
    RecordCheckpoint {
        round: u64,
        #[serde(with = "hex32")]
        cid: Hash32,
        #[serde(with = "hex32")]
        integrity_hash: Hash32,
    },
}

impl Call {
    pub fn name(&self) -> &'static str {
        match self {
            Call::Deploy { .. } => "deploy",
            Call::Register { .. } => "register",
            Call::SubmitUpdate { .. } => "submitUpdate",
            Call::ValidateRound { .. } => "validateRound",
            Call::ScoreAndReward { .. } => "scoreAndReward",
            Call::AggregateRound { .. } => "aggregateRound",
            Call::CloseRound { .. } => "closeRound",
            Call::RecordCheckpoint { .. } => "recordCheckpoint",
        }
    }

    /// Calls reserved for the coordinator's own system sender.
    pub fn is_system(&self) -> bool {
        !matches!(self, Call::Register { .. } | Call::SubmitUpdate { .. })
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.str(self.name());
        match self {
            Call::Deploy { dim, config, gas } => {
                enc.u64(*dim);
                config.encode(enc);
                for class in crate::ledger::gas::OpClass::ALL {
                    let cost = gas.cost(class);
                    enc.u64(cost.intercept).u64(cost.slope);
                }
                enc.u64(gas.deployment).u64(gas.base_tx);
            }
            Call::Register { stake, n_samples } => {
                enc.u128(*stake).u64(*n_samples);
            }
            Call::SubmitUpdate { round, batch_index, batch_count, chunk } => {
                enc.u64(*round).u64(*batch_index as u64).u64(*batch_count as u64).fixed_seq(chunk);
            }
            Call::ValidateRound { round }
            | Call::ScoreAndReward { round }
            | Call::AggregateRound { round }
            | Call::CloseRound { round } => {
                enc.u64(*round);
            }
            Call::RecordCheckpoint { round, cid, integrity_hash } => {
                enc.u64(*round).hash(cid).hash(integrity_hash);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    RejectedNorm,
    RejectedDim,
}

impl Verdict {
    fn code(self) -> u8 {
        match self {
            Verdict::Accepted => 0,
            Verdict::RejectedNorm => 1,
            Verdict::RejectedDim => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    ContractDeployed {
        dim: u64,
    },
    ClientRegistered {
        id: ClientId,
        stake: u128,
        n_samples: u64,
    },
    UpdateSubmitted {
        id: ClientId,
        round: u64,
        batch_index: u32,
    },
    UpdatesValidated {
        round: u64,
        verdicts: Vec<(ClientId, Verdict)>,
    },
    AlignmentScoresUpdated {
        round: u64,
        scores: Vec<(ClientId, Fixed)>,
    },
    RewardsDistributed {
        round: u64,
        payouts: Vec<(ClientId, u128)>,
    },
    ClientBanned {
        id: ClientId,
        round: u64,
    },
    StakeSlashed {
        id: ClientId,
        round: u64,
        amount: u128,
    },
    GlobalModelUpdated {
        round: u64,
        contributors: u64,
    },
    RoundClosed {
        round: u64,
    },
    FairnessCheckpoint {
        round: u64,
        #[serde(with = "hex32")]
        cid: Hash32,
        #[serde(with = "hex32")]
        integrity_hash: Hash32,
    },
    /// Consistency multipliers `1 + α·C` in force until the next checkpoint.
    MultipliersUpdated {
        round: u64,
        multipliers: Vec<(ClientId, Fixed)>,
    },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::ContractDeployed { .. } => "ContractDeployed",
            Event::ClientRegistered { .. } => "ClientRegistered",
            Event::UpdateSubmitted { .. } => "UpdateSubmitted",
            Event::UpdatesValidated { .. } => "UpdatesValidated",
            Event::AlignmentScoresUpdated { .. } => "AlignmentScoresUpdated",
            Event::RewardsDistributed { .. } => "RewardsDistributed",
            Event::ClientBanned { .. } => "ClientBanned",
            Event::StakeSlashed { .. } => "StakeSlashed",
            Event::GlobalModelUpdated { .. } => "GlobalModelUpdated",
            Event::RoundClosed { .. } => "RoundClosed",
            Event::FairnessCheckpoint { .. } => "FairnessCheckpoint",
            Event::MultipliersUpdated { .. } => "MultipliersUpdated",
        }
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.str(self.name());
        match self {
            Event::ContractDeployed { dim } => {
                enc.u64(*dim);
            }
            Event::ClientRegistered { id, stake, n_samples } => {
                enc.id(id).u128(*stake).u64(*n_samples);
            }
            Event::UpdateSubmitted { id, round, batch_index } => {
                enc.id(id).u64(*round).u64(*batch_index as u64);
            }
            Event::UpdatesValidated { round, verdicts } => {
                enc.u64(*round).u64(verdicts.len() as u64);
                for (id, v) in verdicts {
                    enc.id(id).u8(v.code());
                }
            }
            Event::AlignmentScoresUpdated { round, scores: entries }
            | Event::MultipliersUpdated { round, multipliers: entries } => {
                enc.u64(*round).u64(entries.len() as u64);
                for (id, v) in entries {
                    enc.id(id).fixed(*v);
                }
            }
            Event::RewardsDistributed { round, payouts } => {
                enc.u64(*round).u64(payouts.len() as u64);
                for (id, amount) in payouts {
                    enc.id(id).u128(*amount);
                }
            }
            Event::ClientBanned { id, round } => {
                enc.id(id).u64(*round);
            }
            Event::StakeSlashed { id, round, amount } => {
                enc.id(id).u64(*round).u128(*amount);
            }
            Event::GlobalModelUpdated { round, contributors } => {
                enc.u64(*round).u64(*contributors);
            }
            Event::RoundClosed { round } => {
                enc.u64(*round);
            }
            Event::FairnessCheckpoint { round, cid, integrity_hash } => {
                enc.u64(*round).hash(cid).hash(integrity_hash);
            }
        }
    }
}

/// Revert reasons.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ContractError {
    #[error("client {0} is already registered")]
    AlreadyRegistered(ClientId),
    #[error("stake {offered} is below the minimum {minimum}")]
    InsufficientStake { offered: u128, minimum: u128 },
    #[error("sample count must be positive")]
    BadSampleCount,
    #[error("client {0} is not registered")]
    NotRegistered(ClientId),
    #[error("client {0} is banned")]
    Banned(ClientId),
    #[error("round {0} is not accepting submissions")]
    RoundClosed(u64),
    #[error("update has {got} parameters, model has {expected}")]
    DimMismatch { expected: u64, got: u64 },
    #[error("batch {got} arrived, expected {expected}")]
    OutOfOrderBatch { expected: u32, got: u32 },
    #[error("client {0} already submitted this round")]
    DuplicateSubmission(ClientId),
    #[error("round {0} has no submissions to validate")]
    NothingToValidate(u64),
    #[error("round {round} is in phase {phase:?}; {call} is not allowed")]
    WrongPhase { round: u64, phase: super::Phase, call: String },
    #[error("round {0} has no accepted updates")]
    NoAcceptedUpdates(u64),
    #[error("round {0} cannot be checkpointed")]
    WrongRound(u64),
    #[error("sender is not allowed to make this call")]
    Unauthorized,
    #[error("contract is already deployed")]
    AlreadyDeployed,
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Incentive(#[from] IncentiveError),
}
