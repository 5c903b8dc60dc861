//! End-to-end scenario driver: configuration, the round loop, report
//! generation, gas sweeps and post-hoc audits of a persisted run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{ContractConfig, RewardBasis};
use crate::flclients::{ClientBehavior, ClientError, DatasetSpec};
use crate::incentives::MAX_SHAPLEY_CLIENTS;
use crate::ledger::gas::GasModel;
use crate::ledger::{ChainError, LedgerError};
use crate::numerics::Fixed;
use crate::offchain::OffchainError;

mod audit;
mod report;
mod run;
mod sweep;

pub use audit::{audit, scores_from_events, AuditReport, CheckpointAudit};
pub use report::{build_report, ClientSummary, GasRow, RoundRecord, RunReport, Summary};
pub use run::{run, run_in_memory, AttributionRecord, RunOutcome};
pub use sweep::{gas_sweep, gas_csv, TABLE_SIZES};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config error: {0}")]
    Config(String),
    #[error("no completed run at {0}")]
    MissingRun(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Offchain(#[from] OffchainError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0}")]
    Runtime(String),
}

impl ScenarioError {
    pub fn is_config(&self) -> bool {
        matches!(self, ScenarioError::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

fn config_error(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub rounds: u64,
    #[serde(default = "defaults::fairness_interval")]
    pub fairness_interval: u64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::min_stake")]
    pub min_stake: u128,
    /// Stake each client escrows at registration.
    #[serde(default = "defaults::min_stake")]
    pub stake: u128,
    #[serde(default = "defaults::reward_pool")]
    pub reward_pool_per_round: u128,
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::ban_threshold")]
    pub ban_threshold: u32,
    #[serde(default = "defaults::slash_fraction")]
    pub slash_fraction: f64,
    /// Parameters per submission transaction.
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub gas: GasModel,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub reward_basis: RewardBasis,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: u32,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    /// Seal a block every this many transactions instead of once per round.
    #[serde(default)]
    pub txs_per_block: Option<usize>,
}

mod defaults {
    pub fn fairness_interval() -> u64 {
        5
    }
    pub fn alpha() -> f64 {
        0.5
    }
    pub fn min_stake() -> u128 {
        1_000
    }
    pub fn reward_pool() -> u128 {
        1_000_000
    }
    pub fn tau() -> f64 {
        10.0
    }
    pub fn ban_threshold() -> u32 {
        3
    }
    pub fn slash_fraction() -> f64 {
        0.5
    }
    pub fn batch_size() -> usize {
        10_000
    }
    pub fn local_epochs() -> u32 {
        1
    }
    pub fn learning_rate() -> f64 {
        0.1
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 42,
            rounds: 10,
            fairness_interval: defaults::fairness_interval(),
            alpha: defaults::alpha(),
            min_stake: defaults::min_stake(),
            stake: defaults::min_stake(),
            reward_pool_per_round: defaults::reward_pool(),
            tau: defaults::tau(),
            ban_threshold: defaults::ban_threshold(),
            slash_fraction: defaults::slash_fraction(),
            batch_size: defaults::batch_size(),
            gas: GasModel::default(),
            dataset: DatasetSpec {
                seed: 42,
                n_clients: 5,
                samples_per_client: vec![50; 5],
                dim: 8,
                noise: 0.1,
                behaviors: vec![ClientBehavior::Honest; 5],
            },
            reward_basis: RewardBasis::Alignment,
            local_epochs: defaults::local_epochs(),
            learning_rate: defaults::learning_rate(),
            txs_per_block: None,
        }
    }
}

fn to_fixed(name: &str, value: f64) -> Result<Fixed> {
    if !value.is_finite() {
        return Err(config_error(format!("{name} must be finite, got {value}")));
    }
    Fixed::from_f64(value).map_err(|e| config_error(format!("{name}: {e}")))
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| config_error(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(config_error("rounds must be at least 1"));
        }
        if self.fairness_interval == 0 {
            return Err(config_error("fairness_interval must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(config_error(format!("alpha must be a non-negative number, got {}", self.alpha)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(config_error(format!("tau must be positive, got {}", self.tau)));
        }
        if self.ban_threshold == 0 {
            return Err(config_error("ban_threshold must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.slash_fraction) {
            return Err(config_error(format!("slash_fraction must lie in [0, 1], got {}", self.slash_fraction)));
        }
        if self.stake < self.min_stake {
            return Err(config_error(format!("stake {} is below min_stake {}", self.stake, self.min_stake)));
        }
        if self.batch_size == 0 {
            return Err(config_error("batch_size must be positive"));
        }
        if self.local_epochs == 0 {
            return Err(config_error("local_epochs must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(config_error(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.txs_per_block == Some(0) {
            return Err(config_error("txs_per_block must be positive"));
        }
        self.gas.validate().map_err(config_error)?;
        self.dataset.validate().map_err(|e| config_error(e.to_string()))?;
        if self.reward_basis == RewardBasis::Shapley && self.dataset.n_clients > MAX_SHAPLEY_CLIENTS {
            return Err(config_error(format!(
                "shapley reward basis supports at most {MAX_SHAPLEY_CLIENTS} clients"
            )));
        }
        self.contract_config().map(drop)
    }

    pub fn contract_config(&self) -> Result<ContractConfig> {
        Ok(ContractConfig {
            min_stake: self.min_stake,
            reward_pool: self.reward_pool_per_round,
            tau: to_fixed("tau", self.tau)?,
            ban_threshold: self.ban_threshold,
            slash_fraction: to_fixed("slash_fraction", self.slash_fraction)?,
            alpha: to_fixed("alpha", self.alpha)?,
            fairness_interval: self.fairness_interval,
            reward_basis: self.reward_basis,
        })
    }

    /// Stable identifier derived from the full config and its seed.
    pub fn run_id(&self) -> String {
        let mut bytes = serde_json::to_vec(self).expect("config serializes");
        bytes.extend_from_slice(&self.seed.to_be_bytes());
        hex::encode(&crate::offchain::keccak256(&bytes)[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_takes_defaults() {
        let config = ScenarioConfig::from_json(
            r#"{"seed": 1, "rounds": 3, "dataset": {"seed": 2, "n_clients": 1,
                "samples_per_client": [10], "dim": 2, "noise": 0.0, "behaviors": ["honest"]}}"#,
        )
        .unwrap();
        assert_eq!(config.fairness_interval, 5);
        assert_eq!(config.alpha, 0.5);
        assert_eq!(config.gas, GasModel::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut value = serde_json::to_value(ScenarioConfig::default()).unwrap();
        value["surprise"] = serde_json::json!(1);
        assert!(ScenarioConfig::from_json(&value.to_string()).unwrap_err().is_config());
    }

    #[test]
    fn default_round_trips_through_json() {
        let config = ScenarioConfig::default();
        let text = serde_json::to_string(&config).unwrap();
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), config);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let cases: Vec<fn(&mut ScenarioConfig)> = vec![
            |c| c.alpha = -0.1,
            |c| c.rounds = 0,
            |c| c.fairness_interval = 0,
            |c| c.slash_fraction = 1.5,
            |c| c.tau = 0.0,
            |c| c.stake = 1,
            |c| c.batch_size = 0,
            |c| c.learning_rate = f64::NAN,
            |c| c.dataset.behaviors.pop().map(drop).unwrap_or(()),
            |c| c.gas.register.slope = 1,
        ];
        for (i, mutate) in cases.into_iter().enumerate() {
            let mut config = ScenarioConfig::default();
            mutate(&mut config);
            assert!(config.validate().unwrap_err().is_config(), "case {i}");
        }
    }

    #[test]
    fn run_id_depends_on_config() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        b.seed += 1;
        assert_eq!(a.run_id(), ScenarioConfig::default().run_id());
        assert_ne!(a.run_id(), b.run_id());
        assert_eq!(a.run_id().len(), 16);
    }
}
