//! Deterministic simulator of a blockchain-coordinated federated learning
//! round loop: a gas-metered ledger hosting a coordinator contract, alignment
//! and Shapley incentives, off-chain fairness checkpoints and simulated
//! honest and adversarial clients.

pub mod coordinator;
pub mod encoding;
pub mod flclients;
pub mod ids;
pub mod incentives;
pub mod ledger;
pub mod numerics;
pub mod offchain;
pub mod scenario;
