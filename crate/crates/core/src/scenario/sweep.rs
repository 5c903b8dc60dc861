//! Gas sweeps: one single-client round per model size.

use std::fmt::Write as _;

use super::report::GasRow;
use super::{config_error, Result, ScenarioConfig, ScenarioError};
use crate::ids::ClientId;
use crate::ledger::{Ledger, Receipt};
use crate::numerics::GradientVector;

/// Model sizes of the reference gas table.
pub const TABLE_SIZES: [u64; 5] = [10, 100, 1_000, 10_000, 100_000];

fn charged(receipt: Receipt, what: &str) -> Result<u64> {
    if !receipt.is_success() {
        return Err(ScenarioError::Runtime(format!("{what} reverted during gas sweep: {:?}", receipt.status)));
    }
    Ok(receipt.gas_used)
}

/// Gas per operation class for a single client running one round at each
/// size. Submission gas covers every batch of the upload.
pub fn gas_sweep(config: &ScenarioConfig, sizes: &[u64]) -> Result<Vec<GasRow>> {
    if sizes.is_empty() {
        return Err(config_error("at least one parameter size is required"));
    }
    if sizes.contains(&0) {
        return Err(config_error("parameter sizes must be positive"));
    }
    config.validate()?;
    let contract = config.contract_config()?;
    let client = ClientId::from_index(0);
    sizes
        .iter()
        .map(|&size| {
            let dim = usize::try_from(size).map_err(|_| config_error(format!("size {size} is too large")))?;
            let mut ledger = Ledger::genesis(contract.clone(), dim, config.gas, None)?;
            let register = charged(ledger.register(client, config.stake, 1)?, "register")?;
            let update = GradientVector::zeros(dim).map_err(|e| ScenarioError::Runtime(e.to_string()))?;
            let mut submit = 0;
            for receipt in ledger.submit_update(client, 1, &update, config.batch_size)? {
                submit += charged(receipt, "submit")?;
            }
            let validate = charged(ledger.validate_round(1), "validate")?;
            let distribute = charged(ledger.score_and_reward_round(1), "distribute")?;
            let aggregate = charged(ledger.aggregate_round(1), "aggregate")?;
            charged(ledger.close_round(1), "close")?;
            Ok(GasRow { param_size: size, register, submit, aggregate, validate, distribute })
        })
        .collect()
}

/// Gas table CSV: `param_size,register,submit,aggregate,validate,distribute`.
pub fn gas_csv(rows: &[GasRow]) -> String {
    let mut out = String::from("param_size,register,submit,aggregate,validate,distribute\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.param_size, r.register, r.submit, r.aggregate, r.validate, r.distribute)
            .expect("writing to a string");
    }
    out
}
