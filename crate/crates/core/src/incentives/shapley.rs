//! Exact Shapley attribution by full subset enumeration.

use std::collections::BTreeMap;

use ethnum::I256;
use serde::{Deserialize, Serialize};

use super::{sorted_unique, IncentiveError, Result};
use crate::ids::ClientId;
use crate::numerics::{dot, weighted_mean, Fixed, GradientVector, NumericError};

/// Largest cohort for which `2ⁿ` coalition values are enumerated.
pub const MAX_SHAPLEY_CLIENTS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapleyAttribution {
    pub values: BTreeMap<ClientId, Fixed>,
    /// Name of the coalition-value function the values were computed from.
    pub characteristic: String,
}

fn factorial(n: usize) -> i128 {
    (1..=n as i128).product()
}

/// `φ_i = Σ_{T ⊆ C∖{i}} |T|!(n−|T|−1)!/n! · (v(T∪{i}) − v(T))`.
///
/// `coalition_value` is evaluated once per subset; subsets are passed as
/// client lists sorted by id. The weighted marginal sum is accumulated exactly
/// and divided by `n!` once per client.
pub fn shapley_exact<F>(
    clients: &[ClientId],
    characteristic: &str,
    mut coalition_value: F,
) -> Result<ShapleyAttribution>
where
    F: FnMut(&[ClientId]) -> Result<Fixed>,
{
    let players = sorted_unique(clients);
    let n = players.len();
    if n > MAX_SHAPLEY_CLIENTS {
        return Err(IncentiveError::TooManyClients(n));
    }
    let mut values = Vec::with_capacity(1 << n);
    let mut subset = Vec::with_capacity(n);
    for mask in 0usize..(1 << n) {
        subset.clear();
        subset.extend((0..n).filter(|i| mask & (1 << i) != 0).map(|i| players[i]));
        values.push(coalition_value(&subset)?);
    }
    let weights: Vec<I256> = (0..n.max(1))
        .map(|size| I256::from(factorial(size) * factorial(n.saturating_sub(size + 1))))
        .collect();
    let denom = I256::from(factorial(n));
    let mut result = BTreeMap::new();
    for (i, player) in players.iter().enumerate() {
        let bit = 1usize << i;
        let mut acc = I256::ZERO;
        for mask in (0..values.len()).filter(|m| m & bit == 0) {
            let marginal = I256::from(values[mask | bit].raw()) - I256::from(values[mask].raw());
            let term = weights[mask.count_ones() as usize]
                .checked_mul(marginal)
                .ok_or(NumericError::Overflow)?;
            acc = acc.checked_add(term).ok_or(NumericError::Overflow)?;
        }
        let raw = i128::try_from(acc / denom).map_err(|_| NumericError::Overflow)?;
        result.insert(*player, Fixed::from_raw(raw)?);
    }
    Ok(ShapleyAttribution { values: result, characteristic: characteristic.to_string() })
}

/// Coalition game over one round's accepted submissions:
/// `v(T) = FedAvg(T) · FedAvg(all)`, `v(∅) = 0`.
#[derive(Debug, Clone)]
pub struct AlignmentGame<'a> {
    submissions: &'a BTreeMap<ClientId, GradientVector>,
    counts: &'a BTreeMap<ClientId, u64>,
    full: GradientVector,
}

impl<'a> AlignmentGame<'a> {
    pub const NAME: &'static str = "fedavg-alignment";

    pub fn new(
        submissions: &'a BTreeMap<ClientId, GradientVector>,
        counts: &'a BTreeMap<ClientId, u64>,
    ) -> Result<Self> {
        let all: Vec<ClientId> = submissions.keys().copied().collect();
        let full = fedavg(submissions, counts, &all)?;
        Ok(AlignmentGame { submissions, counts, full })
    }

    pub fn full_aggregate(&self) -> &GradientVector {
        &self.full
    }

    pub fn players(&self) -> Vec<ClientId> {
        self.submissions.keys().copied().collect()
    }

    pub fn value(&self, subset: &[ClientId]) -> Result<Fixed> {
        if subset.is_empty() {
            return Ok(Fixed::ZERO);
        }
        let partial = fedavg(self.submissions, self.counts, subset)?;
        Ok(dot(&partial, &self.full)?)
    }

    pub fn shapley(&self) -> Result<ShapleyAttribution> {
        shapley_exact(&self.players(), Self::NAME, |subset| self.value(subset))
    }
}

fn fedavg(
    submissions: &BTreeMap<ClientId, GradientVector>,
    counts: &BTreeMap<ClientId, u64>,
    members: &[ClientId],
) -> Result<GradientVector> {
    let mut vectors = Vec::with_capacity(members.len());
    let mut weights = Vec::with_capacity(members.len());
    for client in members {
        let update = submissions.get(client).ok_or(IncentiveError::UnknownClient(*client))?;
        let n = counts.get(client).ok_or(IncentiveError::UnknownClient(*client))?;
        vectors.push(update.clone());
        weights.push(*n);
    }
    Ok(weighted_mean(&vectors, &weights)?)
}

/// Value of `subset` in the [`AlignmentGame`] built from `submissions`.
pub fn coalition_value_alignment(
    subset: &[ClientId],
    submissions: &BTreeMap<ClientId, GradientVector>,
    counts: &BTreeMap<ClientId, u64>,
) -> Result<Fixed> {
    if subset.is_empty() {
        return Ok(Fixed::ZERO);
    }
    AlignmentGame::new(submissions, counts)?.value(subset)
}
