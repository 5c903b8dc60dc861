//! Incentive math: alignment scores, cumulative fairness scores, consistency
//! multipliers and exact Shapley attribution.
//!
//! Everything here is a pure function over fixed-point inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use ethnum::I256;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ClientId;
use crate::numerics::{Fixed, GradientVector, NumericError, SCALE};

mod shapley;

pub use shapley::{
    coalition_value_alignment, shapley_exact, AlignmentGame, ShapleyAttribution,
    MAX_SHAPLEY_CLIENTS,
};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum IncentiveError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("sample weights {n_i}/{n_total} are not in (0, 1]")]
    BadWeights { n_i: u64, n_total: u64 },
    #[error("{0} clients exceed the exact Shapley budget of {MAX_SHAPLEY_CLIENTS}")]
    TooManyClients(usize),
    #[error("score history is missing round {0}")]
    MissingRounds(u64),
    #[error("participation {0} is outside [0, 1]")]
    BadParticipation(Fixed),
    #[error("scaling factor {0} is negative")]
    BadAlpha(Fixed),
    #[error("client {0} is not part of the game")]
    UnknownClient(ClientId),
}

pub type Result<T> = std::result::Result<T, IncentiveError>;

/// Scores of one round, keyed by client.
pub type RoundScores = BTreeMap<ClientId, Fixed>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub client: ClientId,
    pub round: u64,
    pub value: Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CumulativeScore {
    pub client: ClientId,
    pub through_round: u64,
    pub value: Fixed,
}

/// Participation share and scaling factor behind a reward multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyFactor {
    pub client: ClientId,
    pub participation: Fixed,
    pub alpha: Fixed,
}

impl ConsistencyFactor {
    pub fn new(client: ClientId, participation: Fixed, alpha: Fixed) -> Result<Self> {
        check_participation(participation)?;
        check_alpha(alpha)?;
        Ok(ConsistencyFactor { client, participation, alpha })
    }

    /// `1 + α·C`.
    pub fn multiplier(&self) -> Result<Fixed> {
        Ok(Fixed::ONE.checked_add(self.alpha.checked_mul(self.participation)?)?)
    }
}

fn check_participation(participation: Fixed) -> Result<()> {
    if participation.is_negative() || participation > Fixed::ONE {
        return Err(IncentiveError::BadParticipation(participation));
    }
    Ok(())
}

fn check_alpha(alpha: Fixed) -> Result<()> {
    if alpha.is_negative() {
        return Err(IncentiveError::BadAlpha(alpha));
    }
    Ok(())
}

/// `S_i = (g_i · g_global) · n_i / N`.
///
/// The inner product is kept at double scale, multiplied by `n_i` and divided
/// by `N·10⁹` in one step, so the result is rounded toward zero exactly once.
pub fn alignment_score(
    update: &GradientVector,
    global: &GradientVector,
    n_i: u64,
    n_total: u64,
) -> Result<Fixed> {
    if n_i == 0 || n_i > n_total {
        return Err(IncentiveError::BadWeights { n_i, n_total });
    }
    let wide = update.dot_wide(global)?;
    let scaled = wide.checked_mul(I256::from(n_i)).ok_or(NumericError::Overflow)?;
    let denom = I256::from(SCALE) * I256::from(n_total);
    let raw = i128::try_from(scaled / denom).map_err(|_| NumericError::Overflow)?;
    Ok(Fixed::from_raw(raw)?)
}

/// Share of rounds a client took part in, `participated / elapsed`.
pub fn participation_share(participated: u64, elapsed: u64) -> Result<Fixed> {
    if elapsed == 0 || participated > elapsed {
        let shown = if elapsed == 0 {
            Fixed::ZERO
        } else {
            Fixed::from_ratio(participated as i128, elapsed as i128)?
        };
        return Err(IncentiveError::BadParticipation(shown));
    }
    Ok(Fixed::from_ratio(participated as i128, elapsed as i128)?)
}

/// Sums scores over `rounds`. Every round in the range must be present in
/// `history`; clients missing from a round contribute zero for it. The result
/// covers every client in `clients` as well as every client seen in the range.
pub fn cumulative_over(
    history: &BTreeMap<u64, RoundScores>,
    rounds: RangeInclusive<u64>,
    clients: impl IntoIterator<Item = ClientId>,
) -> Result<BTreeMap<ClientId, Fixed>> {
    let mut totals: BTreeMap<ClientId, Fixed> =
        clients.into_iter().map(|c| (c, Fixed::ZERO)).collect();
    for round in rounds {
        let scores = history.get(&round).ok_or(IncentiveError::MissingRounds(round))?;
        for (client, score) in scores {
            let slot = totals.entry(*client).or_insert(Fixed::ZERO);
            *slot = slot.checked_add(*score)?;
        }
    }
    Ok(totals)
}

/// `C_i = Σ_{r=1..R} S_{i,r}`.
pub fn cumulative_scores(
    history: &BTreeMap<u64, RoundScores>,
    through_round: u64,
    clients: impl IntoIterator<Item = ClientId>,
) -> Result<BTreeMap<ClientId, Fixed>> {
    if through_round == 0 {
        return Err(IncentiveError::MissingRounds(0));
    }
    cumulative_over(history, 1..=through_round, clients)
}

/// `Reward_i = S_i · (1 + α·C)`, with a single terminal rounding.
pub fn consistency_adjusted_reward(score: Fixed, alpha: Fixed, participation: Fixed) -> Result<Fixed> {
    check_participation(participation)?;
    check_alpha(alpha)?;
    let scale_sq = I256::from(SCALE) * I256::from(SCALE);
    let factor = scale_sq + I256::from(alpha.raw()) * I256::from(participation.raw());
    let wide = I256::from(score.raw()).checked_mul(factor).ok_or(NumericError::Overflow)?;
    let raw = i128::try_from(wide / scale_sq).map_err(|_| NumericError::Overflow)?;
    Ok(Fixed::from_raw(raw)?)
}

/// Splits `pool` tokens in proportion to the positive `weights`.
///
/// Floors each share, then hands the leftover tokens one at a time to the
/// largest fractional remainders (ties broken by ascending client id), so the
/// payouts sum to exactly `pool` whenever any weight is positive. Clients with
/// non-positive weight receive zero.
pub fn proportional_split(pool: u128, weights: &BTreeMap<ClientId, Fixed>) -> BTreeMap<ClientId, u128> {
    let positive: Vec<(ClientId, I256)> = weights
        .iter()
        .filter(|(_, w)| w.is_positive())
        .map(|(c, w)| (*c, I256::from(w.raw())))
        .collect();
    let mut payouts: BTreeMap<ClientId, u128> = weights.keys().map(|c| (*c, 0)).collect();
    let total: I256 = positive.iter().map(|(_, w)| *w).sum();
    if total == I256::ZERO {
        return payouts;
    }
    let pool_wide = I256::from(pool);
    let mut remainders = Vec::with_capacity(positive.len());
    let mut paid: u128 = 0;
    for (client, weight) in &positive {
        let numer = pool_wide * *weight;
        let share = numer / total;
        let share = u128::try_from(share).expect("share is bounded by the pool");
        paid += share;
        payouts.insert(*client, share);
        remainders.push((*client, numer % total));
    }
    remainders.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let leftover = pool - paid;
    for (client, _) in remainders.iter().take(leftover as usize) {
        *payouts.get_mut(client).expect("client present") += 1;
    }
    payouts
}

/// Distinct clients, sorted ascending.
pub(crate) fn sorted_unique(clients: &[ClientId]) -> Vec<ClientId> {
    clients.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}
