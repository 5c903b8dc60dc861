//! Simulated client fleet.
//!
//! Every client owns a synthetic linear-regression dataset drawn around a
//! shared ground-truth weight vector and trains locally with full-batch
//! gradient descent in `f64`. The resulting parameter delta is quantised to
//! [`Fixed`] only when it is handed to the ledger. Scripted adversaries then
//! transform or withhold the honest delta.
//!
//! Randomness is counter-based: each `(label, client, round)` triple derives
//! its own ChaCha stream from the root seed, so results do not depend on the
//! order in which clients train.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::Encoder;
use crate::ids::ClientId;
use crate::numerics::{Fixed, GradientVector, NumericError};
use crate::offchain::keccak256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("model has {got} parameters, dataset has {expected} features")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid training parameters: {0}")]
    BadTraining(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// Derives an independent RNG for one `(label, client, round)` triple.
pub fn stream_rng(root_seed: u64, label: &str, client: u64, round: u64) -> ChaCha8Rng {
    let mut enc = Encoder::new();
    enc.u64(root_seed).str(label).u64(client).u64(round);
    ChaCha8Rng::from_seed(keccak256(&enc.finish()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientBehavior {
    Honest,
    /// Submits the negated honest update.
    Negator,
    /// Submits the honest update multiplied by the given factor.
    Scaler(f64),
    /// Submits a zero vector.
    Freerider,
    /// Participates honestly with the given probability, otherwise stays silent.
    Dropout(f64),
}

impl ClientBehavior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ClientBehavior::Scaler(c) if !c.is_finite() => {
                Err(ClientError::InvalidSpec(format!("scaler factor {c} is not finite")))
            }
            ClientBehavior::Dropout(q) if !(0.0..=1.0).contains(&q) => {
                Err(ClientError::InvalidSpec(format!("dropout probability {q} is outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// What this client actually submits, given its honest update. `rng` is
    /// only consulted by [`ClientBehavior::Dropout`].
    pub fn act(&self, honest: &GradientVector, rng: &mut impl Rng) -> Result<Option<GradientVector>> {
        Ok(match *self {
            ClientBehavior::Honest => Some(honest.clone()),
            ClientBehavior::Negator => Some(honest.negated()),
            ClientBehavior::Scaler(c) => Some(honest.checked_scale(Fixed::from_f64(c)?)?),
            ClientBehavior::Freerider => Some(GradientVector::zeros(honest.dim())?),
            ClientBehavior::Dropout(q) => rng.random_bool(q).then(|| honest.clone()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n_clients: usize,
    pub samples_per_client: Vec<u64>,
    pub dim: usize,
    pub noise: f64,
    pub behaviors: Vec<ClientBehavior>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ClientError::InvalidSpec(msg));
        if self.n_clients == 0 {
            return bad("n_clients must be positive".into());
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.samples_per_client.len() != self.n_clients {
            return bad(format!(
                "samples_per_client has {} entries for {} clients",
                self.samples_per_client.len(),
                self.n_clients
            ));
        }
        if self.samples_per_client.contains(&0) {
            return bad("every client needs at least one sample".into());
        }
        if self.behaviors.len() != self.n_clients {
            return bad(format!("behaviors has {} entries for {} clients", self.behaviors.len(), self.n_clients));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return bad(format!("noise {} must be finite and non-negative", self.noise));
        }
        self.behaviors.iter().try_for_each(ClientBehavior::validate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl SyntheticDataset {
    /// `n` samples with standard-normal features and
    /// `y = x·w* + noise·ε`, ε standard normal.
    pub fn generate(rng: &mut impl Rng, n: usize, w_star: &[f64], noise: f64) -> Self {
        let mut features = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..w_star.len()).map(|_| StandardNormal.sample(rng)).collect();
            let eps: f64 = StandardNormal.sample(rng);
            targets.push(dot_f64(&x, w_star) + noise * eps);
            features.push(x);
        }
        SyntheticDataset { features, targets }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Mean squared loss `(1/n) Σ ½(y − w·x)²`.
    pub fn loss(&self, weights: &[f64]) -> f64 {
        let total: f64 =
            self.features.iter().zip(&self.targets).map(|(x, y)| 0.5 * (y - dot_f64(x, weights)).powi(2)).sum();
        total / self.len() as f64
    }

    /// Gradient of [`SyntheticDataset::loss`]: `−(1/n) Σ x (y − w·x)`.
    pub fn gradient(&self, weights: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; weights.len()];
        for (x, y) in self.features.iter().zip(&self.targets) {
            let residual = y - dot_f64(x, weights);
            for (g, xk) in grad.iter_mut().zip(x) {
                *g -= xk * residual;
            }
        }
        let n = self.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        grad
    }
}

fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `w_local − w_start` after `epochs` full-batch gradient steps, in `f64`.
pub fn train_delta(start: &[f64], dataset: &SyntheticDataset, epochs: u32, lr: f64) -> Result<Vec<f64>> {
    if start.len() != dataset.dim() {
        return Err(ClientError::DimMismatch { expected: dataset.dim(), got: start.len() });
    }
    if epochs == 0 || !(lr.is_finite() && lr > 0.0) {
        return Err(ClientError::BadTraining(format!("epochs={epochs}, lr={lr}")));
    }
    let mut w = start.to_vec();
    for _ in 0..epochs {
        let grad = dataset.gradient(&w);
        for (wk, gk) in w.iter_mut().zip(grad) {
            *wk -= lr * gk;
        }
    }
    Ok(w.iter().zip(start).map(|(a, b)| a - b).collect())
}

/// [`train_delta`] from the global model, quantised to fixed point
/// (round half to even).
pub fn local_train(model: &GradientVector, dataset: &SyntheticDataset, epochs: u32, lr: f64) -> Result<GradientVector> {
    let delta = train_delta(&model.to_f64s(), dataset, epochs, lr)?;
    Ok(GradientVector::from_f64s(&delta)?)
}

/// One round's output for a single client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutput {
    pub id: ClientId,
    pub honest: GradientVector,
    /// What the client submits; `None` if it sat the round out.
    pub submitted: Option<GradientVector>,
}

#[derive(Debug, Clone)]
pub struct ClientFleet {
    spec: DatasetSpec,
    w_star: Vec<f64>,
    datasets: Vec<SyntheticDataset>,
}

impl ClientFleet {
    pub fn new(spec: DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(spec.seed, "w-star", 0, 0);
        let w_star: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let datasets = spec
            .samples_per_client
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let mut rng = stream_rng(spec.seed, "dataset", i as u64, 0);
                SyntheticDataset::generate(&mut rng, *n as usize, &w_star, spec.noise)
            })
            .collect();
        Ok(ClientFleet { spec, w_star, datasets })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn w_star(&self) -> &[f64] {
        &self.w_star
    }

    pub fn id(index: usize) -> ClientId {
        ClientId::from_index(index as u64)
    }

    /// `(id, n_samples, behavior)` for every client in id order.
    pub fn members(&self) -> impl Iterator<Item = (ClientId, u64, ClientBehavior)> + '_ {
        (0..self.spec.n_clients).map(|i| (Self::id(i), self.spec.samples_per_client[i], self.spec.behaviors[i]))
    }

    pub fn dataset(&self, index: usize) -> &SyntheticDataset {
        &self.datasets[index]
    }

    /// Euclidean distance from `weights` to the ground truth.
    pub fn distance_to_optimum(&self, weights: &GradientVector) -> f64 {
        weights.to_f64s().iter().zip(&self.w_star).map(|(w, s)| (w - s).powi(2)).sum::<f64>().sqrt()
    }

    /// Trains every client that is in `active` in parallel; the result is in
    /// id order regardless of completion order.
    pub fn round(
        &self,
        round: u64,
        model: &GradientVector,
        epochs: u32,
        lr: f64,
        active: impl Fn(&ClientId) -> bool + Sync,
    ) -> Result<Vec<ClientOutput>> {
        (0..self.spec.n_clients)
            .into_par_iter()
            .filter(|i| active(&Self::id(*i)))
            .map(|i| {
                let honest = local_train(model, &self.datasets[i], epochs, lr)?;
                let mut rng = stream_rng(self.spec.seed, "behavior", i as u64, round);
                let submitted = self.spec.behaviors[i].act(&honest, &mut rng)?;
                Ok(ClientOutput { id: Self::id(i), honest, submitted })
            })
            .collect()
    }
}
