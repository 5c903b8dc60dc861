//! Affine gas cost model.
//!
//! Each contract operation class is charged `intercept + slope × p`, where `p`
//! is the number of model parameters the call touches. Defaults are fitted to
//! measured costs of the reference contract at p ∈ {10, 10², 10³, 10⁴, 10⁵}.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Register,
    Submit,
    Aggregate,
    Validate,
    Distribute,
}

impl OpClass {
    /// Table column order: registration, submit, aggregate, validate, distribute.
    pub const ALL: [OpClass; 5] = [
        OpClass::Register,
        OpClass::Submit,
        OpClass::Aggregate,
        OpClass::Validate,
        OpClass::Distribute,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpClass::Register => "register",
            OpClass::Submit => "submit",
            OpClass::Aggregate => "aggregate",
            OpClass::Validate => "validate",
            OpClass::Distribute => "distribute",
        }
    }
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineCost {
    pub intercept: u64,
    pub slope: u64,
}

impl AffineCost {
    pub const fn constant(intercept: u64) -> Self {
        AffineCost { intercept, slope: 0 }
    }

    pub fn at(&self, param_count: u64) -> u64 {
        self.intercept.saturating_add(self.slope.saturating_mul(param_count))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasModel {
    pub register: AffineCost,
    pub submit: AffineCost,
    pub aggregate: AffineCost,
    pub validate: AffineCost,
    pub distribute: AffineCost,
    /// One-off contract deployment recorded in the genesis receipt.
    #[serde(default = "default_deployment")]
    pub deployment: u64,
    /// Flat cost of bookkeeping calls outside the five classes (round close,
    /// checkpoint anchoring).
    #[serde(default = "default_base_tx")]
    pub base_tx: u64,
}

pub const DEPLOYMENT_GAS: u64 = 2_371_244;
pub const BASE_TX_GAS: u64 = 21_000;

fn default_deployment() -> u64 {
    DEPLOYMENT_GAS
}

fn default_base_tx() -> u64 {
    BASE_TX_GAS
}

impl Default for GasModel {
    fn default() -> Self {
        GasModel {
            register: AffineCost::constant(45_373),
            submit: AffineCost { intercept: 142_801, slope: 23_534 },
            aggregate: AffineCost { intercept: 24_206, slope: 42_042 },
            validate: AffineCost { intercept: 249_547, slope: 20_480 },
            distribute: AffineCost::constant(219_961),
            deployment: DEPLOYMENT_GAS,
            base_tx: BASE_TX_GAS,
        }
    }
}

impl GasModel {
    pub fn cost(&self, class: OpClass) -> &AffineCost {
        match class {
            OpClass::Register => &self.register,
            OpClass::Submit => &self.submit,
            OpClass::Aggregate => &self.aggregate,
            OpClass::Validate => &self.validate,
            OpClass::Distribute => &self.distribute,
        }
    }

    pub fn charge_gas(&self, class: OpClass, param_count: u64) -> u64 {
        self.cost(class).at(param_count)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.register.slope != 0 || self.distribute.slope != 0 {
            return Err("register and distribute gas must not depend on parameter count".into());
        }
        if self.base_tx == 0 || OpClass::ALL.iter().any(|&c| self.cost(c).at(0) == 0) {
            return Err("every operation must cost at least one gas unit".into());
        }
        Ok(())
    }
}

/// Affine fit minimising relative error, by Lawson's iteratively reweighted
/// least squares. Each iteration solves a weighted least-squares problem on
/// residuals `(a + b·x − y) / y`; the weights converge to the minimax
/// (Chebyshev) solution. Returns `(intercept, slope)`.
pub fn fit_affine(xs: &[f64], ys: &[f64], iterations: usize) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points");
    let n = xs.len() as f64;
    let mut weights = vec![1.0 / n; xs.len()];
    let mut coef = (0.0, 0.0);
    for _ in 0..iterations.max(1) {
        // Normal equations for min Σ wᵢ ((a + b xᵢ − yᵢ)/yᵢ)².
        let (mut s00, mut s01, mut s11, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((&x, &y), &w) in xs.iter().zip(ys).zip(&weights) {
            let k = w / (y * y);
            s00 += k;
            s01 += k * x;
            s11 += k * x * x;
            t0 += k * y;
            t1 += k * x * y;
        }
        let det = s00 * s11 - s01 * s01;
        coef = ((t0 * s11 - t1 * s01) / det, (s00 * t1 - s01 * t0) / det);
        let mut total = 0.0;
        for ((&x, &y), w) in xs.iter().zip(ys).zip(weights.iter_mut()) {
            *w *= ((coef.0 + coef.1 * x - y) / y).abs();
            total += *w;
        }
        if total == 0.0 {
            break;
        }
        weights.iter_mut().for_each(|w| *w /= total);
    }
    coef
}
