//! Deterministic fixed-point arithmetic for everything computed "on-chain".
//!
//! A [`Fixed`] is a signed 128-bit integer holding `value × 10⁹`. Products and
//! sums of products are accumulated in 256-bit intermediates and rescaled once
//! at the end, rounding toward zero, which mirrors integer division on contract
//! platforms. Overflow is always an error.

use std::fmt;
use std::ops::Neg;
use std::str::FromStr;

use ethnum::I256;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of fractional decimal digits carried by [`Fixed`].
pub const DECIMALS: u32 = 9;

/// `10^DECIMALS`, the raw value of `1.0`.
pub const SCALE: i128 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum NumericError {
    #[error("malformed decimal {0:?}")]
    Parse(String),
    #[error("fixed-point overflow")]
    Overflow,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("division by zero")]
    DivisionByZero,
}

pub type Result<T> = std::result::Result<T, NumericError>;

/// Signed fixed-point number with nine decimal digits.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fixed(i128);

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);
    pub const ONE: Fixed = Fixed(SCALE);
    /// Smallest positive value, one unit in the last place.
    pub const ULP: Fixed = Fixed(1);

    /// Wraps a raw value. `i128::MIN` is outside the representable range.
    pub fn from_raw(raw: i128) -> Result<Self> {
        if raw == i128::MIN {
            Err(NumericError::Overflow)
        } else {
            Ok(Fixed(raw))
        }
    }

    pub const fn raw(self) -> i128 {
        self.0
    }

    pub fn from_int(value: i64) -> Self {
        Fixed(value as i128 * SCALE)
    }

    /// Exact ratio `num / den`, rounded toward zero.
    pub fn from_ratio(num: i128, den: i128) -> Result<Self> {
        if den == 0 {
            return Err(NumericError::DivisionByZero);
        }
        let wide = I256::from(num)
            .checked_mul(I256::from(SCALE))
            .ok_or(NumericError::Overflow)?;
        narrow(wide / I256::from(den))
    }

    /// Quantizes a real number, rounding half to even.
    pub fn from_f64(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(NumericError::Overflow);
        }
        let scaled = (value * SCALE as f64).round_ties_even();
        // 2^127 is exactly representable; anything at or past it overflows.
        if scaled.abs() >= 1.7014118346046923e38 {
            return Err(NumericError::Overflow);
        }
        Ok(Fixed(scaled as i128))
    }

    pub fn to_f64(self) -> f64 {
        let int = (self.0 / SCALE) as f64;
        let frac = (self.0 % SCALE) as f64 / SCALE as f64;
        int + frac
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn checked_add(self, rhs: Fixed) -> Result<Fixed> {
        self.0
            .checked_add(rhs.0)
            .ok_or(NumericError::Overflow)
            .and_then(Fixed::from_raw)
    }

    pub fn checked_sub(self, rhs: Fixed) -> Result<Fixed> {
        self.0
            .checked_sub(rhs.0)
            .ok_or(NumericError::Overflow)
            .and_then(Fixed::from_raw)
    }

    /// Product with a single rescale, rounding toward zero.
    pub fn checked_mul(self, rhs: Fixed) -> Result<Fixed> {
        let wide = I256::from(self.0)
            .checked_mul(I256::from(rhs.0))
            .ok_or(NumericError::Overflow)?;
        narrow(wide / I256::from(SCALE))
    }

    pub fn checked_div(self, rhs: Fixed) -> Result<Fixed> {
        if rhs.0 == 0 {
            return Err(NumericError::DivisionByZero);
        }
        let wide = I256::from(self.0)
            .checked_mul(I256::from(SCALE))
            .ok_or(NumericError::Overflow)?;
        narrow(wide / I256::from(rhs.0))
    }

    /// `self × num / den` with the multiplication done first in 256 bits.
    pub fn mul_div(self, num: i128, den: i128) -> Result<Fixed> {
        if den == 0 {
            return Err(NumericError::DivisionByZero);
        }
        let wide = I256::from(self.0)
            .checked_mul(I256::from(num))
            .ok_or(NumericError::Overflow)?;
        narrow(wide / I256::from(den))
    }

    /// Parses a decimal string with at most nine fractional digits.
    pub fn from_decimal(text: &str) -> Result<Fixed> {
        let bad = || NumericError::Parse(text.to_string());
        let (negative, body) = match text.as_bytes().first() {
            Some(b'-') => (true, &text[1..]),
            Some(b'+') => (false, &text[1..]),
            _ => (false, text),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (body, None),
        };
        if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let mut raw: i128 = 0;
        for b in int_part.bytes() {
            raw = raw
                .checked_mul(10)
                .and_then(|r| r.checked_add((b - b'0') as i128))
                .ok_or(NumericError::Overflow)?;
        }
        raw = raw.checked_mul(SCALE).ok_or(NumericError::Overflow)?;
        if let Some(frac) = frac_part {
            if frac.is_empty()
                || frac.len() > DECIMALS as usize
                || !frac.bytes().all(|b| b.is_ascii_digit())
            {
                return Err(bad());
            }
            let mut digits: i128 = 0;
            for b in frac.bytes() {
                digits = digits * 10 + (b - b'0') as i128;
            }
            digits *= 10_i128.pow(DECIMALS - frac.len() as u32);
            raw = raw.checked_add(digits).ok_or(NumericError::Overflow)?;
        }
        // raw is non-negative here, so negation cannot overflow.
        Fixed::from_raw(if negative { -raw } else { raw })
    }

    /// Shortest exact decimal rendering, e.g. `1.5`, `0`, `-0.000000001`.
    pub fn to_decimal(self) -> String {
        let magnitude = self.0.unsigned_abs();
        let int = magnitude / SCALE as u128;
        let frac = magnitude % SCALE as u128;
        let sign = if self.0 < 0 { "-" } else { "" };
        if frac == 0 {
            format!("{sign}{int}")
        } else {
            let digits = format!("{frac:09}");
            format!("{sign}{int}.{}", digits.trim_end_matches('0'))
        }
    }
}

fn narrow(wide: I256) -> Result<Fixed> {
    i128::try_from(wide)
        .map_err(|_| NumericError::Overflow)
        .and_then(Fixed::from_raw)
}

impl Neg for Fixed {
    type Output = Fixed;

    fn neg(self) -> Fixed {
        // i128::MIN is never constructed, so this is exact.
        Fixed(-self.0)
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal())
    }
}

impl FromStr for Fixed {
    type Err = NumericError;

    fn from_str(s: &str) -> Result<Self> {
        Fixed::from_decimal(s)
    }
}

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if serializer.is_human_readable() {
            serializer.serialize_str(&self.to_decimal())
        } else {
            serializer.serialize_i128(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Fixed {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        if deserializer.is_human_readable() {
            // Accept both "1.5" and 1.5; numbers go through their textual form.
            let value = serde_json::Value::deserialize(deserializer)?;
            let text = match &value {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                other => return Err(D::Error::custom(format!("expected decimal, got {other}"))),
            };
            Fixed::from_decimal(&text).map_err(D::Error::custom)
        } else {
            let raw = i128::deserialize(deserializer)?;
            Fixed::from_raw(raw).map_err(D::Error::custom)
        }
    }
}

/// Fixed-point parameter or update vector of a model with `dim` parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Fixed>", into = "Vec<Fixed>")]
pub struct GradientVector {
    components: Vec<Fixed>,
}

impl TryFrom<Vec<Fixed>> for GradientVector {
    type Error = NumericError;

    fn try_from(components: Vec<Fixed>) -> Result<Self> {
        GradientVector::new(components)
    }
}

impl From<GradientVector> for Vec<Fixed> {
    fn from(v: GradientVector) -> Self {
        v.components
    }
}

impl GradientVector {
    pub fn new(components: Vec<Fixed>) -> Result<Self> {
        if components.is_empty() {
            return Err(NumericError::EmptyInput);
        }
        Ok(GradientVector { components })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        GradientVector::new(vec![Fixed::ZERO; dim])
    }

    pub fn from_f64s(values: &[f64]) -> Result<Self> {
        values
            .iter()
            .map(|&v| Fixed::from_f64(v))
            .collect::<Result<Vec<_>>>()
            .and_then(GradientVector::new)
    }

    pub fn from_decimals(values: &[&str]) -> Result<Self> {
        values
            .iter()
            .map(|s| Fixed::from_decimal(s))
            .collect::<Result<Vec<_>>>()
            .and_then(GradientVector::new)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Fixed] {
        &self.components
    }

    pub fn to_f64s(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.to_f64()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.raw() == 0)
    }

    fn check_dim(&self, other: &GradientVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(NumericError::DimMismatch { left: self.dim(), right: other.dim() });
        }
        Ok(())
    }

    /// Unrescaled inner product at scale `SCALE²`.
    pub(crate) fn dot_wide(&self, other: &GradientVector) -> Result<I256> {
        self.check_dim(other)?;
        let mut acc = I256::ZERO;
        for (a, b) in self.components.iter().zip(&other.components) {
            let product = I256::from(a.raw())
                .checked_mul(I256::from(b.raw()))
                .ok_or(NumericError::Overflow)?;
            acc = acc.checked_add(product).ok_or(NumericError::Overflow)?;
        }
        Ok(acc)
    }

    /// `‖self‖₂ ≤ bound`, decided exactly by comparing squares.
    pub fn norm_within(&self, bound: Fixed) -> Result<bool> {
        if bound.is_negative() {
            return Ok(false);
        }
        let norm_sq = self.dot_wide(self)?;
        let bound_sq = I256::from(bound.raw()) * I256::from(bound.raw());
        Ok(norm_sq <= bound_sq)
    }

    pub fn norm_f64(&self) -> f64 {
        self.to_f64s().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn checked_add(&self, other: &GradientVector) -> Result<GradientVector> {
        self.check_dim(other)?;
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.checked_add(*b))
            .collect::<Result<Vec<_>>>()
            .map(|components| GradientVector { components })
    }

    pub fn checked_scale(&self, factor: Fixed) -> Result<GradientVector> {
        self.components
            .iter()
            .map(|c| c.checked_mul(factor))
            .collect::<Result<Vec<_>>>()
            .map(|components| GradientVector { components })
    }

    pub fn negated(&self) -> GradientVector {
        GradientVector { components: self.components.iter().map(|c| -*c).collect() }
    }

    /// Concatenates ordered chunks into one vector.
    pub fn concat(chunks: &[Vec<Fixed>]) -> Result<GradientVector> {
        GradientVector::new(chunks.iter().flatten().copied().collect())
    }
}

/// Inner product, one terminal rescale toward zero.
pub fn dot(a: &GradientVector, b: &GradientVector) -> Result<Fixed> {
    narrow(a.dot_wide(b)? / I256::from(SCALE))
}

fn check_uniform(vectors: &[GradientVector], weight_count: usize) -> Result<usize> {
    let first = vectors.first().ok_or(NumericError::EmptyInput)?;
    if weight_count != vectors.len() {
        return Err(NumericError::DimMismatch { left: vectors.len(), right: weight_count });
    }
    for v in vectors {
        first.check_dim(v)?;
    }
    Ok(first.dim())
}

/// Component-wise `Σ wᵢ·vᵢ`, accumulated left to right, rescaled once.
pub fn weighted_sum(vectors: &[GradientVector], weights: &[Fixed]) -> Result<GradientVector> {
    let dim = check_uniform(vectors, weights.len())?;
    let scale = I256::from(SCALE);
    let components = (0..dim)
        .map(|k| {
            let mut acc = I256::ZERO;
            for (v, w) in vectors.iter().zip(weights) {
                let term = I256::from(v.components[k].raw())
                    .checked_mul(I256::from(w.raw()))
                    .ok_or(NumericError::Overflow)?;
                acc = acc.checked_add(term).ok_or(NumericError::Overflow)?;
            }
            narrow(acc / scale)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradientVector { components })
}

/// Sample-count weighted mean `Σ (nᵢ/N)·vᵢ` with `N = Σ nᵢ`.
///
/// The integer weights are kept exact: each component is `Σ nᵢ·vᵢ` divided by
/// `N` once, so the only rounding is the final division.
pub fn weighted_mean(vectors: &[GradientVector], counts: &[u64]) -> Result<GradientVector> {
    let dim = check_uniform(vectors, counts.len())?;
    let total: u128 = counts.iter().map(|&n| n as u128).sum();
    if total == 0 {
        return Err(NumericError::DivisionByZero);
    }
    let total = I256::from(total);
    let components = (0..dim)
        .map(|k| {
            let mut acc = I256::ZERO;
            for (v, &n) in vectors.iter().zip(counts) {
                let term = I256::from(v.components[k].raw())
                    .checked_mul(I256::from(n))
                    .ok_or(NumericError::Overflow)?;
                acc = acc.checked_add(term).ok_or(NumericError::Overflow)?;
            }
            narrow(acc / total)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradientVector { components })
}
