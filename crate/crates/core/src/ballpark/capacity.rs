use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rule-of-thumb training-set size for a model with `weights` coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityQuery {
    pub weights: u64,
    pub dropout_p: f64,
    pub samples_per_coeff: u64,
}

impl CapacityQuery {
    pub fn new(weights: u64, dropout_p: f64) -> Result<Self> {
        let q = Self {
            weights,
            dropout_p,
            samples_per_coeff: 5,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::param(format!("dropout must be in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }
}

/// Resolution of the retained fraction `1 - dropout_p`.
const KEEP_SCALE: u128 = 1_000_000_000;

/// `floor(samples_per_coeff * weights * (1 - dropout_p))`.
///
/// The retained fraction is rounded to nine decimals first so that decimal
/// inputs such as 0.8 behave exactly; the product is then integer.
pub fn capacity_estimate(q: &CapacityQuery) -> u64 {
    let keep = ((1.0 - q.dropout_p) * KEEP_SCALE as f64).round() as u128;
    let total = q.samples_per_coeff as u128 * q.weights as u128 * keep / KEEP_SCALE;
    total.min(u64::MAX as u128) as u64
}
