//! Confidence scoring for matching test designs.
//!
//! A 1:2 matching benchmark with `N` identities and `n` sampled test tuples
//! covers the `N*(N-1)` ordered identity pairs with average multiplicity
//! `K = n / (N*(N-1))`. The confidence score `T = N * ln(K)` rewards designs
//! that cover many identities *and* revisit each pair often; it makes
//! accuracies reported on differently sized benchmarks comparable. `T` is
//! conventionally quoted to four significant figures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A matching test design: how many identities, how many sampled tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestDesign {
    pub num_identities: u64,
    pub num_tuples: u64,
}

impl TestDesign {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(Error::InvalidConfig(
                "a test design needs at least two identities".into(),
            ));
        }
        if self.num_tuples == 0 {
            return Err(Error::InvalidConfig(
                "a test design needs at least one tuple".into(),
            ));
        }
        Ok(())
    }
}

/// Average ordered-pair coverage `K = n / (N*(N-1))`.
pub fn pair_coverage_k(design: TestDesign) -> Result<f64> {
    design.validate()?;
    let n = design.num_identities as f64;
    Ok(design.num_tuples as f64 / (n * (n - 1.0)))
}

/// Design confidence `T = N * ln(K)`. Negative when pairs are covered less
/// than once on average, zero at exactly one visit per ordered pair.
pub fn confidence_t(design: TestDesign) -> Result<f64> {
    Ok(design.num_identities as f64 * pair_coverage_k(design)?.ln())
}

/// Rounds to four significant (decimal) figures, the conventional precision
/// for reporting `T`.
pub fn round_to_4_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor();
    let factor = 10f64.powf(3.0 - magnitude);
    (x * factor).round() / factor
}
