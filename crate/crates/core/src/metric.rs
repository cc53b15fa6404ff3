//! The shared embedding space: scaled L2 normalization and the two
//! similarity measures defined on it.
//!
//! Every embedding is a point on the hypersphere of radius `scale`. On that
//! sphere, squared Euclidean distance and inner product are two views of the
//! same quantity:
//!
//! ```text
//! d(a, b)^2 + 2 * <a, b> = 2 * scale^2
//! ```
//!
//! so ranking candidates by descending inner product and by ascending
//! distance always agree. Matching/retrieval code uses the inner product;
//! the triplet loss uses the distance; this module is where that
//! interchangeability is pinned down and tested.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this tolerance are treated as zero vectors.
pub const NORM_EPSILON: f64 = 1e-12;

/// Geometry of the shared space: output dimensionality and sphere radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSpaceConfig {
    pub dim: usize,
    pub scale: f64,
}

impl Default for MetricSpaceConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            scale: 128.0,
        }
    }
}

impl MetricSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be >= 1".into()));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "embedding scale must be finite and positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// A point on the radius-`scale` hypersphere.
///
/// Values of this type only come out of [`l2_normalize_scale`] (directly or
/// via the embedders), which is what maintains the norm invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Projects `z` onto the hypersphere of radius `scale`:
/// `e = scale * z / ||z||`.
///
/// Returns [`Error::ZeroVector`] when `||z|| <= NORM_EPSILON`; there is no
/// meaningful direction to keep in that case.
pub fn l2_normalize_scale(z: &[f64], scale: f64) -> Result<Embedding> {
    let norm = l2_norm(z);
    if norm <= NORM_EPSILON {
        return Err(Error::ZeroVector {
            norm,
            epsilon: NORM_EPSILON,
        });
    }
    let factor = scale / norm;
    Ok(Embedding {
        values: z.iter().map(|v| v * factor).collect(),
    })
}

/// Inner product `<a, b>` between two embeddings.
///
/// On the sphere this is a similarity: `scale^2` for identical directions,
/// `0` for orthogonal ones, `-scale^2` for antipodal ones.
pub fn inner_product_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims("inner_product_similarity", a, b)?;
    Ok(dot(&a.values, &b.values))
}

/// Euclidean distance `||a - b||` between two embeddings.
pub fn euclidean_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims("euclidean_distance", a, b)?;
    Ok(raw_distance(&a.values, &b.values))
}

fn check_dims(context: &'static str, a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context,
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub(crate) fn raw_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
