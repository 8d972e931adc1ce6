//! CT-guided voxel-wise regularization weight map.
//!
//! The moving CT is min-max normalized, passed through a power map with
//! exponent gamma, and projected affinely onto `[mu_r - delta, mu_r + delta]`.
//! High-HU voxels (bone) end up near the upper bound, low-HU voxels (air,
//! lung) near the lower bound, so the smoothness penalty is strongest where
//! anatomy is rigid.

use crate::error::{Error, Result};
use crate::volume::{normalize_unit, Grid, Volume};
use serde::{Deserialize, Serialize};

/// Parameters of the weight-map construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightMapParams {
    /// Mean regularization weight, the center of the projection interval.
    pub mu_r: f64,
    /// Half-width of the projection interval; `mu_r - delta` must be >= 0.
    pub delta: f64,
    /// Exponent of the nonlinear intensity mapping; must be > 0.
    pub gamma: f64,
}

impl WeightMapParams {
    pub fn new(mu_r: f64, delta: f64, gamma: f64) -> Result<Self> {
        let p = Self { mu_r, delta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu_r.is_finite() || !self.delta.is_finite() || !self.gamma.is_finite() {
            return Err(Error::InvalidParams("weight-map parameters must be finite".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidParams(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.mu_r - self.delta < 0.0 {
            return Err(Error::InvalidParams(format!(
                "mu_r - delta must be >= 0 (weights are non-negative), got mu_r {} delta {}",
                self.mu_r, self.delta
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParams(format!("gamma must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Voxel-wise regularization coefficients, bounded by the params that built it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub grid: Grid,
    pub weights: Vec<f64>,
}

impl WeightMap {
    /// View the weights as a scalar volume (for serialization).
    pub fn as_volume(&self) -> Volume {
        Volume { grid: self.grid.clone(), values: self.weights.clone() }
    }

    pub fn from_volume(vol: Volume) -> Self {
        Self { grid: vol.grid, weights: vol.values }
    }
}

/// Min-max normalize CT intensities to [0, 1] over the whole volume.
pub fn normalize_ct(ct: &Volume) -> Result<Volume> {
    normalize_unit(ct)
}

/// Per-voxel power map `c^gamma` on a [0, 1] volume.
pub fn gamma_map(norm_ct: &Volume, gamma: f64) -> Result<Volume> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParams(format!("gamma must be > 0, got {gamma}")));
    }
    if let Some(v) = norm_ct.values.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::OutOfRange(format!("normalized CT value {v} outside [0, 1]")));
    }
    let values = if gamma == 1.0 {
        norm_ct.values.clone()
    } else {
        norm_ct.values.iter().map(|&v| v.powf(gamma)).collect()
    };
    Ok(Volume { grid: norm_ct.grid.clone(), values })
}

/// Affine projection of a [0, 1] volume onto `[mu_r - delta, mu_r + delta]`:
/// `w = (mu_r - delta) + 2 delta c`.
pub fn project_weights(mapped: &Volume, mu_r: f64, delta: f64) -> Result<WeightMap> {
    if mu_r - delta < 0.0 || delta < 0.0 {
        return Err(Error::InvalidParams(format!(
            "projection interval [{}, {}] extends below zero",
            mu_r - delta,
            mu_r + delta
        )));
    }
    if let Some(v) = mapped.values.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::OutOfRange(format!("mapped CT value {v} outside [0, 1]")));
    }
    let lo = mu_r - delta;
    let weights = mapped.values.iter().map(|&c| lo + 2.0 * delta * c).collect();
    Ok(WeightMap { grid: mapped.grid.clone(), weights })
}

/// Full pipeline: normalize the moving CT, apply the gamma map, project onto
/// the weight interval.
pub fn build_weight_map(moving_ct: &Volume, params: &WeightMapParams) -> Result<WeightMap> {
    params.validate()?;
    let normed = normalize_ct(moving_ct)?;
    let mapped = gamma_map(&normed, params.gamma)?;
    project_weights(&mapped, params.mu_r, params.delta)
}

/// Spatially uniform weight map `w = lambda`, the conventional global-scalar
/// baseline; equals [`build_weight_map`] with `delta = 0`.
pub fn uniform_weight_map(grid: &Grid, lambda: f64) -> Result<WeightMap> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParams(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(WeightMap { grid: grid.clone(), weights: vec![lambda; grid.len()] })
}
