//! Training-objective terms and their analytic gradients with respect to the
//! displacement field.
//!
//! The total objective is `L_total = L_sim + L_seg + L_reg`:
//! - `L_sim`: negated soft Dice between the fixed CT and the warped moving CT;
//! - `L_seg`: negated mean soft Dice over a sampled subset of segmentation
//!   classes, each compared as a warped indicator volume;
//! - `L_reg`: voxel-mean of `w(x) * ||grad u(x)||^2` with forward differences,
//!   the spatially-weighted smoothness penalty.

use crate::error::{Error, Result};
use crate::util::par_sum;
use crate::volume::{
    warp_indicator, warp_scalar, warp_scalar_adjoint_into, DisplacementField, LabelVolume,
    RegistrationPair, Volume,
};
use crate::weight_map::WeightMap;
use rand::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Smoothing constant of the soft Dice ratio.
pub const DICE_EPSILON: f64 = 1e-6;

/// The three objective terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sim: f64,
    pub seg: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(sim: f64, seg: f64, reg: f64) -> Self {
        Self { sim, seg, reg, total: sim + seg + reg }
    }
}

/// A deterministic draw of segmentation classes for the seg loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSample {
    pub class_ids: Vec<u8>,
    pub seed: u64,
    pub count: usize,
}

/// Uniform sample of `count` distinct ids from `universe` without
/// replacement; deterministic given `seed`, output sorted ascending.
pub fn sample_labels(universe: &[u8], count: usize, seed: u64) -> Result<LabelSample> {
    let mut pool: Vec<u8> = universe.to_vec();
    pool.sort_unstable();
    pool.dedup();
    if count > pool.len() {
        return Err(Error::NotEnoughLabels(format!(
            "requested {count} labels from a universe of {}",
            pool.len()
        )));
    }
    // Partial Fisher-Yates driven by the raw ChaCha8 stream; avoids any
    // dependence on rand's range-sampling internals.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = pool.len();
    for i in 0..count {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut class_ids = pool[..count].to_vec();
    class_ids.sort_unstable();
    Ok(LabelSample { class_ids, seed, count })
}

fn check_dims(a: &Volume, b: &Volume) -> Result<()> {
    if a.grid.dims != b.grid.dims {
        return Err(Error::ShapeMismatch(format!(
            "dice operands have dims {:?} and {:?}",
            a.grid.dims, b.grid.dims
        )));
    }
    Ok(())
}

fn dice_parts(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len();
    let [sab, saa, sbb] = crate::util::par_sum3(n, |i| {
        let (x, y) = (a[i], b[i]);
        [x * y, x * x, y * y]
    });
    (2.0 * sab + DICE_EPSILON, saa + sbb + DICE_EPSILON)
}

/// Squared-denominator soft Dice `(2<a,b> + eps) / (<a,a> + <b,b> + eps)`
/// on non-negative volumes.
pub fn soft_dice(a: &Volume, b: &Volume) -> Result<f64> {
    check_dims(a, b)?;
    for v in [a, b] {
        if v.values.iter().any(|&x| x < 0.0) {
            return Err(Error::OutOfRange("soft dice requires non-negative values".into()));
        }
    }
    let (num, den) = dice_parts(&a.values, &b.values);
    Ok(num / den)
}

/// Soft Dice together with its gradient in the second argument:
/// `dD/db_i = (2 a_i den - num 2 b_i) / den^2`.
fn soft_dice_with_grad_b(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let (num, den) = dice_parts(a, b);
    let inv_den = 1.0 / den;
    let inv_den2 = inv_den * inv_den;
    let grad = a
        .par_iter()
        .zip(b.par_iter())
        .map(|(&ai, &bi)| (2.0 * ai * den - num * 2.0 * bi) * inv_den2)
        .collect();
    (num * inv_den, grad)
}

/// CT similarity term `-D(fixed_ct, moving_ct o u)`.
pub fn sim_loss(fixed_ct: &Volume, moving_ct: &Volume, ddf: &DisplacementField) -> Result<f64> {
    let warped = warp_scalar(moving_ct, ddf);
    Ok(-soft_dice(fixed_ct, &warped)?)
}

/// Mask overlap term: negated mean soft Dice over the sampled classes, with
/// the moving mask warped differentiably.
///
/// A class absent from both segmentations scores Dice 1 (two empty masks
/// agree perfectly) and contributes zero gradient.
pub fn seg_loss(
    fixed_seg: &LabelVolume,
    moving_seg: &LabelVolume,
    ddf: &DisplacementField,
    sample: &LabelSample,
) -> Result<f64> {
    if sample.class_ids.is_empty() {
        return Err(Error::InvalidParams("empty label sample".into()));
    }
    let mut acc = 0.0;
    for &c in &sample.class_ids {
        let fixed_ind = fixed_seg.indicator(c)?;
        let warped = warp_indicator(moving_seg, c, ddf)?;
        acc += soft_dice(&fixed_ind, &warped)?;
    }
    Ok(-acc / sample.class_ids.len() as f64)
}

/// Weighted smoothness penalty: voxel mean of `w(x) ||grad u(x)||_F^2` with
/// forward differences (trailing difference 0).
pub fn reg_loss(ddf: &DisplacementField, w: &WeightMap) -> Result<f64> {
    if w.grid.dims != ddf.grid.dims {
        return Err(Error::ShapeMismatch(format!(
            "weight map dims {:?} != field dims {:?}",
            w.grid.dims, ddf.grid.dims
        )));
    }
    let grid = &ddf.grid;
    let [h, wd, d] = grid.dims;
    let n = grid.len();
    let sum = par_sum(n, |idx| {
        let [x0, x1, x2] = grid.coords(idx);
        let u = ddf.vectors[idx];
        let mut e = 0.0;
        if x0 + 1 < h {
            let un = ddf.vectors[idx + wd * d];
            for i in 0..3 {
                let g = un[i] - u[i];
                e += g * g;
            }
        }
        if x1 + 1 < wd {
            let un = ddf.vectors[idx + d];
            for i in 0..3 {
                let g = un[i] - u[i];
                e += g * g;
            }
        }
        if x2 + 1 < d {
            let un = ddf.vectors[idx + 1];
            for i in 0..3 {
                let g = un[i] - u[i];
                e += g * g;
            }
        }
        w.weights[idx] * e
    });
    Ok(sum / n as f64)
}

fn reg_grad_into(ddf: &DisplacementField, w: &WeightMap, acc: &mut [[f64; 3]]) {
    let grid = &ddf.grid;
    let [h, wd, d] = grid.dims;
    let n = grid.len();
    let scale = 2.0 / n as f64;
    let chunk = (wd * d).max(1);
    acc.par_chunks_mut(chunk).enumerate().for_each(|(chunk_idx, out)| {
        let base = chunk_idx * chunk;
        for (off, o) in out.iter_mut().enumerate() {
            let idx = base + off;
            let [x0, x1, x2] = grid.coords(idx);
            let u = ddf.vectors[idx];
            let wy = w.weights[idx];
            let strides = [wd * d, d, 1];
            let pos = [x0, x1, x2];
            let lims = [h, wd, d];
            for j in 0..3 {
                let s = strides[j];
                if pos[j] + 1 < lims[j] {
                    let un = ddf.vectors[idx + s];
                    for i in 0..3 {
                        o[i] -= scale * wy * (un[i] - u[i]);
                    }
                }
                if pos[j] > 0 {
                    let up = ddf.vectors[idx - s];
                    let wp = w.weights[idx - s];
                    for i in 0..3 {
                        o[i] += scale * wp * (u[i] - up[i]);
                    }
                }
            }
        }
    });
}

/// Exact adjoint of [`reg_loss`] under the forward-difference discretization.
pub fn reg_loss_grad(ddf: &DisplacementField, w: &WeightMap) -> Result<DisplacementField> {
    if w.grid.dims != ddf.grid.dims {
        return Err(Error::ShapeMismatch(format!(
            "weight map dims {:?} != field dims {:?}",
            w.grid.dims, ddf.grid.dims
        )));
    }
    let mut acc = vec![[0.0f64; 3]; ddf.grid.len()];
    reg_grad_into(ddf, w, &mut acc);
    Ok(DisplacementField { grid: ddf.grid.clone(), vectors: acc })
}

/// Sampled segmentation classes with precomputed indicator volumes, shared by
/// value and gradient evaluation (and cached per pyramid level by the engine).
pub(crate) struct SegClasses<'a> {
    pub ids: Vec<u8>,
    pub fixed: Vec<&'a Volume>,
    pub moving: Vec<&'a Volume>,
}

/// Evaluate the full objective; gradient accumulation is optional so the
/// same code path serves both [`total_loss`] and [`total_loss_grad`].
///
/// An empty class list is allowed here (the seg term is then 0); the public
/// entry points reject it before reaching this.
pub(crate) fn objective(
    fixed_ct: &Volume,
    moving_ct: &Volume,
    seg: &SegClasses<'_>,
    ddf: &DisplacementField,
    w: &WeightMap,
    mut grad: Option<&mut Vec<[f64; 3]>>,
) -> Result<LossBreakdown> {
    if let Some(g) = grad.as_deref_mut() {
        g.clear();
        g.resize(ddf.grid.len(), [0.0; 3]);
    }

    // similarity on CT
    let warped_ct = warp_scalar(moving_ct, ddf);
    check_dims(fixed_ct, &warped_ct)?;
    let sim = if let Some(g) = grad.as_deref_mut() {
        let (dice, dgrad) = soft_dice_with_grad_b(&fixed_ct.values, &warped_ct.values);
        warp_scalar_adjoint_into(moving_ct, ddf, &dgrad, -1.0, g);
        -dice
    } else {
        let (num, den) = dice_parts(&fixed_ct.values, &warped_ct.values);
        -(num / den)
    };

    // segmentation overlap on sampled classes
    let seg_term = if seg.ids.is_empty() {
        0.0
    } else {
        let k = seg.ids.len() as f64;
        let mut dice_sum = 0.0;
        for i in 0..seg.ids.len() {
            let warped = warp_scalar(seg.moving[i], ddf);
            if let Some(g) = grad.as_deref_mut() {
                let (dice, dgrad) = soft_dice_with_grad_b(&seg.fixed[i].values, &warped.values);
                warp_scalar_adjoint_into(seg.moving[i], ddf, &dgrad, -1.0 / k, g);
                dice_sum += dice;
            } else {
                let (num, den) = dice_parts(&seg.fixed[i].values, &warped.values);
                dice_sum += num / den;
            }
        }
        -dice_sum / k
    };

    let reg = reg_loss(ddf, w)?;
    if let Some(g) = grad.as_deref_mut() {
        reg_grad_into(ddf, w, g);
    }

    Ok(LossBreakdown::new(sim, seg_term, reg))
}

fn build_seg_indicators(
    fixed_seg: &LabelVolume,
    moving_seg: &LabelVolume,
    sample: &LabelSample,
) -> Result<(Vec<Volume>, Vec<Volume>)> {
    let mut fixed = Vec::with_capacity(sample.class_ids.len());
    let mut moving = Vec::with_capacity(sample.class_ids.len());
    for &c in &sample.class_ids {
        fixed.push(fixed_seg.indicator(c)?);
        moving.push(moving_seg.indicator(c)?);
    }
    Ok((fixed, moving))
}

/// Evaluate all three objective terms for a registration pair.
pub fn total_loss(
    pair: &RegistrationPair,
    ddf: &DisplacementField,
    w: &WeightMap,
    sample: &LabelSample,
) -> Result<LossBreakdown> {
    if sample.class_ids.is_empty() {
        return Err(Error::InvalidParams("empty label sample".into()));
    }
    let (fixed, moving) = build_seg_indicators(&pair.fixed_seg, &pair.moving_seg, sample)?;
    let seg = SegClasses {
        ids: sample.class_ids.clone(),
        fixed: fixed.iter().collect(),
        moving: moving.iter().collect(),
    };
    objective(&pair.fixed_ct, &pair.moving_ct, &seg, ddf, w, None)
}

/// Analytic gradient of [`total_loss`] with respect to the displacement
/// field: soft-Dice gradients chained through the warp adjoint, plus the
/// regularizer adjoint.
pub fn total_loss_grad(
    pair: &RegistrationPair,
    ddf: &DisplacementField,
    w: &WeightMap,
    sample: &LabelSample,
) -> Result<DisplacementField> {
    if sample.class_ids.is_empty() {
        return Err(Error::InvalidParams("empty label sample".into()));
    }
    let (fixed, moving) = build_seg_indicators(&pair.fixed_seg, &pair.moving_seg, sample)?;
    let seg = SegClasses {
        ids: sample.class_ids.clone(),
        fixed: fixed.iter().collect(),
        moving: moving.iter().collect(),
    };
    let mut g = Vec::new();
    objective(&pair.fixed_ct, &pair.moving_ct, &seg, ddf, w, Some(&mut g))?;
    Ok(DisplacementField { grid: ddf.grid.clone(), vectors: g })
}
