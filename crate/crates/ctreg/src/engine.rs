//! Per-pair optimization of the total objective over a dense displacement
//! field: Adam with cosine step decay on a coarse-to-fine pyramid.
//!
//! Each level downsamples the inputs by block pooling, rebuilds the weight
//! map from the downsampled moving CT, initializes the field from the coarser
//! solution, and redraws the segmentation class sample every iteration from
//! an iteration-indexed seed stream. Runs are deterministic given the config
//! seed.

use crate::error::{Error, Result};
use crate::losses::{objective, sample_labels, LossBreakdown, SegClasses};
use crate::util::mix_seed;
use crate::volume::{
    resize_trilinear, DisplacementField, Grid, LabelVolume, RegistrationPair, Volume,
};
use crate::weight_map::{build_weight_map, uniform_weight_map, WeightMap, WeightMapParams};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::time::Instant;

/// All optimizer and objective hyperparameters of one registration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub weight_params: WeightMapParams,
    /// Downsampling factor per pyramid level, strictly decreasing, last 1.
    pub pyramid_factors: Vec<usize>,
    /// Iteration budget per level; same length as `pyramid_factors`.
    pub iters_per_level: Vec<usize>,
    /// Adam learning rate in voxels (decayed to 0 within each level).
    pub step_size: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Segmentation classes drawn per iteration (clamped to the universe).
    pub label_sample_count: usize,
    pub seed: u64,
    /// Relative change threshold on the 10-iteration smoothed total loss.
    pub convergence_tol: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            weight_params: WeightMapParams { mu_r: 4500.0, delta: 3000.0, gamma: 2.0 },
            pyramid_factors: vec![4, 2, 1],
            iters_per_level: vec![150, 100, 80],
            step_size: 0.25,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            label_sample_count: 10,
            seed: 0,
            convergence_tol: 1e-6,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.weight_params.validate()?;
        if self.pyramid_factors.is_empty() {
            return Err(Error::InvalidParams("pyramid_factors must be non-empty".into()));
        }
        if *self.pyramid_factors.last().unwrap() != 1 {
            return Err(Error::InvalidParams("pyramid_factors must end at 1".into()));
        }
        if self.pyramid_factors.iter().any(|&f| f == 0) {
            return Err(Error::InvalidParams("pyramid_factors must be positive".into()));
        }
        if !self.pyramid_factors.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::InvalidParams(format!(
                "pyramid_factors must be strictly decreasing, got {:?}",
                self.pyramid_factors
            )));
        }
        if self.iters_per_level.len() != self.pyramid_factors.len() {
            return Err(Error::InvalidParams(format!(
                "iters_per_level has {} entries for {} pyramid levels",
                self.iters_per_level.len(),
                self.pyramid_factors.len()
            )));
        }
        if self.iters_per_level.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParams("iters_per_level must be positive".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParams(format!("step_size must be > 0, got {}", self.step_size)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParams(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidParams(format!("adam_eps must be > 0, got {}", self.adam_eps)));
        }
        if self.label_sample_count == 0 {
            return Err(Error::InvalidParams("label_sample_count must be >= 1".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "convergence_tol must be >= 0, got {}",
                self.convergence_tol
            )));
        }
        Ok(())
    }
}

/// One optimizer iteration as recorded in the trace. `wall_ms` is wall-clock
/// telemetry and is not part of the determinism contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub level: usize,
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

/// Output of one registration run.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Full-resolution displacement field on the fixed grid.
    pub ddf: DisplacementField,
    pub trace: Vec<IterationRecord>,
    pub iterations_run: Vec<usize>,
    pub converged: Vec<bool>,
}

impl RegistrationResult {
    pub fn loss_trace(&self) -> Vec<LossBreakdown> {
        self.trace.iter().map(|r| r.loss).collect()
    }
}

/// Block-mean pooling by `factor` along every axis; trailing partial blocks
/// average over the voxels present. Spacing is multiplied by the factor.
pub fn downsample_volume(vol: &Volume, factor: usize) -> Result<Volume> {
    if factor == 0 {
        return Err(Error::InvalidParams("downsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(vol.clone());
    }
    let [h, w, d] = vol.grid.dims;
    if factor > h.max(w).max(d) {
        return Err(Error::InvalidParams(format!(
            "downsample factor {factor} exceeds dims {:?}",
            vol.grid.dims
        )));
    }
    let nd = [h.div_ceil(factor), w.div_ceil(factor), d.div_ceil(factor)];
    let grid = Grid {
        dims: nd,
        spacing: [
            vol.grid.spacing[0] * factor as f64,
            vol.grid.spacing[1] * factor as f64,
            vol.grid.spacing[2] * factor as f64,
        ],
        origin: vol.grid.origin,
    };
    let mut values = vec![0.0f64; grid.len()];
    for idx in 0..grid.len() {
        let [b0, b1, b2] = grid.coords(idx);
        let (lo0, hi0) = (b0 * factor, ((b0 + 1) * factor).min(h));
        let (lo1, hi1) = (b1 * factor, ((b1 + 1) * factor).min(w));
        let (lo2, hi2) = (b2 * factor, ((b2 + 1) * factor).min(d));
        let mut acc = 0.0;
        for x0 in lo0..hi0 {
            for x1 in lo1..hi1 {
                for x2 in lo2..hi2 {
                    acc += vol.at(x0, x1, x2);
                }
            }
        }
        let count = (hi0 - lo0) * (hi1 - lo1) * (hi2 - lo2);
        values[idx] = acc / count as f64;
    }
    Ok(Volume { grid, values })
}

/// Label downsampling by majority vote over each block; ties go to the
/// smaller id.
pub fn downsample_labels(seg: &LabelVolume, factor: usize) -> Result<LabelVolume> {
    if factor == 0 {
        return Err(Error::InvalidParams("downsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(seg.clone());
    }
    let [h, w, d] = seg.grid.dims;
    if factor > h.max(w).max(d) {
        return Err(Error::InvalidParams(format!(
            "downsample factor {factor} exceeds dims {:?}",
            seg.grid.dims
        )));
    }
    let nd = [h.div_ceil(factor), w.div_ceil(factor), d.div_ceil(factor)];
    let grid = Grid {
        dims: nd,
        spacing: [
            seg.grid.spacing[0] * factor as f64,
            seg.grid.spacing[1] * factor as f64,
            seg.grid.spacing[2] * factor as f64,
        ],
        origin: seg.grid.origin,
    };
    let mut labels = vec![0u8; grid.len()];
    let mut counts = vec![0u32; seg.num_classes];
    for idx in 0..grid.len() {
        let [b0, b1, b2] = grid.coords(idx);
        counts.fill(0);
        for x0 in b0 * factor..((b0 + 1) * factor).min(h) {
            for x1 in b1 * factor..((b1 + 1) * factor).min(w) {
                for x2 in b2 * factor..((b2 + 1) * factor).min(d) {
                    counts[seg.at(x0, x1, x2) as usize] += 1;
                }
            }
        }
        let mut best = 0usize;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = c; // strict > keeps ties at the smaller id
            }
        }
        labels[idx] = best as u8;
    }
    Ok(LabelVolume { grid, labels, num_classes: seg.num_classes })
}

/// Transfer a coarse field to a finer grid: each component is resized
/// trilinearly and the vectors are multiplied by `factor` (displacements are
/// stored in voxel units of their own grid).
pub fn upsample_ddf(
    ddf: &DisplacementField,
    target_grid: &Grid,
    factor: f64,
) -> Result<DisplacementField> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidParams(format!("upsample factor must be > 0, got {factor}")));
    }
    for a in 0..3 {
        let predicted = ddf.grid.dims[a] as f64 * factor;
        if (predicted - target_grid.dims[a] as f64).abs() > factor.max(1.0) + 1e-9 {
            return Err(Error::ShapeMismatch(format!(
                "upsample to dims {:?} from {:?} at factor {factor}",
                target_grid.dims, ddf.grid.dims
            )));
        }
    }
    if ddf.grid.dims == target_grid.dims && factor == 1.0 {
        return Ok(DisplacementField { grid: target_grid.clone(), vectors: ddf.vectors.clone() });
    }
    let n = target_grid.len();
    let mut vectors = vec![[0.0f64; 3]; n];
    for axis in 0..3 {
        let comp = Volume {
            grid: ddf.grid.clone(),
            values: ddf.vectors.iter().map(|v| v[axis]).collect(),
        };
        let resized = resize_trilinear(&comp, target_grid.dims)?;
        for (o, v) in vectors.iter_mut().zip(&resized.values) {
            o[axis] = v * factor;
        }
    }
    Ok(DisplacementField { grid: target_grid.clone(), vectors })
}

/// First/second moment buffers of Adam over a displacement field.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![[0.0; 3]; n], v: vec![[0.0; 3]; n] }
    }
}

/// One Adam update with bias correction; returns the additive field delta
/// `-lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    state: &mut AdamState,
    grad: &DisplacementField,
    t: usize,
    config: &RegistrationConfig,
) -> Result<Vec<[f64; 3]>> {
    adam_step_lr(state, grad, t, config.step_size, config)
}

/// [`adam_step`] with an explicit learning rate (used by the per-level decay
/// schedule).
pub fn adam_step_lr(
    state: &mut AdamState,
    grad: &DisplacementField,
    t: usize,
    lr: f64,
    config: &RegistrationConfig,
) -> Result<Vec<[f64; 3]>> {
    if t == 0 {
        return Err(Error::InvalidParams("adam step index starts at 1".into()));
    }
    let n = grad.vectors.len();
    if state.m.len() != n || state.v.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "adam state of {} entries for gradient of {n}",
            state.m.len()
        )));
    }
    let b1 = config.adam_beta1;
    let b2 = config.adam_beta2;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let mut delta = vec![[0.0f64; 3]; n];
    for i in 0..n {
        for a in 0..3 {
            let g = grad.vectors[i][a];
            state.m[i][a] = b1 * state.m[i][a] + (1.0 - b1) * g;
            state.v[i][a] = b2 * state.v[i][a] + (1.0 - b2) * g * g;
            let m_hat = state.m[i][a] / bc1;
            let v_hat = state.v[i][a] / bc2;
            delta[i][a] = -lr * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
    Ok(delta)
}

enum WeightMode {
    CtGuided,
    Uniform(f64),
}

struct Level {
    moving_ct: Volume,
    fixed_ct: Volume,
    weights: WeightMap,
    universe: Vec<u8>,
    moving_ind: Vec<Volume>,
    fixed_ind: Vec<Volume>,
    grid: Grid,
}

fn build_level(pair: &RegistrationPair, factor: usize, mode: &WeightMode, params: &WeightMapParams) -> Result<Level> {
    let moving_ct = downsample_volume(&pair.moving_ct, factor)?;
    let fixed_ct = downsample_volume(&pair.fixed_ct, factor)?;
    let moving_seg = downsample_labels(&pair.moving_seg, factor)?;
    let fixed_seg = downsample_labels(&pair.fixed_seg, factor)?;
    let weights = match mode {
        WeightMode::CtGuided => build_weight_map(&moving_ct, params)?,
        WeightMode::Uniform(lambda) => uniform_weight_map(&moving_ct.grid, *lambda)?,
    };
    // union of classes present in either segmentation, sorted
    let universe: Vec<u8> = fixed_seg
        .present_labels()
        .into_iter()
        .chain(moving_seg.present_labels())
        .collect::<BTreeSet<u8>>()
        .into_iter()
        .collect();
    let mut moving_ind = Vec::with_capacity(universe.len());
    let mut fixed_ind = Vec::with_capacity(universe.len());
    for &c in &universe {
        moving_ind.push(moving_seg.indicator(c)?);
        fixed_ind.push(fixed_seg.indicator(c)?);
    }
    let grid = fixed_ct.grid.clone();
    Ok(Level { moving_ct, fixed_ct, weights, universe, moving_ind, fixed_ind, grid })
}

/// Cosine learning-rate decay within one level: full step at the first
/// iteration, near zero at the budget.
fn level_lr(step_size: f64, it: usize, iters: usize) -> f64 {
    if iters <= 1 {
        return step_size;
    }
    let progress = (it - 1) as f64 / (iters - 1) as f64;
    step_size * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

fn register_impl(
    pair: &RegistrationPair,
    config: &RegistrationConfig,
    mode: WeightMode,
) -> Result<RegistrationResult> {
    config.validate()?;
    let mut trace = Vec::new();
    let mut iterations_run = Vec::new();
    let mut converged = Vec::new();
    let mut field: Option<(DisplacementField, usize)> = None;

    for (level_idx, (&factor, &iters)) in config
        .pyramid_factors
        .iter()
        .zip(&config.iters_per_level)
        .enumerate()
    {
        let ctx = format!("level {level_idx} (factor {factor})");
        let level = build_level(pair, factor, &mode, &config.weight_params)
            .map_err(|e| e.prefix(&ctx))?;

        let mut ddf = match field.take() {
            None => DisplacementField::zeros(level.grid.clone()),
            Some((coarse, coarse_factor)) => {
                let rel = coarse_factor as f64 / factor as f64;
                upsample_ddf(&coarse, &level.grid, rel).map_err(|e| e.prefix(&ctx))?
            }
        };

        let mut adam = AdamState::zeros(ddf.vectors.len());
        let mut totals: Vec<f64> = Vec::with_capacity(iters);
        let mut level_converged = false;
        let mut ran = 0usize;

        for it in 1..=iters {
            let t0 = Instant::now();
            let iter_seed = mix_seed(config.seed, level_idx as u64, it as u64);
            let count = config.label_sample_count.min(level.universe.len());
            let (ids, fixed_ind, moving_ind): (Vec<u8>, Vec<&Volume>, Vec<&Volume>) =
                if count == 0 {
                    (Vec::new(), Vec::new(), Vec::new())
                } else {
                    let sample = sample_labels(&level.universe, count, iter_seed)
                        .map_err(|e| e.prefix(&ctx))?;
                    let mut f = Vec::with_capacity(count);
                    let mut m = Vec::with_capacity(count);
                    for &c in &sample.class_ids {
                        let pos = level.universe.binary_search(&c).expect("sampled id in universe");
                        f.push(&level.fixed_ind[pos]);
                        m.push(&level.moving_ind[pos]);
                    }
                    (sample.class_ids, f, m)
                };
            let seg = SegClasses { ids, fixed: fixed_ind, moving: moving_ind };

            let mut grad_vec = Vec::new();
            let loss = objective(
                &level.fixed_ct,
                &level.moving_ct,
                &seg,
                &ddf,
                &level.weights,
                Some(&mut grad_vec),
            )
            .map_err(|e| e.prefix(&format!("{ctx}, iteration {it}")))?;

            let grad_norm = crate::util::par_sum(grad_vec.len(), |i| {
                let g = grad_vec[i];
                g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
            })
            .sqrt();

            let grad = DisplacementField { grid: level.grid.clone(), vectors: grad_vec };
            let lr = level_lr(config.step_size, it, iters);
            let delta = adam_step_lr(&mut adam, &grad, it, lr, config)?;
            for (u, d) in ddf.vectors.iter_mut().zip(&delta) {
                u[0] += d[0];
                u[1] += d[1];
                u[2] += d[2];
            }

            totals.push(loss.total);
            ran = it;
            trace.push(IterationRecord {
                level: level_idx,
                iteration: it,
                loss,
                grad_norm,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });

            // Convergence on the 10-iteration smoothed total: the current
            // window must not increase and must change by at most tol
            // relative to the previous window.
            if it >= 20 {
                let cur: f64 = totals[it - 10..it].iter().sum::<f64>() / 10.0;
                let prev: f64 = totals[it - 20..it - 10].iter().sum::<f64>() / 10.0;
                if cur <= prev && (prev - cur) <= config.convergence_tol * prev.abs().max(1e-30) {
                    level_converged = true;
                    break;
                }
            }
        }

        iterations_run.push(ran);
        converged.push(level_converged);
        field = Some((ddf, factor));
    }

    let (ddf, _) = field.expect("at least one pyramid level");
    Ok(RegistrationResult { ddf, trace, iterations_run, converged })
}

/// Coarse-to-fine optimization of the total objective with the CT-guided
/// weight map rebuilt at every level.
pub fn register(pair: &RegistrationPair, config: &RegistrationConfig) -> Result<RegistrationResult> {
    register_impl(pair, config, WeightMode::CtGuided)
}

/// Identical pipeline with a spatially uniform weight map `w = mu_r`: the
/// conventional single-scalar regularization baseline.
pub fn baseline_register(
    pair: &RegistrationPair,
    config: &RegistrationConfig,
) -> Result<RegistrationResult> {
    let lambda = config.weight_params.mu_r;
    register_impl(pair, config, WeightMode::Uniform(lambda))
}
