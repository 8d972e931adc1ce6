//! Grid geometry, scalar/label/vector volumes, trilinear sampling and
//! warping with analytic adjoints, and preprocessing operations.
//!
//! Conventions used throughout the crate:
//! - dims are `(H, W, D)`; voxel `x = (x0, x1, x2)` maps to the linear index
//!   `(x0 * W + x1) * D + x2`.
//! - displacement vectors are in voxel units of the moving grid; a warp
//!   evaluates `moving(x + u(x))` for every voxel `x` of the fixed grid.
//! - sampling outside the volume reads zero (background-air semantics).

use crate::error::{Error, Result};
use rayon::prelude::*;

/// Axis-aligned voxel lattice with physical spacing and origin in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParams(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParams(format!("grid spacing must be > 0, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidParams(format!("grid origin must be finite, got {origin:?}")));
        }
        Ok(Self { dims, spacing, origin })
    }

    /// Unit-spacing grid at the world origin.
    pub fn isotropic(dims: [usize; 3]) -> Self {
        Self { dims, spacing: [1.0; 3], origin: [0.0; 3] }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false // dims are validated >= 1
    }

    #[inline]
    pub fn index(&self, x0: usize, x1: usize, x2: usize) -> usize {
        (x0 * self.dims[1] + x1) * self.dims[2] + x2
    }

    /// Voxel coordinates of a linear index.
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let d = self.dims[2];
        let w = self.dims[1];
        [idx / (d * w), (idx / d) % w, idx % d]
    }

    /// World-space position (mm) of an integer voxel index.
    pub fn world(&self, x: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + x[0] as f64 * self.spacing[0],
            self.origin[1] + x[1] as f64 * self.spacing[1],
            self.origin[2] + x[2] as f64 * self.spacing[2],
        ]
    }

    pub fn same_dims(&self, other: &Grid) -> bool {
        self.dims == other.dims
    }
}

/// Scalar 3D field on a grid. Values are finite (checked at construction).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl Volume {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "volume has {} values for grid of {} voxels",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::OutOfRange(format!("non-finite voxel value {v}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![value; n] }
    }

    #[inline]
    pub fn at(&self, x0: usize, x1: usize, x2: usize) -> f64 {
        self.values[self.grid.index(x0, x1, x2)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Integer-labeled 3D field; class ids live in `0..num_classes`, 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub grid: Grid,
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl LabelVolume {
    pub fn new(grid: Grid, labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "label volume has {} labels for grid of {} voxels",
                labels.len(),
                grid.len()
            )));
        }
        if num_classes == 0 || num_classes > 128 {
            return Err(Error::InvalidParams(format!("num_classes must be in 1..=128, got {num_classes}")));
        }
        if let Some(&l) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::UnknownLabel(format!("label {l} >= num_classes {num_classes}")));
        }
        Ok(Self { grid, labels, num_classes })
    }

    #[inline]
    pub fn at(&self, x0: usize, x1: usize, x2: usize) -> u8 {
        self.labels[self.grid.index(x0, x1, x2)]
    }

    /// Sorted list of label ids present in the volume, background excluded.
    pub fn present_labels(&self) -> Vec<u8> {
        let mut seen = [false; 128];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (1..self.num_classes as u8).filter(|&l| seen[l as usize]).collect()
    }

    /// Binary indicator of one class as a scalar volume.
    pub fn indicator(&self, class_id: u8) -> Result<Volume> {
        if class_id as usize >= self.num_classes {
            return Err(Error::UnknownLabel(format!(
                "class {class_id} outside 0..{}",
                self.num_classes
            )));
        }
        let values = self.labels.iter().map(|&l| if l == class_id { 1.0 } else { 0.0 }).collect();
        Ok(Volume { grid: self.grid.clone(), values })
    }
}

/// Dense displacement field on the fixed grid; vectors in voxel units.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub grid: Grid,
    pub vectors: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn new(grid: Grid, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if vectors.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} vectors for grid of {} voxels",
                vectors.len(),
                grid.len()
            )));
        }
        if vectors.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::OutOfRange("non-finite displacement component".into()));
        }
        Ok(Self { grid, vectors })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, vectors: vec![[0.0; 3]; n] }
    }

    pub fn constant(grid: Grid, v: [f64; 3]) -> Self {
        let n = grid.len();
        Self { grid, vectors: vec![v; n] }
    }

    /// Mean Euclidean vector magnitude in voxels.
    pub fn mean_magnitude(&self) -> f64 {
        let n = self.vectors.len();
        let sum = crate::util::par_sum(n, |i| {
            let v = self.vectors[i];
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
        });
        sum / n as f64
    }
}

/// The six-volume registration input bundle plus pair metadata.
#[derive(Debug, Clone)]
pub struct RegistrationPair {
    pub moving_pet: Volume,
    pub fixed_pet: Volume,
    pub moving_ct: Volume,
    pub fixed_ct: Volume,
    pub moving_seg: LabelVolume,
    pub fixed_seg: LabelVolume,
    pub subject: String,
    pub moving_tracer: String,
    pub fixed_tracer: String,
}

impl RegistrationPair {
    pub fn new(
        moving_pet: Volume,
        fixed_pet: Volume,
        moving_ct: Volume,
        fixed_ct: Volume,
        moving_seg: LabelVolume,
        fixed_seg: LabelVolume,
    ) -> Result<Self> {
        let mg = &moving_pet.grid;
        if moving_ct.grid != *mg || moving_seg.grid != *mg {
            return Err(Error::ShapeMismatch("moving volumes must share one grid".into()));
        }
        let fg = &fixed_pet.grid;
        if fixed_ct.grid != *fg || fixed_seg.grid != *fg {
            return Err(Error::ShapeMismatch("fixed volumes must share one grid".into()));
        }
        if !mg.same_dims(fg) {
            return Err(Error::ShapeMismatch(format!(
                "moving dims {:?} != fixed dims {:?}",
                mg.dims, fg.dims
            )));
        }
        Ok(Self {
            moving_pet,
            fixed_pet,
            moving_ct,
            fixed_ct,
            moving_seg,
            fixed_seg,
            subject: String::new(),
            moving_tracer: String::new(),
            fixed_tracer: String::new(),
        })
    }
}

/// Trilinear sample with zero padding outside the domain; `p` in voxel
/// coordinates. Corner weights for the 8 neighbors of the containing cell;
/// out-of-domain corners contribute value 0.
#[inline]
pub(crate) fn sample_unchecked(grid: &Grid, values: &[f64], p: [f64; 3]) -> f64 {
    let [h, w, d] = grid.dims;
    let i0 = p[0].floor();
    let j0 = p[1].floor();
    let k0 = p[2].floor();
    let fi = p[0] - i0;
    let fj = p[1] - j0;
    let fk = p[2] - k0;
    let i0 = i0 as i64;
    let j0 = j0 as i64;
    let k0 = k0 as i64;

    // Reject cells fully outside to skip the corner loop.
    if i0 >= h as i64 || j0 >= w as i64 || k0 >= d as i64 || i0 < -1 || j0 < -1 || k0 < -1 {
        return 0.0;
    }

    let wi = [1.0 - fi, fi];
    let wj = [1.0 - fj, fj];
    let wk = [1.0 - fk, fk];

    let mut acc = 0.0;
    for (a, &wa) in wi.iter().enumerate() {
        let ia = i0 + a as i64;
        if ia < 0 || ia >= h as i64 {
            continue;
        }
        for (b, &wb) in wj.iter().enumerate() {
            let jb = j0 + b as i64;
            if jb < 0 || jb >= w as i64 {
                continue;
            }
            let wab = wa * wb;
            let row = (ia as usize * w + jb as usize) * d;
            for (c, &wc) in wk.iter().enumerate() {
                let kc = k0 + c as i64;
                if kc < 0 || kc >= d as i64 {
                    continue;
                }
                acc += wab * wc * values[row + kc as usize];
            }
        }
    }
    acc
}

/// Spatial gradient of the trilinear sampler at `p`: the derivative of
/// `sample_unchecked` with respect to each coordinate, from the same 8
/// corners (out-of-domain corners read 0).
#[inline]
pub(crate) fn sample_gradient_unchecked(grid: &Grid, values: &[f64], p: [f64; 3]) -> [f64; 3] {
    let [h, w, d] = grid.dims;
    let i0f = p[0].floor();
    let j0f = p[1].floor();
    let k0f = p[2].floor();
    let fi = p[0] - i0f;
    let fj = p[1] - j0f;
    let fk = p[2] - k0f;
    let i0 = i0f as i64;
    let j0 = j0f as i64;
    let k0 = k0f as i64;

    if i0 >= h as i64 || j0 >= w as i64 || k0 >= d as i64 || i0 < -1 || j0 < -1 || k0 < -1 {
        return [0.0; 3];
    }

    // Corner values with zero padding.
    let mut v = [[[0.0f64; 2]; 2]; 2];
    for (a, va) in v.iter_mut().enumerate() {
        let ia = i0 + a as i64;
        if ia < 0 || ia >= h as i64 {
            continue;
        }
        for (b, vb) in va.iter_mut().enumerate() {
            let jb = j0 + b as i64;
            if jb < 0 || jb >= w as i64 {
                continue;
            }
            let row = (ia as usize * w + jb as usize) * d;
            for (c, vc) in vb.iter_mut().enumerate() {
                let kc = k0 + c as i64;
                if kc < 0 || kc >= d as i64 {
                    continue;
                }
                *vc = values[row + kc as usize];
            }
        }
    }

    let wi = [1.0 - fi, fi];
    let wj = [1.0 - fj, fj];
    let wk = [1.0 - fk, fk];

    let mut g = [0.0f64; 3];
    for b in 0..2 {
        for c in 0..2 {
            g[0] += (v[1][b][c] - v[0][b][c]) * wj[b] * wk[c];
        }
    }
    for a in 0..2 {
        for c in 0..2 {
            g[1] += (v[a][1][c] - v[a][0][c]) * wi[a] * wk[c];
        }
    }
    for a in 0..2 {
        for b in 0..2 {
            g[2] += (v[a][b][1] - v[a][b][0]) * wi[a] * wj[b];
        }
    }
    g
}

/// Trilinear interpolation of `vol` at continuous voxel coordinate `p`;
/// out-of-domain corners contribute 0.
pub fn trilinear_sample(vol: &Volume, p: [f64; 3]) -> Result<f64> {
    if p.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidCoordinate(format!("{p:?}")));
    }
    Ok(sample_unchecked(&vol.grid, &vol.values, p))
}

/// Resample `vol` through the displacement field: `out(x) = vol(x + u(x))`
/// for every voxel `x` of the field's grid.
pub fn warp_scalar(vol: &Volume, ddf: &DisplacementField) -> Volume {
    let grid = ddf.grid.clone();
    let [_, w, d] = grid.dims;
    let mut values = vec![0.0f64; grid.len()];
    let chunk = (d * w).max(1);
    values
        .par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(chunk_idx, out)| {
            let base = chunk_idx * chunk;
            for (off, o) in out.iter_mut().enumerate() {
                let idx = base + off;
                let x = grid.coords(idx);
                let u = ddf.vectors[idx];
                let p = [x[0] as f64 + u[0], x[1] as f64 + u[1], x[2] as f64 + u[2]];
                *o = sample_unchecked(&vol.grid, &vol.values, p);
            }
        });
    Volume { grid, values }
}

/// Adjoint of [`warp_scalar`] with respect to the displacement field:
/// `grad(x) = upstream(x) * d sample / d p` at `p = x + u(x)`.
pub fn warp_scalar_adjoint(
    vol: &Volume,
    ddf: &DisplacementField,
    upstream: &Volume,
) -> Result<DisplacementField> {
    if upstream.grid.dims != ddf.grid.dims {
        return Err(Error::ShapeMismatch(format!(
            "upstream dims {:?} != field dims {:?}",
            upstream.grid.dims, ddf.grid.dims
        )));
    }
    let grid = ddf.grid.clone();
    let [_, w, d] = grid.dims;
    let mut vectors = vec![[0.0f64; 3]; grid.len()];
    let chunk = (d * w).max(1);
    vectors
        .par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(chunk_idx, out)| {
            let base = chunk_idx * chunk;
            for (off, o) in out.iter_mut().enumerate() {
                let idx = base + off;
                let up = upstream.values[idx];
                if up == 0.0 {
                    continue;
                }
                let x = grid.coords(idx);
                let u = ddf.vectors[idx];
                let p = [x[0] as f64 + u[0], x[1] as f64 + u[1], x[2] as f64 + u[2]];
                let g = sample_gradient_unchecked(&vol.grid, &vol.values, p);
                *o = [up * g[0], up * g[1], up * g[2]];
            }
        });
    Ok(DisplacementField { grid, vectors })
}

/// Accumulating variant of the adjoint used by the loss gradient: adds
/// `scale * upstream(x) * d sample / d p` into `acc`.
pub(crate) fn warp_scalar_adjoint_into(
    vol: &Volume,
    ddf: &DisplacementField,
    upstream: &[f64],
    scale: f64,
    acc: &mut [[f64; 3]],
) {
    let grid = &ddf.grid;
    let [_, w, d] = grid.dims;
    let chunk = (d * w).max(1);
    acc.par_chunks_mut(chunk).enumerate().for_each(|(chunk_idx, out)| {
        let base = chunk_idx * chunk;
        for (off, o) in out.iter_mut().enumerate() {
            let idx = base + off;
            let up = upstream[idx] * scale;
            if up == 0.0 {
                continue;
            }
            let x = grid.coords(idx);
            let u = ddf.vectors[idx];
            let p = [x[0] as f64 + u[0], x[1] as f64 + u[1], x[2] as f64 + u[2]];
            let g = sample_gradient_unchecked(&vol.grid, &vol.values, p);
            o[0] += up * g[0];
            o[1] += up * g[1];
            o[2] += up * g[2];
        }
    });
}

/// Nearest-neighbor label warp; ties (fraction exactly .5) round toward +inf,
/// out-of-domain maps to background 0.
pub fn warp_labels_nearest(seg: &LabelVolume, ddf: &DisplacementField) -> LabelVolume {
    let grid = ddf.grid.clone();
    let [sh, sw, sd] = seg.grid.dims;
    let [_, w, d] = grid.dims;
    let mut labels = vec![0u8; grid.len()];
    let chunk = (d * w).max(1);
    labels
        .par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(chunk_idx, out)| {
            let base = chunk_idx * chunk;
            for (off, o) in out.iter_mut().enumerate() {
                let idx = base + off;
                let x = grid.coords(idx);
                let u = ddf.vectors[idx];
                let i = (x[0] as f64 + u[0] + 0.5).floor();
                let j = (x[1] as f64 + u[1] + 0.5).floor();
                let k = (x[2] as f64 + u[2] + 0.5).floor();
                if i >= 0.0 && j >= 0.0 && k >= 0.0 {
                    let (i, j, k) = (i as usize, j as usize, k as usize);
                    if i < sh && j < sw && k < sd {
                        *o = seg.labels[(i * sw + j) * sd + k];
                    }
                }
            }
        });
    LabelVolume { grid, labels, num_classes: seg.num_classes }
}

/// Differentiable mask warp: binary indicator of `class_id` pushed through
/// [`warp_scalar`], values in [0, 1].
pub fn warp_indicator(seg: &LabelVolume, class_id: u8, ddf: &DisplacementField) -> Result<Volume> {
    let ind = seg.indicator(class_id)?;
    Ok(warp_scalar(&ind, ddf))
}

/// Trilinear resize with corner-aligned coordinate mapping; spacing rescaled
/// so the physical extent is preserved.
pub fn resize_trilinear(vol: &Volume, new_dims: [usize; 3]) -> Result<Volume> {
    if new_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidParams(format!("resize dims must be >= 1, got {new_dims:?}")));
    }
    let old = &vol.grid;
    let mut scale = [0.0f64; 3];
    let mut spacing = [0.0f64; 3];
    for a in 0..3 {
        if new_dims[a] > 1 {
            scale[a] = (old.dims[a] as f64 - 1.0) / (new_dims[a] as f64 - 1.0);
            spacing[a] = old.spacing[a] * scale[a].max(f64::MIN_POSITIVE);
        } else {
            scale[a] = 0.0;
            // A collapsed axis keeps the full extent in one voxel.
            spacing[a] = old.spacing[a] * old.dims[a] as f64;
        }
        if old.dims[a] == new_dims[a] {
            scale[a] = 1.0;
            spacing[a] = old.spacing[a];
        }
    }
    let grid = Grid { dims: new_dims, spacing, origin: old.origin };
    let [_, w, d] = grid.dims;
    let mut values = vec![0.0f64; grid.len()];
    let chunk = (d * w).max(1);
    values
        .par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(chunk_idx, out)| {
            let base = chunk_idx * chunk;
            for (off, o) in out.iter_mut().enumerate() {
                let idx = base + off;
                let x = grid.coords(idx);
                let p = [x[0] as f64 * scale[0], x[1] as f64 * scale[1], x[2] as f64 * scale[2]];
                *o = sample_unchecked(&vol.grid, &vol.values, p);
            }
        });
    Ok(Volume { grid, values })
}

/// Min-max normalization to [0, 1] over the whole volume.
///
/// Division (not reciprocal multiplication) so the extremes map to exactly
/// 0 and 1.
pub fn normalize_unit(vol: &Volume) -> Result<Volume> {
    let (lo, hi) = vol.min_max();
    if !(hi > lo) {
        return Err(Error::DegenerateVolume(format!("constant volume (value {lo})")));
    }
    let range = hi - lo;
    let values = vol.values.iter().map(|&v| (v - lo) / range).collect();
    Ok(Volume { grid: vol.grid.clone(), values })
}

/// Forward-difference spatial gradient of a displacement field.
///
/// Entry `[i][j]` of the per-voxel tensor is `d u_i / d x_j`; the difference
/// at the last voxel along axis j is 0. Differences are in voxel units.
pub fn spatial_gradient(field: &DisplacementField) -> Vec<[[f64; 3]; 3]> {
    let grid = &field.grid;
    let [h, w, d] = grid.dims;
    let n = grid.len();
    let mut out = vec![[[0.0f64; 3]; 3]; n];
    let chunk = (d * w).max(1);
    out.par_chunks_mut(chunk).enumerate().for_each(|(chunk_idx, slab)| {
        let base = chunk_idx * chunk;
        for (off, t) in slab.iter_mut().enumerate() {
            let idx = base + off;
            let [x0, x1, x2] = grid.coords(idx);
            let u = field.vectors[idx];
            let steps = [
                if x0 + 1 < h { Some(idx + w * d) } else { None },
                if x1 + 1 < w { Some(idx + d) } else { None },
                if x2 + 1 < d { Some(idx + 1) } else { None },
            ];
            for (j, step) in steps.iter().enumerate() {
                if let Some(nidx) = step {
                    let un = field.vectors[*nidx];
                    for i in 0..3 {
                        t[i][j] = un[i] - u[i];
                    }
                }
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_volume(dims: [usize; 3]) -> Volume {
        let grid = Grid::isotropic(dims);
        let mut values = vec![0.0; grid.len()];
        for idx in 0..grid.len() {
            values[idx] = grid.coords(idx)[0] as f64;
        }
        Volume { grid, values }
    }

    #[test]
    fn trilinear_reproduces_nodes() {
        let grid = Grid::isotropic([3, 4, 5]);
        let values: Vec<f64> = (0..grid.len()).map(|i| (i as f64) * 0.37 - 5.0).collect();
        let vol = Volume::new(grid, values).unwrap();
        for (x0, x1, x2) in [(0, 0, 0), (2, 3, 4), (1, 2, 3)] {
            let got = trilinear_sample(&vol, [x0 as f64, x1 as f64, x2 as f64]).unwrap();
            assert_eq!(got, vol.at(x0, x1, x2));
        }
    }

    #[test]
    fn trilinear_midpoint() {
        let grid = Grid::isotropic([2, 1, 1]);
        let vol = Volume::new(grid, vec![10.0, 20.0]).unwrap();
        assert_eq!(trilinear_sample(&vol, [0.5, 0.0, 0.0]).unwrap(), 15.0);
    }

    #[test]
    fn trilinear_outside_is_zero() {
        let vol = ramp_volume([3, 3, 3]);
        assert_eq!(trilinear_sample(&vol, [-1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(trilinear_sample(&vol, [0.0, 0.0, 10.0]).unwrap(), 0.0);
    }

    #[test]
    fn trilinear_rejects_nan() {
        let vol = ramp_volume([2, 2, 2]);
        assert!(matches!(
            trilinear_sample(&vol, [f64::NAN, 0.0, 0.0]),
            Err(Error::InvalidCoordinate(_))
        ));
    }

    #[test]
    fn trilinear_continuous_across_faces() {
        let grid = Grid::isotropic([4, 4, 4]);
        let values: Vec<f64> = (0..grid.len()).map(|i| ((i * 37) % 11) as f64).collect();
        let vol = Volume::new(grid, values).unwrap();
        let h = 1e-9;
        for p in [[1.0, 0.7, 2.3], [2.0, 1.0, 1.0], [0.4, 3.0, 2.0]] {
            for axis in 0..3 {
                let mut lo = p;
                let mut hi = p;
                lo[axis] -= h;
                hi[axis] += h;
                let a = trilinear_sample(&vol, lo).unwrap();
                let b = trilinear_sample(&vol, hi).unwrap();
                assert!((a - b).abs() < 1e-7, "discontinuity at {p:?} axis {axis}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn warp_identity_is_bit_exact() {
        let grid = Grid::isotropic([4, 5, 6]);
        let values: Vec<f64> = (0..grid.len()).map(|i| (i as f64).sin()).collect();
        let vol = Volume::new(grid.clone(), values).unwrap();
        let ddf = DisplacementField::zeros(grid);
        let out = warp_scalar(&vol, &ddf);
        assert_eq!(out.values, vol.values);
    }

    #[test]
    fn warp_integer_shift_matches_brute_force() {
        let grid = Grid::isotropic([4, 3, 3]);
        let values: Vec<f64> = (0..grid.len()).map(|i| (i as f64) * 1.5 + 2.0).collect();
        let vol = Volume::new(grid.clone(), values).unwrap();
        let ddf = DisplacementField::constant(grid.clone(), [1.0, 0.0, 0.0]);
        let out = warp_scalar(&vol, &ddf);
        for idx in 0..grid.len() {
            let [x0, x1, x2] = grid.coords(idx);
            let expect = if x0 + 1 < 4 { vol.at(x0 + 1, x1, x2) } else { 0.0 };
            assert_eq!(out.values[idx], expect, "at {:?}", [x0, x1, x2]);
        }
    }

    #[test]
    fn warp_half_shift_on_ramp() {
        let vol = ramp_volume([5, 3, 3]);
        let ddf = DisplacementField::constant(vol.grid.clone(), [0.5, 0.0, 0.0]);
        let out = warp_scalar(&vol, &ddf);
        // interior: ramp value x0 + 0.5
        for x0 in 0..4 {
            let got = out.at(x0, 1, 1);
            assert!((got - (x0 as f64 + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_zero_upstream() {
        let vol = ramp_volume([4, 4, 4]);
        let ddf = DisplacementField::zeros(vol.grid.clone());
        let upstream = Volume::zeros(vol.grid.clone());
        let g = warp_scalar_adjoint(&vol, &ddf, &upstream).unwrap();
        assert!(g.vectors.iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn adjoint_ramp_analytic() {
        let vol = ramp_volume([5, 4, 4]);
        // Slightly off-lattice so the sampling cell is unambiguous.
        let ddf = DisplacementField::constant(vol.grid.clone(), [0.25, 0.0, 0.0]);
        let upstream = Volume::constant(vol.grid.clone(), 1.0);
        let g = warp_scalar_adjoint(&vol, &ddf, &upstream).unwrap();
        // d ramp / d x0 = 1 away from the trailing boundary.
        for x0 in 0..3 {
            for x1 in 1..3 {
                for x2 in 1..3 {
                    let v = g.vectors[vol.grid.index(x0, x1, x2)];
                    assert!((v[0] - 1.0).abs() < 1e-12, "{v:?}");
                    assert!(v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn adjoint_shape_mismatch() {
        let vol = ramp_volume([4, 4, 4]);
        let ddf = DisplacementField::zeros(vol.grid.clone());
        let upstream = Volume::zeros(Grid::isotropic([3, 3, 3]));
        assert!(matches!(
            warp_scalar_adjoint(&vol, &ddf, &upstream),
            Err(Error::ShapeMismatch(_))
        ));
    }

    /// Central finite differences of <upstream, warp(vol, u)> in every field
    /// component, compared against the analytic adjoint.
    #[test]
    fn adjoint_matches_finite_differences() {
        use crate::util::mix_seed;
        let dims = [6, 6, 6];
        let grid = Grid::isotropic(dims);
        let n = grid.len();
        let mut seed = 77u64;
        let mut next = move || {
            let v = crate::util::splitmix64(&mut seed);
            (v >> 11) as f64 / 9007199254740992.0
        };
        let vol = Volume::new(grid.clone(), (0..n).map(|_| next()).collect()).unwrap();
        let upstream = Volume::new(grid.clone(), (0..n).map(|_| next() - 0.5).collect()).unwrap();
        // keep p away from cell boundaries: fractional parts in [0.15, 0.35]
        let vectors: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let mut v = [0.0; 3];
                for (a, c) in v.iter_mut().enumerate() {
                    let r = crate::util::counter_uniform(mix_seed(9, i as u64, a as u64), 0);
                    *c = 0.15 + 0.2 * r;
                }
                v
            })
            .collect();
        let ddf = DisplacementField::new(grid.clone(), vectors).unwrap();
        let analytic = warp_scalar_adjoint(&vol, &ddf, &upstream).unwrap();

        let inner = |f: &DisplacementField| -> f64 {
            let w = warp_scalar(&vol, f);
            w.values.iter().zip(&upstream.values).map(|(a, b)| a * b).sum()
        };
        let step = 1e-3;
        for idx in (0..n).step_by(17) {
            for a in 0..3 {
                let mut plus = ddf.clone();
                plus.vectors[idx][a] += step;
                let mut minus = ddf.clone();
                minus.vectors[idx][a] -= step;
                let fd = (inner(&plus) - inner(&minus)) / (2.0 * step);
                let an = analytic.vectors[idx][a];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    ((fd - an) / denom).abs() < 1e-4,
                    "idx {idx} axis {a}: fd {fd} analytic {an}"
                );
            }
        }
    }

    #[test]
    fn label_warp_identity_and_shift() {
        let grid = Grid::isotropic([4, 3, 3]);
        let labels: Vec<u8> = (0..grid.len()).map(|i| (i % 5) as u8).collect();
        let seg = LabelVolume::new(grid.clone(), labels, 8).unwrap();
        let id = warp_labels_nearest(&seg, &DisplacementField::zeros(grid.clone()));
        assert_eq!(id.labels, seg.labels);

        let shifted =
            warp_labels_nearest(&seg, &DisplacementField::constant(grid.clone(), [1.0, 0.0, 0.0]));
        for idx in 0..grid.len() {
            let [x0, x1, x2] = grid.coords(idx);
            let expect = if x0 + 1 < 4 { seg.at(x0 + 1, x1, x2) } else { 0 };
            assert_eq!(shifted.labels[idx], expect);
        }
    }

    #[test]
    fn label_warp_rounding() {
        let grid = Grid::isotropic([4, 1, 1]);
        let seg = LabelVolume::new(grid.clone(), vec![1, 2, 3, 4], 8).unwrap();
        // 0.4 rounds to zero shift
        let w = warp_labels_nearest(&seg, &DisplacementField::constant(grid.clone(), [0.4, 0.0, 0.0]));
        assert_eq!(w.labels, seg.labels);
        // exact .5 rounds toward +inf
        let w = warp_labels_nearest(&seg, &DisplacementField::constant(grid.clone(), [0.5, 0.0, 0.0]));
        assert_eq!(w.labels, vec![2, 3, 4, 0]);
        // -0.5 also rounds toward +inf (to zero shift)
        let w = warp_labels_nearest(&seg, &DisplacementField::constant(grid, [-0.5, 0.0, 0.0]));
        assert_eq!(w.labels, seg.labels);
    }

    #[test]
    fn indicator_warp_examples() {
        let grid = Grid::isotropic([4, 1, 1]);
        let seg = LabelVolume::new(grid.clone(), vec![0, 7, 0, 0], 8).unwrap();
        let exact = warp_indicator(&seg, 7, &DisplacementField::zeros(grid.clone())).unwrap();
        assert_eq!(exact.values, vec![0.0, 1.0, 0.0, 0.0]);

        // single-voxel class, shift by +0.5 along axis 0 splits across voxels 0 and 1
        let half = warp_indicator(&seg, 7, &DisplacementField::constant(grid.clone(), [0.5, 0.0, 0.0]))
            .unwrap();
        assert!((half.values[0] - 0.5).abs() < 1e-15);
        assert!((half.values[1] - 0.5).abs() < 1e-15);
        assert_eq!(half.values[2], 0.0);

        // absent class
        let absent = warp_indicator(&seg, 3, &DisplacementField::zeros(grid.clone())).unwrap();
        assert!(absent.values.iter().all(|&v| v == 0.0));

        assert!(matches!(
            warp_indicator(&seg, 8, &DisplacementField::zeros(grid)),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn resize_identity_and_ramp() {
        let grid = Grid::new([3, 1, 1], [2.0, 1.0, 1.0], [0.0; 3]).unwrap();
        let vol = Volume::new(grid, vec![0.0, 1.0, 2.0]).unwrap();
        let same = resize_trilinear(&vol, [3, 1, 1]).unwrap();
        assert_eq!(same.values, vol.values);
        assert_eq!(same.grid.spacing, vol.grid.spacing);

        let up = resize_trilinear(&vol, [5, 1, 1]).unwrap();
        assert_eq!(up.values, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        // physical extent preserved: 2 * 2.0mm == 4 * 1.0mm
        assert!((up.grid.spacing[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resize_constant_and_bounds() {
        let grid = Grid::isotropic([2, 2, 2]);
        let vol = Volume::constant(grid, 7.0);
        let out = resize_trilinear(&vol, [5, 3, 4]).unwrap();
        assert!(out.values.iter().all(|&v| (v - 7.0).abs() < 1e-12));

        let grid = Grid::isotropic([4, 4, 4]);
        let values: Vec<f64> = (0..64).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let vol = Volume::new(grid, values).unwrap();
        let (lo, hi) = vol.min_max();
        let out = resize_trilinear(&vol, [7, 9, 5]).unwrap();
        for &v in &out.values {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn normalize_unit_examples() {
        let grid = Grid::isotropic([3, 1, 1]);
        let vol = Volume::new(grid.clone(), vec![0.0, 50.0, 100.0]).unwrap();
        let out = normalize_unit(&vol).unwrap();
        assert_eq!(out.values, vec![0.0, 0.5, 1.0]);

        let already = Volume::new(grid.clone(), vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(normalize_unit(&already).unwrap().values, already.values);

        let constant = Volume::constant(grid, 3.0);
        assert!(matches!(normalize_unit(&constant), Err(Error::DegenerateVolume(_))));
    }

    #[test]
    fn spatial_gradient_examples() {
        let grid = Grid::isotropic([4, 3, 3]);
        let constant = DisplacementField::constant(grid.clone(), [2.0, -1.0, 0.5]);
        let g = spatial_gradient(&constant);
        assert!(g.iter().all(|t| t.iter().all(|r| r.iter().all(|&v| v == 0.0))));

        // u0(x) = x0 ramp
        let mut field = DisplacementField::zeros(grid.clone());
        for idx in 0..grid.len() {
            field.vectors[idx][0] = grid.coords(idx)[0] as f64;
        }
        let g = spatial_gradient(&field);
        for idx in 0..grid.len() {
            let [x0, _, _] = grid.coords(idx);
            let expect = if x0 + 1 < 4 { 1.0 } else { 0.0 };
            assert_eq!(g[idx][0][0], expect);
            assert_eq!(g[idx][0][1], 0.0);
            assert_eq!(g[idx][1][0], 0.0);
        }
    }

    #[test]
    fn pair_grid_validation() {
        let g = Grid::isotropic([2, 2, 2]);
        let other = Grid::isotropic([3, 2, 2]);
        let vol = |g: &Grid| Volume::zeros(g.clone());
        let seg = |g: &Grid| LabelVolume::new(g.clone(), vec![0; g.len()], 2).unwrap();
        assert!(RegistrationPair::new(vol(&g), vol(&g), vol(&g), vol(&g), seg(&g), seg(&g)).is_ok());
        assert!(RegistrationPair::new(vol(&g), vol(&other), vol(&g), vol(&other), seg(&g), seg(&other))
            .is_err());
        assert!(RegistrationPair::new(vol(&g), vol(&g), vol(&other), vol(&g), seg(&g), seg(&g))
            .is_err());
    }
}
