//! Synthetic cross-tracer whole-body phantom with known ground-truth
//! deformations.
//!
//! The phantom is an ellipsoidal body with an embedded bone rod, two lungs,
//! and several soft-tissue organ blobs. CT intensity is an HU map; each PET
//! tracer assigns its own per-organ uptake (with forced rank disagreement on
//! at least two organs, so the two tracers genuinely disagree). The
//! ground-truth field is a sum of smooth Gaussian bumps, reduced to a
//! near-rigid translation inside the bone and to zero outside the body. The
//! moving volumes are the fixed ones resampled through the inverse of the
//! ground-truth field, so that warping the moving volumes by `gt_ddf`
//! recovers the fixed ones.

use crate::error::{Error, Result};
use crate::util::{counter_gauss, mix_seed};
use crate::volume::{
    normalize_unit, sample_unchecked, spatial_gradient, warp_labels_nearest, warp_scalar,
    DisplacementField, Grid, LabelVolume, RegistrationPair, Volume,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const LABEL_BODY: u8 = 1;
pub const LABEL_BONE: u8 = 2;
pub const LABEL_LUNG_L: u8 = 3;
pub const LABEL_LUNG_R: u8 = 4;
pub const LABEL_ORGAN0: u8 = 5;

/// Generation parameters of one phantom pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub seed: u64,
    pub n_soft_organs: usize,
    pub bone_hu: f64,
    /// Soft-tissue HU range organs are drawn from.
    pub soft_hu: (f64, f64),
    pub lung_hu: f64,
    pub air_hu: f64,
    /// Per-label mean uptake for tracers A (moving) and B (fixed), indexed by
    /// label id. None derives tables from the seed with forced rank
    /// disagreement on two organs.
    pub uptake: Option<(Vec<f64>, Vec<f64>)>,
    /// PET noise sigma as a fraction of the normalized intensity range.
    pub noise_sigma: f64,
    /// Maximum soft-tissue displacement magnitude, voxels.
    pub max_soft_displacement: f64,
    /// Rigid translation magnitude of the bone, voxels.
    pub bone_translation: f64,
    /// Organ semi-axis range, voxels.
    pub organ_radius: (f64, f64),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 96],
            spacing: [3.0, 3.0, 3.0],
            seed: 0,
            n_soft_organs: 12,
            bone_hu: 1000.0,
            soft_hu: (20.0, 80.0),
            lung_hu: -800.0,
            air_hu: -1000.0,
            uptake: None,
            noise_sigma: 0.02,
            max_soft_displacement: 3.0,
            bone_translation: 1.0,
            organ_radius: (4.0, 8.0),
        }
    }
}

impl PhantomSpec {
    /// Variant dominated by the rigid bone offset: small organs keep
    /// per-voxel overlap gradients strong against heavy regularization, and
    /// the soft drift is kept small so the deformation budget concentrates
    /// in the shell around the translated bone. This keeps the rigid-vs-soft
    /// contrast between weight maps visible at clinical-scale `mu_r`.
    pub fn rigid_block(seed: u64) -> Self {
        Self {
            seed,
            organ_radius: (2.5, 4.5),
            max_soft_displacement: 0.75,
            bone_translation: 1.5,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 16) {
            return Err(Error::InvalidParams(format!("phantom dims too small: {:?}", self.dims)));
        }
        let min_dim = *self.dims.iter().min().unwrap() as f64;
        let max_disp = self.max_soft_displacement.max(self.bone_translation);
        if !(max_disp < min_dim / 8.0) {
            return Err(Error::InvalidParams(format!(
                "max displacement {max_disp} must stay below min(dims)/8 = {}",
                min_dim / 8.0
            )));
        }
        if self.max_soft_displacement < 0.0 || self.bone_translation < 0.0 {
            return Err(Error::InvalidParams("displacement magnitudes must be >= 0".into()));
        }
        if self.n_soft_organs + 5 > 128 {
            return Err(Error::InvalidParams("too many organs for the 128-class label space".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParams("noise_sigma must be >= 0".into()));
        }
        if !(self.organ_radius.0 > 0.0 && self.organ_radius.1 >= self.organ_radius.0) {
            return Err(Error::InvalidParams(format!("bad organ radius range {:?}", self.organ_radius)));
        }
        Ok(())
    }
}

/// A generated pair with its ground-truth field and body mask.
#[derive(Debug, Clone)]
pub struct PhantomPair {
    pub pair: RegistrationPair,
    pub gt_ddf: DisplacementField,
    pub body_mask: LabelVolume,
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
}

impl Ellipsoid {
    /// Normalized ellipsoid metric: <= 1 inside.
    fn metric(&self, p: [f64; 3]) -> f64 {
        let mut r2 = 0.0;
        for a in 0..3 {
            let t = (p[a] - self.center[a]) / self.semi[a];
            r2 += t * t;
        }
        r2.sqrt()
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        self.metric(p) <= 1.0
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

struct Rand(ChaCha8Rng);

impl Rand {
    fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }
    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
    fn direction(&mut self) -> [f64; 3] {
        loop {
            let v = [self.range(-1.0, 1.0), self.range(-1.0, 1.0), self.range(-1.0, 1.0)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-3 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        }
    }
}

struct Anatomy {
    body: Ellipsoid,
    bone: Ellipsoid,
    lungs: [Ellipsoid; 2],
    organs: Vec<Ellipsoid>,
}

fn place_anatomy(spec: &PhantomSpec, rng: &mut Rand) -> Result<Anatomy> {
    let [h, w, d] = [spec.dims[0] as f64, spec.dims[1] as f64, spec.dims[2] as f64];
    let body = Ellipsoid {
        center: [h / 2.0, w / 2.0, d / 2.0],
        semi: [0.40 * h, 0.40 * w, 0.44 * d],
    };
    let bone = Ellipsoid {
        center: [0.5 * h, 0.55 * w, 0.5 * d],
        semi: [0.08 * h.min(w), 0.08 * h.min(w), 0.26 * d],
    };
    let lungs = [
        Ellipsoid {
            center: [0.35 * h, 0.35 * w, 0.66 * d],
            semi: [0.12 * h, 0.12 * w, 0.11 * d],
        },
        Ellipsoid {
            center: [0.65 * h, 0.35 * w, 0.66 * d],
            semi: [0.12 * h, 0.12 * w, 0.11 * d],
        },
    ];

    let mut organs: Vec<Ellipsoid> = Vec::with_capacity(spec.n_soft_organs);
    let clearance = 1.5;
    'outer: for _ in 0..spec.n_soft_organs {
        for _attempt in 0..800 {
            let semi = [
                rng.range(spec.organ_radius.0, spec.organ_radius.1),
                rng.range(spec.organ_radius.0, spec.organ_radius.1),
                rng.range(spec.organ_radius.0, spec.organ_radius.1),
            ];
            let center = [
                body.center[0] + rng.range(-0.6, 0.6) * body.semi[0],
                body.center[1] + rng.range(-0.6, 0.6) * body.semi[1],
                body.center[2] + rng.range(-0.6, 0.6) * body.semi[2],
            ];
            let cand = Ellipsoid { center, semi };
            // inflated-ellipsoid separation: candidate center outside the
            // other ellipsoid grown per axis by the candidate's semi
            let far_enough = |other: &Ellipsoid| {
                let mut r2 = 0.0;
                for a in 0..3 {
                    let t = (center[a] - other.center[a])
                        / (other.semi[a] + semi[a] + clearance);
                    r2 += t * t;
                }
                r2 > 1.0
            };
            if !far_enough(&bone) || !far_enough(&lungs[0]) || !far_enough(&lungs[1]) {
                continue;
            }
            if !organs.iter().all(far_enough) {
                continue;
            }
            organs.push(cand);
            continue 'outer;
        }
        return Err(Error::InvalidParams(format!(
            "failed to place {} non-overlapping organs in {:?}",
            spec.n_soft_organs, spec.dims
        )));
    }
    Ok(Anatomy { body, bone, lungs, organs })
}

fn label_map(spec: &PhantomSpec, anatomy: &Anatomy, grid: &Grid) -> LabelVolume {
    let num_classes = 5 + spec.n_soft_organs;
    let mut labels = vec![0u8; grid.len()];
    let chunk = grid.dims[1] * grid.dims[2];
    labels.par_chunks_mut(chunk).enumerate().for_each(|(c, slab)| {
        let base = c * chunk;
        for (off, l) in slab.iter_mut().enumerate() {
            let [x0, x1, x2] = grid.coords(base + off);
            let p = [x0 as f64, x1 as f64, x2 as f64];
            if !anatomy.body.contains(p) {
                continue;
            }
            let mut label = LABEL_BODY;
            if anatomy.bone.contains(p) {
                label = LABEL_BONE;
            } else if anatomy.lungs[0].contains(p) {
                label = LABEL_LUNG_L;
            } else if anatomy.lungs[1].contains(p) {
                label = LABEL_LUNG_R;
            } else {
                for (i, organ) in anatomy.organs.iter().enumerate() {
                    if organ.contains(p) {
                        label = LABEL_ORGAN0 + i as u8;
                        break;
                    }
                }
            }
            *l = label;
        }
    });
    LabelVolume { grid: grid.clone(), labels, num_classes }
}

/// Smooth plane-wave intensity texture for soft tissue. Without it the body
/// interior is featureless and the CT similarity term carries no local
/// alignment information there.
struct CtTexture {
    waves: Vec<([f64; 3], f64, f64)>, // wave vector (cycles/voxel), phase, amplitude
}

impl CtTexture {
    fn draw(rng: &mut Rand, amplitude: f64) -> Self {
        let waves = (0..4)
            .map(|_| {
                let dir = rng.direction();
                let freq = 1.0 / rng.range(8.0, 20.0);
                let k = [dir[0] * freq, dir[1] * freq, dir[2] * freq];
                (k, rng.range(0.0, std::f64::consts::TAU), amplitude * rng.range(0.5, 1.0))
            })
            .collect();
        Self { waves }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        self.waves
            .iter()
            .map(|(k, phase, amp)| {
                amp * (std::f64::consts::TAU * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2]) + phase)
                    .cos()
            })
            .sum()
    }
}

fn ct_map(spec: &PhantomSpec, seg: &LabelVolume, organ_hu: &[f64], texture: &CtTexture) -> Volume {
    let soft_base = 0.5 * (spec.soft_hu.0 + spec.soft_hu.1);
    let grid = &seg.grid;
    let mut values = vec![0.0f64; grid.len()];
    let chunk = grid.dims[1] * grid.dims[2];
    values.par_chunks_mut(chunk).enumerate().for_each(|(c, slab)| {
        let base = c * chunk;
        for (off, v) in slab.iter_mut().enumerate() {
            let idx = base + off;
            let l = seg.labels[idx];
            *v = match l {
                0 => spec.air_hu,
                LABEL_BONE => spec.bone_hu,
                LABEL_LUNG_L | LABEL_LUNG_R => spec.lung_hu,
                organ => {
                    let base_hu = if organ == LABEL_BODY {
                        soft_base
                    } else {
                        organ_hu[(organ - LABEL_ORGAN0) as usize]
                    };
                    let [x0, x1, x2] = grid.coords(idx);
                    base_hu + texture.at([x0 as f64, x1 as f64, x2 as f64])
                }
            };
        }
    });
    Volume { grid: grid.clone(), values }
}

/// Per-label uptake tables for the two tracers, with ranks of the hottest and
/// coldest organ (under tracer A) swapped in tracer B.
fn uptake_tables(spec: &PhantomSpec, rng: &mut Rand) -> (Vec<f64>, Vec<f64>) {
    let k = 5 + spec.n_soft_organs;
    let mut a = vec![0.0; k];
    let mut b = vec![0.0; k];
    for (table, _tag) in [(&mut a, 0u64), (&mut b, 1u64)] {
        table[LABEL_BODY as usize] = rng.range(0.10, 0.25);
        table[LABEL_BONE as usize] = rng.range(0.05, 0.20);
        table[LABEL_LUNG_L as usize] = rng.range(0.03, 0.12);
        table[LABEL_LUNG_R as usize] = rng.range(0.03, 0.12);
        for i in 0..spec.n_soft_organs {
            table[LABEL_ORGAN0 as usize + i] = rng.range(0.30, 1.0);
        }
    }
    if spec.n_soft_organs >= 2 {
        let organ_slice = LABEL_ORGAN0 as usize..LABEL_ORGAN0 as usize + spec.n_soft_organs;
        let (mut hot, mut cold) = (organ_slice.start, organ_slice.start);
        for i in organ_slice {
            if a[i] > a[hot] {
                hot = i;
            }
            if a[i] < a[cold] {
                cold = i;
            }
        }
        // tracer B sees A's hottest organ cold and A's coldest organ hot
        b[hot] = 0.30;
        b[cold] = 1.0;
    }
    (a, b)
}

fn pet_map(
    spec: &PhantomSpec,
    seg: &LabelVolume,
    uptake: &[f64],
    noise_tag: u64,
) -> Result<Volume> {
    let n = seg.grid.len();
    let mut values = vec![0.0f64; n];
    let seed = mix_seed(spec.seed, noise_tag, 0x9E7);
    values.par_iter_mut().enumerate().for_each(|(i, v)| {
        let base = uptake[seg.labels[i] as usize];
        let noisy = base + spec.noise_sigma * counter_gauss(seed, i as u64);
        *v = noisy.max(0.0);
    });
    let vol = Volume { grid: seg.grid.clone(), values };
    normalize_unit(&vol)
}

struct Bump {
    center: [f64; 3],
    sigma: f64,
    direction: [f64; 3],
    amplitude: f64,
}

/// Ground-truth field: scaled Gaussian bumps attenuated by the body
/// envelope, blended to `bone_shift + 0.05 * soft` inside the bone.
fn ground_truth_field(
    spec: &PhantomSpec,
    anatomy: &Anatomy,
    grid: &Grid,
    attempt: u64,
) -> DisplacementField {
    let mut rng = Rand::new(mix_seed(spec.seed, 0xDEF0, attempt));
    let n_bumps = 8;
    let bumps: Vec<Bump> = (0..n_bumps)
        .map(|_| Bump {
            center: [
                anatomy.body.center[0] + rng.range(-0.6, 0.6) * anatomy.body.semi[0],
                anatomy.body.center[1] + rng.range(-0.6, 0.6) * anatomy.body.semi[1],
                anatomy.body.center[2] + rng.range(-0.6, 0.6) * anatomy.body.semi[2],
            ],
            sigma: rng.range(10.0, 16.0),
            direction: rng.direction(),
            amplitude: rng.range(0.5, 1.0),
        })
        .collect();
    let bone_dir = rng.direction();
    let bone_shift = [
        bone_dir[0] * spec.bone_translation,
        bone_dir[1] * spec.bone_translation,
        bone_dir[2] * spec.bone_translation,
    ];

    let soft_at = |p: [f64; 3]| -> [f64; 3] {
        let mut v = [0.0f64; 3];
        for b in &bumps {
            let mut r2 = 0.0;
            for a in 0..3 {
                let t = p[a] - b.center[a];
                r2 += t * t;
            }
            let g = b.amplitude * (-0.5 * r2 / (b.sigma * b.sigma)).exp();
            for a in 0..3 {
                v[a] += g * b.direction[a];
            }
        }
        v
    };
    // body envelope: 1 deep inside, 0 at and beyond the surface
    let env_width = 0.30;
    let env_at = |p: [f64; 3]| -> f64 {
        let r = anatomy.body.metric(p);
        1.0 - smoothstep((r - (1.0 - env_width)) / env_width)
    };
    // bone blend: 1 inside the bone, decaying over ~10 voxels outside it
    let bone_width = 10.0 / anatomy.bone.semi[0].min(anatomy.bone.semi[2]);
    let bone_at = |p: [f64; 3]| -> f64 {
        let r = anatomy.bone.metric(p);
        1.0 - smoothstep((r - 1.0) / bone_width)
    };

    // scale so the maximum enveloped soft magnitude over the body equals the
    // requested soft displacement
    let n = grid.len();
    let chunk = crate::util::REDUCE_CHUNK;
    let nchunks = n.div_ceil(chunk);
    let max_mag: f64 = (0..nchunks)
        .into_par_iter()
        .map(|c| {
            let mut m = 0.0f64;
            for idx in c * chunk..((c + 1) * chunk).min(n) {
                let [x0, x1, x2] = grid.coords(idx);
                let p = [x0 as f64, x1 as f64, x2 as f64];
                if anatomy.body.contains(p) {
                    let v = soft_at(p);
                    let e = env_at(p);
                    let mag = e * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    m = m.max(mag);
                }
            }
            m
        })
        .reduce(|| 0.0, f64::max);
    let scale = if max_mag > 0.0 { spec.max_soft_displacement / max_mag } else { 0.0 };

    let mut vectors = vec![[0.0f64; 3]; n];
    let slab = grid.dims[1] * grid.dims[2];
    vectors.par_chunks_mut(slab).enumerate().for_each(|(c, out)| {
        let base = c * slab;
        for (off, o) in out.iter_mut().enumerate() {
            let [x0, x1, x2] = grid.coords(base + off);
            let p = [x0 as f64, x1 as f64, x2 as f64];
            let soft = soft_at(p);
            let env = env_at(p);
            let mb = bone_at(p);
            for a in 0..3 {
                let soft_scaled = scale * soft[a];
                let rigid = bone_shift[a] + 0.05 * soft_scaled;
                o[a] = mb * rigid + (1.0 - mb) * env * soft_scaled;
            }
        }
    });
    DisplacementField { grid: grid.clone(), vectors }
}

/// Forward-difference Jacobian determinants of `id + field`.
pub fn jacobian_determinants(field: &DisplacementField) -> Vec<f64> {
    let grads = spatial_gradient(field);
    grads
        .iter()
        .map(|g| {
            let j = [
                [1.0 + g[0][0], g[0][1], g[0][2]],
                [g[1][0], 1.0 + g[1][1], g[1][2]],
                [g[2][0], g[2][1], 1.0 + g[2][2]],
            ];
            j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
                - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
        })
        .collect()
}

/// Invert a displacement field by fixed-point iteration:
/// `inv(y) = -g(y + inv(y))`.
fn invert_field(field: &DisplacementField, iterations: usize) -> DisplacementField {
    let grid = &field.grid;
    let n = grid.len();
    let comp: Vec<Vec<f64>> = (0..3)
        .map(|a| field.vectors.iter().map(|v| v[a]).collect())
        .collect();
    let mut inv = vec![[0.0f64; 3]; n];
    let slab = grid.dims[1] * grid.dims[2];
    for _ in 0..iterations {
        let prev = inv.clone();
        inv.par_chunks_mut(slab).enumerate().for_each(|(c, out)| {
            let base = c * slab;
            for (off, o) in out.iter_mut().enumerate() {
                let idx = base + off;
                let [x0, x1, x2] = grid.coords(idx);
                let h = prev[idx];
                let p = [x0 as f64 + h[0], x1 as f64 + h[1], x2 as f64 + h[2]];
                for a in 0..3 {
                    o[a] = -sample_unchecked(grid, &comp[a], p);
                }
            }
        });
    }
    DisplacementField { grid: grid.clone(), vectors: inv }
}

/// Generate a phantom pair; deterministic given `spec.seed`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<PhantomPair> {
    spec.validate()?;
    let grid = Grid { dims: spec.dims, spacing: spec.spacing, origin: [0.0; 3] };
    // organ placement is rejection-sampled; reseed wholesale if a draw gets
    // wedged, keeping the result a pure function of spec.seed
    let (mut rng, anatomy) = (0..10u64)
        .find_map(|attempt| {
            let mut rng = Rand::new(mix_seed(spec.seed, 0xA11A, attempt));
            place_anatomy(spec, &mut rng).ok().map(|a| (rng, a))
        })
        .ok_or_else(|| {
            Error::InvalidParams(format!(
                "failed to place {} non-overlapping organs in {:?}",
                spec.n_soft_organs, spec.dims
            ))
        })?;
    let fixed_seg = label_map(spec, &anatomy, &grid);

    let organ_hu: Vec<f64> =
        (0..spec.n_soft_organs).map(|_| rng.range(spec.soft_hu.0, spec.soft_hu.1)).collect();
    let texture = CtTexture::draw(&mut rng, 12.0);
    let fixed_ct = ct_map(spec, &fixed_seg, &organ_hu, &texture);

    let (uptake_a, uptake_b) = match &spec.uptake {
        Some((a, b)) => {
            let k = 5 + spec.n_soft_organs;
            if a.len() < k || b.len() < k {
                return Err(Error::InvalidParams(format!(
                    "uptake tables must cover {k} labels"
                )));
            }
            (a.clone(), b.clone())
        }
        None => uptake_tables(spec, &mut rng),
    };
    let pet_a = pet_map(spec, &fixed_seg, &uptake_a, 0xA)?; // moving tracer
    let pet_b = pet_map(spec, &fixed_seg, &uptake_b, 0xB)?; // fixed tracer

    // Ground truth with a Jacobian-positivity retry: a rare unlucky draw of
    // bump directions could fold the field near the bone blend.
    let mut gt_ddf = None;
    for attempt in 0..20u64 {
        let candidate = ground_truth_field(spec, &anatomy, &grid, attempt);
        let dets = jacobian_determinants(&candidate);
        let ok = fixed_seg
            .labels
            .iter()
            .zip(&dets)
            .all(|(&l, &det)| l == 0 || det > 0.0);
        if ok {
            gt_ddf = Some(candidate);
            break;
        }
    }
    let gt_ddf = gt_ddf.ok_or_else(|| {
        Error::InvalidParams("could not draw an invertible ground-truth field in 20 attempts".into())
    })?;

    let inverse = invert_field(&gt_ddf, 30);
    let moving_ct = warp_scalar(&fixed_ct, &inverse);
    let moving_pet = warp_scalar(&pet_a, &inverse);
    let moving_seg = warp_labels_nearest(&fixed_seg, &inverse);

    let body_mask = LabelVolume {
        grid: grid.clone(),
        labels: fixed_seg.labels.iter().map(|&l| (l != 0) as u8).collect(),
        num_classes: 2,
    };

    let mut pair = RegistrationPair::new(
        moving_pet, pet_b, moving_ct, fixed_ct, moving_seg, fixed_seg,
    )?;
    pair.subject = format!("phantom-{}", spec.seed);
    pair.moving_tracer = "tracerA".into();
    pair.fixed_tracer = "tracerB".into();

    Ok(PhantomPair { pair, gt_ddf, body_mask })
}

/// Mean endpoint error between two fields over a mask.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EndpointError {
    pub mean_vox: f64,
    pub mean_mm: f64,
    pub count: usize,
}

pub fn endpoint_error(
    est: &DisplacementField,
    gt: &DisplacementField,
    mask: &LabelVolume,
) -> Result<EndpointError> {
    if est.grid.dims != gt.grid.dims || est.grid.dims != mask.grid.dims {
        return Err(Error::ShapeMismatch(format!(
            "endpoint error over dims {:?} / {:?} / {:?}",
            est.grid.dims, gt.grid.dims, mask.grid.dims
        )));
    }
    let spacing = gt.grid.spacing;
    let mut count = 0usize;
    let mut sum_vox = 0.0;
    let mut sum_mm = 0.0;
    for (idx, &m) in mask.labels.iter().enumerate() {
        if m == 0 {
            continue;
        }
        let e = est.vectors[idx];
        let g = gt.vectors[idx];
        let d = [e[0] - g[0], e[1] - g[1], e[2] - g[2]];
        sum_vox += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let dm = [d[0] * spacing[0], d[1] * spacing[1], d[2] * spacing[2]];
        sum_mm += (dm[0] * dm[0] + dm[1] * dm[1] + dm[2] * dm[2]).sqrt();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask("endpoint error over an empty mask".into()));
    }
    Ok(EndpointError { mean_vox: sum_vox / count as f64, mean_mm: sum_mm / count as f64, count })
}
