//! Evaluation metrics: histogram mutual information, hard Dice, target
//! registration error, and the paired t-test used for method comparison.

use crate::error::{Error, Result};
use crate::volume::{warp_labels_nearest, warp_scalar, DisplacementField, LabelVolume, RegistrationPair, Volume};
use serde::Serialize;
use std::collections::BTreeMap;

/// Default number of histogram bins for mutual information.
pub const MI_BINS: usize = 32;

/// Per-pair evaluation summary. Means are taken over `labels_evaluated`;
/// labels whose TRE is undefined (empty on one side after warping) are
/// excluded from the TRE mean and listed in `tre_excluded`.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub mi: f64,
    pub dice_per_label: BTreeMap<u8, f64>,
    pub dice_mean: f64,
    pub tre_per_label: BTreeMap<u8, f64>,
    pub tre_mean: f64,
    pub labels_evaluated: Vec<u8>,
    pub tre_excluded: Vec<u8>,
}

/// Histogram mutual information in nats over `bins x bins` equal-width bins
/// on [0, 1]; the value 1 falls in the last bin.
pub fn mutual_information(a: &Volume, b: &Volume, bins: usize) -> Result<f64> {
    if a.grid.dims != b.grid.dims {
        return Err(Error::ShapeMismatch(format!(
            "MI operands have dims {:?} and {:?}",
            a.grid.dims, b.grid.dims
        )));
    }
    if bins < 2 {
        return Err(Error::InvalidParams(format!("MI needs bins >= 2, got {bins}")));
    }
    for v in [a, b] {
        if v.values.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::OutOfRange("MI requires values in [0, 1]".into()));
        }
    }
    let bin_of = |v: f64| -> usize { ((v * bins as f64) as usize).min(bins - 1) };
    let n = a.values.len();
    let mut joint = vec![0u64; bins * bins];
    for i in 0..n {
        joint[bin_of(a.values[i]) * bins + bin_of(b.values[i])] += 1;
    }
    let mut pa = vec![0u64; bins];
    let mut pb = vec![0u64; bins];
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            pa[i] += c;
            pb[j] += c;
        }
    }
    let total = n as f64;
    let term = |i: usize, j: usize| -> f64 {
        let c = joint[i * bins + j];
        if c == 0 {
            return 0.0;
        }
        let pij = c as f64 / total;
        let pi = pa[i] as f64 / total;
        let pj = pb[j] as f64 / total;
        pij * (pij / (pi * pj)).ln()
    };
    // Accumulate transpose-symmetrically (diagonal, then each (i,j)/(j,i)
    // pair as one addition) so mi(a,b) == mi(b,a) bit-exactly.
    let mut mi = 0.0;
    for i in 0..bins {
        mi += term(i, i);
    }
    for i in 0..bins {
        for j in i + 1..bins {
            mi += term(i, j) + term(j, i);
        }
    }
    Ok(mi)
}

/// Hard Dice `2|A n B| / (|A| + |B|)` of one label; 1 when both masks are
/// empty, 0 when exactly one is.
pub fn hard_dice(fixed_seg: &LabelVolume, warped_seg: &LabelVolume, label: u8) -> Result<f64> {
    if fixed_seg.grid.dims != warped_seg.grid.dims {
        return Err(Error::ShapeMismatch("dice masks on different grids".into()));
    }
    let mut na = 0u64;
    let mut nb = 0u64;
    let mut inter = 0u64;
    for (la, lb) in fixed_seg.labels.iter().zip(&warped_seg.labels) {
        let a = *la == label;
        let b = *lb == label;
        na += a as u64;
        nb += b as u64;
        inter += (a && b) as u64;
    }
    Ok(match (na, nb) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * inter as f64 / (na + nb) as f64,
    })
}

fn centroid(seg: &LabelVolume, label: u8) -> Option<[f64; 3]> {
    let mut count = 0u64;
    let mut acc = [0.0f64; 3];
    for (idx, &l) in seg.labels.iter().enumerate() {
        if l == label {
            let c = seg.grid.coords(idx);
            acc[0] += c[0] as f64;
            acc[1] += c[1] as f64;
            acc[2] += c[2] as f64;
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    Some([acc[0] / count as f64, acc[1] / count as f64, acc[2] / count as f64])
}

/// Target registration error: Euclidean distance in mm between the label's
/// centroids, with voxel indices converted through `spacing`.
pub fn tre(
    fixed_seg: &LabelVolume,
    warped_seg: &LabelVolume,
    label: u8,
    spacing: [f64; 3],
) -> Result<f64> {
    let cf = centroid(fixed_seg, label)
        .ok_or_else(|| Error::EmptyLabel(format!("label {label} empty in fixed mask")))?;
    let cw = centroid(warped_seg, label)
        .ok_or_else(|| Error::EmptyLabel(format!("label {label} empty in warped mask")))?;
    let d = [
        (cw[0] - cf[0]) * spacing[0],
        (cw[1] - cf[1]) * spacing[1],
        (cw[2] - cf[2]) * spacing[2],
    ];
    Ok((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
}

/// Warp the moving PET (trilinear) and segmentation (nearest), then compute
/// MI on PET and Dice/TRE for every label present in the fixed segmentation.
pub fn evaluate(pair: &RegistrationPair, ddf: &DisplacementField) -> Result<MetricsReport> {
    let warped_pet = warp_scalar(&pair.moving_pet, ddf);
    let warped_seg = warp_labels_nearest(&pair.moving_seg, ddf);
    let mi = mutual_information(&pair.fixed_pet, &warped_pet, MI_BINS)?;

    let labels = pair.fixed_seg.present_labels();
    let spacing = pair.fixed_seg.grid.spacing;
    let mut dice_per_label = BTreeMap::new();
    let mut tre_per_label = BTreeMap::new();
    let mut tre_excluded = Vec::new();
    for &l in &labels {
        dice_per_label.insert(l, hard_dice(&pair.fixed_seg, &warped_seg, l)?);
        match tre(&pair.fixed_seg, &warped_seg, l, spacing) {
            Ok(v) => {
                tre_per_label.insert(l, v);
            }
            Err(Error::EmptyLabel(_)) => tre_excluded.push(l),
            Err(e) => return Err(e),
        }
    }
    let dice_mean = if labels.is_empty() {
        0.0
    } else {
        dice_per_label.values().sum::<f64>() / labels.len() as f64
    };
    let tre_mean = if tre_per_label.is_empty() {
        0.0
    } else {
        tre_per_label.values().sum::<f64>() / tre_per_label.len() as f64
    };
    Ok(MetricsReport {
        mi,
        dice_per_label,
        dice_mean,
        tre_per_label,
        tre_mean,
        labels_evaluated: labels,
        tre_excluded,
    })
}

// --- Student-t tail probability via the regularized incomplete beta ---

/// Lanczos approximation of ln Gamma (g = 7, 9 coefficients).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection formula
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let bt = ln_bt.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Paired two-sided t-test: `t = mean(d) / (sd(d) / sqrt(n))` with sample
/// standard deviation, p from the Student-t distribution with n-1 degrees of
/// freedom.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "paired samples of lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidParams(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let ss = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let sd = (ss / (n - 1) as f64).sqrt();
    if sd == 0.0 {
        return Err(Error::DegenerateSample("all paired differences are identical".into()));
    }
    let t = mean / (sd / (n as f64).sqrt());
    let nu = (n - 1) as f64;
    let p = incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
    Ok((t, p))
}
