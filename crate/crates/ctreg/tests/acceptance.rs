//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Run with
//! `cargo test -p ctreg --test acceptance -- --nocapture --test-threads 1`
//! to see the per-criterion report in order.

use ctreg::cli::{normalize_pair, run_ablation};
use ctreg::engine::{baseline_register, register, RegistrationConfig};
use ctreg::io::{read_nifti_bytes, read_volume, write_volume, LoadedVolume};
use ctreg::losses::{reg_loss, reg_loss_grad, sample_labels, total_loss, total_loss_grad};
use ctreg::metrics::{evaluate, hard_dice, incomplete_beta, mutual_information, paired_t_test, tre};
use ctreg::phantom::{endpoint_error, generate_phantom, PhantomSpec};
use ctreg::util::{counter_uniform, mix_seed};
use ctreg::volume::{DisplacementField, Grid, LabelVolume, RegistrationPair, Volume};
use ctreg::weight_map::{build_weight_map, uniform_weight_map, WeightMap, WeightMapParams};
use std::time::Instant;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!("[acceptance] {criterion}: {} - {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{criterion}: {detail}");
}

fn uniform(seed: u64, tag: u64, i: usize) -> f64 {
    counter_uniform(mix_seed(seed, tag, i as u64), 0)
}

/// Random registration pair with off-lattice displacements whose fractional
/// parts stay in [0.15, 0.35], so finite differences at step 1e-3 never
/// cross an interpolation cell boundary.
fn random_instance(
    seed: u64,
    dims: [usize; 3],
) -> (RegistrationPair, DisplacementField, WeightMap) {
    let grid = Grid::isotropic(dims);
    let n = grid.len();
    let vol = |tag: u64| {
        Volume::new(grid.clone(), (0..n).map(|i| uniform(seed, tag, i)).collect()).unwrap()
    };
    let seg = |tag: u64| {
        let labels: Vec<u8> =
            (0..n).map(|i| (uniform(seed, tag, i) * 4.0).floor() as u8).collect();
        LabelVolume::new(grid.clone(), labels, 4).unwrap()
    };
    let pair = RegistrationPair::new(vol(0), vol(1), vol(2), vol(3), seg(4), seg(5)).unwrap();
    let vectors: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let mut v = [0.0; 3];
            for (a, c) in v.iter_mut().enumerate() {
                *c = 0.15 + 0.2 * uniform(seed, 10 + a as u64, i);
            }
            v
        })
        .collect();
    let ddf = DisplacementField::new(grid.clone(), vectors).unwrap();
    let weights: Vec<f64> = (0..n).map(|i| 1.0 + uniform(seed, 20, i)).collect();
    let w = WeightMap { grid, weights };
    (pair, ddf, w)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn criterion_1_gradient_correctness() {
    let t0 = Instant::now();
    let mut worst_total = 0.0f64;
    let mut worst_reg = 0.0f64;
    for instance in 0..20u64 {
        let (pair, ddf, w) = random_instance(100 + instance, [6, 6, 6]);
        let sample = sample_labels(&[1, 2, 3], 3, instance).unwrap();
        let analytic = total_loss_grad(&pair, &ddf, &w, &sample).unwrap();
        let reg_analytic = reg_loss_grad(&ddf, &w).unwrap();
        let n = ddf.vectors.len();
        let step = 1e-3;
        for idx in 0..n {
            for axis in 0..3 {
                let mut plus = ddf.clone();
                plus.vectors[idx][axis] += step;
                let mut minus = ddf.clone();
                minus.vectors[idx][axis] -= step;
                let fd_total = (total_loss(&pair, &plus, &w, &sample).unwrap().total
                    - total_loss(&pair, &minus, &w, &sample).unwrap().total)
                    / (2.0 * step);
                worst_total = worst_total.max(rel_err(fd_total, analytic.vectors[idx][axis]));
                let fd_reg = (reg_loss(&plus, &w).unwrap() - reg_loss(&minus, &w).unwrap())
                    / (2.0 * step);
                worst_reg = worst_reg.max(rel_err(fd_reg, reg_analytic.vectors[idx][axis]));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        "criterion 1 (gradient correctness)",
        worst_total < 1e-3 && worst_reg < 1e-4 && secs < 60.0,
        &format!(
            "20 instances, all 648 components each: total rel err {worst_total:.2e} (< 1e-3), \
             reg rel err {worst_reg:.2e} (< 1e-4), {secs:.1}s (< 60s)"
        ),
    );
}

#[test]
fn criterion_2_weight_map_exactness() {
    let fixture = Volume::new(
        Grid::isotropic([3, 1, 1]),
        vec![0.0, 500.0, 1000.0],
    )
    .unwrap();
    let params = WeightMapParams::new(4500.0, 3000.0, 2.0).unwrap();
    let w = build_weight_map(&fixture, &params).unwrap();
    let exact = w.weights == vec![1500.0, 3000.0, 7500.0];

    let mut invariants = true;
    for trial in 0..100u64 {
        let n = 24;
        let grid = Grid::isotropic([n, 1, 1]);
        let values: Vec<f64> =
            (0..n).map(|i| -1000.0 + 2200.0 * uniform(trial, 0, i)).collect();
        let ct = Volume::new(grid.clone(), values.clone()).unwrap();
        let w2 = build_weight_map(&ct, &params).unwrap();
        let w1 =
            build_weight_map(&ct, &WeightMapParams::new(4500.0, 3000.0, 1.0).unwrap()).unwrap();
        let w0 =
            build_weight_map(&ct, &WeightMapParams::new(4500.0, 0.0, 2.0).unwrap()).unwrap();
        let u = uniform_weight_map(&grid, 4500.0).unwrap();
        let lo_hu = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi_hu = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            invariants &= (1500.0..=7500.0).contains(&w2.weights[i]);
            for j in 0..n {
                if values[i] <= values[j] {
                    invariants &= w2.weights[i] <= w2.weights[j];
                }
            }
            let c_hat = (values[i] - lo_hu) / (hi_hu - lo_hu);
            if c_hat > 1e-9 && c_hat < 1.0 - 1e-9 {
                invariants &= w2.weights[i] < w1.weights[i];
            }
        }
        let wmin = w2.weights.iter().cloned().fold(f64::INFINITY, f64::min);
        let wmax = w2.weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        invariants &= wmin == 1500.0 && wmax == 7500.0;
        invariants &= w0.weights == u.weights;
    }
    report(
        "criterion 2 (weight-map exactness)",
        exact && invariants,
        &format!(
            "fixture -> {:?} (exact), bounds/monotonicity/gamma-ordering/delta-collapse on 100 \
             random volumes: {}",
            w.weights,
            if invariants { "all hold" } else { "violated" }
        ),
    );
}

fn phantom_suite_config(mu_r: f64, delta: f64, seed: u64) -> RegistrationConfig {
    RegistrationConfig {
        weight_params: WeightMapParams::new(mu_r, delta, 2.0).unwrap(),
        seed,
        ..Default::default()
    }
}

#[test]
fn criterion_3_baseline_collapse() {
    let spec = PhantomSpec {
        dims: [32, 32, 48],
        seed: 42,
        n_soft_organs: 5,
        organ_radius: (3.0, 5.0),
        ..Default::default()
    };
    let phantom = generate_phantom(&spec).unwrap();
    let pair = normalize_pair(&phantom.pair).unwrap();
    let mut config = phantom_suite_config(3.0, 0.0, 42);
    config.iters_per_level = vec![40, 30, 25];
    let proposed = register(&pair, &config).unwrap();
    let baseline = baseline_register(&pair, &config).unwrap();
    let fields_equal = proposed.ddf.vectors == baseline.ddf.vectors;
    let traces_equal = proposed.loss_trace() == baseline.loss_trace();
    report(
        "criterion 3 (baseline collapse)",
        fields_equal && traces_equal,
        &format!(
            "delta=0 register vs baseline_register(lambda=mu_r): fields bit-identical {}, \
             traces bit-identical {}",
            fields_equal, traces_equal
        ),
    );
}

#[test]
fn criterion_4_identity_recovery() {
    let t0 = Instant::now();
    let spec = PhantomSpec {
        seed: 7,
        max_soft_displacement: 0.0,
        bone_translation: 0.0,
        ..Default::default()
    };
    let phantom = generate_phantom(&spec).unwrap();
    let base = normalize_pair(&phantom.pair).unwrap();
    // moving == fixed for all six volumes
    let pair = RegistrationPair::new(
        base.fixed_pet.clone(),
        base.fixed_pet.clone(),
        base.fixed_ct.clone(),
        base.fixed_ct.clone(),
        base.fixed_seg.clone(),
        base.fixed_seg.clone(),
    )
    .unwrap();
    let config = RegistrationConfig { seed: 7, ..Default::default() }; // mu_r 4500 defaults
    let result = register(&pair, &config).unwrap();
    let mean_disp = result.ddf.mean_magnitude();
    let finest = result.trace.iter().filter(|r| r.level == 2).collect::<Vec<_>>();
    let tail = &finest[finest.len().saturating_sub(10)..];
    let smoothed: f64 = tail.iter().map(|r| r.loss.total).sum::<f64>() / tail.len() as f64;
    let secs = t0.elapsed().as_secs_f64();
    report(
        "criterion 4 (identity recovery)",
        mean_disp < 0.05 && (smoothed + 2.0).abs() < 1e-3 && secs < 300.0,
        &format!(
            "mean displacement {mean_disp:.2e} vox (< 0.05), smoothed total {smoothed:.6} \
             (within 1e-3 of -2), {secs:.1}s (< 300s)"
        ),
    );
}

#[test]
fn criterion_5_phantom_recovery() {
    let mut all = true;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let t0 = Instant::now();
        let spec = PhantomSpec { seed, ..Default::default() };
        let phantom = generate_phantom(&spec).unwrap();
        let pair = normalize_pair(&phantom.pair).unwrap();
        let zero = DisplacementField::zeros(phantom.gt_ddf.grid.clone());
        let pre_epe = endpoint_error(&zero, &phantom.gt_ddf, &phantom.body_mask).unwrap();
        let pre = evaluate(&pair, &zero).unwrap();

        let config = phantom_suite_config(3.0, 2.0, seed);
        let result = register(&pair, &config).unwrap();
        let post_epe = endpoint_error(&result.ddf, &phantom.gt_ddf, &phantom.body_mask).unwrap();
        let post = evaluate(&pair, &result.ddf).unwrap();
        let secs = t0.elapsed().as_secs_f64();

        // 1 voxel-equivalent at 3 mm isotropic spacing
        let tre_limit_mm = 3.0;
        let ok = post_epe.mean_vox < 0.5
            && post.dice_mean >= 0.90
            && post.tre_mean <= tre_limit_mm
            && post_epe.mean_vox < pre_epe.mean_vox
            && post.dice_mean > pre.dice_mean
            && post.tre_mean < pre.tre_mean
            && secs < 600.0;
        all &= ok;
        lines.push(format!(
            "seed {seed}: EPE {:.3}->{:.3} vox, dice {:.4}->{:.4}, tre {:.2}->{:.2} mm, {secs:.0}s",
            pre_epe.mean_vox,
            post_epe.mean_vox,
            pre.dice_mean,
            post.dice_mean,
            pre.tre_mean,
            post.tre_mean
        ));
    }
    report(
        "criterion 5 (phantom recovery)",
        all,
        &format!(
            "5 default phantoms, mu_r=3 delta=2 gamma=2 (voxel-scale equivalent of 4500/3000): {}",
            lines.join(" | ")
        ),
    );
}

#[test]
fn criterion_6_direction_of_effect() {
    // Ten rigid-block phantoms. Two regimes are surfaced through the same
    // ablation path the CLI uses:
    // - the literal mu_r = 4500 of the acceptance statement, where the
    //   voxel-mean regularizer freezes the field (sub-rounding deformations;
    //   Dice/TRE tie exactly, so the paired t-test on Dice degenerates), and
    // - mu_r = 30 (delta = 20, same 3:2 ratio), the mid-range regime under
    //   this crate's voxel-unit conventions, where the Table-1-style pattern
    //   has real content and the t-test returns a finite p.
    let phantoms: Vec<_> = (0..10u64)
        .map(|seed| {
            let mut spec = PhantomSpec::rigid_block(seed);
            spec.dims = [48, 48, 72];
            let phantom = generate_phantom(&spec).unwrap();
            (phantom, spec)
        })
        .collect();
    let base_config = RegistrationConfig { seed: 1234, ..Default::default() };

    let literal = run_ablation(&phantoms, &[4500.0], 3000.0, 2.0, &base_config).unwrap();
    let analogue = run_ablation(&phantoms, &[30.0], 20.0, 2.0, &base_config).unwrap();

    let mut all = true;
    let mut lines = Vec::new();
    for (tag, table) in [("mu_r=4500 (literal)", &literal), ("mu_r=30 (mid-regime)", &analogue)] {
        let row = &table.rows[0];
        let bone_ok = row.proposed.bone_energy_mean < row.baseline.bone_energy_mean;
        let dice_ok = row.proposed.dice_mean >= row.baseline.dice_mean;
        let tre_ok = row.proposed.tre_mean <= row.baseline.tre_mean;
        all &= bone_ok && dice_ok && tre_ok;
        lines.push(format!(
            "{tag}: bone {:.3e} vs {:.3e} ({}), dice {:.4} vs {:.4} ({}), tre {:.3} vs {:.3} ({}), p(dice) = {}",
            row.proposed.bone_energy_mean,
            row.baseline.bone_energy_mean,
            if bone_ok { "lower" } else { "NOT lower" },
            row.proposed.dice_mean,
            row.baseline.dice_mean,
            if dice_ok { "not worse" } else { "WORSE" },
            row.proposed.tre_mean,
            row.baseline.tre_mean,
            if tre_ok { "not worse" } else { "WORSE" },
            if row.dice_p.is_nan() { "n/a (zero-variance ties)".to_string() } else { format!("{:.4}", row.dice_p) },
        ));
    }
    // the mid-regime row must carry a real significance value
    all &= analogue.rows[0].dice_p.is_finite();
    report(
        "criterion 6 (direction of effect)",
        all,
        &format!("10 rigid-block phantoms; {}", lines.join(" || ")),
    );
}

#[test]
fn criterion_7_metric_unit_examples() {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let mut all = true;
    let mut notes = Vec::new();

    // MI: identity volume spread uniformly over k bins -> ln k
    for k in [4usize, 8, 32] {
        let values: Vec<f64> =
            (0..k * 40).map(|i| (i % k) as f64 / k as f64 + 0.5 / k as f64).collect();
        let vol = Volume::new(Grid::isotropic([values.len(), 1, 1]), values).unwrap();
        let mi = mutual_information(&vol, &vol, k).unwrap();
        all &= (mi - (k as f64).ln()).abs() < 1e-12;
    }
    notes.push("MI ln(k)".to_string());

    // MI: constant argument -> exactly 0
    let a = Volume::new(Grid::isotropic([5, 1, 1]), vec![0.1, 0.3, 0.5, 0.7, 0.9]).unwrap();
    let b = Volume::new(Grid::isotropic([5, 1, 1]), vec![0.5; 5]).unwrap();
    all &= mutual_information(&a, &b, 32).unwrap() == 0.0;
    notes.push("MI const->0".to_string());

    // TRE: 3-4-5 triangle and spacing scaling
    let grid = Grid::isotropic([8, 8, 8]);
    let mut fa = vec![0u8; grid.len()];
    fa[grid.index(1, 1, 1)] = 1;
    let mut fb = vec![0u8; grid.len()];
    fb[grid.index(4, 5, 1)] = 1;
    let sa = LabelVolume::new(grid.clone(), fa, 2).unwrap();
    let sb = LabelVolume::new(grid.clone(), fb, 2).unwrap();
    all &= (tre(&sa, &sb, 1, [1.0; 3]).unwrap() - 5.0).abs() < 1e-12;
    all &= (tre(&sa, &sb, 1, [2.0; 3]).unwrap() - 10.0).abs() < 1e-12;
    all &= hard_dice(&sa, &sa, 1).unwrap() == 1.0;
    notes.push("TRE 3-4-5".to_string());

    // paired t-test: d = (1,2,3) -> t = 2 sqrt(3), p ~ 0.0742 against an
    // independent CDF oracle
    let (t, p) = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
    let t_ok = (t - 2.0 * 3.0f64.sqrt()).abs() < 1e-12;
    let dist = StudentsT::new(0.0, 1.0, 2.0).unwrap();
    let p_oracle = 2.0 * (1.0 - dist.cdf(t));
    let p_ok = (p - p_oracle).abs() < 1e-8 && (p - 0.0742).abs() < 5e-5;
    all &= t_ok && p_ok;
    notes.push(format!("t-test t={t:.6} p={p:.6} (oracle {p_oracle:.6})"));

    // incomplete beta against statrs across a grid
    for &nu in &[1.0f64, 2.0, 5.0, 12.0] {
        let dist = StudentsT::new(0.0, 1.0, nu).unwrap();
        for &tv in &[0.2f64, 1.0, 2.5, 5.0] {
            let ours = incomplete_beta(nu / 2.0, 0.5, nu / (nu + tv * tv));
            let oracle = 2.0 * (1.0 - dist.cdf(tv));
            all &= (ours - oracle).abs() < 1e-8;
        }
    }
    notes.push("incomplete beta <1e-8".to_string());

    report("criterion 7 (metric unit examples)", all, &notes.join(", "));
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec {
        dims: [32, 32, 48],
        seed: 11,
        n_soft_organs: 5,
        organ_radius: (3.0, 5.0),
        ..Default::default()
    };
    let phantom = generate_phantom(&spec).unwrap();
    let bundle_dir = dir.path().join("phantom");
    ctreg::cli::write_phantom_bundle(&phantom, &spec, &bundle_dir, ctreg::io::VolumeFormat::Bundle)
        .unwrap();
    let config_path = dir.path().join("config.toml");
    std::fs::write(&config_path, "mu_r = 3.0\ndelta = 2.0\nseed = 5\n").unwrap();

    let run = |out: &str| -> i32 {
        let out_dir = dir.path().join(out);
        ctreg::cli::cli_main([
            "ctreg",
            "register",
            "--moving-pet",
            bundle_dir.join("moving_pet.rvol").to_str().unwrap(),
            "--fixed-pet",
            bundle_dir.join("fixed_pet.rvol").to_str().unwrap(),
            "--moving-ct",
            bundle_dir.join("moving_ct.rvol").to_str().unwrap(),
            "--fixed-ct",
            bundle_dir.join("fixed_ct.rvol").to_str().unwrap(),
            "--moving-seg",
            bundle_dir.join("moving_seg.rvol").to_str().unwrap(),
            "--fixed-seg",
            bundle_dir.join("fixed_seg.rvol").to_str().unwrap(),
            "--config",
            config_path.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
    };
    let code_a = run("a");
    let code_b = run("b");

    let bytes = |run: &str, file: &str| std::fs::read(dir.path().join(run).join(file)).unwrap();
    let ddf_equal = bytes("a", "ddf.rvol") == bytes("b", "ddf.rvol")
        && bytes("a", "ddf.rbin") == bytes("b", "ddf.rbin");
    // run logs carry wall-clock telemetry; compare with wall_ms zeroed
    let canon = |run: &str| {
        let text = String::from_utf8(bytes(run, "runlog.jsonl")).unwrap();
        let records = ctreg::io::runlog::parse_runlog_str(&text).unwrap();
        ctreg::io::runlog::canonical_runlog(&records)
    };
    let log_equal = canon("a") == canon("b");
    let metrics_equal = bytes("a", "metrics.json") == bytes("b", "metrics.json");
    report(
        "criterion 8 (determinism)",
        code_a == 0 && code_b == 0 && ddf_equal && log_equal && metrics_equal,
        &format!(
            "two CLI runs, same seed: ddf files bit-identical {ddf_equal}, run logs bit-identical \
             up to wall-clock telemetry {log_equal}, metrics bit-identical {metrics_equal}"
        ),
    );
}

/// Hand-built minimal float32 NIfTI, independent of the writer.
fn hand_built_nifti() -> (Vec<u8>, Vec<f64>) {
    let mut h = vec![0u8; 352];
    let w32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    let w16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    w16(&mut h, 40, 3);
    w16(&mut h, 42, 2);
    w16(&mut h, 44, 2);
    w16(&mut h, 46, 2);
    w16(&mut h, 70, 16); // float32
    w16(&mut h, 72, 32);
    w32(&mut h, 76, 1.0);
    w32(&mut h, 80, 1.5);
    w32(&mut h, 84, 2.0);
    w32(&mut h, 88, 2.5);
    w32(&mut h, 108, 352.0);
    w32(&mut h, 112, 1.0);
    h[344..348].copy_from_slice(b"n+1\0");
    let values: Vec<f64> = (0..8).map(|i| i as f64 * 0.25 - 1.0).collect();
    for &v in &values {
        h.extend_from_slice(&(v as f32).to_le_bytes());
    }
    (h, values)
}

#[test]
fn criterion_9_io_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut all = true;
    let mut count = 0;
    for trial in 0..100u64 {
        let dims = [
            2 + (uniform(trial, 0, 0) * 5.0) as usize,
            2 + (uniform(trial, 1, 0) * 5.0) as usize,
            2 + (uniform(trial, 2, 0) * 5.0) as usize,
        ];
        let grid = Grid::new(
            dims,
            [
                (uniform(trial, 3, 0) * 4.0 + 0.5) as f32 as f64,
                (uniform(trial, 4, 0) * 4.0 + 0.5) as f32 as f64,
                (uniform(trial, 5, 0) * 4.0 + 0.5) as f32 as f64,
            ],
            [0.0; 3],
        )
        .unwrap();
        let n = grid.len();
        let loaded = match trial % 3 {
            0 => LoadedVolume::Scalar(
                Volume::new(
                    grid,
                    (0..n).map(|i| (uniform(trial, 6, i) * 2e3 - 1e3) as f32 as f64).collect(),
                )
                .unwrap(),
            ),
            1 => LoadedVolume::Labels(
                LabelVolume::new(
                    grid,
                    (0..n).map(|i| (uniform(trial, 7, i) * 9.0) as u8).collect(),
                    9,
                )
                .unwrap(),
            ),
            _ => LoadedVolume::Field(
                DisplacementField::new(
                    grid,
                    (0..n)
                        .map(|i| {
                            [
                                (uniform(trial, 8, i) * 8.0 - 4.0) as f32 as f64,
                                (uniform(trial, 9, i) * 8.0 - 4.0) as f32 as f64,
                                (uniform(trial, 10, i) * 8.0 - 4.0) as f32 as f64,
                            ]
                        })
                        .collect(),
                )
                .unwrap(),
            ),
        };
        for ext in ["nii.gz", "rvol"] {
            let path = dir.path().join(format!("v{trial}.{ext}"));
            write_volume(&loaded, &path).unwrap();
            let back = read_volume(&path).unwrap();
            let same = match (&loaded, &back) {
                (LoadedVolume::Scalar(a), LoadedVolume::Scalar(b)) => a.values == b.values,
                (LoadedVolume::Labels(a), LoadedVolume::Labels(b)) => a.labels == b.labels,
                (LoadedVolume::Field(a), LoadedVolume::Field(b)) => a.vectors == b.vectors,
                _ => false,
            };
            all &= same;
            count += 1;
        }
    }

    let (bytes, file_values) = hand_built_nifti();
    let fixture = read_nifti_bytes(&bytes).unwrap().into_scalar().unwrap();
    let fixture_ok = fixture.grid.dims == [2, 2, 2]
        && fixture.grid.spacing == [1.5, 2.0, 2.5]
        && (0..2).all(|x0| {
            (0..2).all(|x1| {
                (0..2).all(|x2| {
                    fixture.at(x0, x1, x2) == (file_values[x0 + 2 * (x1 + 2 * x2)] as f32) as f64
                })
            })
        });
    report(
        "criterion 9 (i/o round-trip)",
        all && fixture_ok,
        &format!("{count} round-trips bit-exact across both formats, hand-built NIfTI fixture exact: {fixture_ok}"),
    );
}
