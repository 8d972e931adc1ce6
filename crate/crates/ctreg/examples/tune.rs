// Scratch harness for optimizer calibration on phantoms.

use ctreg::cli::{bone_gradient_energy, normalize_pair};
use ctreg::engine::{baseline_register, register, RegistrationConfig};
use ctreg::metrics::evaluate;
use ctreg::phantom::{endpoint_error, generate_phantom, PhantomSpec};
use ctreg::volume::DisplacementField;
use ctreg::weight_map::WeightMapParams;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("recovery");
    match mode {
        "recovery" => recovery(&args[2..]),
        "rigid" => rigid(&args[2..]),
        other => eprintln!("unknown mode {other}"),
    }
}

fn recovery(args: &[String]) {
    let mu_r: f64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let delta: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let iters: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let spec = PhantomSpec { seed, ..Default::default() };
    let phantom = generate_phantom(&spec).unwrap();
    let pair = normalize_pair(&phantom.pair).unwrap();

    let mut config = RegistrationConfig {
        weight_params: WeightMapParams::new(mu_r, delta, 2.0).unwrap(),
        seed,
        ..Default::default()
    };
    if iters > 0 {
        config.iters_per_level = vec![iters, iters, iters];
    }

    let zero = DisplacementField::zeros(phantom.gt_ddf.grid.clone());
    let pre_epe = endpoint_error(&zero, &phantom.gt_ddf, &phantom.body_mask).unwrap();
    let pre = evaluate(&pair, &zero).unwrap();

    let t0 = Instant::now();
    let result = register(&pair, &config).unwrap();
    let secs = t0.elapsed().as_secs_f64();

    let post_epe = endpoint_error(&result.ddf, &phantom.gt_ddf, &phantom.body_mask).unwrap();
    let post = evaluate(&pair, &result.ddf).unwrap();
    let last = result.trace.last().unwrap();

    println!(
        "seed {seed} mu_r {mu_r} delta {delta}: {secs:.1}s iters {:?} conv {:?}",
        result.iterations_run, result.converged
    );
    println!(
        "  EPE {:.3} -> {:.3} vox | dice {:.4} -> {:.4} | tre {:.2} -> {:.2} mm | loss {:.4} (sim {:.4} seg {:.4} reg {:.4})",
        pre_epe.mean_vox,
        post_epe.mean_vox,
        pre.dice_mean,
        post.dice_mean,
        pre.tre_mean,
        post.tre_mean,
        last.loss.total,
        last.loss.sim,
        last.loss.seg,
        last.loss.reg
    );
}

fn rigid(args: &[String]) {
    let mu_r: f64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(4500.0);
    let n: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let delta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3000.0);
    let dims: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(64);
    let mut wins_bone = 0;
    let mut wins_dice = 0;
    let mut wins_tre = 0;
    for seed in 0..n {
        let mut spec = PhantomSpec::rigid_block(seed);
        spec.dims = [dims, dims, dims * 3 / 2];
        let phantom = generate_phantom(&spec).unwrap();
        let pair = normalize_pair(&phantom.pair).unwrap();
        let config = RegistrationConfig {
            weight_params: WeightMapParams::new(mu_r, delta, 2.0).unwrap(),
            seed,
            ..Default::default()
        };
        let t0 = Instant::now();
        let base = baseline_register(&pair, &config).unwrap();
        let prop = register(&pair, &config).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let base_eval = evaluate(&pair, &base.ddf).unwrap();
        let prop_eval = evaluate(&pair, &prop.ddf).unwrap();
        let base_bone = bone_gradient_energy(&base.ddf, &pair.fixed_seg).unwrap();
        let prop_bone = bone_gradient_energy(&prop.ddf, &pair.fixed_seg).unwrap();
        let zero = DisplacementField::zeros(phantom.gt_ddf.grid.clone());
        let pre = evaluate(&pair, &zero).unwrap();
        println!(
            "seed {seed} ({secs:.0}s): dice pre {:.4} base {:.4} prop {:.4} | tre pre {:.2} base {:.2} prop {:.2} | bone base {:.3e} prop {:.3e}",
            pre.dice_mean,
            base_eval.dice_mean,
            prop_eval.dice_mean,
            pre.tre_mean,
            base_eval.tre_mean,
            prop_eval.tre_mean,
            base_bone,
            prop_bone
        );
        wins_bone += (prop_bone < base_bone) as u32;
        wins_dice += (prop_eval.dice_mean >= base_eval.dice_mean) as u32;
        wins_tre += (prop_eval.tre_mean <= base_eval.tre_mean) as u32;
    }
    println!("bone wins {wins_bone}/{n}, dice wins {wins_dice}/{n}, tre wins {wins_tre}/{n}");
}
