//! Command-line frontend: registration, warping, weight maps, evaluation,
//! phantom generation, and the baseline-vs-proposed ablation table.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use crate::engine::{baseline_register, register, RegistrationConfig, RegistrationResult};
use crate::error::{Error, Result};
use crate::io::report::{mean_std, render_ablate_json, render_ablate_text, render_report_text, AblateRow, AblateTable, ArmStats};
use crate::io::{self, runlog, LoadedVolume, VolumeFormat};
use crate::metrics::{evaluate, paired_t_test};
use crate::phantom::{generate_phantom, PhantomPair, PhantomSpec, LABEL_BONE};
use crate::volume::{
    normalize_unit, spatial_gradient, warp_labels_nearest, warp_scalar, DisplacementField,
    LabelVolume, RegistrationPair, Volume,
};
use crate::weight_map::{build_weight_map, WeightMapParams};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "ctreg", version, about = "Deformable PET registration with CT-guided spatially-varying regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a moving PET/CT/seg triple onto a fixed one.
    Register(RegisterArgs),
    /// Same pipeline with the uniform global-scalar weight map.
    BaselineRegister(RegisterArgs),
    /// Build the CT-guided weight map for a CT volume.
    Weights(WeightsArgs),
    /// Warp a volume through a displacement field.
    Warp(WarpArgs),
    /// Evaluate a displacement field on a registration pair.
    Eval(EvalArgs),
    /// Generate a synthetic phantom bundle with ground truth.
    Phantom(PhantomArgs),
    /// Baseline-vs-proposed comparison across phantoms and mu_r values.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Bundle,
    Nifti,
    NiftiGz,
}

impl FormatArg {
    fn as_format(self) -> VolumeFormat {
        match self {
            FormatArg::Bundle => VolumeFormat::Bundle,
            FormatArg::Nifti => VolumeFormat::Nifti,
            FormatArg::NiftiGz => VolumeFormat::NiftiGz,
        }
    }
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    moving_pet: PathBuf,
    #[arg(long)]
    fixed_pet: PathBuf,
    #[arg(long)]
    moving_ct: PathBuf,
    #[arg(long)]
    fixed_ct: PathBuf,
    #[arg(long)]
    moving_seg: PathBuf,
    #[arg(long)]
    fixed_seg: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// TOML config; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "bundle")]
    format: FormatArg,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    ct: PathBuf,
    #[arg(long, default_value_t = 4500.0)]
    mu_r: f64,
    #[arg(long, default_value_t = 3000.0)]
    delta: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpArg {
    Trilinear,
    Nearest,
}

#[derive(Args)]
struct WarpArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    ddf: PathBuf,
    #[arg(long, value_enum, default_value = "trilinear")]
    mode: InterpArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long)]
    ddf: PathBuf,
    /// Report JSON output path; the text rendering goes to stdout.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Default,
    RigidBlock,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "default")]
    preset: PresetArg,
    /// Grid dims as HxWxD, e.g. 64x64x96.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    organs: Option<usize>,
    #[arg(long)]
    max_soft_displacement: Option<f64>,
    #[arg(long)]
    bone_translation: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, value_enum, default_value = "bundle")]
    format: FormatArg,
}

#[derive(Args)]
struct AblateArgs {
    /// Phantom bundle directories (each holding a manifest.json).
    #[arg(long, required = true, num_args = 1..)]
    phantoms: Vec<PathBuf>,
    /// mu_r values, one table row each.
    #[arg(long, required = true, value_delimiter = ',')]
    mu_r: Vec<f64>,
    #[arg(long, default_value_t = 3000.0)]
    delta: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Base config for optimizer settings (mu_r/delta/gamma overridden).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Text table output path (also printed to stdout).
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON sidecar with full per-phantom detail.
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Entry point used by `main` and by tests; returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Register(args) => run_register(args, false),
        Command::BaselineRegister(args) => run_register(args, true),
        Command::Weights(args) => run_weights(args),
        Command::Warp(args) => run_warp(args),
        Command::Eval(args) => run_eval(args),
        Command::Phantom(args) => run_phantom(args),
        Command::Ablate(args) => run_ablate(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_scalar(path: &Path) -> Result<Volume> {
    io::read_volume(path)?.into_scalar().map_err(|e| e.prefix(&path.display().to_string()))
}

fn load_labels(path: &Path) -> Result<LabelVolume> {
    io::read_volume(path)?.into_labels().map_err(|e| e.prefix(&path.display().to_string()))
}

fn load_field(path: &Path) -> Result<DisplacementField> {
    io::read_volume(path)?.into_field().map_err(|e| e.prefix(&path.display().to_string()))
}

/// Load the six volumes and normalize intensities to [0, 1].
fn load_pair(args: &PairArgs) -> Result<RegistrationPair> {
    let norm = |p: &Path| -> Result<Volume> {
        let v = load_scalar(p)?;
        normalize_unit(&v).map_err(|e| e.prefix(&p.display().to_string()))
    };
    RegistrationPair::new(
        norm(&args.moving_pet)?,
        norm(&args.fixed_pet)?,
        norm(&args.moving_ct)?,
        norm(&args.fixed_ct)?,
        load_labels(&args.moving_seg)?,
        load_labels(&args.fixed_seg)?,
    )
}

fn out_path(dir: &Path, stem: &str, format: VolumeFormat) -> PathBuf {
    dir.join(format!("{stem}.{}", format.extension()))
}

fn run_register(args: RegisterArgs, baseline: bool) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => io::load_config(path)?,
        None => RegistrationConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let pair = load_pair(&args.pair)?;
    let result: RegistrationResult =
        if baseline { baseline_register(&pair, &config)? } else { register(&pair, &config)? };

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::WriteError(format!("{}: {e}", args.out_dir.display())))?;
    let format = args.format.as_format();
    io::write_volume(&LoadedVolume::Field(result.ddf.clone()), &out_path(&args.out_dir, "ddf", format))?;
    let warped_pet = warp_scalar(&pair.moving_pet, &result.ddf);
    let warped_ct = warp_scalar(&pair.moving_ct, &result.ddf);
    let warped_seg = warp_labels_nearest(&pair.moving_seg, &result.ddf);
    io::write_volume(&LoadedVolume::Scalar(warped_pet), &out_path(&args.out_dir, "warped_pet", format))?;
    io::write_volume(&LoadedVolume::Scalar(warped_ct), &out_path(&args.out_dir, "warped_ct", format))?;
    io::write_volume(&LoadedVolume::Labels(warped_seg), &out_path(&args.out_dir, "warped_seg", format))?;
    runlog::write_runlog(&args.out_dir.join("runlog.jsonl"), &result.trace)?;

    let report = evaluate(&pair, &result.ddf)?;
    io::report::write_report(&args.out_dir.join("metrics.json"), &report)?;
    io::write_atomic(&args.out_dir.join("metrics.txt"), render_report_text(&report).as_bytes())?;
    println!(
        "{}: {} levels, dice_mean {:.4}, tre_mean {:.3} mm",
        if baseline { "baseline-register" } else { "register" },
        result.iterations_run.len(),
        report.dice_mean,
        report.tre_mean
    );
    Ok(())
}

fn run_weights(args: WeightsArgs) -> Result<()> {
    let ct = load_scalar(&args.ct)?;
    let params = WeightMapParams::new(args.mu_r, args.delta, args.gamma)?;
    let map = build_weight_map(&ct, &params)?;
    io::write_volume(&LoadedVolume::Scalar(map.as_volume()), &args.out)
}

fn run_warp(args: WarpArgs) -> Result<()> {
    let ddf = load_field(&args.ddf)?;
    let input = io::read_volume(&args.input)?;
    let out = match (input, args.mode) {
        (LoadedVolume::Scalar(v), InterpArg::Trilinear) => LoadedVolume::Scalar(warp_scalar(&v, &ddf)),
        (LoadedVolume::Scalar(v), InterpArg::Nearest) => {
            LoadedVolume::Scalar(nearest_warp_scalar(&v, &ddf))
        }
        (LoadedVolume::Labels(s), InterpArg::Nearest) => {
            LoadedVolume::Labels(warp_labels_nearest(&s, &ddf))
        }
        (LoadedVolume::Labels(_), InterpArg::Trilinear) => {
            return Err(Error::InvalidParams(
                "label volumes warp with --mode nearest (trilinear would mix class ids)".into(),
            ))
        }
        (LoadedVolume::Field(_), _) => {
            return Err(Error::InvalidParams("cannot warp a displacement field".into()))
        }
    };
    io::write_volume(&out, &args.out)
}

fn nearest_warp_scalar(vol: &Volume, ddf: &DisplacementField) -> Volume {
    let grid = ddf.grid.clone();
    let [h, w, d] = vol.grid.dims;
    let mut values = vec![0.0f64; grid.len()];
    for (idx, out) in values.iter_mut().enumerate() {
        let x = grid.coords(idx);
        let u = ddf.vectors[idx];
        let i = (x[0] as f64 + u[0] + 0.5).floor();
        let j = (x[1] as f64 + u[1] + 0.5).floor();
        let k = (x[2] as f64 + u[2] + 0.5).floor();
        if i >= 0.0 && j >= 0.0 && k >= 0.0 {
            let (i, j, k) = (i as usize, j as usize, k as usize);
            if i < h && j < w && k < d {
                *out = vol.at(i, j, k);
            }
        }
    }
    Volume { grid, values }
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let pair = load_pair(&args.pair)?;
    let ddf = load_field(&args.ddf)?;
    let report = evaluate(&pair, &ddf)?;
    io::report::write_report(&args.out, &report)?;
    print!("{}", render_report_text(&report));
    Ok(())
}

/// File names inside a phantom bundle directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub format: String,
    pub format_version: u32,
    pub spec: PhantomSpec,
    pub moving_pet: String,
    pub fixed_pet: String,
    pub moving_ct: String,
    pub fixed_ct: String,
    pub moving_seg: String,
    pub fixed_seg: String,
    pub gt_ddf: String,
    pub body_mask: String,
}

fn parse_dims(text: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = text.split('x').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidParams(format!("dims '{text}' must be HxWxD")));
    }
    let mut dims = [0usize; 3];
    for (a, p) in parts.iter().enumerate() {
        dims[a] = p
            .parse()
            .map_err(|_| Error::InvalidParams(format!("dims entry '{p}' unparsable")))?;
    }
    Ok(dims)
}

/// Write a phantom bundle directory; returns the manifest.
pub fn write_phantom_bundle(
    phantom: &PhantomPair,
    spec: &PhantomSpec,
    dir: &Path,
    format: VolumeFormat,
) -> Result<PhantomManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::WriteError(format!("{}: {e}", dir.display())))?;
    let name = |stem: &str| format!("{stem}.{}", format.extension());
    let manifest = PhantomManifest {
        format: "ctreg-phantom".into(),
        format_version: 1,
        spec: spec.clone(),
        moving_pet: name("moving_pet"),
        fixed_pet: name("fixed_pet"),
        moving_ct: name("moving_ct"),
        fixed_ct: name("fixed_ct"),
        moving_seg: name("moving_seg"),
        fixed_seg: name("fixed_seg"),
        gt_ddf: name("gt_ddf"),
        body_mask: name("body_mask"),
    };
    let p = &phantom.pair;
    io::write_volume(&LoadedVolume::Scalar(p.moving_pet.clone()), &dir.join(&manifest.moving_pet))?;
    io::write_volume(&LoadedVolume::Scalar(p.fixed_pet.clone()), &dir.join(&manifest.fixed_pet))?;
    io::write_volume(&LoadedVolume::Scalar(p.moving_ct.clone()), &dir.join(&manifest.moving_ct))?;
    io::write_volume(&LoadedVolume::Scalar(p.fixed_ct.clone()), &dir.join(&manifest.fixed_ct))?;
    io::write_volume(&LoadedVolume::Labels(p.moving_seg.clone()), &dir.join(&manifest.moving_seg))?;
    io::write_volume(&LoadedVolume::Labels(p.fixed_seg.clone()), &dir.join(&manifest.fixed_seg))?;
    io::write_volume(&LoadedVolume::Field(phantom.gt_ddf.clone()), &dir.join(&manifest.gt_ddf))?;
    io::write_volume(&LoadedVolume::Labels(phantom.body_mask.clone()), &dir.join(&manifest.body_mask))?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    io::write_atomic(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}

/// Read a phantom bundle directory back.
pub fn read_phantom_bundle(dir: &Path) -> Result<(PhantomPair, PhantomSpec)> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::MalformedFile(format!("{}: {e}", manifest_path.display())))?;
    let manifest: PhantomManifest = serde_json::from_str(&text)
        .map_err(|e| Error::MalformedFile(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format != "ctreg-phantom" || manifest.format_version != 1 {
        return Err(Error::MalformedFile(format!(
            "phantom manifest format {}@{}",
            manifest.format, manifest.format_version
        )));
    }
    let mut pair = RegistrationPair::new(
        load_scalar(&dir.join(&manifest.moving_pet))?,
        load_scalar(&dir.join(&manifest.fixed_pet))?,
        load_scalar(&dir.join(&manifest.moving_ct))?,
        load_scalar(&dir.join(&manifest.fixed_ct))?,
        load_labels(&dir.join(&manifest.moving_seg))?,
        load_labels(&dir.join(&manifest.fixed_seg))?,
    )?;
    pair.subject = format!("phantom-{}", manifest.spec.seed);
    pair.moving_tracer = "tracerA".into();
    pair.fixed_tracer = "tracerB".into();
    let gt_ddf = load_field(&dir.join(&manifest.gt_ddf))?;
    let body_mask = load_labels(&dir.join(&manifest.body_mask))?;
    Ok((PhantomPair { pair, gt_ddf, body_mask }, manifest.spec))
}

fn run_phantom(args: PhantomArgs) -> Result<()> {
    let mut spec = match args.preset {
        PresetArg::Default => PhantomSpec::default(),
        PresetArg::RigidBlock => PhantomSpec::rigid_block(args.seed),
    };
    spec.seed = args.seed;
    if let Some(dims) = &args.dims {
        spec.dims = parse_dims(dims)?;
    }
    if let Some(n) = args.organs {
        spec.n_soft_organs = n;
    }
    if let Some(v) = args.max_soft_displacement {
        spec.max_soft_displacement = v;
    }
    if let Some(v) = args.bone_translation {
        spec.bone_translation = v;
    }
    if let Some(v) = args.noise_sigma {
        spec.noise_sigma = v;
    }
    let phantom = generate_phantom(&spec)?;
    write_phantom_bundle(&phantom, &spec, &args.out_dir, args.format.as_format())?;
    println!("phantom bundle written to {}", args.out_dir.display());
    Ok(())
}

/// Mean within-bone deformation-gradient Frobenius energy of a field.
pub fn bone_gradient_energy(ddf: &DisplacementField, fixed_seg: &LabelVolume) -> Result<f64> {
    if ddf.grid.dims != fixed_seg.grid.dims {
        return Err(Error::ShapeMismatch("bone energy: field and seg dims differ".into()));
    }
    let grads = spatial_gradient(ddf);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (idx, &l) in fixed_seg.labels.iter().enumerate() {
        if l == LABEL_BONE {
            sum += grads[idx].iter().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask("no bone voxels in fixed segmentation".into()));
    }
    Ok(sum / count as f64)
}

/// Normalize a phantom pair's intensities the same way `load_pair` does.
pub fn normalize_pair(pair: &RegistrationPair) -> Result<RegistrationPair> {
    let mut out = RegistrationPair::new(
        normalize_unit(&pair.moving_pet)?,
        normalize_unit(&pair.fixed_pet)?,
        normalize_unit(&pair.moving_ct)?,
        normalize_unit(&pair.fixed_ct)?,
        pair.moving_seg.clone(),
        pair.fixed_seg.clone(),
    )?;
    out.subject = pair.subject.clone();
    out.moving_tracer = pair.moving_tracer.clone();
    out.fixed_tracer = pair.fixed_tracer.clone();
    Ok(out)
}

/// One ablation run over loaded phantoms; shared by the CLI and tests.
pub fn run_ablation(
    phantoms: &[(PhantomPair, PhantomSpec)],
    mu_r_values: &[f64],
    delta: f64,
    gamma: f64,
    base_config: &RegistrationConfig,
) -> Result<AblateTable> {
    if phantoms.is_empty() {
        return Err(Error::InvalidParams("ablation needs at least one phantom".into()));
    }
    let mut table = AblateTable::new(delta, gamma, phantoms.len());
    for &mu_r in mu_r_values {
        let mut config = base_config.clone();
        config.weight_params = WeightMapParams::new(mu_r, delta, gamma)?;
        let mut arm_stats = Vec::new();
        let mut dice_by_arm: Vec<Vec<f64>> = vec![Vec::new(), Vec::new()];
        for (arm, is_baseline) in [(0usize, true), (1usize, false)] {
            let mut mi = Vec::new();
            let mut dice = Vec::new();
            let mut tre = Vec::new();
            let mut bone = Vec::new();
            for (phantom, _) in phantoms {
                let pair = normalize_pair(&phantom.pair)?;
                let result = if is_baseline {
                    baseline_register(&pair, &config)?
                } else {
                    register(&pair, &config)?
                };
                let report = evaluate(&pair, &result.ddf)?;
                mi.push(report.mi);
                dice.push(report.dice_mean);
                tre.push(report.tre_mean);
                bone.push(bone_gradient_energy(&result.ddf, &pair.fixed_seg)?);
            }
            dice_by_arm[arm] = dice.clone();
            let (mi_mean, mi_std) = mean_std(&mi);
            let (dice_mean, dice_std) = mean_std(&dice);
            let (tre_mean, tre_std) = mean_std(&tre);
            let (bone_energy_mean, _) = mean_std(&bone);
            arm_stats.push(ArmStats {
                mi_mean,
                mi_std,
                dice_mean,
                dice_std,
                tre_mean,
                tre_std,
                bone_energy_mean,
            });
        }
        let (dice_t, dice_p) = match paired_t_test(&dice_by_arm[1], &dice_by_arm[0]) {
            Ok((t, p)) => (t, p),
            Err(Error::DegenerateSample(_)) | Err(Error::InvalidParams(_)) => (0.0, f64::NAN),
            Err(e) => return Err(e),
        };
        table.per_phantom_dice.push(
            dice_by_arm[0].iter().zip(&dice_by_arm[1]).map(|(&b, &p)| (b, p)).collect(),
        );
        table.rows.push(AblateRow {
            mu_r,
            baseline: arm_stats[0],
            proposed: arm_stats[1],
            dice_t,
            dice_p,
        });
    }
    Ok(table)
}

fn run_ablate(args: AblateArgs) -> Result<()> {
    let base_config = match &args.config {
        Some(path) => io::load_config(path)?,
        None => RegistrationConfig::default(),
    };
    let mut phantoms = Vec::new();
    for dir in &args.phantoms {
        phantoms.push(read_phantom_bundle(dir)?);
    }
    let table = run_ablation(&phantoms, &args.mu_r, args.delta, args.gamma, &base_config)?;
    let text = render_ablate_text(&table);
    io::write_atomic(&args.out, text.as_bytes())?;
    if let Some(json_path) = &args.json {
        io::write_atomic(json_path, render_ablate_json(&table).as_bytes())?;
    }
    print!("{text}");
    Ok(())
}
