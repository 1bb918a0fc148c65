use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use tilted_core::bench::model_problem::{
    align_runs, contraction_rate, lowrank_table, rough_stage_errors, spectrum_table, write_align_csv, write_lowrank_csv,
    write_spectrum_csv, AlignRunConfig, LowRankConfig, SpectrumConfig,
};
use tilted_core::bench::report::plot_lines;
use tilted_core::bench::sweep::{default_2d_train, default_image, feature_norm_image, render_image, scene_angle_deg};
use tilted_core::bench::{
    fit_image, resolution_sweep, rotation_sweep, sdf_fit, two_phase_probe, ExperimentReport, Image2dModel, ImageSource,
    ResolutionSweepConfig, RotationSweepConfig, SdfFitConfig, TwoPhaseProbeConfig, Variant,
};
use tilted_core::checkpoint::save_checkpoint;
use tilted_core::grids::DecompositionKind;
use tilted_core::train::TrainConfig;
use tilted_core::Error;

#[derive(Parser, Debug)]
#[command(name = "tilted", version, about = "Factored fields with learned rotations: model-problem checks, fits and sweeps")]
struct Cli {
    /// TOML config for the subcommand; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, global = true, env = "TILTED_OUT", default_value = "tilted-out")]
    out: PathBuf,
    /// Replaces the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Singular values of the sampled diamond against the analytic spectrum.
    TheorySpectrum {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Best rank-F errors of the diamond and components needed per PSNR target.
    TheoryLowrank {
        #[arg(long)]
        max_components: Option<usize>,
    },
    /// Alternating alignment and factorization from random starting angles,
    /// plus the power-method contraction of the rough stage.
    TheoryAlign {
        #[arg(long)]
        n: Option<usize>,
        /// Number of runs, seeded consecutively from `--seed` (default 0).
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Fit one rotated image and write its reconstruction, feature norms and checkpoint.
    FitImage2d {
        #[arg(long)]
        angle: Option<f64>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Fit analytic signed distance functions and score IoU.
    FitSdf {
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Holdout PSNR across rotation angles for each variant.
    SweepRotation {
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Holdout PSNR across factor resolutions at a fixed angle.
    SweepResolution {
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Rotations recovered by the bottleneck phase of two-phase training.
    ProbeTwoPhase {
        #[command(flatten)]
        common: TrainArgs,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training steps of the main phase.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    AxisAligned,
    Tilted,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::AxisAligned => Variant::AxisAligned,
            VariantArg::Tilted => Variant::Tilted,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Kplanes,
    Vm,
    Cp,
}

impl From<KindArg> for DecompositionKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Kplanes => DecompositionKind::KPlanes,
            KindArg::Vm => DecompositionKind::VectorMatrix,
            KindArg::Cp => DecompositionKind::Cp3d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FitImageConfig {
    image: ImageSource,
    angle_deg: f64,
    variant: Variant,
    seed: u64,
    model: Image2dModel,
    train: TrainConfig,
}

impl Default for FitImageConfig {
    fn default() -> Self {
        Self {
            image: default_image(),
            angle_deg: 30.0,
            variant: Variant::Tilted,
            seed: 0,
            model: Image2dModel::default(),
            train: default_2d_train(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RoughStageConfig {
    n: usize,
    steps: usize,
}

impl Default for RoughStageConfig {
    fn default() -> Self {
        Self { n: 512, steps: 40 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TheoryAlignConfig {
    align: AlignRunConfig,
    rough: RoughStageConfig,
}

enum Failure {
    User(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::User(e.to_string())
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> std::result::Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::User(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::User(format!("invalid config {}: {e}", path.display())))
}

fn print_config<T: Serialize>(cfg: &T) -> Outcome {
    let text = toml::to_string(cfg).map_err(|e| Failure::User(format!("cannot serialize config: {e}")))?;
    print!("{text}");
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure::User(format!("cannot write {}: {e}", path.display())))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> tilted_core::Result<()>) -> std::result::Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn save_report(report: &ExperimentReport, path: &Path) -> Outcome {
    report.save_csv(path)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// One line per variant of `metric` averaged over seeds against the numeric
/// condition.
fn plot_metric(report: &ExperimentReport, variants: &[Variant], metric: &str, path: &Path) -> Outcome {
    let mut series = Vec::new();
    for v in variants {
        let mut by_x: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
        for r in report.select(|r| r.variant == v.name() && r.metric == metric) {
            if let Ok(x) = r.condition.parse::<f64>() {
                let e = by_x.entry((x * 1000.0).round() as i64).or_insert((x, 0.0, 0));
                e.1 += r.value;
                e.2 += 1;
            }
        }
        series.push(by_x.values().map(|(x, s, n)| (*x, s / *n as f64)).collect::<Vec<_>>());
    }
    plot_lines(path, &series, 640, 360)?;
    println!("wrote {} (series order: {})", path.display(), variants.iter().map(Variant::name).collect::<Vec<_>>().join(", "));
    Ok(())
}

fn apply_steps(train: &mut TrainConfig, common: &TrainArgs) {
    if let Some(s) = common.steps {
        train.steps = s;
    }
}

fn run(cli: Cli) -> Outcome {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Failure::User(format!("cannot set thread count: {e}")))?;
    }
    let cfg_path = cli.config.as_deref();
    let out = cli.out.as_path();
    let prepare = || -> Outcome {
        fs::create_dir_all(out).map_err(|e| Failure::User(format!("cannot create output directory {}: {e}", out.display())))
    };
    match &cli.command {
        Command::TheorySpectrum { n, k } => {
            let mut cfg: SpectrumConfig = load_config(cfg_path)?;
            cfg.n = n.unwrap_or(cfg.n);
            cfg.k = k.unwrap_or(cfg.k);
            if cli.print_config {
                return print_config(&cfg);
            }
            prepare()?;
            let rows = spectrum_table(&cfg)?;
            for r in &rows {
                println!("k={} analytic={:.6} measured={:.6} rel_error={:.3e}", r.k, r.analytic, r.measured, r.rel_error);
            }
            let path = out.join("theory_spectrum.csv");
            write_file(&path, &csv_bytes(|b| write_spectrum_csv(&rows, b))?)?;
            println!("wrote {}", path.display());
        }
        Command::TheoryLowrank { max_components } => {
            let mut cfg: LowRankConfig = load_config(cfg_path)?;
            cfg.max_components = max_components.unwrap_or(cfg.max_components);
            if cli.print_config {
                return print_config(&cfg);
            }
            prepare()?;
            let table = lowrank_table(&cfg)?;
            for (n, db, f) in &table.components {
                println!("n={n} target={db} dB min_components={f}");
            }
            let path = out.join("theory_lowrank.csv");
            write_file(&path, &csv_bytes(|b| write_lowrank_csv(&table, b))?)?;
            println!("wrote {}", path.display());
        }
        Command::TheoryAlign { n, runs } => {
            let mut cfg: TheoryAlignConfig = load_config(cfg_path)?;
            if let Some(n) = n {
                cfg.align.problem.n = *n;
                cfg.rough.n = *n;
            }
            if cli.seed.is_some() || runs.is_some() {
                let start = cli.seed.unwrap_or(0);
                let count = runs.unwrap_or(cfg.align.seeds.len()) as u64;
                cfg.align.seeds = (start..start + count).collect();
            }
            if cli.print_config {
                return print_config(&cfg);
            }
            prepare()?;
            let errors = rough_stage_errors(cfg.rough.n, cfg.rough.steps)?;
            let rate = contraction_rate(&errors, 1e-10).unwrap_or(f64::NAN);
            println!("rough stage contraction per step: {rate:.4}");
            let mut rough = String::from("step,error\n");
            for (t, e) in errors.iter().enumerate() {
                rough.push_str(&format!("{t},{e:.6e}\n"));
            }
            rough.push_str(&format!("rate,{rate:.6}\n"));
            let path = out.join("theory_rough_stage.csv");
            write_file(&path, rough.as_bytes())?;
            println!("wrote {}", path.display());
            let results = align_runs(&cfg.align)?;
            let ok = results.iter().filter(|r| r.success).count();
            println!("alignment succeeded on {ok}/{} seeds", results.len());
            let path = out.join("theory_align.csv");
            write_file(&path, &csv_bytes(|b| write_align_csv(&results, b))?)?;
            println!("wrote {}", path.display());
        }
        Command::FitImage2d { angle, variant, common } => {
            let mut cfg: FitImageConfig = load_config(cfg_path)?;
            cfg.angle_deg = angle.unwrap_or(cfg.angle_deg);
            cfg.variant = variant.map(Variant::from).unwrap_or(cfg.variant);
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            apply_steps(&mut cfg.train, common);
            if cli.print_config {
                return print_config(&cfg);
            }
            cfg.train.validate()?;
            prepare()?;
            let image = cfg.image.rotated(cfg.angle_deg.to_radians())?;
            let fit = fit_image(&image, cfg.variant, &cfg.model, &cfg.train, cfg.seed)?;
            let mut report = ExperimentReport::default();
            let (id, v, cond, s) = (cfg.image.describe(), cfg.variant.name(), format!("{}", cfg.angle_deg), cfg.seed.to_string());
            report.push(&id, v, &cond, &s, "holdout_psnr", fit.report.holdout_psnr.unwrap_or(f64::NAN));
            report.push(&id, v, &cond, &s, "train_psnr", fit.report.train_psnr);
            for (t, a) in fit.field.volume.transforms.angles().iter().enumerate() {
                report.push(&id, v, &cond, &s, &format!("scene_angle_deg_{t}"), scene_angle_deg(*a));
            }
            println!(
                "holdout PSNR {:.3} dB, train PSNR {:.3} dB",
                fit.report.holdout_psnr.unwrap_or(f64::NAN),
                fit.report.train_psnr
            );
            save_report(&report, &out.join("fit_image2d.csv"))?;
            image.save_png(&out.join("target.png"))?;
            render_image(&fit.field, image.height, image.width)?.save_png(&out.join("reconstruction.png"))?;
            feature_norm_image(&fit.field, image.height, image.width)?.save_png(&out.join("feature_norm.png"))?;
            save_checkpoint(&fit.field, &out.join("fit_image2d.ckpt"))?;
            println!("wrote target.png, reconstruction.png, feature_norm.png, fit_image2d.ckpt to {}", out.display());
        }
        Command::FitSdf { kind, common } => {
            let mut cfg: SdfFitConfig = load_config(cfg_path)?;
            cfg.kind = kind.map(DecompositionKind::from).unwrap_or(cfg.kind);
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            apply_steps(&mut cfg.train, common);
            if cli.print_config {
                return print_config(&cfg);
            }
            cfg.validate()?;
            prepare()?;
            let report = sdf_fit(&cfg)?;
            for r in report.select(|r| r.metric == "iou") {
                println!("seed {} {}: IoU {:.4}", r.seed, r.variant, r.value);
            }
            save_report(&report, &out.join("fit_sdf.csv"))?;
        }
        Command::SweepRotation { common } => {
            let mut cfg: RotationSweepConfig = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            apply_steps(&mut cfg.train, common);
            if cli.print_config {
                return print_config(&cfg);
            }
            cfg.validate()?;
            prepare()?;
            let report = rotation_sweep(&cfg)?;
            for r in report.select(|r| r.seed == "median") {
                println!("{} {}: {:.4}", r.variant, r.metric, r.value);
            }
            save_report(&report, &out.join("sweep_rotation.csv"))?;
            plot_metric(&report, &cfg.variants, "holdout_psnr", &out.join("sweep_rotation.png"))?;
        }
        Command::SweepResolution { common } => {
            let mut cfg: ResolutionSweepConfig = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            apply_steps(&mut cfg.train, common);
            if cli.print_config {
                return print_config(&cfg);
            }
            cfg.train.validate()?;
            prepare()?;
            let report = resolution_sweep(&cfg)?;
            for r in report.select(|r| r.metric == "holdout_psnr") {
                println!("resolution {} seed {} {}: {:.3} dB", r.condition, r.seed, r.variant, r.value);
            }
            save_report(&report, &out.join("sweep_resolution.csv"))?;
            plot_metric(&report, &cfg.variants, "holdout_psnr", &out.join("sweep_resolution.png"))?;
        }
        Command::ProbeTwoPhase { common } => {
            let mut cfg: TwoPhaseProbeConfig = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            apply_steps(&mut cfg.train, common);
            if cli.print_config {
                return print_config(&cfg);
            }
            cfg.train.validate()?;
            prepare()?;
            let report = two_phase_probe(&cfg)?;
            for r in report.select(|r| r.metric == "angle_error_deg") {
                println!("seed {}: dominant bottleneck rotation off by {:.3} deg", r.seed, r.value);
            }
            save_report(&report, &out.join("probe_two_phase.csv"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(2)
        }
    }
}
