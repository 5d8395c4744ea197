//! `hessreg` command-line tool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hessreg::evaluation::{
    bias_robustness_delta, compute_mtre, scatter_csv, scatter_rows, similarity_map,
    write_pgm_slices,
};
use hessreg::metrics::Metric;
use hessreg::optimizer::{load_trace_csv, DeConfig};
use hessreg::registration::{register, ParamBounds, RegistrationConfig};
use hessreg::transform::{AffineParams, AffineTransform, TransformRecord};
use hessreg::volume_io::{
    apply_bias_field, load_landmarks, load_volume, load_volume_with, save_landmarks, save_volume,
    synthesize_pair, LoadOptions, PhantomKind, SynthOptions,
};
use hessreg::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "hessreg",
    version,
    about = "Multimodal affine registration with a Hessian-based similarity metric"
)]
struct Cli {
    /// Worker threads (0 = available parallelism)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register a moving volume to a fixed volume
    Register(RegisterArgs),
    /// Compute a per-voxel similarity map of two volumes on the same grid
    Map(MapArgs),
    /// Apply a smooth multiplicative bias field to a volume
    Bias(BiasArgs),
    /// Generate a synthetic fixed/moving pair with landmarks
    Synth(SynthArgs),
    /// Mean target registration error of a transform
    Mtre(MtreArgs),
    /// Convert an optimisation trace into similarity vs. landmark error rows
    TraceExport(TraceExportArgs),
}

#[derive(Args, Debug)]
struct RegisterArgs {
    /// Fixed image (.nii or .raw)
    #[arg(long)]
    fixed: PathBuf,
    /// Moving image (.nii or .raw)
    #[arg(long)]
    moving: PathBuf,
    /// Output transform file
    #[arg(long)]
    out: PathBuf,
    /// Output trace CSV (one row per evaluated deformation)
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Similarity metric: hessian or goa
    #[arg(long, default_value_t = Metric::Hessian)]
    metric: Metric,
    /// Gaussian derivative scale in mm
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    /// Number of sampled fixed-image voxels
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    /// Minimum sample distance from the fixed-image border in mm
    #[arg(long, default_value_t = 0.0)]
    sample_margin: f64,
    /// Minimum fraction of samples that must contribute to a finite cost
    #[arg(long, default_value_t = 0.25)]
    min_valid_fraction: f64,
    /// Translation search range (± mm)
    #[arg(long, default_value_t = 10.0)]
    max_translation: f64,
    /// Rotation search range (± degrees)
    #[arg(long, default_value_t = 5.0)]
    max_rotation: f64,
    /// Shear search range (± per entry)
    #[arg(long, default_value_t = 0.05)]
    max_shear: f64,
    /// Scale search range (1 ± value)
    #[arg(long, default_value_t = 0.05)]
    max_scale: f64,
    /// Differential evolution population size
    #[arg(long, default_value_t = 24)]
    population: usize,
    /// Maximum number of generations
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    /// Crossover probability
    #[arg(long, default_value_t = 0.7)]
    crossover: f64,
    /// Lower end of the mutation weight interval
    #[arg(long, default_value_t = 0.5)]
    weight_min: f64,
    /// Upper end of the mutation weight interval
    #[arg(long, default_value_t = 1.0)]
    weight_max: f64,
    /// Stop when the population cost std falls below this fraction of |mean|
    #[arg(long, default_value_t = 0.002)]
    termination_ratio: f64,
    /// Do not place the identity deformation in the initial population
    #[arg(long)]
    no_identity_seed: bool,
    /// Seed for sampling and optimisation
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use intensities as stored instead of rescaling to zero mean, unit variance
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    /// Gaussian derivative scale in mm
    #[arg(long)]
    sigma: f64,
    /// Similarity metric: hessian or goa
    #[arg(long, default_value_t = Metric::Hessian)]
    metric: Metric,
    /// Output map volume
    #[arg(long)]
    out: PathBuf,
    /// Also write central slices as <prefix>_{axial,coronal,sagittal}.pgm
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Also report the change under bias fields of this strength on both images
    #[arg(long)]
    bias_strength: Option<f64>,
    /// Seed of the bias fields used with --bias-strength
    #[arg(long, default_value_t = 0)]
    bias_seed: u64,
    /// Write the bias difference map here (requires --bias-strength)
    #[arg(long)]
    bias_diff_out: Option<PathBuf>,
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args, Debug)]
struct BiasArgs {
    /// Input volume
    #[arg(long = "in")]
    input: PathBuf,
    /// Field strength: values lie in [1 - s, 1 + s]
    #[arg(long)]
    strength: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Phantom: gaussian_blobs or shepp_logan_like
    #[arg(long, default_value_t = PhantomKind::GaussianBlobs)]
    kind: PhantomKind,
    /// Grid size as nx,ny,nz
    #[arg(long, value_parser = parse_triple::<usize>, default_value = "64,64,64")]
    dims: [usize; 3],
    /// Voxel spacing in mm as sx,sy,sz
    #[arg(long, value_parser = parse_triple::<f64>, default_value = "1,1,1")]
    spacing: [f64; 3],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_fixed: PathBuf,
    #[arg(long)]
    out_moving: PathBuf,
    /// Landmark prefix: writes <prefix>_fixed.txt and <prefix>_moving.txt
    #[arg(long)]
    out_lms: PathBuf,
    /// Write the ground-truth transform here
    #[arg(long)]
    out_truth: Option<PathBuf>,
    /// Deformation translation in mm as tx,ty,tz
    #[arg(long, value_parser = parse_triple::<f64>, default_value = "0,0,0", allow_hyphen_values = true)]
    translate: [f64; 3],
    /// Deformation rotation in degrees as rx,ry,rz
    #[arg(long, value_parser = parse_triple::<f64>, default_value = "0,0,0", allow_hyphen_values = true)]
    rotate: [f64; 3],
    /// Deformation shear as sxy,sxz,syz
    #[arg(long, value_parser = parse_triple::<f64>, default_value = "0,0,0", allow_hyphen_values = true)]
    shear: [f64; 3],
    /// Deformation scale as kx,ky,kz
    #[arg(long, value_parser = parse_triple::<f64>, default_value = "1,1,1")]
    scale: [f64; 3],
    /// Noise standard deviation as a fraction of the moving intensity range
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Bias field strength applied to the moving image
    #[arg(long, default_value_t = 0.0)]
    bias: f64,
    /// Number of landmarks
    #[arg(long, default_value_t = 10)]
    landmarks: usize,
}

#[derive(Args, Debug)]
struct MtreArgs {
    #[arg(long)]
    lms_fixed: PathBuf,
    #[arg(long)]
    lms_moving: PathBuf,
    /// Transform file; identity when omitted
    #[arg(long)]
    transform: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TraceExportArgs {
    /// Trace CSV written by `register --trace`
    #[arg(long)]
    trace: PathBuf,
    /// Transform file written by the same `register` run (supplies the pivot)
    #[arg(long)]
    transform: PathBuf,
    #[arg(long)]
    lms_fixed: PathBuf,
    #[arg(long)]
    lms_moving: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> std::result::Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.trim()
                .parse::<T>()
                .map_err(|_| format!("invalid number {p:?}"))?,
        );
    }
    out.try_into()
        .map_err(|_| "expected three values".to_string())
}

fn run_register(a: &RegisterArgs) -> Result<()> {
    let opts = LoadOptions {
        normalize: !a.no_normalize,
    };
    let fixed = load_volume_with(&a.fixed, opts)?;
    let moving = load_volume_with(&a.moving, opts)?;
    let cfg = RegistrationConfig {
        sigma_mm: a.sigma,
        num_samples: a.samples,
        metric: a.metric,
        bounds: ParamBounds {
            translation_mm: a.max_translation,
            rotation_deg: a.max_rotation,
            shear: a.max_shear,
            scale: a.max_scale,
        },
        de: DeConfig {
            population_size: a.population,
            max_iterations: a.max_iterations,
            crossover_prob: a.crossover,
            weight_range: (a.weight_min, a.weight_max),
            termination_ratio: a.termination_ratio,
            seed: a.seed,
            ..DeConfig::default()
        },
        sample_margin_mm: a.sample_margin,
        seed: a.seed,
        min_valid_fraction: a.min_valid_fraction,
        seed_identity: !a.no_identity_seed,
    };
    let result = register(&fixed, &moving, &cfg)?;
    result.record()?.save(&a.out)?;
    if let Some(path) = &a.trace {
        std::fs::write(path, result.trace_csv()).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    let p = result.deformation;
    println!("metric: {}", cfg.metric);
    println!("best similarity: {}", -result.trace.best_cost);
    println!(
        "generations: {} ({}), evaluations: {}",
        result.trace.iterations,
        result.trace.reason,
        result.trace.num_evaluations()
    );
    println!("translation_mm: {:?}", p.translation);
    println!("rotation_deg: {:?}", p.rotation_deg);
    println!("shear: {:?}", p.shear);
    println!("scale: {:?}", p.scale);
    println!("preprocess_seconds: {:.3}", result.preprocess_seconds);
    println!("optimize_seconds: {:.3}", result.optimize_seconds);
    Ok(())
}

fn run_map(a: &MapArgs) -> Result<()> {
    let opts = LoadOptions {
        normalize: !a.no_normalize,
    };
    let fixed = load_volume_with(&a.fixed, opts)?;
    let moving = load_volume_with(&a.moving, opts)?;
    let map = similarity_map(&fixed, &moving, a.metric, a.sigma)?;
    save_volume(&map.values, &a.out)?;
    if let Some(prefix) = &a.pgm {
        write_pgm_slices(&map.values, prefix)?;
    }
    println!("metric: {}", a.metric);
    println!("valid voxels: {}", map.num_valid());
    println!("mean similarity: {}", map.mean_valid().unwrap_or(0.0));
    if let Some(strength) = a.bias_strength {
        let d = bias_robustness_delta(&fixed, &moving, a.metric, a.sigma, strength, a.bias_seed)?;
        println!("mean |delta|: {}", d.mean_abs_delta);
        if let Some(path) = &a.bias_diff_out {
            save_volume(&d.difference, path)?;
        }
    } else if a.bias_diff_out.is_some() {
        return Err(Error::Parameter(
            "--bias-diff-out requires --bias-strength".into(),
        ));
    }
    Ok(())
}

fn run_bias(a: &BiasArgs) -> Result<()> {
    let v = load_volume(&a.input)?;
    save_volume(&apply_bias_field(&v, a.strength, a.seed)?, &a.out)
}

fn landmark_paths(prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let stem = prefix
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Parameter(format!("invalid landmark prefix {}", prefix.display())))?;
    Ok((
        prefix.with_file_name(format!("{stem}_fixed.txt")),
        prefix.with_file_name(format!("{stem}_moving.txt")),
    ))
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let dims = a.dims;
    let spacing = a.spacing;
    let params = AffineParams {
        translation: a.translate,
        rotation_deg: a.rotate,
        shear: a.shear,
        scale: a.scale,
    };
    let grid = hessreg::volume_io::Grid::new(dims, spacing, [0.0; 3])?;
    let center = grid.center();
    let deformation = AffineTransform::from_params(&params, center)?;
    let opts = SynthOptions {
        noise_fraction: a.noise,
        deformation: Some(deformation),
        num_landmarks: a.landmarks,
    };
    let pair = synthesize_pair(a.kind, dims, spacing, a.seed, &opts)?;
    let moving = if a.bias > 0.0 {
        apply_bias_field(&pair.moving, a.bias, a.seed)?
    } else {
        pair.moving
    };
    save_volume(&pair.fixed, &a.out_fixed)?;
    save_volume(&moving, &a.out_moving)?;
    let (lf, lm) = landmark_paths(&a.out_lms)?;
    save_landmarks(&pair.fixed_landmarks, &lf)?;
    save_landmarks(&pair.moving_landmarks, &lm)?;
    if let Some(path) = &a.out_truth {
        TransformRecord::from_deformation(params, center)?.save(path)?;
    }
    println!("fixed landmarks: {}", lf.display());
    println!("moving landmarks: {}", lm.display());
    Ok(())
}

fn run_mtre(a: &MtreArgs) -> Result<()> {
    let fixed = load_landmarks(&a.lms_fixed)?;
    let moving = load_landmarks(&a.lms_moving)?;
    let t = match &a.transform {
        Some(p) => TransformRecord::load(p)?.map,
        None => AffineTransform::identity(),
    };
    let r = compute_mtre(&fixed, &moving, &t)?;
    for (i, e) in r.errors.iter().enumerate() {
        println!("landmark {i}: {e}");
    }
    println!("mean: {}", r.mean);
    println!("min: {}", r.min);
    println!("max: {}", r.max);
    Ok(())
}

fn run_trace_export(a: &TraceExportArgs) -> Result<()> {
    let records = load_trace_csv(&a.trace)?;
    let record = TransformRecord::load(&a.transform)?;
    let (_, center) = record
        .deformation
        .ok_or_else(|| Error::Parameter("transform file has no deformation parameters".into()))?;
    let fixed = load_landmarks(&a.lms_fixed)?;
    let moving = load_landmarks(&a.lms_moving)?;
    let rows = scatter_rows(&records, center, &fixed, &moving)?;
    std::fs::write(&a.out, scatter_csv(&rows)).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    println!("rows: {}", rows.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Register(a) => run_register(a),
        Command::Map(a) => run_map(a),
        Command::Bias(a) => run_bias(a),
        Command::Synth(a) => run_synth(a),
        Command::Mtre(a) => run_mtre(a),
        Command::TraceExport(a) => run_trace_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
