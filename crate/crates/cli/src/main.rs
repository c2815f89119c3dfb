//! `wcrr` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wcrr_core::baselines::{recon_dcp, recon_l1_wavelet, recon_tv, IterativeParams, ReconProblem};
use wcrr_core::forward::{
    generate_trajectory, simulate_acquisition, synth_coils, NoiseModel, TrajectoryKind,
};
use wcrr_core::io;
use wcrr_core::metrics::{foreground_mask, masked_psnr, masked_ssim};
use wcrr_core::phantom::generate_phantom;
use wcrr_core::pipeline::{
    export_slice_to, grid_search, recon_wcrr, run_experiment, validation_cases, ExperimentManifest, Method,
    PhantomSpec, ReconConfig,
};
use wcrr_core::solvers::{write_trace_csv, SolverConfig};
use wcrr_core::training::{denoise, train, write_loss_csv, TrainRunConfig};
use wcrr_core::wcrr::WcrrModel;

const THREADS_ENV: &str = "WCRR_THREADS";

#[derive(Parser)]
#[command(name = "wcrr", version, about = "Weakly convex ridge regularizer MRI reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic ellipsoid phantom as CVOL.
    Phantom {
        #[arg(long, value_enum, default_value = "shepp-logan")]
        kind: PhantomKind,
        /// Seed for random phantoms.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_dims, default_value = "32,32,32")]
        dims: [usize; 3],
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a k-space trajectory as KTRJ.
    Trajectory {
        #[arg(long, value_enum, default_value = "radial")]
        kind: TrajKind,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 32)]
        samples_per_spoke: usize,
        /// Density exponent for variable-density sampling.
        #[arg(long, default_value_t = 1.0)]
        exponent: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic coil sensitivities as CMAP.
    Coils {
        #[arg(long, value_parser = parse_dims, default_value = "32,32,32")]
        dims: [usize; 3],
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate noisy multi-coil k-space data as KDAT.
    Simulate {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        coils: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long, default_value_t = 2e-3)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a regularizer on a directory of CVOL volumes.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// TOML file with `[model]` and `[training]` tables.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output directory (also written after every epoch).
        #[arg(long)]
        out: PathBuf,
        /// Initialize from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Loss history CSV (defaults to `<out>/loss.csv`).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Apply the learned proximal denoiser to a CVOL volume.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a volume from KDAT data.
    Reconstruct {
        #[arg(value_enum)]
        method: MethodArg,
        #[command(flatten)]
        recon: ReconArgs,
    },
    /// Grid search over lambda and sigma on held-out phantoms.
    Gridsearch {
        #[arg(value_enum)]
        method: MethodArg,
        /// Experiment manifest supplying acquisition settings.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Checkpoint for the WCRR method.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.03")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        validation: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment from a manifest.
    Experiment {
        /// TOML manifest; the built-in default is used when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Masked PSNR and SSIM of a reconstruction against ground truth.
    Metrics {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        recon: PathBuf,
    },
    /// Export a magnitude slice as a binary PGM.
    ExportSlice {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..3))]
        axis: u8,
        /// Defaults to the center slice.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    coils: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    /// Regularizer noise level (WCRR only).
    #[arg(long, default_value_t = 0.03)]
    sigma: f64,
    /// Checkpoint directory (WCRR only).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Solver trace CSV (WCRR only).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomKind {
    SheppLogan,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajKind {
    Radial,
    Vds,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dcp,
    Tv,
    Wavelet,
    Wcrr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dcp => Method::Dcp,
            MethodArg::Tv => Method::Tv,
            MethodArg::Wavelet => Method::Wavelet,
            MethodArg::Wcrr => Method::Wcrr,
        }
    }
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [a, b, c] if *a > 0 && *b > 0 && *c > 0 => Ok([*a, *b, *c]),
        _ => Err("expected three positive comma-separated sizes".into()),
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?;
        if n == 0 {
            bail!("{THREADS_ENV} must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load_problem(args: &ReconArgs) -> Result<ReconProblem> {
    let coils = io::read_cmap(&args.coils)?;
    let traj = io::read_ktrj(&args.traj)?;
    let y = io::read_kdat(&args.data)?;
    Ok(ReconProblem::with_estimated_weights(coils, traj, y)?)
}

fn load_model(path: Option<&Path>) -> Result<WcrrModel> {
    let path = path.context("the wcrr method needs --model <checkpoint dir>")?;
    Ok(io::load_checkpoint(path)?)
}

fn reconstruct(method: Method, args: &ReconArgs) -> Result<()> {
    let problem = load_problem(args)?;
    let x = match method {
        Method::Dcp => recon_dcp(&problem)?,
        Method::Tv | Method::Wavelet => {
            let mut p =
                if method == Method::Tv { IterativeParams::tv_default() } else { IterativeParams::l1_wavelet_default() };
            p.lambda = args.lambda.unwrap_or(p.lambda);
            p.tol = args.tol.unwrap_or(p.tol);
            p.max_iters = args.max_iters.unwrap_or(p.max_iters);
            let r = if method == Method::Tv { recon_tv(&problem, &p)? } else { recon_l1_wavelet(&problem, &p)? };
            log::info!("{} iterations, converged: {}", r.iterations, r.converged);
            r.x
        }
        Method::Wcrr => {
            let model = load_model(args.model.as_deref())?;
            let d = ReconConfig::default();
            let cfg = ReconConfig {
                lambda: args.lambda.unwrap_or(d.lambda),
                sigma: args.sigma,
                tol: args.tol.unwrap_or(d.tol),
                max_iters: args.max_iters.unwrap_or(d.max_iters),
            };
            let r = recon_wcrr(&problem, &model, &cfg)?;
            if let Some(t) = &args.trace {
                write_trace_csv(std::io::BufWriter::new(fs::File::create(t)?), &r.solver.trace)?;
            }
            log::info!("{} iterations, converged: {}", r.solver.iterations, r.solver.converged);
            r.x
        }
    };
    if args.trace.is_some() && method != Method::Wcrr {
        log::warn!("--trace is only recorded for the wcrr method");
    }
    io::write_cvol(&args.out, &x)?;
    Ok(())
}

fn read_dataset(dir: &Path) -> Result<Vec<wcrr_core::ComplexVolume>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading dataset directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "cvol"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .cvol files in {}", dir.display());
    }
    paths.iter().map(|p| io::read_cvol(p).with_context(|| p.display().to_string())).collect()
}

fn run_train(
    dataset: &Path,
    config: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    loss_csv: Option<&Path>,
) -> Result<()> {
    let cfg = match config {
        Some(p) => TrainRunConfig::from_toml(&fs::read_to_string(p)?)?,
        None => TrainRunConfig::default(),
    };
    let data = read_dataset(dataset)?;
    let model = match resume {
        Some(p) => io::load_checkpoint(p)?,
        None => WcrrModel::init(&cfg.model)?,
    };
    let outcome = train(&data, model, &cfg.training, |epoch, m| {
        log::info!("epoch {epoch} done; checkpointing");
        io::save_checkpoint(out, m)
    })?;
    io::save_checkpoint(out, &outcome.model)?;
    let loss_path = loss_csv.map(Path::to_path_buf).unwrap_or_else(|| out.join("loss.csv"));
    write_loss_csv(std::io::BufWriter::new(fs::File::create(loss_path)?), &outcome.history)?;
    Ok(())
}

fn run_gridsearch(
    method: Method,
    manifest: Option<&Path>,
    model: Option<&Path>,
    lambdas: &[f64],
    sigmas: &[f64],
    validation: usize,
    out: Option<&Path>,
) -> Result<()> {
    let m = match manifest {
        Some(p) => ExperimentManifest::from_toml(&fs::read_to_string(p)?)?,
        None => ExperimentManifest::default(),
    };
    if validation == 0 {
        bail!("--validation must be positive");
    }
    let cases = validation_cases(&m, validation)?;
    let model = if method == Method::Wcrr { Some(load_model(model)?) } else { None };
    let recon = |case: &wcrr_core::pipeline::ValidationCase, lambda: f64, sigma: f64| {
        let p = &case.problem;
        match method {
            Method::Dcp => recon_dcp(p),
            Method::Tv => recon_tv(p, &IterativeParams { lambda, ..m.tv }).map(|r| r.x),
            Method::Wavelet => recon_l1_wavelet(p, &IterativeParams { lambda, ..m.wavelet }).map(|r| r.x),
            Method::Wcrr => {
                let cfg = ReconConfig { lambda, sigma, ..m.wcrr.recon.clone() };
                recon_wcrr(p, model.as_ref().expect("loaded"), &cfg).map(|r| r.x)
            }
        }
    };
    let result = grid_search(&cases, &recon, lambdas, sigmas)?;
    let csv = result.to_csv();
    match out {
        Some(p) => fs::write(p, &csv)?,
        None => print!("{csv}"),
    }
    println!(
        "best lambda={:e} sigma={:e} psnr={:.4}",
        result.best.lambda,
        result.best.sigma,
        result.best.score.expect("best cell is scored")
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Phantom { kind, seed, dims, out } => {
            let spec = match kind {
                PhantomKind::SheppLogan => PhantomSpec::SheppLogan,
                PhantomKind::Random => PhantomSpec::Random { seed },
            };
            io::write_cvol(&out, &generate_phantom(&spec.build(), dims))?;
        }
        Command::Trajectory { kind, samples, samples_per_spoke, exponent, seed, out } => {
            let kind = match kind {
                TrajKind::Radial => TrajectoryKind::Radial3d { samples_per_spoke },
                TrajKind::Vds => TrajectoryKind::RandomVds { exponent, seed },
            };
            io::write_ktrj(&out, &generate_trajectory(&kind, samples)?)?;
        }
        Command::Coils { dims, count, out } => io::write_cmap(&out, &synth_coils(dims, count)?)?,
        Command::Simulate { volume, coils, traj, noise_sigma, seed, out } => {
            let gt = io::read_cvol(&volume)?;
            let coils = io::read_cmap(&coils)?;
            let traj = io::read_ktrj(&traj)?;
            let y = simulate_acquisition(&gt, &coils, &traj, NoiseModel { sigma: noise_sigma, seed })?;
            io::write_kdat(&out, &y)?;
        }
        Command::Train { dataset, config, out, resume, loss_csv } => {
            run_train(&dataset, config.as_deref(), &out, resume.as_deref(), loss_csv.as_deref())?
        }
        Command::Denoise { input, model, sigma, tol, out } => {
            let y = io::read_cvol(&input)?;
            let model = io::load_checkpoint(&model)?;
            let cfg = SolverConfig { eps: tol, ..SolverConfig::default() };
            let r = denoise(&model, &y, model.potentials().clamp_sigma(sigma), &cfg)?;
            log::info!("{} iterations, fixed-point residual {:e}", r.solver.iterations, r.residual);
            io::write_cvol(&out, &r.x)?;
        }
        Command::Reconstruct { method, recon } => reconstruct(method.into(), &recon)?,
        Command::Gridsearch { method, manifest, model, lambdas, sigmas, validation, out } => run_gridsearch(
            method.into(),
            manifest.as_deref(),
            model.as_deref(),
            &lambdas,
            &sigmas,
            validation,
            out.as_deref(),
        )?,
        Command::Experiment { manifest, out_dir, seed } => {
            let mut m = match manifest {
                Some(p) => ExperimentManifest::from_toml(&fs::read_to_string(&p)?)?,
                None => ExperimentManifest::default(),
            };
            if let Some(d) = out_dir {
                m.output_dir = d;
            }
            if let Some(s) = seed {
                m.seed = s;
            }
            let report = run_experiment(&m)?;
            print!("{}", report.metrics_csv());
        }
        Command::Metrics { gt, recon } => {
            let gt = io::read_cvol(&gt)?;
            let rec = io::read_cvol(&recon)?;
            let mask = foreground_mask(&gt)?;
            println!("masked_psnr,masked_ssim");
            println!("{:.6},{:.6}", masked_psnr(&gt, &rec, &mask)?, masked_ssim(&gt, &rec, &mask)?);
        }
        Command::ExportSlice { input, axis, index, out } => {
            let v = io::read_cvol(&input)?;
            let axis = axis as usize;
            export_slice_to(&v, axis, index.unwrap_or(v.dims()[axis] / 2), &out)?;
        }
    }
    Ok(())
}

/// One JSON object on stderr describing the failure.
fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<wcrr_core::Error>())
        .map_or("runtime", |e| e.kind());
    let message = format!("{err:#}");
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", serde_json::json!({ "error": { "kind": "usage", "message": message.trim_end() } }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
