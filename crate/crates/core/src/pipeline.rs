//! End-to-end orchestration: WCRR reconstruction, grid search, experiments
//! and slice export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{recon_dcp, recon_l1_wavelet, recon_tv, IterativeParams, ReconProblem};
use crate::error::{Error, Result};
use crate::forward::{generate_trajectory, simulate_acquisition, synth_coils, NoiseModel, TrajectoryKind};
use crate::io::{save_checkpoint, write_cvol, write_pgm, GrayImage};
use crate::metrics::{foreground_mask, masked_psnr, masked_ssim, EvalMask};
use crate::phantom::{generate_phantom, EllipsoidPhantom};
use crate::solvers::{nmapg_minimize, write_trace_csv, NmapgResult, Objective, SolverConfig};
use crate::training::{train, TrainingConfig};
use crate::volume::{ComplexVolume, Dims};
use crate::wcrr::{ModelConfig, WcrrModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub lambda: f64,
    /// Noise-level input of the regularizer, clamped to the spline range.
    pub sigma: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { lambda: 1e4, sigma: 0.03, tol: 5e-3, max_iters: 300 }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda >= 0.0
            && self.lambda.is_finite()
            && self.sigma > 0.0
            && self.sigma.is_finite()
            && self.tol > 0.0
            && self.max_iters > 0;
        if !ok {
            return Err(Error::Config(format!("invalid reconstruction config {self:?}")));
        }
        Ok(())
    }
}

struct ReconObjective<'a> {
    problem: &'a ReconProblem,
    model: &'a WcrrModel,
    lambda: f64,
    sigma: f64,
}

impl ReconObjective<'_> {
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let v = ComplexVolume::from_real(self.problem.op.dims(), x)?;
        let (data, mut g) = self.problem.data_value_and_gradient(&v)?;
        if self.lambda == 0.0 {
            return Ok((data, g.to_real()));
        }
        let (r, gr) = self.model.value_and_grad(&v, self.sigma)?;
        g.axpy(num_complex::Complex64::new(self.lambda, 0.0), &gr);
        Ok((data + self.lambda * r, g.to_real()))
    }
}

impl Objective for ReconObjective<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x)?.0)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(x)?.1)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval(x)
    }
}

#[derive(Clone, Debug)]
pub struct WcrrRecon {
    pub x: ComplexVolume,
    pub solver: NmapgResult,
}

/// nmAPG on `1/2 |A x - y|^2 + lambda R_sigma(x)` started from the
/// density-compensated adjoint. The initial Lipschitz estimate is `|A|^2`.
pub fn recon_wcrr(problem: &ReconProblem, model: &WcrrModel, cfg: &ReconConfig) -> Result<WcrrRecon> {
    cfg.validate()?;
    let sigma = model.potentials().clamp_sigma(cfg.sigma);
    if sigma != cfg.sigma {
        log::warn!("sigma {} clamped to {sigma}", cfg.sigma);
    }
    let obj = ReconObjective { problem, model, lambda: cfg.lambda, sigma };
    let solver_cfg = SolverConfig {
        eps: cfg.tol,
        max_iters: cfg.max_iters,
        l1: problem.op_norm_sq()?,
        ..SolverConfig::default()
    };
    let x0 = recon_dcp(problem)?;
    let solver = nmapg_minimize(&obj, &x0.to_real(), &solver_cfg)?;
    if !solver.converged {
        log::warn!("WCRR reconstruction hit the iteration cap ({})", cfg.max_iters);
    }
    let x = ComplexVolume::from_real(problem.op.dims(), &solver.x)?;
    Ok(WcrrRecon { x, solver })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dcp,
    Tv,
    Wavelet,
    Wcrr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dcp => "dcp",
            Method::Tv => "tv",
            Method::Wavelet => "wavelet",
            Method::Wcrr => "wcrr",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dcp" => Ok(Method::Dcp),
            "tv" => Ok(Method::Tv),
            "wavelet" => Ok(Method::Wavelet),
            "wcrr" => Ok(Method::Wcrr),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// A validation volume with its simulated measurements.
pub struct ValidationCase {
    pub gt: ComplexVolume,
    pub mask: EvalMask,
    pub problem: ReconProblem,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub lambda: f64,
    pub sigma: f64,
    /// Mean masked PSNR; `None` when some reconstruction failed.
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub best: GridCell,
    pub table: Vec<GridCell>,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,sigma,psnr,status\n");
        for c in &self.table {
            let score = c.score.map_or(String::new(), |v| format!("{v:.6}"));
            let status = c.error.as_deref().map_or("ok".to_string(), |e| format!("failed: {}", e.replace(',', ";")));
            writeln!(s, "{:e},{:e},{score},{status}", c.lambda, c.sigma).expect("string write");
        }
        s
    }
}

/// Evaluates `recon(case, lambda, sigma)` on every grid point and returns the
/// best mean masked PSNR. Grids are scanned in increasing order so ties go to
/// the smaller `lambda`, then the smaller `sigma`.
pub fn grid_search(
    cases: &[ValidationCase],
    recon: &dyn Fn(&ValidationCase, f64, f64) -> Result<ComplexVolume>,
    lambdas: &[f64],
    sigmas: &[f64],
) -> Result<GridResult> {
    if cases.is_empty() || lambdas.is_empty() || sigmas.is_empty() {
        return Err(Error::InvalidArgument("grid search needs validation cases and nonempty grids".into()));
    }
    let sorted = |g: &[f64]| {
        let mut v = g.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (lambdas, sigmas) = (sorted(lambdas), sorted(sigmas));
    let mut table = Vec::with_capacity(lambdas.len() * sigmas.len());
    let mut best: Option<usize> = None;
    for &lambda in &lambdas {
        for &sigma in &sigmas {
            let mut total = 0.0;
            let mut error = None;
            for (i, case) in cases.iter().enumerate() {
                let psnr = recon(case, lambda, sigma).and_then(|x| masked_psnr(&case.gt, &x, &case.mask));
                match psnr {
                    Ok(p) if p.is_finite() => total += p,
                    Ok(p) => error = Some(format!("case {i}: PSNR {p}")),
                    Err(e) => error = Some(format!("case {i}: {e}")),
                }
                if error.is_some() {
                    break;
                }
            }
            if let Some(e) = &error {
                log::warn!("grid cell lambda={lambda:e} sigma={sigma:e} failed: {e}");
            }
            let score = error.is_none().then(|| total / cases.len() as f64);
            log::info!("grid cell lambda={lambda:e} sigma={sigma:e}: {score:?}");
            if let Some(s) = score {
                if best.is_none_or(|b| table_score(&table, b) < s) {
                    best = Some(table.len());
                }
            }
            table.push(GridCell { lambda, sigma, score, error });
        }
    }
    let best = best.ok_or_else(|| Error::Solver("every grid cell failed".into()))?;
    Ok(GridResult { best: table[best].clone(), table })
}

fn table_score(table: &[GridCell], i: usize) -> f64 {
    table[i].score.expect("scored cell")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomSpec {
    SheppLogan,
    Random { seed: u64 },
}

impl PhantomSpec {
    pub fn build(&self) -> EllipsoidPhantom {
        match self {
            PhantomSpec::SheppLogan => EllipsoidPhantom::shepp_logan(),
            PhantomSpec::Random { seed } => EllipsoidPhantom::random(*seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskTraining {
    /// Number of random phantoms in the training set.
    pub volumes: usize,
    pub volume_dims: Dims,
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

impl Default for DeskTraining {
    fn default() -> Self {
        Self {
            volumes: 8,
            volume_dims: [16, 16, 16],
            model: ModelConfig::default(),
            // several patches per volume so an epoch takes a few optimizer steps
            training: TrainingConfig {
                epochs: 50,
                patches_per_volume: 6,
                learning_rate: 3e-2,
                ..TrainingConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WcrrSettings {
    pub recon: ReconConfig,
    /// Trained model to load; when absent a desk-scale model is trained.
    pub checkpoint: Option<PathBuf>,
    pub train: DeskTraining,
}

impl Default for WcrrSettings {
    fn default() -> Self {
        Self { recon: ReconConfig::default(), checkpoint: None, train: DeskTraining::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentManifest {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dims: Dims,
    pub phantom: PhantomSpec,
    pub trajectory: TrajectoryKind,
    /// Total number of k-space samples.
    pub samples: usize,
    pub coils: usize,
    pub noise_sigma: f64,
    pub methods: Vec<Method>,
    pub tv: IterativeParams,
    pub wavelet: IterativeParams,
    pub wcrr: WcrrSettings,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        let dims = [32, 32, 32];
        Self {
            seed: 0,
            output_dir: PathBuf::from("experiment"),
            dims,
            phantom: PhantomSpec::SheppLogan,
            trajectory: TrajectoryKind::Radial3d { samples_per_spoke: 32 },
            samples: dims.iter().product::<usize>() / 8,
            coils: 4,
            noise_sigma: 2e-3,
            methods: vec![Method::Dcp, Method::Tv, Method::Wavelet, Method::Wcrr],
            tv: IterativeParams::tv_default(),
            wavelet: IterativeParams::l1_wavelet_default(),
            wcrr: WcrrSettings::default(),
        }
    }
}

impl ExperimentManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dims.iter().any(|&d| d == 0 || d > 512) {
            return bad(format!("bad dims {:?}", self.dims));
        }
        if self.samples == 0 || self.coils == 0 || self.coils > 64 {
            return bad("samples and coils must be positive (at most 64 coils)".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("bad noise sigma {}", self.noise_sigma));
        }
        if self.methods.is_empty() {
            return bad("no methods listed".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("duplicate method".into());
        }
        if let Some(p) = &self.wcrr.checkpoint {
            if self.methods.contains(&Method::Wcrr) && !p.join(crate::io::CHECKPOINT_MANIFEST).is_file() {
                return bad(format!("checkpoint {} not found", p.display()));
            }
        }
        match self.trajectory {
            TrajectoryKind::Radial3d { samples_per_spoke } if samples_per_spoke == 0 => {
                return bad("samples_per_spoke must be positive".into())
            }
            TrajectoryKind::RandomVds { exponent, .. } if !(0.0..3.0).contains(&exponent) => {
                return bad(format!("density exponent {exponent} outside [0, 3)"))
            }
            _ => {}
        }
        if self.samples > 1 << 24 {
            return bad(format!("{} samples is too many", self.samples));
        }
        self.tv.validate()?;
        self.wavelet.validate()?;
        self.wcrr.recon.validate()?;
        let train = &self.wcrr.train;
        if train.volumes == 0 || train.volumes > 4096 || train.volume_dims.iter().any(|&d| d == 0 || d > 256) {
            return bad("desk training needs 1..=4096 volumes with dims in 1..=256".into());
        }
        train.model.validate()?;
        train.training.validate()
    }
}

/// `count` random phantoms, seeded from `seed`.
pub fn synthetic_dataset(count: usize, dims: Dims, seed: u64) -> Vec<ComplexVolume> {
    (0..count)
        .map(|i| generate_phantom(&EllipsoidPhantom::random(seed.wrapping_mul(1000).wrapping_add(i as u64 + 1)), dims))
        .collect()
}

/// Trains the desk-scale model described by `spec`.
pub fn train_desk_model(spec: &DeskTraining, seed: u64) -> Result<WcrrModel> {
    let data = synthetic_dataset(spec.volumes, spec.volume_dims, seed);
    let model = WcrrModel::init(&spec.model)?;
    let out = train(&data, model, &spec.training, |_, _| Ok(()))?;
    Ok(out.model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub iterations: usize,
    pub wall_ms: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<MethodReport>,
}

impl ExperimentReport {
    pub fn row(&self, m: Method) -> Option<&MethodReport> {
        self.rows.iter().find(|r| r.method == m)
    }

    /// Quality metrics only, so that repeated runs compare byte for byte.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("method,masked_psnr,masked_ssim,iterations,status\n");
        for r in &self.rows {
            let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
            let status = r.error.as_deref().map_or("ok".to_string(), |e| format!("failed: {}", e.replace(',', ";")));
            writeln!(s, "{},{},{},{},{status}", r.method.name(), f(r.psnr), f(r.ssim), r.iterations)
                .expect("string write");
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("method,wall_ms\n");
        for r in &self.rows {
            writeln!(s, "{},{:.3}", r.method.name(), r.wall_ms).expect("string write");
        }
        s
    }
}

pub const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

/// Magnitude slice at `index` along `axis`, scaled so the largest magnitude maps to 255.
/// Image columns follow the lower remaining axis, rows the higher one.
pub fn export_slice(v: &ComplexVolume, axis: usize, index: usize) -> Result<GrayImage> {
    let dims = v.dims();
    if axis > 2 {
        return Err(Error::OutOfBounds(format!("axis {axis}")));
    }
    if index >= dims[axis] {
        return Err(Error::OutOfBounds(format!("slice {index} of axis with {} voxels", dims[axis])));
    }
    let (u, w) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut mags = Vec::with_capacity(dims[u] * dims[w]);
    let mut idx = [0usize; 3];
    idx[axis] = index;
    for row in 0..dims[w] {
        for col in 0..dims[u] {
            idx[u] = col;
            idx[w] = row;
            mags.push(v.get(idx[0], idx[1], idx[2]).norm());
        }
    }
    let max = mags.iter().copied().fold(0.0, f64::max);
    let pixels = mags
        .iter()
        .map(|&m| if max > 0.0 { (255.0 * m / max).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect();
    Ok(GrayImage { width: dims[u], height: dims[w], pixels })
}

pub fn export_slice_to(v: &ComplexVolume, axis: usize, index: usize, path: &Path) -> Result<()> {
    write_pgm(path, &export_slice(v, axis, index)?)
}

fn export_center_slices(v: &ComplexVolume, dir: &Path, stem: &str) -> Result<()> {
    for axis in 0..3 {
        let path = dir.join(format!("{stem}_{}.pgm", AXIS_NAMES[axis]));
        export_slice_to(v, axis, v.dims()[axis] / 2, &path)?;
    }
    Ok(())
}

/// Ground truth, coils, trajectory and simulated data for a manifest.
pub struct Scenario {
    pub gt: ComplexVolume,
    pub mask: EvalMask,
    pub problem: ReconProblem,
}

pub fn build_scenario(m: &ExperimentManifest) -> Result<Scenario> {
    let gt = generate_phantom(&m.phantom.build(), m.dims);
    let mask = foreground_mask(&gt)?;
    let coils = synth_coils(m.dims, m.coils)?;
    let traj = generate_trajectory(&m.trajectory, m.samples)?;
    let y = simulate_acquisition(&gt, &coils, &traj, NoiseModel { sigma: m.noise_sigma, seed: m.seed })?;
    let problem = ReconProblem::with_estimated_weights(coils, traj, y)?;
    Ok(Scenario { gt, mask, problem })
}

fn run_method(
    m: &ExperimentManifest,
    method: Method,
    problem: &ReconProblem,
    model: Option<&WcrrModel>,
    out_dir: &Path,
) -> Result<(ComplexVolume, usize)> {
    match method {
        Method::Dcp => Ok((recon_dcp(problem)?, 0)),
        Method::Tv => recon_tv(problem, &m.tv).map(|r| (r.x, r.iterations)),
        Method::Wavelet => recon_l1_wavelet(problem, &m.wavelet).map(|r| (r.x, r.iterations)),
        Method::Wcrr => {
            let model = model.ok_or_else(|| Error::Config("no WCRR model available".into()))?;
            let r = recon_wcrr(problem, model, &m.wcrr.recon)?;
            let f = std::fs::File::create(out_dir.join("wcrr_trace.csv"))?;
            write_trace_csv(std::io::BufWriter::new(f), &r.solver.trace)?;
            Ok((r.x, r.solver.iterations))
        }
    }
}

fn load_or_train(m: &ExperimentManifest, out_dir: &Path) -> Result<WcrrModel> {
    match &m.wcrr.checkpoint {
        Some(p) => crate::io::load_checkpoint(p),
        None => {
            log::info!("training desk-scale model ({} volumes)", m.wcrr.train.volumes);
            let model = train_desk_model(&m.wcrr.train, m.seed)?;
            save_checkpoint(&out_dir.join("model"), &model)?;
            Ok(model)
        }
    }
}

/// Runs every method of `m`, writing volumes, center slices, `metrics.csv`
/// and `timing.csv` into the output directory. Method failures are recorded
/// in the report and do not stop the run.
pub fn run_experiment(m: &ExperimentManifest) -> Result<ExperimentReport> {
    m.validate()?;
    let dir = &m.output_dir;
    std::fs::create_dir_all(dir)?;
    let scenario = build_scenario(m)?;
    write_cvol(&dir.join("gt.cvol"), &scenario.gt)?;
    export_center_slices(&scenario.gt, dir, "gt")?;
    let model = if m.methods.contains(&Method::Wcrr) {
        match load_or_train(m, dir) {
            Ok(model) => Some(model),
            Err(e) => {
                log::error!("WCRR model unavailable: {e}");
                None
            }
        }
    } else {
        None
    };
    let mut rows = Vec::with_capacity(m.methods.len());
    for &method in &m.methods {
        let start = Instant::now();
        let outcome = run_method(m, method, &scenario.problem, model.as_ref(), dir).and_then(|(x, iters)| {
            let psnr = masked_psnr(&scenario.gt, &x, &scenario.mask)?;
            let ssim = masked_ssim(&scenario.gt, &x, &scenario.mask)?;
            write_cvol(&dir.join(format!("{}.cvol", method.name())), &x)?;
            export_center_slices(&x, dir, method.name())?;
            Ok((psnr, ssim, iters))
        });
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let row = match outcome {
            Ok((psnr, ssim, iterations)) => {
                log::info!("{}: PSNR {psnr:.3} dB, SSIM {ssim:.4}, {iterations} iterations", method.name());
                MethodReport { method, psnr: Some(psnr), ssim: Some(ssim), iterations, wall_ms, error: None }
            }
            Err(e) => {
                log::error!("{} failed: {e}", method.name());
                MethodReport { method, psnr: None, ssim: None, iterations: 0, wall_ms, error: Some(e.to_string()) }
            }
        };
        rows.push(row);
    }
    let report = ExperimentReport { rows };
    std::fs::write(dir.join("metrics.csv"), report.metrics_csv())?;
    std::fs::write(dir.join("timing.csv"), report.timing_csv())?;
    Ok(report)
}

/// `count` held-out random phantoms simulated with the acquisition settings of `m`.
pub fn validation_cases(m: &ExperimentManifest, count: usize) -> Result<Vec<ValidationCase>> {
    let coils = synth_coils(m.dims, m.coils)?;
    let traj = generate_trajectory(&m.trajectory, m.samples)?;
    let weights = crate::forward::estimate_density_weights(&traj, m.dims, crate::forward::DEFAULT_PIPE_ITERATIONS)?;
    (0..count)
        .map(|i| {
            let seed = m.seed.wrapping_add(0x5eed_0000 + i as u64);
            let gt = generate_phantom(&EllipsoidPhantom::random(seed), m.dims);
            let mask = foreground_mask(&gt)?;
            let y = simulate_acquisition(&gt, &coils, &traj, NoiseModel { sigma: m.noise_sigma, seed })?;
            let op = crate::forward::EncodingOperator::new(coils.clone(), traj.clone());
            let problem = ReconProblem::new(op, y, weights.clone())?;
            Ok(ValidationCase { gt, mask, problem })
        })
        .collect()
}
