//! One line per acceptance criterion; exits nonzero when any criterion fails.

mod support;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles::{dense_solve, random_vec, random_volume, symmetric_eigenvalues, taut_string_periodic};
use wcrr_core::baselines::{dwt3, idwt3, WaveletPlan};
use wcrr_core::forward::{
    estimate_density_weights, synth_coils, EncodingOperator, KSpaceData, KSpaceTrajectory,
};
use wcrr_core::io::save_checkpoint;
use wcrr_core::metrics::psnr;
use wcrr_core::pipeline::{run_experiment, synthetic_dataset, DeskTraining, ExperimentManifest, Method};
use wcrr_core::rotation::Rotation;
use wcrr_core::solvers::{condat_tv_reconstruct, minres_solve, nmapg_minimize, FnObjective, SolverConfig};
use wcrr_core::training::{corrupt, denoise, param_gradient, train, ImplicitConfig};
use wcrr_core::wcrr::{psi_d2, spectral_norm_fft, ModelConfig, RotationPreset, WcrrModel};
use wcrr_core::{ComplexVolume, Result};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn complex_dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

fn random_trajectory(m: usize, seed: u64) -> KSpaceTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    KSpaceTrajectory::new((0..m).map(|_| [0; 3].map(|_| rng.random_range(-0.5..0.5))).collect()).unwrap()
}

fn adjoint_identity() -> Outcome {
    let start = Instant::now();
    let dims = [8, 8, 8];
    let op = EncodingOperator::new(synth_coils(dims, 4).unwrap(), random_trajectory(200, 1));
    let mut worst = 0.0f64;
    for s in 0..20 {
        let x = random_volume(dims, 100 + s, 1.0);
        let yv = random_vec(2 * 4 * 200, 200 + s);
        let y = KSpaceData::new(4, 200, yv.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect()).unwrap();
        let ax = op.forward(&x).unwrap();
        let ahy = op.adjoint(&y).unwrap();
        let lhs = complex_dot(ax.data(), y.data());
        let rhs = complex_dot(x.data(), ahy.data());
        worst = worst.max((lhs - rhs).norm() / (x.norm() * y.norm_sqr().sqrt()));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-10 && secs < 10.0, format!("max normalized mismatch {worst:.2e}, {secs:.2} s"))
}

fn ndft_correctness() -> Outcome {
    let dims = [8, 8, 8];
    let x = random_volume(dims, 3, 1.0);
    let traj = KSpaceTrajectory::cartesian(dims);
    let got = wcrr_core::forward::ndft_forward(&x, &traj);
    let mut err = 0.0;
    let mut reference = 0.0;
    for (m, k) in traj.points().iter().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for kz in 0..8 {
            for ky in 0..8 {
                for kx in 0..8 {
                    let r = [kx as f64 - 4.0, ky as f64 - 4.0, kz as f64 - 4.0];
                    let phase = -2.0 * PI * (k[0] * r[0] + k[1] * r[1] + k[2] * r[2]);
                    acc += x.get(kx, ky, kz) * Complex64::from_polar(1.0, phase);
                }
            }
        }
        err += (got[m] - acc).norm_sqr();
        reference += acc.norm_sqr();
    }
    let rel = (err / reference).sqrt();
    outcome(rel <= 1e-9, format!("relative error {rel:.2e}"))
}

/// Tiny model with per-channel spline offsets so features straddle both kinks.
fn tiny_model(plan: &[usize], rotations: RotationPreset, seed: u64) -> WcrrModel {
    let mut m = WcrrModel::init(&ModelConfig {
        channel_plan: plan.to_vec(),
        rotations,
        norm_grid: [8, 8, 8],
        seed,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut p = m.potentials().clone();
    for (i, c) in p.c.iter_mut().enumerate() {
        *c = 0.25 * ((i * 5 + seed as usize) % 7) as f64 - 0.75;
    }
    m.set_potentials(p).unwrap();
    m
}

fn weak_convexity() -> Outcome {
    let model = tiny_model(&[2, 4, 4], RotationPreset::AxisQuarterTurns, 7);
    let sigma = 0.04;
    let f = |x: &ComplexVolume| model.value(x, sigma).unwrap() + 0.5 * x.norm_sqr();
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for s in 0..100 {
        let a = random_volume([8, 8, 8], 1000 + s, 0.1);
        let b = random_volume([8, 8, 8], 2000 + s, 0.1);
        let t: f64 = rng.random_range(0.0..1.0);
        let mut mid = a.scaled(Complex64::new(t, 0.0));
        mid.axpy(Complex64::new(1.0 - t, 0.0), &b);
        let gap = f(&mid) - (t * f(&a) + (1.0 - t) * f(&b));
        worst = worst.max(gap);
        if gap > 1e-8 {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violations in 100 segments, largest excess {worst:.2e}"))
}

/// Whether any feature crosses a potential kink between `x - h v` and `x + h v`.
fn crosses_kink(model: &WcrrModel, x: &ComplexVolume, v: &ComplexVolume, h: f64, sigma: f64) -> bool {
    let alphas = model.potentials().alphas(sigma);
    let beta = model.potentials().beta();
    let shift = |s: f64| {
        let mut y = x.clone();
        y.axpy(Complex64::new(s, 0.0), v);
        y
    };
    let (lo, hi) = (shift(-h), shift(h));
    model.rotations().elements().iter().any(|&r| {
        let (fa, fb) = (model.apply_filters(&lo, r), model.apply_filters(&hi, r));
        fa.iter().zip(&fb).zip(&alphas).any(|((ca, cb), &al)| {
            ca.iter().zip(cb).any(|(&p, &q)| psi_d2(p, al, beta) != psi_d2(q, al, beta))
        })
    })
}

fn gradient_exactness() -> Outcome {
    let model = tiny_model(&[2, 4, 4], RotationPreset::AxisQuarterTurns, 9);
    let sigma = 0.05;
    let dims = [8, 8, 8];
    let (mut worst_g, mut worst_h, mut skipped) = (0.0f64, 0.0f64, 0);
    for s in 0..20 {
        let x = random_volume(dims, 300 + s, 0.1);
        let d = random_volume(dims, 400 + s, 1.0);
        let g = model.grad(&x, sigma).unwrap();
        let h = 1e-6;
        let shifted = |e: f64| {
            let mut y = x.clone();
            y.axpy(Complex64::new(e, 0.0), &d);
            y
        };
        let fd = (model.value(&shifted(h), sigma).unwrap() - model.value(&shifted(-h), sigma).unwrap()) / (2.0 * h);
        let an = g.dot(&d);
        worst_g = worst_g.max((fd - an).abs() / an.abs().max(1e-300));
        let hh = 1e-7;
        if crosses_kink(&model, &x, &d, hh, sigma) {
            skipped += 1;
            continue;
        }
        let mut diff = model.grad(&shifted(hh), sigma).unwrap();
        diff.axpy(Complex64::new(-1.0, 0.0), &model.grad(&shifted(-hh), sigma).unwrap());
        let fd_h = diff.scaled(Complex64::new(0.5 / hh, 0.0));
        let hv = model.hvp(&x, sigma, &d).unwrap();
        worst_h = worst_h.max(fd_h.sub(&hv).norm() / hv.norm());
    }
    let pass = worst_g <= 1e-5 && worst_h <= 1e-4 && skipped < 20;
    outcome(
        pass,
        format!("gradient rel err {worst_g:.2e}, HVP rel err {worst_h:.2e} ({skipped} of 20 probes straddled a kink)"),
    )
}

fn spectral_norm() -> Outcome {
    let model = tiny_model(&[2, 4, 4], RotationPreset::Identity, 10);
    let dims = [8, 8, 8];
    let n = 2 * 512;
    let features = |v: &[f64]| -> Vec<f64> {
        model.apply_filters(&ComplexVolume::from_real(dims, v).unwrap(), Rotation::IDENTITY).concat()
    };
    // materialize U (rows = features) column by column
    let rows = features(&vec![0.0; n]).len();
    let mut u = vec![0.0; rows * n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        for (r, v) in features(&e).into_iter().enumerate() {
            u[r * n + c] = v;
        }
    }
    let mut x = random_vec(n, 11);
    let mut est = 0.0;
    for _ in 0..2000 {
        let ux: Vec<f64> = (0..rows).map(|r| (0..n).map(|c| u[r * n + c] * x[c]).sum()).collect();
        let mut utux = vec![0.0; n];
        for r in 0..rows {
            for c in 0..n {
                utux[c] += u[r * n + c] * ux[r];
            }
        }
        let nrm = utux.iter().map(|v| v * v).sum::<f64>().sqrt();
        est = nrm.sqrt();
        x = utux.iter().map(|v| v / nrm).collect();
    }
    let power = est * model.bank().norm();
    let fft = spectral_norm_fft(model.bank(), dims);
    let rel = (power - fft).abs() / fft;
    outcome(rel <= 1e-3, format!("FFT {fft:.6} vs power {power:.6}, relative {rel:.2e}"))
}

fn implicit_gradients() -> Outcome {
    let start = Instant::now();
    let model = WcrrModel::init(&ModelConfig {
        channel_plan: vec![2, 2],
        kernel_size: 2,
        rotations: RotationPreset::Identity,
        norm_grid: [8, 8, 8],
        seed: 12,
        ..ModelConfig::default()
    })
    .unwrap();
    let tight = SolverConfig { eps: 1e-12, max_iters: 20_000, ..SolverConfig::default() };
    let clean = synthetic_dataset(1, [6, 6, 6], 13).remove(0);
    let sigma = 0.05;
    let y = corrupt(&clean, sigma, 14).unwrap();
    let loss = |m: &WcrrModel| denoise(m, &y, sigma, &tight).unwrap().x.sub(&clean).norm_sqr();
    let den = denoise(&model, &y, sigma, &tight).unwrap();
    let lg = den.x.sub(&clean).scaled(Complex64::new(2.0, 0.0));
    let cfg = ImplicitConfig { minres_tol: 1e-12, minres_max_iters: 1000 };
    let g = param_gradient(&model, sigma, &den.x, &lg, &cfg).unwrap().grad;
    let base = model.parameters();
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // parameters whose gradient is numerically meaningful
    let active: Vec<usize> = (0..g.len()).filter(|&i| g[i].abs() >= 1e-3 * scale).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let picks: Vec<usize> = sample(&mut rng, active.len(), 10.min(active.len())).into_iter().map(|i| active[i]).collect();
    let mut worst = 0.0f64;
    for &i in &picks {
        let eval = |d: f64| {
            let mut p = base.clone();
            p[i] += d;
            let mut m = model.clone();
            m.set_parameters(&p).unwrap();
            loss(&m)
        };
        let h = 1e-5 * base[i].abs().max(1.0);
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        picks.len() >= 10 && worst <= 1e-3 && secs < 120.0,
        format!("{} parameters, max relative error {worst:.2e}, {secs:.1} s", picks.len()),
    )
}

fn nmapg_checks() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    // quadratics 1/2 x^T D x - b^T x with known minimizers
    for s in 0..3u64 {
        let n = 12;
        let d: Vec<f64> = random_vec(n, 500 + s).iter().map(|v| 1.2 + v).collect();
        let b = random_vec(n, 600 + s);
        let exact: Vec<f64> = b.iter().zip(&d).map(|(p, q)| p / q).collect();
        let obj = FnObjective {
            value: |x: &[f64]| -> Result<f64> {
                Ok(x.iter().zip(&d).zip(&b).map(|((xi, di), bi)| 0.5 * di * xi * xi - bi * xi).sum())
            },
            gradient: |x: &[f64]| -> Result<Vec<f64>> {
                Ok(x.iter().zip(&d).zip(&b).map(|((xi, di), bi)| di * xi - bi).collect())
            },
        };
        let cfg = SolverConfig { eps: 1e-9, max_iters: 5000, ..SolverConfig::default() };
        let r = nmapg_minimize(&obj, &vec![0.0; n], &cfg).unwrap();
        let err = r.x.iter().zip(&exact).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let scale = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
        // distance to the minimizer is bounded by the last step over (1 - contraction)
        let ok = err <= 1e3 * cfg.eps * scale && r.objective <= r.initial_objective;
        pass &= ok;
        notes.push(format!("quadratic {s}: err/scale {:.1e}", err / scale));
    }
    let model = tiny_model(&[2, 4, 4], RotationPreset::AxisQuarterTurns, 16);
    let cfg = SolverConfig { eps: 1e-4, ..SolverConfig::default() };
    for s in 0..3u64 {
        let clean = synthetic_dataset(1, [8, 8, 8], 17 + s).remove(0);
        let y = corrupt(&clean, 0.05, 18 + s).unwrap();
        let r = denoise(&model, &y, 0.05, &cfg).unwrap();
        let ok = r.residual <= 1e-3 * y.norm() && r.solver.objective <= r.solver.initial_objective;
        pass &= ok;
        notes.push(format!("denoise {s}: residual/|y| {:.1e}", r.residual / y.norm()));
    }
    outcome(pass, notes.join(", "))
}

fn minres_dense() -> Outcome {
    let n = 30;
    let mut worst = 0.0f64;
    for s in 0..5u64 {
        let r = random_vec(n * n, 700 + s);
        let a: Vec<f64> = (0..n * n).map(|idx| r[idx] + r[(idx % n) * n + idx / n]).collect();
        let ev = symmetric_eigenvalues(a.clone(), n);
        assert!(ev.iter().any(|&e| e < 0.0) && ev.iter().any(|&e| e > 0.0));
        let b = random_vec(n, 800 + s);
        let apply = |v: &[f64]| -> Result<Vec<f64>> {
            Ok((0..n).map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum()).collect())
        };
        let sol = minres_solve(&apply, &b, 1e-14, 1000).unwrap();
        let exact = dense_solve(a.clone(), b.clone(), n);
        let err = sol.x.iter().zip(&exact).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let nrm = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(err / nrm);
    }
    outcome(worst <= 1e-8, format!("5 indefinite systems, max relative error {worst:.2e}"))
}

fn wavelet_and_tv() -> Outcome {
    let v = random_volume([16, 16, 16], 19, 1.0);
    let plan = WaveletPlan::with_default_levels(v.dims()).unwrap();
    let c = dwt3(&v, &plan).unwrap();
    let iso = (c.norm() - v.norm()).abs() / v.norm();
    let pr = idwt3(&c, &plan).unwrap().sub(&v).norm() / v.norm();
    let mut tv_worst = 0.0f64;
    for (seed, lambda) in [(20u64, 0.1), (21, 0.3), (22, 0.03)] {
        let y: Vec<f64> = random_vec(32, seed).iter().enumerate().map(|(i, e)| 0.3 * e + ((i / 8) % 2) as f64).collect();
        let yv = ComplexVolume::from_vec([32, 1, 1], y.iter().map(|&t| Complex64::new(t, 0.0)).collect()).unwrap();
        let grad = |x: &ComplexVolume| Ok(x.sub(&yv));
        let r = condat_tv_reconstruct(&grad, 1.0, lambda, &yv, 1e-11, 200_000).unwrap();
        let exact = taut_string_periodic(&y, lambda);
        let err = r.x.data().iter().zip(&exact).map(|(a, b)| (a.re - b).abs().max(a.im.abs())).fold(0.0, f64::max);
        tv_worst = tv_worst.max(err);
    }
    outcome(
        iso <= 1e-10 && pr <= 1e-10 && tv_worst <= 1e-3,
        format!("isometry {iso:.1e}, reconstruction {pr:.1e}, taut-string max error {tv_worst:.1e}"),
    )
}

fn density_compensation() -> Outcome {
    let dims = [8, 8, 8];
    let n = 512.0;
    let w = estimate_density_weights(&KSpaceTrajectory::cartesian(dims), dims, 10).unwrap();
    let uniform = w.weights().iter().map(|v| (v - 1.0 / n).abs() * n).fold(0.0, f64::max);
    let single = estimate_density_weights(&KSpaceTrajectory::new(vec![[0.1, -0.2, 0.3]]).unwrap(), dims, 10).unwrap();
    let fixed = (single.weights()[0] - 1.0 / n).abs() * n;
    outcome(
        uniform <= 1e-3 && fixed <= 1e-6,
        format!("Cartesian max |w N - 1| {uniform:.1e}, single sample |w N - 1| {fixed:.1e}"),
    )
}

fn held_out_gain(model: &WcrrModel, cfg: &SolverConfig) -> f64 {
    let held = synthetic_dataset(4, [16, 16, 16], 0xbeef);
    let mut gains = Vec::new();
    for (i, v) in held.iter().enumerate() {
        for corner in [[0, 0, 0], [4, 4, 4]] {
            let clean = v.extract_patch(corner, [12, 12, 12]).unwrap();
            let noisy = corrupt(&clean, 0.05, 900 + i as u64 + corner[0] as u64).unwrap();
            let den = denoise(model, &noisy, 0.05, cfg).unwrap().x;
            gains.push(psnr(&clean, &den) - psnr(&clean, &noisy));
        }
    }
    gains.iter().sum::<f64>() / gains.len() as f64
}

fn desk_training(checkpoint: &std::path::Path) -> Outcome {
    let start = Instant::now();
    let spec = DeskTraining::default();
    let seed = ExperimentManifest::default().seed;
    let data = synthetic_dataset(spec.volumes, spec.volume_dims, seed);
    let model = WcrrModel::init(&spec.model).unwrap();
    let out = match train(&data, model, &spec.training, |_, _| Ok(())) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    save_checkpoint(checkpoint, &out.model).unwrap();
    let first = out.epoch_loss[0];
    let last = *out.epoch_loss.last().unwrap();
    let gain = held_out_gain(&out.model, &spec.training.solver);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        spec.volumes == 8 && spec.training.epochs == 50 && spec.training.patch_size == 12
            && last < 0.5 * first
            && gain >= 3.0
            && secs <= 1800.0,
        format!(
            "epoch loss {first:.3} -> {last:.3} (ratio {:.3}), held-out gain at sigma 0.05 {gain:.2} dB, {secs:.0} s",
            last / first
        ),
    )
}

fn default_experiment(dir: &std::path::Path, checkpoint: &std::path::Path) -> ExperimentManifest {
    let mut m = ExperimentManifest { output_dir: dir.to_path_buf(), ..ExperimentManifest::default() };
    m.wcrr.checkpoint = Some(checkpoint.to_path_buf());
    m
}

fn ordering(dir: &std::path::Path, checkpoint: &std::path::Path) -> Outcome {
    let start = Instant::now();
    let report = match run_experiment(&default_experiment(dir, checkpoint)) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("experiment failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let get = |m: Method| report.row(m).and_then(|r| r.psnr).unwrap_or(f64::NEG_INFINITY);
    let (dcp, tv, wav, wcrr) = (get(Method::Dcp), get(Method::Tv), get(Method::Wavelet), get(Method::Wcrr));
    outcome(
        wcrr >= tv && tv >= dcp && wcrr >= dcp + 2.0 && secs <= 600.0,
        format!("masked PSNR wcrr {wcrr:.2}, tv {tv:.2}, wavelet {wav:.2}, dcp {dcp:.2} dB; {secs:.0} s"),
    )
}

fn determinism(first: &std::path::Path, second: &std::path::Path, checkpoint: &std::path::Path) -> Outcome {
    if let Err(e) = run_experiment(&default_experiment(second, checkpoint)) {
        return outcome(false, format!("second run failed: {e}"));
    }
    let read = |d: &std::path::Path| std::fs::read(d.join("metrics.csv")).unwrap_or_default();
    let (a, b) = (read(first), read(second));
    outcome(!a.is_empty() && a == b, format!("metrics.csv {} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str()));
    let work = tempfile::tempdir().expect("temporary directory");
    let checkpoint = work.path().join("desk_model");
    let (run_a, run_b) = (work.path().join("run_a"), work.path().join("run_b"));
    type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        ("adjoint identity", Box::new(adjoint_identity)),
        ("NDFT correctness", Box::new(ndft_correctness)),
        ("weak convexity", Box::new(weak_convexity)),
        ("gradient exactness", Box::new(gradient_exactness)),
        ("spectral norm", Box::new(spectral_norm)),
        ("implicit gradients", Box::new(implicit_gradients)),
        ("nmAPG", Box::new(nmapg_checks)),
        ("MINRES", Box::new(minres_dense)),
        ("wavelet and TV", Box::new(wavelet_and_tv)),
        ("density compensation", Box::new(density_compensation)),
        ("desk-scale training", Box::new(|| desk_training(&checkpoint))),
        ("reconstruction ordering", Box::new(|| ordering(&run_a, &checkpoint))),
        ("determinism", Box::new(|| determinism(&run_a, &run_b, &checkpoint))),
    ];
    let mut failed = 0;
    let mut total = Duration::ZERO;
    for (name, check) in &checks {
        if !wanted(name) {
            continue;
        }
        let start = Instant::now();
        let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check()))
            .unwrap_or_else(|_| outcome(false, "panicked".into()));
        total += start.elapsed();
        if !res.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if res.pass { "PASS" } else { "FAIL" }, res.detail);
    }
    println!("acceptance: {failed} failed, {:.0} s", total.as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
