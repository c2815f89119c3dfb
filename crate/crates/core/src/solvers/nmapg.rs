//! Non-monotone accelerated proximal gradient (nmAPG) with Barzilai-Borwein
//! step initialization and backtracking.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::objective::Objective;
use super::vecops::{add_scaled, dist, dot, norm, relative_change, sub};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Sufficient-decrease constant.
    pub delta: f64,
    /// Averaging factor of the reference value `c_k`.
    pub eta: f64,
    /// Backtracking factor.
    pub rho: f64,
    /// Line-search steps per search.
    pub max_line_search: usize,
    /// Relative-change tolerance.
    pub eps: f64,
    /// Initial Lipschitz estimate.
    pub l1: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { delta: 0.1, eta: 0.8, rho: 0.9, max_line_search: 20, eps: 1e-4, l1: 1.0, max_iters: 1000 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta > 0.0
            && self.eta > 0.0
            && self.eta < 1.0
            && self.rho > 0.0
            && self.rho < 1.0
            && self.eps > 0.0
            && self.l1 > 0.0
            && self.l1.is_finite()
            && self.max_line_search >= 1
            && self.max_iters >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid solver configuration {self:?}")))
        }
    }
}

/// Iteration state after the updates of one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub t: f64,
    pub q: f64,
    pub c: f64,
    pub lipschitz: f64,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub lipschitz: f64,
    pub rel_change: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct NmapgResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Line searches that hit the step cap.
    pub capped_searches: usize,
    pub trace: Vec<TraceRow>,
    pub state: SolverState,
}

pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TraceRow]) -> std::io::Result<()> {
    writeln!(out, "iter,objective,L_k,rel_change,wall_ms")?;
    for r in trace {
        writeln!(out, "{},{:e},{:e},{:e},{:.3}", r.iter, r.objective, r.lipschitz, r.rel_change, r.wall_ms)?;
    }
    Ok(())
}

fn finite(v: f64, what: &str, k: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} at iteration {k} is {v}")))
    }
}

/// Barzilai-Borwein estimate `<dg, dg> / <dg, dx>`; `None` when the curvature
/// along `dx` is not safely positive.
fn bb_estimate(dg: &[f64], dx: &[f64]) -> Option<f64> {
    let denom = dot(dg, dx);
    let (ng, nx) = (norm(dg), norm(dx));
    if denom <= 1e-12 * ng * nx {
        return None;
    }
    let l = ng * ng / denom;
    (l.is_finite() && l > 0.0).then_some(l)
}

struct LineSearch {
    point: Vec<f64>,
    value: f64,
    capped: bool,
}

/// Backtracks `point = base - grad / L` until `J(point) <= reference - delta |point - base|^2`.
fn line_search(
    obj: &dyn Objective,
    cfg: &SolverConfig,
    base: &[f64],
    grad: &[f64],
    reference: f64,
    l: &mut f64,
    k: usize,
) -> Result<LineSearch> {
    let mut last = None;
    for _ in 0..cfg.max_line_search {
        let point = add_scaled(base, -1.0 / *l, grad);
        let value = finite(obj.value(&point)?, "objective", k)?;
        let step = dist(&point, base);
        let accepted = value <= reference - cfg.delta * step * step;
        last = Some((point, value));
        if accepted {
            let (point, value) = last.expect("set");
            return Ok(LineSearch { point, value, capped: false });
        }
        *l /= cfg.rho;
        if !l.is_finite() {
            return Err(Error::Solver(format!("Lipschitz estimate overflowed at iteration {k}")));
        }
    }
    let (point, value) = last.expect("at least one step");
    log::warn!("nmAPG line search hit the cap of {} steps at iteration {k}", cfg.max_line_search);
    Ok(LineSearch { point, value, capped: true })
}

/// Minimizes `obj` from `x0`; stops when `|x_k - x_{k-1}| / |x_{k-1}| < eps`
/// or after `max_iters` iterations.
pub fn nmapg_minimize(obj: &dyn Objective, x0: &[f64], cfg: &SolverConfig) -> Result<NmapgResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut x = x0.to_vec();
    let mut x_prev = x0.to_vec();
    let mut z = x0.to_vec();
    let (mut t, mut t_prev) = (1.0f64, 0.0f64);
    let mut q = 1.0;
    let mut jx = finite(obj.value(&x)?, "initial objective", 0)?;
    let initial = jx;
    let mut c = jx;
    let mut l = cfg.l1;
    let mut prev_bar: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut x_bar = x.clone();
    let mut trace = Vec::new();
    let mut capped_searches = 0;
    let mut k = 1;
    let mut converged = false;
    loop {
        if k > 1 && relative_change(&x, &x_prev) < cfg.eps {
            converged = true;
            break;
        }
        if k > cfg.max_iters {
            break;
        }
        // extrapolation
        x_bar = x
            .iter()
            .zip(&z)
            .zip(&x_prev)
            .map(|((&xk, &zk), &xp)| xk + t_prev / t * (zk - xk) + (t_prev - 1.0) / t * (xk - xp))
            .collect();
        let (j_bar, g_bar) = obj.value_and_gradient(&x_bar)?;
        finite(j_bar, "objective", k)?;
        if let Some((pb, pg)) = &prev_bar {
            if let Some(bb) = bb_estimate(&sub(&g_bar, pg), &sub(&x_bar, pb)) {
                l = bb;
            }
        }
        let c_relaxed = j_bar.max(c);
        let ls = line_search(obj, cfg, &x_bar, &g_bar, c_relaxed, &mut l, k)?;
        capped_searches += ls.capped as usize;
        z = ls.point;
        let jz = ls.value;
        let step = dist(&z, &x_bar);
        let (x_next, j_next) = if jz <= c - cfg.delta * step * step {
            (z.clone(), jz)
        } else {
            let g_x = obj.gradient(&x)?;
            if let Some((pb, pg)) = &prev_bar {
                if let Some(bb) = bb_estimate(&sub(&g_x, pg), &sub(&x, pb)) {
                    l = bb;
                }
            }
            let lv = line_search(obj, cfg, &x, &g_x, c, &mut l, k)?;
            capped_searches += lv.capped as usize;
            if jz <= lv.value {
                (z.clone(), jz)
            } else {
                (lv.point, lv.value)
            }
        };
        let t_next = ((4.0 * t * t + 1.0).sqrt() + 1.0) / 2.0;
        let q_next = cfg.eta * q + 1.0;
        c = (cfg.eta * q * c + j_next) / q_next;
        q = q_next;
        t_prev = t;
        t = t_next;
        let rel = relative_change(&x_next, &x);
        x_prev = std::mem::replace(&mut x, x_next);
        jx = j_next;
        prev_bar = Some((x_bar.clone(), g_bar));
        trace.push(TraceRow {
            iter: k,
            objective: jx,
            lipschitz: l,
            rel_change: rel,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        k += 1;
    }
    let iterations = k - 1;
    let state = SolverState { x: x.clone(), z, x_bar, t, q, c, lipschitz: l, iteration: iterations };
    Ok(NmapgResult { x, objective: jx, initial_objective: initial, iterations, converged, capped_searches, trace, state })
}

#[cfg(test)]
mod tests {
    use super::super::objective::FnObjective;
    use super::*;

    fn quadratic(a: Vec<f64>) -> impl Objective {
        let a2 = a.clone();
        FnObjective {
            value: move |x: &[f64]| Ok(0.5 * x.iter().zip(&a).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()),
            gradient: move |x: &[f64]| Ok(sub(x, &a2)),
        }
    }

    #[test]
    fn shifted_quadratic_in_one_step() {
        let a = vec![1.0, -2.0, 0.5, 3.0];
        let r = nmapg_minimize(&quadratic(a.clone()), &[0.0; 4], &SolverConfig::default()).unwrap();
        assert!(dist(&r.x, &a) <= 1e-4 * norm(&a));
        assert!(r.converged);
        assert!(r.objective <= r.initial_objective);
        assert!(r.trace[0].rel_change.is_infinite());
        assert!(r.trace.len() <= 3, "{} iterations", r.trace.len());
    }

    #[test]
    fn stationary_start_stops_immediately() {
        let r = nmapg_minimize(&quadratic(vec![0.0; 3]), &[0.0; 3], &SolverConfig::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.x, vec![0.0; 3]);
        assert!(r.converged);
    }

    #[test]
    fn sequences_stay_well_formed() {
        let r = nmapg_minimize(&quadratic(vec![2.0, 1.0]), &[0.0, 0.0], &SolverConfig::default()).unwrap();
        assert!(r.state.t >= 1.0 && r.state.q >= 1.0 && r.state.c.is_finite());
    }

    #[test]
    fn non_finite_objective_aborts() {
        let obj = FnObjective { value: |_: &[f64]| Ok(f64::NAN), gradient: |x: &[f64]| Ok(x.to_vec()) };
        assert!(matches!(nmapg_minimize(&obj, &[1.0], &SolverConfig::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SolverConfig { eta: 1.5, ..SolverConfig::default() };
        assert!(nmapg_minimize(&quadratic(vec![1.0]), &[0.0], &cfg).is_err());
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        let row = TraceRow { iter: 1, objective: 2.0, lipschitz: 1.0, rel_change: 0.5, wall_ms: 0.25 };
        write_trace_csv(&mut buf, &[row]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("iter,objective,L_k,rel_change,wall_ms\n1,"));
    }
}
