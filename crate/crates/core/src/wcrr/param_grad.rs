//! Parameter gradients of two scalars built from the regularizer:
//! `g(theta) = <grad R_theta(x), v>` and `q(theta) = <u, H_theta(x) u>`,
//! both at fixed `x`, `v`, `u`.
//!
//! With `a = s U g x`, `b = s U g v` and `s = 1/|U|`, the kernels enter through
//! `U` directly and through `s`; `ds = -s^2 d|U|`.

use num_complex::Complex64;

use super::filters::{FilterBank, Responses};
use super::model::WcrrModel;
use super::potential::{psi_d1, psi_d2, shared_potential_d1, shared_potential_d2};
use super::spectral::{forward_real, offset_sums};
use crate::error::{Error, Result};
use crate::rotation::rotate;
use crate::volume::{voxel_count, ComplexVolume, Dims};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Accumulates `d/dK <G, U X>` (effective kernels) for input spectra `x` and
/// output-gradient spectra `g` on grid `dims`.
fn accumulate_kernel_grads(
    bank: &FilterBank,
    layers: &[Responses],
    dims: Dims,
    x: &[Vec<Complex64>],
    g: Vec<Vec<Complex64>>,
    out: &mut [f64],
) {
    let n = voxel_count(dims);
    let inv_n = 1.0 / n as f64;
    let mut inputs: Vec<Vec<Vec<Complex64>>> = vec![x.to_vec()];
    for r in &layers[..layers.len() - 1] {
        let prev = inputs.last().expect("nonempty");
        let mut next = vec![vec![ZERO; n]; r.outputs];
        for f in 0..n {
            let m = &r.mat[f * r.outputs * r.inputs..(f + 1) * r.outputs * r.inputs];
            for (o, dst) in next.iter_mut().enumerate() {
                let mut acc = ZERO;
                for i in 0..r.inputs {
                    acc += m[o * r.inputs + i] * prev[i][f];
                }
                dst[f] = acc;
            }
        }
        inputs.push(next);
    }
    let offsets: Vec<usize> = bank
        .layers()
        .iter()
        .scan(0, |at, l| {
            let start = *at;
            *at += l.weights.len();
            Some(start)
        })
        .collect();
    let mut gamma = g;
    for l in (0..layers.len()).rev() {
        let r = &layers[l];
        let layer = &bank.layers()[l];
        let taps = layer.taps();
        let mut p = vec![ZERO; n];
        for o in 0..r.outputs {
            for i in 0..r.inputs {
                for f in 0..n {
                    p[f] = gamma[o][f].conj() * inputs[l][i][f] * inv_n;
                }
                let sums = offset_sums(&p, dims, layer.ksize);
                let base = offsets[l] + (o * r.inputs + i) * taps;
                for (t, v) in sums.into_iter().enumerate() {
                    out[base + t] += v;
                }
            }
        }
        if l > 0 {
            let mut back = vec![vec![ZERO; n]; r.inputs];
            for f in 0..n {
                let m = &r.mat[f * r.outputs * r.inputs..(f + 1) * r.outputs * r.inputs];
                for (i, dst) in back.iter_mut().enumerate() {
                    let mut acc = ZERO;
                    for o in 0..r.outputs {
                        acc += m[o * r.inputs + i].conj() * gamma[o][f];
                    }
                    dst[f] = acc;
                }
            }
            gamma = back;
        }
    }
}

struct RotationTerms {
    kernel: Vec<f64>,
    alpha: Vec<f64>,
    beta: f64,
    s_term: f64,
    value: f64,
}

/// Shared driver: for each rotation computes features of `x` and `w`, lets
/// `local` produce feature-space gradients `(G_a, G_b)` plus potential-parameter
/// terms, and backpropagates them into the kernels.
fn drive(
    model: &WcrrModel,
    x: &ComplexVolume,
    w: &ComplexVolume,
    local: impl Fn(&[Vec<f64>], &[Vec<f64>], &mut RotationTerms) -> (Option<Vec<Vec<f64>>>, Vec<Vec<f64>>) + Sync,
) -> Result<RotationTerms> {
    if x.dims() != w.dims() {
        return Err(Error::DimMismatch(format!("x {:?} vs direction {:?}", x.dims(), w.dims())));
    }
    let bank = model.bank();
    let j = model.channels();
    let s = bank.scale();
    let mut total = RotationTerms {
        kernel: vec![0.0; bank.param_count()],
        alpha: vec![0.0; j],
        beta: 0.0,
        s_term: 0.0,
        value: 0.0,
    };
    let mut layer_cache: Vec<(Dims, Vec<Responses>)> = Vec::new();
    for &r in model.rotations().elements() {
        let (xr, wr) = if r.is_identity() { (x.clone(), w.clone()) } else { (rotate(x, r), rotate(w, r)) };
        let dims = xr.dims();
        let plan = model.plan(dims);
        let xs = model.input_spectra(&plan, &xr);
        let ws = model.input_spectra(&plan, &wr);
        let a = super::spectral::inverse_real(&model.feature_spectra(&plan, &xs), &plan.fft);
        let b = super::spectral::inverse_real(&model.feature_spectra(&plan, &ws), &plan.fft);
        let mut terms = RotationTerms {
            kernel: Vec::new(),
            alpha: vec![0.0; j],
            beta: 0.0,
            s_term: 0.0,
            value: 0.0,
        };
        let (ga, gb) = local(&a, &b, &mut terms);
        if !layer_cache.iter().any(|(d, _)| *d == dims) {
            let resp = (0..bank.layers().len()).map(|l| bank.layer_response(l, dims)).collect();
            layer_cache.push((dims, resp));
        }
        let layers = &layer_cache.iter().find(|(d, _)| *d == dims).expect("cached").1;
        let scaled = |g: &[Vec<f64>]| -> Vec<Vec<Complex64>> {
            forward_real(g, &plan.fft, &plan.neg)
                .into_iter()
                .map(|ch| ch.into_iter().map(|z| z * s).collect())
                .collect()
        };
        if let Some(ga) = ga {
            accumulate_kernel_grads(bank, layers, dims, &xs, scaled(&ga), &mut total.kernel);
        }
        accumulate_kernel_grads(bank, layers, dims, &ws, scaled(&gb), &mut total.kernel);
        for (t, v) in total.alpha.iter_mut().zip(&terms.alpha) {
            *t += v;
        }
        total.beta += terms.beta;
        total.s_term += terms.s_term;
        total.value += terms.value;
    }
    let inv = 1.0 / model.rotations().len() as f64;
    total.kernel.iter_mut().for_each(|v| *v *= inv);
    total.alpha.iter_mut().for_each(|v| *v *= inv);
    total.beta *= inv;
    total.s_term *= inv;
    total.value *= inv;
    Ok(total)
}

/// Assembles the flat gradient from the per-part sums.
fn assemble(model: &WcrrModel, mut t: RotationTerms, sigma: f64) -> Result<Vec<f64>> {
    let bank = model.bank();
    if bank.norm() > 0.0 && t.s_term != 0.0 {
        let dn = bank.norm_gradient()?;
        let coeff = -bank.scale() * t.s_term;
        // norm gradient is already projected; project the direct part below
        bank.project_first_layer(&mut t.kernel);
        for (k, d) in t.kernel.iter_mut().zip(&dn) {
            *k += coeff * d;
        }
    } else {
        bank.project_first_layer(&mut t.kernel);
    }
    let pot = model.potentials();
    let weights = pot.spline_weights(sigma);
    let alphas = pot.alphas(sigma);
    let mut grad = t.kernel;
    grad.push(t.beta);
    let mut gc = vec![0.0; pot.c.len()];
    for j in 0..pot.channels {
        let da = t.alpha[j] * alphas[j];
        gc[j * pot.knots + weights.left] += da * (1.0 - weights.weight);
        gc[j * pot.knots + weights.left + 1] += da * weights.weight;
    }
    grad.extend(gc);
    Ok(grad)
}

/// Gradient over the flat parameters of `<grad R_theta(x), v>` at fixed `x`, `v`.
pub fn grad_inner_param_gradient(model: &WcrrModel, x: &ComplexVolume, v: &ComplexVolume, sigma: f64) -> Result<Vec<f64>> {
    let alphas = model.potentials().alphas(sigma);
    let beta = model.potentials().beta();
    let terms = drive(model, x, v, |a, b, terms| {
        let mut ga = Vec::with_capacity(a.len());
        let mut gb = Vec::with_capacity(a.len());
        for (c, (ach, bch)) in a.iter().zip(b).enumerate() {
            let al = alphas[c];
            let mut gac = Vec::with_capacity(ach.len());
            let mut gbc = Vec::with_capacity(ach.len());
            let (mut dal, mut dbe, mut st, mut val) = (0.0, 0.0, 0.0, 0.0);
            for (&t, &u) in ach.iter().zip(bch) {
                let at = al * t;
                let d1 = psi_d1(t, al, beta);
                let d2 = psi_d2(t, al, beta);
                gac.push(d2 * u);
                gbc.push(d1);
                val += d1 * u;
                st += d2 * u * t + d1 * u;
                dal += u * (-shared_potential_d1(at, beta) / (al * al) + shared_potential_d2(at, beta) * t / al);
                if (beta * at).abs() < 1.0 {
                    dbe += u * t * beta;
                }
            }
            terms.alpha[c] = dal;
            terms.beta += dbe;
            terms.s_term += st;
            terms.value += val;
            ga.push(gac);
            gb.push(gbc);
        }
        (Some(ga), gb)
    })?;
    assemble(model, terms, sigma)
}

/// Value and flat-parameter gradient of `<u, H_theta(x) u>` at fixed `x`, `u`.
/// The potential curvature is piecewise constant, so only `beta` and the
/// filters carry gradient.
pub fn hessian_form_param_gradient(
    model: &WcrrModel,
    x: &ComplexVolume,
    u: &ComplexVolume,
    sigma: f64,
) -> Result<(f64, Vec<f64>)> {
    let alphas = model.potentials().alphas(sigma);
    let beta = model.potentials().beta();
    let terms = drive(model, x, u, |a, b, terms| {
        let mut gb = Vec::with_capacity(a.len());
        for (c, (ach, bch)) in a.iter().zip(b).enumerate() {
            let al = alphas[c];
            let mut gbc = Vec::with_capacity(ach.len());
            let (mut dbe, mut q) = (0.0, 0.0);
            for (&t, &w) in ach.iter().zip(bch) {
                let d2 = psi_d2(t, al, beta);
                gbc.push(2.0 * d2 * w);
                q += d2 * w * w;
                if (al * t).abs() < 1.0 / beta {
                    dbe += w * w * beta;
                }
            }
            terms.beta += dbe;
            terms.s_term += 2.0 * q;
            terms.value += q;
            gb.push(gbc);
        }
        (None, gb)
    })?;
    let q = terms.value;
    Ok((q, assemble(model, terms, sigma)?))
}
