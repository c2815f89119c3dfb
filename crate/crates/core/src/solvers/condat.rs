//! Primal-dual scheme for `1/2 |A x - y|^2 + lambda TV(x)` with isotropic TV
//! applied to the real and imaginary channels separately.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims};

/// Forward differences with periodic wrap, one complex field per axis.
pub fn gradient_3d(x: &ComplexVolume) -> [Vec<Complex64>; 3] {
    let d = x.dims();
    let data = x.data();
    let strides = [1, d[0], d[0] * d[1]];
    let mut out: [Vec<Complex64>; 3] = Default::default();
    for (a, field) in out.iter_mut().enumerate() {
        *field = Vec::with_capacity(data.len());
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let pos = [i, j, k];
                    let idx = i + d[0] * (j + d[1] * k);
                    let next = if pos[a] + 1 == d[a] { idx - pos[a] * strides[a] } else { idx + strides[a] };
                    field.push(data[next] - data[idx]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`gradient_3d`].
pub fn gradient_adjoint_3d(p: &[Vec<Complex64>; 3], dims: Dims) -> ComplexVolume {
    let strides = [1, dims[0], dims[0] * dims[1]];
    let n = p[0].len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (a, field) in p.iter().enumerate() {
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let pos = [i, j, k];
                    let idx = i + dims[0] * (j + dims[1] * k);
                    let prev = if pos[a] == 0 { idx + (dims[a] - 1) * strides[a] } else { idx - strides[a] };
                    out[idx] += field[prev] - field[idx];
                }
            }
        }
    }
    ComplexVolume::from_vec(dims, out).expect("finite divergence")
}

/// `sum_n |grad Re x(n)|_2 + |grad Im x(n)|_2`.
pub fn tv_value(x: &ComplexVolume) -> f64 {
    let g = gradient_3d(x);
    (0..x.len())
        .map(|n| {
            let re = (g[0][n].re.powi(2) + g[1][n].re.powi(2) + g[2][n].re.powi(2)).sqrt();
            let im = (g[0][n].im.powi(2) + g[1][n].im.powi(2) + g[2][n].im.powi(2)).sqrt();
            re + im
        })
        .sum()
}

/// Projects each per-channel 3-vector of the dual field onto the `lambda` ball.
pub fn project_dual(p: &mut [Vec<Complex64>; 3], lambda: f64) {
    for n in 0..p[0].len() {
        let re = (p[0][n].re.powi(2) + p[1][n].re.powi(2) + p[2][n].re.powi(2)).sqrt();
        let im = (p[0][n].im.powi(2) + p[1][n].im.powi(2) + p[2][n].im.powi(2)).sqrt();
        let sr = if re > lambda { lambda / re } else { 1.0 };
        let si = if im > lambda { lambda / im } else { 1.0 };
        for field in p.iter_mut() {
            field[n] = Complex64::new(field[n].re * sr, field[n].im * si);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TvResult {
    pub x: ComplexVolume,
    pub iterations: usize,
    pub converged: bool,
    /// Largest per-channel dual norm after the final projection.
    pub max_dual_norm: f64,
}

/// Iterates
/// `p <- proj(p + eta D x)`, `x <- x - tau (A^H(A x - y) + D^T (2 p_new - p_old))`
/// with `tau = 1/|A|^2`, `eta = 1/(24 tau)` and `p_0 = 0`, stopping on the
/// relative change of `x`. `data_grad(x)` must return `A^H (A x - y)`.
pub fn condat_tv_reconstruct(
    data_grad: &dyn Fn(&ComplexVolume) -> Result<ComplexVolume>,
    op_norm_sq: f64,
    lambda: f64,
    x0: &ComplexVolume,
    tol: f64,
    max_iters: usize,
) -> Result<TvResult> {
    if !(op_norm_sq > 0.0) || !op_norm_sq.is_finite() {
        return Err(Error::InvalidArgument(format!("operator norm must be positive, got {op_norm_sq}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let tau = 1.0 / op_norm_sq;
    let eta = 1.0 / (24.0 * tau);
    let dims = x0.dims();
    let zero = vec![Complex64::new(0.0, 0.0); x0.len()];
    let mut p: [Vec<Complex64>; 3] = [zero.clone(), zero.clone(), zero];
    let mut x = x0.clone();
    let mut max_dual = 0.0f64;
    for k in 1..=max_iters {
        let dx = gradient_3d(&x);
        let mut p_next = p.clone();
        for (pa, da) in p_next.iter_mut().zip(&dx) {
            pa.iter_mut().zip(da).for_each(|(a, b)| *a += eta * b);
        }
        project_dual(&mut p_next, lambda);
        let extrap: [Vec<Complex64>; 3] = std::array::from_fn(|a| {
            p_next[a].iter().zip(&p[a]).map(|(n, o)| 2.0 * n - o).collect()
        });
        let g = data_grad(&x)?;
        let dt = gradient_adjoint_3d(&extrap, dims);
        let mut x_next = x.clone();
        for ((xn, gv), dv) in x_next.data_mut().iter_mut().zip(g.data()).zip(dt.data()) {
            *xn -= tau * (gv + dv);
        }
        if x_next.data().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(format!("TV iterate {k}")));
        }
        let change = x_next.sub(&x).norm();
        let base = x.norm();
        x = x_next;
        p = p_next;
        max_dual = (0..x.len())
            .map(|n| {
                let re = (p[0][n].re.powi(2) + p[1][n].re.powi(2) + p[2][n].re.powi(2)).sqrt();
                let im = (p[0][n].im.powi(2) + p[1][n].im.powi(2) + p[2][n].im.powi(2)).sqrt();
                re.max(im)
            })
            .fold(0.0, f64::max);
        let rel = if change == 0.0 { 0.0 } else if base == 0.0 { f64::INFINITY } else { change / base };
        if rel < tol {
            return Ok(TvResult { x, iterations: k, converged: true, max_dual_norm: max_dual });
        }
    }
    Ok(TvResult { x, iterations: max_iters, converged: false, max_dual_norm: max_dual })
}
