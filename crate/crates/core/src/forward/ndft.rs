//! Direct-summation non-uniform DFT.
//!
//! Voxel `(i, j, k)` sits at integer position `r = (i - nx/2, j - ny/2, k - nz/2)`
//! and `(F x)_m = sum_n x_n exp(-i 2 pi <k_m, r_n>)`. The exponential
//! separates per axis, so each sample costs one pass over the volume.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::trajectory::KSpaceTrajectory;
use crate::error::{Error, Result};
use crate::volume::{voxel_count, ComplexVolume, Dims};

/// Per-sample, per-axis factors `exp(-i 2 pi k_a r)`.
pub(crate) struct PhaseTables {
    dims: Dims,
    axes: [Vec<Complex64>; 3],
}

impl PhaseTables {
    pub(crate) fn new(traj: &KSpaceTrajectory, dims: Dims) -> Self {
        let m = traj.len();
        let axes = [0, 1, 2].map(|a| {
            let n = dims[a];
            let half = (n / 2) as f64;
            let mut t = Vec::with_capacity(m * n);
            for p in traj.points() {
                for q in 0..n {
                    t.push(Complex64::from_polar(1.0, -2.0 * PI * p[a] * (q as f64 - half)));
                }
            }
            t
        });
        Self { dims, axes }
    }

    #[inline]
    fn axis(&self, a: usize, m: usize) -> &[Complex64] {
        let n = self.dims[a];
        &self.axes[a][m * n..(m + 1) * n]
    }

    pub(crate) fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
        let d = self.dims;
        let m_count = self.axes[0].len() / d[0];
        (0..m_count)
            .into_par_iter()
            .map(|m| {
                let (ex, ey, ez) = (self.axis(0, m), self.axis(1, m), self.axis(2, m));
                let mut total = Complex64::new(0.0, 0.0);
                for (k, ezk) in ez.iter().enumerate() {
                    let mut plane = Complex64::new(0.0, 0.0);
                    for (j, eyj) in ey.iter().enumerate() {
                        let row = &x[d[0] * (j + d[1] * k)..][..d[0]];
                        let (mut re, mut im) = (0.0, 0.0);
                        for (v, e) in row.iter().zip(ex) {
                            re += v.re * e.re - v.im * e.im;
                            im += v.re * e.im + v.im * e.re;
                        }
                        plane += Complex64::new(re, im) * eyj;
                    }
                    total += plane * ezk;
                }
                total
            })
            .collect()
    }

    pub(crate) fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let d = self.dims;
        let slab = d[0] * d[1];
        let mut out = vec![Complex64::new(0.0, 0.0); voxel_count(d)];
        out.par_chunks_mut(slab).enumerate().for_each(|(k, slab_out)| {
            for (m, ym) in y.iter().enumerate() {
                let (ex, ey) = (self.axis(0, m), self.axis(1, m));
                let wk = ym * self.axis(2, m)[k].conj();
                for (j, eyj) in ey.iter().enumerate() {
                    let w = wk * eyj.conj();
                    let row = &mut slab_out[j * d[0]..(j + 1) * d[0]];
                    for (v, e) in row.iter_mut().zip(ex) {
                        v.re += w.re * e.re + w.im * e.im;
                        v.im += w.im * e.re - w.re * e.im;
                    }
                }
            }
        });
        out
    }
}

/// `F_Omega x` by direct summation.
pub fn ndft_forward(x: &ComplexVolume, traj: &KSpaceTrajectory) -> Vec<Complex64> {
    PhaseTables::new(traj, x.dims()).forward(x.data())
}

/// `F_Omega^H y`, i.e. `x_n = sum_m y_m exp(+i 2 pi <k_m, r_n>)`.
pub fn ndft_adjoint(y: &[Complex64], traj: &KSpaceTrajectory, dims: Dims) -> Result<ComplexVolume> {
    if y.len() != traj.len() {
        return Err(Error::DimMismatch(format!(
            "{} samples for a trajectory of {}",
            y.len(),
            traj.len()
        )));
    }
    ComplexVolume::from_vec(dims, PhaseTables::new(traj, dims).adjoint(y))
}
