//! Orthonormal periodic 3D Daubechies-4 wavelet transform.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::volume::{linear_index, ComplexVolume, Dims};

/// Daubechies-4 (eight-tap) analysis low-pass filter.
pub const DB4_LOW: [f64; 8] = [
    0.230_377_813_308_896_4,
    0.714_846_570_552_915_4,
    0.630_880_767_929_858_8,
    -0.027_983_769_416_859_9,
    -0.187_034_811_719_093_1,
    0.030_841_381_835_560_7,
    0.032_883_011_666_885_2,
    -0.010_597_401_785_069_0,
];

pub const DEFAULT_LEVELS: usize = 4;
/// Smallest per-axis length allowed for the coarsest approximation band.
pub const MIN_COARSE_LEN: usize = 8;

pub fn db4_high() -> [f64; 8] {
    std::array::from_fn(|k| if k % 2 == 0 { DB4_LOW[7 - k] } else { -DB4_LOW[7 - k] })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPlan {
    low: [f64; 8],
    high: [f64; 8],
    levels: usize,
}

impl WaveletPlan {
    /// `requested` levels, reduced until the coarsest band keeps at least
    /// [`MIN_COARSE_LEN`] samples on every axis. Errors if `dims` is not
    /// divisible by `2^levels` for the resulting level count.
    pub fn new(dims: Dims, requested: usize) -> Result<Self> {
        let shortest = *dims.iter().min().unwrap_or(&0);
        let mut levels = requested;
        while levels > 0 && shortest >> levels < MIN_COARSE_LEN {
            levels -= 1;
        }
        if levels < requested {
            log::debug!("wavelet levels capped from {requested} to {levels} for {dims:?}");
        }
        let block = 1usize << levels;
        if dims.iter().any(|&n| n == 0 || n % block != 0) {
            return Err(Error::InvalidArgument(format!(
                "dims {dims:?} not divisible by 2^{levels}; pad the volume first"
            )));
        }
        Ok(Self { low: DB4_LOW, high: db4_high(), levels })
    }

    pub fn with_default_levels(dims: Dims) -> Result<Self> {
        Self::new(dims, DEFAULT_LEVELS)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Extent of the approximation band, stored at the low-index corner.
    pub fn approximation_extent(&self, dims: Dims) -> Dims {
        dims.map(|n| n >> self.levels)
    }

    /// Whether coefficient `(i, j, k)` belongs to the approximation band.
    pub fn is_approximation(&self, dims: Dims, i: usize, j: usize, k: usize) -> bool {
        let e = self.approximation_extent(dims);
        i < e[0] && j < e[1] && k < e[2]
    }

    /// Per-coefficient detail flags in storage order.
    pub fn detail_mask(&self, dims: Dims) -> Vec<bool> {
        let mut out = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    out.push(!self.is_approximation(dims, i, j, k));
                }
            }
        }
        out
    }

    fn analyze_line(&self, line: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let n = line.len();
        let half = n / 2;
        scratch.clear();
        scratch.resize(n, Complex64::new(0.0, 0.0));
        for k in 0..half {
            let (mut a, mut d) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for m in 0..8 {
                let v = line[(2 * k + m) % n];
                a += self.low[m] * v;
                d += self.high[m] * v;
            }
            scratch[k] = a;
            scratch[half + k] = d;
        }
        line.copy_from_slice(scratch);
    }

    fn synthesize_line(&self, line: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let n = line.len();
        let half = n / 2;
        scratch.clear();
        scratch.resize(n, Complex64::new(0.0, 0.0));
        for k in 0..half {
            let (a, d) = (line[k], line[half + k]);
            for m in 0..8 {
                scratch[(2 * k + m) % n] += self.low[m] * a + self.high[m] * d;
            }
        }
        line.copy_from_slice(scratch);
    }

    /// Applies `op` along `axis` to every line of the sub-box `[0, ext)`.
    fn sweep(
        &self,
        data: &mut [Complex64],
        dims: Dims,
        ext: Dims,
        axis: usize,
        op: fn(&Self, &mut [Complex64], &mut Vec<Complex64>),
    ) {
        let len = ext[axis];
        let (a1, a2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut line = vec![Complex64::new(0.0, 0.0); len];
        let mut scratch = Vec::with_capacity(len);
        let mut idx = [0usize; 3];
        for u in 0..ext[a1] {
            for v in 0..ext[a2] {
                idx[a1] = u;
                idx[a2] = v;
                for (t, slot) in line.iter_mut().enumerate() {
                    idx[axis] = t;
                    *slot = data[linear_index(dims, idx[0], idx[1], idx[2])];
                }
                op(self, &mut line, &mut scratch);
                for (t, val) in line.iter().enumerate() {
                    idx[axis] = t;
                    data[linear_index(dims, idx[0], idx[1], idx[2])] = *val;
                }
            }
        }
    }
}

/// Forward transform in octave layout: level `l` acts on the low-index box of
/// side `n / 2^l` along every axis.
pub fn dwt3(v: &ComplexVolume, plan: &WaveletPlan) -> Result<ComplexVolume> {
    let dims = v.dims();
    check_dims(dims, plan)?;
    let mut data = v.data().to_vec();
    for l in 0..plan.levels {
        let ext = dims.map(|n| n >> l);
        for axis in 0..3 {
            plan.sweep(&mut data, dims, ext, axis, WaveletPlan::analyze_line);
        }
    }
    ComplexVolume::from_vec(dims, data)
}

pub fn idwt3(c: &ComplexVolume, plan: &WaveletPlan) -> Result<ComplexVolume> {
    let dims = c.dims();
    check_dims(dims, plan)?;
    let mut data = c.data().to_vec();
    for l in (0..plan.levels).rev() {
        let ext = dims.map(|n| n >> l);
        for axis in (0..3).rev() {
            plan.sweep(&mut data, dims, ext, axis, WaveletPlan::synthesize_line);
        }
    }
    ComplexVolume::from_vec(dims, data)
}

fn check_dims(dims: Dims, plan: &WaveletPlan) -> Result<()> {
    let block = 1usize << plan.levels;
    if dims.iter().any(|&n| n % block != 0 || (plan.levels > 0 && n >> plan.levels == 0)) {
        return Err(Error::InvalidArgument(format!(
            "dims {dims:?} not divisible by 2^{}",
            plan.levels
        )));
    }
    Ok(())
}

/// Complex soft-thresholding: shrinks magnitudes by `thr`, keeps phase.
pub fn complex_soft_threshold(z: Complex64, thr: f64) -> Complex64 {
    let mag = z.norm();
    if mag <= thr {
        Complex64::new(0.0, 0.0)
    } else {
        z * ((mag - thr) / mag)
    }
}

/// Soft-thresholds the detail bands of a coefficient volume in place.
pub fn threshold_details(coeffs: &mut ComplexVolume, plan: &WaveletPlan, thr: f64) {
    let dims = coeffs.dims();
    let mask = plan.detail_mask(dims);
    for (z, detail) in coeffs.data_mut().iter_mut().zip(mask) {
        if detail {
            *z = complex_soft_threshold(*z, thr);
        }
    }
}

/// `sum |detail coefficient|`.
pub fn detail_l1(coeffs: &ComplexVolume, plan: &WaveletPlan) -> f64 {
    let mask = plan.detail_mask(coeffs.dims());
    coeffs.data().iter().zip(mask).filter(|(_, d)| *d).map(|(z, _)| z.norm()).sum()
}
