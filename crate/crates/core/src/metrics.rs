//! Masked fidelity metrics.
//!
//! Both metrics work on magnitude images. Each image is z-score normalized
//! with its own mean and (population) standard deviation over the mask
//! before comparison.

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims};

pub const FOREGROUND_FRACTION: f64 = 0.05;
pub const DEFAULT_PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalMask {
    dims: Dims,
    inside: Vec<bool>,
}

impl EvalMask {
    pub fn from_vec(dims: Dims, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != dims.iter().product::<usize>() {
            return Err(Error::DimMismatch("mask length".into()));
        }
        Ok(Self { dims, inside })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// Voxels whose magnitude exceeds 5% of the maximum ground-truth magnitude.
pub fn foreground_mask(gt: &ComplexVolume) -> Result<EvalMask> {
    let mags = gt.magnitudes();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::Degenerate("foreground mask of an all-zero volume".into()));
    }
    let threshold = FOREGROUND_FRACTION * max;
    let inside = mags.iter().map(|&m| m > threshold).collect();
    EvalMask::from_vec(gt.dims(), inside)
}

fn check_inputs(gt: &ComplexVolume, rec: &ComplexVolume, mask: &EvalMask) -> Result<()> {
    if gt.dims() != rec.dims() || gt.dims() != mask.dims() {
        return Err(Error::DimMismatch(format!(
            "gt {:?}, rec {:?}, mask {:?}",
            gt.dims(),
            rec.dims(),
            mask.dims()
        )));
    }
    if mask.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation mask".into()));
    }
    Ok(())
}

/// Z-score normalizes `values` with statistics taken over the mask.
/// A constant image is only mean-centered. Deviations at rounding level
/// relative to the mean count as constant.
pub fn zscore_over_mask(values: &[f64], mask: &EvalMask) -> Vec<f64> {
    let n = mask.count() as f64;
    let mut sum = 0.0;
    for (v, _) in values.iter().zip(mask.inside()).filter(|(_, &m)| m) {
        sum += v;
    }
    let mean = sum / n;
    let mut var = 0.0;
    for (v, _) in values.iter().zip(mask.inside()).filter(|(_, &m)| m) {
        var += (v - mean) * (v - mean);
    }
    let std = (var / n).sqrt();
    let scale = if std > 64.0 * f64::EPSILON * mean.abs() { 1.0 / std } else { 1.0 };
    values.iter().map(|v| (v - mean) * scale).collect()
}

pub fn masked_psnr(gt: &ComplexVolume, rec: &ComplexVolume, mask: &EvalMask) -> Result<f64> {
    masked_psnr_with_cap(gt, rec, mask, DEFAULT_PSNR_CAP_DB)
}

/// PSNR over the mask, `10 log10(peak^2 / mse)` with `peak` the maximum
/// normalized ground-truth magnitude inside the mask.
pub fn masked_psnr_with_cap(
    gt: &ComplexVolume,
    rec: &ComplexVolume,
    mask: &EvalMask,
    cap_db: f64,
) -> Result<f64> {
    check_inputs(gt, rec, mask)?;
    let g = zscore_over_mask(&gt.magnitudes(), mask);
    let r = zscore_over_mask(&rec.magnitudes(), mask);
    Ok(psnr_of_normalized(&g, &r, mask, cap_db))
}

pub(crate) fn psnr_of_normalized(g: &[f64], r: &[f64], mask: &EvalMask, cap_db: f64) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut se = 0.0;
    for idx in (0..g.len()).filter(|&i| mask.inside()[i]) {
        peak = peak.max(g[idx]);
        se += (g[idx] - r[idx]).powi(2);
    }
    let mse = se / mask.count() as f64;
    if mse == 0.0 {
        return cap_db;
    }
    (10.0 * (peak * peak / mse).log10()).min(cap_db)
}

/// Plain PSNR on the complex (2-channel) data with peak `max |reference|`.
pub fn psnr(reference: &ComplexVolume, estimate: &ComplexVolume) -> f64 {
    let peak = reference.magnitudes().into_iter().fold(0.0, f64::max);
    let mse = estimate.sub(reference).norm_sqr() / (2 * reference.len()) as f64;
    if mse == 0.0 {
        return DEFAULT_PSNR_CAP_DB;
    }
    10.0 * (peak * peak / mse).log10()
}

pub fn masked_ssim(gt: &ComplexVolume, rec: &ComplexVolume, mask: &EvalMask) -> Result<f64> {
    check_inputs(gt, rec, mask)?;
    let g = zscore_over_mask(&gt.magnitudes(), mask);
    let r = zscore_over_mask(&rec.magnitudes(), mask);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for idx in (0..g.len()).filter(|&i| mask.inside()[i]) {
        lo = lo.min(g[idx]);
        hi = hi.max(g[idx]);
    }
    let range = if hi > lo { hi - lo } else { 1.0 };
    Ok(mean_ssim(&g, &r, gt.dims(), mask, range))
}

fn gaussian_taps() -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect()
}

/// Separable Gaussian smoothing along one axis; weights are renormalized
/// over the in-bounds part of the window.
fn smooth_axis(input: &[f64], dims: Dims, axis: usize, taps: &[f64]) -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let n = dims[axis] as isize;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let mut out = vec![0.0; input.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let pos = ((idx / stride) % dims[axis]) as isize;
        let (mut acc, mut wsum) = (0.0, 0.0);
        for d in -r..=r {
            let q = pos + d;
            if q < 0 || q >= n {
                continue;
            }
            let w = taps[(d + r) as usize];
            acc += w * input[(idx as isize + d * stride as isize) as usize];
            wsum += w;
        }
        *o = acc / wsum;
    }
    out
}

fn smooth(input: &[f64], dims: Dims, taps: &[f64]) -> Vec<f64> {
    let a = smooth_axis(input, dims, 0, taps);
    let b = smooth_axis(&a, dims, 1, taps);
    smooth_axis(&b, dims, 2, taps)
}

/// Mean of the local SSIM map over the mask for two real images.
pub fn mean_ssim(a: &[f64], b: &[f64], dims: Dims, mask: &EvalMask, dynamic_range: f64) -> f64 {
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = smooth(a, dims, &taps);
    let mu_b = smooth(b, dims, &taps);
    let e_aa = smooth(&aa, dims, &taps);
    let e_bb = smooth(&bb, dims, &taps);
    let e_ab = smooth(&ab, dims, &taps);
    let mut total = 0.0;
    for idx in (0..a.len()).filter(|&i| mask.inside()[i]) {
        let (ma, mb) = (mu_a[idx], mu_b[idx]);
        let va = (e_aa[idx] - ma * ma).max(0.0);
        let vb = (e_bb[idx] - mb * mb).max(0.0);
        let cov = e_ab[idx] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mask.count() as f64
}
