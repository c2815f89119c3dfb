//! Bias-free periodic convolution cascade `U` and its spectral normalization.
//!
//! Each layer is a multichannel cross-correlation
//! `out_o(n) = sum_i sum_d K[o][i][d] in_i(n + d)` with periodic wrap, so at
//! frequency `w` it acts as the matrix `R(w)[o][i] = sum_d K[o][i][d] e^{+i w.d}`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spectral::{offsets, phase_table};
use crate::error::{Error, Result};
use crate::volume::{voxel_count, Dims};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub ksize: usize,
    /// Laid out `[out][in][dz][dy][dx]`.
    pub weights: Vec<f64>,
}

impl ConvLayer {
    pub fn new(inputs: usize, outputs: usize, ksize: usize, weights: Vec<f64>) -> Result<Self> {
        if inputs == 0 || outputs == 0 || ksize == 0 {
            return Err(Error::InvalidArgument("empty convolution layer".into()));
        }
        if weights.len() != inputs * outputs * ksize.pow(3) {
            return Err(Error::DimMismatch(format!(
                "layer {inputs}->{outputs} k={ksize} expects {} weights, got {}",
                inputs * outputs * ksize.pow(3),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("kernel weights".into()));
        }
        Ok(Self { inputs, outputs, ksize, weights })
    }

    pub fn taps(&self) -> usize {
        self.ksize.pow(3)
    }
}

/// Frequency at which the cascade attains its spectral norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormWitness {
    pub grid: Dims,
    pub freq: [usize; 3],
}

/// The cascade `U` with cached norm; the evaluated operator is `W = U / |U|`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    layers: Vec<ConvLayer>,
    zero_mean: bool,
    norm: f64,
    witness: Option<NormWitness>,
}

/// Per-frequency matrices laid out `[freq][out][in]`.
pub(crate) struct Responses {
    pub outputs: usize,
    pub inputs: usize,
    pub mat: Vec<Complex64>,
}

impl FilterBank {
    /// Builds an unnormalized bank whose first layer is mean-free; call
    /// [`FilterBank::normalize`] before use.
    pub fn from_layers(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("filter bank needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimMismatch(format!(
                    "layer with {} outputs feeds layer with {} inputs",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        if layers[0].inputs > 2 {
            return Err(Error::InvalidArgument("the cascade takes at most two input channels".into()));
        }
        Ok(Self { layers, zero_mean: true, norm: 0.0, witness: None })
    }

    /// Gaussian kernels with standard deviation `(fan_in * k^3)^{-1/2}`.
    pub fn random(plan: &[usize], ksize: usize, seed: u64) -> Result<Self> {
        if plan.len() < 2 {
            return Err(Error::InvalidArgument("channel plan needs at least two entries".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(plan.len() - 1);
        for w in plan.windows(2) {
            let taps = ksize.pow(3);
            let std = 1.0 / ((w[0] * taps) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid std");
            let weights = (0..w[0] * w[1] * taps).map(|_| normal.sample(&mut rng)).collect();
            layers.push(ConvLayer::new(w[0], w[1], ksize, weights)?);
        }
        Self::from_layers(layers)
    }

    /// Switches the first-layer mean removal on or off.
    pub fn with_zero_mean(mut self, on: bool) -> Self {
        self.zero_mean = on;
        self.norm = 0.0;
        self.witness = None;
        self
    }

    pub fn zero_mean(&self) -> bool {
        self.zero_mean
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("nonempty").outputs
    }

    pub fn channel_plan(&self) -> Vec<usize> {
        let mut plan = vec![self.inputs()];
        plan.extend(self.layers.iter().map(|l| l.outputs));
        plan
    }

    /// Cached `|U|`; zero until normalized.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn witness(&self) -> Option<NormWitness> {
        self.witness
    }

    /// `1 / |U|`, or zero for a bank that was never normalized.
    pub fn scale(&self) -> f64 {
        if self.norm > 0.0 {
            1.0 / self.norm
        } else {
            0.0
        }
    }

    /// Stores `|U|` measured on the periodic grid `dims`.
    pub fn normalize(mut self, dims: Dims) -> Result<Self> {
        let (norm, freq) = self.spectral_norm_with_witness(dims);
        if !(norm > 0.0) {
            return Err(Error::Degenerate("filter cascade is identically zero".into()));
        }
        self.norm = norm;
        self.witness = Some(NormWitness { grid: dims, freq });
        Ok(self)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn weights_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().copied()).collect()
    }

    /// Replaces raw weights; the cached norm is left stale.
    pub fn set_weights_flat(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::DimMismatch("filter weight vector length".into()));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.copy_from_slice(&w[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Kernels as applied: with mean removal on, first-layer kernels are centered.
    pub fn effective_weights(&self, layer: usize) -> Vec<f64> {
        let l = &self.layers[layer];
        let mut w = l.weights.clone();
        if layer == 0 && self.zero_mean {
            for kernel in w.chunks_mut(l.taps()) {
                let mean = kernel.iter().sum::<f64>() / kernel.len() as f64;
                kernel.iter_mut().for_each(|v| *v -= mean);
            }
        }
        w
    }

    /// Gradient with respect to raw weights from one with respect to effective weights.
    pub(crate) fn project_first_layer(&self, grad: &mut [f64]) {
        if !self.zero_mean {
            return;
        }
        let taps = self.layers[0].taps();
        for kernel in grad[..self.layers[0].weights.len()].chunks_mut(taps) {
            let mean = kernel.iter().sum::<f64>() / taps as f64;
            kernel.iter_mut().for_each(|v| *v -= mean);
        }
    }

    /// Frequency response of one layer on `dims`.
    pub(crate) fn layer_response(&self, layer: usize, dims: Dims) -> Responses {
        let l = &self.layers[layer];
        let k = l.ksize;
        let w = self.effective_weights(layer);
        let [nx, ny, nz] = dims;
        let (ex, ey, ez) = (phase_table(nx, k), phase_table(ny, k), phase_table(nz, k));
        let pairs = l.inputs * l.outputs;
        let n = voxel_count(dims);
        let mut mat = vec![ZERO; n * pairs];
        let mut a = vec![ZERO; k * k * nx];
        let mut b = vec![ZERO; k * ny * nx];
        for (p, kernel) in w.chunks(l.taps()).enumerate() {
            // a[dz][dy][fx]
            for dzy in 0..k * k {
                for fx in 0..nx {
                    let mut acc = ZERO;
                    for dx in 0..k {
                        acc += ex[fx * k + dx] * kernel[dzy * k + dx];
                    }
                    a[dzy * nx + fx] = acc;
                }
            }
            // b[dz][fy][fx]
            for dz in 0..k {
                for fy in 0..ny {
                    for fx in 0..nx {
                        let mut acc = ZERO;
                        for dy in 0..k {
                            acc += ey[fy * k + dy] * a[(dz * k + dy) * nx + fx];
                        }
                        b[(dz * ny + fy) * nx + fx] = acc;
                    }
                }
            }
            for fz in 0..nz {
                for fyx in 0..ny * nx {
                    let mut acc = ZERO;
                    for dz in 0..k {
                        acc += ez[fz * k + dz] * b[dz * ny * nx + fyx];
                    }
                    mat[(fz * ny * nx + fyx) * pairs + p] = acc;
                }
            }
        }
        Responses { outputs: l.outputs, inputs: l.inputs, mat }
    }

    /// Composite response `R_L ... R_1` of the unnormalized cascade on `dims`.
    pub(crate) fn composite_response(&self, dims: Dims) -> Responses {
        let n = voxel_count(dims);
        let mut acc = self.layer_response(0, dims);
        for l in 1..self.layers.len() {
            let next = self.layer_response(l, dims);
            let (o, m, i) = (next.outputs, next.inputs, acc.inputs);
            let mut mat = vec![ZERO; n * o * i];
            for f in 0..n {
                let r = &next.mat[f * o * m..(f + 1) * o * m];
                let t = &acc.mat[f * m * i..(f + 1) * m * i];
                let dst = &mut mat[f * o * i..(f + 1) * o * i];
                for oo in 0..o {
                    for mm in 0..m {
                        let rv = r[oo * m + mm];
                        for ii in 0..i {
                            dst[oo * i + ii] += rv * t[mm * i + ii];
                        }
                    }
                }
            }
            acc = Responses { outputs: o, inputs: i, mat };
        }
        acc
    }

    fn spectral_norm_with_witness(&self, dims: Dims) -> (f64, [usize; 3]) {
        let t = self.composite_response(dims);
        let block = t.outputs * t.inputs;
        let mut best = (-1.0, 0usize);
        for (f, m) in t.mat.chunks(block).enumerate() {
            let (s, _, _) = top_singular(m, t.outputs, t.inputs);
            if s > best.0 {
                best = (s, f);
            }
        }
        let f = best.1;
        (best.0, [f % dims[0], (f / dims[0]) % dims[1], f / (dims[0] * dims[1])])
    }

    /// Gradient of `|U|` with respect to the raw weights, taken at the stored
    /// maximizing frequency (first one in index order on ties).
    pub fn norm_gradient(&self) -> Result<Vec<f64>> {
        let wit = self.witness.ok_or_else(|| Error::Degenerate("bank has no norm witness".into()))?;
        let resp: Vec<(usize, usize, Vec<Complex64>)> = (0..self.layers.len())
            .map(|l| {
                let layer = &self.layers[l];
                (layer.outputs, layer.inputs, single_frequency_response(layer, &self.effective_weights(l), wit))
            })
            .collect();
        let mut t = resp[0].2.clone();
        for r in &resp[1..] {
            t = matmul(&r.2, r.0, r.1, &t, resp[0].1);
        }
        let (sigma, u, v) = top_singular(&t, self.outputs(), self.inputs());
        if sigma <= 0.0 {
            return Ok(vec![0.0; self.param_count()]);
        }
        // r_l: input of layer l applied to v; a_l: back-projection of u onto layer l outputs
        let mut inputs = vec![v];
        for (l, r) in resp.iter().enumerate() {
            let next = matmul(&r.2, r.0, r.1, &inputs[l], 1);
            inputs.push(next);
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut a = u;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let phases = tap_phases(layer.ksize, wit);
            let mut g = vec![0.0; layer.weights.len()];
            for o in 0..layer.outputs {
                for i in 0..layer.inputs {
                    let c = a[o].conj() * inputs[l][i];
                    let base = (o * layer.inputs + i) * layer.taps();
                    for (t, ph) in phases.iter().enumerate() {
                        g[base + t] = (c * ph).re;
                    }
                }
            }
            grads.push(g);
            let r = &resp[l];
            let mut back = vec![ZERO; r.1];
            for o in 0..r.0 {
                for i in 0..r.1 {
                    back[i] += r.2[o * r.1 + i].conj() * a[o];
                }
            }
            a = back;
        }
        grads.reverse();
        let mut flat: Vec<f64> = grads.into_iter().flatten().collect();
        self.project_first_layer(&mut flat);
        Ok(flat)
    }
}

/// `|U|` on the periodic grid `dims`: the largest singular value of the
/// composite frequency response over all grid frequencies.
pub fn spectral_norm_fft(bank: &FilterBank, dims: Dims) -> f64 {
    bank.spectral_norm_with_witness(dims).0
}

pub fn normalize(bank: FilterBank, dims: Dims) -> Result<FilterBank> {
    bank.normalize(dims)
}

fn tap_phases(k: usize, wit: NormWitness) -> Vec<Complex64> {
    let offs = offsets(k);
    let mut out = Vec::with_capacity(k * k * k);
    for &dz in &offs {
        for &dy in &offs {
            for &dx in &offs {
                let w = 2.0
                    * std::f64::consts::PI
                    * (wit.freq[0] as f64 * dx as f64 / wit.grid[0] as f64
                        + wit.freq[1] as f64 * dy as f64 / wit.grid[1] as f64
                        + wit.freq[2] as f64 * dz as f64 / wit.grid[2] as f64);
                out.push(Complex64::new(w.cos(), w.sin()));
            }
        }
    }
    out
}

fn single_frequency_response(layer: &ConvLayer, weights: &[f64], wit: NormWitness) -> Vec<Complex64> {
    let phases = tap_phases(layer.ksize, wit);
    weights
        .chunks(layer.taps())
        .map(|kernel| kernel.iter().zip(&phases).map(|(w, p)| p * w).sum())
        .collect()
}

/// `(rows x inner) * (inner x cols)`, row-major.
fn matmul(a: &[Complex64], rows: usize, inner: usize, b: &[Complex64], cols: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; rows * cols];
    for r in 0..rows {
        for m in 0..inner {
            let av = a[r * inner + m];
            for c in 0..cols {
                out[r * cols + c] += av * b[m * cols + c];
            }
        }
    }
    out
}

/// Largest singular value and its singular pair `(sigma, u, v)` of a
/// `rows x cols` matrix with `cols <= 2`, via the Gram matrix `T^H T`.
pub(crate) fn top_singular(t: &[Complex64], rows: usize, cols: usize) -> (f64, Vec<Complex64>, Vec<Complex64>) {
    let v = match cols {
        1 => vec![Complex64::new(1.0, 0.0)],
        2 => {
            let (mut p, mut r, mut q) = (0.0, 0.0, ZERO);
            for row in t.chunks(2) {
                p += row[0].norm_sqr();
                r += row[1].norm_sqr();
                q += row[0].conj() * row[1];
            }
            let half = 0.5 * (p - r);
            let lam = 0.5 * (p + r) + (half * half + q.norm_sqr()).sqrt();
            // two candidate eigenvectors; keep the better conditioned one
            let c1 = [q, Complex64::new(lam - p, 0.0)];
            let c2 = [Complex64::new(lam - r, 0.0), q.conj()];
            let n1 = c1[0].norm_sqr() + c1[1].norm_sqr();
            let n2 = c2[0].norm_sqr() + c2[1].norm_sqr();
            let (c, n) = if n1 >= n2 { (c1, n1) } else { (c2, n2) };
            if n > 0.0 {
                let s = 1.0 / n.sqrt();
                vec![c[0] * s, c[1] * s]
            } else if p >= r {
                vec![Complex64::new(1.0, 0.0), ZERO]
            } else {
                vec![ZERO, Complex64::new(1.0, 0.0)]
            }
        }
        _ => panic!("top_singular supports at most two columns"),
    };
    let tv = matmul(t, rows, cols, &v, 1);
    let sigma = tv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let u = if sigma > 0.0 { tv.iter().map(|z| z / sigma).collect() } else { vec![ZERO; rows] };
    (sigma, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(ksize: usize, weights: Vec<f64>) -> FilterBank {
        FilterBank::from_layers(vec![ConvLayer::new(1, 1, ksize, weights).unwrap()]).unwrap()
    }

    #[test]
    fn identity_kernel_has_unit_norm() {
        let mut w = vec![0.0; 27];
        w[13] = 1.0;
        let bank = single(3, w).with_zero_mean(false);
        assert!((spectral_norm_fft(&bank, [8, 8, 8]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_tap_kernel_peaks_at_dc() {
        let mut w = vec![0.0; 8];
        w[0] = 1.0;
        w[1] = 1.0;
        let bank = single(2, w).with_zero_mean(false).normalize([8, 6, 4]).unwrap();
        assert!((bank.norm() - 2.0).abs() < 1e-14);
        assert_eq!(bank.witness().unwrap().freq, [0, 0, 0]);
    }

    #[test]
    fn first_layer_kernels_are_mean_free() {
        let bank = FilterBank::random(&[2, 3, 2], 3, 5).unwrap();
        for kernel in bank.effective_weights(0).chunks(27) {
            assert!(kernel.iter().sum::<f64>().abs() < 1e-14);
        }
        assert_eq!(bank.effective_weights(1), bank.layers()[1].weights);
    }

    #[test]
    fn singular_pair_is_consistent() {
        let t = vec![
            Complex64::new(1.0, 0.5),
            Complex64::new(-0.3, 0.2),
            Complex64::new(0.0, 2.0),
            Complex64::new(0.7, -1.1),
            Complex64::new(0.4, 0.0),
            Complex64::new(0.0, 0.0),
        ];
        let (s, u, v) = top_singular(&t, 3, 2);
        // sigma^2 is the larger root of det(T^H T - l I)
        let g00: f64 = t.chunks(2).map(|r| r[0].norm_sqr()).sum();
        let g11: f64 = t.chunks(2).map(|r| r[1].norm_sqr()).sum();
        let g01: Complex64 = t.chunks(2).map(|r| r[0].conj() * r[1]).sum();
        let tr = g00 + g11;
        let det = g00 * g11 - g01.norm_sqr();
        let lam = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        assert!((s * s - lam).abs() < 1e-12);
        let uh_t_v: Complex64 = (0..3).map(|r| u[r].conj() * (t[2 * r] * v[0] + t[2 * r + 1] * v[1])).sum();
        assert!((uh_t_v.re - s).abs() < 1e-12 && uh_t_v.im.abs() < 1e-12);
    }

    #[test]
    fn zero_bank_cannot_be_normalized() {
        let bank = FilterBank::from_layers(vec![ConvLayer::new(2, 3, 3, vec![0.0; 162]).unwrap()]).unwrap();
        assert!(matches!(bank.normalize([4, 4, 4]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mismatched_plan_rejected() {
        let a = ConvLayer::new(2, 3, 3, vec![0.0; 162]).unwrap();
        let b = ConvLayer::new(4, 1, 3, vec![0.0; 108]).unwrap();
        assert!(FilterBank::from_layers(vec![a, b]).is_err());
        assert!(ConvLayer::new(2, 3, 3, vec![0.0; 5]).is_err());
    }
}
