//! Stacked multi-coil encoding operator `A = [F S_1; ...; F S_C]`.

use std::sync::OnceLock;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::coils::CoilSet;
use super::density::DensityWeights;
use super::ndft::PhaseTables;
use super::trajectory::KSpaceTrajectory;
use crate::error::{Error, Result};
use crate::fft::Fft3;
use crate::volume::{voxel_count, ComplexVolume, Dims};

/// Per-coil k-space samples, coil-major.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    coils: usize,
    samples: usize,
    data: Vec<Complex64>,
}

impl KSpaceData {
    pub fn new(coils: usize, samples: usize, data: Vec<Complex64>) -> Result<Self> {
        if coils == 0 || samples == 0 {
            return Err(Error::InvalidArgument("k-space data needs C >= 1 and M >= 1".into()));
        }
        if data.len() != coils * samples {
            return Err(Error::DimMismatch(format!(
                "expected {} samples for C={coils}, M={samples}, got {}",
                coils * samples,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("k-space data".into()));
        }
        Ok(Self { coils, samples, data })
    }

    pub fn zeros(coils: usize, samples: usize) -> Self {
        Self { coils, samples, data: vec![Complex64::new(0.0, 0.0); coils * samples] }
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self { data: self.data.iter().map(|z| z * s).collect(), ..*self }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Complex inner product `<self, other> = sum self_m conj(other_m)`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b.conj()).sum()
    }
}

/// `F^H F` as a convolution, evaluated exactly by zero-padded FFTs on a
/// doubled grid: `(F^H W F x)_n = sum_n' K(n - n') x_n'` with
/// `K(d) = sum_m w_m exp(+i 2 pi <k_m, d>)`.
pub struct ToeplitzKernel {
    dims: Dims,
    padded: Dims,
    spectrum: Vec<Complex64>,
    fft: Fft3,
}

impl ToeplitzKernel {
    pub fn new(traj: &KSpaceTrajectory, dims: Dims, weights: Option<&DensityWeights>) -> Self {
        let padded = dims.map(|n| 2 * n);
        let w: Vec<Complex64> = match weights {
            Some(w) => w.weights().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            None => vec![Complex64::new(1.0, 0.0); traj.len()],
        };
        // Centered grid: position q holds lag d = q - n.
        let centered = PhaseTables::new(traj, padded).adjoint(&w);
        let mut kernel = vec![Complex64::new(0.0, 0.0); voxel_count(padded)];
        for k in 1..padded[2] {
            for j in 1..padded[1] {
                for i in 1..padded[0] {
                    let src = i + padded[0] * (j + padded[1] * k);
                    let wrap = |q: usize, n: usize| (q + n) % (2 * n);
                    let dst = wrap(i, dims[0])
                        + padded[0] * (wrap(j, dims[1]) + padded[1] * wrap(k, dims[2]));
                    kernel[dst] = centered[src];
                }
            }
        }
        let fft = Fft3::new(padded);
        fft.forward(&mut kernel);
        Self { dims, padded, spectrum: kernel, fft }
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let (d, p) = (self.dims, self.padded);
        let mut buf = vec![Complex64::new(0.0, 0.0); voxel_count(p)];
        for k in 0..d[2] {
            for j in 0..d[1] {
                let src = d[0] * (j + d[1] * k);
                let dst = p[0] * (j + p[1] * k);
                buf[dst..dst + d[0]].copy_from_slice(&x[src..src + d[0]]);
            }
        }
        self.fft.forward(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.fft.inverse(&mut buf);
        let scale = 1.0 / voxel_count(p) as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); voxel_count(d)];
        for k in 0..d[2] {
            for j in 0..d[1] {
                let dst = d[0] * (j + d[1] * k);
                let src = p[0] * (j + p[1] * k);
                for i in 0..d[0] {
                    out[dst + i] = buf[src + i] * scale;
                }
            }
        }
        out
    }
}

/// Multi-coil encoding operator bound to a trajectory and coil set.
pub struct EncodingOperator {
    coils: CoilSet,
    traj: KSpaceTrajectory,
    tables: PhaseTables,
    toeplitz: OnceLock<ToeplitzKernel>,
}

impl EncodingOperator {
    pub fn new(coils: CoilSet, traj: KSpaceTrajectory) -> Self {
        let tables = PhaseTables::new(&traj, coils.dims());
        Self { coils, traj, tables, toeplitz: OnceLock::new() }
    }

    pub fn dims(&self) -> Dims {
        self.coils.dims()
    }

    pub fn coils(&self) -> &CoilSet {
        &self.coils
    }

    pub fn trajectory(&self) -> &KSpaceTrajectory {
        &self.traj
    }

    fn check_volume(&self, x: &ComplexVolume) -> Result<()> {
        if x.dims() != self.dims() {
            return Err(Error::DimMismatch(format!(
                "volume {:?} vs operator {:?}",
                x.dims(),
                self.dims()
            )));
        }
        Ok(())
    }

    fn check_data(&self, y: &KSpaceData) -> Result<()> {
        if y.coils() != self.coils.len() || y.samples() != self.traj.len() {
            return Err(Error::DimMismatch(format!(
                "data C={} M={} vs operator C={} M={}",
                y.coils(),
                y.samples(),
                self.coils.len(),
                self.traj.len()
            )));
        }
        Ok(())
    }

    /// `y_c = F (S_c . x)` for every coil.
    pub fn forward(&self, x: &ComplexVolume) -> Result<KSpaceData> {
        self.check_volume(x)?;
        let mut data = Vec::with_capacity(self.coils.len() * self.traj.len());
        for s in self.coils.maps() {
            let weighted: Vec<Complex64> = x.data().iter().zip(s.data()).map(|(a, b)| a * b).collect();
            data.extend(self.tables.forward(&weighted));
        }
        KSpaceData::new(self.coils.len(), self.traj.len(), data)
    }

    /// `sum_c conj(S_c) . F^H y_c`.
    pub fn adjoint(&self, y: &KSpaceData) -> Result<ComplexVolume> {
        self.check_data(y)?;
        self.weighted_adjoint(y, None)
    }

    /// Adjoint with per-sample weights applied first (`A^H D y`).
    pub fn weighted_adjoint(&self, y: &KSpaceData, weights: Option<&DensityWeights>) -> Result<ComplexVolume> {
        self.check_data(y)?;
        if let Some(w) = weights {
            if w.len() != self.traj.len() {
                return Err(Error::DimMismatch("density weights length".into()));
            }
        }
        let mut out = vec![Complex64::new(0.0, 0.0); voxel_count(self.dims())];
        for (c, s) in self.coils.maps().iter().enumerate() {
            let yc: Vec<Complex64> = match weights {
                Some(w) => y.coil(c).iter().zip(w.weights()).map(|(v, &wm)| v * wm).collect(),
                None => y.coil(c).to_vec(),
            };
            let back = self.tables.adjoint(&yc);
            for ((o, b), sv) in out.iter_mut().zip(&back).zip(s.data()) {
                *o += sv.conj() * b;
            }
        }
        ComplexVolume::from_vec(self.dims(), out)
    }

    /// `A^H A x` through the Toeplitz embedding (kernel built on first use).
    pub fn normal(&self, x: &ComplexVolume) -> Result<ComplexVolume> {
        self.check_volume(x)?;
        let kernel = self.toeplitz.get_or_init(|| ToeplitzKernel::new(&self.traj, self.dims(), None));
        let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
        for s in self.coils.maps() {
            let weighted: Vec<Complex64> = x.data().iter().zip(s.data()).map(|(a, b)| a * b).collect();
            let back = kernel.apply(&weighted);
            for ((o, b), sv) in out.iter_mut().zip(&back).zip(s.data()) {
                *o += sv.conj() * b;
            }
        }
        ComplexVolume::from_vec(self.dims(), out)
    }
}

pub fn forward(x: &ComplexVolume, coils: &CoilSet, traj: &KSpaceTrajectory) -> Result<KSpaceData> {
    EncodingOperator::new(coils.clone(), traj.clone()).forward(x)
}

pub fn adjoint(y: &KSpaceData, coils: &CoilSet, traj: &KSpaceTrajectory, dims: Dims) -> Result<ComplexVolume> {
    if coils.dims() != dims {
        return Err(Error::DimMismatch(format!("coils {:?} vs requested {dims:?}", coils.dims())));
    }
    EncodingOperator::new(coils.clone(), traj.clone()).adjoint(y)
}

/// Complex white Gaussian noise with total variance `sigma^2` per sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

/// Adds seeded noise to `clean`; real and imaginary parts each get
/// standard deviation `sigma / sqrt(2)`. Samples are drawn in coil-major order.
pub fn add_noise(clean: &KSpaceData, noise: NoiseModel) -> Result<KSpaceData> {
    if !(noise.sigma >= 0.0) || !noise.sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {}", noise.sigma)));
    }
    if noise.sigma == 0.0 {
        return Ok(clean.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = Normal::new(0.0, noise.sigma / 2f64.sqrt()).expect("valid std");
    let data = clean
        .data()
        .iter()
        .map(|z| z + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    KSpaceData::new(clean.coils(), clean.samples(), data)
}

pub fn simulate_acquisition(
    gt: &ComplexVolume,
    coils: &CoilSet,
    traj: &KSpaceTrajectory,
    noise: NoiseModel,
) -> Result<KSpaceData> {
    add_noise(&forward(gt, coils, traj)?, noise)
}
