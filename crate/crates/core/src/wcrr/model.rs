//! The rotation-averaged ridge regularizer
//! `R(x) = |G|^-1 sum_{g in G} sum_j <1, psi_j(W_j g x)>`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filters::FilterBank;
use super::potential::{psi, psi_d1, psi_d2, Potentials};
use super::spectral::{forward_real, inverse_real, negated_indices, split_pair};
use crate::error::{Error, Result};
use crate::fft::Fft3;
use crate::rotation::{rotate, Rotation, RotationSet};
use crate::volume::{voxel_count, ComplexVolume, Dims};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationPreset {
    Identity,
    AxisQuarterTurns,
    ZCyclic,
}

impl RotationPreset {
    pub fn build(self) -> RotationSet {
        match self {
            RotationPreset::Identity => RotationSet::identity_only(),
            RotationPreset::AxisQuarterTurns => RotationSet::axis_quarter_turns(),
            RotationPreset::ZCyclic => RotationSet::z_cyclic(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channel counts from the two input channels to the `J` feature channels.
    pub channel_plan: Vec<usize>,
    pub kernel_size: usize,
    pub knots: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub beta_init: f64,
    pub rotations: RotationPreset,
    /// Periodic grid on which `|U|` is measured.
    pub norm_grid: Dims,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let plan_ok = self.channel_plan.len() >= 2
            && self.channel_plan[0] == 2
            && self.channel_plan.iter().all(|&c| (1..=1024).contains(&c));
        let ok = plan_ok
            && (1..=15).contains(&self.kernel_size)
            && (2..=256).contains(&self.knots)
            && self.sigma_min > 0.0
            && self.sigma_max > self.sigma_min
            && self.sigma_max.is_finite()
            && self.beta_init > 0.0
            && self.beta_init.is_finite()
            && self.norm_grid.iter().all(|&n| (1..=256).contains(&n));
        if !ok {
            return Err(Error::Config(format!("invalid model configuration {self:?}")));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channel_plan: vec![2, 4, 8, 8],
            kernel_size: 3,
            knots: super::potential::DEFAULT_KNOTS,
            sigma_min: super::potential::SIGMA_MIN,
            sigma_max: super::potential::SIGMA_MAX,
            beta_init: 2.0,
            rotations: RotationPreset::AxisQuarterTurns,
            norm_grid: [24, 24, 24],
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Full-size plan 2 -> 8 -> 16 -> 32.
    pub fn full() -> Self {
        Self { channel_plan: vec![2, 8, 16, 32], ..Self::default() }
    }
}

/// FFT plan and composite response `[freq][j][in]` of `U` on one grid.
pub(crate) struct GridPlan {
    pub fft: Fft3,
    pub neg: Vec<usize>,
    pub transfer: Vec<Complex64>,
}

pub struct WcrrModel {
    bank: FilterBank,
    potentials: Potentials,
    rotations: RotationSet,
    norm_grid: Dims,
    seed: u64,
    plans: Mutex<HashMap<Dims, Arc<GridPlan>>>,
}

impl Clone for WcrrModel {
    fn clone(&self) -> Self {
        Self {
            bank: self.bank.clone(),
            potentials: self.potentials.clone(),
            rotations: self.rotations.clone(),
            norm_grid: self.norm_grid,
            seed: self.seed,
            plans: Mutex::new(HashMap::new()),
        }
    }
}

impl std::fmt::Debug for WcrrModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WcrrModel")
            .field("plan", &self.bank.channel_plan())
            .field("beta", &self.potentials.beta())
            .field("norm", &self.bank.norm())
            .field("rotations", &self.rotations.len())
            .finish()
    }
}

impl WcrrModel {
    /// Assembles a model and normalizes the bank on `norm_grid`.
    pub fn new(
        bank: FilterBank,
        potentials: Potentials,
        rotations: RotationSet,
        norm_grid: Dims,
        seed: u64,
    ) -> Result<Self> {
        if bank.inputs() != 2 {
            return Err(Error::InvalidArgument("the regularizer cascade takes two input channels".into()));
        }
        if bank.outputs() != potentials.channels {
            return Err(Error::DimMismatch(format!(
                "{} feature channels but {} potential channels",
                bank.outputs(),
                potentials.channels
            )));
        }
        let bank = bank.normalize(norm_grid)?;
        Ok(Self { bank, potentials, rotations, norm_grid, seed, plans: Mutex::new(HashMap::new()) })
    }

    /// Seeded random initialization.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let bank = FilterBank::random(&cfg.channel_plan, cfg.kernel_size, cfg.seed)?;
        let j = *cfg.channel_plan.last().expect("nonempty plan");
        let potentials = Potentials::new(j, cfg.knots, cfg.sigma_min, cfg.sigma_max, cfg.beta_init)?;
        Self::new(bank, potentials, cfg.rotations.build(), cfg.norm_grid, cfg.seed)
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn potentials(&self) -> &Potentials {
        &self.potentials
    }

    pub fn rotations(&self) -> &RotationSet {
        &self.rotations
    }

    pub fn norm_grid(&self) -> Dims {
        self.norm_grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn channels(&self) -> usize {
        self.potentials.channels
    }

    pub fn set_rotations(&mut self, rotations: RotationSet) {
        self.rotations = rotations;
    }

    /// Replaces the bank (renormalized on the model's grid).
    pub fn set_bank(&mut self, bank: FilterBank) -> Result<()> {
        if bank.inputs() != 2 || bank.outputs() != self.potentials.channels {
            return Err(Error::DimMismatch("replacement bank has a different channel layout".into()));
        }
        self.bank = bank.normalize(self.norm_grid)?;
        self.plans.lock().expect("plan cache").clear();
        Ok(())
    }

    pub fn set_potentials(&mut self, potentials: Potentials) -> Result<()> {
        if potentials.channels != self.potentials.channels {
            return Err(Error::DimMismatch("potential channel count".into()));
        }
        self.potentials = potentials;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.bank.param_count() + 1 + self.potentials.c.len()
    }

    /// Flat parameter vector: raw kernels layer by layer, then `b`, then the
    /// spline values row by row.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.bank.weights_flat();
        p.push(self.potentials.b);
        p.extend_from_slice(&self.potentials.c);
        p
    }

    /// Sets all parameters and renormalizes the bank.
    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::DimMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let nk = self.bank.param_count();
        let mut bank = self.bank.clone();
        bank.set_weights_flat(&p[..nk])?;
        self.bank = bank.normalize(self.norm_grid)?;
        self.potentials.b = p[nk];
        self.potentials.c.copy_from_slice(&p[nk + 1..]);
        self.plans.lock().expect("plan cache").clear();
        Ok(())
    }

    pub(crate) fn plan(&self, dims: Dims) -> Arc<GridPlan> {
        if let Some(p) = self.plans.lock().expect("plan cache").get(&dims) {
            return p.clone();
        }
        let plan = Arc::new(GridPlan {
            fft: Fft3::new(dims),
            neg: negated_indices(dims),
            transfer: self.bank.composite_response(dims).mat,
        });
        self.plans.lock().expect("plan cache").insert(dims, plan.clone());
        plan
    }

    /// Spectra of the real and imaginary channels of `x`.
    pub(crate) fn input_spectra(&self, plan: &GridPlan, x: &ComplexVolume) -> [Vec<Complex64>; 2] {
        let mut z = x.data().to_vec();
        plan.fft.forward(&mut z);
        let (a, b) = split_pair(&z, &plan.neg);
        [a, b]
    }

    /// Feature spectra `W X` from input spectra.
    pub(crate) fn feature_spectra(&self, plan: &GridPlan, spec: &[Vec<Complex64>; 2]) -> Vec<Vec<Complex64>> {
        let j = self.channels();
        let s = self.bank.scale();
        let n = spec[0].len();
        let mut out = vec![vec![Complex64::new(0.0, 0.0); n]; j];
        for f in 0..n {
            let t = &plan.transfer[f * 2 * j..(f + 1) * 2 * j];
            let (x0, x1) = (spec[0][f] * s, spec[1][f] * s);
            for (c, o) in out.iter_mut().enumerate() {
                o[f] = t[2 * c] * x0 + t[2 * c + 1] * x1;
            }
        }
        out
    }

    /// Real feature maps `W x` of an already rotated volume.
    pub(crate) fn features(&self, plan: &GridPlan, x: &ComplexVolume) -> Vec<Vec<f64>> {
        let spec = self.input_spectra(plan, x);
        inverse_real(&self.feature_spectra(plan, &spec), &plan.fft)
    }

    /// `W^T g` for real feature-shaped `g`, as a complex volume on `dims`.
    pub(crate) fn adjoint(&self, plan: &GridPlan, g: &[Vec<f64>], dims: Dims) -> ComplexVolume {
        let j = self.channels();
        let s = self.bank.scale();
        let spec = forward_real(g, &plan.fft, &plan.neg);
        let n = voxel_count(dims);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (f, b) in buf.iter_mut().enumerate() {
            let t = &plan.transfer[f * 2 * j..(f + 1) * 2 * j];
            let (mut o0, mut o1) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for (c, gs) in spec.iter().enumerate() {
                o0 += t[2 * c].conj() * gs[f];
                o1 += t[2 * c + 1].conj() * gs[f];
            }
            *b = (o0 + Complex64::new(-o1.im, o1.re)) * s;
        }
        plan.fft.inverse(&mut buf);
        let inv = 1.0 / n as f64;
        buf.iter_mut().for_each(|z| *z *= inv);
        ComplexVolume::from_vec(dims, buf).expect("finite adjoint")
    }

    fn rotated(x: &ComplexVolume, r: Rotation) -> ComplexVolume {
        if r.is_identity() {
            x.clone()
        } else {
            rotate(x, r)
        }
    }

    fn check_finite(x: &ComplexVolume) -> Result<()> {
        if x.data().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("regularizer input".into()));
        }
        Ok(())
    }

    /// Per-rotation contributions, summed in a fixed order.
    fn over_rotations<T: Send>(&self, f: impl Fn(Rotation) -> T + Sync) -> Vec<T> {
        self.rotations.elements().par_iter().map(|&r| f(r)).collect()
    }

    pub fn value(&self, x: &ComplexVolume, sigma: f64) -> Result<f64> {
        Self::check_finite(x)?;
        let alphas = self.potentials.alphas(sigma);
        let beta = self.potentials.beta();
        let parts = self.over_rotations(|r| {
            let xr = Self::rotated(x, r);
            let plan = self.plan(xr.dims());
            let a = self.features(&plan, &xr);
            a.iter()
                .zip(&alphas)
                .map(|(ch, &al)| ch.iter().map(|&t| psi(t, al, beta)).sum::<f64>())
                .sum::<f64>()
        });
        Ok(parts.iter().sum::<f64>() / self.rotations.len() as f64)
    }

    pub fn grad(&self, x: &ComplexVolume, sigma: f64) -> Result<ComplexVolume> {
        Ok(self.value_and_grad(x, sigma)?.1)
    }

    pub fn value_and_grad(&self, x: &ComplexVolume, sigma: f64) -> Result<(f64, ComplexVolume)> {
        Self::check_finite(x)?;
        let alphas = self.potentials.alphas(sigma);
        let beta = self.potentials.beta();
        let parts = self.over_rotations(|r| {
            let xr = Self::rotated(x, r);
            let plan = self.plan(xr.dims());
            let a = self.features(&plan, &xr);
            let mut value = 0.0;
            let g: Vec<Vec<f64>> = a
                .iter()
                .zip(&alphas)
                .map(|(ch, &al)| {
                    value += ch.iter().map(|&t| psi(t, al, beta)).sum::<f64>();
                    ch.iter().map(|&t| psi_d1(t, al, beta)).collect()
                })
                .collect();
            let back = self.adjoint(&plan, &g, xr.dims());
            (value, if r.is_identity() { back } else { rotate(&back, r.inverse()) })
        });
        Ok(self.average(parts, x.dims()))
    }

    /// Hessian-vector product `H(x) v`.
    pub fn hvp(&self, x: &ComplexVolume, sigma: f64, v: &ComplexVolume) -> Result<ComplexVolume> {
        if x.dims() != v.dims() {
            return Err(Error::DimMismatch(format!("x {:?} vs v {:?}", x.dims(), v.dims())));
        }
        Self::check_finite(x)?;
        Self::check_finite(v)?;
        let alphas = self.potentials.alphas(sigma);
        let beta = self.potentials.beta();
        let parts = self.over_rotations(|r| {
            let (xr, vr) = (Self::rotated(x, r), Self::rotated(v, r));
            let plan = self.plan(xr.dims());
            let a = self.features(&plan, &xr);
            let b = self.features(&plan, &vr);
            let g: Vec<Vec<f64>> = a
                .iter()
                .zip(&b)
                .zip(&alphas)
                .map(|((ach, bch), &al)| ach.iter().zip(bch).map(|(&t, &u)| psi_d2(t, al, beta) * u).collect())
                .collect();
            let back = self.adjoint(&plan, &g, xr.dims());
            (0.0, if r.is_identity() { back } else { rotate(&back, r.inverse()) })
        });
        Ok(self.average(parts, x.dims()).1)
    }

    fn average(&self, parts: Vec<(f64, ComplexVolume)>, dims: Dims) -> (f64, ComplexVolume) {
        let inv = 1.0 / self.rotations.len() as f64;
        let mut value = 0.0;
        let mut acc = ComplexVolume::zeros(dims);
        for (v, g) in parts {
            value += v;
            acc.axpy(Complex64::new(1.0, 0.0), &g);
        }
        (value * inv, acc.scaled(Complex64::new(inv, 0.0)))
    }

    /// Applies `W` (after rotation `r`) and returns real feature maps.
    pub fn apply_filters(&self, x: &ComplexVolume, r: Rotation) -> Vec<Vec<f64>> {
        let xr = Self::rotated(x, r);
        let plan = self.plan(xr.dims());
        self.features(&plan, &xr)
    }

    /// `W^T g` for feature maps on the (rotated) grid `dims`.
    pub fn apply_filters_adjoint(&self, g: &[Vec<f64>], dims: Dims) -> ComplexVolume {
        let plan = self.plan(dims);
        self.adjoint(&plan, g, dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: Dims, seed: u64, scale: f64) -> ComplexVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexVolume::from_fn(dims, |_, _, _| {
            Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
        })
    }

    fn tiny() -> WcrrModel {
        let cfg = ModelConfig { norm_grid: [8, 8, 8], seed: 3, ..ModelConfig::default() };
        WcrrModel::init(&cfg).unwrap()
    }

    #[test]
    fn zero_and_constant_inputs() {
        let m = tiny();
        let dims = [6, 6, 6];
        assert_eq!(m.value(&ComplexVolume::zeros(dims), 0.05).unwrap(), 0.0);
        let c = ComplexVolume::constant(dims, Complex64::new(0.3, -0.7));
        assert!(m.value(&c, 0.05).unwrap().abs() < 1e-20);
        assert!(m.grad(&c, 0.05).unwrap().norm() < 1e-12);
    }

    #[test]
    fn adjoint_pairing() {
        let m = tiny();
        let dims = [6, 5, 4];
        let x = random_volume(dims, 1, 1.0);
        let plan = m.plan(dims);
        let wx = m.features(&plan, &x);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g: Vec<Vec<f64>> = (0..m.channels()).map(|_| (0..120).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let lhs: f64 = wx.iter().zip(&g).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>()).sum();
        let rhs = x.dot(&m.adjoint(&plan, &g, dims));
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn parameter_round_trip() {
        let mut m = tiny();
        let p = m.parameters();
        assert_eq!(p.len(), m.param_count());
        m.set_parameters(&p).unwrap();
        assert_eq!(m.parameters(), p);
        assert!(m.set_parameters(&p[1..]).is_err());
    }

    #[test]
    fn hvp_dimension_mismatch() {
        let m = tiny();
        let r = m.hvp(&ComplexVolume::zeros([4, 4, 4]), 0.05, &ComplexVolume::zeros([4, 4, 5]));
        assert!(matches!(r, Err(Error::DimMismatch(_))));
    }
}
