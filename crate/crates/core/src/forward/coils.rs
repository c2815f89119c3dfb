use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::phantom::grid_coordinate;
use crate::volume::{ComplexVolume, Dims};

/// Coil sensitivity maps with sum-of-squares normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSet {
    dims: Dims,
    maps: Vec<ComplexVolume>,
}

pub const SSOS_TOLERANCE: f64 = 1e-6;

impl CoilSet {
    /// Validates dims agreement and `sum_c |S_c|^2 = 1` voxelwise.
    pub fn new(maps: Vec<ComplexVolume>) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::InvalidArgument("empty coil set".into()))?;
        let dims = first.dims();
        if maps.iter().any(|m| m.dims() != dims) {
            return Err(Error::DimMismatch("coil maps differ in dims".into()));
        }
        for idx in 0..first.len() {
            let ss: f64 = maps.iter().map(|m| m.data()[idx].norm_sqr()).sum();
            if (ss - 1.0).abs() > SSOS_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "coil sum of squares {ss} at voxel {idx} is not 1"
                )));
            }
        }
        Ok(Self { dims, maps })
    }

    /// Single coil with unit sensitivity everywhere.
    pub fn unit(dims: Dims) -> Self {
        Self { dims, maps: vec![ComplexVolume::constant(dims, Complex64::new(1.0, 0.0))] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[ComplexVolume] {
        &self.maps
    }
}

/// `count` coils: Gaussian magnitude bumps centred on a sphere around the
/// volume, each with a linear phase ramp, normalized to unit sum of squares.
pub fn synth_coils(dims: Dims, count: usize) -> Result<CoilSet> {
    if count == 0 {
        return Err(Error::InvalidArgument("coil count must be positive".into()));
    }
    let golden = PI * (3.0 - 5f64.sqrt());
    let radius = 1.3;
    let width = 0.9;
    let centers: Vec<[f64; 3]> = (0..count)
        .map(|c| {
            let z = 1.0 - 2.0 * (c as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * c as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect();
    let mut maps: Vec<ComplexVolume> = centers
        .iter()
        .enumerate()
        .map(|(c, dir)| {
            let offset = 2.0 * PI * c as f64 / count as f64;
            ComplexVolume::from_fn(dims, |i, j, k| {
                let p = [
                    grid_coordinate(i, dims[0]),
                    grid_coordinate(j, dims[1]),
                    grid_coordinate(k, dims[2]),
                ];
                let d2: f64 = (0..3).map(|a| (p[a] - radius * dir[a]).powi(2)).sum();
                let phase = offset + 0.5 * PI * (0..3).map(|a| dir[a] * p[a]).sum::<f64>();
                Complex64::from_polar((-d2 / (2.0 * width * width)).exp(), phase)
            })
        })
        .collect();
    let n = maps[0].len();
    for idx in 0..n {
        let ss: f64 = maps.iter().map(|m| m.data()[idx].norm_sqr()).sum();
        let inv = 1.0 / ss.sqrt();
        for m in maps.iter_mut() {
            m.data_mut()[idx] *= inv;
        }
    }
    CoilSet::new(maps)
}
