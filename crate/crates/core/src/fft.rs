//! Unnormalized 3D FFT on x-fastest complex grids.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::volume::{voxel_count, Dims};

pub struct Fft3 {
    dims: Dims,
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: Dims) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|n| planner.plan_fft_forward(n));
        let inverse = dims.map(|n| planner.plan_fft_inverse(n));
        Self { dims, forward, inverse }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// In-place forward transform, `X(f) = sum_p x(p) exp(-i 2 pi f.p / n)`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// In-place inverse transform without the `1/N` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let d = self.dims;
        assert_eq!(data.len(), voxel_count(d));
        plans[0].process(data);
        let mut lines = vec![Complex64::new(0.0, 0.0); data.len()];
        // axis 1: gather columns (i, k) into contiguous lines of length ny
        for k in 0..d[2] {
            for i in 0..d[0] {
                let line = (k * d[0] + i) * d[1];
                for j in 0..d[1] {
                    lines[line + j] = data[i + d[0] * (j + d[1] * k)];
                }
            }
        }
        plans[1].process(&mut lines);
        for k in 0..d[2] {
            for i in 0..d[0] {
                let line = (k * d[0] + i) * d[1];
                for j in 0..d[1] {
                    data[i + d[0] * (j + d[1] * k)] = lines[line + j];
                }
            }
        }
        // axis 2: lines indexed by the xy-plane offset
        let plane = d[0] * d[1];
        for p in 0..plane {
            for k in 0..d[2] {
                lines[p * d[2] + k] = data[p + plane * k];
            }
        }
        plans[2].process(&mut lines);
        for p in 0..plane {
            for k in 0..d[2] {
                data[p + plane * k] = lines[p * d[2] + k];
            }
        }
    }
}
