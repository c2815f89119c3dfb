//! Complex-valued 3D volumes.
//!
//! A [`ComplexVolume`] is the reconstruction variable. Voxels are stored
//! x-fastest (`idx = i + nx * (j + ny * k)`); each voxel is a complex value,
//! which the regularizer sees as two real channels (real, imaginary).

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Voxel counts `(nx, ny, nz)`.
pub type Dims = [usize; 3];

pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn linear_index(dims: Dims, i: usize, j: usize, k: usize) -> usize {
    i + dims[0] * (j + dims[1] * k)
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!("dims must be positive, got {dims:?}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVolume {
    dims: Dims,
    data: Vec<Complex64>,
}

impl ComplexVolume {
    /// All-zero volume. Panics if any dimension is zero.
    pub fn zeros(dims: Dims) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "dims must be positive, got {dims:?}");
        Self { dims, data: vec![Complex64::new(0.0, 0.0); voxel_count(dims)] }
    }

    pub fn constant(dims: Dims, value: Complex64) -> Self {
        let mut v = Self::zeros(dims);
        v.data.fill(value);
        v
    }

    /// Builds a volume from x-fastest voxel data, validating length and finiteness.
    pub fn from_vec(dims: Dims, data: Vec<Complex64>) -> Result<Self> {
        check_dims(dims)?;
        if data.len() != voxel_count(dims) {
            return Err(Error::DimMismatch(format!(
                "expected {} voxels for {dims:?}, got {}",
                voxel_count(dims),
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("volume data".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut v = Self::zeros(dims);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    v.data[linear_index(dims, i, j, k)] = f(i, j, k);
                }
            }
        }
        v
    }

    /// Interleaved `(re, im)` real vector of length `2N`.
    pub fn from_real(dims: Dims, real: &[f64]) -> Result<Self> {
        if real.len() != 2 * voxel_count(dims) {
            return Err(Error::DimMismatch(format!(
                "expected {} reals for {dims:?}, got {}",
                2 * voxel_count(dims),
                real.len()
            )));
        }
        let data = real.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Self::from_vec(dims, data)
    }

    pub fn to_real(&self) -> Vec<f64> {
        self.data.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    /// Two planar channels: all real parts followed by all imaginary parts.
    pub fn to_planar(&self) -> Vec<f64> {
        let n = self.data.len();
        let mut out = vec![0.0; 2 * n];
        for (idx, z) in self.data.iter().enumerate() {
            out[idx] = z.re;
            out[n + idx] = z.im;
        }
        out
    }

    pub fn from_planar(dims: Dims, planar: &[f64]) -> Self {
        let n = voxel_count(dims);
        assert_eq!(planar.len(), 2 * n, "planar buffer length");
        let data = (0..n).map(|idx| Complex64::new(planar[idx], planar[n + idx])).collect();
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Number of voxels `N`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[linear_index(self.dims, i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: Complex64) {
        let idx = linear_index(self.dims, i, j, k);
        self.data[idx] = value;
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Real inner product `Re <self, other>` on the 2-channel representation.
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data.iter().zip(&other.data).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self { dims: self.dims, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: Complex64, other: &Self) {
        assert_eq!(self.dims, other.dims);
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dims, other.dims);
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self { dims: self.dims, data }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Copies the sub-volume of `size` starting at `corner`.
    pub fn extract_patch(&self, corner: [usize; 3], size: Dims) -> Result<Self> {
        check_dims(size)?;
        for ax in 0..3 {
            if corner[ax] + size[ax] > self.dims[ax] {
                return Err(Error::OutOfBounds(format!(
                    "patch corner {corner:?} size {size:?} exceeds volume {:?}",
                    self.dims
                )));
            }
        }
        let mut out = Self::zeros(size);
        for k in 0..size[2] {
            for j in 0..size[1] {
                let src = linear_index(self.dims, corner[0], corner[1] + j, corner[2] + k);
                let dst = linear_index(size, 0, j, k);
                out.data[dst..dst + size[0]].copy_from_slice(&self.data[src..src + size[0]]);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: Dims, seed: u64) -> ComplexVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexVolume::from_fn(dims, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn full_patch_is_copy() {
        let v = random_volume([5, 4, 3], 1);
        assert_eq!(v.extract_patch([0, 0, 0], [5, 4, 3]).unwrap(), v);
    }

    #[test]
    fn single_voxel_patch() {
        let v = random_volume([5, 4, 3], 2);
        let p = v.extract_patch([3, 1, 2], [1, 1, 1]).unwrap();
        assert_eq!(p.get(0, 0, 0), v.get(3, 1, 2));
    }

    #[test]
    fn random_patch_matches_offsets() {
        let v = random_volume([9, 7, 6], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let size = [rng.random_range(1..=9), rng.random_range(1..=7), rng.random_range(1..=6)];
            let corner = [
                rng.random_range(0..=9 - size[0]),
                rng.random_range(0..=7 - size[1]),
                rng.random_range(0..=6 - size[2]),
            ];
            let p = v.extract_patch(corner, size).unwrap();
            for k in 0..size[2] {
                for j in 0..size[1] {
                    for i in 0..size[0] {
                        assert_eq!(p.get(i, j, k), v.get(corner[0] + i, corner[1] + j, corner[2] + k));
                    }
                }
            }
        }
    }

    #[test]
    fn patch_out_of_bounds() {
        let v = random_volume([4, 4, 4], 5);
        assert!(matches!(v.extract_patch([2, 0, 0], [3, 1, 1]), Err(Error::OutOfBounds(_))));
        assert!(v.extract_patch([0, 0, 0], [0, 1, 1]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let data = vec![Complex64::new(f64::NAN, 0.0); 8];
        assert!(matches!(ComplexVolume::from_vec([2, 2, 2], data), Err(Error::NonFinite(_))));
    }

    #[test]
    fn planar_and_real_layouts() {
        let v = random_volume([3, 2, 2], 6);
        assert_eq!(ComplexVolume::from_planar(v.dims(), &v.to_planar()), v);
        assert_eq!(ComplexVolume::from_real(v.dims(), &v.to_real()).unwrap(), v);
        assert_eq!(v.to_real().len(), 2 * v.len());
    }
}
