//! Ellipsoid phantoms with a smooth synthetic phase.
//!
//! Voxel `i` along an axis of length `n` sits at normalized coordinate
//! `(i - n/2) / (n/2)` (integer division), so the grid spans `[-1, 1)` and
//! the voxel at `n/2` is the origin.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::volume::{ComplexVolume, Dims};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// Z-Y-X Euler angles in radians: rotation `Rz(a0) * Ry(a1) * Rx(a2)`.
    pub euler: [f64; 3],
    /// Added to every voxel inside the ellipsoid.
    pub intensity: f64,
}

impl Ellipsoid {
    fn rotation(&self) -> [[f64; 3]; 3] {
        let (sz, cz) = self.euler[0].sin_cos();
        let (sy, cy) = self.euler[1].sin_cos();
        let (sx, cx) = self.euler[2].sin_cos();
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let r = self.rotation();
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let mut acc = 0.0;
        for a in 0..3 {
            // body-frame coordinate: (R^T d)_a
            let q = r[0][a] * d[0] + r[1][a] * d[1] + r[2][a] * d[2];
            acc += (q / self.semi_axes[a]).powi(2);
        }
        acc <= 1.0
    }
}

/// Phase `c + <linear, p> + sum_a quadratic[a] * p_a^2` in radians.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseModel {
    pub constant: f64,
    pub linear: [f64; 3],
    pub quadratic: [f64; 3],
}

impl PhaseModel {
    pub fn eval(&self, p: [f64; 3]) -> f64 {
        self.constant
            + (0..3).map(|a| self.linear[a] * p[a] + self.quadratic[a] * p[a] * p[a]).sum::<f64>()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidPhantom {
    pub ellipsoids: Vec<Ellipsoid>,
    #[serde(default)]
    pub phase: PhaseModel,
}

pub fn grid_coordinate(i: usize, n: usize) -> f64 {
    let half = (n / 2).max(1) as f64;
    (i as f64 - (n / 2) as f64) / half
}

impl EllipsoidPhantom {
    /// 3D Shepp-Logan head (high-contrast intensities) with a mild smooth phase.
    pub fn shepp_logan() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        #[rustfmt::skip]
        let table: [[f64; 8]; 10] = [
            // intensity, a, b, c, x0, y0, z0, phi(deg)
            [ 1.0, 0.6900, 0.920, 0.810,  0.00,  0.0000,  0.00,   0.0],
            [-0.8, 0.6624, 0.874, 0.780,  0.00, -0.0184,  0.00,   0.0],
            [-0.2, 0.1100, 0.310, 0.220,  0.22,  0.0000,  0.00, -18.0],
            [-0.2, 0.1600, 0.410, 0.280, -0.22,  0.0000,  0.00,  18.0],
            [ 0.1, 0.2100, 0.250, 0.410,  0.00,  0.3500, -0.15,   0.0],
            [ 0.1, 0.0460, 0.046, 0.050,  0.00,  0.1000,  0.25,   0.0],
            [ 0.1, 0.0460, 0.046, 0.050,  0.00, -0.1000,  0.25,   0.0],
            [ 0.1, 0.0460, 0.023, 0.050, -0.08, -0.6050,  0.00,   0.0],
            [ 0.1, 0.0230, 0.023, 0.020,  0.00, -0.6060,  0.00,   0.0],
            [ 0.1, 0.0230, 0.046, 0.020,  0.06, -0.6050,  0.00,   0.0],
        ];
        let ellipsoids = table
            .iter()
            .map(|r| Ellipsoid {
                center: [r[4], r[5], r[6]],
                semi_axes: [r[1], r[2], r[3]],
                euler: [r[7] * deg, 0.0, 0.0],
                intensity: r[0],
            })
            .collect();
        Self {
            ellipsoids,
            phase: PhaseModel { constant: 0.3, linear: [0.8, -0.5, 0.3], quadratic: [0.2, 0.1, -0.1] },
        }
    }

    /// Random head-like phantom: an outer shell, an inner body, and a handful
    /// of interior structures. Magnitudes stay below 3.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outer = [
            rng.random_range(0.7..0.92),
            rng.random_range(0.7..0.92),
            rng.random_range(0.7..0.92),
        ];
        let shell = rng.random_range(0.05..0.1);
        let body = rng.random_range(0.2..0.45);
        let tilt = [rng.random_range(-0.3..0.3), 0.0, 0.0];
        let mut ellipsoids = vec![
            Ellipsoid { center: [0.0; 3], semi_axes: outer, euler: tilt, intensity: 1.0 },
            Ellipsoid {
                center: [0.0; 3],
                semi_axes: [outer[0] - shell, outer[1] - shell, outer[2] - shell],
                euler: tilt,
                intensity: body - 1.0,
            },
        ];
        let count = rng.random_range(3..7);
        for _ in 0..count {
            let semi = [
                rng.random_range(0.06..0.3),
                rng.random_range(0.06..0.3),
                rng.random_range(0.06..0.3),
            ];
            let reach = 0.55;
            ellipsoids.push(Ellipsoid {
                center: [
                    rng.random_range(-reach..reach),
                    rng.random_range(-reach..reach),
                    rng.random_range(-reach..reach),
                ],
                semi_axes: semi,
                euler: [
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                ],
                intensity: rng.random_range(-0.15..0.35),
            });
        }
        let phase = PhaseModel {
            constant: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            linear: [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ],
            quadratic: [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ],
        };
        Self { ellipsoids, phase }
    }

    /// Real-valued intensity at a normalized point (sum over containing ellipsoids).
    pub fn intensity_at(&self, p: [f64; 3]) -> f64 {
        self.ellipsoids.iter().filter(|e| e.contains(p)).map(|e| e.intensity).sum()
    }
}

/// Rasterizes `spec` on a grid of `dims` voxels.
pub fn generate_phantom(spec: &EllipsoidPhantom, dims: Dims) -> ComplexVolume {
    ComplexVolume::from_fn(dims, |i, j, k| {
        let p = [
            grid_coordinate(i, dims[0]),
            grid_coordinate(j, dims[1]),
            grid_coordinate(k, dims[2]),
        ];
        let magnitude = spec.intensity_at(p);
        if magnitude == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar(magnitude, spec.phase.eval(p))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spec_is_zero() {
        let v = generate_phantom(&EllipsoidPhantom::default(), [5, 6, 7]);
        assert!(v.data().iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn centered_sphere() {
        let spec = EllipsoidPhantom {
            ellipsoids: vec![Ellipsoid {
                center: [0.0; 3],
                semi_axes: [0.5; 3],
                euler: [0.0; 3],
                intensity: 1.0,
            }],
            phase: PhaseModel::default(),
        };
        let v = generate_phantom(&spec, [16, 16, 16]);
        assert_eq!(v.get(8, 8, 8), Complex64::new(1.0, 0.0));
        assert_eq!(v.get(0, 0, 0), Complex64::new(0.0, 0.0));
        assert_eq!(v.get(15, 15, 15), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn rotation_matrix_is_orthonormal() {
        let e = Ellipsoid { center: [0.0; 3], semi_axes: [1.0; 3], euler: [0.3, -1.1, 2.0], intensity: 1.0 };
        let r = e.rotation();
        for a in 0..3 {
            for b in 0..3 {
                let d: f64 = (0..3).map(|c| r[c][a] * r[c][b]).sum();
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn random_phantoms_are_bounded_and_deterministic() {
        for seed in 0..5 {
            let a = generate_phantom(&EllipsoidPhantom::random(seed), [12, 12, 12]);
            let b = generate_phantom(&EllipsoidPhantom::random(seed), [12, 12, 12]);
            assert_eq!(a, b);
            assert!(a.magnitudes().iter().all(|&m| m < 3.0));
            assert!(a.norm() > 0.0);
        }
    }
}
