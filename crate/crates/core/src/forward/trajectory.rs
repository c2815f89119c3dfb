use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample locations in cycles per voxel, each component in `[-0.5, 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceTrajectory {
    points: Vec<[f64; 3]>,
}

impl KSpaceTrajectory {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("trajectory needs at least one sample".into()));
        }
        for (m, p) in points.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite() || *c < -0.5 || *c >= 0.5) {
                return Err(Error::InvalidArgument(format!(
                    "sample {m} at {p:?} outside [-0.5, 0.5)^3"
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Every grid frequency `f / n` (centered) of an `n`-voxel grid.
    pub fn cartesian(dims: [usize; 3]) -> Self {
        let mut points = Vec::with_capacity(dims.iter().product());
        let freq = |q: usize, n: usize| (q as f64 - (n / 2) as f64) / n as f64;
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    points.push([freq(i, dims[0]), freq(j, dims[1]), freq(k, dims[2])]);
                }
            }
        }
        Self { points }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Spokes through the origin along Fibonacci-hemisphere directions.
    Radial3d { samples_per_spoke: usize },
    /// I.i.d. samples with 3D density proportional to `|k|^-exponent` on the
    /// ball of radius 0.5; requires `0 <= exponent < 3`.
    RandomVds { exponent: f64, seed: u64 },
}

pub fn generate_trajectory(kind: &TrajectoryKind, total: usize) -> Result<KSpaceTrajectory> {
    if total == 0 {
        return Err(Error::InvalidArgument("trajectory needs at least one sample".into()));
    }
    let points = match *kind {
        TrajectoryKind::Radial3d { samples_per_spoke } => {
            if samples_per_spoke == 0 {
                return Err(Error::InvalidArgument("samples_per_spoke must be positive".into()));
            }
            let spokes = total.div_ceil(samples_per_spoke);
            let golden = PI * (3.0 - 5f64.sqrt());
            let mut points = Vec::with_capacity(spokes * samples_per_spoke);
            for s in 0..spokes {
                let z = 1.0 - (s as f64 + 0.5) / spokes as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * s as f64;
                let dir = [r * phi.cos(), r * phi.sin(), z];
                for q in 0..samples_per_spoke {
                    let t = -0.5 + q as f64 / samples_per_spoke as f64;
                    points.push(dir.map(|d| t * d));
                }
            }
            points.truncate(total);
            points
        }
        TrajectoryKind::RandomVds { exponent, seed } => {
            if !(0.0..3.0).contains(&exponent) {
                return Err(Error::InvalidArgument(format!(
                    "density exponent must lie in [0, 3), got {exponent}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..total)
                .map(|_| {
                    let u: f64 = rng.random();
                    let radius = 0.5 * u.powf(1.0 / (3.0 - exponent));
                    let z: f64 = rng.random_range(-1.0..1.0);
                    let phi: f64 = rng.random_range(0.0..2.0 * PI);
                    let r = (1.0 - z * z).sqrt();
                    [radius * r * phi.cos(), radius * r * phi.sin(), radius * z]
                })
                .collect()
        }
    };
    KSpaceTrajectory::new(points)
}

/// CDF of the sample radius for [`TrajectoryKind::RandomVds`].
pub fn vds_radius_cdf(radius: f64, exponent: f64) -> f64 {
    (2.0 * radius).clamp(0.0, 1.0).powf(3.0 - exponent)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_spoke_is_collinear_through_origin() {
        let t = generate_trajectory(&TrajectoryKind::Radial3d { samples_per_spoke: 5 }, 5).unwrap();
        assert_eq!(t.len(), 5);
        let p = t.points();
        let dir = p[0];
        for q in p {
            // q is parallel to dir: cross product vanishes, so the line passes through 0
            let cross = [
                q[1] * dir[2] - q[2] * dir[1],
                q[2] * dir[0] - q[0] * dir[2],
                q[0] * dir[1] - q[1] * dir[0],
            ];
            assert!(cross.iter().all(|c| c.abs() < 1e-15));
        }
    }

    #[test]
    fn points_in_range() {
        for kind in [
            TrajectoryKind::Radial3d { samples_per_spoke: 32 },
            TrajectoryKind::RandomVds { exponent: 1.5, seed: 3 },
        ] {
            let t = generate_trajectory(&kind, 5000).unwrap();
            assert_eq!(t.len(), 5000);
            assert!(t.points().iter().flatten().all(|c| (-0.5..0.5).contains(c)));
        }
    }

    #[test]
    fn vds_radius_histogram() {
        let exponent = 1.2;
        let n = 100_000;
        let t = generate_trajectory(&TrajectoryKind::RandomVds { exponent, seed: 11 }, n).unwrap();
        // equal-mass bins: edges at the CDF deciles
        let bins = 10;
        let edges: Vec<f64> =
            (0..=bins).map(|b| 0.5 * (b as f64 / bins as f64).powf(1.0 / (3.0 - exponent))).collect();
        let mut counts = vec![0usize; bins];
        for p in t.points() {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let b = edges[1..].iter().position(|&e| r < e).unwrap_or(bins - 1);
            counts[b] += 1;
        }
        for (b, &c) in counts.iter().enumerate() {
            let mass = vds_radius_cdf(edges[b + 1], exponent) - vds_radius_cdf(edges[b], exponent);
            let expected = n as f64 * mass;
            assert!((c as f64 - expected).abs() <= 0.05 * expected, "bin {b}: {c} vs {expected}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(generate_trajectory(&TrajectoryKind::Radial3d { samples_per_spoke: 4 }, 0).is_err());
        assert!(generate_trajectory(&TrajectoryKind::RandomVds { exponent: 3.0, seed: 0 }, 4).is_err());
        assert!(KSpaceTrajectory::new(vec![[0.5, 0.0, 0.0]]).is_err());
        assert!(KSpaceTrajectory::new(vec![]).is_err());
    }
}
