//! Quarter-turn rotations of voxel grids.
//!
//! A single quarter turn maps source index `(i, j, k)` as follows
//! (`n*` are the source dimensions):
//!
//! | axis | destination index          | destination dims |
//! |------|----------------------------|------------------|
//! | X    | `(i, nz-1-k, j)`           | `(nx, nz, ny)`   |
//! | Y    | `(k, j, nx-1-i)`           | `(nz, ny, nx)`   |
//! | Z    | `(ny-1-j, i, k)`           | `(ny, nx, nz)`   |
//!
//! On centered coordinates these are the right-handed rotations by +90
//! degrees. Every rotation is a voxel permutation, so it is exactly orthogonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{linear_index, ComplexVolume, Dims};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rotation {
    pub axis: Axis,
    pub quarter_turns: u8,
}

/// Signed axis permutation: output axis `a` reads source axis `src[a]`,
/// reversed when `flip[a]` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AxisMap {
    pub src: [usize; 3],
    pub flip: [bool; 3],
}

impl AxisMap {
    pub const IDENTITY: AxisMap = AxisMap { src: [0, 1, 2], flip: [false; 3] };

    fn quarter(axis: Axis) -> AxisMap {
        match axis {
            Axis::X => AxisMap { src: [0, 2, 1], flip: [false, true, false] },
            Axis::Y => AxisMap { src: [2, 1, 0], flip: [false, false, true] },
            Axis::Z => AxisMap { src: [1, 0, 2], flip: [true, false, false] },
        }
    }

    /// The map applying `self` first, then `next`.
    pub fn then(&self, next: &AxisMap) -> AxisMap {
        let mut out = AxisMap::IDENTITY;
        for a in 0..3 {
            out.src[a] = self.src[next.src[a]];
            out.flip[a] = next.flip[a] ^ self.flip[next.src[a]];
        }
        out
    }

    pub fn inverse(&self) -> AxisMap {
        let mut out = AxisMap::IDENTITY;
        for a in 0..3 {
            out.src[self.src[a]] = a;
            out.flip[self.src[a]] = self.flip[a];
        }
        out
    }

    pub fn output_dims(&self, dims: Dims) -> Dims {
        [dims[self.src[0]], dims[self.src[1]], dims[self.src[2]]]
    }

    pub fn apply(&self, v: &ComplexVolume) -> ComplexVolume {
        let in_dims = v.dims();
        let out_dims = self.output_dims(in_dims);
        let strides = [1, in_dims[0], in_dims[0] * in_dims[1]];
        let mut out = ComplexVolume::zeros(out_dims);
        let src = v.data();
        let dst = out.data_mut();
        // Per output axis: source offset for output coordinate o.
        let offset = |a: usize, o: usize| -> usize {
            let s = self.src[a];
            let c = if self.flip[a] { in_dims[s] - 1 - o } else { o };
            c * strides[s]
        };
        for k in 0..out_dims[2] {
            let ok = offset(2, k);
            for j in 0..out_dims[1] {
                let oj = ok + offset(1, j);
                let base = linear_index(out_dims, 0, j, k);
                for i in 0..out_dims[0] {
                    dst[base + i] = src[oj + offset(0, i)];
                }
            }
        }
        out
    }
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { axis: Axis::Z, quarter_turns: 0 };

    pub fn new(axis: Axis, quarter_turns: u8) -> Result<Self> {
        if quarter_turns > 3 {
            return Err(Error::InvalidArgument(format!(
                "quarter_turns must be in 0..=3, got {quarter_turns}"
            )));
        }
        Ok(Self { axis, quarter_turns })
    }

    pub fn inverse(&self) -> Rotation {
        Rotation { axis: self.axis, quarter_turns: (4 - self.quarter_turns) % 4 }
    }

    pub fn is_identity(&self) -> bool {
        self.quarter_turns == 0
    }

    pub fn axis_map(&self) -> AxisMap {
        let q = AxisMap::quarter(self.axis);
        (0..self.quarter_turns).fold(AxisMap::IDENTITY, |acc, _| acc.then(&q))
    }
}

/// Applies `r` to `v`. Output dims are permuted for non-cubic inputs.
pub fn rotate(v: &ComplexVolume, r: Rotation) -> ComplexVolume {
    if r.is_identity() {
        return v.clone();
    }
    r.axis_map().apply(v)
}

/// Ordered rotation set averaged over by the regularizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationSet {
    elements: Vec<Rotation>,
    is_group: bool,
}

impl RotationSet {
    /// Builds a set; the first element must be the identity and elements must be distinct.
    pub fn new(elements: Vec<Rotation>) -> Result<Self> {
        if elements.first().map(|r| !r.is_identity()).unwrap_or(true) {
            return Err(Error::InvalidArgument("rotation set must start with the identity".into()));
        }
        let maps: Vec<AxisMap> = elements.iter().map(|r| r.axis_map()).collect();
        for (a, ma) in maps.iter().enumerate() {
            if maps[..a].contains(ma) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate rotation {:?} in set",
                    elements[a]
                )));
            }
        }
        let is_group = maps.iter().all(|a| maps.iter().all(|b| maps.contains(&a.then(b))));
        Ok(Self { elements, is_group })
    }

    /// `{Id, Rot_X, Rot_Y, Rot_Z}`: identity plus one quarter turn per axis.
    pub fn axis_quarter_turns() -> Self {
        Self::new(vec![
            Rotation::IDENTITY,
            Rotation { axis: Axis::X, quarter_turns: 1 },
            Rotation { axis: Axis::Y, quarter_turns: 1 },
            Rotation { axis: Axis::Z, quarter_turns: 1 },
        ])
        .expect("valid set")
    }

    /// The cyclic group of quarter turns about Z.
    pub fn z_cyclic() -> Self {
        Self::new((0..4).map(|q| Rotation { axis: Axis::Z, quarter_turns: q }).collect())
            .expect("valid set")
    }

    pub fn identity_only() -> Self {
        Self::new(vec![Rotation::IDENTITY]).expect("valid set")
    }

    pub fn elements(&self) -> &[Rotation] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn is_group(&self) -> bool {
        self.is_group
    }
}
