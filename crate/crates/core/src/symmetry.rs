//! Orthogonal maps of the 3×3×3 stencil lattice.
//!
//! Two subgroups of the cube group matter for the x-directed flux: maps that
//! fix the x axis (the flux is unchanged, used to symmetrize the network) and
//! axis cycles combined with the x reflection (the flux changes, used to
//! augment the dataset).

use nalgebra::Matrix3;

pub const STENCIL_LEN: usize = 27;
/// Index of the donor (central) cell.
pub const CENTER: usize = 13;
/// Index of the cell downstream of the donor along +x.
pub const DOWNWIND: usize = 14;

/// Offset `(i', j', k') ∈ {−1,0,1}³` to index, x fastest.
pub fn stencil_index(o: [i32; 3]) -> usize {
    ((o[0] + 1) + 3 * (o[1] + 1) + 9 * (o[2] + 1)) as usize
}

pub fn stencil_offset(idx: usize) -> [i32; 3] {
    let i = idx as i32;
    [i % 3 - 1, (i / 3) % 3 - 1, i / 9 - 1]
}

/// Signed permutation matrix: `(Q v)[i] = sign[i] · v[perm[i]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeMap {
    perm: [usize; 3],
    sign: [i32; 3],
}

impl LatticeMap {
    pub const IDENTITY: Self = Self {
        perm: [0, 1, 2],
        sign: [1, 1, 1],
    };

    pub fn new(perm: [usize; 3], sign: [i32; 3]) -> Self {
        debug_assert!({
            let mut p = perm;
            p.sort_unstable();
            p == [0, 1, 2]
        });
        Self { perm, sign }
    }

    pub fn apply(&self, v: [i32; 3]) -> [i32; 3] {
        [0, 1, 2].map(|i| self.sign[i] * v[self.perm[i]])
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            m[(i, self.perm[i])] = self.sign[i] as f64;
        }
        m
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut perm = [0; 3];
        let mut sign = [0; 3];
        for i in 0..3 {
            perm[i] = other.perm[self.perm[i]];
            sign[i] = self.sign[i] * other.sign[self.perm[i]];
        }
        Self { perm, sign }
    }

    pub fn inverse(&self) -> Self {
        let mut perm = [0; 3];
        let mut sign = [0; 3];
        for i in 0..3 {
            perm[self.perm[i]] = i;
            sign[self.perm[i]] = self.sign[i];
        }
        Self { perm, sign }
    }

    /// Index permutation carrying cell `c` to cell `Q c`.
    pub fn stencil_permutation(&self) -> StencilPermutation {
        let inv = self.inverse();
        let mut src = [0; STENCIL_LEN];
        for (n, s) in src.iter_mut().enumerate() {
            *s = stencil_index(inv.apply(stencil_offset(n)));
        }
        StencilPermutation(src)
    }
}

/// Permutation of stencil entries: `(σx)[n] = x[src[n]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StencilPermutation([usize; STENCIL_LEN]);

impl StencilPermutation {
    pub fn identity() -> Self {
        Self(std::array::from_fn(|i| i))
    }

    pub fn from_sources(src: [usize; STENCIL_LEN]) -> Option<Self> {
        let mut seen = [false; STENCIL_LEN];
        for &s in &src {
            if s >= STENCIL_LEN || std::mem::replace(&mut seen[s], true) {
                return None;
            }
        }
        Some(Self(src))
    }

    pub fn sources(&self) -> &[usize; STENCIL_LEN] {
        &self.0
    }

    pub fn apply<T: Copy>(&self, x: &[T; STENCIL_LEN]) -> [T; STENCIL_LEN] {
        std::array::from_fn(|n| x[self.0[n]])
    }

    pub fn apply_slice(&self, x: &[f64], out: &mut [f64]) {
        for (o, &s) in out.iter_mut().zip(self.0.iter()) {
            *o = x[s];
        }
    }

    /// Permutation equivalent to applying `other` first, then `self`.
    pub fn after(&self, other: &Self) -> Self {
        Self(std::array::from_fn(|n| other.0[self.0[n]]))
    }
}

/// Quarter turn about x taking +y to +z.
pub fn quarter_turn_x() -> LatticeMap {
    LatticeMap::new([0, 2, 1], [1, -1, 1])
}

/// Reflection `y ↦ −y`.
pub fn reflect_y() -> LatticeMap {
    LatticeMap::new([0, 1, 2], [1, -1, 1])
}

/// Reflection `x ↦ −x`.
pub fn reflect_x() -> LatticeMap {
    LatticeMap::new([0, 1, 2], [-1, 1, 1])
}

/// Cyclic axis relabeling `(x, y, z) ↦ (z, x, y)`.
pub fn axis_cycle() -> LatticeMap {
    LatticeMap::new([2, 0, 1], [1, 1, 1])
}

/// The 8 maps fixing the x axis: rotations by multiples of π/2 about x,
/// each optionally preceded by the y reflection.
pub fn flux_preserving_maps() -> [LatticeMap; 8] {
    let r = quarter_turn_x();
    let mut out = [LatticeMap::IDENTITY; 8];
    let mut rot = LatticeMap::IDENTITY;
    for k in 0..4 {
        out[k] = rot;
        out[k + 4] = rot.compose(&reflect_y());
        rot = r.compose(&rot);
    }
    out
}

/// The 6 augmentation maps `cycle^k ∘ reflect_x^r`, indexed `σ = 3r + k`;
/// `σ = 0` is the identity.
pub fn augmentation_maps() -> [LatticeMap; 6] {
    let c = axis_cycle();
    std::array::from_fn(|sigma| {
        let (k, r) = (sigma % 3, sigma / 3);
        let mut m = if r == 1 { reflect_x() } else { LatticeMap::IDENTITY };
        for _ in 0..k {
            m = c.compose(&m);
        }
        m
    })
}
