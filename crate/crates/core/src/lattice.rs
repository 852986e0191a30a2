//! Finite truncated dyadic lattice over `[0, 2^T)^N` with leaf side `2^-L`.
//!
//! Cubes are addressed by level and Morton (Z-order) index inside the level.
//! With this layout the leaves under any cube form one contiguous range, and
//! parent/child relations are bit shifts.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{DyadError, Result};

/// Hard cap on the number of leaves a lattice may carry.
pub const MAX_LEAF_BITS: u32 = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicLattice {
    dim: u32,
    top: u32,
    leaf: u32,
}

/// A dyadic cube: level `l` has side `2^-l`; `index` is the Morton index of
/// the cube among the `2^{N(T+l)}` cubes of that level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CubeId {
    pub level: i32,
    pub index: u64,
}

impl DyadicLattice {
    pub fn new(dim: u32, top: u32, leaf: u32) -> Result<Self> {
        if dim == 0 {
            return Err(DyadError::InvalidArgument("dimension must be positive".into()));
        }
        let bits = (top + leaf) as u64 * dim as u64;
        if bits > MAX_LEAF_BITS as u64 {
            return Err(DyadError::SizeOverflow { leaves: 1usize << bits.min(62), max: 1 << MAX_LEAF_BITS });
        }
        Ok(Self { dim, top, leaf })
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn top(&self) -> u32 {
        self.top
    }

    pub fn leaf(&self) -> u32 {
        self.leaf
    }

    /// Number of bisection steps from the root to a leaf.
    pub fn depth(&self) -> u32 {
        self.top + self.leaf
    }

    pub fn min_level(&self) -> i32 {
        -(self.top as i32)
    }

    pub fn max_level(&self) -> i32 {
        self.leaf as i32
    }

    pub fn children_per_cube(&self) -> usize {
        1 << self.dim
    }

    pub fn leaf_count(&self) -> usize {
        1usize << (self.depth() * self.dim)
    }

    /// Leaves per coordinate axis.
    pub fn side_cells(&self) -> usize {
        1usize << self.depth()
    }

    pub fn check_level(&self, level: i32) -> Result<()> {
        if level < self.min_level() || level > self.max_level() {
            return Err(DyadError::LevelOutOfRange { level, min: self.min_level(), max: self.max_level() });
        }
        Ok(())
    }

    pub fn cubes_at(&self, level: i32) -> u64 {
        let rel = (level - self.min_level()) as u32;
        1u64 << (rel * self.dim)
    }

    pub fn check(&self, cube: CubeId) -> Result<()> {
        self.check_level(cube.level)
            .map_err(|_| DyadError::DomainMismatch(format!("cube {cube:?} has level outside lattice")))?;
        if cube.index >= self.cubes_at(cube.level) {
            return Err(DyadError::DomainMismatch(format!("cube {cube:?} index outside lattice")));
        }
        Ok(())
    }

    pub fn root(&self) -> CubeId {
        CubeId { level: self.min_level(), index: 0 }
    }

    pub fn is_leaf(&self, cube: CubeId) -> bool {
        cube.level == self.max_level()
    }

    /// Lebesgue volume `|Q| = 2^{-lN}`.
    pub fn volume(&self, cube: CubeId) -> f64 {
        level_volume(self.dim, cube.level)
    }

    pub fn side(&self, level: i32) -> f64 {
        (-(level as f64)).exp2()
    }

    /// Build a cube from integer coordinates (`0 <= k_i < 2^{T+l}`).
    pub fn cube(&self, level: i32, coords: &[u64]) -> Result<CubeId> {
        self.check_level(level)?;
        if coords.len() != self.dim as usize {
            return Err(DyadError::InvalidArgument(format!("expected {} coordinates, got {}", self.dim, coords.len())));
        }
        let rel = (level - self.min_level()) as u32;
        let limit = 1u64 << rel;
        if coords.iter().any(|&k| k >= limit) {
            return Err(DyadError::DomainMismatch(format!("coordinates {coords:?} outside level {level}")));
        }
        Ok(CubeId { level, index: interleave(coords, rel, self.dim) })
    }

    pub fn coords(&self, cube: CubeId) -> Vec<u64> {
        let rel = (cube.level - self.min_level()) as u32;
        deinterleave(cube.index, rel, self.dim)
    }

    pub fn parent(&self, cube: CubeId) -> Option<CubeId> {
        self.ancestor(cube, 1)
    }

    /// `Q^{(r)}`, defined iff `level(Q) - r >= -T`.
    pub fn ancestor(&self, cube: CubeId, r: u32) -> Option<CubeId> {
        let level = cube.level - r as i32;
        if level < self.min_level() {
            return None;
        }
        Some(CubeId { level, index: cube.index >> (r * self.dim) })
    }

    pub fn children(&self, cube: CubeId) -> impl Iterator<Item = CubeId> {
        let n = if self.is_leaf(cube) { 0 } else { 1u64 << self.dim };
        let base = cube.index << self.dim;
        let level = cube.level + 1;
        (0..n).map(move |c| CubeId { level, index: base + c })
    }

    /// Child with digit `c` (bit `i` of `c` selects the upper half along axis `i`).
    pub fn child(&self, cube: CubeId, c: usize) -> CubeId {
        CubeId { level: cube.level + 1, index: (cube.index << self.dim) + c as u64 }
    }

    /// `ch^{(m)}(Q)`: descendants exactly `m` levels down.
    pub fn descendants(&self, cube: CubeId, m: u32) -> Result<impl Iterator<Item = CubeId>> {
        let level = cube.level + m as i32;
        self.check_level(level)
            .map_err(|_| DyadError::InsufficientResolution(format!("{cube:?} has no descendants {m} levels down")))?;
        let shift = m * self.dim;
        let base = cube.index << shift;
        Ok((0..(1u64 << shift)).map(move |i| CubeId { level, index: base + i }))
    }

    /// Digit of `cube` inside its parent.
    pub fn child_digit(&self, cube: CubeId) -> usize {
        (cube.index & ((1u64 << self.dim) - 1)) as usize
    }

    pub fn contains(&self, outer: CubeId, inner: CubeId) -> bool {
        if inner.level < outer.level {
            return false;
        }
        let r = (inner.level - outer.level) as u32;
        inner.index >> (r * self.dim) == outer.index
    }

    /// Contiguous range of Morton leaf indices covered by `cube`.
    pub fn leaf_range(&self, cube: CubeId) -> Range<usize> {
        let shift = ((self.max_level() - cube.level) as u32) * self.dim;
        let start = (cube.index as usize) << shift;
        start..start + (1usize << shift)
    }

    pub fn leaf_cube(&self, leaf: usize) -> CubeId {
        CubeId { level: self.max_level(), index: leaf as u64 }
    }

    /// The cube at `level` containing the given leaf.
    pub fn cube_of_leaf(&self, leaf: usize, level: i32) -> CubeId {
        let shift = ((self.max_level() - level) as u32) * self.dim;
        CubeId { level, index: (leaf >> shift) as u64 }
    }

    pub fn cubes_at_level(&self, level: i32) -> impl Iterator<Item = CubeId> {
        (0..self.cubes_at(level)).map(move |index| CubeId { level, index })
    }

    /// All cubes, coarsest level first.
    pub fn all_cubes(&self) -> impl Iterator<Item = CubeId> + '_ {
        (self.min_level()..=self.max_level()).flat_map(move |l| self.cubes_at_level(l))
    }

    pub fn nonleaf_cubes(&self) -> impl Iterator<Item = CubeId> + '_ {
        (self.min_level()..self.max_level()).flat_map(move |l| self.cubes_at_level(l))
    }

    pub fn cube_count(&self) -> usize {
        (self.min_level()..=self.max_level()).map(|l| self.cubes_at(l) as usize).sum()
    }

    /// Row-major index (last axis fastest) of a Morton leaf index.
    pub fn morton_to_row_major(&self, leaf: usize) -> usize {
        let coords = deinterleave(leaf as u64, self.depth(), self.dim);
        let side = self.side_cells() as u64;
        coords.iter().fold(0u64, |acc, &k| acc * side + k) as usize
    }

    pub fn row_major_to_morton(&self, row: usize) -> usize {
        let side = self.side_cells() as u64;
        let mut coords = vec![0u64; self.dim as usize];
        let mut r = row as u64;
        for k in coords.iter_mut().rev() {
            *k = r % side;
            r /= side;
        }
        interleave(&coords, self.depth(), self.dim) as usize
    }
}

pub fn level_volume(dim: u32, level: i32) -> f64 {
    (-(level as f64) * dim as f64).exp2()
}

fn interleave(coords: &[u64], bits: u32, dim: u32) -> u64 {
    let mut index = 0u64;
    for b in (0..bits).rev() {
        for (i, &k) in coords.iter().enumerate() {
            index |= ((k >> b) & 1) << (b * dim + i as u32);
        }
    }
    index
}

fn deinterleave(index: u64, bits: u32, dim: u32) -> Vec<u64> {
    let mut coords = vec![0u64; dim as usize];
    for b in 0..bits {
        for (i, k) in coords.iter_mut().enumerate() {
            *k |= ((index >> (b * dim + i as u32)) & 1) << b;
        }
    }
    coords
}

/// Exponent pair `(p, q)` with `1 < p, q < inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentPair {
    pub p: f64,
    pub q: f64,
}

pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

impl ExponentPair {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        for (name, v) in [("p", p), ("q", q)] {
            if !(v > 1.0 && v.is_finite()) {
                return Err(DyadError::InvalidExponent(format!("{name} = {v} not in (1, inf)")));
            }
        }
        Ok(Self { p, q })
    }

    pub fn p_conj(&self) -> f64 {
        conjugate(self.p)
    }

    pub fn q_conj(&self) -> f64 {
        conjugate(self.q)
    }

    /// `(q', p')`, the exponents of the dual problem.
    pub fn dual(&self) -> Self {
        Self { p: self.q_conj(), q: self.p_conj() }
    }

    /// `1 < p <= 2 <= q`: the regime where quadratic and simple conditions agree.
    pub fn type_cotype_regime(&self) -> bool {
        self.p <= 2.0 && self.q >= 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_counts_and_volumes() {
        let lat = DyadicLattice::new(2, 1, 2).unwrap();
        assert_eq!(lat.cubes_at(-1), 1);
        assert_eq!(lat.cubes_at(0), 4);
        assert_eq!(lat.cubes_at(2), 64);
        assert_eq!(lat.leaf_count(), 64);
        assert_eq!(lat.volume(lat.root()), 4.0);
        assert_eq!(lat.volume(lat.leaf_cube(0)), 1.0 / 16.0);
        assert_eq!(lat.cube_count(), 1 + 4 + 16 + 64);
    }

    #[test]
    fn coords_roundtrip_and_parent_floor() {
        let lat = DyadicLattice::new(3, 0, 3).unwrap();
        let q = lat.cube(3, &[5, 2, 7]).unwrap();
        assert_eq!(lat.coords(q), vec![5, 2, 7]);
        let parent = lat.parent(q).unwrap();
        assert_eq!(lat.coords(parent), vec![2, 1, 3]);
        assert!(lat.parent(lat.root()).is_none());
    }

    #[test]
    fn children_tile_parent() {
        let lat = DyadicLattice::new(2, 0, 3).unwrap();
        let q = lat.cube(1, &[1, 0]).unwrap();
        let range = lat.leaf_range(q);
        let mut covered: Vec<usize> = lat.children(q).flat_map(|c| lat.leaf_range(c)).collect();
        covered.sort_unstable();
        assert_eq!(covered, range.collect::<Vec<_>>());
        assert_eq!(lat.children(lat.leaf_cube(3)).count(), 0);
    }

    #[test]
    fn ancestor_defined_only_inside_lattice() {
        let lat = DyadicLattice::new(1, 2, 2).unwrap();
        let leaf = lat.leaf_cube(11);
        assert_eq!(lat.ancestor(leaf, 0), Some(leaf));
        assert_eq!(lat.ancestor(leaf, 4).unwrap(), lat.root());
        assert!(lat.ancestor(leaf, 5).is_none());
    }

    #[test]
    fn descendant_iff_ancestor() {
        let lat = DyadicLattice::new(2, 1, 2).unwrap();
        for q in lat.all_cubes() {
            for m in 0..=(lat.max_level() - q.level) as u32 {
                for d in lat.descendants(q, m).unwrap() {
                    assert_eq!(lat.ancestor(d, m), Some(q));
                    assert!(lat.contains(q, d));
                }
            }
        }
    }

    #[test]
    fn row_major_is_a_bijection() {
        let lat = DyadicLattice::new(2, 0, 3).unwrap();
        for i in 0..lat.leaf_count() {
            assert_eq!(lat.row_major_to_morton(lat.morton_to_row_major(i)), i);
        }
        // leaf (x=1, y=0) sits at row-major index 1 * 8 + 0
        let q = lat.cube(3, &[1, 0]).unwrap();
        assert_eq!(lat.morton_to_row_major(q.index as usize), 8);
    }

    #[test]
    fn exponent_validation_and_conjugates() {
        assert!(ExponentPair::new(1.0, 2.0).is_err());
        let e = ExponentPair::new(3.0, 1.5).unwrap();
        assert!((1.0 / e.p + 1.0 / e.p_conj() - 1.0).abs() < 1e-15);
        assert!((1.0 / e.q + 1.0 / e.q_conj() - 1.0).abs() < 1e-15);
        let d = e.dual();
        assert_eq!(d.p, 3.0);
        assert_eq!(d.q, 1.5);
    }

    #[test]
    fn foreign_cube_rejected() {
        let lat = DyadicLattice::new(1, 0, 2).unwrap();
        assert!(lat.check(CubeId { level: 3, index: 0 }).is_err());
        assert!(lat.check(CubeId { level: 1, index: 2 }).is_err());
        assert!(lat.check(CubeId { level: 1, index: 1 }).is_ok());
    }
}
