//! Leaf-mass measures, step functions and the exact integral primitives.
//!
//! Measures store the total mass of every leaf cell (not a density), plus
//! the subtree sums for every coarser cube. All integrals are finite sums.

use serde::{Deserialize, Serialize};

use crate::error::{DyadError, Result};
use crate::lattice::{CubeId, DyadicLattice};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    lattice: DyadicLattice,
    /// `levels[d]` holds the masses of the cubes `d` bisections below the root.
    levels: Vec<Vec<f64>>,
}

/// Sums a leaf array up the tree. `out[d]` is indexed by Morton index at depth `d`.
pub fn aggregate_levels(lattice: &DyadicLattice, leaf: &[f64]) -> Vec<Vec<f64>> {
    let depth = lattice.depth() as usize;
    let fan = lattice.children_per_cube();
    let mut levels = vec![Vec::new(); depth + 1];
    levels[depth] = leaf.to_vec();
    for d in (0..depth).rev() {
        let finer = &levels[d + 1];
        let coarse: Vec<f64> = finer.chunks(fan).map(|c| c.iter().sum()).collect();
        levels[d] = coarse;
    }
    levels
}

impl Measure {
    pub fn from_leaf_masses(lattice: DyadicLattice, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != lattice.leaf_count() {
            return Err(DyadError::InvalidMeasure(format!(
                "expected {} leaf masses, got {}",
                lattice.leaf_count(),
                masses.len()
            )));
        }
        if let Some((i, m)) = masses.iter().enumerate().find(|(_, m)| !(m.is_finite() && **m >= 0.0)) {
            return Err(DyadError::InvalidMeasure(format!("leaf {i} has mass {m}")));
        }
        let levels = aggregate_levels(&lattice, &masses);
        Ok(Self { lattice, levels })
    }

    /// Masses from a leafwise density: `mass = density * |leaf|`.
    pub fn from_density(lattice: DyadicLattice, density: &[f64]) -> Result<Self> {
        let vol = lattice.volume(lattice.leaf_cube(0));
        Self::from_leaf_masses(lattice, density.iter().map(|d| d * vol).collect())
    }

    pub fn lebesgue(lattice: DyadicLattice) -> Self {
        let vol = lattice.volume(lattice.leaf_cube(0));
        Self::from_leaf_masses(lattice, vec![vol; lattice.leaf_count()]).expect("valid masses")
    }

    pub fn zero(lattice: DyadicLattice) -> Self {
        Self::from_leaf_masses(lattice, vec![0.0; lattice.leaf_count()]).expect("valid masses")
    }

    pub fn lattice(&self) -> &DyadicLattice {
        &self.lattice
    }

    pub fn leaf_masses(&self) -> &[f64] {
        &self.levels[self.lattice.depth() as usize]
    }

    pub fn total(&self) -> f64 {
        self.levels[0][0]
    }

    /// `sigma(Q)` for a cube already known to belong to the lattice.
    #[inline]
    pub fn mass_of(&self, cube: CubeId) -> f64 {
        let d = (cube.level - self.lattice.min_level()) as usize;
        self.levels[d][cube.index as usize]
    }

    pub fn mass(&self, cube: CubeId) -> Result<f64> {
        self.lattice.check(cube)?;
        Ok(self.mass_of(cube))
    }

    pub fn level_masses(&self, level: i32) -> &[f64] {
        &self.levels[(level - self.lattice.min_level()) as usize]
    }

    /// Density `mass / |leaf|` per leaf.
    pub fn density(&self) -> Vec<f64> {
        let vol = self.lattice.volume(self.lattice.leaf_cube(0));
        self.leaf_masses().iter().map(|m| m / vol).collect()
    }

    /// The measure restricted to `cube`.
    pub fn restricted(&self, cube: CubeId) -> Self {
        let range = self.lattice.leaf_range(cube);
        let masses =
            self.leaf_masses().iter().enumerate().map(|(i, &m)| if range.contains(&i) { m } else { 0.0 }).collect();
        Self::from_leaf_masses(self.lattice, masses).expect("restriction keeps masses valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    lattice: DyadicLattice,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn from_values(lattice: DyadicLattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.leaf_count() {
            return Err(DyadError::InvalidArgument(format!(
                "expected {} leaf values, got {}",
                lattice.leaf_count(),
                values.len()
            )));
        }
        Ok(Self { lattice, values })
    }

    pub fn zeros(lattice: DyadicLattice) -> Self {
        Self { lattice, values: vec![0.0; lattice.leaf_count()] }
    }

    pub fn constant(lattice: DyadicLattice, c: f64) -> Self {
        Self { lattice, values: vec![c; lattice.leaf_count()] }
    }

    pub fn indicator(lattice: DyadicLattice, cube: CubeId) -> Self {
        let mut f = Self::zeros(lattice);
        for v in &mut f.values[lattice.leaf_range(cube)] {
            *v = 1.0;
        }
        f
    }

    pub fn lattice(&self) -> &DyadicLattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, op: impl Fn(f64) -> f64) -> Self {
        Self { lattice: self.lattice, values: self.values.iter().map(|&v| op(v)).collect() }
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self + c * other`, leafwise.
    pub fn axpy(&self, c: f64, other: &StepFunction) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect();
        Self { lattice: self.lattice, values }
    }

    pub fn mul(&self, other: &StepFunction) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Self { lattice: self.lattice, values }
    }

    /// `1_Q f`.
    pub fn restricted(&self, cube: CubeId) -> Self {
        let range = self.lattice.leaf_range(cube);
        let values = self.values.iter().enumerate().map(|(i, &v)| if range.contains(&i) { v } else { 0.0 }).collect();
        Self { lattice: self.lattice, values }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn same_lattice(a: &DyadicLattice, b: &DyadicLattice) -> Result<()> {
    if a != b {
        return Err(DyadError::DomainMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

pub fn cube_measure(sigma: &Measure, cube: CubeId) -> Result<f64> {
    sigma.mass(cube)
}

/// `int_Q f dsigma`.
pub fn integral(f: &StepFunction, sigma: &Measure, cube: CubeId) -> Result<f64> {
    same_lattice(f.lattice(), sigma.lattice())?;
    sigma.lattice().check(cube)?;
    let range = sigma.lattice().leaf_range(cube);
    Ok(f.values[range.clone()].iter().zip(&sigma.leaf_masses()[range]).map(|(v, m)| v * m).sum())
}

/// `<f>^sigma_Q`, zero when `sigma(Q) = 0`.
pub fn average(f: &StepFunction, sigma: &Measure, cube: CubeId) -> Result<f64> {
    let mass = sigma.mass(cube)?;
    if mass == 0.0 {
        return Ok(0.0);
    }
    Ok(integral(f, sigma, cube)? / mass)
}

/// Integrals `int_Q f dsigma` for every cube, by level (same layout as [`Measure`]).
pub fn cube_integrals(f: &StepFunction, sigma: &Measure) -> Vec<Vec<f64>> {
    let weighted: Vec<f64> = f.values.iter().zip(sigma.leaf_masses()).map(|(v, m)| v * m).collect();
    aggregate_levels(sigma.lattice(), &weighted)
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(DyadError::InvalidExponent(format!("p = {p} must be >= 1")));
    }
    Ok(())
}

/// `(sum |v|^p m)^{1/p}` over raw leaf arrays.
pub(crate) fn raw_lp(values: &[f64], masses: &[f64], p: f64) -> f64 {
    let s: f64 = values.iter().zip(masses).map(|(v, m)| v.abs().powf(p) * m).sum();
    s.powf(1.0 / p)
}

pub fn lp_norm(f: &StepFunction, sigma: &Measure, p: f64) -> Result<f64> {
    same_lattice(f.lattice(), sigma.lattice())?;
    check_p(p)?;
    Ok(raw_lp(&f.values, sigma.leaf_masses(), p))
}

/// `|| (f_i) ||_{L^p(sigma; l^2)}`; the empty sequence has norm 0.
pub fn lp_l2_norm(fs: &[StepFunction], sigma: &Measure, p: f64) -> Result<f64> {
    check_p(p)?;
    if fs.is_empty() {
        return Ok(0.0);
    }
    for f in fs {
        same_lattice(f.lattice(), sigma.lattice())?;
    }
    let mut sq = vec![0.0; sigma.lattice().leaf_count()];
    for f in fs {
        for (s, v) in sq.iter_mut().zip(&f.values) {
            *s += v * v;
        }
    }
    Ok(l2_aggregate_norm(&sq, sigma.leaf_masses(), p))
}

/// `(sum_leaf (sq)^{p/2} m)^{1/p}` for a precomputed leafwise sum of squares.
pub(crate) fn l2_aggregate_norm(sq: &[f64], masses: &[f64], p: f64) -> f64 {
    let s: f64 = sq.iter().zip(masses).map(|(s, m)| if *m == 0.0 { 0.0 } else { s.powf(p / 2.0) * m }).sum();
    s.powf(1.0 / p)
}

pub fn pairing(f: &StepFunction, g: &StepFunction, sigma: &Measure) -> Result<f64> {
    same_lattice(f.lattice(), sigma.lattice())?;
    same_lattice(g.lattice(), sigma.lattice())?;
    Ok(f.values.iter().zip(&g.values).zip(sigma.leaf_masses()).map(|((a, b), m)| a * b * m).sum())
}
