//! Dyadic shifts built from Haar blocks, their formal adjoints, generalized
//! dyadic square functions, and instance generators.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DyadError, Result};
use crate::lattice::{CubeId, DyadicLattice};
use crate::martingale::{haar_child_sign, HaarFunction};
use crate::measure::{cube_integrals, same_lattice, Measure, StepFunction};

/// Relative slack allowed on the coefficient size bound.
pub const COEFFICIENT_SLACK: f64 = 1e-12;

/// One term `a <., h_I> h_J` of a shift block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftEntry {
    pub i: CubeId,
    pub j: CubeId,
    pub a: f64,
    pub eta_i: u32,
    pub eta_j: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftBlock {
    pub k: CubeId,
    pub entries: Vec<ShiftEntry>,
}

/// `sqrt(|I| |J|) / |K|`, the largest admissible coefficient.
pub fn coefficient_bound(lattice: &DyadicLattice, i: CubeId, j: CubeId, k: CubeId) -> f64 {
    (lattice.volume(i) * lattice.volume(j)).sqrt() / lattice.volume(k)
}

#[derive(Deserialize)]
struct RawShiftSpec {
    lattice: DyadicLattice,
    m: u32,
    n: u32,
    blocks: Vec<ShiftBlock>,
    specific_form: bool,
}

impl TryFrom<RawShiftSpec> for ShiftSpec {
    type Error = DyadError;

    fn try_from(r: RawShiftSpec) -> Result<Self> {
        ShiftSpec::new(r.lattice, r.m, r.n, r.blocks, r.specific_form)
    }
}

/// A dyadic shift with parameters `(m, n)`. All invariants are checked by
/// [`ShiftSpec::new`], so a value of this type is always admissible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawShiftSpec")]
pub struct ShiftSpec {
    lattice: DyadicLattice,
    m: u32,
    n: u32,
    blocks: Vec<ShiftBlock>,
    specific_form: bool,
}

fn check_haar(lattice: &DyadicLattice, cube: CubeId, eta: u32) -> Result<()> {
    if eta >> lattice.dim() != 0 {
        return Err(DyadError::InvalidShift(format!("sign pattern {eta:b} exceeds dimension")));
    }
    if eta != 0 && lattice.is_leaf(cube) {
        return Err(DyadError::InsufficientResolution(format!("cancellative Haar function on leaf {cube:?}")));
    }
    Ok(())
}

impl ShiftSpec {
    pub fn new(lattice: DyadicLattice, m: u32, n: u32, blocks: Vec<ShiftBlock>, specific_form: bool) -> Result<Self> {
        let mut ks = BTreeSet::new();
        for b in &blocks {
            lattice.check(b.k).map_err(|e| DyadError::InvalidShift(e.to_string()))?;
            if !ks.insert(b.k) {
                return Err(DyadError::InvalidShift(format!("duplicate block cube {:?}", b.k)));
            }
            let mut pairs = BTreeSet::new();
            for e in &b.entries {
                lattice.check(e.i).map_err(|x| DyadError::InvalidShift(x.to_string()))?;
                lattice.check(e.j).map_err(|x| DyadError::InvalidShift(x.to_string()))?;
                if lattice.ancestor(e.i, m) != Some(b.k) || lattice.ancestor(e.j, n) != Some(b.k) {
                    return Err(DyadError::InvalidShift(format!(
                        "entry ({:?}, {:?}) does not sit at depths ({m}, {n}) below {:?}",
                        e.i, e.j, b.k
                    )));
                }
                if !e.a.is_finite()
                    || e.a.abs() > coefficient_bound(&lattice, e.i, e.j, b.k) * (1.0 + COEFFICIENT_SLACK)
                {
                    return Err(DyadError::InvalidShift(format!(
                        "coefficient {} exceeds sqrt(|I||J|)/|K| = {}",
                        e.a,
                        coefficient_bound(&lattice, e.i, e.j, b.k)
                    )));
                }
                if specific_form && !in_different_children(&lattice, e.i, e.j, b.k) {
                    return Err(DyadError::InvalidShift(format!(
                        "entry ({:?}, {:?}) is not of the specific form under {:?}",
                        e.i, e.j, b.k
                    )));
                }
                check_haar(&lattice, e.i, e.eta_i)?;
                check_haar(&lattice, e.j, e.eta_j)?;
                if !pairs.insert((e.i, e.j)) {
                    return Err(DyadError::InvalidShift(format!("repeated entry ({:?}, {:?})", e.i, e.j)));
                }
            }
        }
        Ok(Self { lattice, m, n, blocks, specific_form })
    }

    pub fn zero(lattice: DyadicLattice, m: u32, n: u32) -> Self {
        Self { lattice, m, n, blocks: Vec::new(), specific_form: false }
    }

    pub fn lattice(&self) -> &DyadicLattice {
        &self.lattice
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn complexity(&self) -> u32 {
        self.m.max(self.n)
    }

    pub fn blocks(&self) -> &[ShiftBlock] {
        &self.blocks
    }

    pub fn is_specific_form(&self) -> bool {
        self.specific_form
    }

    pub fn entry_count(&self) -> usize {
        self.blocks.iter().map(|b| b.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entry_count() == 0
    }

    /// The spec of `T^w`, with parameters `(n, m)`.
    pub fn adjoint(&self) -> ShiftSpec {
        let blocks = self
            .blocks
            .iter()
            .map(|b| ShiftBlock {
                k: b.k,
                entries: b
                    .entries
                    .iter()
                    .map(|e| ShiftEntry { i: e.j, j: e.i, a: e.a, eta_i: e.eta_j, eta_j: e.eta_i })
                    .collect(),
            })
            .collect();
        ShiftSpec { lattice: self.lattice, m: self.n, n: self.m, blocks, specific_form: self.specific_form }
    }

    /// Returns a copy with every coefficient multiplied by `c`, `|c| <= 1`.
    pub fn scaled(&self, c: f64) -> Result<ShiftSpec> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| ShiftBlock {
                k: b.k,
                entries: b.entries.iter().map(|e| ShiftEntry { a: e.a * c, ..*e }).collect(),
            })
            .collect();
        ShiftSpec::new(self.lattice, self.m, self.n, blocks, self.specific_form)
    }

    /// `A^sigma_K f` for the block at position `block`.
    pub fn apply_block(&self, block: usize, f: &StepFunction, sigma: &Measure) -> Result<StepFunction> {
        let b = self
            .blocks
            .get(block)
            .ok_or_else(|| DyadError::InvalidArgument(format!("block index {block} out of range")))?;
        self.apply_blocks(std::slice::from_ref(b), f, sigma)
    }

    /// `T^sigma f = sum_K A^sigma_K f`.
    pub fn apply(&self, f: &StepFunction, sigma: &Measure) -> Result<StepFunction> {
        self.apply_blocks(&self.blocks, f, sigma)
    }

    fn apply_blocks(&self, blocks: &[ShiftBlock], f: &StepFunction, sigma: &Measure) -> Result<StepFunction> {
        same_lattice(&self.lattice, f.lattice())?;
        same_lattice(&self.lattice, sigma.lattice())?;
        let lat = self.lattice;
        let ints = cube_integrals(f, sigma);
        let mut diff = vec![0.0; lat.leaf_count() + 1];
        for b in blocks {
            for e in &b.entries {
                let c = haar_coefficient(&lat, &ints, e.i, e.eta_i);
                if c != 0.0 {
                    add_haar(&lat, &mut diff, e.j, e.eta_j, e.a * c);
                }
            }
        }
        Ok(finish_difference_array(lat, diff))
    }
}

/// True when `I` and `J` lie in different children of `K`.
pub fn in_different_children(lattice: &DyadicLattice, i: CubeId, j: CubeId, k: CubeId) -> bool {
    if i.level <= k.level || j.level <= k.level {
        return false;
    }
    let ci = lattice.ancestor(i, (i.level - k.level - 1) as u32);
    let cj = lattice.ancestor(j, (j.level - k.level - 1) as u32);
    ci != cj
}

fn level_slot(lat: &DyadicLattice, level: i32) -> usize {
    (level - lat.min_level()) as usize
}

/// `<f, h^eta_Q>_sigma` from precomputed cube integrals of `f dsigma`.
pub(crate) fn haar_coefficient(lat: &DyadicLattice, ints: &[Vec<f64>], cube: CubeId, eta: u32) -> f64 {
    let scale = lat.volume(cube).powf(-0.5);
    if eta == 0 {
        return scale * ints[level_slot(lat, cube.level)][cube.index as usize];
    }
    let row = &ints[level_slot(lat, cube.level + 1)];
    let s: f64 = lat.children(cube).enumerate().map(|(d, c)| haar_child_sign(eta, d) * row[c.index as usize]).sum();
    scale * s
}

/// Adds `coef * h^eta_Q` into a leaf difference array.
pub(crate) fn add_haar(lat: &DyadicLattice, diff: &mut [f64], cube: CubeId, eta: u32, coef: f64) {
    let v = coef * lat.volume(cube).powf(-0.5);
    if eta == 0 {
        let r = lat.leaf_range(cube);
        diff[r.start] += v;
        diff[r.end] -= v;
        return;
    }
    for (d, c) in lat.children(cube).enumerate() {
        let r = lat.leaf_range(c);
        let s = haar_child_sign(eta, d) * v;
        diff[r.start] += s;
        diff[r.end] -= s;
    }
}

pub(crate) fn finish_difference_array(lat: DyadicLattice, diff: Vec<f64>) -> StepFunction {
    let mut acc = 0.0;
    let values = diff[..lat.leaf_count()]
        .iter()
        .map(|d| {
            acc += d;
            acc
        })
        .collect();
    StepFunction::from_values(lat, values).expect("length matches lattice")
}

/// Parameters of [`generate_random_shift`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftGenerator {
    pub m: u32,
    pub n: u32,
    /// Probability that any admissible `(K, I, J)` triple gets an entry.
    pub density: f64,
    pub specific_form: bool,
    /// Allow the non-cancellative sign pattern for `I` and `J`.
    pub allow_noncancellative: bool,
}

/// Draws a random admissible shift. Coefficients are uniform in the
/// admissible interval and then scaled by one common uniform factor in `[0, 1]`.
pub fn generate_random_shift(lattice: &DyadicLattice, g: &ShiftGenerator, seed: u64) -> Result<ShiftSpec> {
    if !(0.0..=1.0).contains(&g.density) {
        return Err(DyadError::InvalidArgument(format!("density {} not in [0, 1]", g.density)));
    }
    let kappa = g.m.max(g.n) as i32;
    // I and J must have children so that cancellative Haar functions exist
    let deepest_k = lattice.max_level() - kappa - 1;
    if deepest_k < lattice.min_level() {
        return Err(DyadError::InsufficientResolution(format!(
            "depth {} cannot hold a shift of complexity {kappa}",
            lattice.depth()
        )));
    }
    if g.specific_form && (g.m == 0 || g.n == 0) {
        return Err(DyadError::InvalidArgument("specific form needs m, n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale: f64 = rng.gen();
    let patterns = 1u32 << lattice.dim();
    let draw_eta = |rng: &mut ChaCha8Rng| {
        if g.allow_noncancellative {
            rng.gen_range(0..patterns)
        } else {
            rng.gen_range(1..patterns)
        }
    };
    let mut blocks = Vec::new();
    for level in lattice.min_level()..=deepest_k {
        for k in lattice.cubes_at_level(level) {
            let mut entries = Vec::new();
            for i in lattice.descendants(k, g.m)? {
                for j in lattice.descendants(k, g.n)? {
                    if g.specific_form && !in_different_children(lattice, i, j, k) {
                        continue;
                    }
                    if rng.gen::<f64>() >= g.density {
                        continue;
                    }
                    let bound = coefficient_bound(lattice, i, j, k);
                    let a = rng.gen_range(-1.0..=1.0) * bound * scale;
                    let eta_i = draw_eta(&mut rng);
                    let eta_j = draw_eta(&mut rng);
                    entries.push(ShiftEntry { i, j, a, eta_i, eta_j });
                }
            }
            if !entries.is_empty() {
                blocks.push(ShiftBlock { k, entries });
            }
        }
    }
    ShiftSpec::new(*lattice, g.m, g.n, blocks, g.specific_form)
}

/// One witness shift `T^sigma_I` of the lower-bound family with its test function `f_I = h_I sqrt(|I|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarMultiplierWitness {
    pub cube: CubeId,
    pub shift: ShiftSpec,
    pub test_function: StepFunction,
}

/// Sign pattern used by the Haar multiplier witnesses.
pub const WITNESS_ETA: u32 = 1;

/// `T_I = sum_{J: J^{(n-m)} = I} sqrt(|I||J|)/|I^{(m)}| <., h_I> h_J`, one per
/// eligible `I`. Requires `m <= n`.
pub fn haar_multiplier_family(lattice: &DyadicLattice, m: u32, n: u32) -> Result<Vec<HaarMultiplierWitness>> {
    if m > n {
        return Err(DyadError::InvalidArgument("haar multiplier family needs m <= n; use the adjoint family".into()));
    }
    let d = (n - m) as i32;
    let lo = lattice.min_level() + m as i32;
    let hi = lattice.max_level() - 1 - d;
    let mut out = Vec::new();
    for level in lo..=hi {
        for i in lattice.cubes_at_level(level) {
            let k = lattice.ancestor(i, m).expect("level checked");
            let entries = lattice
                .descendants(i, n - m)?
                .map(|j| ShiftEntry {
                    i,
                    j,
                    a: coefficient_bound(lattice, i, j, k),
                    eta_i: WITNESS_ETA,
                    eta_j: WITNESS_ETA,
                })
                .collect();
            let shift = ShiftSpec::new(*lattice, m, n, vec![ShiftBlock { k, entries }], false)?;
            let h = crate::martingale::haar_evaluate(lattice, HaarFunction { cube: i, eta: WITNESS_ETA })?;
            let test_function = h.scaled(lattice.volume(i).sqrt());
            out.push(HaarMultiplierWitness { cube: i, shift, test_function });
        }
    }
    Ok(out)
}

/// Coefficients `b_Q` of a generalized dyadic square function, with an
/// optional localization cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareFunctionSpec {
    lattice: DyadicLattice,
    coefficients: Vec<(CubeId, f64)>,
    localization: Option<CubeId>,
}

impl SquareFunctionSpec {
    pub fn new(lattice: DyadicLattice, mut coefficients: Vec<(CubeId, f64)>) -> Result<Self> {
        coefficients.sort_by_key(|c| c.0);
        for w in coefficients.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(DyadError::InvalidArgument(format!("duplicate coefficient cube {:?}", w[0].0)));
            }
        }
        for (q, b) in &coefficients {
            lattice.check(*q)?;
            if lattice.is_leaf(*q) {
                return Err(DyadError::LeafCube { level: q.level });
            }
            if !b.is_finite() {
                return Err(DyadError::InvalidArgument(format!("coefficient {b} on {q:?}")));
            }
        }
        Ok(Self { lattice, coefficients, localization: None })
    }

    /// `b_Q = b` on every non-leaf cube.
    pub fn uniform(lattice: DyadicLattice, b: f64) -> Self {
        let coefficients = lattice.nonleaf_cubes().map(|q| (q, b)).collect();
        Self::new(lattice, coefficients).expect("non-leaf cubes")
    }

    /// Each non-leaf cube carries a coefficient with probability `density`,
    /// drawn uniformly from `[-1, 1]`.
    pub fn random(lattice: DyadicLattice, density: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coefficients = Vec::new();
        for q in lattice.nonleaf_cubes() {
            let keep = rng.gen::<f64>() < density;
            let b = rng.gen_range(-1.0..=1.0);
            if keep {
                coefficients.push((q, b));
            }
        }
        Self::new(lattice, coefficients).expect("non-leaf cubes")
    }

    pub fn lattice(&self) -> &DyadicLattice {
        &self.lattice
    }

    pub fn coefficients(&self) -> &[(CubeId, f64)] {
        &self.coefficients
    }

    pub fn localization(&self) -> Option<CubeId> {
        self.localization
    }

    /// `S_{b,Q}`: keeps only the terms with `Q' ⊆ Q`.
    pub fn localized(&self, q: CubeId) -> Result<Self> {
        self.lattice.check(q)?;
        let coefficients = self.coefficients.iter().copied().filter(|(c, _)| self.lattice.contains(q, *c)).collect();
        Ok(Self { lattice: self.lattice, coefficients, localization: Some(q) })
    }

    /// Terms `b_Q Delta_Q(f sigma)` as values on the children of each support cube.
    pub fn components(&self, f: &StepFunction, sigma: &Measure) -> Result<Vec<(CubeId, Vec<f64>)>> {
        same_lattice(&self.lattice, f.lattice())?;
        same_lattice(&self.lattice, sigma.lattice())?;
        let ints = cube_integrals(f, sigma);
        Ok(self.components_from_integrals(&ints))
    }

    pub(crate) fn components_from_integrals(&self, ints: &[Vec<f64>]) -> Vec<(CubeId, Vec<f64>)> {
        let lat = &self.lattice;
        self.coefficients
            .iter()
            .map(|&(q, b)| (q, lebesgue_difference(lat, ints, q).into_iter().map(|v| b * v).collect()))
            .collect()
    }

    /// `S^sigma_b f`, pointwise square root of the summed squares.
    pub fn apply(&self, f: &StepFunction, sigma: &Measure) -> Result<StepFunction> {
        let comps = self.components(f, sigma)?;
        Ok(self.square_sum(&comps).map(f64::sqrt))
    }

    /// Leafwise `sum_Q (b_Q Delta_Q(f sigma))^2` for precomputed components.
    pub(crate) fn square_sum(&self, comps: &[(CubeId, Vec<f64>)]) -> StepFunction {
        let lat = self.lattice;
        let mut diff = vec![0.0; lat.leaf_count() + 1];
        for (q, vals) in comps {
            for (c, v) in lat.children(*q).zip(vals) {
                let r = lat.leaf_range(c);
                diff[r.start] += v * v;
                diff[r.end] -= v * v;
            }
        }
        finish_difference_array(lat, diff).map(|v| v.max(0.0))
    }
}

/// `Delta_Q(f sigma)` on the children of `Q`, with Lebesgue denominators.
pub(crate) fn lebesgue_difference(lat: &DyadicLattice, ints: &[Vec<f64>], q: CubeId) -> Vec<f64> {
    let parent = ints[level_slot(lat, q.level)][q.index as usize] / lat.volume(q);
    let row = &ints[level_slot(lat, q.level + 1)];
    let child_vol = lat.volume(lat.child(q, 0));
    lat.children(q).map(|c| row[c.index as usize] / child_vol - parent).collect()
}

/// A linear map from step functions into finitely many step-function
/// components, measured in `L^q(w; l^2)`. The adjoint acts in the
/// `sigma`/`w` pairings: `sum_k <T_k f, g_k>_w = <f, T^* g>_sigma`.
pub trait LeafOperator: Sync {
    fn lattice(&self) -> &DyadicLattice;
    fn component_count(&self) -> usize;
    fn apply_components(&self, f: &StepFunction, sigma: &Measure) -> Result<Vec<StepFunction>>;
    fn adjoint_components(&self, gs: &[StepFunction], w: &Measure) -> Result<StepFunction>;
}

impl LeafOperator for ShiftSpec {
    fn lattice(&self) -> &DyadicLattice {
        &self.lattice
    }

    fn component_count(&self) -> usize {
        1
    }

    fn apply_components(&self, f: &StepFunction, sigma: &Measure) -> Result<Vec<StepFunction>> {
        Ok(vec![self.apply(f, sigma)?])
    }

    fn adjoint_components(&self, gs: &[StepFunction], w: &Measure) -> Result<StepFunction> {
        match gs {
            [g] => self.adjoint().apply(g, w),
            _ => Err(DyadError::InvalidArgument(format!("shift has one component, got {}", gs.len()))),
        }
    }
}

impl LeafOperator for SquareFunctionSpec {
    fn lattice(&self) -> &DyadicLattice {
        &self.lattice
    }

    fn component_count(&self) -> usize {
        self.coefficients.len()
    }

    fn apply_components(&self, f: &StepFunction, sigma: &Measure) -> Result<Vec<StepFunction>> {
        let lat = self.lattice;
        Ok(self
            .components(f, sigma)?
            .into_iter()
            .map(|(q, vals)| {
                let mut out = StepFunction::zeros(lat);
                for (c, v) in lat.children(q).zip(&vals) {
                    out.values_mut()[lat.leaf_range(c)].fill(*v);
                }
                out
            })
            .collect())
    }

    fn adjoint_components(&self, gs: &[StepFunction], w: &Measure) -> Result<StepFunction> {
        if gs.len() != self.coefficients.len() {
            return Err(DyadError::InvalidArgument(format!(
                "square function has {} components, got {}",
                self.coefficients.len(),
                gs.len()
            )));
        }
        let lat = self.lattice;
        let mut diff = vec![0.0; lat.leaf_count() + 1];
        for ((q, b), g) in self.coefficients.iter().zip(gs) {
            same_lattice(&lat, g.lattice())?;
            let ints = cube_integrals(g, w);
            for (c, v) in lat.children(*q).zip(lebesgue_difference(&lat, &ints, *q)) {
                let r = lat.leaf_range(c);
                diff[r.start] += b * v;
                diff[r.end] -= b * v;
            }
        }
        Ok(finish_difference_array(lat, diff))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::martingale::haar_evaluate;
    use crate::measure::{integral, pairing};

    fn lat1(leaf: u32) -> DyadicLattice {
        DyadicLattice::new(1, 0, leaf).unwrap()
    }

    #[test]
    fn single_entry_reproduces_haar() {
        let lat = lat1(3);
        let leb = Measure::lebesgue(lat);
        let k = lat.root();
        let i = lat.cube(1, &[0]).unwrap();
        let j = lat.cube(1, &[1]).unwrap();
        let a = 0.3;
        let spec = ShiftSpec::new(
            lat,
            1,
            1,
            vec![ShiftBlock { k, entries: vec![ShiftEntry { i, j, a, eta_i: 1, eta_j: 1 }] }],
            true,
        )
        .unwrap();
        let hi = haar_evaluate(&lat, HaarFunction { cube: i, eta: 1 }).unwrap();
        let hj = haar_evaluate(&lat, HaarFunction { cube: j, eta: 1 }).unwrap();
        let out = spec.apply(&hi, &leb).unwrap();
        for (x, y) in out.values().iter().zip(hj.values()) {
            assert!((x - a * y).abs() < 1e-14);
        }
        assert!(spec.apply(&StepFunction::constant(lat, 1.0), &leb).unwrap().sup_norm() < 1e-15);
    }

    #[test]
    fn invariants_rejected() {
        let lat = lat1(3);
        let k = lat.root();
        let i = lat.cube(1, &[0]).unwrap();
        let j = lat.cube(1, &[1]).unwrap();
        let too_big = coefficient_bound(&lat, i, j, k) * 1.01;
        let entry = ShiftEntry { i, j, a: too_big, eta_i: 1, eta_j: 1 };
        assert!(ShiftSpec::new(lat, 1, 1, vec![ShiftBlock { k, entries: vec![entry] }], false).is_err());
        let wrong_depth = ShiftEntry { i, j, a: 0.1, eta_i: 1, eta_j: 1 };
        assert!(ShiftSpec::new(lat, 0, 1, vec![ShiftBlock { k, entries: vec![wrong_depth] }], false).is_err());
        let same_child = ShiftEntry { i, j: i, a: 0.1, eta_i: 1, eta_j: 1 };
        assert!(ShiftSpec::new(lat, 1, 1, vec![ShiftBlock { k, entries: vec![same_child] }], true).is_err());
        let leaf = lat.leaf_cube(0);
        let on_leaf = ShiftEntry { i: leaf, j: leaf, a: 0.1, eta_i: 1, eta_j: 1 };
        let kk = lat.ancestor(leaf, 1).unwrap();
        assert!(ShiftSpec::new(lat, 1, 1, vec![ShiftBlock { k: kk, entries: vec![on_leaf] }], false).is_err());
    }

    #[test]
    fn adjoint_is_involution_and_swaps_parameters() {
        let lat = DyadicLattice::new(2, 0, 3).unwrap();
        let g = ShiftGenerator { m: 0, n: 1, density: 0.5, specific_form: false, allow_noncancellative: false };
        let s = generate_random_shift(&lat, &g, 4).unwrap();
        let a = s.adjoint();
        assert_eq!((a.m(), a.n()), (1, 0));
        assert_eq!(a.adjoint(), s);
    }

    #[test]
    fn generator_is_deterministic_and_respects_density_zero() {
        let lat = lat1(4);
        let g = ShiftGenerator { m: 1, n: 2, density: 0.7, specific_form: false, allow_noncancellative: false };
        assert_eq!(generate_random_shift(&lat, &g, 9).unwrap(), generate_random_shift(&lat, &g, 9).unwrap());
        let z = ShiftGenerator { density: 0.0, ..g };
        assert!(generate_random_shift(&lat, &z, 9).unwrap().is_empty());
        let deep = ShiftGenerator { m: 4, n: 4, ..g };
        assert!(generate_random_shift(&lat, &deep, 9).is_err());
    }

    #[test]
    fn witness_family_identity() {
        let lat = lat1(3);
        let leb = Measure::lebesgue(lat);
        let fam = haar_multiplier_family(&lat, 0, 1).unwrap();
        assert!(!fam.is_empty());
        for wit in &fam {
            let out = wit.shift.apply(&wit.test_function, &leb).unwrap();
            for (idx, v) in out.values().iter().enumerate() {
                let inside = lat.leaf_range(wit.cube).contains(&idx);
                assert!((v.abs() - if inside { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn square_function_two_level_formula() {
        let lat = lat1(2);
        let sigma = Measure::from_leaf_masses(lat, vec![0.5, 1.5, 0.25, 0.75]).unwrap();
        let q0 = lat.root();
        let s = SquareFunctionSpec::new(lat, vec![(q0, 2.0)]).unwrap();
        let left = lat.child(q0, 0);
        let f = StepFunction::indicator(lat, left);
        let out = s.apply(&f, &sigma).unwrap();
        // Delta_Q(f sigma) = sigma(left)/|left| 1_left - sigma(left)/|Q| 1_Q
        let m = integral(&f, &sigma, left).unwrap();
        let on_left = 2.0 * (m / 0.5 - m / 1.0);
        let on_right = 2.0 * (m / 1.0);
        assert!((out.values()[0] - on_left.abs()).abs() < 1e-14);
        assert!((out.values()[3] - on_right).abs() < 1e-14);
        let loc = s.localized(lat.child(q0, 1)).unwrap();
        assert!(loc.apply(&f, &sigma).unwrap().sup_norm() == 0.0);
        assert!(SquareFunctionSpec::new(lat, vec![(lat.leaf_cube(0), 1.0)]).is_err());
    }

    #[test]
    fn square_function_adjoint_pairing() {
        let lat = lat1(3);
        let sigma = Measure::from_leaf_masses(lat, vec![0.5, 1.5, 0.25, 0.75, 1.0, 0.1, 2.0, 0.3]).unwrap();
        let w = Measure::from_leaf_masses(lat, vec![1.0, 0.2, 0.6, 0.75, 0.4, 1.1, 0.9, 0.3]).unwrap();
        let s = SquareFunctionSpec::random(lat, 0.8, 3);
        let f = StepFunction::from_values(lat, (0..8).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let gs: Vec<_> = (0..s.component_count())
            .map(|k| StepFunction::from_values(lat, (0..8).map(|i| ((i + 3 * k) as f64).cos()).collect()).unwrap())
            .collect();
        let tf = s.apply_components(&f, &sigma).unwrap();
        let lhs: f64 = tf.iter().zip(&gs).map(|(a, b)| pairing(a, b, &w).unwrap()).sum();
        let rhs = pairing(&f, &s.adjoint_components(&gs, &w).unwrap(), &sigma).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }
}
