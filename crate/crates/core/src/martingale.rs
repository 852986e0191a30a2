//! Conditional expectations, martingale differences, Haar functions and
//! the Burkholder / Kahane-Khinchine style comparisons built on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DyadError, Result};
use crate::lattice::{CubeId, DyadicLattice};
use crate::measure::{aggregate_levels, l2_aggregate_norm, same_lattice, Measure, StepFunction};

/// Largest sign count enumerated exactly.
pub const EXACT_SIGN_LIMIT: usize = 20;
/// Sample count used when the sign count exceeds [`EXACT_SIGN_LIMIT`].
pub const MONTE_CARLO_SAMPLES: usize = 1 << 14;

/// Integrals of `f dsigma` per cube, with the measure alongside, for O(1)
/// averages.
struct Averager<'a> {
    sigma: &'a Measure,
    integrals: Vec<Vec<f64>>,
}

impl<'a> Averager<'a> {
    fn new(f: &StepFunction, sigma: &'a Measure) -> Self {
        let weighted: Vec<f64> = f.values().iter().zip(sigma.leaf_masses()).map(|(v, m)| v * m).collect();
        Self { sigma, integrals: aggregate_levels(sigma.lattice(), &weighted) }
    }

    fn avg(&self, cube: CubeId) -> f64 {
        let mass = self.sigma.mass_of(cube);
        if mass == 0.0 {
            return 0.0;
        }
        let d = (cube.level - self.sigma.lattice().min_level()) as usize;
        self.integrals[d][cube.index as usize] / mass
    }
}

pub fn conditional_expectation(f: &StepFunction, sigma: &Measure, level: i32) -> Result<StepFunction> {
    same_lattice(f.lattice(), sigma.lattice())?;
    let lat = *sigma.lattice();
    lat.check_level(level)?;
    let av = Averager::new(f, sigma);
    let mut out = StepFunction::zeros(lat);
    for q in lat.cubes_at_level(level) {
        let a = av.avg(q);
        out.values_mut()[lat.leaf_range(q)].fill(a);
    }
    Ok(out)
}

/// Values of `Delta^sigma_Q f` on each child of `Q`, by child digit.
fn difference_child_values(av: &Averager<'_>, lat: &DyadicLattice, cube: CubeId) -> Vec<f64> {
    let parent = av.avg(cube);
    lat.children(cube).map(|c| av.avg(c) - parent).collect()
}

fn write_child_values(out: &mut StepFunction, lat: &DyadicLattice, cube: CubeId, vals: &[f64]) {
    for (c, v) in lat.children(cube).zip(vals) {
        for x in &mut out.values_mut()[lat.leaf_range(c)] {
            *x += v;
        }
    }
}

pub fn martingale_difference(f: &StepFunction, sigma: &Measure, cube: CubeId) -> Result<StepFunction> {
    same_lattice(f.lattice(), sigma.lattice())?;
    let lat = *sigma.lattice();
    lat.check(cube)?;
    if lat.is_leaf(cube) {
        return Err(DyadError::LeafCube { level: cube.level });
    }
    let av = Averager::new(f, sigma);
    let mut out = StepFunction::zeros(lat);
    write_child_values(&mut out, &lat, cube, &difference_child_values(&av, &lat, cube));
    Ok(out)
}

/// `Delta^{sigma,i}_Q f = sum_{Q': Q'^{(i)} = Q} Delta^sigma_{Q'} f`. Leaf
/// descendants contribute nothing since step functions are constant on leaves.
pub fn block_difference(f: &StepFunction, sigma: &Measure, cube: CubeId, i: u32) -> Result<StepFunction> {
    same_lattice(f.lattice(), sigma.lattice())?;
    let lat = *sigma.lattice();
    lat.check(cube)?;
    let av = Averager::new(f, sigma);
    let mut out = StepFunction::zeros(lat);
    for d in lat.descendants(cube, i)? {
        if lat.is_leaf(d) {
            continue;
        }
        write_child_values(&mut out, &lat, d, &difference_child_values(&av, &lat, d));
    }
    Ok(out)
}

/// One martingale difference, stored by its constant value on each child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceTerm {
    pub cube: CubeId,
    pub child_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleExpansion {
    pub lattice: DyadicLattice,
    pub base_level: i32,
    /// `<f>^sigma_Q` for every `Q` in the base level.
    pub coarse: Vec<(CubeId, f64)>,
    pub differences: Vec<DifferenceTerm>,
}

impl MartingaleExpansion {
    /// Sum of all terms.
    pub fn reconstruct(&self) -> StepFunction {
        let lat = self.lattice;
        let mut out = StepFunction::zeros(lat);
        for (q, a) in &self.coarse {
            for v in &mut out.values_mut()[lat.leaf_range(*q)] {
                *v += a;
            }
        }
        for t in &self.differences {
            write_child_values(&mut out, &lat, t.cube, &t.child_values);
        }
        out
    }

    pub fn difference_function(&self, term: &DifferenceTerm) -> StepFunction {
        let mut out = StepFunction::zeros(self.lattice);
        write_child_values(&mut out, &self.lattice, term.cube, &term.child_values);
        out
    }

    pub fn nonzero_differences(&self) -> impl Iterator<Item = &DifferenceTerm> {
        self.differences.iter().filter(|t| t.child_values.iter().any(|v| *v != 0.0))
    }
}

/// Finite martingale decomposition from level `base_level` down to the leaves.
pub fn expand(f: &StepFunction, sigma: &Measure, base_level: i32) -> Result<MartingaleExpansion> {
    same_lattice(f.lattice(), sigma.lattice())?;
    let lat = *sigma.lattice();
    lat.check_level(base_level)?;
    let av = Averager::new(f, sigma);
    let coarse = lat.cubes_at_level(base_level).map(|q| (q, av.avg(q))).collect();
    let differences = (base_level..lat.max_level())
        .flat_map(|l| lat.cubes_at_level(l))
        .map(|q| DifferenceTerm { cube: q, child_values: difference_child_values(&av, &lat, q) })
        .collect();
    Ok(MartingaleExpansion { lattice: lat, base_level, coarse, differences })
}

/// Both sides of the vector-valued Burkholder comparison:
/// `||(f_k)||_{L^p(l^2)}` and the norm of the square function built from
/// coarse averages at `base_level` and all finer martingale differences.
pub fn burkholder_ratio(fs: &[StepFunction], sigma: &Measure, p: f64, base_level: i32) -> Result<(f64, f64)> {
    let lat = *sigma.lattice();
    lat.check_level(base_level)?;
    let lhs = crate::measure::lp_l2_norm(fs, sigma, p)?;
    let mut sq = vec![0.0; lat.leaf_count()];
    for f in fs {
        same_lattice(f.lattice(), &lat)?;
        let av = Averager::new(f, sigma);
        for q in lat.cubes_at_level(base_level) {
            let a = av.avg(q);
            for s in &mut sq[lat.leaf_range(q)] {
                *s += a * a;
            }
        }
        for l in base_level..lat.max_level() {
            for q in lat.cubes_at_level(l) {
                let vals = difference_child_values(&av, &lat, q);
                for (c, v) in lat.children(q).zip(&vals) {
                    for s in &mut sq[lat.leaf_range(c)] {
                        *s += v * v;
                    }
                }
            }
        }
    }
    Ok((lhs, l2_aggregate_norm(&sq, sigma.leaf_masses(), p)))
}

/// Haar function `h^eta_Q`; bit `i` of `eta` selects the cancellative profile along axis `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HaarFunction {
    pub cube: CubeId,
    pub eta: u32,
}

impl HaarFunction {
    pub fn is_cancellative(&self) -> bool {
        self.eta != 0
    }
}

/// Sign of `h^eta` on the child with the given digit (lower halves positive).
#[inline]
pub fn haar_child_sign(eta: u32, digit: usize) -> f64 {
    if (eta & digit as u32).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Evaluates a Haar function as a step function (Lebesgue `L^2`-normalized).
pub fn haar_evaluate(lattice: &DyadicLattice, h: HaarFunction) -> Result<StepFunction> {
    lattice.check(h.cube)?;
    if h.eta >> lattice.dim() != 0 {
        return Err(DyadError::InvalidArgument(format!("sign pattern {:b} exceeds dimension", h.eta)));
    }
    let scale = lattice.volume(h.cube).powf(-0.5);
    let mut out = StepFunction::zeros(*lattice);
    if !h.is_cancellative() {
        out.values_mut()[lattice.leaf_range(h.cube)].fill(scale);
        return Ok(out);
    }
    if lattice.is_leaf(h.cube) {
        return Err(DyadError::InsufficientResolution(format!("cancellative Haar function on leaf cube {:?}", h.cube)));
    }
    for (digit, c) in lattice.children(h.cube).enumerate() {
        out.values_mut()[lattice.leaf_range(c)].fill(scale * haar_child_sign(h.eta, digit));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RademacherMode {
    Exact,
    MonteCarlo { samples: usize },
}

/// Mean of `|| sum_i eps_i f_i ||^p_{L^p(sigma)}` over independent random signs.
pub fn rademacher_expectation(
    vectors: &[StepFunction],
    sigma: &Measure,
    p: f64,
    mode: RademacherMode,
    seed: u64,
) -> Result<f64> {
    for f in vectors {
        same_lattice(f.lattice(), sigma.lattice())?;
    }
    let masses = sigma.leaf_masses();
    let rows: Vec<&[f64]> = vectors.iter().map(|f| f.values()).collect();
    let norm_p = |sum: &[f64]| -> f64 { sum.iter().zip(masses).map(|(s, m)| s.abs().powf(p) * m).sum() };
    match mode {
        RademacherMode::Exact => {
            if rows.len() > EXACT_SIGN_LIMIT {
                return Err(DyadError::EnumerationOverflow { count: rows.len(), max: EXACT_SIGN_LIMIT });
            }
            Ok(enumerate_signs(&rows, masses.len(), norm_p))
        }
        RademacherMode::MonteCarlo { samples } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sum = vec![0.0; masses.len()];
            let mut acc = 0.0;
            for _ in 0..samples {
                sum.fill(0.0);
                for r in &rows {
                    let e = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    for (s, v) in sum.iter_mut().zip(r.iter()) {
                        *s += e * v;
                    }
                }
                acc += norm_p(&sum);
            }
            Ok(acc / samples as f64)
        }
    }
}

/// Exact mean of `phi(sum_i eps_i x_i)` over all `2^U` sign patterns, walking
/// a Gray code inside fixed-size chunks so the reduction order never depends
/// on the thread count.
pub(crate) fn enumerate_signs<F>(rows: &[&[f64]], len: usize, phi: F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let u = rows.len();
    if u == 0 {
        return phi(&vec![0.0; len]);
    }
    let chunk_bits = u.min(10);
    let chunks = 1usize << (u - chunk_bits);
    let partial: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|hi| {
            // signs of rows chunk_bits.. fixed by `hi`; low rows walk a Gray code
            let mut sum = vec![0.0; len];
            let mut signs = vec![1.0f64; u];
            for (j, s) in signs.iter_mut().enumerate().skip(chunk_bits) {
                if (hi >> (j - chunk_bits)) & 1 == 1 {
                    *s = -1.0;
                }
            }
            for (j, r) in rows.iter().enumerate() {
                for (acc, v) in sum.iter_mut().zip(r.iter()) {
                    *acc += signs[j] * v;
                }
            }
            let mut total = phi(&sum);
            for step in 1usize..(1 << chunk_bits) {
                let j = step.trailing_zeros() as usize;
                signs[j] = -signs[j];
                let e = 2.0 * signs[j];
                for (acc, v) in sum.iter_mut().zip(rows[j].iter()) {
                    *acc += e * v;
                }
                total += phi(&sum);
            }
            total
        })
        .collect();
    partial.iter().sum::<f64>() / (1u64 << u) as f64
}

/// `E E' | sum_{k,Q} eps_k eps'_Q c_{k,Q} |^p` by full enumeration of both sign families.
pub fn double_rademacher_moment(c: &[Vec<f64>], p: f64) -> Result<f64> {
    let k = c.len();
    let m = c.first().map_or(0, Vec::len);
    if c.iter().any(|row| row.len() != m) {
        return Err(DyadError::InvalidArgument("ragged coefficient array".into()));
    }
    if k + m > EXACT_SIGN_LIMIT {
        return Err(DyadError::EnumerationOverflow { count: k + m, max: EXACT_SIGN_LIMIT });
    }
    let mut total = 0.0;
    for a in 0u64..(1 << k) {
        for b in 0u64..(1 << m) {
            let mut s = 0.0;
            for (i, row) in c.iter().enumerate() {
                let ei = if (a >> i) & 1 == 1 { -1.0 } else { 1.0 };
                for (j, v) in row.iter().enumerate() {
                    let ej = if (b >> j) & 1 == 1 { -1.0 } else { 1.0 };
                    s += ei * ej * v;
                }
            }
            total += s.abs().powf(p);
        }
    }
    Ok(total / (1u64 << (k + m)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{average, lp_norm, pairing};

    fn lat1(leaf: u32) -> DyadicLattice {
        DyadicLattice::new(1, 0, leaf).unwrap()
    }

    fn lcg_values(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn expectation_at_leaf_level_is_identity() {
        let lat = lat1(3);
        let sigma = Measure::from_leaf_masses(lat, vec![1.0, 0.0, 2.0, 0.5, 1.0, 3.0, 0.0, 1.0]).unwrap();
        let f = StepFunction::from_values(lat, lcg_values(8, 3)).unwrap();
        let e = conditional_expectation(&f, &sigma, 3).unwrap();
        for i in 0..8 {
            if sigma.leaf_masses()[i] > 0.0 {
                assert_eq!(e.values()[i], f.values()[i]);
            } else {
                assert_eq!(e.values()[i], 0.0);
            }
        }
        let ee = conditional_expectation(&conditional_expectation(&f, &sigma, 1).unwrap(), &sigma, 1).unwrap();
        let e1 = conditional_expectation(&f, &sigma, 1).unwrap();
        for (a, b) in ee.values().iter().zip(e1.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(conditional_expectation(&f, &sigma, 4).is_err());
    }

    #[test]
    fn two_leaf_unequal_masses() {
        let lat = lat1(1);
        let sigma = Measure::from_leaf_masses(lat, vec![1.0, 3.0]).unwrap();
        let f = StepFunction::from_values(lat, vec![4.0, 0.0]).unwrap();
        // <f>_root = (4*1 + 0*3)/4 = 1
        let e = conditional_expectation(&f, &sigma, 0).unwrap();
        assert_eq!(e.values(), &[1.0, 1.0]);
        let d = martingale_difference(&f, &sigma, lat.root()).unwrap();
        assert_eq!(d.values(), &[3.0, -1.0]);
    }

    #[test]
    fn difference_of_constant_vanishes_and_has_zero_integral() {
        let lat = lat1(3);
        let sigma = Measure::from_leaf_masses(lat, vec![1.0, 0.2, 2.0, 0.5, 1.0, 3.0, 0.7, 1.0]).unwrap();
        let c = StepFunction::constant(lat, 2.0);
        for q in lat.nonleaf_cubes() {
            let d = martingale_difference(&c, &sigma, q).unwrap();
            assert!(d.sup_norm() < 1e-15);
        }
        let f = StepFunction::from_values(lat, lcg_values(8, 9)).unwrap();
        let one = StepFunction::constant(lat, 1.0);
        for q in lat.nonleaf_cubes() {
            let d = martingale_difference(&f, &sigma, q).unwrap();
            assert!(pairing(&d, &one, &sigma).unwrap().abs() < 1e-14);
        }
        assert!(matches!(martingale_difference(&f, &sigma, lat.leaf_cube(0)), Err(DyadError::LeafCube { .. })));
    }

    #[test]
    fn difference_matches_definition_from_averages() {
        let lat = lat1(2);
        let sigma = Measure::from_leaf_masses(lat, vec![0.3, 1.1, 2.0, 0.6]).unwrap();
        let f = StepFunction::from_values(lat, lcg_values(4, 17)).unwrap();
        for q in lat.nonleaf_cubes() {
            let d = martingale_difference(&f, &sigma, q).unwrap();
            let mut oracle = vec![0.0; 4];
            let aq = average(&f, &sigma, q).unwrap();
            for c in lat.children(q) {
                let ac = average(&f, &sigma, c).unwrap();
                for i in lat.leaf_range(c) {
                    oracle[i] = ac - aq;
                }
            }
            for (a, b) in d.values().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn block_difference_reduces_and_sums() {
        let lat = lat1(3);
        let sigma = Measure::from_leaf_masses(lat, vec![1.0, 0.2, 2.0, 0.5, 1.0, 3.0, 0.7, 1.0]).unwrap();
        let f = StepFunction::from_values(lat, lcg_values(8, 23)).unwrap();
        let root = lat.root();
        assert_eq!(block_difference(&f, &sigma, root, 0).unwrap(), martingale_difference(&f, &sigma, root).unwrap());
        let b2 = block_difference(&f, &sigma, root, 2).unwrap();
        let mut oracle = StepFunction::zeros(lat);
        for q in lat.cubes_at_level(2) {
            oracle = oracle.axpy(1.0, &martingale_difference(&f, &sigma, q).unwrap());
        }
        for (a, b) in b2.values().iter().zip(oracle.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(block_difference(&StepFunction::constant(lat, 1.0), &sigma, root, 1).unwrap().sup_norm() < 1e-15);
        assert!(block_difference(&f, &sigma, root, 4).is_err());
    }

    #[test]
    fn expansion_reconstructs() {
        let lat = DyadicLattice::new(2, 1, 2).unwrap();
        let masses: Vec<f64> = lcg_values(lat.leaf_count(), 5).iter().map(|v| v.abs() + 0.01).collect();
        let sigma = Measure::from_leaf_masses(lat, masses).unwrap();
        let f = StepFunction::from_values(lat, lcg_values(lat.leaf_count(), 6)).unwrap();
        for base in -1..=2 {
            let e = expand(&f, &sigma, base).unwrap();
            let r = e.reconstruct();
            for (a, b) in r.values().iter().zip(f.values()) {
                assert!((a - b).abs() <= 1e-12 * f.sup_norm());
            }
        }
        let zero = expand(&StepFunction::zeros(lat), &sigma, 0).unwrap();
        assert_eq!(zero.nonzero_differences().count(), 0);
    }

    #[test]
    fn single_difference_expansion() {
        let lat = lat1(3);
        let sigma = Measure::from_leaf_masses(lat, vec![1.0, 0.2, 2.0, 0.5, 1.0, 3.0, 0.7, 1.0]).unwrap();
        let g = StepFunction::from_values(lat, lcg_values(8, 41)).unwrap();
        let q0 = lat.cube(1, &[1]).unwrap();
        let f = martingale_difference(&g, &sigma, q0).unwrap();
        let e = expand(&f, &sigma, 0).unwrap();
        let nz: Vec<_> = e.nonzero_differences().filter(|t| t.child_values.iter().any(|v| v.abs() > 1e-14)).collect();
        assert_eq!(nz.len(), 1);
        assert_eq!(nz[0].cube, q0);
    }

    #[test]
    fn burkholder_parseval_at_two() {
        let lat = lat1(4);
        let masses: Vec<f64> = lcg_values(16, 8).iter().map(|v| v.abs() + 0.05).collect();
        let sigma = Measure::from_leaf_masses(lat, masses).unwrap();
        let f = StepFunction::from_values(lat, lcg_values(16, 12)).unwrap();
        let (l, r) = burkholder_ratio(std::slice::from_ref(&f), &sigma, 2.0, 0).unwrap();
        assert!((l - r).abs() < 1e-12 * l);
        let c = StepFunction::constant(lat, 3.0);
        let (l, r) = burkholder_ratio(&[c], &sigma, 3.0, 0).unwrap();
        assert!((l - r).abs() < 1e-12 * l);
    }

    #[test]
    fn haar_profiles() {
        let lat = lat1(2);
        let root = lat.root();
        let h1 = haar_evaluate(&lat, HaarFunction { cube: root, eta: 1 }).unwrap();
        assert_eq!(h1.values(), &[1.0, 1.0, -1.0, -1.0]);
        let q = lat.cube(1, &[1]).unwrap();
        let h0 = haar_evaluate(&lat, HaarFunction { cube: q, eta: 0 }).unwrap();
        assert_eq!(h0.values(), &[0.0, 0.0, 2f64.sqrt(), 2f64.sqrt()]);
        assert!(haar_evaluate(&lat, HaarFunction { cube: lat.leaf_cube(0), eta: 1 }).is_err());
        assert!(haar_evaluate(&lat, HaarFunction { cube: lat.leaf_cube(0), eta: 0 }).is_ok());
    }

    #[test]
    fn haar_normalized_and_cancellative_in_2d() {
        let lat = DyadicLattice::new(2, 1, 2).unwrap();
        let leb = Measure::lebesgue(lat);
        let one = StepFunction::constant(lat, 1.0);
        for q in lat.nonleaf_cubes() {
            for eta in 0..4 {
                let h = haar_evaluate(&lat, HaarFunction { cube: q, eta }).unwrap();
                assert!((lp_norm(&h, &leb, 2.0).unwrap() - 1.0).abs() < 1e-14);
                if eta != 0 {
                    assert!(pairing(&h, &one, &leb).unwrap().abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn rademacher_small_cases() {
        let lat = lat1(2);
        let sigma = Measure::from_leaf_masses(lat, vec![0.5, 1.0, 2.0, 0.25]).unwrap();
        let f = StepFunction::from_values(lat, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let p = 3.0;
        let e = rademacher_expectation(std::slice::from_ref(&f), &sigma, p, RademacherMode::Exact, 0).unwrap();
        assert!((e - lp_norm(&f, &sigma, p).unwrap().powf(p)).abs() < 1e-12);
        let a = StepFunction::from_values(lat, vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        let b = StepFunction::from_values(lat, vec![0.0, 0.0, -1.0, 4.0]).unwrap();
        let e2 = rademacher_expectation(&[a.clone(), b.clone()], &sigma, 2.0, RademacherMode::Exact, 0).unwrap();
        let oracle = lp_norm(&a, &sigma, 2.0).unwrap().powi(2) + lp_norm(&b, &sigma, 2.0).unwrap().powi(2);
        assert!((e2 - oracle).abs() < 1e-12);
        let many = vec![a; 21];
        assert!(rademacher_expectation(&many, &sigma, 2.0, RademacherMode::Exact, 0).is_err());
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let lat = lat1(2);
        let sigma = Measure::lebesgue(lat);
        let fs: Vec<_> = (0..5).map(|i| StepFunction::from_values(lat, lcg_values(4, i)).unwrap()).collect();
        let mode = RademacherMode::MonteCarlo { samples: MONTE_CARLO_SAMPLES };
        let a = rademacher_expectation(&fs, &sigma, 1.5, mode, 11).unwrap();
        let b = rademacher_expectation(&fs, &sigma, 1.5, mode, 11).unwrap();
        assert_eq!(a, b);
        let exact = rademacher_expectation(&fs, &sigma, 1.5, RademacherMode::Exact, 0).unwrap();
        assert!((a - exact).abs() < 0.05 * exact);
    }

    #[test]
    fn double_rademacher_at_two_is_sum_of_squares() {
        let c = vec![vec![0.3, -1.2, 0.7], vec![2.0, 0.1, -0.4], vec![0.0, 0.9, 1.5]];
        let m = double_rademacher_moment(&c, 2.0).unwrap();
        let s: f64 = c.iter().flatten().map(|v| v * v).sum();
        assert!((m - s).abs() < 1e-12 * s);
    }
}
