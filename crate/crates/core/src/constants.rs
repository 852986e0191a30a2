//! Estimators for the simple and quadratic `A_{p,q}` constants, the Stein
//! constant, quadratic testing constants, two-weight norms and R-bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DyadError, Result};
use crate::lattice::{CubeId, DyadicLattice, ExponentPair};
use crate::measure::{aggregate_levels, l2_aggregate_norm, same_lattice, Measure, StepFunction};
use crate::ratio::{
    derive_seed, maximize_ratio_seeded, spectral_norm_22, AscentOptions, ConstantEstimate, EstimateKind,
    FamilyNormProblem, Feature, RatioProblem, SquareSumProblem, StartKind,
};
use crate::shift::{LeafOperator, ShiftSpec, SquareFunctionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Direct,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SquareScope {
    Global,
    Local,
}

/// An estimate together with the index set its witness refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pooled<T> {
    pub estimate: ConstantEstimate,
    pub pool: Vec<T>,
}

impl<T> Pooled<T> {
    pub fn value(&self) -> f64 {
        self.estimate.value
    }

    /// Witness entries `(pool item, a)` with `a = sqrt(b) > 0`.
    pub fn terms(&self) -> Vec<(&T, f64)> {
        self.pool.iter().zip(&self.estimate.witness).filter(|(_, b)| **b > 0.0).map(|(t, b)| (t, b.sqrt())).collect()
    }
}

fn level_slot(lat: &DyadicLattice, q: CubeId) -> (usize, usize) {
    ((q.level - lat.min_level()) as usize, q.index as usize)
}

fn indicator_feature(lat: &DyadicLattice, q: CubeId, value: f64) -> Feature {
    lat.leaf_range(q).map(|i| (i as u32, value)).collect()
}

/// `(sigma, w)_{p,q} = sup_Q sigma(Q)^{1/p'} w(Q)^{1/q} / |Q|`, exact.
pub fn simple_apq(sigma: &Measure, w: &Measure, pq: ExponentPair) -> Result<ConstantEstimate> {
    same_lattice(sigma.lattice(), w.lattice())?;
    let lat = sigma.lattice();
    let mut best = (0.0f64, None);
    for q in lat.all_cubes() {
        let v = simple_term(sigma, w, pq, q);
        if v > best.0 {
            best = (v, Some(q));
        }
    }
    Ok(ConstantEstimate::exact("simple-apq", best.0, best.1, Vec::new()))
}

/// One cube's term of the simple constant.
pub fn simple_term(sigma: &Measure, w: &Measure, pq: ExponentPair, q: CubeId) -> f64 {
    let s = sigma.mass_of(q);
    let m = w.mass_of(q);
    if s == 0.0 || m == 0.0 {
        return 0.0;
    }
    s.powf(1.0 / pq.p_conj()) * m.powf(1.0 / pq.q) / sigma.lattice().volume(q)
}

/// The quadratic problem in `b_Q = a_Q^2` over cubes where `coef(Q) != 0`:
/// numerator features `coef(Q)^2 1_Q` against `w`, denominator `1_Q` against `sigma`.
pub fn cube_square_problem(
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    coef: impl Fn(CubeId) -> f64,
) -> Result<(SquareSumProblem, Vec<CubeId>)> {
    same_lattice(sigma.lattice(), w.lattice())?;
    let lat = *sigma.lattice();
    let mut pool = Vec::new();
    let mut num = Vec::new();
    let mut den = Vec::new();
    for q in lat.all_cubes() {
        let c = coef(q);
        if c == 0.0 || sigma.mass_of(q) == 0.0 || w.mass_of(q) == 0.0 {
            continue;
        }
        pool.push(q);
        num.push(indicator_feature(&lat, q, c * c));
        den.push(indicator_feature(&lat, q, 1.0));
    }
    let prob = SquareSumProblem::new(pq.p, pq.q, w.leaf_masses().to_vec(), sigma.leaf_masses().to_vec(), num, den)?;
    Ok((prob, pool))
}

fn run_pooled<T: Clone>(
    name: &str,
    prob: &SquareSumProblem,
    pool: Vec<T>,
    opts: &AscentOptions,
    seeds: &[Vec<f64>],
) -> Result<Pooled<T>> {
    if pool.is_empty() {
        return Ok(Pooled { estimate: ConstantEstimate::zero(name, EstimateKind::LowerBound), pool });
    }
    let mut estimate = maximize_ratio_seeded(name, prob, opts, seeds)?;
    if let Some(d) = estimate.diagnostics.as_mut() {
        d.note = "variables are squared coefficients b = a^2".into();
    }
    Ok(Pooled { estimate, pool })
}

/// Replaces an ascent result by the exact single-cube supremum when that is larger.
fn floor_by_simple(mut est: Pooled<CubeId>, simple: &ConstantEstimate) -> Pooled<CubeId> {
    if simple.value > est.estimate.value {
        if let Some(cube) = simple.witness_cube {
            if let Some(pos) = est.pool.iter().position(|c| *c == cube) {
                let mut witness = vec![0.0; est.pool.len()];
                witness[pos] = 1.0;
                est.estimate.value = simple.value;
                est.estimate.witness = witness;
                est.estimate.witness_cube = Some(cube);
            }
        }
    }
    est
}

/// Lower bound for `[sigma, w]_{p,q}`; never below the simple constant.
pub fn quadratic_apq(sigma: &Measure, w: &Measure, pq: ExponentPair, opts: &AscentOptions) -> Result<Pooled<CubeId>> {
    let lat = *sigma.lattice();
    let (prob, pool) = cube_square_problem(sigma, w, pq, |q| sigma.mass_of(q) / lat.volume(q))?;
    let est = run_pooled("quadratic-apq", &prob, pool, opts, &[])?;
    Ok(floor_by_simple(est, &simple_apq(sigma, w, pq)?))
}

/// Lower bound for `[sigma, w]^b_{p,q}`.
pub fn quadratic_apq_b(
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    b: &SquareFunctionSpec,
    opts: &AscentOptions,
) -> Result<Pooled<CubeId>> {
    same_lattice(b.lattice(), sigma.lattice())?;
    let lat = *sigma.lattice();
    let coeffs: std::collections::HashMap<CubeId, f64> = b.coefficients().iter().copied().collect();
    let (prob, pool) =
        cube_square_problem(sigma, w, pq, |q| coeffs.get(&q).map_or(0.0, |bq| bq * sigma.mass_of(q) / lat.volume(q)))?;
    run_pooled("quadratic-apq-b", &prob, pool, opts, &[])
}

/// `[sigma, w]^*_{p,q}` for one child pair `(k, l)`, children labelled by Morton digit.
pub fn quadratic_apq_star_pair(
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    k: usize,
    l: usize,
    opts: &AscentOptions,
) -> Result<Pooled<CubeId>> {
    same_lattice(sigma.lattice(), w.lattice())?;
    let lat = *sigma.lattice();
    if k == l || k >= lat.children_per_cube() || l >= lat.children_per_cube() {
        return Err(DyadError::InvalidArgument(format!("child pair ({k}, {l}) invalid")));
    }
    let mut pool = Vec::new();
    let mut num = Vec::new();
    let mut den = Vec::new();
    for q in lat.nonleaf_cubes() {
        let qk = lat.child(q, k);
        let ql = lat.child(q, l);
        let s = sigma.mass_of(qk);
        if s == 0.0 || w.mass_of(ql) == 0.0 {
            continue;
        }
        let c = s / lat.volume(qk);
        pool.push(q);
        num.push(indicator_feature(&lat, ql, c * c));
        den.push(indicator_feature(&lat, qk, 1.0));
    }
    let prob = SquareSumProblem::new(pq.p, pq.q, w.leaf_masses().to_vec(), sigma.leaf_masses().to_vec(), num, den)?;
    run_pooled("quadratic-apq-star", &prob, pool, opts, &[])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarEstimate {
    pub best: Pooled<CubeId>,
    pub pair: (usize, usize),
    /// Value for every ordered pair, in lexicographic order.
    pub pairs: Vec<((usize, usize), f64)>,
}

/// Maximum over ordered child pairs `k != l` of [`quadratic_apq_star_pair`].
pub fn quadratic_apq_star(
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    opts: &AscentOptions,
) -> Result<StarEstimate> {
    let lat = *sigma.lattice();
    if lat.depth() == 0 {
        return Err(DyadError::InsufficientResolution("lattice has no children".into()));
    }
    let c = lat.children_per_cube();
    let pairs: Vec<(usize, usize)> =
        (0..c).flat_map(|k| (0..c).filter(move |l| *l != k).map(move |l| (k, l))).collect();
    let results: Vec<Pooled<CubeId>> =
        pairs.par_iter().map(|&(k, l)| quadratic_apq_star_pair(sigma, w, pq, k, l, opts)).collect::<Result<_>>()?;
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.value() > results[best].value() {
            best = i;
        }
    }
    let values = pairs.iter().copied().zip(results.iter().map(Pooled::value)).collect();
    Ok(StarEstimate { best: results[best].clone(), pair: pairs[best], pairs: values })
}

/// The two-weight Stein ratio over nonnegative assignments `f_Q` that are
/// constant on each child of `Q` (a single value on leaf cubes).
#[derive(Debug, Clone)]
pub struct SteinProblem {
    lattice: DyadicLattice,
    p: f64,
    q: f64,
    sigma_leaf: Vec<f64>,
    w_leaf: Vec<f64>,
    /// `(Q, R)` per variable: `f_Q = x 1_R` with `R` a child of `Q` or `Q` itself.
    vars: Vec<(CubeId, CubeId)>,
    kappa: Vec<f64>,
    /// Variables grouped by their cube `Q`.
    groups: Vec<(CubeId, std::ops::Range<usize>)>,
}

impl SteinProblem {
    pub fn new(sigma: &Measure, w: &Measure, pq: ExponentPair) -> Result<Self> {
        same_lattice(sigma.lattice(), w.lattice())?;
        let lat = *sigma.lattice();
        let mut vars = Vec::new();
        let mut kappa = Vec::new();
        let mut groups = Vec::new();
        for q in lat.all_cubes() {
            if sigma.mass_of(q) == 0.0 || w.mass_of(q) == 0.0 {
                continue;
            }
            let start = vars.len();
            let parts: Vec<CubeId> = if lat.is_leaf(q) { vec![q] } else { lat.children(q).collect() };
            for r in parts {
                let s = sigma.mass_of(r);
                if s > 0.0 {
                    vars.push((q, r));
                    kappa.push(s / lat.volume(q));
                }
            }
            groups.push((q, start..vars.len()));
        }
        Ok(Self {
            lattice: lat,
            p: pq.p,
            q: pq.q,
            sigma_leaf: sigma.leaf_masses().to_vec(),
            w_leaf: w.leaf_masses().to_vec(),
            vars,
            kappa,
            groups,
        })
    }

    pub fn variables(&self) -> &[(CubeId, CubeId)] {
        &self.vars
    }

    /// Variable vector for assignments `f_Q = a 1_R`, `R` either `Q` or one of its children.
    pub fn assignment(&self, terms: &[(CubeId, CubeId, f64)]) -> Vec<f64> {
        let mut x = vec![0.0; self.vars.len()];
        for (q, r, a) in terms {
            for (v, (vq, vr)) in self.vars.iter().enumerate() {
                if vq == q && self.lattice.contains(*r, *vr) {
                    x[v] = *a;
                }
            }
        }
        x
    }

    fn group_sums(&self, x: &[f64]) -> Vec<f64> {
        self.groups.iter().map(|(_, r)| r.clone().map(|v| x[v] * self.kappa[v]).sum()).collect()
    }

    fn leaf_squares(&self, x: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.lattice.leaf_count();
        let mut s = vec![0.0; n + 1];
        let mut f = vec![0.0; n + 1];
        for ((q, _), aq) in self.groups.iter().zip(a) {
            let r = self.lattice.leaf_range(*q);
            s[r.start] += aq * aq;
            s[r.end] -= aq * aq;
        }
        for (v, (_, rc)) in self.vars.iter().enumerate() {
            let r = self.lattice.leaf_range(*rc);
            f[r.start] += x[v] * x[v];
            f[r.end] -= x[v] * x[v];
        }
        (prefix(&s[..n]), prefix(&f[..n]))
    }
}

fn prefix(d: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    d.iter()
        .map(|v| {
            acc += v;
            acc.max(0.0)
        })
        .collect()
}

impl RatioProblem for SteinProblem {
    fn dim(&self) -> usize {
        self.vars.len()
    }

    fn numerator(&self, x: &[f64]) -> f64 {
        let a = self.group_sums(x);
        let (s, _) = self.leaf_squares(x, &a);
        l2_aggregate_norm(&s, &self.w_leaf, self.q)
    }

    fn denominator(&self, x: &[f64]) -> f64 {
        let (_, f) = self.leaf_squares(x, &vec![0.0; self.groups.len()]);
        l2_aggregate_norm(&f, &self.sigma_leaf, self.p)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let a = self.group_sums(x);
        let (s, f) = self.leaf_squares(x, &a);
        let n = l2_aggregate_norm(&s, &self.w_leaf, self.q);
        let d = l2_aggregate_norm(&f, &self.sigma_leaf, self.p);
        if d == 0.0 {
            return None;
        }
        let lat = &self.lattice;
        let wn: Vec<f64> = s
            .iter()
            .zip(&self.w_leaf)
            .map(|(si, wi)| if *si > 0.0 && *wi > 0.0 { wi * si.powf(self.q / 2.0 - 1.0) } else { 0.0 })
            .collect();
        let vd: Vec<f64> = f
            .iter()
            .zip(&self.sigma_leaf)
            .map(|(fi, mi)| if *fi > 0.0 && *mi > 0.0 { mi * fi.powf(self.p / 2.0 - 1.0) } else { 0.0 })
            .collect();
        let wsum = aggregate_levels(lat, &wn);
        let vsum = aggregate_levels(lat, &vd);
        let wmass = aggregate_levels(lat, &self.w_leaf);
        let npre = if n > 0.0 { n.powf(1.0 - self.q) } else { 0.0 };
        let dpre = d.powf(1.0 - self.p);
        let mut g = vec![0.0; x.len()];
        for ((q, range), aq) in self.groups.iter().zip(&a) {
            let (dq, iq) = level_slot(lat, *q);
            for v in range.clone() {
                let r = self.vars[v].1;
                let (dr, ir) = level_slot(lat, r);
                let dn = if n > 0.0 { npre * aq * self.kappa[v] * wsum[dq][iq] } else { self.kappa[v] * wmass[dq][iq] };
                let dd = dpre * x[v] * vsum[dr][ir];
                g[v] = (dn * d - n * dd) / (d * d);
            }
        }
        Some(g)
    }

    fn structured_starts(&self) -> Vec<(StartKind, Vec<f64>)> {
        let k = self.vars.len();
        let mut out = vec![(StartKind::Structured, vec![1.0; k])];
        for (_, range) in &self.groups {
            let mut e = vec![0.0; k];
            for v in range.clone() {
                e[v] = 1.0;
            }
            out.push((StartKind::Single, e));
        }
        out
    }
}

/// Lower bound for the Stein constant. Each seed lists assignments
/// `f_Q = a 1_R` as `(Q, R, a)`.
pub fn stein_constant(
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    opts: &AscentOptions,
    seeds: &[Vec<(CubeId, CubeId, f64)>],
) -> Result<ConstantEstimate> {
    let prob = SteinProblem::new(sigma, w, pq)?;
    if prob.dim() == 0 {
        return Ok(ConstantEstimate::zero("stein", EstimateKind::LowerBound));
    }
    let seeds: Vec<Vec<f64>> = seeds.iter().map(|s| prob.assignment(s)).collect();
    maximize_ratio_seeded("stein", &prob, opts, &seeds)
}

/// Testing pool entry: cube and family member.
pub type TestingTerm = (CubeId, usize);

/// Lower bound for the quadratic testing constant of a shift family.
/// `Dual` swaps `(sigma, w, p, q)` for `(w, sigma, q', p')` and uses adjoints.
pub fn shift_testing_constant(
    family: &[ShiftSpec],
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    direction: Direction,
    opts: &AscentOptions,
) -> Result<Pooled<TestingTerm>> {
    if family.is_empty() {
        return Err(DyadError::InvalidArgument("empty shift family".into()));
    }
    let (src, dst, ex) = oriented(sigma, w, pq, direction);
    let ops: Vec<ShiftSpec> = match direction {
        Direction::Direct => family.to_vec(),
        Direction::Dual => family.iter().map(ShiftSpec::adjoint).collect(),
    };
    let lat = *src.lattice();
    let cubes: Vec<CubeId> = lat.all_cubes().filter(|q| src.mass_of(*q) > 0.0).collect();
    let entries: Vec<(TestingTerm, Feature)> = cubes
        .par_iter()
        .flat_map_iter(|&q| {
            let ops = &ops;
            let lat = &lat;
            ops.iter().enumerate().map(move |(u, op)| {
                let img = op.apply(&StepFunction::indicator(*lat, q), src).expect("shared lattice");
                let feat: Feature = lat
                    .leaf_range(q)
                    .filter_map(|i| {
                        let v = img.values()[i];
                        (v != 0.0).then_some((i as u32, v * v))
                    })
                    .collect();
                ((q, u), feat)
            })
        })
        .collect();
    let mut pool = Vec::new();
    let mut num = Vec::new();
    let mut den = Vec::new();
    for ((q, u), feat) in entries {
        pool.push((q, u));
        num.push(feat);
        den.push(indicator_feature(&lat, q, 1.0));
    }
    let prob = SquareSumProblem::new(ex.p, ex.q, dst.leaf_masses().to_vec(), src.leaf_masses().to_vec(), num, den)?;
    let name = match direction {
        Direction::Direct => "testing-direct",
        Direction::Dual => "testing-dual",
    };
    run_pooled(name, &prob, pool, opts, &[])
}

/// Leafwise evaluation of a testing instance `sum_u (a_u 1_{Q_u} T_u 1_{Q_u})` in
/// the given direction, independent of the optimizer's feature tables.
pub fn testing_ratio(
    family: &[ShiftSpec],
    terms: &[(CubeId, usize, f64)],
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    direction: Direction,
) -> Result<f64> {
    let (src, dst, ex) = oriented(sigma, w, pq, direction);
    let lat = *src.lattice();
    let mut outs = Vec::with_capacity(terms.len());
    let mut ins = Vec::with_capacity(terms.len());
    for (q, u, a) in terms {
        let op = family.get(*u).ok_or_else(|| DyadError::InvalidArgument(format!("member {u} out of range")))?;
        let one = StepFunction::indicator(lat, *q);
        let img = match direction {
            Direction::Direct => op.apply(&one, src)?,
            Direction::Dual => op.adjoint().apply(&one, src)?,
        };
        outs.push(img.mul(&one).scaled(*a));
        ins.push(one.scaled(*a));
    }
    let num = crate::measure::lp_l2_norm(&outs, dst, ex.q)?;
    let den = crate::measure::lp_l2_norm(&ins, src, ex.p)?;
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

fn oriented<'a>(
    sigma: &'a Measure,
    w: &'a Measure,
    pq: ExponentPair,
    direction: Direction,
) -> (&'a Measure, &'a Measure, ExponentPair) {
    match direction {
        Direction::Direct => (sigma, w, pq),
        Direction::Dual => (w, sigma, pq.dual()),
    }
}

/// Lower bound for the global or local quadratic testing constant of `S^sigma_b`.
pub fn square_testing_constant(
    b: &SquareFunctionSpec,
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    scope: SquareScope,
    opts: &AscentOptions,
    seeds: &[Vec<f64>],
) -> Result<Pooled<CubeId>> {
    same_lattice(b.lattice(), sigma.lattice())?;
    same_lattice(sigma.lattice(), w.lattice())?;
    let lat = *sigma.lattice();
    let pool: Vec<CubeId> = square_testing_pool(sigma);
    let feats: Vec<Feature> = pool
        .par_iter()
        .map(|&q| {
            let op = match scope {
                SquareScope::Global => b.clone(),
                SquareScope::Local => b.localized(q).expect("cube in lattice"),
            };
            let comps = op.components(&StepFunction::indicator(lat, q), sigma).expect("shared lattice");
            let sq = op.square_sum(&comps);
            sq.values().iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i as u32, *v)).collect()
        })
        .collect();
    let den = pool.iter().map(|q| indicator_feature(&lat, *q, 1.0)).collect();
    let prob = SquareSumProblem::new(pq.p, pq.q, w.leaf_masses().to_vec(), sigma.leaf_masses().to_vec(), feats, den)?;
    let name = match scope {
        SquareScope::Global => "square-testing-global",
        SquareScope::Local => "square-testing-local",
    };
    run_pooled(name, &prob, pool, opts, seeds)
}

/// Cubes with positive `sigma`-mass, the default square-testing pool.
pub fn square_testing_pool(sigma: &Measure) -> Vec<CubeId> {
    sigma.lattice().all_cubes().filter(|q| sigma.mass_of(*q) > 0.0).collect()
}

/// Two-weight norm of a linear (or `l^2`-valued) operator: exact at
/// `p = q = 2`, otherwise a lower bound from ascent over step functions.
pub fn two_weight_norm(
    op: &dyn LeafOperator,
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    opts: &AscentOptions,
    seeds: &[StepFunction],
) -> Result<ConstantEstimate> {
    if pq.p == 2.0 && pq.q == 2.0 && op.lattice().leaf_count() <= crate::ratio::MAX_DENSE_LEAVES {
        let mut e = spectral_norm_22(op, sigma, w)?;
        e.name = "two-weight-norm".into();
        return Ok(e);
    }
    let prob = FamilyNormProblem::new(vec![op], sigma, w, pq.p, pq.q)?;
    if prob.dim() == 0 {
        return Ok(ConstantEstimate::zero("two-weight-norm", EstimateKind::LowerBound));
    }
    let packed: Vec<Vec<f64>> = seeds.iter().map(|f| prob.pack(std::slice::from_ref(f))).collect();
    let mut e = maximize_ratio_seeded("two-weight-norm", &prob, opts, &packed)?;
    e.witness = prob.unpack(&e.witness).remove(0).into_values();
    Ok(e)
}

/// A multi-term R-bound input: `f_u` routed through family member `members[u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RSeed {
    pub members: Vec<usize>,
    pub functions: Vec<StepFunction>,
}

impl RSeed {
    /// `f_u = a_u 1_{Q_u}` from a testing witness.
    pub fn from_testing(lattice: DyadicLattice, testing: &Pooled<TestingTerm>) -> Self {
        let mut members = Vec::new();
        let mut functions = Vec::new();
        for ((q, u), a) in testing.terms() {
            members.push(*u);
            functions.push(StepFunction::indicator(lattice, *q).scaled(a));
        }
        Self { members, functions }
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RBoundOptions {
    pub u_max: usize,
    pub random_instances: usize,
    pub singletons: bool,
    pub dual: bool,
    /// Iteration cap for seeded multi-term ascents.
    pub seeded_iterations: usize,
}

impl Default for RBoundOptions {
    fn default() -> Self {
        Self { u_max: 4, random_instances: 2, singletons: true, dual: true, seeded_iterations: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBoundEstimate {
    pub estimate: ConstantEstimate,
    pub direction: Direction,
    pub members: Vec<usize>,
    /// Witness functions (full leaf vectors), one per member slot.
    pub functions: Vec<Vec<f64>>,
}

/// `|| (T_u f_u) ||_{L^q(w; l^2)} / || (f_u) ||_{L^p(sigma; l^2)}` for the
/// given routing. `Dual` evaluates the adjoint family on `(w, sigma, q', p')`.
pub fn r_ratio(
    family: &[ShiftSpec],
    members: &[usize],
    functions: &[StepFunction],
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    direction: Direction,
) -> Result<f64> {
    if members.len() != functions.len() || members.iter().any(|m| *m >= family.len()) {
        return Err(DyadError::InvalidArgument("invalid member routing".into()));
    }
    let (src, dst, ex) = oriented(sigma, w, pq, direction);
    let mut sq = vec![0.0; src.lattice().leaf_count()];
    for (m, f) in members.iter().zip(functions) {
        let t = match direction {
            Direction::Direct => family[*m].apply(f, src)?,
            Direction::Dual => family[*m].adjoint().apply(f, src)?,
        };
        for (s, v) in sq.iter_mut().zip(t.values()) {
            *s += v * v;
        }
    }
    let num = l2_aggregate_norm(&sq, dst.leaf_masses(), ex.q);
    let den = crate::measure::lp_l2_norm(functions, src, ex.p)?;
    // values on zero-mass leaves never matter; they do not enter either side
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

struct RCandidate {
    value: f64,
    kind: EstimateKind,
    direction: Direction,
    members: Vec<usize>,
    functions: Vec<Vec<f64>>,
}

fn run_family(
    ops: &[ShiftSpec],
    members: &[usize],
    src: &Measure,
    dst: &Measure,
    ex: ExponentPair,
    opts: &AscentOptions,
    seeds: &[Vec<StepFunction>],
) -> Result<Option<(f64, Vec<Vec<f64>>)>> {
    let dyn_ops: Vec<&dyn LeafOperator> = members.iter().map(|m| &ops[*m] as &dyn LeafOperator).collect();
    let prob = FamilyNormProblem::new(dyn_ops, src, dst, ex.p, ex.q)?;
    if prob.dim() == 0 {
        return Ok(None);
    }
    let packed: Vec<Vec<f64>> = seeds.iter().map(|s| prob.pack(s)).collect();
    let e = maximize_ratio_seeded("r-bound", &prob, opts, &packed)?;
    let fs = prob.unpack(&e.witness).into_iter().map(StepFunction::into_values).collect();
    Ok(Some((e.value, fs)))
}

/// Lower bound for `R(family)`: singleton norms, testing-seeded multi-term
/// instances and random multi-term instances, in both directions.
#[allow(clippy::too_many_arguments)]
pub fn r_bound(
    family: &[ShiftSpec],
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    opts: &AscentOptions,
    ropts: &RBoundOptions,
    direct_seeds: &[RSeed],
    dual_seeds: &[RSeed],
) -> Result<RBoundEstimate> {
    if family.is_empty() {
        return Err(DyadError::InvalidArgument("empty shift family".into()));
    }
    let adjoints: Vec<ShiftSpec> = family.iter().map(ShiftSpec::adjoint).collect();
    let exact22 = pq.p == 2.0 && pq.q == 2.0 && sigma.lattice().leaf_count() <= crate::ratio::MAX_DENSE_LEAVES;
    let seeded_opts = AscentOptions { restarts: 0, max_iterations: ropts.seeded_iterations, ..*opts };
    let mut cands: Vec<RCandidate> = Vec::new();

    for direction in [Direction::Direct, Direction::Dual] {
        if direction == Direction::Dual && !ropts.dual {
            continue;
        }
        let (src, dst, ex) = oriented(sigma, w, pq, direction);
        let ops = if direction == Direction::Direct { family } else { &adjoints[..] };
        if ropts.singletons && (direction == Direction::Direct || !exact22) {
            let singles: Vec<Option<RCandidate>> = (0..ops.len())
                .into_par_iter()
                .map(|m| -> Result<Option<RCandidate>> {
                    if exact22 {
                        let e = spectral_norm_22(&ops[m], src, dst)?;
                        return Ok(Some(RCandidate {
                            value: e.value,
                            kind: EstimateKind::Exact,
                            direction,
                            members: vec![m],
                            functions: vec![e.witness],
                        }));
                    }
                    let o = AscentOptions { seed: derive_seed(opts.seed, m as u64), ..*opts };
                    Ok(run_family(ops, &[m], src, dst, ex, &o, &[])?.map(|(value, functions)| RCandidate {
                        value,
                        kind: EstimateKind::LowerBound,
                        direction,
                        members: vec![m],
                        functions,
                    }))
                })
                .collect::<Result<_>>()?;
            cands.extend(singles.into_iter().flatten());
        }
        let seeds = if direction == Direction::Direct { direct_seeds } else { dual_seeds };
        for s in seeds.iter().filter(|s| !s.is_empty()) {
            if let Some((value, functions)) =
                run_family(ops, &s.members, src, dst, ex, &seeded_opts, std::slice::from_ref(&s.functions))?
            {
                cands.push(RCandidate {
                    value,
                    kind: EstimateKind::LowerBound,
                    direction,
                    members: s.members.clone(),
                    functions,
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 1000 + direction as u64));
        for r in 0..ropts.random_instances {
            let u = rng.gen_range(2..=ropts.u_max.max(2));
            let members: Vec<usize> = (0..u).map(|_| rng.gen_range(0..ops.len())).collect();
            let o = AscentOptions {
                seed: derive_seed(opts.seed, 2000 + r as u64),
                restarts: (opts.restarts / 4).max(1),
                ..*opts
            };
            if let Some((value, functions)) = run_family(ops, &members, src, dst, ex, &o, &[])? {
                cands.push(RCandidate { value, kind: EstimateKind::LowerBound, direction, members, functions });
            }
        }
    }

    let mut best: Option<RCandidate> = None;
    for c in cands {
        if best.as_ref().is_none_or(|b| c.value > b.value) {
            best = Some(c);
        }
    }
    let Some(best) = best else {
        return Ok(RBoundEstimate {
            estimate: ConstantEstimate::zero("r-bound", EstimateKind::LowerBound),
            direction: Direction::Direct,
            members: Vec::new(),
            functions: Vec::new(),
        });
    };
    // at p = q = 2 the R-bound is the largest member norm, computed exactly
    let kind = if exact22 && ropts.singletons { EstimateKind::Exact } else { best.kind };
    let kind = if kind == EstimateKind::Exact || !exact22 { kind } else { EstimateKind::LowerBound };
    Ok(RBoundEstimate {
        estimate: ConstantEstimate {
            name: "r-bound".into(),
            value: best.value,
            kind,
            witness: best.functions.concat(),
            witness_cube: None,
            diagnostics: None,
        },
        direction: best.direction,
        members: best.members,
        functions: best.functions,
    })
}

/// Dual weight `sigma = w^{-1/(p-1)}` (as densities) and the exact
/// characteristic `[w]_p = sup_Q sigma(Q)^{p-1} w(Q) / |Q|^p`.
pub fn one_weight_pack(w: &Measure, p: f64) -> Result<(Measure, ConstantEstimate)> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(DyadError::InvalidExponent(format!("p = {p}")));
    }
    let lat = *w.lattice();
    let density = w.density();
    if let Some((i, d)) = density.iter().enumerate().find(|(_, d)| d.is_nan() || **d <= 0.0) {
        return Err(DyadError::InvalidMeasure(format!("weight density {d} at leaf {i} is not positive")));
    }
    let dual: Vec<f64> = density.iter().map(|d| d.powf(-1.0 / (p - 1.0))).collect();
    let sigma = Measure::from_density(lat, &dual)?;
    let mut best = (0.0f64, lat.root());
    for q in lat.all_cubes() {
        let v = sigma.mass_of(q).powf(p - 1.0) * w.mass_of(q) / lat.volume(q).powf(p);
        if v > best.0 {
            best = (v, q);
        }
    }
    Ok((sigma, ConstantEstimate::exact("one-weight-ap", best.0, Some(best.1), Vec::new())))
}
