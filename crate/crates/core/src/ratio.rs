//! Best-constant estimation: seeded projected-gradient ascent on
//! scale-invariant ratios, plus the dense spectral oracle at `p = q = 2`.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DyadError, Result};
use crate::lattice::CubeId;
use crate::martingale::{enumerate_signs, EXACT_SIGN_LIMIT};
use crate::measure::{Measure, StepFunction};
use crate::shift::LeafOperator;

/// Largest leaf count for dense operator assembly.
pub const MAX_DENSE_LEAVES: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EstimateKind {
    Exact,
    LowerBound,
    Bracket { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartKind {
    Seed,
    Single,
    Structured,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub index: usize,
    pub start: StartKind,
    pub ascended: bool,
    pub iterations: usize,
    pub initial: f64,
    pub value: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub seed: u64,
    pub restarts: usize,
    pub starts_evaluated: usize,
    pub starts_ascended: usize,
    pub skipped: usize,
    pub iterations: usize,
    pub converged: bool,
    pub best_start: Option<StartKind>,
    pub note: String,
    pub records: Vec<StartRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub name: String,
    pub value: f64,
    pub kind: EstimateKind,
    /// Maximizing input in the problem's own variables.
    pub witness: Vec<f64>,
    /// Maximizing cube for closed-form single-cube suprema.
    pub witness_cube: Option<CubeId>,
    pub diagnostics: Option<Diagnostics>,
}

impl ConstantEstimate {
    pub fn exact(name: impl Into<String>, value: f64, witness_cube: Option<CubeId>, witness: Vec<f64>) -> Self {
        Self { name: name.into(), value, kind: EstimateKind::Exact, witness, witness_cube, diagnostics: None }
    }

    pub fn zero(name: impl Into<String>, kind: EstimateKind) -> Self {
        Self { name: name.into(), value: 0.0, kind, witness: Vec::new(), witness_cube: None, diagnostics: None }
    }

    pub fn is_exact(&self) -> bool {
        self.kind == EstimateKind::Exact
    }

    /// Keeps whichever estimate is larger; ties keep `self`.
    pub fn max_with(self, other: ConstantEstimate) -> ConstantEstimate {
        if other.value > self.value {
            ConstantEstimate { name: self.name, ..other }
        } else {
            self
        }
    }
}

/// A ratio `numerator(x) / denominator(x)` of two positively homogeneous
/// maps of the same degree, so the ratio is scale invariant.
pub trait RatioProblem: Sync {
    fn dim(&self) -> usize;

    /// Restrict to the nonnegative orthant.
    fn nonnegative(&self) -> bool {
        true
    }

    fn numerator(&self, x: &[f64]) -> f64;
    fn denominator(&self, x: &[f64]) -> f64;

    /// Zero when both sides vanish; `NaN` for a positive numerator over zero.
    fn ratio(&self, x: &[f64]) -> f64 {
        let d = self.denominator(x);
        let n = self.numerator(x);
        if d > 0.0 {
            n / d
        } else if n == 0.0 {
            0.0
        } else {
            f64::NAN
        }
    }

    /// Gradient of the ratio if available in closed form.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Optional fixed-point map (a nonlinear power step); kept when it improves.
    fn fixed_point_step(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Deterministic starts besides the random ones.
    fn structured_starts(&self) -> Vec<(StartKind, Vec<f64>)> {
        Vec::new()
    }

    /// Homogeneity degree shared by numerator and denominator.
    fn homogeneity(&self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub stall_window: usize,
    pub stall_tolerance: f64,
    pub fd_step: f64,
    /// How many of the best single-feature starts get ascended.
    pub ascended_singles: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            restarts: 32,
            seed: 0,
            max_iterations: 3000,
            stall_window: 50,
            stall_tolerance: 1e-10,
            fd_step: 1e-6,
            ascended_singles: 8,
        }
    }
}

impl AscentOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn restarts(self, restarts: usize) -> Self {
        Self { restarts, ..self }
    }
}

/// Seed for stream `index` derived from a master seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.gen()
}

fn project(x: &mut [f64], nonneg: bool) {
    for v in x.iter_mut() {
        if !v.is_finite() || (nonneg && *v < 0.0) {
            *v = 0.0;
        }
    }
}

fn normalize(x: &mut [f64]) -> bool {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    for v in x.iter_mut() {
        *v /= n;
    }
    true
}

/// Rescales so the largest entry has absolute value one.
fn normalize_sup(x: &mut [f64]) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        for v in x.iter_mut() {
            *v /= m;
        }
    }
}

fn finite_difference_gradient<P: RatioProblem + ?Sized>(p: &P, x: &[f64], r: f64, rel: f64) -> Vec<f64> {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut y = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = rel * x[i].abs().max(1e-3 * scale);
        let xi = x[i];
        y[i] = xi + h;
        let up = p.ratio(&y);
        if p.nonnegative() && xi - h < 0.0 {
            g[i] = (up - r) / h;
        } else {
            y[i] = xi - h;
            g[i] = (up - p.ratio(&y)) / (2.0 * h);
        }
        y[i] = xi;
        if !g[i].is_finite() {
            g[i] = 0.0;
        }
    }
    g
}

struct AscentResult {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn ascend<P: RatioProblem + ?Sized>(p: &P, start: &[f64], opts: &AscentOptions) -> Option<AscentResult> {
    let nonneg = p.nonnegative();
    let mut x = start.to_vec();
    project(&mut x, nonneg);
    if !normalize(&mut x) {
        return None;
    }
    let mut r = p.ratio(&x);
    if !r.is_finite() {
        return None;
    }
    let mut step = 0.25;
    let mut history = Vec::with_capacity(opts.max_iterations.min(4096));
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iterations {
        iterations = it + 1;
        let mut moved = false;
        if let Some(mut y) = p.fixed_point_step(&x) {
            project(&mut y, nonneg);
            if normalize(&mut y) {
                let ry = p.ratio(&y);
                if ry > r {
                    x = y;
                    r = ry;
                    moved = true;
                }
            }
        }
        if !moved {
            let mut g = p.gradient(&x).unwrap_or_else(|| finite_difference_gradient(p, &x, r, opts.fd_step));
            for (gi, xi) in g.iter_mut().zip(&x) {
                if !gi.is_finite() || (nonneg && *xi <= 0.0 && *gi < 0.0) {
                    *gi = 0.0;
                }
            }
            if !normalize(&mut g) {
                converged = true;
                break;
            }
            let mut s = step;
            while s > 1e-13 {
                let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + s * b).collect();
                project(&mut y, nonneg);
                if normalize(&mut y) {
                    let ry = p.ratio(&y);
                    if ry > r {
                        x = y;
                        r = ry;
                        moved = true;
                        step = (2.0 * s).min(4.0);
                        break;
                    }
                }
                s *= 0.5;
            }
            if !moved {
                converged = true;
                break;
            }
        }
        history.push(r);
        if history.len() > opts.stall_window {
            let past = history[history.len() - 1 - opts.stall_window];
            if r - past <= opts.stall_tolerance * r.abs() {
                converged = true;
                break;
            }
        }
    }
    Some(AscentResult { x, iterations, converged })
}

fn random_start(dim: usize, nonneg: bool, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64));
    let sparse = index % 2 == 1 && dim > 4;
    let keep = (4.0 / dim as f64).min(1.0);
    let mut x: Vec<f64> = (0..dim)
        .map(|_| {
            let v: f64 = if nonneg { rng.gen() } else { rng.gen_range(-1.0..1.0) };
            if sparse && rng.gen::<f64>() >= keep {
                0.0
            } else {
                v
            }
        })
        .collect();
    if x.iter().all(|v| *v == 0.0) && dim > 0 {
        let i = rng.gen_range(0..dim);
        x[i] = 1.0;
    }
    x
}

fn better(a: (f64, &[f64]), b: (f64, &[f64])) -> bool {
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) | None => false,
        Some(Ordering::Equal) => {
            for (x, y) in a.1.iter().zip(b.1) {
                match x.total_cmp(y) {
                    Ordering::Less => return true,
                    Ordering::Greater => return false,
                    Ordering::Equal => {}
                }
            }
            false
        }
    }
}

/// Maximizes the ratio from the problem's structured starts, the extra
/// `seeds`, and `opts.restarts` random starts. The result is a lower bound.
pub fn maximize_ratio_seeded<P: RatioProblem + ?Sized>(
    name: &str,
    p: &P,
    opts: &AscentOptions,
    seeds: &[Vec<f64>],
) -> Result<ConstantEstimate> {
    let dim = p.dim();
    if dim == 0 {
        return Err(DyadError::InvalidArgument(format!("{name}: empty domain")));
    }
    let nonneg = p.nonnegative();
    let mut starts: Vec<(StartKind, Vec<f64>)> = seeds.iter().map(|s| (StartKind::Seed, s.clone())).collect();
    starts.extend(p.structured_starts());
    starts.extend((0..opts.restarts).map(|i| (StartKind::Random, random_start(dim, nonneg, opts.seed, i))));
    for (_, s) in &starts {
        if s.len() != dim {
            return Err(DyadError::InvalidArgument(format!("{name}: start of length {} for dimension {dim}", s.len())));
        }
    }

    let initial: Vec<f64> = starts
        .par_iter()
        .map(|(_, s)| {
            let mut y = s.clone();
            project(&mut y, nonneg);
            p.ratio(&y)
        })
        .collect();

    let mut singles: Vec<usize> =
        (0..starts.len()).filter(|&i| starts[i].0 == StartKind::Single && initial[i].is_finite()).collect();
    singles.sort_by(|&a, &b| initial[b].total_cmp(&initial[a]).then(a.cmp(&b)));
    let mut ascend_set = vec![false; starts.len()];
    for &i in singles.iter().take(opts.ascended_singles) {
        ascend_set[i] = true;
    }
    for (i, (kind, _)) in starts.iter().enumerate() {
        if *kind != StartKind::Single && initial[i].is_finite() {
            ascend_set[i] = true;
        }
    }

    let results: Vec<Option<AscentResult>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, (_, s))| {
            if ascend_set[i] {
                ascend(p, s, opts)
            } else if initial[i].is_finite() {
                let mut x = s.clone();
                project(&mut x, nonneg);
                Some(AscentResult { x, iterations: 0, converged: true })
            } else {
                None
            }
        })
        .collect();

    let mut records = Vec::with_capacity(starts.len());
    let mut best: Option<(f64, Vec<f64>, StartKind)> = None;
    let mut skipped = 0;
    let mut iterations = 0;
    let mut all_converged = true;
    for (i, res) in results.into_iter().enumerate() {
        let Some(mut res) = res else {
            skipped += 1;
            continue;
        };
        normalize_sup(&mut res.x);
        let value = p.ratio(&res.x);
        if !value.is_finite() {
            skipped += 1;
            continue;
        }
        iterations += res.iterations;
        if ascend_set[i] {
            all_converged &= res.converged;
        }
        records.push(StartRecord {
            index: i,
            start: starts[i].0,
            ascended: ascend_set[i],
            iterations: res.iterations,
            initial: initial[i],
            value,
            converged: res.converged,
        });
        let replace = match &best {
            None => true,
            Some((bv, bx, _)) => better((value, &res.x), (*bv, bx)),
        };
        if replace {
            best = Some((value, res.x, starts[i].0));
        }
    }
    let diagnostics = Diagnostics {
        seed: opts.seed,
        restarts: opts.restarts,
        starts_evaluated: starts.len(),
        starts_ascended: ascend_set.iter().filter(|b| **b).count(),
        skipped,
        iterations,
        converged: all_converged,
        best_start: best.as_ref().map(|b| b.2),
        note: String::new(),
        records,
    };
    let (value, witness) = match best {
        Some((v, x, _)) => (v, x),
        None => (0.0, vec![0.0; dim]),
    };
    Ok(ConstantEstimate {
        name: name.to_string(),
        value,
        kind: EstimateKind::LowerBound,
        witness,
        witness_cube: None,
        diagnostics: Some(diagnostics),
    })
}

pub fn maximize_ratio<P: RatioProblem + ?Sized>(name: &str, p: &P, opts: &AscentOptions) -> Result<ConstantEstimate> {
    maximize_ratio_seeded(name, p, opts, &[])
}

/// Sparse nonnegative feature: `(cell, value)` pairs.
pub type Feature = Vec<(u32, f64)>;

/// `(sum_c w_c (sum_k b_k G_kc)^{q/2})^{1/q} / (sum_c s_c (sum_k b_k D_kc)^{p/2})^{1/p}`
/// over `b >= 0`. With `b = a^2` this is the shape of every quadratic
/// condition built from squares of cube-indexed terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareSumProblem {
    p: f64,
    q: f64,
    w_cells: Vec<f64>,
    sigma_cells: Vec<f64>,
    num_features: Vec<Feature>,
    den_features: Vec<Feature>,
    extra_starts: Vec<(StartKind, Vec<f64>)>,
    singles: bool,
}

impl SquareSumProblem {
    pub fn new(
        p: f64,
        q: f64,
        w_cells: Vec<f64>,
        sigma_cells: Vec<f64>,
        num_features: Vec<Feature>,
        den_features: Vec<Feature>,
    ) -> Result<Self> {
        if num_features.len() != den_features.len() {
            return Err(DyadError::InvalidArgument("feature count mismatch".into()));
        }
        for (cells, feats) in [(w_cells.len(), &num_features), (sigma_cells.len(), &den_features)] {
            for f in feats.iter() {
                if f.iter().any(|(c, v)| *c as usize >= cells || !(v.is_finite() && *v >= 0.0)) {
                    return Err(DyadError::InvalidArgument("feature entry out of range or negative".into()));
                }
            }
        }
        Ok(Self { p, q, w_cells, sigma_cells, num_features, den_features, extra_starts: Vec::new(), singles: true })
    }

    pub fn with_start(mut self, kind: StartKind, b: Vec<f64>) -> Self {
        self.extra_starts.push((kind, b));
        self
    }

    pub fn without_single_starts(mut self) -> Self {
        self.singles = false;
        self
    }

    pub fn features(&self) -> usize {
        self.num_features.len()
    }

    fn sums(feats: &[Feature], cells: usize, b: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; cells];
        for (f, bk) in feats.iter().zip(b) {
            if *bk != 0.0 {
                for (c, v) in f {
                    s[*c as usize] += bk * v;
                }
            }
        }
        s
    }

    fn side(sums: &[f64], masses: &[f64], e: f64) -> f64 {
        let t: f64 =
            sums.iter().zip(masses).map(|(s, m)| if *m == 0.0 || *s <= 0.0 { 0.0 } else { m * s.powf(e / 2.0) }).sum();
        t.powf(1.0 / e)
    }

    fn side_gradient(feats: &[Feature], sums: &[f64], masses: &[f64], e: f64, value: f64) -> Vec<f64> {
        if value == 0.0 {
            return feats.iter().map(|f| f.iter().map(|(c, v)| masses[*c as usize] * v).sum()).collect();
        }
        let top = sums.iter().fold(0.0f64, |m, s| m.max(*s));
        let floor = top * 1e-12;
        let weight: Vec<f64> = sums
            .iter()
            .zip(masses)
            .map(|(s, m)| if *m == 0.0 { 0.0 } else { m * s.max(floor).powf(e / 2.0 - 1.0) })
            .collect();
        let pre = 0.5 * value.powf(1.0 - e);
        feats.iter().map(|f| pre * f.iter().map(|(c, v)| weight[*c as usize] * v).sum::<f64>()).collect()
    }
}

impl RatioProblem for SquareSumProblem {
    fn dim(&self) -> usize {
        self.num_features.len()
    }

    fn numerator(&self, b: &[f64]) -> f64 {
        Self::side(&Self::sums(&self.num_features, self.w_cells.len(), b), &self.w_cells, self.q)
    }

    fn denominator(&self, b: &[f64]) -> f64 {
        Self::side(&Self::sums(&self.den_features, self.sigma_cells.len(), b), &self.sigma_cells, self.p)
    }

    fn gradient(&self, b: &[f64]) -> Option<Vec<f64>> {
        let sn = Self::sums(&self.num_features, self.w_cells.len(), b);
        let sd = Self::sums(&self.den_features, self.sigma_cells.len(), b);
        let n = Self::side(&sn, &self.w_cells, self.q);
        let d = Self::side(&sd, &self.sigma_cells, self.p);
        if d == 0.0 {
            return None;
        }
        let gn = Self::side_gradient(&self.num_features, &sn, &self.w_cells, self.q, n);
        let gd = Self::side_gradient(&self.den_features, &sd, &self.sigma_cells, self.p, d);
        Some(gn.iter().zip(&gd).map(|(a, c)| (a * d - n * c) / (d * d)).collect())
    }

    fn structured_starts(&self) -> Vec<(StartKind, Vec<f64>)> {
        let k = self.dim();
        let mut out = self.extra_starts.clone();
        out.push((StartKind::Structured, vec![1.0; k]));
        if self.singles {
            for i in 0..k {
                let mut e = vec![0.0; k];
                e[i] = 1.0;
                out.push((StartKind::Single, e));
            }
        }
        out
    }

    fn homogeneity(&self) -> f64 {
        0.5
    }
}

/// `|| (T_u f_u)_u ||_{L^q(w; l^2)} / || (f_u)_u ||_{L^p(sigma; l^2)}` over
/// functions on the `sigma`-positive leaves, one function per operator slot.
pub struct FamilyNormProblem<'a> {
    ops: Vec<&'a dyn LeafOperator>,
    sigma: &'a Measure,
    w: &'a Measure,
    p: f64,
    q: f64,
    active: Vec<usize>,
    cube_starts: bool,
}

impl<'a> FamilyNormProblem<'a> {
    pub fn new(ops: Vec<&'a dyn LeafOperator>, sigma: &'a Measure, w: &'a Measure, p: f64, q: f64) -> Result<Self> {
        if ops.is_empty() {
            return Err(DyadError::InvalidArgument("empty operator family".into()));
        }
        for op in &ops {
            crate::measure::same_lattice(op.lattice(), sigma.lattice())?;
            crate::measure::same_lattice(op.lattice(), w.lattice())?;
        }
        let active = sigma.leaf_masses().iter().enumerate().filter(|(_, m)| **m > 0.0).map(|(i, _)| i).collect();
        Ok(Self { ops, sigma, w, p, q, active, cube_starts: true })
    }

    pub fn slots(&self) -> usize {
        self.ops.len()
    }

    pub fn active_leaves(&self) -> &[usize] {
        &self.active
    }

    /// Packs per-slot leaf functions into the variable vector.
    pub fn pack(&self, fs: &[StepFunction]) -> Vec<f64> {
        fs.iter().flat_map(|f| self.active.iter().map(move |&i| f.values()[i])).collect()
    }

    pub fn unpack(&self, x: &[f64]) -> Vec<StepFunction> {
        let lat = *self.sigma.lattice();
        let a = self.active.len();
        (0..self.ops.len())
            .map(|u| {
                let mut f = StepFunction::zeros(lat);
                for (t, &i) in self.active.iter().enumerate() {
                    f.values_mut()[i] = x[u * a + t];
                }
                f
            })
            .collect()
    }

    fn images(&self, fs: &[StepFunction]) -> Vec<Vec<StepFunction>> {
        self.ops.iter().zip(fs).map(|(op, f)| op.apply_components(f, self.sigma).expect("lattices checked")).collect()
    }

    fn image_squares(&self, images: &[Vec<StepFunction>]) -> Vec<f64> {
        let mut sq = vec![0.0; self.w.lattice().leaf_count()];
        for comps in images {
            for g in comps {
                for (s, v) in sq.iter_mut().zip(g.values()) {
                    *s += v * v;
                }
            }
        }
        sq
    }

    /// `T_u^* (|Tf|^{q-2} T_u f)` for every slot.
    fn back_images(&self, images: &[Vec<StepFunction>], sq: &[f64]) -> Vec<StepFunction> {
        let e = self.q / 2.0 - 1.0;
        let factor: Vec<f64> = sq.iter().map(|s| if *s > 0.0 { s.powf(e) } else { 0.0 }).collect();
        self.ops
            .iter()
            .zip(images)
            .map(|(op, comps)| {
                let gs: Vec<StepFunction> = comps
                    .iter()
                    .map(|g| {
                        let vals = g.values().iter().zip(&factor).map(|(v, c)| v * c).collect();
                        StepFunction::from_values(*g.lattice(), vals).expect("same lattice")
                    })
                    .collect();
                op.adjoint_components(&gs, self.w).expect("lattices checked")
            })
            .collect()
    }

    fn input_squares(&self, x: &[f64]) -> Vec<f64> {
        let a = self.active.len();
        let mut sq = vec![0.0; a];
        for u in 0..self.ops.len() {
            for t in 0..a {
                sq[t] += x[u * a + t] * x[u * a + t];
            }
        }
        sq
    }

    fn active_masses(&self) -> Vec<f64> {
        self.active.iter().map(|&i| self.sigma.leaf_masses()[i]).collect()
    }
}

impl RatioProblem for FamilyNormProblem<'_> {
    fn dim(&self) -> usize {
        self.ops.len() * self.active.len()
    }

    fn nonnegative(&self) -> bool {
        false
    }

    fn numerator(&self, x: &[f64]) -> f64 {
        let fs = self.unpack(x);
        let sq = self.image_squares(&self.images(&fs));
        crate::measure::l2_aggregate_norm(&sq, self.w.leaf_masses(), self.q)
    }

    fn denominator(&self, x: &[f64]) -> f64 {
        crate::measure::l2_aggregate_norm(&self.input_squares(x), &self.active_masses(), self.p)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let fs = self.unpack(x);
        let images = self.images(&fs);
        let sq = self.image_squares(&images);
        let n = crate::measure::l2_aggregate_norm(&sq, self.w.leaf_masses(), self.q);
        let isq = self.input_squares(x);
        let masses = self.active_masses();
        let d = crate::measure::l2_aggregate_norm(&isq, &masses, self.p);
        if d == 0.0 {
            return None;
        }
        let a = self.active.len();
        let back = self.back_images(&images, &sq);
        let npre = if n > 0.0 { n.powf(1.0 - self.q) } else { 0.0 };
        let dpre = d.powf(1.0 - self.p);
        let mut g = vec![0.0; x.len()];
        for u in 0..self.ops.len() {
            for (t, &i) in self.active.iter().enumerate() {
                let dn = npre * masses[t] * back[u].values()[i];
                let fv = x[u * a + t];
                let dd = if isq[t] > 0.0 { dpre * masses[t] * isq[t].powf(self.p / 2.0 - 1.0) * fv } else { 0.0 };
                g[u * a + t] = (dn * d - n * dd) / (d * d);
            }
        }
        Some(g)
    }

    fn fixed_point_step(&self, x: &[f64]) -> Option<Vec<f64>> {
        let fs = self.unpack(x);
        let images = self.images(&fs);
        let sq = self.image_squares(&images);
        let back = self.back_images(&images, &sq);
        let a = self.active.len();
        let pc = self.p / (self.p - 1.0);
        let mut y = vec![0.0; x.len()];
        for (t, &i) in self.active.iter().enumerate() {
            let h2: f64 = back.iter().map(|b| b.values()[i] * b.values()[i]).sum();
            if h2 == 0.0 {
                continue;
            }
            let scale = h2.powf((pc - 2.0) / 2.0);
            for u in 0..self.ops.len() {
                y[u * a + t] = back[u].values()[i] * scale;
            }
        }
        Some(y)
    }

    fn structured_starts(&self) -> Vec<(StartKind, Vec<f64>)> {
        let a = self.active.len();
        let u = self.ops.len();
        let mut out = vec![(StartKind::Structured, vec![1.0; u * a])];
        if self.cube_starts && u == 1 {
            let lat = self.sigma.lattice();
            for q in lat.all_cubes() {
                let range = lat.leaf_range(q);
                let x: Vec<f64> = self.active.iter().map(|i| if range.contains(i) { 1.0 } else { 0.0 }).collect();
                if x.iter().any(|v| *v != 0.0) {
                    out.push((StartKind::Single, x));
                }
            }
        }
        out
    }
}

/// `|| T ||_{L^2(sigma) -> L^2(w; l^2)}` from the dense Gram matrix
/// `G_{jl} = sqrt(sigma_j / sigma_l) (T^* T e_l)(j)` over `sigma`-positive leaves.
pub fn spectral_norm_22(op: &dyn LeafOperator, sigma: &Measure, w: &Measure) -> Result<ConstantEstimate> {
    crate::measure::same_lattice(op.lattice(), sigma.lattice())?;
    crate::measure::same_lattice(op.lattice(), w.lattice())?;
    let lat = *op.lattice();
    if lat.leaf_count() > MAX_DENSE_LEAVES {
        return Err(DyadError::SizeOverflow { leaves: lat.leaf_count(), max: MAX_DENSE_LEAVES });
    }
    let masses = sigma.leaf_masses();
    let active: Vec<usize> = (0..lat.leaf_count()).filter(|&i| masses[i] > 0.0).collect();
    let n = active.len();
    if n == 0 || op.component_count() == 0 {
        return Ok(ConstantEstimate::exact("spectral-norm-22", 0.0, None, Vec::new()));
    }
    let columns: Vec<Vec<f64>> = active
        .par_iter()
        .map(|&l| {
            let mut e = StepFunction::zeros(lat);
            e.values_mut()[l] = 1.0;
            let comps = op.apply_components(&e, sigma).expect("lattices checked");
            let back = op.adjoint_components(&comps, w).expect("lattices checked");
            active.iter().map(|&j| (masses[j] / masses[l]).sqrt() * back.values()[j]).collect()
        })
        .collect();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for (c, col) in columns.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            g[(r, c)] = *v;
        }
    }
    let g = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(g);
    let (idx, lambda) =
        eig.eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    let mut witness = vec![0.0; lat.leaf_count()];
    for (t, &j) in active.iter().enumerate() {
        witness[j] = eig.eigenvectors[(t, idx)] / masses[j].sqrt();
    }
    normalize_sup(&mut witness);
    Ok(ConstantEstimate::exact("spectral-norm-22", lambda.max(0.0).sqrt(), None, witness))
}

/// Exact mean of `phi(sum_u eps_u x_u)` over all `2^U` sign patterns.
pub fn enumerate_sign_expectation<F>(rows: &[Vec<f64>], phi: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if rows.len() > EXACT_SIGN_LIMIT {
        return Err(DyadError::EnumerationOverflow { count: rows.len(), max: EXACT_SIGN_LIMIT });
    }
    let len = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != len) {
        return Err(DyadError::InvalidArgument("rows of different lengths".into()));
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(enumerate_signs(&refs, len, phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::DyadicLattice;
    use crate::shift::{generate_random_shift, ShiftGenerator};

    struct OneCube;

    impl RatioProblem for OneCube {
        fn dim(&self) -> usize {
            1
        }
        fn numerator(&self, x: &[f64]) -> f64 {
            3.0 * x[0]
        }
        fn denominator(&self, x: &[f64]) -> f64 {
            2.0 * x[0]
        }
    }

    #[test]
    fn one_dimensional_ratio() {
        let e = maximize_ratio("one", &OneCube, &AscentOptions::with_seed(1)).unwrap();
        assert!((e.value - 1.5).abs() < 1e-15);
        assert_eq!(e.kind, EstimateKind::LowerBound);
    }

    fn random_masses(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0.05..2.0)).collect()
    }

    #[test]
    fn square_sum_gradient_matches_finite_differences() {
        let p = SquareSumProblem::new(
            1.5,
            3.0,
            vec![1.0, 0.5, 2.0],
            vec![0.3, 1.0, 0.7],
            vec![vec![(0, 1.0), (1, 0.5)], vec![(1, 2.0), (2, 1.0)], vec![(2, 0.3)]],
            vec![vec![(0, 1.0), (1, 1.0)], vec![(1, 1.0), (2, 1.0)], vec![(2, 1.0)]],
        )
        .unwrap();
        let x = [0.4, 0.9, 0.2];
        let g = p.gradient(&x).unwrap();
        let fd = finite_difference_gradient(&p, &x, p.ratio(&x), 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn family_gradient_matches_finite_differences() {
        let lat = DyadicLattice::new(1, 0, 3).unwrap();
        let sigma = Measure::from_leaf_masses(lat, random_masses(8, 1)).unwrap();
        let w = Measure::from_leaf_masses(lat, random_masses(8, 2)).unwrap();
        let g = ShiftGenerator { m: 1, n: 1, density: 0.8, specific_form: false, allow_noncancellative: false };
        let s = generate_random_shift(&lat, &g, 5).unwrap();
        let prob = FamilyNormProblem::new(vec![&s, &s], &sigma, &w, 1.7, 2.6).unwrap();
        let x = random_start(prob.dim(), false, 3, 0);
        let an = prob.gradient(&x).unwrap();
        let fd = finite_difference_gradient(&prob, &x, prob.ratio(&x), 1e-6);
        for (a, b) in an.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-5 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn power_ascent_matches_spectral_oracle() {
        let lat = DyadicLattice::new(1, 0, 5).unwrap();
        let sigma = Measure::from_leaf_masses(lat, random_masses(32, 7)).unwrap();
        let w = Measure::from_leaf_masses(lat, random_masses(32, 8)).unwrap();
        let g = ShiftGenerator { m: 0, n: 1, density: 0.6, specific_form: false, allow_noncancellative: false };
        let s = generate_random_shift(&lat, &g, 11).unwrap();
        let exact = spectral_norm_22(&s, &sigma, &w).unwrap();
        let prob = FamilyNormProblem::new(vec![&s], &sigma, &w, 2.0, 2.0).unwrap();
        let est = maximize_ratio("norm", &prob, &AscentOptions::with_seed(3).restarts(4)).unwrap();
        assert!(est.value <= exact.value * (1.0 + 1e-9));
        assert!((est.value - exact.value).abs() <= 1e-6 * exact.value, "{} vs {}", est.value, exact.value);
    }

    #[test]
    fn spectral_identity_is_one() {
        let lat = DyadicLattice::new(1, 0, 3).unwrap();
        let sigma = Measure::from_leaf_masses(lat, random_masses(8, 4)).unwrap();
        let zero = crate::shift::ShiftSpec::zero(lat, 0, 0);
        assert_eq!(spectral_norm_22(&zero, &sigma, &sigma).unwrap().value, 0.0);
    }

    #[test]
    fn sign_expectation_small_cases() {
        let rows = vec![vec![1.0, -2.0]];
        let e = enumerate_sign_expectation(&rows, |s| s.iter().map(|v| v.abs()).sum()).unwrap();
        assert_eq!(e, 3.0);
        let rows = vec![vec![1.0], vec![1.0]];
        let e = enumerate_sign_expectation(&rows, |s| s[0].abs()).unwrap();
        assert_eq!(e, 1.0);
    }

    #[test]
    fn restarts_are_monotone_and_deterministic() {
        let p = SquareSumProblem::new(
            1.5,
            1.5,
            vec![1.0, 0.5, 2.0, 0.1],
            vec![0.3, 1.0, 0.7, 0.2],
            vec![vec![(0, 1.0), (3, 0.5)], vec![(1, 2.0), (2, 1.0)], vec![(2, 0.3), (3, 1.0)]],
            vec![vec![(0, 1.0), (3, 1.0)], vec![(1, 1.0), (2, 1.0)], vec![(2, 1.0), (3, 1.0)]],
        )
        .unwrap()
        .without_single_starts();
        let a = maximize_ratio("m", &p, &AscentOptions::with_seed(5).restarts(2)).unwrap();
        let b = maximize_ratio("m", &p, &AscentOptions::with_seed(5).restarts(8)).unwrap();
        let c = maximize_ratio("m", &p, &AscentOptions::with_seed(5).restarts(8)).unwrap();
        assert!(b.value >= a.value);
        assert_eq!(b, c);
        assert!((p.ratio(&b.witness) - b.value).abs() <= 1e-9 * b.value);
    }
}
