//! The separation example: `sigma` is Lebesgue measure on `Q0 = [0,1)^N` and
//! `w` has density `|Q0^(k)|^{q-1}` on the annulus `Q0^(k) \ Q0^(k-1)`, where
//! `Q0^(k) = [0, 2^k)^N`.
//!
//! Both measures are constant on the cells `Q0, A_1, ..., A_K`, and every
//! cube meeting both supports is an ancestor `Q0^(m)`. The quadratic ratio
//! restricted to these ancestors therefore reduces to a problem on `K + 1`
//! cells, which is what makes `K = 64` tractable.

use serde::{Deserialize, Serialize};

use crate::error::{DyadError, Result};
use crate::lattice::{DyadicLattice, ExponentPair};
use crate::measure::Measure;
use crate::ratio::{maximize_ratio_seeded, AscentOptions, ConstantEstimate, RatioProblem, SquareSumProblem};

use super::report::Check;

/// Cell masses: index 0 is `Q0`, index `k >= 1` the annulus `A_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCells {
    pub dim: u32,
    pub sigma: Vec<f64>,
    pub w: Vec<f64>,
}

fn chain_volume(dim: u32, m: u32) -> f64 {
    2f64.powi((m * dim) as i32)
}

impl ChainCells {
    /// The construction for exponent `q` with `K` ancestors.
    pub fn build(dim: u32, q: f64, k: u32) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(DyadError::InvalidArgument("need K >= 1 and N >= 1".into()));
        }
        let mut sigma = vec![0.0; k as usize + 1];
        sigma[0] = 1.0;
        let mut w = vec![0.0; k as usize + 1];
        for j in 1..=k {
            let vol = chain_volume(dim, j);
            w[j as usize] = vol.powf(q - 1.0) * (vol - chain_volume(dim, j - 1));
        }
        Ok(Self { dim, sigma, w })
    }

    pub fn ancestors(&self) -> u32 {
        (self.sigma.len() - 1) as u32
    }

    /// The same cells with the roles of the two measures exchanged.
    pub fn swapped(&self) -> Self {
        Self { dim: self.dim, sigma: self.w.clone(), w: self.sigma.clone() }
    }

    /// Mass of `Q0^(m)`: the cells `0..=m`.
    pub fn sigma_of(&self, m: u32) -> f64 {
        self.sigma[..=m as usize].iter().sum()
    }

    pub fn w_of(&self, m: u32) -> f64 {
        self.w[..=m as usize].iter().sum()
    }

    /// Exact simple constant; only the ancestors see both measures.
    pub fn simple(&self, pq: ExponentPair) -> f64 {
        (0..=self.ancestors())
            .map(|m| {
                let (s, w) = (self.sigma_of(m), self.w_of(m));
                if s == 0.0 || w == 0.0 {
                    0.0
                } else {
                    s.powf(1.0 / pq.p_conj()) * w.powf(1.0 / pq.q) / chain_volume(self.dim, m)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Quadratic problem in `b_m = a_m^2` over the ancestors `m = 1..=K`.
    pub fn quadratic_problem(&self, pq: ExponentPair) -> Result<SquareSumProblem> {
        let k = self.ancestors();
        let mut num = Vec::new();
        let mut den = Vec::new();
        for m in 1..=k {
            let c = self.sigma_of(m) / chain_volume(self.dim, m);
            num.push((0..=m).map(|j| (j, c * c)).collect());
            den.push((0..=m).map(|j| (j, 1.0)).collect());
        }
        SquareSumProblem::new(pq.p, pq.q, self.w.clone(), self.sigma.clone(), num, den)
    }

    /// `(LHS, RHS)` of the quadratic inequality at the profile `b`.
    pub fn sides(&self, pq: ExponentPair, b: &[f64]) -> Result<(f64, f64)> {
        let prob = self.quadratic_problem(pq)?;
        Ok((prob.numerator(b), prob.denominator(b)))
    }
}

/// How the example is realised for a given exponent pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterMode {
    /// `q < 2`: the construction itself.
    Direct,
    /// `p > 2 <= q`: the construction at `(q', p')` with the measures swapped.
    Mirrored,
    /// `p <= 2 <= q`: no separation is possible; the table shows agreement.
    Bounded,
}

impl CounterMode {
    pub fn for_exponents(pq: ExponentPair) -> Self {
        if pq.q < 2.0 {
            CounterMode::Direct
        } else if pq.p > 2.0 {
            CounterMode::Mirrored
        } else {
            CounterMode::Bounded
        }
    }
}

/// Cells realising `(sigma, w)` at `pq` in the given mode.
pub fn chain_instance(dim: u32, pq: ExponentPair, k: u32, mode: CounterMode) -> Result<ChainCells> {
    match mode {
        CounterMode::Direct | CounterMode::Bounded => ChainCells::build(dim, pq.q, k),
        CounterMode::Mirrored => Ok(ChainCells::build(dim, pq.dual().q, k)?.swapped()),
    }
}

/// Test profile for the growth fit: `a_m = 1` for the direct construction,
/// `a_m = |Q0^(m)| / sigma(Q0^(m))` for the mirrored one (the averaging
/// factor then cancels and each ancestor contributes equally to the left side).
pub fn structured_profile(cells: &ChainCells, mode: CounterMode) -> Vec<f64> {
    (1..=cells.ancestors())
        .map(|m| match mode {
            CounterMode::Mirrored => {
                let c = cells.sigma_of(m) / chain_volume(cells.dim, m);
                1.0 / (c * c)
            }
            _ => 1.0,
        })
        .collect()
}

/// Materializes the construction on a full lattice `[0, 2^K)^N` with leaves
/// at level `leaf`.
pub fn counterexample_measures(dim: u32, q: f64, k: u32, leaf: u32) -> Result<(Measure, Measure)> {
    let lat = DyadicLattice::new(dim, k, leaf)?;
    let cells = ChainCells::build(dim, q, k)?;
    let q0 = lat.cube(0, &vec![0; dim as usize])?;
    let mut sigma = vec![0.0; lat.leaf_count()];
    for i in lat.leaf_range(q0) {
        sigma[i] = lat.volume(lat.leaf_cube(i));
    }
    let mut w = vec![0.0; lat.leaf_count()];
    for j in 1..=k {
        let anc = lat.ancestor(q0, j).expect("within the lattice");
        let inner = lat.ancestor(q0, j - 1).expect("within the lattice");
        let density = cells.w[j as usize] / (lat.volume(anc) - lat.volume(inner));
        for i in lat.leaf_range(anc) {
            if !lat.leaf_range(inner).contains(&i) {
                w[i] = density * lat.volume(lat.leaf_cube(i));
            }
        }
    }
    Ok((Measure::from_leaf_masses(lat, sigma)?, Measure::from_leaf_masses(lat, w)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleConfig {
    pub dim: u32,
    pub p: f64,
    pub q: f64,
    pub ks: Vec<u32>,
    pub seed: u64,
    pub restarts: usize,
    pub slope_tolerance: f64,
    pub simple_spread: f64,
    pub bounded_tolerance: f64,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            p: 2.0,
            q: 1.5,
            ks: vec![4, 8, 16, 32, 64],
            seed: 0,
            restarts: 8,
            slope_tolerance: 0.05,
            simple_spread: 1.05,
            bounded_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRow {
    pub k: u32,
    pub simple: f64,
    pub quadratic: f64,
    pub ratio: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub structured_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub config: CounterexampleConfig,
    pub mode: CounterMode,
    pub rows: Vec<CounterexampleRow>,
    pub slope: f64,
    pub expected_slope: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl CounterexampleReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("K,simple,quadratic,ratio,lhs,rhs,structured_ratio,slope\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                r.k, r.simple, r.quadratic, r.ratio, r.lhs, r.rhs, r.structured_ratio, self.slope
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Quadratic estimate over the ancestors, seeded with the structured profile.
pub fn chain_quadratic(
    cells: &ChainCells,
    pq: ExponentPair,
    mode: CounterMode,
    opts: &AscentOptions,
) -> Result<ConstantEstimate> {
    let prob = cells.quadratic_problem(pq)?;
    let mut est = maximize_ratio_seeded("quadratic-apq-chain", &prob, opts, &[structured_profile(cells, mode)])?;
    // a single ancestor is always admissible, so the simple constant is a floor
    let simple = cells.simple(pq);
    if simple > est.value {
        est.value = simple;
    }
    Ok(est)
}

/// Growth table over `cfg.ks` with the checks for the selected mode.
pub fn counterexample_growth(cfg: &CounterexampleConfig) -> Result<CounterexampleReport> {
    let pq = ExponentPair::new(cfg.p, cfg.q)?;
    if cfg.ks.len() < 2 || cfg.ks.contains(&0) {
        return Err(DyadError::InvalidArgument("need at least two positive K values".into()));
    }
    let mode = CounterMode::for_exponents(pq);
    let mut rows = Vec::new();
    for (i, &k) in cfg.ks.iter().enumerate() {
        let cells = chain_instance(cfg.dim, pq, k, mode)?;
        let opts = AscentOptions::with_seed(crate::ratio::derive_seed(cfg.seed, i as u64)).restarts(cfg.restarts);
        let simple = cells.simple(pq);
        let quad = chain_quadratic(&cells, pq, mode, &opts)?.value;
        let (lhs, rhs) = cells.sides(pq, &structured_profile(&cells, mode))?;
        rows.push(CounterexampleRow {
            k,
            simple,
            quadratic: quad,
            ratio: quad / simple,
            lhs,
            rhs,
            structured_ratio: lhs / rhs,
        });
    }
    let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let srs: Vec<f64> = rows.iter().map(|r| r.structured_ratio).collect();
    let slope = log_log_slope(&ks, &srs);
    let construction_q = match mode {
        CounterMode::Mirrored => pq.dual().q,
        _ => pq.q,
    };
    let expected_slope = (1.0 / construction_q - 0.5).max(0.0);
    let mut checks = Vec::new();
    let smax = rows.iter().map(|r| r.simple).fold(0.0, f64::max);
    let smin = rows.iter().map(|r| r.simple).fold(f64::INFINITY, f64::min);
    checks.push(Check::le("simple-spread", smax / smin, cfg.simple_spread, 0.0));
    match mode {
        CounterMode::Bounded => {
            let worst = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
            checks.push(Check::le("quadratic-over-simple", worst, 1.0 + cfg.bounded_tolerance, 0.0));
        }
        CounterMode::Direct | CounterMode::Mirrored => {
            let drops = rows.windows(2).filter(|w| w[1].ratio.is_nan() || w[1].ratio <= w[0].ratio).count();
            checks.push(Check::le("ratio-non-increases", drops as f64, 0.0, 0.0));
            checks.push(Check::le("slope-error", (slope - expected_slope).abs(), cfg.slope_tolerance, 0.0));
        }
    }
    if mode == CounterMode::Mirrored {
        // (sigma0, w0)_{q', p'} = (w0, sigma0)_{p, q}
        for &k in &cfg.ks {
            let base = ChainCells::build(cfg.dim, pq.dual().q, k)?;
            let a = base.simple(pq.dual());
            let b = base.swapped().simple(pq);
            checks.push(Check::close(format!("duality[K={k}]"), a, b, 1e-12));
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(CounterexampleReport { config: cfg.clone(), mode, rows, slope, expected_slope, checks, passed })
}
