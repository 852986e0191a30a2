//! Randomized theorem suites. Each instance draws its measures and operators
//! from a seed derived from `(config.seed, index)`, so a report depends only
//! on the configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{
    cube_square_problem, one_weight_pack, quadratic_apq, quadratic_apq_b, quadratic_apq_star, r_bound, r_ratio,
    shift_testing_constant, simple_apq, square_testing_constant, stein_constant, testing_ratio, two_weight_norm,
    Direction, Pooled, RBoundOptions, RSeed, SquareScope, TestingTerm,
};
use crate::error::{DyadError, Result};
use crate::lattice::{CubeId, DyadicLattice, ExponentPair};
use crate::measure::{Measure, StepFunction};
use crate::ratio::{derive_seed, maximize_ratio_seeded, AscentOptions};
use crate::shift::{generate_random_shift, haar_multiplier_family, ShiftGenerator, ShiftSpec, SquareFunctionSpec};

use super::report::{safe_ratio, Check, InstanceRecord, SuiteReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub size: usize,
    pub dim: u32,
    pub top: u32,
    pub leaf: u32,
    /// Exponent pairs, cycled over the instances.
    pub exponents: Vec<[f64; 2]>,
    pub family_size: usize,
    pub max_complexity: u32,
    pub shift_density: f64,
    pub square_density: f64,
    /// `(m, n)` parameter pairs for the lower-bound suite.
    pub parameters: Vec<[u32; 2]>,
    pub restarts: usize,
    pub threshold: f64,
    pub tolerance: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 24,
            dim: 1,
            top: 0,
            leaf: 5,
            exponents: vec![[1.5, 1.5], [2.0, 2.0], [3.0, 2.0], [2.0, 3.0]],
            family_size: 2,
            max_complexity: 2,
            shift_density: 0.5,
            square_density: 0.5,
            parameters: vec![[0, 1], [1, 1], [1, 2]],
            restarts: 8,
            threshold: 64.0,
            tolerance: 1e-9,
        }
    }
}

impl SuiteConfig {
    pub fn lattice(&self) -> Result<DyadicLattice> {
        DyadicLattice::new(self.dim, self.top, self.leaf)
    }

    fn exponent(&self, i: usize) -> Result<ExponentPair> {
        if self.exponents.is_empty() {
            return Err(DyadError::InvalidArgument("no exponent pairs configured".into()));
        }
        let [p, q] = self.exponents[i % self.exponents.len()];
        ExponentPair::new(p, q)
    }

    fn opts(&self, rng: &mut ChaCha8Rng) -> AscentOptions {
        AscentOptions::with_seed(rng.gen()).restarts(self.restarts)
    }
}

/// Random leaf masses of one of four shapes: uniform, heavy-tailed, sparse
/// (about 40% zero leaves) or a dyadic step profile.
pub fn random_measure(lat: DyadicLattice, rng: &mut ChaCha8Rng) -> Measure {
    let n = lat.leaf_count();
    let masses: Vec<f64> = match rng.gen_range(0..4) {
        0 => (0..n).map(|_| rng.gen_range(0.05..1.0)).collect(),
        1 => (0..n).map(|_| (rng.gen_range(-4.0..4.0f64)).exp()).collect(),
        2 => (0..n).map(|_| if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.05..1.0) }).collect(),
        _ => random_step_density(lat, rng).iter().enumerate().map(|(i, d)| d * lat.volume(lat.leaf_cube(i))).collect(),
    };
    Measure::from_leaf_masses(lat, masses).expect("nonnegative masses")
}

/// Strictly positive density constant on the cubes of one random level.
pub fn random_step_density(lat: DyadicLattice, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let level = rng.gen_range(lat.min_level()..=lat.max_level());
    let values: Vec<f64> = (0..lat.cubes_at(level)).map(|_| rng.gen_range(-3.0..3.0f64).exp()).collect();
    (0..lat.leaf_count()).map(|i| values[lat.cube_of_leaf(i, level).index as usize]).collect()
}

/// A family whose first member has complexity exactly `kappa`; every member
/// has `m, n <= kappa` (and `m, n >= 1` in specific form).
pub fn random_family(
    lat: DyadicLattice,
    cfg: &SuiteConfig,
    kappa: u32,
    specific_form: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ShiftSpec>> {
    let lo = u32::from(specific_form);
    (0..cfg.family_size.max(1))
        .map(|u| {
            let (mut m, mut n) = (rng.gen_range(lo..=kappa), rng.gen_range(lo..=kappa));
            if u == 0 {
                if rng.gen_bool(0.5) {
                    m = kappa;
                } else {
                    n = kappa;
                }
            }
            let g = ShiftGenerator { m, n, density: cfg.shift_density, specific_form, allow_noncancellative: false };
            generate_random_shift(&lat, &g, rng.gen())
        })
        .collect()
}

fn run_suite<F>(name: &str, cfg: &SuiteConfig, instance: F) -> Result<SuiteReport<SuiteConfig>>
where
    F: Fn(usize, u64) -> Result<InstanceRecord> + Sync,
{
    cfg.lattice()?;
    let records: Vec<InstanceRecord> =
        (0..cfg.size).into_par_iter().map(|i| instance(i, derive_seed(cfg.seed, i as u64))).collect::<Result<_>>()?;
    Ok(SuiteReport::new(name, cfg.clone(), records))
}

fn terms_of(t: &Pooled<TestingTerm>) -> Vec<(CubeId, usize, f64)> {
    t.terms().into_iter().map(|((q, u), a)| (*q, *u, a)).collect()
}

/// Shift-family quantities shared by the shift and specific-form suites.
struct ShiftCore {
    testing_direct: f64,
    testing_dual: f64,
    r: f64,
}

fn shift_core(
    rec: &mut InstanceRecord,
    family: &[ShiftSpec],
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    cfg: &SuiteConfig,
    opts: &AscentOptions,
) -> Result<ShiftCore> {
    let lat = *sigma.lattice();
    let tol = cfg.tolerance;
    let td = shift_testing_constant(family, sigma, w, pq, Direction::Direct, opts)?;
    let tw = shift_testing_constant(family, sigma, w, pq, Direction::Dual, opts)?;
    let td_eval = testing_ratio(family, &terms_of(&td), sigma, w, pq, Direction::Direct)?;
    let tw_eval = testing_ratio(family, &terms_of(&tw), sigma, w, pq, Direction::Dual)?;
    rec.checks.push(Check::close("testing-direct-witness", td.value(), td_eval, tol));
    rec.checks.push(Check::close("testing-dual-witness", tw.value(), tw_eval, tol));

    let r = r_bound(
        family,
        sigma,
        w,
        pq,
        opts,
        &RBoundOptions::default(),
        &[RSeed::from_testing(lat, &td)],
        &[RSeed::from_testing(lat, &tw)],
    )?;
    let fs: Vec<StepFunction> =
        r.functions.iter().map(|v| StepFunction::from_values(lat, v.clone())).collect::<Result<_>>()?;
    let r_valid = if r.members.is_empty() { 0.0 } else { r_ratio(family, &r.members, &fs, sigma, w, pq, r.direction)? };
    rec.checks.push(Check::close("r-bound-witness", r.estimate.value, r_valid, tol));
    rec.checks.push(Check::le("testing-direct<=r-bound", td_eval, r_valid, tol));
    rec.checks.push(Check::le("testing-dual<=r-bound", tw_eval, r_valid, tol));
    rec.value("testing-direct", td.value());
    rec.value("testing-dual", tw.value());
    rec.value("r-bound", r_valid);
    Ok(ShiftCore { testing_direct: td.value(), testing_dual: tw.value(), r: r_valid })
}

fn shift_suite(cfg: &SuiteConfig, specific_form: bool) -> Result<SuiteReport<SuiteConfig>> {
    let name = if specific_form { "specific-form" } else { "shift" };
    let lat = cfg.lattice()?;
    let lo = u32::from(specific_form);
    if cfg.max_complexity < lo {
        return Err(DyadError::InvalidArgument("specific-form shifts need complexity >= 1".into()));
    }
    if cfg.max_complexity + 1 > lat.depth() {
        return Err(DyadError::InsufficientResolution(format!(
            "complexity {} needs lattice depth > {}",
            cfg.max_complexity, cfg.max_complexity
        )));
    }
    run_suite(name, cfg, |i, seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pq = cfg.exponent(i)?;
        let kappa = lo + (i as u32 / cfg.exponents.len().max(1) as u32) % (cfg.max_complexity + 1 - lo);
        let sigma = random_measure(lat, &mut rng);
        let w = random_measure(lat, &mut rng);
        let family = random_family(lat, cfg, kappa, specific_form, &mut rng)?;
        let opts = cfg.opts(&mut rng);
        let mut rec = InstanceRecord::new(i, seed, pq.p, pq.q, format!("kappa={kappa}"));
        let tol = cfg.tolerance;

        let simple = simple_apq(&sigma, &w, pq)?.value;
        let quad = quadratic_apq(&sigma, &w, pq, &opts)?;
        rec.checks.push(Check::le("simple<=quadratic", simple, quad.value(), tol));
        let sym = quadratic_apq(&w, &sigma, pq.dual(), &opts)?;
        let factor = safe_ratio(quad.value(), sym.value()).max(safe_ratio(sym.value(), quad.value()));
        rec.checks.push(Check::observe("symmetry-factor", factor, cfg.threshold));
        rec.value("simple-apq", simple);
        rec.value("quadratic-apq", quad.value());
        rec.value("quadratic-apq-dual", sym.value());

        let core = shift_core(&mut rec, &family, &sigma, &w, pq, cfg, &opts)?;
        let k1 = 1.0 + kappa as f64;
        let a_term = if specific_form {
            let star = quadratic_apq_star(&sigma, &w, pq, &opts)?;
            let (k, _) = star.pair;
            let seed: Vec<(CubeId, CubeId, f64)> =
                star.best.terms().into_iter().map(|(q, a)| (*q, lat.child(*q, k), a)).collect();
            let stein = stein_constant(&sigma, &w, pq, &opts, &[seed])?;
            let scale = lat.children_per_cube() as f64;
            rec.checks.push(Check::le("star<=2^N*stein", star.best.value(), scale * stein.value, tol));
            rec.checks.push(Check::observe(
                "star-over-quadratic",
                safe_ratio(star.best.value(), quad.value()),
                cfg.threshold,
            ));
            for (u, s) in family.iter().enumerate() {
                let v = specific_form_leakage(s, &sigma, &mut rng)?;
                rec.checks.push(Check::le(format!("vanishing[{u}]"), v, 1e-12, 0.0));
            }
            rec.value("quadratic-apq-star", star.best.value());
            rec.value("stein", stein.value);
            star.best.value()
        } else {
            quad.value()
        };
        let denom = k1 * (core.testing_direct + core.testing_dual) + k1 * k1 * a_term;
        let ratio = safe_ratio(core.r, denom);
        rec.checks.push(Check::threshold(format!("sufficiency[kappa={kappa}]"), ratio, cfg.threshold));
        rec.value("sufficiency-ratio", ratio);
        Ok(rec)
    })
}

/// Verifies necessity (testing and simple constants below the R-bound and
/// quadratic estimates) and bounds the sufficiency ratio for random families.
pub fn verify_shift_theorem(cfg: &SuiteConfig) -> Result<SuiteReport<SuiteConfig>> {
    shift_suite(cfg, false)
}

/// As [`verify_shift_theorem`] with specific-form families and `[sigma, w]^*`
/// in the sufficiency bound.
pub fn verify_specific_form(cfg: &SuiteConfig) -> Result<SuiteReport<SuiteConfig>> {
    shift_suite(cfg, true)
}

/// Largest `|A_K f|` on the child of `K` carrying `f`, over every block and
/// child, for a random `f`. Zero for specific-form shifts.
pub fn specific_form_leakage(shift: &ShiftSpec, sigma: &Measure, rng: &mut ChaCha8Rng) -> Result<f64> {
    let lat = *shift.lattice();
    let f = StepFunction::from_values(lat, (0..lat.leaf_count()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let mut worst = 0.0f64;
    for (b, block) in shift.blocks().iter().enumerate() {
        for child in lat.children(block.k) {
            let out = shift.apply_block(b, &f.restricted(child), sigma)?;
            for i in lat.leaf_range(child) {
                worst = worst.max(out.values()[i].abs());
            }
        }
    }
    Ok(worst)
}

/// Square-function suite: local and global testing, `[sigma, w]^b` and the
/// operator norm.
pub fn verify_square_theorem(cfg: &SuiteConfig) -> Result<SuiteReport<SuiteConfig>> {
    let lat = cfg.lattice()?;
    run_suite("square", cfg, |i, seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pq = cfg.exponent(i)?;
        let sigma = random_measure(lat, &mut rng);
        let w = random_measure(lat, &mut rng);
        let b = SquareFunctionSpec::random(lat, cfg.square_density, rng.gen());
        let opts = cfg.opts(&mut rng);
        let tol = cfg.tolerance;
        let mut rec = InstanceRecord::new(i, seed, pq.p, pq.q, format!("coefficients={}", b.coefficients().len()));

        let local = square_testing_constant(&b, &sigma, &w, pq, SquareScope::Local, &opts, &[])?;
        let ab = quadratic_apq_b(&sigma, &w, pq, &b, &opts)?;
        // children of each cube inherit its coefficient from the [sigma,w]^b witness
        let from_ab: Vec<f64> = local
            .pool
            .iter()
            .map(|r| {
                lat.parent(*r)
                    .and_then(|par| ab.pool.iter().position(|c| *c == par))
                    .map_or(0.0, |pos| ab.estimate.witness[pos])
            })
            .collect();
        let global = square_testing_constant(
            &b,
            &sigma,
            &w,
            pq,
            SquareScope::Global,
            &opts,
            &[local.estimate.witness.clone(), from_ab],
        )?;
        let mut seeds = Vec::new();
        let terms = global.terms();
        for s in 0..4 {
            let mut f = StepFunction::zeros(lat);
            for (q, a) in &terms {
                let sign = if s == 0 || rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                f = f.axpy(sign * a, &StepFunction::indicator(lat, **q));
            }
            seeds.push(f);
        }
        let norm = two_weight_norm(&b, &sigma, &w, pq, &opts, &seeds)?;

        rec.checks.push(Check::le("local<=global", local.value(), global.value(), tol));
        let half = (lat.children_per_cube() as f64).sqrt();
        rec.checks.push(Check::le("apq-b<=2^(N/2)*global", ab.value(), half * global.value(), tol));
        if norm.is_exact() {
            rec.checks.push(Check::le("global<=norm", global.value(), norm.value, tol));
        }
        rec.checks.push(Check::observe("global-over-norm", safe_ratio(global.value(), norm.value), cfg.threshold));
        let ratio = safe_ratio(norm.value, local.value() + ab.value());
        rec.checks.push(Check::threshold("sufficiency", ratio, cfg.threshold));
        rec.value("testing-local", local.value());
        rec.value("testing-global", global.value());
        rec.value("quadratic-apq-b", ab.value());
        rec.value("norm", norm.value);
        rec.value("norm-exact", f64::from(u8::from(norm.is_exact())));
        rec.value("sufficiency-ratio", ratio);
        Ok(rec)
    })
}

/// The lower-bound chain `2^{-Nm} [sigma, w]-value <= R` for the Haar
/// multiplier families, instance `i` using `parameters[i % len]`.
pub fn verify_lower_bound_lemma(cfg: &SuiteConfig) -> Result<SuiteReport<SuiteConfig>> {
    let lat = cfg.lattice()?;
    if cfg.parameters.is_empty() {
        return Err(DyadError::InvalidArgument("no (m, n) parameters configured".into()));
    }
    let families: Vec<_> =
        cfg.parameters.iter().map(|[m, n]| haar_multiplier_family(&lat, *m, *n)).collect::<Result<_>>()?;
    run_suite("lower-bound", cfg, |i, seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let which = i % cfg.parameters.len();
        let [m, n] = cfg.parameters[which];
        let pq = cfg.exponent(i / cfg.parameters.len())?;
        let sigma = random_measure(lat, &mut rng);
        let w = random_measure(lat, &mut rng);
        let opts = cfg.opts(&mut rng);
        let tol = cfg.tolerance;
        let fam = &families[which];
        let mut rec = InstanceRecord::new(i, seed, pq.p, pq.q, format!("m={m},n={n}"));
        let scale = (lat.children_per_cube() as f64).powi(m as i32);

        // |T_I f_I| = sigma(I) / (2^{Nm} |I|) 1_I
        let mut identity_err = 0.0f64;
        let mut identity_size = 0.0f64;
        for wit in fam {
            let out = wit.shift.apply(&wit.test_function, &sigma)?;
            let level = sigma.mass_of(wit.cube) / (scale * lat.volume(wit.cube));
            let inside = lat.leaf_range(wit.cube);
            for (idx, v) in out.values().iter().enumerate() {
                let want = if inside.contains(&idx) { level } else { 0.0 };
                identity_err = identity_err.max((v.abs() - want).abs());
                identity_size = identity_size.max(want);
            }
        }
        rec.checks.push(Check::le("multiplier-identity", identity_err, 1e-12 * identity_size.max(1.0), 0.0));

        let cubes: Vec<CubeId> = fam.iter().map(|wit| wit.cube).collect();
        let (prob, pool) = cube_square_problem(&sigma, &w, pq, |q| {
            if cubes.contains(&q) {
                sigma.mass_of(q) / lat.volume(q)
            } else {
                0.0
            }
        })?;
        let tested = if pool.is_empty() {
            0.0
        } else {
            let e = maximize_ratio_seeded("quadratic-apq-tested", &prob, &opts, &[])?;
            let mut members = Vec::new();
            let mut functions = Vec::new();
            for (q, b) in pool.iter().zip(&e.witness) {
                if *b > 0.0 {
                    let u = cubes.iter().position(|c| c == q).expect("pool cube is a family cube");
                    members.push(u);
                    functions.push(fam[u].test_function.scaled(b.sqrt()));
                }
            }
            let shifts: Vec<ShiftSpec> = fam.iter().map(|wit| wit.shift.clone()).collect();
            let at_seed = r_ratio(&shifts, &members, &functions, &sigma, &w, pq, Direction::Direct)?;
            rec.checks.push(Check::close("displayed-identity", e.value / scale, at_seed, tol));
            let ropts =
                RBoundOptions { singletons: false, random_instances: 0, dual: false, ..RBoundOptions::default() };
            let seed = RSeed { members, functions };
            let r = r_bound(&shifts, &sigma, &w, pq, &opts, &ropts, &[seed], &[])?;
            let fs: Vec<StepFunction> =
                r.functions.iter().map(|v| StepFunction::from_values(lat, v.clone())).collect::<Result<_>>()?;
            let r_valid = r_ratio(&shifts, &r.members, &fs, &sigma, &w, pq, r.direction)?;
            rec.checks.push(Check::le("scaled-quadratic<=r-bound", e.value / scale, r_valid, tol));
            rec.value("r-bound", r_valid);
            e.value
        };
        rec.value("quadratic-apq-tested", tested);
        rec.value("family-size", fam.len() as f64);
        Ok(rec)
    })
}

/// One-weight checks: the Stein constant at `p = 2` against `[w]_2^{1/2}`, and
/// `[w]_p^{1/p} <= [sigma, w]_{p,p}` at `p = 1.5` and `p = 3`.
pub fn one_weight_stein_experiment(cfg: &SuiteConfig) -> Result<SuiteReport<SuiteConfig>> {
    let lat = cfg.lattice()?;
    run_suite("stein-one-weight", cfg, |i, seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let density = random_step_density(lat, &mut rng);
        let w = Measure::from_density(lat, &density)?;
        let opts = cfg.opts(&mut rng);
        let tol = cfg.tolerance;
        let mut rec = InstanceRecord::new(i, seed, 2.0, 2.0, "step-weight");

        let (sigma, a2) = one_weight_pack(&w, 2.0)?;
        let root = a2.value.sqrt();
        let stein = stein_constant(&sigma, &w, ExponentPair::new(2.0, 2.0)?, &opts, &[])?;
        rec.checks.push(Check::le("stein>=0.99*[w]_2^(1/2)", 0.99 * root, stein.value, 0.0));
        rec.checks.push(Check::le("stein<=[w]_2^(1/2)", stein.value, root, 1e-6));
        rec.value("a2", a2.value);
        rec.value("stein", stein.value);

        for p in [1.5, 3.0] {
            let (sigma, ap) = one_weight_pack(&w, p)?;
            let pq = ExponentPair::new(p, p)?;
            let quad = quadratic_apq(&sigma, &w, pq, &opts)?;
            let lower = ap.value.powf(1.0 / p);
            let upper = ap.value.powf(if p <= 2.0 { 1.0 / (2.0 * (p - 1.0)) } else { 0.5 });
            rec.checks.push(Check::le(format!("[w]_p^(1/p)<=quadratic[p={p}]"), lower, quad.value(), tol));
            let position = if upper > lower { (quad.value() / lower).ln() / (upper / lower).ln() } else { 0.0 };
            rec.value(&format!("ap[p={p}]"), ap.value);
            rec.value(&format!("quadratic[p={p}]"), quad.value());
            rec.value(&format!("bracket-position[p={p}]"), position);
        }
        Ok(rec)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SuiteConfig {
        SuiteConfig { size: 4, leaf: 4, restarts: 4, ..SuiteConfig::default() }
    }

    #[test]
    fn shift_suite_passes_and_is_deterministic() {
        let a = verify_shift_theorem(&small()).unwrap();
        assert!(a.passed(), "{:?}", a.failed_checks().collect::<Vec<_>>());
        let b = verify_shift_theorem(&small()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn zero_shift_family_gives_zero_ratios() {
        let lat = DyadicLattice::new(1, 0, 3).unwrap();
        let cfg = SuiteConfig { leaf: 3, ..small() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sigma = random_measure(lat, &mut rng);
        let w = random_measure(lat, &mut rng);
        let fam = vec![ShiftSpec::zero(lat, 0, 1)];
        let mut rec = InstanceRecord::new(0, 0, 2.0, 2.0, "zero");
        let pq = ExponentPair::new(1.5, 2.5).unwrap();
        let core = shift_core(&mut rec, &fam, &sigma, &w, pq, &cfg, &AscentOptions::with_seed(0).restarts(2)).unwrap();
        assert_eq!((core.testing_direct, core.testing_dual, core.r), (0.0, 0.0, 0.0));
        assert!(rec.passed());
    }

    #[test]
    fn other_suites_pass() {
        for r in [
            verify_square_theorem(&small()).unwrap(),
            verify_specific_form(&small()).unwrap(),
            verify_lower_bound_lemma(&small()).unwrap(),
            one_weight_stein_experiment(&small()).unwrap(),
        ] {
            assert!(r.passed(), "{}: {:?}", r.suite, r.failed_checks().collect::<Vec<_>>());
        }
    }
}
