//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any of them failed.

use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use dyadlab::constants::{quadratic_apq, simple_apq, simple_term};
use dyadlab::experiments::report::CheckKind;
use dyadlab::experiments::suites::{random_measure, random_step_density};
use dyadlab::experiments::{
    counterexample_growth, one_weight_stein_experiment, verify_lower_bound_lemma, verify_shift_theorem,
    verify_specific_form, verify_square_theorem, CounterexampleConfig, SuiteConfig, SuiteReport,
};
use dyadlab::martingale::expand;
use dyadlab::measure::{average, integral, pairing};
use dyadlab::ratio::{maximize_ratio, spectral_norm_22, FamilyNormProblem};
use dyadlab::shift::{generate_random_shift, ShiftGenerator};
use dyadlab::sparse::{principal_cubes, verify_sparse};
use dyadlab::{AscentOptions, DyadicLattice, ExponentPair, StepFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn random_function(lat: DyadicLattice, rng: &mut ChaCha8Rng) -> StepFunction {
    let values = (0..lat.leaf_count()).map(|_| rng.gen_range(-3.0..3.0)).collect();
    StepFunction::from_values(lat, values).unwrap()
}

/// A shift of random parameters that fits the lattice.
fn random_shift_on(lat: &DyadicLattice, rng: &mut ChaCha8Rng) -> dyadlab::ShiftSpec {
    let room = lat.depth().saturating_sub(1).min(2);
    let m = rng.gen_range(0..=room);
    let n = rng.gen_range(0..=room);
    let gen = ShiftGenerator {
        m,
        n,
        density: rng.gen_range(0.2..1.0),
        specific_form: m > 0 && n > 0 && rng.gen_bool(0.5),
        allow_noncancellative: false,
    };
    generate_random_shift(lat, &gen, rng.gen()).unwrap()
}

fn exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_rec = 0.0f64;
    for _ in 0..200 {
        let lat = DyadicLattice::new(1, 0, rng.gen_range(1..=6)).unwrap();
        let sigma = random_measure(lat, &mut rng);
        let f = random_function(lat, &mut rng);
        let g = expand(&f, &sigma, lat.min_level()).unwrap().reconstruct();
        // error relative to the size of f; leaves without mass carry no
        // information about f
        let scale = f.sup_norm();
        for (i, (a, b)) in g.values().iter().zip(f.values()).enumerate() {
            if sigma.leaf_masses()[i] > 0.0 && scale > 0.0 {
                worst_rec = worst_rec.max((a - b).abs() / scale);
            }
        }
    }

    let mut worst_adj = 0.0f64;
    let mut worst_dom = f64::NEG_INFINITY;
    let mut blocks = 0usize;
    for _ in 0..200 {
        let lat = DyadicLattice::new(1, 0, rng.gen_range(2..=6)).unwrap();
        let sigma = random_measure(lat, &mut rng);
        let w = random_measure(lat, &mut rng);
        let t = random_shift_on(&lat, &mut rng);
        let f = random_function(lat, &mut rng);
        let g = random_function(lat, &mut rng);
        let lhs = pairing(&t.apply(&f, &sigma).unwrap(), &g, &w).unwrap();
        let rhs = pairing(&f, &t.adjoint().apply(&g, &w).unwrap(), &sigma).unwrap();
        worst_adj = worst_adj.max(rel_err(lhs, rhs));

        for (b, block) in t.blocks().iter().enumerate() {
            let out = t.apply_block(b, &f, &sigma).unwrap();
            let bound = integral(&f.abs(), &sigma, block.k).unwrap() / lat.volume(block.k);
            for i in lat.leaf_range(block.k) {
                worst_dom = worst_dom.max(out.values()[i].abs() - bound * (1.0 + 1e-12));
            }
            blocks += 1;
        }
    }
    Outcome::new(
        worst_rec <= 1e-12 && worst_adj <= 1e-12 && worst_dom <= 0.0,
        format!(
            "reconstruction err {worst_rec:.1e}, adjoint err {worst_adj:.1e}, domination slack {:.1e} over {blocks} blocks",
            worst_dom.max(0.0)
        ),
    )
}

fn spectral_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut worst_at = 0usize;
    for i in 0..100 {
        let lat = if rng.gen_bool(0.7) {
            DyadicLattice::new(1, rng.gen_range(0..=1), rng.gen_range(2..=7)).unwrap()
        } else {
            DyadicLattice::new(2, 0, rng.gen_range(2..=4)).unwrap()
        };
        let sigma = random_measure(lat, &mut rng);
        let w = random_measure(lat, &mut rng);
        let t = random_shift_on(&lat, &mut rng);
        let oracle = spectral_norm_22(&t, &sigma, &w).unwrap().value;
        let prob = FamilyNormProblem::new(vec![&t], &sigma, &w, 2.0, 2.0).unwrap();
        let ascent = maximize_ratio("norm", &prob, &AscentOptions::with_seed(rng.gen()).restarts(8)).unwrap().value;
        let e = rel_err(oracle, ascent);
        if e > worst {
            worst = e;
            worst_at = i;
        }
    }
    Outcome::new(worst <= 1e-6, format!("worst relative gap {worst:.1e} (instance {worst_at})"))
}

fn simple_equals_quadratic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lat = DyadicLattice::new(1, 1, 4).unwrap();
    let mut worst = 0.0f64;
    let mut below = 0usize;
    let mut witness_misses = 0usize;
    for (p, q) in [(2.0, 2.0), (1.5, 2.0), (2.0, 4.0), (1.5, 3.0)] {
        let pq = ExponentPair::new(p, q).unwrap();
        for _ in 0..50 {
            let sigma = random_measure(lat, &mut rng);
            let w = random_measure(lat, &mut rng);
            let simple = simple_apq(&sigma, &w, pq).unwrap();
            let quad = quadratic_apq(&sigma, &w, pq, &AscentOptions::with_seed(rng.gen()).restarts(8)).unwrap();
            if quad.value() < simple.value {
                below += 1;
            }
            if simple.value > 0.0 {
                worst = worst.max(quad.value() / simple.value - 1.0);
            }
            let attained = simple.witness_cube.map(|c| simple_term(&sigma, &w, pq, c)).unwrap_or(0.0);
            if rel_err(attained, quad.value()) > 1e-9 {
                witness_misses += 1;
            }
        }
    }
    Outcome::new(
        worst <= 1e-9 && below == 0 && witness_misses == 0,
        format!("max excess over simple {worst:.1e}, {below} below, {witness_misses} witness misses"),
    )
}

fn counterexample() -> Outcome {
    let direct = counterexample_growth(&CounterexampleConfig::default()).unwrap();
    let mirrored =
        counterexample_growth(&CounterexampleConfig { p: 4.0, q: 2.0, ..CounterexampleConfig::default() }).unwrap();
    let simples: Vec<f64> = direct.rows.iter().map(|r| r.simple).collect();
    let spread = simples.iter().cloned().fold(0.0, f64::max) / simples.iter().cloned().fold(f64::INFINITY, f64::min);
    let increasing = direct.rows.windows(2).all(|w| w[1].ratio > w[0].ratio);
    Outcome::new(
        direct.passed && mirrored.passed && spread <= 1.05 && increasing && (direct.slope - 1.0 / 6.0).abs() <= 0.05,
        format!(
            "slope {:.4} (expect 1/6), mirrored slope {:.4} (expect {}), simple spread {spread:.4}",
            direct.slope, mirrored.slope, mirrored.expected_slope,
        ),
    )
}

fn full_config(seed: u64, size: usize) -> SuiteConfig {
    SuiteConfig { seed, size, ..SuiteConfig::default() }
}

fn exact_failures(report: &SuiteReport<SuiteConfig>) -> usize {
    report.failed_checks().filter(|(_, c)| c.kind == CheckKind::Exact).count()
}

fn count_checks(report: &SuiteReport<SuiteConfig>, prefix: &str) -> usize {
    report.records.iter().flat_map(|r| &r.checks).filter(|c| c.name.starts_with(prefix)).count()
}

fn worst_of(report: &SuiteReport<SuiteConfig>, prefix: &str) -> f64 {
    report.summary.worst.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, v)| *v).fold(0.0, f64::max)
}

struct SuiteRuns {
    shift: SuiteReport<SuiteConfig>,
    square: SuiteReport<SuiteConfig>,
    specific: SuiteReport<SuiteConfig>,
}

fn necessity(runs: &SuiteRuns) -> Outcome {
    let failures = exact_failures(&runs.shift) + exact_failures(&runs.square) + exact_failures(&runs.specific);
    let testing = count_checks(&runs.shift, "testing-d") + count_checks(&runs.specific, "testing-d");
    let local = count_checks(&runs.square, "local<=global");
    let simple = count_checks(&runs.shift, "simple<=quadratic") + count_checks(&runs.specific, "simple<=quadratic");
    Outcome::new(
        failures == 0 && testing > 0 && local > 0 && simple > 0,
        format!(
            "{failures} violations; {testing} testing/r-bound, {local} local/global, {simple} simple/quadratic checks"
        ),
    )
}

fn sufficiency(runs: &SuiteRuns) -> Outcome {
    let failures = runs.shift.summary.threshold_failures
        + runs.square.summary.threshold_failures
        + runs.specific.summary.threshold_failures;
    let shift_max = worst_of(&runs.shift, "sufficiency").max(worst_of(&runs.specific, "sufficiency"));
    let square_max = worst_of(&runs.square, "sufficiency");
    Outcome::new(
        failures == 0 && shift_max < 64.0 && square_max < 64.0,
        format!("max shift ratio {shift_max:.4}, max square ratio {square_max:.4}, bound 64"),
    )
}

fn stein_identity() -> Outcome {
    let report = one_weight_stein_experiment(&full_config(7, 20)).unwrap();
    let bad = report.failed_checks().filter(|(_, c)| c.name.starts_with("stein")).count();
    let checked = count_checks(&report, "stein");
    let low = report
        .records
        .iter()
        .filter_map(|r| Some(r.values.get("stein")? / r.values.get("a2")?.sqrt()))
        .fold(f64::INFINITY, f64::min);
    Outcome::new(
        bad == 0 && checked == 40 && report.passed(),
        format!("{checked} checks on {} weights, smallest stein/[w]_2^(1/2) {low:.6}", report.records.len()),
    )
}

fn stopping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut not_sparse = 0usize;
    let mut containment = 0usize;
    let mut cubes = 0usize;
    for _ in 0..100 {
        let lat = if rng.gen_bool(0.5) {
            DyadicLattice::new(1, rng.gen_range(0..=1), rng.gen_range(3..=7)).unwrap()
        } else {
            DyadicLattice::new(2, 0, rng.gen_range(2..=3)).unwrap()
        };
        let sigma = random_measure(lat, &mut rng);
        let density = random_step_density(lat, &mut rng);
        let f = StepFunction::from_values(lat, density.iter().map(|d| d * rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let q0 = lat.root();
        if sigma.mass_of(q0) == 0.0 {
            continue;
        }
        let family = principal_cubes(&f, &sigma, q0).unwrap();
        let check = verify_sparse(&family, &sigma).unwrap();
        if !check.passes || check.worst_ratio < 0.5 {
            not_sparse += 1;
        }
        let abs = f.abs();
        for q in lat.all_cubes().filter(|q| lat.contains(q0, *q) && sigma.mass_of(*q) > 0.0) {
            let top = family.container(q).expect("q0 is a member");
            let (inner, outer) = (average(&abs, &sigma, q).unwrap(), average(&abs, &sigma, top).unwrap());
            if inner > 2.0 * outer * (1.0 + 1e-12) {
                containment += 1;
            }
            cubes += 1;
        }
    }
    Outcome::new(
        not_sparse == 0 && containment == 0,
        format!("{not_sparse} non-sparse families, {containment} containment violations over {cubes} cubes"),
    )
}

fn lower_bound() -> Outcome {
    let report = verify_lower_bound_lemma(&full_config(9, 60)).unwrap();
    let chain = count_checks(&report, "scaled-quadratic<=r-bound");
    let identity = count_checks(&report, "multiplier-identity");
    Outcome::new(
        report.passed() && chain == 60 && identity == 60,
        format!("{chain} chain checks, {identity} identity checks, {} failures", report.summary.exact_failures),
    )
}

fn run_verify(bin: &Path, threads: &str, out: &Path) -> bool {
    Command::new(bin)
        .args(["verify", "shift", "--seed", "17", "--suite-size", "8", "--format", "structured", "--out"])
        .arg(out)
        .env("DYADLAB_THREADS", threads)
        .stderr(Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let bin = Path::new(env!("CARGO_BIN_EXE_dyadlab"));
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = ["a1", "b1", "a4", "b4"].iter().map(|n| dir.path().join(format!("{n}.json"))).collect();
    let ok = ["1", "1", "4", "4"].iter().zip(&paths).all(|(t, p)| run_verify(bin, t, p));
    if !ok {
        return Outcome::new(false, "verify run did not succeed");
    }
    let bytes: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let identical = bytes.windows(2).all(|w| w[0] == w[1]);
    Outcome::new(
        identical && !bytes[0].is_empty(),
        format!("4 runs, {} bytes each, identical: {identical}", bytes[0].len()),
    )
}

type Row = (usize, &'static str, Outcome, Duration);

/// Runs one criterion; `limit` is its runtime budget.
fn timed(results: &mut Vec<Row>, n: usize, name: &'static str, limit: Option<u64>, f: &dyn Fn() -> Outcome) {
    let start = Instant::now();
    let mut outcome = f();
    let elapsed = start.elapsed();
    if limit.is_some_and(|s| elapsed >= Duration::from_secs(s)) {
        outcome.passed = false;
        outcome.detail += " (over time budget)";
    }
    results.push((n, name, outcome, elapsed));
}

fn main() {
    let mut results: Vec<Row> = Vec::new();
    timed(&mut results, 1, "exactness suite", Some(30), &exactness);
    timed(&mut results, 2, "spectral oracle agreement", Some(120), &spectral_agreement);
    timed(&mut results, 3, "simple equals quadratic for p <= 2 <= q", None, &simple_equals_quadratic);
    timed(&mut results, 4, "counterexample growth", Some(60), &counterexample);

    // criteria 5 and 6 read the same three suite reports
    let start = Instant::now();
    let runs = SuiteRuns {
        shift: verify_shift_theorem(&full_config(5, 100)).unwrap(),
        square: verify_square_theorem(&full_config(6, 100)).unwrap(),
        specific: verify_specific_form(&full_config(5, 100)).unwrap(),
    };
    let suites = start.elapsed();
    timed(&mut results, 5, "necessity chain", None, &|| necessity(&runs));
    timed(&mut results, 6, "sufficiency brackets", None, &|| sufficiency(&runs));
    for r in results.iter_mut().filter(|r| r.0 == 5 || r.0 == 6) {
        r.3 += suites;
    }
    timed(&mut results, 7, "one-weight Stein identity", None, &stein_identity);
    timed(&mut results, 8, "stopping construction", None, &stopping);
    timed(&mut results, 9, "lower-bound chain", None, &lower_bound);
    timed(&mut results, 10, "determinism across thread counts", None, &determinism);

    let mut all = true;
    for (n, name, o, t) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} criterion {n:>2}: {name}: {} [{:.1}s]", o.detail, t.as_secs_f64());
        all &= o.passed;
    }
    if !all {
        std::process::exit(1);
    }
}
