use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use dyadlab::constants::{
    one_weight_pack, quadratic_apq, quadratic_apq_b, quadratic_apq_star, r_bound, r_ratio, shift_testing_constant,
    simple_apq, square_testing_constant, stein_constant, testing_ratio, two_weight_norm,
};
use dyadlab::experiments::suites::random_measure;
use dyadlab::experiments::{
    counterexample_growth, counterexample_measures, one_weight_stein_experiment, verify_lower_bound_lemma,
    verify_shift_theorem, verify_specific_form, verify_square_theorem, CounterexampleConfig, SuiteConfig, SuiteReport,
};
use dyadlab::measure::lp_l2_norm;
use dyadlab::shift::generate_random_shift;
use dyadlab::{
    AscentOptions, ConstantEstimate, Direction, DyadicLattice, EstimateKind, ExponentPair, Instance, LeafOperator,
    Measure, RBoundOptions, ShiftGenerator, SquareFunctionSpec, SquareScope, StepFunction,
};

/// Two-weight inequalities for dyadic operators: instance generation,
/// constant estimation and seeded verification suites.
#[derive(Parser, Debug)]
#[command(name = "dyadlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a random or counterexample instance file.
    Gen(GenArgs),
    /// Run named constant estimators on an instance file.
    Estimate(EstimateArgs),
    /// Run a theorem suite; exit code 2 if an asserted check fails.
    Verify(VerifyArgs),
    /// Growth table for the separation example.
    Counterexample(CounterArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Structured,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum GenKind {
    Random,
    Counterexample,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Theorem {
    Shift,
    Square,
    LowerBound,
    SpecificForm,
    SteinOneWeight,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "random")]
    kind: GenKind,
    #[arg(long, default_value_t = 1)]
    dim: u32,
    #[arg(long, default_value_t = 0)]
    top: u32,
    #[arg(long, default_value_t = 4)]
    leaf: u32,
    #[arg(long)]
    seed: u64,
    /// Number of shifts in the generated family.
    #[arg(long, default_value_t = 2)]
    family_size: usize,
    #[arg(long, default_value_t = 0)]
    m: u32,
    #[arg(long, default_value_t = 1)]
    n: u32,
    /// Probability of keeping each admissible shift entry.
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long)]
    specific_form: bool,
    /// Exponent `q` of the counterexample weight.
    #[arg(long, default_value_t = 1.5)]
    q: f64,
    /// Number of ancestors of the unit cube in the counterexample.
    #[arg(long, default_value_t = 4)]
    k: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    instance: PathBuf,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',', default_value = "simple-apq,quadratic-apq")]
    which: Vec<String>,
    #[arg(long, default_value = "sigma")]
    sigma: String,
    #[arg(long, default_value = "w")]
    w: String,
    /// Square function used by the square-function estimators.
    #[arg(long, default_value = "b")]
    square: String,
    /// Re-evaluate each witness independently and fail if it disagrees.
    #[arg(long)]
    check_witness: bool,
    #[arg(long, value_enum, default_value = "structured")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(value_enum)]
    theorem: Theorem,
    #[arg(long)]
    seed: u64,
    /// TOML suite configuration; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    suite_size: Option<usize>,
    #[arg(long)]
    dim: Option<u32>,
    #[arg(long)]
    top: Option<u32>,
    #[arg(long)]
    leaf: Option<u32>,
    /// Single exponent pair instead of the configured list.
    #[arg(long, requires = "q")]
    p: Option<f64>,
    #[arg(long, requires = "p")]
    q: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "structured")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CounterArgs {
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 1.5)]
    q: f64,
    #[arg(long, default_value_t = 1)]
    dim: u32,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
    ks: Vec<u32>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Operational failure (exit 1) versus a failed assertion (exit 2).
enum Outcome {
    Pass,
    AssertionFailed,
}

fn main() -> ExitCode {
    // usage errors are operational; exit code 2 is reserved for failed checks
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Counterexample(a) => cmd_counterexample(&a),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::AssertionFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("DYADLAB_THREADS") else {
        return Ok(());
    };
    let n: usize =
        v.trim().parse().with_context(|| format!("DYADLAB_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        bail!("DYADLAB_THREADS must be positive");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_gen(a: &GenArgs) -> anyhow::Result<Outcome> {
    let inst = match a.kind {
        GenKind::Counterexample => {
            let (sigma, w) = counterexample_measures(a.dim, a.q, a.k, a.leaf.max(1))?;
            let mut inst = Instance::new(*sigma.lattice());
            inst.measures.push(("sigma".into(), sigma));
            inst.measures.push(("w".into(), w));
            inst
        }
        GenKind::Random => {
            let lat = DyadicLattice::new(a.dim, a.top, a.leaf)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut inst = Instance::new(lat);
            inst.measures.push(("sigma".into(), random_measure(lat, &mut rng)));
            inst.measures.push(("w".into(), random_measure(lat, &mut rng)));
            let f: Vec<f64> = (0..lat.leaf_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            inst.functions.push(("f".into(), StepFunction::from_values(lat, f)?));
            let g = ShiftGenerator {
                m: a.m,
                n: a.n,
                density: a.density,
                specific_form: a.specific_form,
                allow_noncancellative: false,
            };
            for u in 0..a.family_size {
                inst.shifts.push((format!("t{u}"), generate_random_shift(&lat, &g, rng.gen())?));
            }
            inst.squares.push(("b".into(), SquareFunctionSpec::random(lat, a.density, rng.gen())));
            inst
        }
    };
    emit(a.out.as_deref(), &inst.to_text())?;
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct EstimateRecord {
    estimate: ConstantEstimate,
    /// Witness ratio recomputed from its definition, when requested.
    revalidated: Option<f64>,
}

#[derive(Serialize)]
struct EstimateReport {
    command: &'static str,
    version: &'static str,
    p: f64,
    q: f64,
    seed: u64,
    restarts: usize,
    estimates: Vec<EstimateRecord>,
    passed: bool,
}

const ESTIMATORS: &[&str] = &[
    "simple-apq",
    "quadratic-apq",
    "quadratic-apq-b",
    "quadratic-apq-star",
    "stein",
    "testing-direct",
    "testing-dual",
    "square-testing-global",
    "square-testing-local",
    "two-weight-norm",
    "square-norm",
    "r-bound",
    "one-weight-ap",
];

fn cmd_estimate(a: &EstimateArgs) -> anyhow::Result<Outcome> {
    for name in &a.which {
        if !ESTIMATORS.contains(&name.as_str()) {
            bail!("unknown constant `{name}`; known: {}", ESTIMATORS.join(", "));
        }
    }
    let text = std::fs::read_to_string(&a.instance).with_context(|| format!("cannot read {}", a.instance.display()))?;
    let inst = Instance::parse(&text).with_context(|| format!("in {}", a.instance.display()))?;
    let pq = ExponentPair::new(a.p, a.q)?;
    let opts = AscentOptions::with_seed(a.seed).restarts(a.restarts);
    let measure = |name: &str| inst.measure(name).ok_or_else(|| anyhow!("instance has no measure `{name}`"));
    let square = || inst.square(&a.square).ok_or_else(|| anyhow!("instance has no square function `{}`", a.square));
    let family = inst.shift_family();
    let need_family = || if family.is_empty() { Err(anyhow!("instance has no shifts")) } else { Ok(()) };

    let mut records = Vec::new();
    for name in &a.which {
        let (estimate, revalidated) = match name.as_str() {
            "one-weight-ap" => {
                let (_, e) = one_weight_pack(measure(&a.w)?, a.p)?;
                (e, None)
            }
            other => {
                let sigma = measure(&a.sigma)?;
                let w = measure(&a.w)?;
                match other {
                    "simple-apq" => {
                        let e = simple_apq(sigma, w, pq)?;
                        let v = e.witness_cube.map(|q| {
                            let lat = sigma.lattice();
                            sigma.mass_of(q).powf(1.0 / pq.p_conj()) * w.mass_of(q).powf(1.0 / pq.q) / lat.volume(q)
                        });
                        (e, v)
                    }
                    "quadratic-apq" => {
                        let e = quadratic_apq(sigma, w, pq, &opts)?;
                        let v = cube_ratio(sigma, w, pq, &e.pool, &e.estimate.witness, |q| {
                            sigma.mass_of(q) / sigma.lattice().volume(q)
                        })?;
                        (e.estimate, Some(v))
                    }
                    "quadratic-apq-b" => {
                        let b = square()?;
                        let e = quadratic_apq_b(sigma, w, pq, b, &opts)?;
                        let coef: std::collections::HashMap<_, _> = b.coefficients().iter().copied().collect();
                        let v = cube_ratio(sigma, w, pq, &e.pool, &e.estimate.witness, |q| {
                            coef.get(&q).map_or(0.0, |c| c * sigma.mass_of(q) / sigma.lattice().volume(q))
                        })?;
                        (e.estimate, Some(v))
                    }
                    "quadratic-apq-star" => (quadratic_apq_star(sigma, w, pq, &opts)?.best.estimate, None),
                    "stein" => (stein_constant(sigma, w, pq, &opts, &[])?, None),
                    "testing-direct" | "testing-dual" => {
                        need_family()?;
                        let dir = if other == "testing-direct" { Direction::Direct } else { Direction::Dual };
                        let e = shift_testing_constant(&family, sigma, w, pq, dir, &opts)?;
                        let terms: Vec<_> = e.terms().into_iter().map(|((q, u), a)| (*q, *u, a)).collect();
                        let v = testing_ratio(&family, &terms, sigma, w, pq, dir)?;
                        (e.estimate, Some(v))
                    }
                    "square-testing-global" | "square-testing-local" => {
                        let scope =
                            if other == "square-testing-global" { SquareScope::Global } else { SquareScope::Local };
                        (square_testing_constant(square()?, sigma, w, pq, scope, &opts, &[])?.estimate, None)
                    }
                    "two-weight-norm" | "square-norm" => {
                        let op: &dyn LeafOperator = if other == "square-norm" {
                            square()?
                        } else {
                            need_family()?;
                            &family[0]
                        };
                        let e = two_weight_norm(op, sigma, w, pq, &opts, &[])?;
                        let v = operator_ratio(op, sigma, w, pq, &e.witness)?;
                        (e, Some(v))
                    }
                    "r-bound" => {
                        need_family()?;
                        let r = r_bound(&family, sigma, w, pq, &opts, &RBoundOptions::default(), &[], &[])?;
                        let lat = *sigma.lattice();
                        let fs: Vec<StepFunction> = r
                            .functions
                            .iter()
                            .map(|v| StepFunction::from_values(lat, v.clone()))
                            .collect::<Result<_, _>>()?;
                        let v = if r.members.is_empty() {
                            0.0
                        } else {
                            r_ratio(&family, &r.members, &fs, sigma, w, pq, r.direction)?
                        };
                        (r.estimate, Some(v))
                    }
                    _ => unreachable!("validated above"),
                }
            }
        };
        let estimate = ConstantEstimate { name: name.clone(), ..estimate };
        records.push(EstimateRecord { estimate, revalidated: if a.check_witness { revalidated } else { None } });
    }
    let passed = records.iter().all(|r| {
        r.revalidated.is_none_or(|v| (v - r.estimate.value).abs() <= 1e-9 * v.abs().max(r.estimate.value.abs()))
    });
    let report = EstimateReport {
        command: "estimate",
        version: env!("CARGO_PKG_VERSION"),
        p: a.p,
        q: a.q,
        seed: a.seed,
        restarts: a.restarts,
        estimates: records,
        passed,
    };
    let text = match a.format {
        Format::Structured => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => {
            let mut s = String::from("name,value,kind,revalidated\n");
            for r in &report.estimates {
                let kind = match r.estimate.kind {
                    EstimateKind::Exact => "exact".to_string(),
                    EstimateKind::LowerBound => "lower-bound".to_string(),
                    EstimateKind::Bracket { lo, hi } => format!("bracket[{lo:?} {hi:?}]"),
                };
                let reval = r.revalidated.map(|v| format!("{v:?}")).unwrap_or_default();
                s.push_str(&format!("{},{:?},{},{}\n", r.estimate.name, r.estimate.value, kind, reval));
            }
            s
        }
    };
    emit(a.out.as_deref(), &text)?;
    Ok(if passed { Outcome::Pass } else { Outcome::AssertionFailed })
}

/// Quadratic ratio at squared coefficients `b` over `pool`, evaluated leafwise.
fn cube_ratio(
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    pool: &[dyadlab::CubeId],
    b: &[f64],
    coef: impl Fn(dyadlab::CubeId) -> f64,
) -> anyhow::Result<f64> {
    let lat = *sigma.lattice();
    let mut num = Vec::new();
    let mut den = Vec::new();
    for (q, bq) in pool.iter().zip(b) {
        let a = bq.sqrt();
        let one = StepFunction::indicator(lat, *q);
        num.push(one.scaled(a * coef(*q)));
        den.push(one.scaled(a));
    }
    let d = lp_l2_norm(&den, sigma, pq.p)?;
    Ok(if d > 0.0 { lp_l2_norm(&num, w, pq.q)? / d } else { 0.0 })
}

fn operator_ratio(
    op: &dyn LeafOperator,
    sigma: &Measure,
    w: &Measure,
    pq: ExponentPair,
    f: &[f64],
) -> anyhow::Result<f64> {
    if f.is_empty() {
        return Ok(0.0);
    }
    let f = StepFunction::from_values(*sigma.lattice(), f.to_vec())?;
    let comps = op.apply_components(&f, sigma)?;
    let d = lp_l2_norm(std::slice::from_ref(&f), sigma, pq.p)?;
    Ok(if d > 0.0 { lp_l2_norm(&comps, w, pq.q)? / d } else { 0.0 })
}

fn suite_config(a: &VerifyArgs) -> anyhow::Result<SuiteConfig> {
    let mut cfg: SuiteConfig = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => SuiteConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(v) = a.suite_size {
        cfg.size = v;
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.top {
        cfg.top = v;
    }
    if let Some(v) = a.leaf {
        cfg.leaf = v;
    }
    if let (Some(p), Some(q)) = (a.p, a.q) {
        ExponentPair::new(p, q)?;
        cfg.exponents = vec![[p, q]];
    }
    if let Some(v) = a.restarts {
        cfg.restarts = v;
    }
    if let Some(v) = a.threshold {
        cfg.threshold = v;
    }
    Ok(cfg)
}

fn cmd_verify(a: &VerifyArgs) -> anyhow::Result<Outcome> {
    let cfg = suite_config(a)?;
    let report = match a.theorem {
        Theorem::Shift => verify_shift_theorem(&cfg)?,
        Theorem::Square => verify_square_theorem(&cfg)?,
        Theorem::LowerBound => verify_lower_bound_lemma(&cfg)?,
        Theorem::SpecificForm => verify_specific_form(&cfg)?,
        Theorem::SteinOneWeight => one_weight_stein_experiment(&cfg)?,
    };
    summarize(&report);
    let text = match a.format {
        Format::Structured => report.to_json() + "\n",
        Format::Csv => report.to_csv(),
    };
    emit(a.out.as_deref(), &text)?;
    Ok(if report.passed() { Outcome::Pass } else { Outcome::AssertionFailed })
}

fn summarize(report: &SuiteReport<SuiteConfig>) {
    let s = &report.summary;
    eprintln!(
        "{}: {} instances, {} exact checks, {} exact failures, {} threshold failures, {} warnings",
        report.suite, s.instances, s.exact_checks, s.exact_failures, s.threshold_failures, s.observation_warnings
    );
    for (name, v) in &s.worst {
        eprintln!("  worst {name} = {v:.6}");
    }
    for (rec, c) in report.failed_checks().take(10) {
        eprintln!("  FAILED instance {} ({}): {} lhs={:e} rhs={:e}", rec.index, rec.label, c.name, c.lhs, c.rhs);
    }
}

fn cmd_counterexample(a: &CounterArgs) -> anyhow::Result<Outcome> {
    let cfg = CounterexampleConfig {
        dim: a.dim,
        p: a.p,
        q: a.q,
        ks: a.ks.clone(),
        seed: a.seed,
        restarts: a.restarts,
        ..CounterexampleConfig::default()
    };
    let report = counterexample_growth(&cfg)?;
    eprintln!("mode {:?}: slope {:.4} (expected {:.4})", report.mode, report.slope, report.expected_slope);
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("  FAILED {}: lhs={:e} rhs={:e}", c.name, c.lhs, c.rhs);
    }
    let text = match a.format {
        Format::Csv => report.to_csv(),
        Format::Structured => report.to_json() + "\n",
    };
    emit(a.out.as_deref(), &text)?;
    Ok(if report.passed { Outcome::Pass } else { Outcome::AssertionFailed })
}
