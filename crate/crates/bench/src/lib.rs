//! Shared fixtures for the operator benchmarks.

use dyadlab::shift::{generate_random_shift, ShiftGenerator};
use dyadlab::{DyadicLattice, Measure, ShiftSpec, SquareFunctionSpec, StepFunction};

/// A lattice with `2^(dim * (top + leaf))` leaves together with two
/// non-trivial weights, a test function and the operators under test.
pub struct Fixture {
    pub lattice: DyadicLattice,
    pub sigma: Measure,
    pub w: Measure,
    pub f: StepFunction,
    pub shift: ShiftSpec,
    pub square: SquareFunctionSpec,
}

// Smooth but far from constant, so that no average degenerates.
fn profile(i: usize, phase: f64) -> f64 {
    let x = i as f64 * 0.7548776662 + phase;
    1.0 + 0.9 * (x * 2.0).sin() * (x * 0.37).cos()
}

impl Fixture {
    pub fn new(dim: u32, top: u32, leaf: u32, seed: u64) -> Self {
        let lattice = DyadicLattice::new(dim, top, leaf).expect("valid lattice");
        let n = lattice.leaf_count();
        let sigma_density: Vec<f64> = (0..n).map(|i| profile(i, 0.1)).collect();
        let w_density: Vec<f64> = (0..n).map(|i| profile(i, 1.3)).collect();
        let sigma = Measure::from_density(lattice, &sigma_density).expect("positive density");
        let w = Measure::from_density(lattice, &w_density).expect("positive density");
        let f = StepFunction::from_values(lattice, (0..n).map(|i| profile(i, 2.9) - 1.0).collect())
            .expect("length matches");
        let generator = ShiftGenerator { m: 1, n: 1, density: 0.5, specific_form: false, allow_noncancellative: false };
        let shift = generate_random_shift(&lattice, &generator, seed).expect("deep enough lattice");
        let square = SquareFunctionSpec::random(lattice, 0.5, seed);
        Self { lattice, sigma, w, f, shift, square }
    }
}
