//! Reproducible experiments: the separation example and randomized suites
//! for the two-weight theorems.

pub mod counterexample;
pub mod report;
pub mod suites;

pub use counterexample::{
    counterexample_growth, counterexample_measures, ChainCells, CounterMode, CounterexampleConfig,
    CounterexampleReport, CounterexampleRow,
};
pub use report::{Check, CheckKind, InstanceRecord, SuiteReport, SuiteSummary};
pub use suites::{
    one_weight_stein_experiment, verify_lower_bound_lemma, verify_shift_theorem, verify_specific_form,
    verify_square_theorem, SuiteConfig,
};
