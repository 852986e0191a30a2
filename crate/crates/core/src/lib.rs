//! Numerical laboratory for two-weight inequalities of dyadic operators.
//!
//! Measures and step functions live on a finite [`DyadicLattice`]. On top of
//! that sit martingale differences, dyadic shifts and square functions, a
//! ratio-maximization engine that turns every constant into a lower-bound
//! estimate (exact where a closed form or a dense oracle exists), and seeded
//! experiment suites.

pub mod constants;
pub mod error;
pub mod experiments;
pub mod io;
pub mod lattice;
pub mod martingale;
pub mod measure;
pub mod ratio;
pub mod shift;
pub mod sparse;

pub use constants::{Direction, Pooled, RBoundEstimate, RBoundOptions, RSeed, SquareScope};
pub use error::{DyadError, Result};
pub use io::Instance;
pub use lattice::{CubeId, DyadicLattice, ExponentPair};
pub use measure::{Measure, StepFunction};
pub use ratio::{AscentOptions, ConstantEstimate, EstimateKind};
pub use shift::{LeafOperator, ShiftBlock, ShiftEntry, ShiftGenerator, ShiftSpec, SquareFunctionSpec};
pub use sparse::SparseFamily;
