//! Numerical laboratory for the ε-regularized doubly degenerate nutrient
//! taxis system: a conservative finite-volume discretization, an explicit
//! positivity-preserving stepper, a catalogue of monitored functionals and
//! energy-identity residuals, and the bootstrap exponent recursions.

pub mod diagnostics;
pub mod error;
pub mod exponents;
pub mod grid;
pub mod model;
pub mod stepper;

pub use error::{Error, Result};
pub use grid::{FaceData, Field, GridSpec};
pub use model::{AvgMode, InitialData, InitialKind, Params, State};
pub use stepper::{run, step, StepControl, Trajectory};
