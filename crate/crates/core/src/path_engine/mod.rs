//! Piecewise closed-form processes on a shared event grid.
//!
//! There is no time discretization anywhere: every process is exact between
//! events and all integrals are evaluated segment by segment.

pub mod grid;
pub mod integrand;
pub mod poisson;
pub mod process;
pub mod segment;

pub use grid::EventGrid;
pub use integrand::{bracket, integrate_predictable, Integrand};
pub use poisson::{sample_poisson_path, sample_poisson_path_with, JumpPath, PoissonClock};
pub use process::{PwProcess, Side};
pub use segment::{SegmentFn, Term};
