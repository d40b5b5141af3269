//! Install-time empirical autotuner for tile QR factorization.
//!
//! A matrix of order N is factored as an nt x nt grid of NB-sized tiles,
//! with reflector columns grouped into IB-wide inner blocks. The right
//! (NB, IB) depends on the machine, the matrix order, and the core count —
//! so this crate measures instead of guessing:
//!
//! 1. [`bench`] times the dominant serial kernel (ssrfb) over the whole
//!    (NB, IB) search space at install time.
//! 2. [`preselect`] collapses that space: best IB per NB, upper convex hull,
//!    then a capped heuristic selection of candidates.
//! 3. [`sweep`] benchmarks full factorizations of the surviving candidates
//!    over a discretized (N, ncores) grid, pruning as it goes.
//! 4. [`decision`] persists the winners as a table keyed by grid point and
//!    answers run-time lookups by nearest-neighbour interpolation.
//!
//! [`linalg`] is the tile QR engine itself; [`backend`] switches between
//! real measurements and a seeded synthetic performance model; [`pipeline`]
//! glues the steps into the end-to-end install-time run the CLI drives.

pub mod backend;
pub mod bench;
pub mod decision;
pub mod error;
mod fsio;
pub mod linalg;
pub mod params;
pub mod pipeline;
pub mod preselect;
pub mod sweep;

pub use error::{Error, Result};
pub use params::{PerfSample, TuneParams};
