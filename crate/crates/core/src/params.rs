//! Tuning parameters and performance samples.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A tile-size / inner-block-size pair, the unit the whole tuner searches over.
///
/// `nb` is the tile order; `ib` is the inner block size the kernels use to
/// group reflector columns. The only hard requirement is `1 <= ib <= nb`;
/// the default search space additionally keeps `nb` even and `ib` a divisor
/// of `nb`, but the kernels accept any in-range pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TuneParams {
    pub nb: usize,
    pub ib: usize,
}

impl TuneParams {
    pub fn new(nb: usize, ib: usize) -> Result<Self> {
        if nb == 0 {
            return Err(Error::InvalidParam("nb must be at least 1".into()));
        }
        if ib == 0 || ib > nb {
            return Err(Error::InvalidParam(format!(
                "ib must satisfy 1 <= ib <= nb (got nb={nb}, ib={ib})"
            )));
        }
        Ok(TuneParams { nb, ib })
    }

    /// Whether the pair obeys the default search-space conventions
    /// (even tile order, inner block dividing it).
    pub fn in_sweep_convention(&self) -> bool {
        self.nb % 2 == 0 && self.nb % self.ib == 0
    }
}

impl fmt::Display for TuneParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "nb={} ib={}", self.nb, self.ib)
    }
}

/// Elapsed wall time and the normalized rate of one factorization run.
///
/// The rate is always computed against the nominal flop count of a QR
/// factorization of order `n`, (4/3)n^3, regardless of the extra flops the
/// inner blocking introduces. Runs are comparable across (nb, ib) only
/// because of this convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfSample {
    /// Matrix order the run factored (the logical order, not the padded one).
    pub n: usize,
    /// Wall-clock seconds around the parallel region.
    pub elapsed: f64,
    /// Normalized rate in Gflop/s: (4/3)n^3 / elapsed / 1e9.
    pub gflops: f64,
}

impl PerfSample {
    pub fn new(n: usize, elapsed: f64) -> Result<Self> {
        if !elapsed.is_finite() || elapsed <= 0.0 {
            return Err(Error::Timer(format!("non-positive elapsed time {elapsed}")));
        }
        Ok(PerfSample { n, elapsed, gflops: qr_gflops(n, elapsed) })
    }
}

/// Normalized QR rate in Gflop/s for a run of order `n` taking `elapsed` seconds.
pub fn qr_gflops(n: usize, elapsed: f64) -> f64 {
    (4.0 / 3.0) * (n as f64).powi(3) / elapsed / 1e9
}

/// Nominal flop count of one ssrfb tile update: 4 * nb^3. Extra flops from
/// inner blocking are never counted, so kernel rates share the same
/// normalization as full runs.
pub fn ssrfb_flops(nb: usize) -> f64 {
    4.0 * (nb as f64).powi(3)
}
