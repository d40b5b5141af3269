//! Serial-kernel benchmarking (tuning step 1).
//!
//! The dominant serial kernel of the tile factorization is `ssrfb`; its rate
//! as a function of `(nb, ib)` is what the preselection stage feeds on. This
//! module times batches of `ssrfb` calls under two operand-placement
//! strategies and sweeps the whole `(nb, ib)` space:
//!
//! * [`FlushStrategy::NoFlush`]: every repetition reuses the same operands,
//!   which end up cache-resident — the classic hot-cache number.
//! * [`FlushStrategy::MultCallFlushLru`]: each repetition reads its
//!   reflector operands from a fresh window of a large backing array, so on
//!   an LRU-like cache every repetition misses on them — a cold-operand
//!   number — while the output tiles stay resident like they do inside a
//!   real factorization.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::fsio;
use crate::linalg::kernels::{ssrfb, ssrfb_raw, tsqrt, TBlock};
use crate::linalg::qr::live_workers;
use crate::params::{ssrfb_flops, TuneParams};

/// Operand placement for kernel batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlushStrategy {
    NoFlush,
    MultCallFlushLru,
}

impl std::fmt::Display for FlushStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlushStrategy::NoFlush => write!(f, "no_flush"),
            FlushStrategy::MultCallFlushLru => write!(f, "mult_call_flush_lru"),
        }
    }
}

impl std::str::FromStr for FlushStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "no_flush" | "no-flush" => Ok(FlushStrategy::NoFlush),
            "mult_call_flush_lru" | "mult-call-flush-lru" => Ok(FlushStrategy::MultCallFlushLru),
            other => Err(Error::InvalidParam(format!("unknown flush strategy {other:?}"))),
        }
    }
}

/// One benchmarked `(nb, ib)` point: total elapsed seconds over `reps`
/// kernel calls and the rate derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub nb: usize,
    pub ib: usize,
    pub gflops: f64,
    pub elapsed_total: f64,
    pub reps: usize,
}

impl KernelSample {
    /// Builds a sample from a timed batch; the stored rate is exactly
    /// [`kernel_batch_gflops`] of the stored fields.
    pub fn from_timing(params: TuneParams, reps: usize, elapsed_total: f64) -> Result<Self> {
        if !(elapsed_total > 0.0 && elapsed_total.is_finite()) {
            return Err(Error::Timer(format!(
                "batch elapsed {elapsed_total}s at nb={} ib={} is not a positive finite time",
                params.nb, params.ib
            )));
        }
        Ok(KernelSample {
            nb: params.nb,
            ib: params.ib,
            gflops: kernel_batch_gflops(params.nb, reps, elapsed_total),
            elapsed_total,
            reps,
        })
    }

    pub fn params(&self) -> TuneParams {
        TuneParams { nb: self.nb, ib: self.ib }
    }
}

/// Rate of a batch of `reps` ssrfb calls at tile order `nb`, in Gflop/s.
pub fn kernel_batch_gflops(nb: usize, reps: usize, elapsed_total: f64) -> f64 {
    reps as f64 * ssrfb_flops(nb) / elapsed_total / 1e9
}

/// A complete step-1 sweep plus the metadata needed to interpret it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDataSet {
    pub samples: Vec<KernelSample>,
    pub strategy: FlushStrategy,
    pub machine: String,
    pub timestamp: u64,
}

/// Times `reps` calls of `rep` with a single clock read on either side of
/// the whole batch, so per-call timer overhead never enters the number.
/// A batch may legitimately take 0 readable time (no-op workloads on a
/// coarse tick); converting to a rate is where zero gets rejected.
pub fn time_batched<F: FnMut()>(mut rep: F, reps: usize) -> Result<f64> {
    if reps == 0 {
        return Err(Error::InvalidParam("reps must be at least 1".into()));
    }
    let t0 = Instant::now();
    for _ in 0..reps {
        rep();
    }
    Ok(t0.elapsed().as_secs_f64())
}

fn operand_footprints(nb: usize, ib: usize) -> (usize, usize) {
    let panels = nb.div_ceil(ib);
    (nb * nb, panels * ib * ib)
}

/// Element offsets of each repetition's reflector windows inside the two
/// backing arrays of a [`FlushStrategy::MultCallFlushLru`] workload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlidingLayout {
    pub v_offsets: Vec<usize>,
    pub v_len: usize,
    pub t_offsets: Vec<usize>,
    pub t_len: usize,
}

enum Operands {
    /// Same operands every repetition (plus one untimed warm-up touch).
    Resident { v: Vec<f64>, t: TBlock },
    /// Per-repetition windows sliding through large backing arrays.
    Sliding { v_arr: Vec<f64>, t_arr: Vec<f64>, windows: usize, cursor: usize },
}

/// A ready-to-time batch of ssrfb calls at one `(nb, ib)` point.
pub struct SsrfbWorkload {
    nb: usize,
    ib: usize,
    c_top: Vec<f64>,
    c_bot: Vec<f64>,
    operands: Operands,
}

/// One valid ssrfb operand set: reflectors `v`/`t` plus a coupled output
/// tile pair.
struct ValidOperands {
    v: Vec<f64>,
    t: TBlock,
    c_top: Vec<f64>,
    c_bot: Vec<f64>,
}

/// Factors a random triangle-on-square pair so the reflectors are genuine
/// tsqrt output, not arbitrary numbers.
fn valid_operands(nb: usize, ib: usize) -> Result<ValidOperands> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb17e ^ ((nb as u64) << 20) ^ ib as u64);
    let mut fill = |buf: &mut [f64]| {
        for x in buf.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    };
    let mut r_top = vec![0.0; nb * nb];
    fill(&mut r_top);
    for j in 0..nb {
        for i in j + 1..nb {
            r_top[j * nb + i] = 0.0;
        }
    }
    let mut v = vec![0.0; nb * nb];
    fill(&mut v);
    let t = tsqrt(&mut r_top, &mut v, nb, ib)?;
    let mut c_top = vec![0.0; nb * nb];
    let mut c_bot = vec![0.0; nb * nb];
    fill(&mut c_top);
    fill(&mut c_bot);
    Ok(ValidOperands { v, t, c_top, c_bot })
}

/// Hot-cache workload: one operand set reused by every repetition. The
/// caller must make one untimed warm-up call before the timed batch.
pub fn prepare_no_flush(params: TuneParams) -> Result<SsrfbWorkload> {
    let params = TuneParams::new(params.nb, params.ib)?;
    let ValidOperands { v, t, c_top, c_bot } = valid_operands(params.nb, params.ib)?;
    Ok(SsrfbWorkload {
        nb: params.nb,
        ib: params.ib,
        c_top,
        c_bot,
        operands: Operands::Resident { v, t },
    })
}

/// Cold-operand workload: `reps` copies of the reflector operands laid out
/// back to back, one window per repetition at strictly increasing offsets
/// with stride equal to the operand footprint. The output tiles are shared
/// across repetitions, as they would be inside a factorization. No warm-up
/// call belongs before this batch — the first repetition is as cold as the
/// rest.
pub fn prepare_mult_call_flush_lru(params: TuneParams, reps: usize) -> Result<SsrfbWorkload> {
    let params = TuneParams::new(params.nb, params.ib)?;
    if reps == 0 {
        return Err(Error::InvalidParam("reps must be at least 1".into()));
    }
    let ValidOperands { v, t, c_top, c_bot } = valid_operands(params.nb, params.ib)?;
    let (v_foot, t_foot) = operand_footprints(params.nb, params.ib);
    debug_assert_eq!(v.len(), v_foot);
    debug_assert_eq!(t.data().len(), t_foot);
    let mut v_arr = Vec::with_capacity(reps * v_foot);
    let mut t_arr = Vec::with_capacity(reps * t_foot);
    for _ in 0..reps {
        v_arr.extend_from_slice(&v);
        t_arr.extend_from_slice(t.data());
    }
    Ok(SsrfbWorkload {
        nb: params.nb,
        ib: params.ib,
        c_top,
        c_bot,
        operands: Operands::Sliding { v_arr, t_arr, windows: reps, cursor: 0 },
    })
}

impl SsrfbWorkload {
    pub fn params(&self) -> TuneParams {
        TuneParams { nb: self.nb, ib: self.ib }
    }

    pub fn strategy(&self) -> FlushStrategy {
        match self.operands {
            Operands::Resident { .. } => FlushStrategy::NoFlush,
            Operands::Sliding { .. } => FlushStrategy::MultCallFlushLru,
        }
    }

    /// Runs one kernel call. Resident operands repeat; sliding operands
    /// advance one window per call (wrapping defensively after `reps`).
    pub fn run_rep(&mut self) {
        match &mut self.operands {
            Operands::Resident { v, t } => {
                ssrfb(v, t, &mut self.c_top, &mut self.c_bot).expect("prepared operands are valid");
            }
            Operands::Sliding { v_arr, t_arr, windows, cursor } => {
                let (v_foot, t_foot) = operand_footprints(self.nb, self.ib);
                let w = *cursor % *windows;
                *cursor += 1;
                ssrfb_raw(
                    &v_arr[w * v_foot..(w + 1) * v_foot],
                    self.nb,
                    self.ib,
                    &t_arr[w * t_foot..(w + 1) * t_foot],
                    &mut self.c_top,
                    &mut self.c_bot,
                );
            }
        }
    }

    /// Window layout of a sliding workload; `None` for resident operands.
    pub fn sliding_layout(&self) -> Option<SlidingLayout> {
        match &self.operands {
            Operands::Resident { .. } => None,
            Operands::Sliding { windows, .. } => {
                let (v_foot, t_foot) = operand_footprints(self.nb, self.ib);
                Some(SlidingLayout {
                    v_offsets: (0..*windows).map(|w| w * v_foot).collect(),
                    v_len: v_foot,
                    t_offsets: (0..*windows).map(|w| w * t_foot).collect(),
                    t_len: t_foot,
                })
            }
        }
    }
}

/// Times one batch on this machine under the given strategy. Refuses to
/// run while factorization workers are live — their load would pollute the
/// serial timing.
pub fn measure_kernel_batch(
    params: TuneParams,
    reps: usize,
    strategy: FlushStrategy,
) -> Result<f64> {
    let live = live_workers();
    if live > 0 {
        return Err(Error::WorkersLive(live));
    }
    match strategy {
        FlushStrategy::NoFlush => {
            let mut wl = prepare_no_flush(params)?;
            wl.run_rep(); // untimed warm-up
            time_batched(|| wl.run_rep(), reps)
        }
        FlushStrategy::MultCallFlushLru => {
            let mut wl = prepare_mult_call_flush_lru(params, reps)?;
            time_batched(|| wl.run_rep(), reps)
        }
    }
}

/// All divisors of `n`, ascending.
pub fn divisors(n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=n).filter(|d| n % d == 0).collect();
    out.sort_unstable();
    out
}

/// The step-1 parameter space: every even `nb` in `[2, nb_max]`, and for
/// each of them every divisor of `nb` as `ib`.
pub fn sweep_params(nb_max: usize) -> Result<Vec<TuneParams>> {
    if nb_max < 2 {
        return Err(Error::InvalidParam(format!("nb_max={nb_max} leaves no tile sizes to sweep")));
    }
    let mut out = Vec::new();
    let mut nb = 2;
    while nb <= nb_max {
        for ib in divisors(nb) {
            out.push(TuneParams { nb, ib });
        }
        nb += 2;
    }
    Ok(out)
}

/// Runs the full step-1 sweep through `backend`, in deterministic
/// ascending `(nb, ib)` order.
pub fn sweep_kernel(
    backend: &dyn Backend,
    nb_max: usize,
    reps: usize,
    strategy: FlushStrategy,
) -> Result<KernelDataSet> {
    let live = live_workers();
    if live > 0 {
        return Err(Error::WorkersLive(live));
    }
    if reps == 0 {
        return Err(Error::InvalidParam("reps must be at least 1".into()));
    }
    let mut samples = Vec::new();
    for params in sweep_params(nb_max)? {
        let elapsed_total = backend.kernel_batch_seconds(params, reps, strategy)?;
        samples.push(KernelSample::from_timing(params, reps, elapsed_total)?);
    }
    Ok(KernelDataSet {
        samples,
        strategy,
        machine: backend.label(),
        timestamp: backend.timestamp(),
    })
}

const KERNEL_CSV_HEADER: &str = "nb,ib,gflops,elapsed_total,reps";

/// Writes the sample table as CSV (metadata lives in the JSON variant).
pub fn write_kernel_csv(path: &Path, ds: &KernelDataSet) -> Result<()> {
    let mut out = String::new();
    out.push_str(KERNEL_CSV_HEADER);
    out.push('\n');
    for s in &ds.samples {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.nb, s.ib, s.gflops, s.elapsed_total, s.reps
        ));
    }
    fsio::write_atomic(path, out.as_bytes())
}

/// Reads a kernel-sample CSV written by [`write_kernel_csv`].
pub fn read_kernel_csv(path: &Path) -> Result<Vec<KernelSample>> {
    let text = fsio::read_text(path)?;
    let mut samples = Vec::new();
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg,
        };
        if !saw_header {
            if line != KERNEL_CSV_HEADER {
                return Err(err(format!("expected header {KERNEL_CSV_HEADER:?}, got {line:?}")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", fields.len())));
        }
        let nb: usize = fields[0].parse().map_err(|_| err(format!("bad nb {:?}", fields[0])))?;
        let ib: usize = fields[1].parse().map_err(|_| err(format!("bad ib {:?}", fields[1])))?;
        let gflops: f64 =
            fields[2].parse().map_err(|_| err(format!("bad gflops {:?}", fields[2])))?;
        let elapsed_total: f64 =
            fields[3].parse().map_err(|_| err(format!("bad elapsed_total {:?}", fields[3])))?;
        let reps: usize =
            fields[4].parse().map_err(|_| err(format!("bad reps {:?}", fields[4])))?;
        if !(gflops.is_finite() && gflops > 0.0) {
            return Err(err(format!("gflops must be positive and finite, got {gflops}")));
        }
        samples.push(KernelSample { nb, ib, gflops, elapsed_total, reps });
    }
    if !saw_header {
        return Err(Error::EmptyDataset("kernel CSV has no header"));
    }
    Ok(samples)
}

pub fn write_kernel_json(path: &Path, ds: &KernelDataSet) -> Result<()> {
    let mut text = serde_json::to_string_pretty(ds)?;
    text.push('\n');
    fsio::write_atomic(path, text.as_bytes())
}

pub fn read_kernel_json(path: &Path) -> Result<KernelDataSet> {
    Ok(serde_json::from_str(&fsio::read_text(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::SyntheticBackend;

    #[test]
    fn divisor_enumeration() {
        assert_eq!(divisors(1), vec![1]);
        assert_eq!(divisors(6), vec![1, 2, 3, 6]);
        assert_eq!(divisors(8), vec![1, 2, 4, 8]);
    }

    #[test]
    fn sweep_space_is_even_nb_with_all_divisors() {
        let ps = sweep_params(8).unwrap();
        let expected: Vec<(usize, usize)> = vec![
            (2, 1),
            (2, 2),
            (4, 1),
            (4, 2),
            (4, 4),
            (6, 1),
            (6, 2),
            (6, 3),
            (6, 6),
            (8, 1),
            (8, 2),
            (8, 4),
            (8, 8),
        ];
        let got: Vec<(usize, usize)> = ps.iter().map(|p| (p.nb, p.ib)).collect();
        assert_eq!(got, expected);
        assert!(sweep_params(1).is_err());
        // Odd cap rounds down to the last even tile size.
        assert_eq!(sweep_params(9).unwrap().len(), ps.len());
    }

    #[test]
    fn batched_timer_allows_zero_and_rejects_zero_reps() {
        let elapsed = time_batched(|| {}, 1).unwrap();
        assert!(elapsed >= 0.0);
        assert!(time_batched(|| {}, 0).is_err());
        assert!(KernelSample::from_timing(TuneParams::new(4, 2).unwrap(), 10, 0.0).is_err());
    }

    #[test]
    fn sample_rate_is_reproducible_from_fields() {
        let s = KernelSample::from_timing(TuneParams::new(60, 12).unwrap(), 50, 0.0123).unwrap();
        assert_eq!(s.gflops, kernel_batch_gflops(s.nb, s.reps, s.elapsed_total));
        assert_eq!(s.gflops, 50.0 * 4.0 * 60.0f64.powi(3) / 0.0123 / 1e9);
    }

    #[test]
    fn sliding_windows_are_disjoint_increasing_and_consumed_in_order() {
        let params = TuneParams::new(8, 4).unwrap();
        let wl = prepare_mult_call_flush_lru(params, 7).unwrap();
        let layout = wl.sliding_layout().unwrap();
        assert_eq!(layout.v_offsets.len(), 7);
        assert_eq!(layout.v_len, 64);
        assert_eq!(layout.t_len, 2 * 16);
        for w in 1..7 {
            assert!(layout.v_offsets[w] > layout.v_offsets[w - 1]);
            assert!(layout.v_offsets[w] - layout.v_offsets[w - 1] >= layout.v_len);
            assert!(layout.t_offsets[w] > layout.t_offsets[w - 1]);
            assert!(layout.t_offsets[w] - layout.t_offsets[w - 1] >= layout.t_len);
        }
        assert!(prepare_no_flush(params).unwrap().sliding_layout().is_none());
    }

    #[test]
    fn both_workloads_compute_the_same_update() {
        // The sliding workload must run the identical kernel, just from
        // different addresses: after k reps both variants hold the same
        // output tiles bitwise.
        let params = TuneParams::new(10, 5).unwrap();
        let mut a = prepare_no_flush(params).unwrap();
        let mut b = prepare_mult_call_flush_lru(params, 4).unwrap();
        for _ in 0..4 {
            a.run_rep();
            b.run_rep();
        }
        assert_eq!(a.c_top, b.c_top);
        assert_eq!(a.c_bot, b.c_bot);
    }

    #[test]
    fn synthetic_sweep_is_deterministic_and_complete() {
        let backend = SyntheticBackend::new(7);
        let a = sweep_kernel(&backend, 12, 50, FlushStrategy::NoFlush).unwrap();
        let b = sweep_kernel(&backend, 12, 50, FlushStrategy::NoFlush).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), sweep_params(12).unwrap().len());
        assert_eq!(a.machine, "synthetic:7");
        assert_eq!(a.timestamp, 0);
        for s in &a.samples {
            assert!(s.gflops > 0.0 && s.gflops.is_finite());
        }
    }

    #[test]
    fn measured_batch_times_a_real_kernel() {
        let params = TuneParams::new(16, 4).unwrap();
        let t = measure_kernel_batch(params, 5, FlushStrategy::NoFlush).unwrap();
        assert!(t > 0.0);
        let t = measure_kernel_batch(params, 5, FlushStrategy::MultCallFlushLru).unwrap();
        assert!(t > 0.0);
    }
}
