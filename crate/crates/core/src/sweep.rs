//! Full-factorization sweep (tuning step 2), with prune-as-you-go.
//!
//! Every preselected candidate is benchmarked as a complete parallel
//! factorization over a discretized (matrix order, core count) grid. Orders
//! run smallest first; after each order (except the last) the candidate
//! list is pruned: a tile size beaten — in best rate across all core counts
//! — by some *larger* tile size is dropped for all remaining orders. More
//! tiles per column only ever helps larger orders, so a larger tile that
//! already wins while parallelism is scarce keeps winning when it is
//! plentiful; the smaller tile cannot come back.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::fsio;
use crate::params::{qr_gflops, TuneParams};

/// The benchmark grid: matrix orders and worker counts, both strictly
/// increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(rename = "n")]
    n_values: Vec<usize>,
    #[serde(rename = "cores")]
    core_values: Vec<usize>,
}

impl Grid {
    pub fn new(n_values: Vec<usize>, core_values: Vec<usize>) -> Result<Self> {
        for (what, vals) in [("matrix orders", &n_values), ("core counts", &core_values)] {
            if vals.is_empty() {
                return Err(Error::InvalidParam(format!("grid has no {what}")));
            }
            if vals[0] == 0 {
                return Err(Error::InvalidParam(format!("grid {what} must be positive")));
            }
            if vals.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidParam(format!(
                    "grid {what} must be strictly increasing"
                )));
            }
        }
        Ok(Grid { n_values, core_values })
    }

    pub fn n_values(&self) -> &[usize] {
        &self.n_values
    }

    pub fn core_values(&self) -> &[usize] {
        &self.core_values
    }

    /// All grid points, order-major.
    pub fn points(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_values.len() * self.core_values.len());
        for &n in &self.n_values {
            for &c in &self.core_values {
                out.push((n, c));
            }
        }
        out
    }
}

/// Worker counts to benchmark on a machine with `max_cores`: every power of
/// two up to the total, plus the total itself.
pub fn plan_cores(max_cores: usize) -> Result<Vec<usize>> {
    if max_cores == 0 {
        return Err(Error::InvalidParam("machine must have at least one core".into()));
    }
    let mut cores = Vec::new();
    let mut c = 1usize;
    while c <= max_cores {
        cores.push(c);
        c *= 2;
    }
    if *cores.last().unwrap() != max_cores {
        cores.push(max_cores);
    }
    Ok(cores)
}

/// Grid from explicit matrix orders and the machine's core count.
pub fn plan_grid(n_values: &[usize], max_cores: usize) -> Result<Grid> {
    Grid::new(n_values.to_vec(), plan_cores(max_cores)?)
}

/// One benchmarked grid point for one candidate: the rate of a full
/// factorization, median over `reps` repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorSample {
    pub n: usize,
    pub ncores: usize,
    pub nb: usize,
    pub ib: usize,
    pub gflops: f64,
    pub reps: usize,
}

impl FactorSample {
    pub fn params(&self) -> TuneParams {
        TuneParams { nb: self.nb, ib: self.ib }
    }
}

/// The winning candidate at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridWinner {
    pub params: TuneParams,
    pub gflops: f64,
}

/// One prune-as-you-go removal: after finishing order `n`, `removed` was
/// dominated by the larger tile `dominated_by` on best-rate-across-cores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub n: usize,
    pub removed: TuneParams,
    pub removed_gflops: f64,
    pub dominated_by: TuneParams,
    pub dominated_by_gflops: f64,
}

/// Everything step 2 produced: raw samples, per-grid-point winners, the
/// prune log, and how many benchmark points actually ran.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub samples: Vec<FactorSample>,
    pub best: BTreeMap<(usize, usize), GridWinner>,
    pub pruning_log: Vec<PruneEvent>,
    pub run_count: usize,
}

/// Median of a sample of times. Even counts average the two middle values.
pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset("median of no values"));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("repetition times"));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 { sorted[mid] } else { (sorted[mid - 1] + sorted[mid]) / 2.0 })
}

/// Benchmarks one (candidate, grid point): `reps` repetitions, median time,
/// rate from the median.
pub fn run_point(
    backend: &dyn Backend,
    n: usize,
    ncores: usize,
    params: TuneParams,
    reps: usize,
) -> Result<FactorSample> {
    if params.nb > n {
        return Err(Error::InvalidParam(format!(
            "tile order {} exceeds matrix order {n}",
            params.nb
        )));
    }
    if ncores == 0 || reps == 0 {
        return Err(Error::InvalidParam("ncores and reps must be at least 1".into()));
    }
    let times = backend.factor_run_seconds(n, ncores, params, reps)?;
    if times.len() != reps {
        return Err(Error::ShapeMismatch {
            what: "factor repetition times",
            expected: reps,
            got: times.len(),
        });
    }
    let med = median(&times)?;
    if med <= 0.0 {
        return Err(Error::Timer(format!("median factor time {med}s is not positive")));
    }
    Ok(FactorSample { n, ncores, nb: params.nb, ib: params.ib, gflops: qr_gflops(n, med), reps })
}

/// Removes every candidate whose best rate across core counts at this order
/// is strictly beaten by a candidate with a strictly larger tile. Returns
/// the survivors (input order preserved) and the removal log. Every
/// candidate must have a rate entry.
pub fn payg_prune(
    candidates: &[TuneParams],
    best_rate: &BTreeMap<TuneParams, f64>,
    n: usize,
) -> Result<(Vec<TuneParams>, Vec<PruneEvent>)> {
    for c in candidates {
        if !best_rate.contains_key(c) {
            return Err(Error::MissingResult { nb: c.nb, ib: c.ib, n });
        }
    }
    let mut survivors = Vec::new();
    let mut events = Vec::new();
    for &c in candidates {
        let rate = best_rate[&c];
        let dominator = candidates
            .iter()
            .filter(|d| d.nb > c.nb && best_rate[*d] > rate)
            .max_by(|a, b| {
                best_rate[*a].partial_cmp(&best_rate[*b]).expect("finite").then(a.nb.cmp(&b.nb))
            });
        match dominator {
            Some(&d) => events.push(PruneEvent {
                n,
                removed: c,
                removed_gflops: rate,
                dominated_by: d,
                dominated_by_gflops: best_rate[&d],
            }),
            None => survivors.push(c),
        }
    }
    Ok((survivors, events))
}

#[derive(Serialize, Deserialize, Clone, PartialEq)]
struct BestEntry {
    n: usize,
    ncores: usize,
    nb: usize,
    ib: usize,
    gflops: f64,
}

fn best_to_entries(best: &BTreeMap<(usize, usize), GridWinner>) -> Vec<BestEntry> {
    best.iter()
        .map(|(&(n, ncores), w)| BestEntry {
            n,
            ncores,
            nb: w.params.nb,
            ib: w.params.ib,
            gflops: w.gflops,
        })
        .collect()
}

fn entries_to_best(entries: Vec<BestEntry>) -> Result<BTreeMap<(usize, usize), GridWinner>> {
    let mut best = BTreeMap::new();
    for e in entries {
        let params = TuneParams::new(e.nb, e.ib)?;
        if best.insert((e.n, e.ncores), GridWinner { params, gflops: e.gflops }).is_some() {
            return Err(Error::InvalidParam(format!(
                "duplicate winner entry for n={} ncores={}",
                e.n, e.ncores
            )));
        }
    }
    Ok(best)
}

const CHECKPOINT_VERSION: u32 = 1;

/// On-disk snapshot of a sweep in progress, written after each completed
/// matrix order so an interrupted run resumes without repeating work.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    backend: String,
    payg: bool,
    reps: usize,
    candidates: Vec<TuneParams>,
    grid: Grid,
    next_n_index: usize,
    alive: Vec<TuneParams>,
    run_count: usize,
    samples: Vec<FactorSample>,
    pruning_log: Vec<PruneEvent>,
    best: Vec<BestEntry>,
}

struct SweepState {
    next_n_index: usize,
    alive: Vec<TuneParams>,
    run_count: usize,
    samples: Vec<FactorSample>,
    pruning_log: Vec<PruneEvent>,
    best: BTreeMap<(usize, usize), GridWinner>,
}

/// Runs the step-2 sweep. See [`run_step2_checkpointed`] for the resumable
/// variant.
pub fn run_step2(
    backend: &dyn Backend,
    candidates: &[TuneParams],
    grid: &Grid,
    payg: bool,
    reps: usize,
) -> Result<SweepResult> {
    run_step2_checkpointed(backend, candidates, grid, payg, reps, None)
}

/// Runs the step-2 sweep, optionally persisting a checkpoint after each
/// completed matrix order. If `checkpoint` names an existing file, the
/// sweep resumes from it (after verifying it was written by an identically
/// configured run); the file is removed once the sweep completes.
///
/// Candidates are benchmarked in ascending tile order; a candidate larger
/// than the current matrix order is skipped (not removed) until orders grow
/// past it. Winners tie toward the smaller tile; pruning never runs after
/// the final order, where it could no longer save any work.
pub fn run_step2_checkpointed(
    backend: &dyn Backend,
    candidates: &[TuneParams],
    grid: &Grid,
    payg: bool,
    reps: usize,
    checkpoint: Option<&Path>,
) -> Result<SweepResult> {
    if candidates.is_empty() {
        return Err(Error::EmptyDataset("no candidates to sweep"));
    }
    if reps == 0 {
        return Err(Error::InvalidParam("reps must be at least 1".into()));
    }
    let mut sorted: Vec<TuneParams> = candidates.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[1].nb == w[0].nb) {
        return Err(Error::InvalidParam("candidate tile orders must be distinct".into()));
    }

    let mut state = match checkpoint {
        Some(path) if path.exists() => {
            resume_state(path, backend, &sorted, grid, payg, reps)?
        }
        _ => SweepState {
            next_n_index: 0,
            alive: sorted.clone(),
            run_count: 0,
            samples: Vec::new(),
            pruning_log: Vec::new(),
            best: BTreeMap::new(),
        },
    };

    let n_count = grid.n_values.len();
    for ni in state.next_n_index..n_count {
        let n = grid.n_values[ni];
        let measurable: Vec<TuneParams> =
            state.alive.iter().copied().filter(|c| c.nb <= n).collect();
        if measurable.is_empty() {
            return Err(Error::InvalidParam(format!(
                "no candidate tile fits matrix order {n}"
            )));
        }
        let mut best_rate: BTreeMap<TuneParams, f64> = BTreeMap::new();
        for &params in &measurable {
            for &ncores in &grid.core_values {
                let sample = run_point(backend, n, ncores, params, reps)?;
                state.run_count += 1;
                let entry = best_rate.entry(params).or_insert(f64::NEG_INFINITY);
                *entry = entry.max(sample.gflops);
                let key = (n, ncores);
                let better = match state.best.get(&key) {
                    Some(w) => sample.gflops > w.gflops,
                    None => true,
                };
                if better {
                    state.best.insert(key, GridWinner { params, gflops: sample.gflops });
                }
                state.samples.push(sample);
            }
        }
        if payg && ni + 1 < n_count {
            let (survivors, events) = payg_prune(&measurable, &best_rate, n)?;
            state.pruning_log.extend(events);
            state.alive.retain(|c| c.nb > n || survivors.contains(c));
        }
        state.next_n_index = ni + 1;
        if let Some(path) = checkpoint {
            save_checkpoint(path, backend, &sorted, grid, payg, reps, &state)?;
        }
    }

    if let Some(path) = checkpoint {
        if path.exists() {
            std::fs::remove_file(path)?;
        }
    }
    Ok(SweepResult {
        samples: state.samples,
        best: state.best,
        pruning_log: state.pruning_log,
        run_count: state.run_count,
    })
}

fn save_checkpoint(
    path: &Path,
    backend: &dyn Backend,
    candidates: &[TuneParams],
    grid: &Grid,
    payg: bool,
    reps: usize,
    state: &SweepState,
) -> Result<()> {
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        backend: backend.label(),
        payg,
        reps,
        candidates: candidates.to_vec(),
        grid: grid.clone(),
        next_n_index: state.next_n_index,
        alive: state.alive.clone(),
        run_count: state.run_count,
        samples: state.samples.clone(),
        pruning_log: state.pruning_log.clone(),
        best: best_to_entries(&state.best),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fsio::write_atomic(path, text.as_bytes())
}

fn resume_state(
    path: &Path,
    backend: &dyn Backend,
    candidates: &[TuneParams],
    grid: &Grid,
    payg: bool,
    reps: usize,
) -> Result<SweepState> {
    let file: CheckpointFile = serde_json::from_str(&fsio::read_text(path)?)?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: file.format_version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let mut mismatches = Vec::new();
    if file.backend != backend.label() {
        mismatches.push(format!("backend {:?} vs {:?}", file.backend, backend.label()));
    }
    if file.payg != payg {
        mismatches.push(format!("payg {} vs {}", file.payg, payg));
    }
    if file.reps != reps {
        mismatches.push(format!("reps {} vs {}", file.reps, reps));
    }
    if file.candidates != candidates {
        mismatches.push("candidate list differs".into());
    }
    if &file.grid != grid {
        mismatches.push("grid differs".into());
    }
    if !mismatches.is_empty() {
        return Err(Error::CheckpointMismatch(format!(
            "{} was written by a differently configured sweep: {}",
            path.display(),
            mismatches.join("; ")
        )));
    }
    Ok(SweepState {
        next_n_index: file.next_n_index,
        alive: file.alive,
        run_count: file.run_count,
        samples: file.samples,
        pruning_log: file.pruning_log,
        best: entries_to_best(file.best)?,
    })
}

const SWEEP_CSV_HEADER: &str = "n,ncores,nb,ib,gflops,reps";

pub fn write_sweep_csv(path: &Path, result: &SweepResult) -> Result<()> {
    let mut out = String::new();
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for s in &result.samples {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.n, s.ncores, s.nb, s.ib, s.gflops, s.reps
        ));
    }
    fsio::write_atomic(path, out.as_bytes())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<FactorSample>> {
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
            if line != SWEEP_CSV_HEADER {
                return Err(err(format!("expected header {SWEEP_CSV_HEADER:?}, got {line:?}")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", fields.len())));
        }
        let parse_usize = |i: usize, what: &str| -> Result<usize> {
            fields[i].parse().map_err(|_| err(format!("bad {what} {:?}", fields[i])))
        };
        let n = parse_usize(0, "n")?;
        let ncores = parse_usize(1, "ncores")?;
        let nb = parse_usize(2, "nb")?;
        let ib = parse_usize(3, "ib")?;
        let gflops: f64 =
            fields[4].parse().map_err(|_| err(format!("bad gflops {:?}", fields[4])))?;
        let reps = parse_usize(5, "reps")?;
        samples.push(FactorSample { n, ncores, nb, ib, gflops, reps });
    }
    if !saw_header {
        return Err(Error::EmptyDataset("sweep CSV has no header"));
    }
    Ok(samples)
}

#[derive(Serialize, Deserialize)]
struct SweepFile {
    samples: Vec<FactorSample>,
    best: Vec<BestEntry>,
    pruning_log: Vec<PruneEvent>,
    run_count: usize,
}

pub fn write_sweep_json(path: &Path, result: &SweepResult) -> Result<()> {
    let file = SweepFile {
        samples: result.samples.clone(),
        best: best_to_entries(&result.best),
        pruning_log: result.pruning_log.clone(),
        run_count: result.run_count,
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fsio::write_atomic(path, text.as_bytes())
}

pub fn read_sweep_json(path: &Path) -> Result<SweepResult> {
    let file: SweepFile = serde_json::from_str(&fsio::read_text(path)?)?;
    Ok(SweepResult {
        samples: file.samples,
        best: entries_to_best(file.best)?,
        pruning_log: file.pruning_log,
        run_count: file.run_count,
    })
}
