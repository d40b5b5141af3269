//! The end-to-end install-time run: kernel sweep, preselection, full sweep,
//! decision table — with every artifact written atomically along the way.
//!
//! Artifacts land in the output directory under fixed names:
//!
//! * `kernels.csv` / `kernels.json` — the step-1 kernel samples,
//! * `candidates.json` — the preselected `(nb, ib)` candidates,
//! * `preselect.csv` — plot-ready selection-over-curve report,
//! * `sweep.csv` / `sweep.json` — the step-2 factorization samples,
//! * `table.json` — the final decision table.
//!
//! A `sweep.checkpoint` file appears while step 2 runs and is consumed on
//! completion; re-running with `resume` picks up from it. If step 2 dies,
//! whatever it had finished is also left as `sweep.json.partial` so the
//! wreckage is inspectable without checkpoint tooling.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::backend::BackendSpec;
use crate::bench::{self, FlushStrategy};
use crate::decision::{self, Provenance, TuningTable};
use crate::error::{Error, Result};
use crate::fsio;
use crate::preselect;
use crate::sweep::{self, SweepResult};

/// Default matrix orders for the step-2 grid.
pub const DEFAULT_N_VALUES: [usize; 7] = [500, 1000, 2000, 4000, 6000, 8000, 10000];

/// Worker count of this machine, as seen by the runtime.
pub fn detected_cores() -> usize {
    std::thread::available_parallelism().map(usize::from).unwrap_or(1)
}

/// Everything an install-time run needs to know.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub backend: BackendSpec,
    /// 0 = whole hull, 1 = steepness cap, 2 = per-interval steepest.
    pub heuristic: u8,
    pub cap: usize,
    pub payg: bool,
    pub nb_max: usize,
    pub reps_kernel: usize,
    pub reps_factor: usize,
    pub flush: FlushStrategy,
    pub n_values: Vec<usize>,
    pub max_cores: usize,
    pub machine: String,
    pub out_dir: PathBuf,
    pub resume: bool,
}

impl RunConfig {
    /// The defaults of a production install-time run, writing to `out_dir`.
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            backend: BackendSpec::Measured,
            heuristic: 2,
            cap: 8,
            payg: true,
            nb_max: 512,
            reps_kernel: 50,
            reps_factor: 6,
            flush: FlushStrategy::NoFlush,
            n_values: DEFAULT_N_VALUES.to_vec(),
            max_cores: detected_cores(),
            machine: String::new(),
            out_dir: out_dir.into(),
            resume: false,
        }
    }
}

/// Paths of the artifacts a run produced, plus the table itself.
#[derive(Debug, Clone)]
pub struct AutotuneArtifacts {
    pub kernels_csv: PathBuf,
    pub kernels_json: PathBuf,
    pub candidates_json: PathBuf,
    pub preselect_csv: PathBuf,
    pub sweep_csv: PathBuf,
    pub sweep_json: PathBuf,
    pub table_json: PathBuf,
    pub table: TuningTable,
}

/// Runs the whole install-time pipeline. `log` receives one line per phase
/// (pass a no-op closure to silence it).
pub fn autotune(config: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<AutotuneArtifacts> {
    std::fs::create_dir_all(&config.out_dir)?;
    let path = |name: &str| config.out_dir.join(name);
    let backend = config.backend.create()?;
    let machine =
        if config.machine.is_empty() { backend.label() } else { config.machine.clone() };

    let t0 = Instant::now();
    let kernels = bench::sweep_kernel(&*backend, config.nb_max, config.reps_kernel, config.flush)?;
    let kernels_csv = path("kernels.csv");
    let kernels_json = path("kernels.json");
    bench::write_kernel_csv(&kernels_csv, &kernels)?;
    bench::write_kernel_json(&kernels_json, &kernels)?;
    log(&format!(
        "[1/4] kernel sweep: {} samples (nb <= {}, {} reps each) in {:.1}s",
        kernels.samples.len(),
        config.nb_max,
        config.reps_kernel,
        t0.elapsed().as_secs_f64()
    ));

    let t1 = Instant::now();
    let pruned = preselect::orthogonal_prune(&kernels)?;
    let candidates = preselect::preselect(&kernels, config.heuristic, config.cap)?;
    let candidates_json = path("candidates.json");
    let preselect_csv = path("preselect.csv");
    preselect::write_candidates_json(&candidates_json, &candidates)?;
    preselect::write_preselect_report(&preselect_csv, &pruned, &candidates)?;
    log(&format!(
        "[2/4] preselection: {} tile sizes -> {} candidates (heuristic {}, cap {}) in {:.1}s",
        pruned.len(),
        candidates.points.len(),
        config.heuristic,
        config.cap,
        t1.elapsed().as_secs_f64()
    ));

    let t2 = Instant::now();
    let grid = sweep::plan_grid(&config.n_values, config.max_cores)?;
    let checkpoint = path("sweep.checkpoint");
    if !config.resume && checkpoint.exists() {
        std::fs::remove_file(&checkpoint)?;
    }
    let swept = run_sweep_with_partial(
        &*backend,
        &candidates.params(),
        &grid,
        config.payg,
        config.reps_factor,
        &checkpoint,
        &path("sweep.json.partial"),
    )?;
    let sweep_csv = path("sweep.csv");
    let sweep_json = path("sweep.json");
    sweep::write_sweep_csv(&sweep_csv, &swept)?;
    sweep::write_sweep_json(&sweep_json, &swept)?;
    log(&format!(
        "[3/4] factorization sweep: {} runs over {} grid points, {} pruned in {:.1}s",
        swept.run_count,
        grid.points().len(),
        swept.pruning_log.len(),
        t2.elapsed().as_secs_f64()
    ));

    let t3 = Instant::now();
    let provenance = Provenance {
        machine,
        heuristic: config.heuristic,
        payg: config.payg,
        backend: config.backend.to_string(),
    };
    let table = decision::build_table(&swept, &grid, provenance)?;
    let table_json = path("table.json");
    decision::save_table(&table_json, &table)?;
    log(&format!(
        "[4/4] decision table: {} entries -> {} in {:.1}s",
        table.entries.len(),
        table_json.display(),
        t3.elapsed().as_secs_f64()
    ));

    Ok(AutotuneArtifacts {
        kernels_csv,
        kernels_json,
        candidates_json,
        preselect_csv,
        sweep_csv,
        sweep_json,
        table_json,
        table,
    })
}

/// Runs step 2; if it fails after completing at least one matrix order, the
/// checkpointed progress is additionally dumped as a `.partial` sweep file.
fn run_sweep_with_partial(
    backend: &dyn crate::backend::Backend,
    candidates: &[crate::params::TuneParams],
    grid: &sweep::Grid,
    payg: bool,
    reps: usize,
    checkpoint: &Path,
    partial: &Path,
) -> Result<SweepResult> {
    match sweep::run_step2_checkpointed(backend, candidates, grid, payg, reps, Some(checkpoint)) {
        Ok(result) => {
            // A stale partial from an earlier failed attempt is now moot.
            if partial.exists() {
                let _ = std::fs::remove_file(partial);
            }
            Ok(result)
        }
        Err(e) => {
            if checkpoint.exists() {
                if let Ok(text) = fsio::read_text(checkpoint) {
                    let _ = std::fs::write(partial, text);
                }
            }
            Err(e)
        }
    }
}

/// Validation shared by everything that accepts a config from the outside.
pub fn validate_config(config: &RunConfig) -> Result<()> {
    if config.heuristic > 2 {
        return Err(Error::InvalidParam(format!(
            "unknown preselection heuristic {} (expected 0, 1 or 2)",
            config.heuristic
        )));
    }
    if config.cap == 0 {
        return Err(Error::InvalidParam("candidate cap must be at least 1".into()));
    }
    if config.nb_max < 2 {
        return Err(Error::InvalidParam("nb-max must be at least 2".into()));
    }
    if config.reps_kernel == 0 || config.reps_factor == 0 {
        return Err(Error::InvalidParam("repetition counts must be at least 1".into()));
    }
    if config.n_values.is_empty() {
        return Err(Error::InvalidParam("need at least one matrix order".into()));
    }
    if config.n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParam("matrix orders must be strictly increasing".into()));
    }
    if config.max_cores == 0 {
        return Err(Error::InvalidParam("max-cores must be at least 1".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_pipeline_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::new(dir.path());
        config.backend = BackendSpec::Synthetic { seed: 7 };
        config.nb_max = 24;
        config.n_values = vec![64, 128];
        config.max_cores = 2;
        validate_config(&config).unwrap();
        let mut lines = Vec::new();
        let artifacts = autotune(&config, &mut |l| lines.push(l.to_string())).unwrap();
        assert_eq!(lines.len(), 4);
        for p in [
            &artifacts.kernels_csv,
            &artifacts.kernels_json,
            &artifacts.candidates_json,
            &artifacts.preselect_csv,
            &artifacts.sweep_csv,
            &artifacts.sweep_json,
            &artifacts.table_json,
        ] {
            assert!(p.exists(), "missing artifact {}", p.display());
        }
        assert!(!dir.path().join("sweep.checkpoint").exists());
        let loaded = decision::load_table(&artifacts.table_json).unwrap();
        assert_eq!(loaded, artifacts.table);
        // Every grid point got parameters that fit its matrix order.
        for (&(n, _), w) in &loaded.entries {
            assert!(w.params.nb <= n);
        }
    }

    #[test]
    fn identical_synthetic_runs_are_byte_identical() {
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let mut config = RunConfig::new(dir.path());
            config.backend = BackendSpec::Synthetic { seed: 11 };
            config.nb_max = 16;
            config.n_values = vec![48, 96];
            config.max_cores = 4;
            let artifacts = autotune(&config, &mut |_| {}).unwrap();
            let mut bytes = Vec::new();
            for p in [
                &artifacts.kernels_csv,
                &artifacts.kernels_json,
                &artifacts.candidates_json,
                &artifacts.preselect_csv,
                &artifacts.sweep_csv,
                &artifacts.sweep_json,
                &artifacts.table_json,
            ] {
                bytes.push(std::fs::read(p).unwrap());
            }
            bytes
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let mut c = RunConfig::new("x");
        c.heuristic = 3;
        assert!(validate_config(&c).is_err());
        let mut c = RunConfig::new("x");
        c.n_values = vec![500, 500];
        assert!(validate_config(&c).is_err());
        let mut c = RunConfig::new("x");
        c.cap = 0;
        assert!(validate_config(&c).is_err());
    }
}
