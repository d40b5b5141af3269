//! `tiletune` — install-time autotuning and run-time parameter lookup for
//! the tile QR factorization.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, numerics, missing
//! coverage), 2 usage error (bad flags or malformed parameter values).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use tiletune_core::backend::BackendSpec;
use tiletune_core::bench::FlushStrategy;
use tiletune_core::decision;
use tiletune_core::linalg::dense::{random_matrix, read_matrix_bin, read_matrix_csv};
use tiletune_core::linalg::qr::{check_factorization, tile_qr};
use tiletune_core::linalg::tile::TileMatrix;
use tiletune_core::pipeline::{self, RunConfig};
use tiletune_core::preselect;

#[derive(Parser)]
#[command(
    name = "tiletune",
    version,
    about = "Empirical autotuner for tile QR factorization",
    long_about = "Benchmarks the dominant serial kernel, prunes the (NB, IB) space, \
                  benchmarks full factorizations over an (order, cores) grid, and stores \
                  the winners in a decision table that run-time factorizations query."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full install-time tuning pipeline and write a decision table.
    Autotune(AutotuneArgs),
    /// Print the tuned (nb, ib) for a matrix order and core count.
    Lookup {
        /// Path to a decision table (table.json).
        #[arg(long)]
        table: PathBuf,
        /// Matrix order to tune for.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        /// Worker count to tune for.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        ncores: u64,
    },
    /// Factor a matrix with table-tuned parameters and verify the result.
    Factorize {
        /// Path to a decision table (table.json).
        #[arg(long)]
        table: PathBuf,
        /// Matrix order (ignored when --matrix is given a file).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: Option<u64>,
        /// Worker count to factor with.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        ncores: u64,
        /// Square input matrix (.csv, or the flat binary format); a seeded
        /// random matrix of order --n is used when absent.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Seed for the generated input matrix.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Reports over existing artifacts.
    Report {
        #[command(subcommand)]
        mode: ReportCmd,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Compare a candidate results table against a reference, point by point.
    Ratio {
        /// Reference results CSV (n,ncores,gflops,nb,ib).
        #[arg(long)]
        reference: PathBuf,
        /// Candidate results CSV over the identical grid.
        #[arg(long)]
        candidate: PathBuf,
        /// Write the per-point comparison CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the plot-ready preselection report (kernel curve vs. selection).
    Preselect {
        /// Kernel sweep CSV (kernels.csv).
        #[arg(long)]
        kernels: PathBuf,
        /// Candidate set JSON (candidates.json).
        #[arg(long)]
        candidates: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FlushArg {
    NoFlush,
    MultCallFlushLru,
}

impl From<FlushArg> for FlushStrategy {
    fn from(f: FlushArg) -> Self {
        match f {
            FlushArg::NoFlush => FlushStrategy::NoFlush,
            FlushArg::MultCallFlushLru => FlushStrategy::MultCallFlushLru,
        }
    }
}

#[derive(Args)]
struct AutotuneArgs {
    /// Measurement source: "measured" or "synthetic:<seed>". Overridden by
    /// the TILETUNE_BACKEND environment variable when that is set.
    #[arg(long, default_value = "measured")]
    backend: String,
    /// Candidate selection heuristic: 0 keeps the whole hull, 1 caps by
    /// steepness, 2 takes the steepest per equal-width interval.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=2))]
    heuristic: u8,
    /// Maximum number of candidates heuristics 1 and 2 may keep.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    cap: u64,
    /// Prune dominated tile sizes between matrix orders (default).
    #[arg(long, action = ArgAction::SetTrue, overrides_with = "no_payg")]
    payg: bool,
    /// Keep every candidate through the whole sweep.
    #[arg(long, action = ArgAction::SetTrue)]
    no_payg: bool,
    /// Largest tile order in the kernel sweep.
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u64).range(2..))]
    nb_max: u64,
    /// Kernel calls per timed batch.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    reps_kernel: u64,
    /// Repetitions per full-factorization benchmark point.
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(1..))]
    reps_factor: u64,
    /// Operand placement for kernel batches.
    #[arg(long, value_enum, default_value_t = FlushArg::NoFlush)]
    flush: FlushArg,
    /// Matrix orders of the sweep grid, comma-separated and increasing.
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<u64>>,
    /// Largest worker count to benchmark (default: all cores).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    max_cores: Option<u64>,
    /// Machine label recorded in the table (default: backend label).
    #[arg(long, default_value = "")]
    machine: String,
    /// Output directory for all artifacts.
    #[arg(long, default_value = "tiletune-out")]
    out_dir: PathBuf,
    /// Resume an interrupted sweep from its checkpoint.
    #[arg(long, action = ArgAction::SetTrue)]
    resume: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Usage errors discovered after clap parsing (e.g. a malformed
/// TILETUNE_BACKEND value) exit with the same code clap uses.
fn usage_error(msg: &str) -> ! {
    eprintln!("error: {msg}");
    std::process::exit(2);
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Autotune(args) => autotune(args),
        Cmd::Lookup { table, n, ncores } => {
            let table = decision::load_table(&table).context("loading decision table")?;
            let params = decision::lookup(&table, n as usize, ncores as usize);
            println!("nb={} ib={}", params.nb, params.ib);
            Ok(())
        }
        Cmd::Factorize { table, n, ncores, matrix, seed } => {
            factorize(table, n, ncores, matrix, seed)
        }
        Cmd::Report { mode } => report(mode),
    }
}

fn autotune(args: AutotuneArgs) -> anyhow::Result<()> {
    let backend_str = match std::env::var("TILETUNE_BACKEND") {
        Ok(v) if !v.trim().is_empty() => v,
        _ => args.backend.clone(),
    };
    let backend: BackendSpec = match backend_str.parse() {
        Ok(b) => b,
        Err(e) => usage_error(&e.to_string()),
    };
    let n_values: Vec<usize> = match &args.n_values {
        Some(vs) => vs.iter().map(|&v| v as usize).collect(),
        None => pipeline::DEFAULT_N_VALUES.to_vec(),
    };

    let mut config = RunConfig::new(args.out_dir.clone());
    config.backend = backend;
    config.heuristic = args.heuristic;
    config.cap = args.cap as usize;
    config.payg = !args.no_payg;
    config.nb_max = args.nb_max as usize;
    config.reps_kernel = args.reps_kernel as usize;
    config.reps_factor = args.reps_factor as usize;
    config.flush = args.flush.into();
    config.n_values = n_values;
    config.max_cores = match args.max_cores {
        Some(c) => c as usize,
        None => pipeline::detected_cores(),
    };
    config.machine = args.machine.clone();
    config.resume = args.resume;

    if let Err(e) = pipeline::validate_config(&config) {
        usage_error(&e.to_string());
    }

    let artifacts = pipeline::autotune(&config, &mut |line| eprintln!("{line}"))?;
    println!("{}", artifacts.table_json.display());
    Ok(())
}

fn factorize(
    table_path: PathBuf,
    n: Option<u64>,
    ncores: u64,
    matrix: Option<PathBuf>,
    seed: u64,
) -> anyhow::Result<()> {
    let table = decision::load_table(&table_path).context("loading decision table")?;

    let a = match &matrix {
        Some(path) => {
            let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            if is_csv {
                read_matrix_csv(path).context("reading input matrix")?
            } else {
                read_matrix_bin(path).context("reading input matrix")?.0
            }
        }
        None => {
            let n = n.ok_or_else(|| anyhow!("either --matrix or --n is required"))? as usize;
            random_matrix(n, seed)
        }
    };
    let n = a.nrows();
    let ncores = ncores as usize;

    let params = decision::lookup(&table, n, ncores);
    if params.nb > n {
        bail!(
            "tuned tile order nb={} exceeds the matrix order n={n}; the decision table \
             was built for larger problems (its smallest grid order is {})",
            params.nb,
            table.grid.n_values()[0]
        );
    }

    let tiled = TileMatrix::from_dense(&a, params.nb)?;
    let (factors, perf) = tile_qr(&tiled, params, ncores)?;
    let (residual, orthogonality) = check_factorization(&a, &factors)?;
    println!(
        "n={n} ncores={ncores} nb={} ib={} elapsed={:.6}s gflops={:.3} residual={residual:.3e} \
         orthogonality={orthogonality:.3e}",
        params.nb, params.ib, perf.elapsed, perf.gflops
    );
    if residual.is_nan() || residual > 1e-10 {
        bail!("factorization residual {residual:.3e} exceeds 1e-10; result rejected");
    }
    Ok(())
}

fn report(mode: ReportCmd) -> anyhow::Result<()> {
    match mode {
        ReportCmd::Ratio { reference, candidate, out } => {
            let reference =
                decision::ingest_results_csv(&reference).context("reading reference results")?;
            let candidate =
                decision::ingest_results_csv(&candidate).context("reading candidate results")?;
            let report = decision::relative_report(&reference, &candidate)?;
            println!(
                "average = {:.2}% over {} grid points",
                report.average_pct, report.points
            );
            println!("optimum = {}/{}", report.optimum_hits, report.points);
            if let Some(out) = out {
                decision::write_relative_report_csv(&out, &report)?;
                eprintln!("wrote {}", out.display());
            }
            Ok(())
        }
        ReportCmd::Preselect { kernels, candidates, out } => {
            let samples = tiletune_core::bench::read_kernel_csv(&kernels)?;
            let ds = tiletune_core::bench::KernelDataSet {
                samples,
                strategy: FlushStrategy::NoFlush,
                machine: String::new(),
                timestamp: 0,
            };
            let pruned = preselect::orthogonal_prune(&ds)?;
            let set = preselect::read_candidates_json(&candidates)?;
            preselect::write_preselect_report(&out, &pruned, &set)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}
