//! The decision table: persisting step-2 winners and answering run-time
//! queries.
//!
//! The sweep only visits a discretized (matrix order, core count) grid; at
//! run time the factorization can be asked for any pair. The table snaps
//! the query to the nearest benchmarked grid point independently per axis
//! (ties toward the larger value, queries outside the grid clamp to its
//! edge) and returns that point's winning `(nb, ib)`. The induced policy is
//! piecewise constant: every query inside a grid cell's "catchment" gets
//! exactly the parameters that were actually measured best nearby.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::params::TuneParams;
use crate::sweep::{Grid, GridWinner, SweepResult};

pub const TABLE_FORMAT_VERSION: u32 = 1;

/// Where a table's numbers came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub machine: String,
    pub heuristic: u8,
    pub payg: bool,
    pub backend: String,
}

/// A complete winners-per-grid-point map. Held sorted by `(n, ncores)`;
/// construction verifies full grid coverage, so lookups are total.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningTable {
    pub grid: Grid,
    pub entries: BTreeMap<(usize, usize), GridWinner>,
    pub provenance: Provenance,
}

/// A grid of results without provenance — the common shape of a freshly
/// built table and an ingested results file, and what reports compare.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultGrid {
    pub grid: Grid,
    pub entries: BTreeMap<(usize, usize), GridWinner>,
}

impl From<&TuningTable> for ResultGrid {
    fn from(t: &TuningTable) -> Self {
        ResultGrid { grid: t.grid.clone(), entries: t.entries.clone() }
    }
}

fn check_coverage(grid: &Grid, entries: &BTreeMap<(usize, usize), GridWinner>) -> Result<()> {
    for (n, ncores) in grid.points() {
        if !entries.contains_key(&(n, ncores)) {
            return Err(Error::IncompleteCoverage { n, ncores });
        }
    }
    for &(n, ncores) in entries.keys() {
        if !grid.n_values().contains(&n) || !grid.core_values().contains(&ncores) {
            return Err(Error::GridMismatch(format!(
                "entry at n={n} ncores={ncores} lies outside the grid"
            )));
        }
    }
    Ok(())
}

/// Builds the run-time table from a finished sweep. Every grid point must
/// have a winner.
pub fn build_table(
    sweep: &SweepResult,
    grid: &Grid,
    provenance: Provenance,
) -> Result<TuningTable> {
    check_coverage(grid, &sweep.best)?;
    Ok(TuningTable { grid: grid.clone(), entries: sweep.best.clone(), provenance })
}

/// Wraps an already-covered result grid (e.g. ingested measurements) as a
/// table.
pub fn table_from_results(results: &ResultGrid, provenance: Provenance) -> Result<TuningTable> {
    check_coverage(&results.grid, &results.entries)?;
    Ok(TuningTable {
        grid: results.grid.clone(),
        entries: results.entries.clone(),
        provenance,
    })
}

/// Nearest grid value to `x`, ties toward the larger value; values outside
/// the grid clamp to its edge.
fn nearest(values: &[usize], x: usize) -> usize {
    let mut best = values[0];
    let mut best_dist = best.abs_diff(x);
    for &v in &values[1..] {
        let d = v.abs_diff(x);
        if d < best_dist || (d == best_dist && v > best) {
            best = v;
            best_dist = d;
        }
    }
    best
}

/// The grid point a query snaps to.
pub fn lookup_point(table: &TuningTable, n: usize, ncores: usize) -> (usize, usize) {
    (nearest(table.grid.n_values(), n), nearest(table.grid.core_values(), ncores))
}

/// Tuned parameters for any (order, cores) query. Total: off-grid queries
/// snap per axis to the nearest benchmarked point.
pub fn lookup(table: &TuningTable, n: usize, ncores: usize) -> TuneParams {
    let point = lookup_point(table, n, ncores);
    table.entries[&point].params
}

#[derive(Serialize, Deserialize)]
struct TableEntryFile {
    n: usize,
    ncores: usize,
    nb: usize,
    ib: usize,
    gflops: f64,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    format_version: u32,
    machine: String,
    heuristic: u8,
    payg: bool,
    backend: String,
    grid: Grid,
    entries: Vec<TableEntryFile>,
}

pub fn save_table(path: &Path, table: &TuningTable) -> Result<()> {
    let file = TableFile {
        format_version: TABLE_FORMAT_VERSION,
        machine: table.provenance.machine.clone(),
        heuristic: table.provenance.heuristic,
        payg: table.provenance.payg,
        backend: table.provenance.backend.clone(),
        grid: table.grid.clone(),
        entries: table
            .entries
            .iter()
            .map(|(&(n, ncores), w)| TableEntryFile {
                n,
                ncores,
                nb: w.params.nb,
                ib: w.params.ib,
                gflops: w.gflops,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fsio::write_atomic(path, text.as_bytes())
}

pub fn load_table(path: &Path) -> Result<TuningTable> {
    let file: TableFile = serde_json::from_str(&fsio::read_text(path)?)?;
    if file.format_version != TABLE_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: file.format_version,
            supported: TABLE_FORMAT_VERSION,
        });
    }
    let mut entries = BTreeMap::new();
    for e in file.entries {
        let params = TuneParams::new(e.nb, e.ib)?;
        if entries.insert((e.n, e.ncores), GridWinner { params, gflops: e.gflops }).is_some() {
            return Err(Error::InvalidParam(format!(
                "duplicate table entry for n={} ncores={}",
                e.n, e.ncores
            )));
        }
    }
    check_coverage(&file.grid, &entries)?;
    Ok(TuningTable {
        grid: file.grid,
        entries,
        provenance: Provenance {
            machine: file.machine,
            heuristic: file.heuristic,
            payg: file.payg,
            backend: file.backend,
        },
    })
}

const RESULTS_CSV_HEADER: &str = "n,ncores,gflops,nb,ib";

/// Reads an external results table: one row per grid point with the rate
/// achieved and the parameters that achieved it. `#` lines are comments.
/// The rows must cover a full rectangular grid.
pub fn ingest_results_csv(path: &Path) -> Result<ResultGrid> {
    let text = fsio::read_text(path)?;
    let mut entries: BTreeMap<(usize, usize), GridWinner> = BTreeMap::new();
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
            if line != RESULTS_CSV_HEADER {
                return Err(err(format!(
                    "expected header {RESULTS_CSV_HEADER:?}, got {line:?}"
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", fields.len())));
        }
        let n: usize = fields[0].parse().map_err(|_| err(format!("bad n {:?}", fields[0])))?;
        let ncores: usize =
            fields[1].parse().map_err(|_| err(format!("bad ncores {:?}", fields[1])))?;
        let gflops: f64 =
            fields[2].parse().map_err(|_| err(format!("bad gflops {:?}", fields[2])))?;
        let nb: usize = fields[3].parse().map_err(|_| err(format!("bad nb {:?}", fields[3])))?;
        let ib: usize = fields[4].parse().map_err(|_| err(format!("bad ib {:?}", fields[4])))?;
        if !(gflops.is_finite() && gflops > 0.0) {
            return Err(err(format!("gflops must be positive and finite, got {gflops}")));
        }
        let params = TuneParams::new(nb, ib).map_err(|e| err(e.to_string()))?;
        if entries.insert((n, ncores), GridWinner { params, gflops }).is_some() {
            return Err(err(format!("duplicate row for n={n} ncores={ncores}")));
        }
    }
    if !saw_header {
        return Err(Error::EmptyDataset("results CSV has no header"));
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset("results CSV has no rows"));
    }
    let mut n_values: Vec<usize> = entries.keys().map(|&(n, _)| n).collect();
    n_values.sort_unstable();
    n_values.dedup();
    let mut core_values: Vec<usize> = entries.keys().map(|&(_, c)| c).collect();
    core_values.sort_unstable();
    core_values.dedup();
    let grid = Grid::new(n_values, core_values)?;
    check_coverage(&grid, &entries)?;
    Ok(ResultGrid { grid, entries })
}

/// One grid point of a relative comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelativeRow {
    pub n: usize,
    pub ncores: usize,
    pub reference_gflops: f64,
    pub candidate_gflops: f64,
    /// candidate rate as a percentage of the reference rate.
    pub ratio_pct: f64,
    /// Whether the candidate chose exactly the reference's parameters.
    pub same_params: bool,
}

/// Candidate-vs-reference comparison over a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeReport {
    pub rows: Vec<RelativeRow>,
    /// Mean of `ratio_pct` over all grid points.
    pub average_pct: f64,
    /// Number of grid points where the parameters match exactly.
    pub optimum_hits: usize,
    pub points: usize,
}

/// Compares a candidate result set against a reference over the identical
/// grid: per-point rate ratio, its average, and at how many points the
/// candidate picked exactly the reference parameters.
pub fn relative_report(reference: &ResultGrid, candidate: &ResultGrid) -> Result<RelativeReport> {
    if reference.grid != candidate.grid {
        return Err(Error::GridMismatch(
            "reference and candidate cover different grids".into(),
        ));
    }
    check_coverage(&reference.grid, &reference.entries)?;
    check_coverage(&candidate.grid, &candidate.entries)?;
    let mut rows = Vec::new();
    let mut sum = 0.0;
    let mut hits = 0;
    for ((&(n, ncores), r), c) in reference.entries.iter().zip(candidate.entries.values()) {
        let ratio_pct = c.gflops / r.gflops * 100.0;
        let same_params = c.params == r.params;
        if same_params {
            hits += 1;
        }
        sum += ratio_pct;
        rows.push(RelativeRow {
            n,
            ncores,
            reference_gflops: r.gflops,
            candidate_gflops: c.gflops,
            ratio_pct,
            same_params,
        });
    }
    let points = rows.len();
    Ok(RelativeReport { rows, average_pct: sum / points as f64, optimum_hits: hits, points })
}

/// Writes a relative report as CSV, with the summary in trailing comments.
pub fn write_relative_report_csv(path: &Path, report: &RelativeReport) -> Result<()> {
    let mut out = String::from("n,ncores,reference_gflops,candidate_gflops,ratio_pct,same_params\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n, r.ncores, r.reference_gflops, r.candidate_gflops, r.ratio_pct, r.same_params as u8
        ));
    }
    out.push_str(&format!("# average_pct={}\n", report.average_pct));
    out.push_str(&format!("# optimum={}/{}\n", report.optimum_hits, report.points));
    fsio::write_atomic(path, out.as_bytes())
}
