//! Candidate preselection (between tuning steps 1 and 2).
//!
//! The step-1 sweep rates thousands of `(nb, ib)` points; benchmarking full
//! factorizations for all of them would take days. This module collapses
//! the space in three moves:
//!
//! 1. [`orthogonal_prune`]: for every `nb`, keep only its best `ib` — the
//!    inner blocking only modulates the kernel, so one winner per tile size
//!    carries all the signal.
//! 2. [`upper_hull`]: on the `(nb, gflops)` curve, keep the upper convex
//!    hull. A point under the hull is beaten on both axes by a blend of its
//!    neighbours: slower than a larger tile and no more parallel than a
//!    smaller one.
//! 3. A capped heuristic ([`heuristic1`] or [`heuristic2`]) trims the hull
//!    to at most `cap` candidates, favouring points that end steep hull
//!    segments — the tile sizes where the kernel still gains rate fastest,
//!    which is where the serial-rate/parallelism trade-off lives.
//!
//! Heuristic 0 is "no cap": the whole hull goes to step 2.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::KernelDataSet;
use crate::error::{Error, Result};
use crate::fsio;
use crate::params::TuneParams;

/// One surviving tile size with its best inner blocking and the kernel rate
/// that pairing achieved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunedPoint {
    pub nb: usize,
    #[serde(rename = "ib")]
    pub best_ib: usize,
    pub gflops: f64,
}

impl PrunedPoint {
    pub fn params(&self) -> TuneParams {
        TuneParams { nb: self.nb, ib: self.best_ib }
    }
}

/// The candidate list handed to step 2, with the heuristic that made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub heuristic: u8,
    pub cap: usize,
    pub points: Vec<PrunedPoint>,
}

impl CandidateSet {
    pub fn params(&self) -> Vec<TuneParams> {
        self.points.iter().map(PrunedPoint::params).collect()
    }
}

/// Keeps the best `ib` for every `nb` (ties go to the larger `ib` — wider
/// inner blocks mean fewer, larger panel applications at equal rate).
/// Output is sorted by `nb`.
pub fn orthogonal_prune(ds: &KernelDataSet) -> Result<Vec<PrunedPoint>> {
    if ds.samples.is_empty() {
        return Err(Error::EmptyDataset("kernel sweep has no samples"));
    }
    let mut best: std::collections::BTreeMap<usize, (usize, f64)> = std::collections::BTreeMap::new();
    for s in &ds.samples {
        if !s.gflops.is_finite() {
            return Err(Error::NonFiniteInput("kernel sample rate"));
        }
        match best.get(&s.nb) {
            Some(&(ib, g)) if s.gflops < g || (s.gflops == g && s.ib <= ib) => {}
            _ => {
                best.insert(s.nb, (s.ib, s.gflops));
            }
        }
    }
    Ok(best
        .into_iter()
        .map(|(nb, (best_ib, gflops))| PrunedPoint { nb, best_ib, gflops })
        .collect())
}

/// Strictly-above test for the hull pop: with `a`, `b` the last two kept
/// points, `b` survives the arrival of `c` only if the slope strictly
/// decreases across it. Collinear interior points are dropped.
fn slope_non_decreasing(a: &PrunedPoint, b: &PrunedPoint, c: &PrunedPoint) -> bool {
    let cross = (b.nb as f64 - a.nb as f64) * (c.gflops - b.gflops)
        - (c.nb as f64 - b.nb as f64) * (b.gflops - a.gflops);
    cross >= 0.0
}

/// Upper convex hull of the pruned `(nb, gflops)` points (monotone chain).
/// Input must be sorted by strictly increasing `nb`. Both endpoints always
/// survive; interior points survive only where the segment slope strictly
/// decreases, so the hull is the minimal concave majorant of the curve.
pub fn upper_hull(points: &[PrunedPoint]) -> Result<Vec<PrunedPoint>> {
    if points.is_empty() {
        return Err(Error::EmptyDataset("no points to take a hull of"));
    }
    for w in points.windows(2) {
        if w[1].nb <= w[0].nb {
            return Err(Error::InvalidParam(format!(
                "hull input must have strictly increasing nb (saw {} then {})",
                w[0].nb, w[1].nb
            )));
        }
    }
    let mut hull: Vec<PrunedPoint> = Vec::with_capacity(points.len());
    for &p in points {
        while hull.len() >= 2 && slope_non_decreasing(&hull[hull.len() - 2], &hull[hull.len() - 1], &p)
        {
            hull.pop();
        }
        hull.push(p);
    }
    Ok(hull)
}

/// Incoming steepness of hull point `i >= 1`: the slope of the segment
/// arriving at it. Along an upper hull these are strictly decreasing, so
/// "steepest" means "earliest after the first point".
fn steepness(hull: &[PrunedPoint], i: usize) -> f64 {
    (hull[i].gflops - hull[i - 1].gflops) / (hull[i].nb as f64 - hull[i - 1].nb as f64)
}

/// Heuristic 1: the `cap` hull points with the steepest incoming segments.
/// The first hull point has no incoming segment; it is appended only when
/// fewer than `cap` points carry one. Output sorted by `nb`.
pub fn heuristic1(hull: &[PrunedPoint], cap: usize) -> Result<Vec<PrunedPoint>> {
    check_hull_arg(hull, cap)?;
    let mut order: Vec<usize> = (1..hull.len()).collect();
    order.sort_by(|&a, &b| {
        steepness(hull, b).partial_cmp(&steepness(hull, a)).expect("finite slopes").then(a.cmp(&b))
    });
    order.truncate(cap);
    if order.len() < cap {
        order.push(0);
    }
    order.sort_unstable();
    Ok(order.into_iter().map(|i| hull[i]).collect())
}

/// Heuristic 2: splits the `nb` range of the hull into `cap` equal-width
/// intervals (half-open, the last one closed) and keeps the steepest hull
/// point inside each. Spreading the budget across the range keeps large
/// tile sizes represented even though the curve is steepest on the left.
/// The first hull point carries no steepness and is never selected, so the
/// hull must have at least two points.
pub fn heuristic2(hull: &[PrunedPoint], cap: usize) -> Result<Vec<PrunedPoint>> {
    check_hull_arg(hull, cap)?;
    if hull.len() < 2 {
        return Err(Error::EmptyDataset(
            "interval selection needs a hull with at least two points",
        ));
    }
    let x0 = hull[0].nb as f64;
    let x1 = hull[hull.len() - 1].nb as f64;
    let width = (x1 - x0) / cap as f64;
    // Per interval, the index of the steepest point seen (slopes strictly
    // decrease along the hull, so the first landing in an interval wins).
    let mut pick: Vec<Option<usize>> = vec![None; cap];
    for (i, p) in hull.iter().enumerate().skip(1) {
        let mut k = if width > 0.0 { ((p.nb as f64 - x0) / width) as usize } else { 0 };
        if k >= cap {
            k = cap - 1;
        }
        if pick[k].is_none() {
            pick[k] = Some(i);
        }
    }
    Ok(pick.into_iter().flatten().map(|i| hull[i]).collect())
}

fn check_hull_arg(hull: &[PrunedPoint], cap: usize) -> Result<()> {
    if hull.is_empty() {
        return Err(Error::EmptyDataset("empty hull"));
    }
    if cap == 0 {
        return Err(Error::InvalidParam("candidate cap must be at least 1".into()));
    }
    Ok(())
}

/// Full preselection: orthogonal prune, hull, then the requested heuristic
/// (0 = whole hull, 1 = steepness top-`cap`, 2 = steepest per interval).
pub fn preselect(ds: &KernelDataSet, heuristic: u8, cap: usize) -> Result<CandidateSet> {
    let hull = upper_hull(&orthogonal_prune(ds)?)?;
    let points = match heuristic {
        0 => hull,
        1 => heuristic1(&hull, cap)?,
        2 => heuristic2(&hull, cap)?,
        other => {
            return Err(Error::InvalidParam(format!(
                "unknown preselection heuristic {other} (expected 0, 1 or 2)"
            )))
        }
    };
    if points.is_empty() {
        return Err(Error::EmptyDataset("preselection kept no candidates"));
    }
    Ok(CandidateSet { heuristic, cap, points })
}

pub fn write_candidates_json(path: &Path, set: &CandidateSet) -> Result<()> {
    let mut text = serde_json::to_string_pretty(set)?;
    text.push('\n');
    fsio::write_atomic(path, text.as_bytes())
}

pub fn read_candidates_json(path: &Path) -> Result<CandidateSet> {
    Ok(serde_json::from_str(&fsio::read_text(path)?)?)
}

/// Plot-ready view of a preselection: every per-`nb` winner in one column
/// and the selected candidates in the other, so the selection can be drawn
/// on top of the kernel curve.
pub fn write_preselect_report(
    path: &Path,
    pruned: &[PrunedPoint],
    selected: &CandidateSet,
) -> Result<()> {
    let mut out = String::from("nb,gflops_all,gflops_selected\n");
    for p in pruned {
        let chosen = selected.points.iter().any(|s| s.nb == p.nb);
        if chosen {
            out.push_str(&format!("{},{},{}\n", p.nb, p.gflops, p.gflops));
        } else {
            out.push_str(&format!("{},{},\n", p.nb, p.gflops));
        }
    }
    fsio::write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{FlushStrategy, KernelSample};

    fn pt(nb: usize, gflops: f64) -> PrunedPoint {
        PrunedPoint { nb, best_ib: 1, gflops }
    }

    fn ds(samples: Vec<(usize, usize, f64)>) -> KernelDataSet {
        KernelDataSet {
            samples: samples
                .into_iter()
                .map(|(nb, ib, gflops)| KernelSample {
                    nb,
                    ib,
                    gflops,
                    elapsed_total: 1.0,
                    reps: 1,
                })
                .collect(),
            strategy: FlushStrategy::NoFlush,
            machine: "test".into(),
            timestamp: 0,
        }
    }

    #[test]
    fn best_ib_per_nb_with_ties_to_larger_ib() {
        let d = ds(vec![(4, 1, 1.0), (4, 2, 1.2), (4, 4, 1.1), (2, 1, 0.5), (2, 2, 0.5)]);
        let pruned = orthogonal_prune(&d).unwrap();
        assert_eq!(pruned.len(), 2);
        assert_eq!((pruned[0].nb, pruned[0].best_ib), (2, 2));
        assert_eq!((pruned[1].nb, pruned[1].best_ib), (4, 2));
        assert_eq!(pruned[1].gflops, 1.2);
    }

    #[test]
    fn hull_drops_interior_and_collinear_points() {
        let h = upper_hull(&[pt(1, 1.0), pt(2, 3.0), pt(3, 3.5), pt(4, 5.0)]).unwrap();
        assert_eq!(h.iter().map(|p| p.nb).collect::<Vec<_>>(), vec![1, 2, 4]);

        let h = upper_hull(&[pt(2, 1.0), pt(4, 2.0), pt(6, 3.0)]).unwrap();
        assert_eq!(h.iter().map(|p| p.nb).collect::<Vec<_>>(), vec![2, 6]);

        let single = upper_hull(&[pt(8, 2.0)]).unwrap();
        assert_eq!(single.len(), 1);
        assert!(upper_hull(&[]).is_err());
        assert!(upper_hull(&[pt(4, 1.0), pt(4, 2.0)]).is_err());
    }

    #[test]
    fn steepness_cap_takes_earliest_hull_points() {
        let hull =
            [pt(2, 0.1), pt(40, 2.0), pt(80, 3.5), pt(160, 4.9), pt(320, 5.5)];
        let sel = heuristic1(&hull, 2).unwrap();
        assert_eq!(sel.iter().map(|p| p.nb).collect::<Vec<_>>(), vec![40, 80]);

        // Room under the cap: the first hull point joins.
        let sel = heuristic1(&hull, 8).unwrap();
        assert_eq!(sel.len(), 5);
        assert_eq!(sel[0].nb, 2);
    }

    #[test]
    fn interval_cap_spreads_across_the_range() {
        // Range [2, 320], cap 2 -> intervals [2, 161) and [161, 320]:
        // steepest in each is the earliest hull point inside it.
        let hull =
            [pt(2, 0.1), pt(40, 2.0), pt(80, 3.5), pt(160, 4.9), pt(320, 5.5)];
        let sel = heuristic2(&hull, 2).unwrap();
        assert_eq!(sel.iter().map(|p| p.nb).collect::<Vec<_>>(), vec![40, 320]);

        // cap 4 -> width 79.5: intervals catch {40, 80}, {160}, {}, {320}.
        let sel = heuristic2(&hull, 4).unwrap();
        assert_eq!(sel.iter().map(|p| p.nb).collect::<Vec<_>>(), vec![40, 160, 320]);

        assert!(heuristic2(&[pt(8, 2.0)], 4).is_err());
        assert!(heuristic2(&hull, 0).is_err());
    }

    #[test]
    fn preselect_composes_and_validates_heuristics() {
        let d = ds(vec![
            (2, 1, 0.1),
            (2, 2, 0.12),
            (4, 2, 1.0),
            (6, 2, 1.4),
            (8, 4, 1.6),
        ]);
        let set = preselect(&d, 0, 8).unwrap();
        assert_eq!(set.heuristic, 0);
        assert!(!set.points.is_empty());
        let set2 = preselect(&d, 2, 2).unwrap();
        assert!(set2.points.len() <= 2);
        assert!(preselect(&d, 3, 8).is_err());
    }
}
