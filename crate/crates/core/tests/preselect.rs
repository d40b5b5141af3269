//! Preselection against independent oracles: exhaustive per-nb argmax,
//! O(k^3) chord-test hull, and invariant checks for both capped heuristics.
//! Hull comparisons use lattice-valued points (integer x, y on a 1/64
//! grid), so every orientation predicate is exact in f64 and the oracle and
//! the monotone chain cannot disagree by round-off.

mod common;

use proptest::prelude::*;
use tiletune_core::bench::{FlushStrategy, KernelDataSet, KernelSample};
use tiletune_core::preselect::{
    heuristic1, heuristic2, orthogonal_prune, preselect, read_candidates_json, upper_hull,
    write_candidates_json, PrunedPoint,
};

fn pts_from_lattice(seed: u64, max_len: usize) -> Vec<PrunedPoint> {
    common::lattice_points(seed, max_len)
        .into_iter()
        .map(|(x, y)| PrunedPoint { nb: x as usize, best_ib: 1, gflops: y })
        .collect()
}

proptest! {
    #[test]
    fn hull_matches_brute_force(seed in any::<u64>()) {
        let pts = pts_from_lattice(seed, 50);
        let raw: Vec<(f64, f64)> = pts.iter().map(|p| (p.nb as f64, p.gflops)).collect();
        let expected = common::brute_upper_hull(&raw);
        let got: Vec<(f64, f64)> =
            upper_hull(&pts).unwrap().iter().map(|p| (p.nb as f64, p.gflops)).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn hull_slopes_strictly_decrease(seed in any::<u64>()) {
        let hull = upper_hull(&pts_from_lattice(seed, 50)).unwrap();
        for w in hull.windows(3) {
            let s01 = (w[1].gflops - w[0].gflops) / (w[1].nb - w[0].nb) as f64;
            let s12 = (w[2].gflops - w[1].gflops) / (w[2].nb - w[1].nb) as f64;
            prop_assert!(s12 < s01, "slopes must strictly decrease along the hull");
        }
    }

    #[test]
    fn best_ib_matches_brute_force(seed in any::<u64>()) {
        // Random (nb, ib, gflops) triples with lattice-valued rates: the
        // per-nb winner (ties to larger ib) must match exhaustive argmax.
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(3);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let mut triples = Vec::new();
        for _ in 0..(1 + next() % 60) {
            let nb = 2 * (1 + (next() % 12) as usize);
            let divs: Vec<usize> = (1..=nb).filter(|d| nb % d == 0).collect();
            let ib = divs[(next() as usize) % divs.len()];
            let gflops = (next() % 640) as f64 / 64.0 + 0.015625;
            triples.push((nb, ib, gflops));
        }
        let ds = KernelDataSet {
            samples: triples
                .iter()
                .map(|&(nb, ib, gflops)| KernelSample {
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
        };
        let expected = common::brute_best_per_nb(&triples);
        let got: Vec<(usize, usize, f64)> = orthogonal_prune(&ds)
            .unwrap()
            .iter()
            .map(|p| (p.nb, p.best_ib, p.gflops))
            .collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn steepness_cap_invariants(seed in any::<u64>(), cap in 1usize..12) {
        let hull = upper_hull(&pts_from_lattice(seed, 50)).unwrap();
        let sel = heuristic1(&hull, cap).unwrap();
        prop_assert!(!sel.is_empty());
        prop_assert!(sel.len() <= cap);
        // Selection is a subset of the hull, in hull order.
        let hull_nbs: Vec<usize> = hull.iter().map(|p| p.nb).collect();
        let mut last = None;
        for p in &sel {
            let idx = hull_nbs.iter().position(|&nb| nb == p.nb).unwrap();
            if let Some(prev) = last {
                prop_assert!(idx > prev);
            }
            last = Some(idx);
        }
        // Slopes strictly decrease along the hull, so the top-cap by
        // steepness is exactly the earliest non-first hull points; the
        // first joins only when there is room for everything else.
        if hull.len() > cap {
            let expected: Vec<usize> = hull_nbs[1..=cap].to_vec();
            let got: Vec<usize> = sel.iter().map(|p| p.nb).collect();
            prop_assert_eq!(got, expected);
        } else {
            let got: Vec<usize> = sel.iter().map(|p| p.nb).collect();
            prop_assert_eq!(got, hull_nbs);
        }
    }

    #[test]
    fn interval_cap_invariants(seed in any::<u64>(), cap in 1usize..12) {
        let hull = upper_hull(&pts_from_lattice(seed, 50)).unwrap();
        prop_assume!(hull.len() >= 2);
        let sel = heuristic2(&hull, cap).unwrap();
        prop_assert!(!sel.is_empty());
        prop_assert!(sel.len() <= cap);
        // Never the first hull point; subset of the hull.
        for p in &sel {
            prop_assert!(p.nb != hull[0].nb);
            prop_assert!(hull.iter().any(|h| h.nb == p.nb));
        }
        // One selection per interval, and it is the steepest point there:
        // with strictly decreasing slopes, the one with the smallest nb.
        let x0 = hull[0].nb as f64;
        let x1 = hull[hull.len() - 1].nb as f64;
        let width = (x1 - x0) / cap as f64;
        let interval = |nb: usize| -> usize {
            if width > 0.0 { (((nb as f64 - x0) / width) as usize).min(cap - 1) } else { 0 }
        };
        let sel_intervals: Vec<usize> = sel.iter().map(|p| interval(p.nb)).collect();
        let mut sorted = sel_intervals.clone();
        sorted.dedup();
        prop_assert_eq!(&sorted, &sel_intervals, "at most one selection per interval");
        for (p, &k) in sel.iter().zip(&sel_intervals) {
            let steepest_in_k = hull[1..]
                .iter()
                .filter(|h| interval(h.nb) == k)
                .map(|h| h.nb)
                .min()
                .unwrap();
            prop_assert_eq!(p.nb, steepest_in_k);
        }
    }
}

#[test]
fn frozen_selection_for_one_synthetic_machine() {
    // End-to-end preselection on the seed-7 synthetic machine, nb <= 64:
    // expected values computed once and frozen.
    let backend = tiletune_core::backend::SyntheticBackend::new(7);
    let ds =
        tiletune_core::bench::sweep_kernel(&backend, 64, 50, FlushStrategy::NoFlush).unwrap();

    let hull = upper_hull(&orthogonal_prune(&ds).unwrap()).unwrap();
    let hull_nbs: Vec<usize> = hull.iter().map(|p| p.nb).collect();
    let mut expected_hull = vec![2usize];
    expected_hull.extend((5..=32).map(|k| 2 * k)); // 10, 12, ..., 64
    assert_eq!(hull_nbs, expected_hull);
    // This machine's kernel curve always peaks at ib = nb/2.
    assert!(hull.iter().all(|p| p.best_ib == p.nb / 2));

    let h1 = preselect(&ds, 1, 4).unwrap();
    assert_eq!(
        h1.points.iter().map(|p| (p.nb, p.best_ib)).collect::<Vec<_>>(),
        vec![(10, 5), (12, 6), (14, 7), (16, 8)]
    );
    let h2 = preselect(&ds, 2, 4).unwrap();
    assert_eq!(
        h2.points.iter().map(|p| (p.nb, p.best_ib)).collect::<Vec<_>>(),
        vec![(10, 5), (18, 9), (34, 17), (50, 25)]
    );
    let h0 = preselect(&ds, 0, 4).unwrap();
    assert_eq!(h0.points.len(), 29);

    let g = h2.points[1].gflops;
    assert!((g - 3.946044851804236).abs() < 1e-9 * g);
}

#[test]
fn candidate_json_round_trip_is_byte_exact() {
    let backend = tiletune_core::backend::SyntheticBackend::new(7);
    let ds =
        tiletune_core::bench::sweep_kernel(&backend, 32, 50, FlushStrategy::NoFlush).unwrap();
    let set = preselect(&ds, 2, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("candidates.json");
    let p2 = dir.path().join("candidates2.json");
    write_candidates_json(&p1, &set).unwrap();
    let loaded = read_candidates_json(&p1).unwrap();
    assert_eq!(loaded, set);
    write_candidates_json(&p2, &loaded).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn trivial_hull_cases() {
    let p = |nb: usize, g: f64| PrunedPoint { nb, best_ib: 1, gflops: g };
    // Two points: both are endpoints, cap generosity keeps them.
    let hull = upper_hull(&[p(4, 1.0), p(8, 2.0)]).unwrap();
    assert_eq!(hull.len(), 2);
    let sel = heuristic1(&hull, 8).unwrap();
    assert_eq!(sel.len(), 2);
    let sel = heuristic2(&hull, 8).unwrap();
    assert_eq!(sel.iter().map(|q| q.nb).collect::<Vec<_>>(), vec![8]);
}
