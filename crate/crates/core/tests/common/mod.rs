//! Shared test oracles, independent of the library's implementation paths.
//!
//! Everything here is deliberately the dumbest correct algorithm available:
//! dense unblocked Householder QR, O(n^3) chord-testing hull, exhaustive
//! group-by argmax, a toy fully-associative LRU cache. Library results are
//! judged against these, never against the library itself.

#![allow(dead_code)]

use ndarray::Array2;

/// Dense unblocked Householder QR of an m x n matrix (m >= n): returns the
/// full square Q (m x m) and R (m x n, zero below the diagonal).
///
/// Sign convention: beta = -sign(alpha) * ||x||, and a zero subdiagonal
/// column leaves the reflector as the identity (tau = 0).
pub fn householder_qr(a: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (m, n) = a.dim();
    assert!(m >= n, "oracle expects a tall or square matrix");
    let mut r = a.clone();
    let mut q = Array2::<f64>::eye(m);
    for j in 0..n.min(m) {
        let alpha = r[[j, j]];
        let sq: f64 = (j + 1..m).map(|i| r[[i, j]] * r[[i, j]]).sum();
        if sq == 0.0 {
            continue;
        }
        let norm = (alpha * alpha + sq).sqrt();
        let beta = if alpha >= 0.0 { -norm } else { norm };
        let tau = (beta - alpha) / beta;
        let scale = 1.0 / (alpha - beta);
        let mut v = vec![0.0; m];
        v[j] = 1.0;
        for i in j + 1..m {
            v[i] = r[[i, j]] * scale;
        }
        // R <- H R.
        for col in j..n {
            let w: f64 = (j..m).map(|i| v[i] * r[[i, col]]).sum::<f64>() * tau;
            for i in j..m {
                r[[i, col]] -= w * v[i];
            }
        }
        // Q <- Q H (Q accumulates H_0 H_1 ... in factorization order).
        for row in 0..m {
            let w: f64 = (j..m).map(|i| q[[row, i]] * v[i]).sum::<f64>() * tau;
            for i in j..m {
                q[[row, i]] -= w * v[i];
            }
        }
    }
    // The annihilated entries are round-off residue; R is upper triangular
    // by construction.
    for j in 0..n {
        for i in j + 1..m {
            r[[i, j]] = 0.0;
        }
    }
    (q, r)
}

pub fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// ||Q^T Q - I||_F.
pub fn orthogonality_defect(q: &Array2<f64>) -> f64 {
    let qtq = q.t().dot(q);
    let n = qtq.nrows();
    let eye = Array2::<f64>::eye(n);
    frob(&(&qtq - &eye))
}

/// O(k^3) upper hull by chord testing: a non-endpoint is a vertex iff it lies
/// strictly above every chord spanning it. Collinear interior points are
/// dropped, both endpoints kept. Input must be sorted by x with distinct x.
pub fn brute_upper_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let k = pts.len();
    if k <= 2 {
        return pts.to_vec();
    }
    let mut out = Vec::new();
    for i in 0..k {
        if i == 0 || i == k - 1 {
            out.push(pts[i]);
            continue;
        }
        let (xi, yi) = pts[i];
        let mut strictly_above_all = true;
        'chords: for j in 0..i {
            for l in i + 1..k {
                let (xj, yj) = pts[j];
                let (xl, yl) = pts[l];
                // Cross product sign: (l - j) x (i - j) > 0 iff i is strictly
                // above the chord j..l.
                let cross = (xl - xj) * (yi - yj) - (xi - xj) * (yl - yj);
                if cross <= 0.0 {
                    strictly_above_all = false;
                    break 'chords;
                }
            }
        }
        if strictly_above_all {
            out.push(pts[i]);
        }
    }
    out
}

/// Exhaustive per-nb argmax over (nb, ib, gflops) triples: best gflops wins,
/// ties resolved toward the larger ib. Output sorted by nb.
pub fn brute_best_per_nb(samples: &[(usize, usize, f64)]) -> Vec<(usize, usize, f64)> {
    let mut nbs: Vec<usize> = samples.iter().map(|s| s.0).collect();
    nbs.sort_unstable();
    nbs.dedup();
    nbs.iter()
        .map(|&nb| {
            let mut best: Option<(usize, usize, f64)> = None;
            for &(snb, sib, g) in samples.iter().filter(|s| s.0 == nb) {
                best = match best {
                    None => Some((snb, sib, g)),
                    Some((_, bib, bg)) => {
                        if g > bg || (g == bg && sib > bib) {
                            Some((snb, sib, g))
                        } else {
                            best
                        }
                    }
                };
            }
            best.unwrap()
        })
        .collect()
}

/// Divisor count, by trial division.
pub fn brute_divisor_count(n: usize) -> usize {
    (1..=n).filter(|d| n % d == 0).count()
}

/// Fully-associative LRU cache simulator over byte addresses.
pub struct LruSim {
    line_bytes: usize,
    capacity_lines: usize,
    /// Most recently used at the back.
    order: Vec<usize>,
}

impl LruSim {
    pub fn new(line_bytes: usize, capacity_bytes: usize) -> Self {
        LruSim { line_bytes, capacity_lines: capacity_bytes / line_bytes, order: Vec::new() }
    }

    /// Touches one byte range; returns (hits, misses) in cache lines.
    pub fn touch_range(&mut self, start: usize, len: usize) -> (usize, usize) {
        let first = start / self.line_bytes;
        let last = (start + len.max(1) - 1) / self.line_bytes;
        let mut hits = 0;
        let mut misses = 0;
        for line in first..=last {
            if let Some(pos) = self.order.iter().position(|&l| l == line) {
                self.order.remove(pos);
                hits += 1;
            } else {
                misses += 1;
                if self.order.len() == self.capacity_lines {
                    self.order.remove(0);
                }
            }
            self.order.push(line);
        }
        (hits, misses)
    }
}

/// Deterministic lattice-valued point sets for hull tests: x strictly
/// increasing integers, y on a 1/64 grid, so every orientation predicate is
/// exact in f64 and brute force and monotone chain can never disagree by
/// round-off.
pub fn lattice_points(seed: u64, max_len: usize) -> Vec<(f64, f64)> {
    // Tiny xorshift so the test corpus does not depend on library RNG choices.
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let len = 1 + (next() as usize) % max_len;
    let mut x = 0i64;
    let mut pts = Vec::with_capacity(len);
    for _ in 0..len {
        x += 1 + (next() % 20) as i64;
        let y = (next() % 6400) as f64 / 64.0;
        pts.push((x as f64, y));
    }
    pts
}
