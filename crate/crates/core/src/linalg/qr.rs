//! Parallel tile QR factorization.
//!
//! The factorization walks the classic tile-QR task graph: at step k, the
//! diagonal tile gets a panel QR ([`geqrt`]), each tile below it is folded
//! into the panel top-to-bottom through a flat chain of [`tsqrt`] calls, and
//! every tile to the right absorbs the corresponding reflectors via
//! [`larfb`]/[`ssrfb`].
//!
//! Scheduling is static: tile column `j` belongs to worker `j % ncores`
//! (1-D cyclic), the owner of column k also runs step k's panel chain, and
//! workers synchronize through a per-panel progress table instead of a task
//! queue. Because the kernel call sequence — and every reduction order
//! inside it — is fixed by the data dependences and never by thread timing,
//! the computed factors are bitwise identical for every worker count.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::kernels::{
    geqrt, larfb, larfb_notrans, ssrfb, ssrfb_notrans, tsqrt, TBlock,
};
use crate::linalg::tile::{at, TileMatrix};
use crate::params::{PerfSample, TuneParams};

/// Number of factorization workers currently running, process-wide. The
/// kernel benchmark harness refuses to time anything while this is nonzero.
static LIVE_WORKERS: AtomicUsize = AtomicUsize::new(0);

pub fn live_workers() -> usize {
    LIVE_WORKERS.load(Ordering::SeqCst)
}

struct WorkerGuard;

impl WorkerGuard {
    fn enter() -> Self {
        LIVE_WORKERS.fetch_add(1, Ordering::SeqCst);
        WorkerGuard
    }
}

impl Drop for WorkerGuard {
    fn drop(&mut self) {
        LIVE_WORKERS.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Interior-mutable cell the scheduler shares between workers. Exclusivity
/// is enforced by the progress protocol, not the type system; see the
/// safety notes in [`tile_qr`].
struct SyncCell<T>(UnsafeCell<T>);

// SAFETY: access is coordinated by the scheduler's progress table — at any
// instant a cell has either one writer or only readers (see tile_qr).
unsafe impl<T: Send> Sync for SyncCell<T> {}

impl<T> SyncCell<T> {
    fn new(v: T) -> Self {
        SyncCell(UnsafeCell::new(v))
    }

    /// SAFETY: caller must hold the protocol's exclusive claim on this cell.
    #[allow(clippy::mut_from_ref)]
    unsafe fn get_mut(&self) -> &mut T {
        &mut *self.0.get()
    }

    /// SAFETY: caller must know all writes to this cell happened-before
    /// (published through an acquire-load of the progress table).
    unsafe fn get(&self) -> &T {
        &*self.0.get()
    }

    fn into_inner(self) -> T {
        self.0.into_inner()
    }
}

/// The compact factors of a tile QR run, plus everything needed to verify or
/// apply them.
#[derive(Debug, Clone, PartialEq)]
pub struct QrFactors {
    n: usize,
    params: TuneParams,
    nt: usize,
    /// Upper-triangular factor: data in tiles (i, j) with i <= j, zeros below.
    r: TileMatrix,
    /// Reflectors: unit-lower-triangular diagonal tiles, full sub-diagonal
    /// tiles, zeros above the diagonal.
    v: TileMatrix,
    /// Per-tile T factors for tiles (i, k) with i >= k, row-major nt x nt.
    t: Vec<Option<TBlock>>,
}

impl QrFactors {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> TuneParams {
        self.params
    }

    pub fn r(&self) -> &TileMatrix {
        &self.r
    }

    pub fn v(&self) -> &TileMatrix {
        &self.v
    }

    pub fn t_block(&self, i: usize, k: usize) -> Option<&TBlock> {
        self.t[i * self.nt + k].as_ref()
    }

    /// Dense logical-order R.
    pub fn r_dense(&self) -> Array2<f64> {
        self.r.to_dense()
    }

    /// Dense logical-order Q, materialized by replaying the stored
    /// reflectors against the identity (computes Q^T, then transposes).
    pub fn q_dense(&self) -> Result<Array2<f64>> {
        let nt = self.nt;
        let mut m = TileMatrix::identity(self.n, self.params.nb)?;
        for k in 0..nt {
            let t_kk = self.t[k * nt + k].as_ref().expect("diagonal T present");
            for j in 0..nt {
                larfb(self.v.tile(k, k), t_kk, m.tile_mut(k, j))?;
            }
            for i in k + 1..nt {
                let t_ik = self.t[i * nt + k].as_ref().expect("sub-diagonal T present");
                for j in 0..nt {
                    // Split the tile grid borrow: rows k and i are distinct.
                    let (top, bot) = split_rows(&mut m, k, i, j);
                    ssrfb(self.v.tile(i, k), t_ik, top, bot)?;
                }
            }
        }
        Ok(m.to_dense_padded()
            .t()
            .slice(ndarray::s![0..self.n, 0..self.n])
            .to_owned())
    }

    /// Applies Q to a dense padded tile matrix in place (c <- Q c); used by
    /// tests that want the reconstruction without forming Q.
    pub fn apply_q(&self, c: &mut TileMatrix) -> Result<()> {
        if c.nb() != self.params.nb || c.nt() != self.nt {
            return Err(Error::ShapeMismatch {
                what: "apply_q target",
                expected: self.nt,
                got: c.nt(),
            });
        }
        // Q = P_0 P_1 ... applied right-to-left; within a panel the TS chain
        // unwinds bottom-up.
        for k in (0..self.nt).rev() {
            for i in (k + 1..self.nt).rev() {
                let t_ik = self.t[i * self.nt + k].as_ref().expect("sub-diagonal T present");
                for j in 0..self.nt {
                    let (top, bot) = split_rows(c, k, i, j);
                    ssrfb_notrans(self.v.tile(i, k), t_ik, top, bot)?;
                }
            }
            let t_kk = self.t[k * self.nt + k].as_ref().expect("diagonal T present");
            for j in 0..self.nt {
                larfb_notrans(self.v.tile(k, k), t_kk, c.tile_mut(k, j))?;
            }
        }
        Ok(())
    }
}

/// Two simultaneous mutable tile borrows on distinct rows of one column.
fn split_rows(
    m: &mut TileMatrix,
    row_a: usize,
    row_b: usize,
    col: usize,
) -> (&mut [f64], &mut [f64]) {
    assert!(row_a < row_b);
    // SAFETY: (row_a, col) and (row_b, col) are different tiles, hence
    // disjoint buffers.
    unsafe {
        let a = m.tile_mut(row_a, col) as *mut [f64];
        let b = m.tile_mut(row_b, col) as *mut [f64];
        (&mut *a, &mut *b)
    }
}

/// Factors `a` (tiled with `params.nb`) into Q R using `ncores` workers.
///
/// Returns the compact factors and a [`PerfSample`] whose elapsed time spans
/// exactly the parallel region (setup and assembly excluded) and whose rate
/// is normalized to (4/3)n^3 flops regardless of `params.ib`.
pub fn tile_qr(a: &TileMatrix, params: TuneParams, ncores: usize) -> Result<(QrFactors, PerfSample)> {
    if ncores < 1 {
        return Err(Error::InvalidParam("ncores must be at least 1".into()));
    }
    if params.nb != a.nb() {
        return Err(Error::ShapeMismatch {
            what: "tile order vs params.nb",
            expected: params.nb,
            got: a.nb(),
        });
    }
    TuneParams::new(params.nb, params.ib)?;
    for ti in 0..a.nt() {
        for tj in 0..a.nt() {
            if a.tile(ti, tj).iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteInput("tile matrix"));
            }
        }
    }

    let (n, nb, nt, raw_tiles) = a.clone().into_tiles();
    let ib = params.ib;
    let tiles: Vec<SyncCell<Vec<f64>>> = raw_tiles.into_iter().map(SyncCell::new).collect();
    let vdiag: Vec<SyncCell<Vec<f64>>> = (0..nt).map(|_| SyncCell::new(Vec::new())).collect();
    let tblocks: Vec<SyncCell<Option<TBlock>>> =
        (0..nt * nt).map(|_| SyncCell::new(None)).collect();
    // progress[k] = highest row i whose step-k panel operation has completed
    // (k itself once geqrt is done); -1 = nothing yet.
    let progress: Vec<AtomicI64> = (0..nt).map(|_| AtomicI64::new(-1)).collect();
    let abort = AtomicBool::new(false);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);

    let fail = |e: Error| {
        let mut slot = first_error.lock().unwrap();
        if slot.is_none() {
            *slot = Some(e);
        }
        abort.store(true, Ordering::SeqCst);
    };

    // Blocks until step k's panel has progressed through row `need`, or an
    // abort is flagged. Acquire pairs with the owner's release store, making
    // the published tiles, vdiag and tblocks visible.
    let wait = |k: usize, need: usize| -> bool {
        loop {
            if progress[k].load(Ordering::Acquire) >= need as i64 {
                return true;
            }
            if abort.load(Ordering::Relaxed) {
                return false;
            }
            std::thread::yield_now();
        }
    };

    let started = Instant::now();
    std::thread::scope(|scope| {
        for w in 0..ncores {
            let tiles = &tiles;
            let vdiag = &vdiag;
            let tblocks = &tblocks;
            let progress = &progress;
            let abort = &abort;
            let fail = &fail;
            let wait = &wait;
            scope.spawn(move || {
                let _guard = WorkerGuard::enter();
                // SAFETY (whole worker body): tile (i, j) is only ever
                // mutated by the owner of column j (and column k's owner
                // during step k's panel chain, who owns column k by
                // construction); vdiag[k] / tblocks are written once by the
                // panel owner before the release-store on progress[k] and
                // only read after a matching acquire-load. Hence every
                // get_mut is exclusive and every get reads published data.
                for k in 0..nt {
                    if abort.load(Ordering::Relaxed) {
                        return;
                    }
                    if k % ncores == w {
                        let akk = unsafe { tiles[k * nt + k].get_mut() };
                        match geqrt(akk, nb, ib) {
                            Ok(t) => {
                                let mut v = vec![0.0; nb * nb];
                                for j in 0..nb {
                                    v[at(j, j, nb)] = 1.0;
                                    for i in j + 1..nb {
                                        v[at(i, j, nb)] = akk[at(i, j, nb)];
                                    }
                                }
                                unsafe {
                                    *vdiag[k].get_mut() = v;
                                    *tblocks[k * nt + k].get_mut() = Some(t);
                                }
                                progress[k].store(k as i64, Ordering::Release);
                            }
                            Err(e) => {
                                fail(e);
                                return;
                            }
                        }
                        for i in k + 1..nt {
                            if abort.load(Ordering::Relaxed) {
                                return;
                            }
                            let rkk = unsafe { tiles[k * nt + k].get_mut() };
                            let aik = unsafe { tiles[i * nt + k].get_mut() };
                            match tsqrt(rkk, aik, nb, ib) {
                                Ok(t) => {
                                    unsafe {
                                        *tblocks[i * nt + k].get_mut() = Some(t);
                                    }
                                    progress[k].store(i as i64, Ordering::Release);
                                }
                                Err(e) => {
                                    fail(e);
                                    return;
                                }
                            }
                        }
                    }
                    let mut j = k + 1 + (w + ncores - (k + 1) % ncores) % ncores;
                    while j < nt {
                        if !wait(k, k) {
                            return;
                        }
                        let res = unsafe {
                            let v = vdiag[k].get();
                            let t = tblocks[k * nt + k].get().as_ref().expect("published T");
                            larfb(v, t, tiles[k * nt + j].get_mut())
                        };
                        if let Err(e) = res {
                            fail(e);
                            return;
                        }
                        for i in k + 1..nt {
                            if !wait(k, i) {
                                return;
                            }
                            let res = unsafe {
                                let vik = tiles[i * nt + k].get();
                                let t = tblocks[i * nt + k].get().as_ref().expect("published T");
                                ssrfb(
                                    vik,
                                    t,
                                    tiles[k * nt + j].get_mut(),
                                    tiles[i * nt + j].get_mut(),
                                )
                            };
                            if let Err(e) = res {
                                fail(e);
                                return;
                            }
                        }
                        j += ncores;
                    }
                }
            });
        }
    });
    let elapsed = started.elapsed().as_secs_f64();

    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }

    // Disassemble the worked tiles into R (upper) and V (lower) factors.
    let worked: Vec<Vec<f64>> = tiles.into_iter().map(SyncCell::into_inner).collect();
    let vdiag: Vec<Vec<f64>> = vdiag.into_iter().map(SyncCell::into_inner).collect();
    let t: Vec<Option<TBlock>> = tblocks.into_iter().map(SyncCell::into_inner).collect();

    let mut r_tiles = vec![vec![0.0; nb * nb]; nt * nt];
    let mut v_tiles = vec![vec![0.0; nb * nb]; nt * nt];
    for (ti, vd) in vdiag.iter().enumerate() {
        for tj in 0..nt {
            let idx = ti * nt + tj;
            match ti.cmp(&tj) {
                std::cmp::Ordering::Less => r_tiles[idx].copy_from_slice(&worked[idx]),
                std::cmp::Ordering::Equal => {
                    for j in 0..nb {
                        for i in 0..=j {
                            r_tiles[idx][at(i, j, nb)] = worked[idx][at(i, j, nb)];
                        }
                    }
                    v_tiles[idx].copy_from_slice(vd);
                }
                std::cmp::Ordering::Greater => v_tiles[idx].copy_from_slice(&worked[idx]),
            }
        }
    }

    let factors = QrFactors {
        n,
        params,
        nt,
        r: TileMatrix::from_tiles(n, nb, nt, r_tiles),
        v: TileMatrix::from_tiles(n, nb, nt, v_tiles),
        t,
    };
    let sample = PerfSample::new(n, elapsed)?;
    Ok((factors, sample))
}

/// Reconstruction quality of a factorization against the matrix it came
/// from: returns (relative residual ||A - QR||_F / ||A||_F, orthogonality
/// defect ||Q^T Q - I||_F).
pub fn check_factorization(a: &Array2<f64>, factors: &QrFactors) -> Result<(f64, f64)> {
    let n = crate::linalg::dense::square_order(a)?;
    if n != factors.n {
        return Err(Error::ShapeMismatch { what: "check_factorization order", expected: factors.n, got: n });
    }
    let q = factors.q_dense()?;
    let r = factors.r_dense();
    let qr = q.dot(&r);
    let diff = &qr - a;
    let norm_a = crate::linalg::dense::frobenius(a);
    let resid_abs = crate::linalg::dense::frobenius(&diff);
    let residual = if norm_a > 0.0 { resid_abs / norm_a } else { resid_abs };

    let qtq = q.t().dot(&q);
    let eye = Array2::<f64>::eye(n);
    let orth = crate::linalg::dense::frobenius(&(&qtq - &eye));
    Ok((residual, orth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::random_matrix;

    #[test]
    fn rejects_zero_cores_and_mismatched_nb() {
        let a = TileMatrix::from_dense(&random_matrix(8, 1), 4).unwrap();
        let p = TuneParams::new(4, 2).unwrap();
        assert!(tile_qr(&a, p, 0).is_err());
        let wrong = TuneParams::new(8, 2).unwrap();
        assert!(tile_qr(&a, wrong, 1).is_err());
    }

    #[test]
    fn identity_factors_to_identity_exactly() {
        let a = TileMatrix::identity(8, 4).unwrap();
        let p = TuneParams::new(4, 2).unwrap();
        let (f, _) = tile_qr(&a, p, 1).unwrap();
        let r = f.r_dense();
        let q = f.q_dense().unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_eq!(r[[i, j]], want, "R[{i},{j}]");
                assert_eq!(q[[i, j]], want, "Q[{i},{j}]");
            }
        }
    }

    #[test]
    fn no_workers_left_behind() {
        let a = TileMatrix::from_dense(&random_matrix(16, 2), 4).unwrap();
        let p = TuneParams::new(4, 2).unwrap();
        let _ = tile_qr(&a, p, 3).unwrap();
        assert_eq!(live_workers(), 0);
    }
}
