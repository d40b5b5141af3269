//! The four serial tile kernels.
//!
//! * [`geqrt`] — QR of one diagonal tile, reflectors stored below the
//!   diagonal, R above it.
//! * [`tsqrt`] — QR of an upper-triangular tile stacked on a full tile; the
//!   triangle is updated in place and the reflectors land in the bottom tile.
//! * [`larfb`] — applies a geqrt output's transposed reflectors to a tile.
//! * [`ssrfb`] — applies a tsqrt output's transposed reflectors to a coupled
//!   pair of tiles. This is the kernel a factorization calls O(nt^3) times,
//!   and the one the install-time benchmark measures.
//!
//! Reflectors use the compact WY representation: columns are grouped into
//! panels of width `ib`, and each panel carries an upper-triangular scaling
//! block T such that the panel's product of elementary reflectors equals
//! I - V T V^T. A zero subdiagonal column yields tau = 0, i.e. an identity
//! reflector; identity padding therefore passes through every kernel exactly.
//!
//! All tiles are square, column-major, order `nb`. Every loop runs in a fixed
//! order, so results are bitwise reproducible regardless of the caller's
//! threading.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::tile::at;

/// Per-panel triangular scaling blocks of one tile's reflectors.
///
/// Panel `p` covers reflector columns `[p*ib, min((p+1)*ib, nb))`; its block
/// is stored column-major with leading dimension `ib`, only the leading
/// `w x w` corner meaningful for a ragged final panel. With `ib` dividing
/// `nb` the storage is exactly the conventional `nb x ib` stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TBlock {
    nb: usize,
    ib: usize,
    data: Vec<f64>,
}

impl TBlock {
    fn zeros(nb: usize, ib: usize) -> Self {
        let panels = nb.div_ceil(ib);
        TBlock { nb, ib, data: vec![0.0; panels * ib * ib] }
    }

    pub fn nb(&self) -> usize {
        self.nb
    }

    pub fn ib(&self) -> usize {
        self.ib
    }

    pub fn panel_count(&self) -> usize {
        self.nb.div_ceil(self.ib)
    }

    /// Width of panel `p` (equal to `ib` except possibly for the last panel).
    pub fn panel_width(&self, p: usize) -> usize {
        (self.nb - p * self.ib).min(self.ib)
    }

    pub fn panel(&self, p: usize) -> &[f64] {
        &self.data[p * self.ib * self.ib..(p + 1) * self.ib * self.ib]
    }

    fn panel_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.data[p * self.ib * self.ib..(p + 1) * self.ib * self.ib]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

thread_local! {
    // Reusable per-thread workspace so the hot kernels never allocate in
    // steady state; benchmark timings must not include the allocator.
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        f(&mut buf[..len])
    })
}

/// Householder reflector of `[alpha, tail...]`: overwrites `tail` with the
/// scaled vector (unit head implicit) and returns `(beta, tau)` such that
/// `(I - tau v v^T) x = beta e1`. A zero tail gives tau = 0 and the reflector
/// is exactly the identity, which is what keeps identity padding inert.
fn householder(alpha: f64, tail: &mut [f64]) -> (f64, f64) {
    let mut sq = 0.0;
    for &t in tail.iter() {
        sq += t * t;
    }
    if sq == 0.0 {
        return (alpha, 0.0);
    }
    let r = (alpha * alpha + sq).sqrt();
    let beta = if alpha >= 0.0 { -r } else { r };
    let tau = (beta - alpha) / beta;
    let scale = 1.0 / (alpha - beta);
    for t in tail.iter_mut() {
        *t *= scale;
    }
    (beta, tau)
}

fn check_tile(buf: &[f64], nb: usize, what: &'static str) -> Result<()> {
    if buf.len() != nb * nb {
        return Err(Error::ShapeMismatch { what, expected: nb * nb, got: buf.len() });
    }
    Ok(())
}

fn check_finite(buf: &[f64], what: &'static str) -> Result<()> {
    if buf.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput(what));
    }
    Ok(())
}

fn check_blocking(nb: usize, ib: usize) -> Result<()> {
    if nb == 0 || ib == 0 || ib > nb {
        return Err(Error::InvalidParam(format!(
            "kernel blocking requires 1 <= ib <= nb (got nb={nb}, ib={ib})"
        )));
    }
    Ok(())
}

/// QR factorization of one `nb x nb` tile with inner block size `ib`.
///
/// On return `a` holds R in its upper triangle (diagonal included) and the
/// essential reflector columns strictly below it; the returned [`TBlock`]
/// holds the per-panel T factors. The reflector diagonal is an implicit 1.
pub fn geqrt(a: &mut [f64], nb: usize, ib: usize) -> Result<TBlock> {
    check_blocking(nb, ib)?;
    check_tile(a, nb, "geqrt tile")?;
    check_finite(a, "geqrt tile")?;
    let mut t = TBlock::zeros(nb, ib);

    let mut j0 = 0;
    let mut p = 0;
    while j0 < nb {
        let w = (nb - j0).min(ib);
        let j1 = j0 + w;

        // Unblocked factorization of the panel a[j0.., j0..j1].
        for j in j0..j1 {
            let col = j * nb;
            let (head, tail) = a[col + j..col + nb].split_at_mut(1);
            let (beta, tau) = householder(head[0], tail);
            a[col + j] = beta;
            let tp = t.panel_mut(p);
            tp[at(j - j0, j - j0, ib)] = tau;
            if tau != 0.0 {
                // Apply H_j to the remaining panel columns.
                for k in j + 1..j1 {
                    let kcol = k * nb;
                    let mut wdot = a[kcol + j];
                    for i in j + 1..nb {
                        wdot += a[col + i] * a[kcol + i];
                    }
                    wdot *= tau;
                    a[kcol + j] -= wdot;
                    for i in j + 1..nb {
                        a[kcol + i] -= wdot * a[col + i];
                    }
                }
            }
        }

        // Accumulate the panel's T: T[0..i, i] = -tau_i T[0..i, 0..i] (V^T v_i).
        with_scratch(w, |z| {
            for i in 1..w {
                let ji = j0 + i;
                let icol = ji * nb;
                for (zc, zval) in z.iter_mut().enumerate().take(i) {
                    let ccol = (j0 + zc) * nb;
                    // Unit diagonal of v_i meets the stored entry of column c.
                    let mut s = a[ccol + ji];
                    for r in ji + 1..nb {
                        s += a[ccol + r] * a[icol + r];
                    }
                    *zval = s;
                }
                let tau = t.panel(p)[at(i, i, ib)];
                let tp = t.panel_mut(p);
                for row in 0..i {
                    let mut s = 0.0;
                    for c in row..i {
                        s += tp[at(row, c, ib)] * z[c];
                    }
                    tp[at(row, i, ib)] = -tau * s;
                }
            }
        });

        // Block-update the trailing columns with this panel's reflectors.
        if j1 < nb {
            let (vpart, cpart) = a.split_at_mut(j1 * nb);
            apply_lower_panel(vpart, nb, j0, w, t.panel(p), ib, cpart, true);
        }

        j0 = j1;
        p += 1;
    }
    Ok(t)
}

/// QR of the stacked pair `[r_top; a_bot]` where `r_top` is upper triangular
/// (a previous R) and `a_bot` is a full tile.
///
/// `r_top` is updated in place to the new R; `a_bot` is overwritten with the
/// reflector block V2 (the full bottom halves of the reflectors — their top
/// halves are implicit unit vectors e_j). Returns the per-panel T factors.
pub fn tsqrt(r_top: &mut [f64], a_bot: &mut [f64], nb: usize, ib: usize) -> Result<TBlock> {
    check_blocking(nb, ib)?;
    check_tile(r_top, nb, "tsqrt triangle tile")?;
    check_tile(a_bot, nb, "tsqrt square tile")?;
    check_finite(r_top, "tsqrt triangle tile")?;
    check_finite(a_bot, "tsqrt square tile")?;
    let mut t = TBlock::zeros(nb, ib);

    let mut j0 = 0;
    let mut p = 0;
    while j0 < nb {
        let w = (nb - j0).min(ib);
        let j1 = j0 + w;

        for j in j0..j1 {
            let jcol = j * nb;
            let (beta, tau) = householder(r_top[jcol + j], &mut a_bot[jcol..jcol + nb]);
            r_top[jcol + j] = beta;
            let tp = t.panel_mut(p);
            tp[at(j - j0, j - j0, ib)] = tau;
            if tau != 0.0 {
                // Each later panel column k: only row j of the triangle and
                // the whole bottom column move.
                for k in j + 1..j1 {
                    let kcol = k * nb;
                    let mut wdot = r_top[kcol + j];
                    for i in 0..nb {
                        wdot += a_bot[jcol + i] * a_bot[kcol + i];
                    }
                    wdot *= tau;
                    r_top[kcol + j] -= wdot;
                    for i in 0..nb {
                        a_bot[kcol + i] -= wdot * a_bot[jcol + i];
                    }
                }
            }
        }

        // T accumulation; the unit tops of the reflectors are orthogonal to
        // each other, so only the V2 inner products contribute.
        with_scratch(w, |z| {
            for i in 1..w {
                let icol = (j0 + i) * nb;
                for (zc, zval) in z.iter_mut().enumerate().take(i) {
                    let ccol = (j0 + zc) * nb;
                    let mut s = 0.0;
                    for r in 0..nb {
                        s += a_bot[ccol + r] * a_bot[icol + r];
                    }
                    *zval = s;
                }
                let tau = t.panel(p)[at(i, i, ib)];
                let tp = t.panel_mut(p);
                for row in 0..i {
                    let mut s = 0.0;
                    for c in row..i {
                        s += tp[at(row, c, ib)] * z[c];
                    }
                    tp[at(row, i, ib)] = -tau * s;
                }
            }
        });

        // Block-update the trailing columns of the stacked pair.
        if j1 < nb {
            let (vpart, cbot) = a_bot.split_at_mut(j1 * nb);
            let v2 = &vpart[j0 * nb..];
            let ctop = &mut r_top[j1 * nb..];
            apply_coupled_panel(v2, nb, j0, w, t.panel(p), ib, ctop, cbot, true);
        }

        j0 = j1;
        p += 1;
    }
    Ok(t)
}

/// c <- Q^T c, where Q is the orthogonal factor encoded by a [`geqrt`]
/// output (`v` may be the factored tile itself; its upper triangle is
/// ignored and the reflector diagonal is taken as 1).
pub fn larfb(v: &[f64], t: &TBlock, c: &mut [f64]) -> Result<()> {
    let nb = t.nb;
    check_tile(v, nb, "larfb reflector tile")?;
    check_tile(c, nb, "larfb target tile")?;
    for p in 0..t.panel_count() {
        apply_lower_panel(v, nb, p * t.ib, t.panel_width(p), t.panel(p), t.ib, c, true);
    }
    Ok(())
}

/// c <- Q c for a geqrt output: the forward application, used when
/// materializing Q. Panels run in reverse with untransposed T.
pub(crate) fn larfb_notrans(v: &[f64], t: &TBlock, c: &mut [f64]) -> Result<()> {
    let nb = t.nb;
    check_tile(v, nb, "larfb reflector tile")?;
    check_tile(c, nb, "larfb target tile")?;
    for p in (0..t.panel_count()).rev() {
        apply_lower_panel(v, nb, p * t.ib, t.panel_width(p), t.panel(p), t.ib, c, false);
    }
    Ok(())
}

/// `[c_top; c_bot] <- Q^T [c_top; c_bot]`, where Q is encoded by a
/// [`tsqrt`] output with reflector block `v_bot`.
pub fn ssrfb(v_bot: &[f64], t: &TBlock, c_top: &mut [f64], c_bot: &mut [f64]) -> Result<()> {
    let nb = t.nb;
    check_tile(v_bot, nb, "ssrfb reflector tile")?;
    check_tile(c_top, nb, "ssrfb top tile")?;
    check_tile(c_bot, nb, "ssrfb bottom tile")?;
    ssrfb_raw(v_bot, nb, t.ib, &t.data, c_top, c_bot);
    Ok(())
}

/// Raw-slice form of [`ssrfb`] for callers that keep many reflector copies
/// in one backing array: `t_data` is laid out exactly like [`TBlock::data`]
/// for the given `(nb, ib)`. Shapes are the caller's responsibility.
pub(crate) fn ssrfb_raw(
    v_bot: &[f64],
    nb: usize,
    ib: usize,
    t_data: &[f64],
    c_top: &mut [f64],
    c_bot: &mut [f64],
) {
    let panels = nb.div_ceil(ib);
    debug_assert_eq!(t_data.len(), panels * ib * ib);
    debug_assert!(v_bot.len() >= nb * nb);
    for p in 0..panels {
        let j0 = p * ib;
        let w = (nb - j0).min(ib);
        apply_coupled_panel(
            &v_bot[j0 * nb..],
            nb,
            j0,
            w,
            &t_data[p * ib * ib..(p + 1) * ib * ib],
            ib,
            c_top,
            c_bot,
            true,
        );
    }
}

/// Forward variant of [`ssrfb`], used when materializing Q.
pub(crate) fn ssrfb_notrans(
    v_bot: &[f64],
    t: &TBlock,
    c_top: &mut [f64],
    c_bot: &mut [f64],
) -> Result<()> {
    let nb = t.nb;
    check_tile(v_bot, nb, "ssrfb reflector tile")?;
    check_tile(c_top, nb, "ssrfb top tile")?;
    check_tile(c_bot, nb, "ssrfb bottom tile")?;
    for p in (0..t.panel_count()).rev() {
        let j0 = p * t.ib;
        apply_coupled_panel(
            &v_bot[j0 * nb..],
            nb,
            j0,
            t.panel_width(p),
            t.panel(p),
            t.ib,
            c_top,
            c_bot,
            false,
        );
    }
    Ok(())
}

/// Applies one panel's block reflector I - V T V^T (or its transpose) to
/// `c`, where V is unit lower-trapezoidal: rows `j0..nb` of columns
/// `j0..j0+w` of `v`. `c` is `nb x m` column-major; rows `j0..` change.
#[allow(clippy::too_many_arguments)]
fn apply_lower_panel(
    v: &[f64],
    nb: usize,
    j0: usize,
    w: usize,
    tpanel: &[f64],
    ldt: usize,
    c: &mut [f64],
    transpose: bool,
) {
    let m = c.len() / nb;
    with_scratch(w * m, |wk| {
        // wk = V^T C, panel-row a of wk corresponding to reflector column j0+a.
        for col in 0..m {
            let ccol = col * nb;
            for a in 0..w {
                let vcol = (j0 + a) * nb;
                let mut s = c[ccol + j0 + a];
                for r in j0 + a + 1..nb {
                    s += v[vcol + r] * c[ccol + r];
                }
                wk[col * w + a] = s;
            }
        }
        // wk <- T^T wk or T wk (T upper triangular, leading dim ldt).
        for col in 0..m {
            let wcol = &mut wk[col * w..(col + 1) * w];
            if transpose {
                for a in (0..w).rev() {
                    let mut s = 0.0;
                    for b in 0..=a {
                        s += tpanel[at(b, a, ldt)] * wcol[b];
                    }
                    wcol[a] = s;
                }
            } else {
                for a in 0..w {
                    let mut s = 0.0;
                    for b in a..w {
                        s += tpanel[at(a, b, ldt)] * wcol[b];
                    }
                    wcol[a] = s;
                }
            }
        }
        // c -= V wk.
        for col in 0..m {
            let ccol = col * nb;
            for a in 0..w {
                let vcol = (j0 + a) * nb;
                let s = wk[col * w + a];
                c[ccol + j0 + a] -= s;
                for r in j0 + a + 1..nb {
                    c[ccol + r] -= v[vcol + r] * s;
                }
            }
        }
    });
}

/// Applies one panel of a tsqrt reflector block to the stacked pair
/// `[c_top; c_bot]`. The panel's V is `[E_{j0..j0+w}; V2]`: unit vectors in
/// the top tile's rows `j0..j0+w` and full columns `v2` below. `v2` indexes
/// columns relative to the panel (column `a` at offset `a*nb`).
#[allow(clippy::too_many_arguments)]
fn apply_coupled_panel(
    v2: &[f64],
    nb: usize,
    j0: usize,
    w: usize,
    tpanel: &[f64],
    ldt: usize,
    c_top: &mut [f64],
    c_bot: &mut [f64],
    transpose: bool,
) {
    let m = c_top.len() / nb;
    debug_assert_eq!(c_top.len(), c_bot.len());
    with_scratch(w * m, |wk| {
        // wk = C_top[j0..j0+w, :] + V2^T C_bot.
        for col in 0..m {
            let ccol = col * nb;
            for a in 0..w {
                let vcol = a * nb;
                let mut s = c_top[ccol + j0 + a];
                for r in 0..nb {
                    s += v2[vcol + r] * c_bot[ccol + r];
                }
                wk[col * w + a] = s;
            }
        }
        for col in 0..m {
            let wcol = &mut wk[col * w..(col + 1) * w];
            if transpose {
                for a in (0..w).rev() {
                    let mut s = 0.0;
                    for b in 0..=a {
                        s += tpanel[at(b, a, ldt)] * wcol[b];
                    }
                    wcol[a] = s;
                }
            } else {
                for a in 0..w {
                    let mut s = 0.0;
                    for b in a..w {
                        s += tpanel[at(a, b, ldt)] * wcol[b];
                    }
                    wcol[a] = s;
                }
            }
        }
        // C_top rows j0..j0+w take -wk; C_bot takes -V2 wk.
        for col in 0..m {
            let ccol = col * nb;
            for a in 0..w {
                let s = wk[col * w + a];
                c_top[ccol + j0 + a] -= s;
                let vcol = a * nb;
                for r in 0..nb {
                    c_bot[ccol + r] -= v2[vcol + r] * s;
                }
            }
        }
    });
}
