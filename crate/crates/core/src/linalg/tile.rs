//! Tile-structured matrix storage.
//!
//! A matrix of order `n` is held as an `nt x nt` grid of square tiles of
//! order `nb`, each tile a contiguous column-major buffer. Contiguous tiles
//! are the point of the layout: every kernel call touches whole tiles, so
//! operands stay dense in cache regardless of `n`.
//!
//! When `nb` does not divide `n`, the matrix is embedded in the top-left
//! corner of a padded matrix of order `nt*nb` whose remaining diagonal is the
//! identity and whose off-diagonal padding is zero. Padding columns produce
//! identity reflectors under the factorization's tau=0 convention, so the
//! logical top-left block of the padded factors is exactly the factorization
//! of the original matrix, and verification simply ignores the padding.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::dense::square_order;

/// Column-major index into an `nb x nb` tile.
#[inline(always)]
pub(crate) fn at(i: usize, j: usize, nb: usize) -> usize {
    j * nb + i
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileMatrix {
    /// Logical matrix order (before padding).
    n: usize,
    /// Tile order.
    nb: usize,
    /// Tiles per side; `nt * nb >= n`.
    nt: usize,
    /// Row-major grid of tiles; each tile is column-major of length nb*nb.
    tiles: Vec<Vec<f64>>,
}

impl TileMatrix {
    /// Zero matrix of logical order `n` in `nb`-tiles (padding included).
    pub fn zeros(n: usize, nb: usize) -> Result<Self> {
        Self::validate(n, nb)?;
        let nt = n.div_ceil(nb);
        let tiles = vec![vec![0.0; nb * nb]; nt * nt];
        Ok(TileMatrix { n, nb, nt, tiles })
    }

    /// Identity of logical order `n` (padding diagonal included).
    pub fn identity(n: usize, nb: usize) -> Result<Self> {
        let mut m = Self::zeros(n, nb)?;
        for d in 0..m.padded_n() {
            m.set_padded(d, d, 1.0);
        }
        Ok(m)
    }

    /// Tile the dense matrix `a`, padding with an identity block when `nb`
    /// does not divide the order.
    pub fn from_dense(a: &Array2<f64>, nb: usize) -> Result<Self> {
        let n = square_order(a)?;
        if !a.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteInput("matrix"));
        }
        let mut m = Self::zeros(n, nb)?;
        for i in 0..n {
            for j in 0..n {
                m.set_padded(i, j, a[[i, j]]);
            }
        }
        for d in n..m.padded_n() {
            m.set_padded(d, d, 1.0);
        }
        Ok(m)
    }

    /// The logical `n x n` dense matrix (padding stripped).
    pub fn to_dense(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n, self.n), |(i, j)| self.get_padded(i, j))
    }

    /// The full padded dense matrix, padding included.
    pub fn to_dense_padded(&self) -> Array2<f64> {
        let pn = self.padded_n();
        Array2::from_shape_fn((pn, pn), |(i, j)| self.get_padded(i, j))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nb(&self) -> usize {
        self.nb
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn padded_n(&self) -> usize {
        self.nt * self.nb
    }

    pub fn tile(&self, ti: usize, tj: usize) -> &[f64] {
        &self.tiles[ti * self.nt + tj]
    }

    pub fn tile_mut(&mut self, ti: usize, tj: usize) -> &mut [f64] {
        &mut self.tiles[ti * self.nt + tj]
    }

    /// Entry of the padded matrix by global (row, col).
    pub fn get_padded(&self, i: usize, j: usize) -> f64 {
        let nb = self.nb;
        self.tile(i / nb, j / nb)[at(i % nb, j % nb, nb)]
    }

    pub fn set_padded(&mut self, i: usize, j: usize, v: f64) {
        let nb = self.nb;
        let idx = at(i % nb, j % nb, nb);
        self.tile_mut(i / nb, j / nb)[idx] = v;
    }

    /// Hand the tile grid over to the parallel engine and back.
    pub(crate) fn into_tiles(self) -> (usize, usize, usize, Vec<Vec<f64>>) {
        (self.n, self.nb, self.nt, self.tiles)
    }

    pub(crate) fn from_tiles(n: usize, nb: usize, nt: usize, tiles: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(tiles.len(), nt * nt);
        TileMatrix { n, nb, nt, tiles }
    }

    fn validate(n: usize, nb: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidParam("matrix order must be at least 1".into()));
        }
        if nb == 0 {
            return Err(Error::InvalidParam("tile order must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense::random_matrix;

    #[test]
    fn dense_roundtrip_exact_when_nb_divides() {
        let a = random_matrix(12, 1);
        let t = TileMatrix::from_dense(&a, 4).unwrap();
        assert_eq!(t.nt(), 3);
        assert_eq!(t.padded_n(), 12);
        assert_eq!(t.to_dense(), a);
    }

    #[test]
    fn padding_is_identity_block() {
        let a = random_matrix(5, 2);
        let t = TileMatrix::from_dense(&a, 4).unwrap();
        assert_eq!(t.nt(), 2);
        assert_eq!(t.padded_n(), 8);
        assert_eq!(t.to_dense(), a);
        let p = t.to_dense_padded();
        for i in 0..8 {
            for j in 0..8 {
                if i < 5 && j < 5 {
                    assert_eq!(p[[i, j]], a[[i, j]]);
                } else if i == j {
                    assert_eq!(p[[i, j]], 1.0);
                } else {
                    assert_eq!(p[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn tiles_are_column_major() {
        // Entry (row=1, col=0) of a tile must sit at offset 1, right after
        // (0,0): columns are contiguous.
        let mut t = TileMatrix::zeros(4, 4).unwrap();
        t.set_padded(1, 0, 42.0);
        assert_eq!(t.tile(0, 0)[1], 42.0);
        t.set_padded(0, 1, 7.0);
        assert_eq!(t.tile(0, 0)[4], 7.0);
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = random_matrix(4, 3);
        a[[2, 2]] = f64::NAN;
        assert!(TileMatrix::from_dense(&a, 2).is_err());
    }
}
