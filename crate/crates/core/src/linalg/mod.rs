//! Tile QR linear algebra: storage, serial kernels, and the parallel engine.

pub mod dense;
pub mod kernels;
pub mod qr;
pub mod tile;
