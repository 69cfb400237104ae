//! Rectangular pixel grids.
//!
//! Pixel `k` of an `h x w` grid sits at coordinate `(row, col)` with
//! `row = k / w`, `col = k % w` (row-major). Coordinates are used directly
//! as points in the plane with unit spacing, so squared distances between
//! pixels are exact small integers in f64.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelGrid {
    height: usize,
    width: usize,
}

impl PixelGrid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        Ok(PixelGrid { height, width })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false // dimensions are validated positive
    }

    /// Planar coordinate of pixel `k` as `(row, col)`.
    #[inline]
    pub fn coord(&self, k: usize) -> [f64; 2] {
        debug_assert!(k < self.len());
        [(k / self.width) as f64, (k % self.width) as f64]
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    /// Squared Euclidean distance between pixels `k` and `l`.
    #[inline]
    pub fn sq_dist(&self, k: usize, l: usize) -> f64 {
        let a = self.coord(k);
        let b = self.coord(l);
        let dr = a[0] - b[0];
        let dc = a[1] - b[1];
        dr * dr + dc * dc
    }

    /// All pixel coordinates in index order, flattened `[r0, c0, r1, c1, ...]`.
    pub fn coords_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.len());
        for k in 0..self.len() {
            let c = self.coord(k);
            out.push(c[0]);
            out.push(c[1]);
        }
        out
    }
}
