//! Images as probability vectors on a pixel grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PixelGrid;

/// Total-mass slack accepted by [`ImageHistogram::from_weights`] and
/// guaranteed by every constructor after normalization.
pub const MASS_TOL: f64 = 1e-12;

/// A nonnegative weight per pixel, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageHistogram {
    grid: PixelGrid,
    weights: Vec<f64>,
}

impl ImageHistogram {
    /// Normalize raw nonnegative intensities to total mass one.
    pub fn from_intensities(grid: PixelGrid, intensities: &[f64]) -> Result<Self> {
        if intensities.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} intensities for the grid, got {}",
                grid.len(),
                intensities.len()
            )));
        }
        let mut total = 0.0;
        for (k, &v) in intensities.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "intensity at pixel {k} is {v}; must be finite and >= 0"
                )));
            }
            total += v;
        }
        if total <= 0.0 {
            return Err(Error::Degenerate(
                "image has zero total intensity".to_string(),
            ));
        }
        let weights = intensities.iter().map(|&v| v / total).collect();
        Ok(ImageHistogram { grid, weights })
    }

    /// Accept weights that already satisfy the invariants
    /// (nonnegative, total mass within [`MASS_TOL`] of one).
    pub fn from_weights(grid: PixelGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} weights for the grid, got {}",
                grid.len(),
                weights.len()
            )));
        }
        let mut total = 0.0;
        for (k, &v) in weights.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "weight at pixel {k} is {v}; must be finite and >= 0"
                )));
            }
            total += v;
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total:.17}, expected 1 within {MASS_TOL:e}"
            )));
        }
        Ok(ImageHistogram { grid, weights })
    }

    /// Additive smoothing: add `delta` to every pixel, renormalize.
    /// Removes empty pixels so transported mass exists everywhere; changes
    /// the measure, so it is opt-in and never applied implicitly.
    pub fn smooth(&self, delta: f64) -> Result<Self> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "smoothing delta must be finite and >= 0, got {delta}"
            )));
        }
        let total = 1.0 + delta * self.grid.len() as f64;
        let weights = self.weights.iter().map(|&w| (w + delta) / total).collect();
        Ok(ImageHistogram {
            grid: self.grid,
            weights,
        })
    }

    pub fn grid(&self) -> PixelGrid {
        self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Pixel indices carrying strictly positive mass, ascending.
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len())
            .filter(|&k| self.weights[k] > 0.0)
            .collect()
    }

    /// Mean pixel coordinate under the image weights.
    pub fn centroid(&self) -> [f64; 2] {
        let mut r = 0.0;
        let mut c = 0.0;
        for (k, &w) in self.weights.iter().enumerate() {
            let p = self.grid.coord(k);
            r += w * p[0];
            c += w * p[1];
        }
        [r, c]
    }

    /// Squared L2 distance between the weight vectors of two images.
    pub fn l2_sq_distance(&self, other: &ImageHistogram) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidArgument(
                "images live on different grids".to_string(),
            ));
        }
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

/// Pixelwise average of a nonempty set of images on a common grid.
pub fn mean_image(images: &[ImageHistogram]) -> Result<ImageHistogram> {
    let first = images
        .first()
        .ok_or_else(|| Error::Degenerate("mean of an empty image set".to_string()))?;
    let grid = first.grid;
    let mut acc = vec![0.0; grid.len()];
    for (i, img) in images.iter().enumerate() {
        if img.grid != grid {
            return Err(Error::InvalidArgument(format!(
                "image {i} has a different grid"
            )));
        }
        for (a, &w) in acc.iter_mut().zip(img.weights()) {
            *a += w;
        }
    }
    let n = images.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    ImageHistogram::from_intensities(grid, &acc)
}
