//! Principal components of embedded images.
//!
//! Datasets here have few images and many coordinates (`n << 2p`), so the
//! fit goes through the n x n Gram matrix of centered embeddings: an
//! eigenvector `w` of `Z Z^T` with eigenvalue `gamma` lifts to the unit
//! data-space direction `Z^T w / sqrt(gamma)` with covariance eigenvalue
//! `gamma / n`. Basis signs are fixed (largest-magnitude coordinate is made
//! positive, lowest index on ties) so fits are reproducible bit for bit.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::lot::TangentVector;

/// How scores relate to the orthonormal basis coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ScoreConvention {
    /// `x = U^T (v - m)`; isometric on the fitted subspace. Default.
    #[default]
    Orthonormal,
    /// `x = Lambda^{1/2} U^T (v - m)`: coordinates carry the standard
    /// deviation of their direction. Reconstruction divides it back out and
    /// therefore refuses zero-variance directions.
    VarianceScaled,
}

/// Relative threshold under which a Gram eigenvalue counts as zero rank.
const RANK_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModel {
    grid: PixelGrid,
    mean: Vec<f64>,
    /// Column-major `2p x d`: column `j` occupies `basis[j*2p..(j+1)*2p]`.
    basis: Vec<f64>,
    /// Covariance eigenvalues (descending), one per kept direction.
    eigenvalues: Vec<f64>,
    total_variance: f64,
    convention: ScoreConvention,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn grid(&self) -> PixelGrid {
        self.grid
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn convention(&self) -> ScoreConvention {
        self.convention
    }

    pub fn basis_column(&self, j: usize) -> &[f64] {
        let p2 = self.mean.len();
        &self.basis[j * p2..(j + 1) * p2]
    }

    /// Fraction of total variance carried by each kept direction.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.eigenvalues.len()];
        }
        self.eigenvalues
            .iter()
            .map(|&l| l / self.total_variance)
            .collect()
    }

    fn check_grid(&self, v: &TangentVector) -> Result<()> {
        if v.grid() != self.grid {
            return Err(Error::InvalidArgument(
                "tangent vector grid does not match the fitted model".to_string(),
            ));
        }
        Ok(())
    }

    /// Score vector of an embedding, length `dim()`.
    pub fn project(&self, v: &TangentVector) -> Result<Vec<f64>> {
        self.check_grid(v)?;
        let y = v.flatten();
        let dev: Vec<f64> = y.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.dim())
            .map(|j| {
                let dot: f64 = self
                    .basis_column(j)
                    .iter()
                    .zip(&dev)
                    .map(|(u, d)| u * d)
                    .sum();
                match self.convention {
                    ScoreConvention::Orthonormal => dot,
                    ScoreConvention::VarianceScaled => dot * self.eigenvalues[j].sqrt(),
                }
            })
            .collect())
    }

    /// Rebuild a tangent vector from scores.
    pub fn reconstruct(&self, scores: &[f64]) -> Result<TangentVector> {
        if scores.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} scores, got {}",
                self.dim(),
                scores.len()
            )));
        }
        let mut y = self.mean.clone();
        for (j, &x) in scores.iter().enumerate() {
            let coef = match self.convention {
                ScoreConvention::Orthonormal => x,
                ScoreConvention::VarianceScaled => {
                    let l = self.eigenvalues[j];
                    if l <= 0.0 {
                        if x.abs() <= 1e-12 {
                            continue;
                        }
                        return Err(Error::Degenerate(format!(
                            "direction {j} has zero variance; score {x} cannot be unscaled"
                        )));
                    }
                    x / l.sqrt()
                }
            };
            for (acc, u) in y.iter_mut().zip(self.basis_column(j)) {
                *acc += coef * u;
            }
        }
        TangentVector::from_flat(self.grid, &y)
    }

    /// Euclidean distance from an embedding to the fitted affine subspace.
    /// Convention-independent.
    pub fn residual_distance(&self, v: &TangentVector) -> Result<f64> {
        self.check_grid(v)?;
        let y = v.flatten();
        let mut dev: Vec<f64> = y.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for j in 0..self.dim() {
            let col = self.basis_column(j);
            let dot: f64 = col.iter().zip(&dev).map(|(u, d)| u * d).sum();
            for (d, u) in dev.iter_mut().zip(col) {
                *d -= dot * u;
            }
        }
        Ok(dev.iter().map(|d| d * d).sum::<f64>().sqrt())
    }

    /// Fit a `dim`-dimensional model to embedded images.
    /// Requires `2 <= n` images and `1 <= dim <= min(2p, n - 1)`; directions
    /// beyond the data rank get eigenvalue zero and a deterministic
    /// orthonormal filler basis (projections of fitted data onto them are
    /// zero).
    pub fn fit(
        vectors: &[TangentVector],
        dim: usize,
        convention: ScoreConvention,
    ) -> Result<PcaModel> {
        let n = vectors.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 embeddings to fit, got {n}"
            )));
        }
        let grid = vectors[0].grid();
        for (i, v) in vectors.iter().enumerate() {
            if v.grid() != grid {
                return Err(Error::InvalidArgument(format!(
                    "embedding {i} has a different grid"
                )));
            }
        }
        let p2 = 2 * grid.len();
        let max_dim = p2.min(n - 1);
        if dim == 0 || dim > max_dim {
            return Err(Error::InvalidArgument(format!(
                "dim {dim} out of range 1..={max_dim} for {n} images with {p2} coordinates"
            )));
        }

        let flats: Vec<Vec<f64>> = vectors.iter().map(|v| v.flatten()).collect();
        let mut mean = vec![0.0f64; p2];
        for f in &flats {
            for (m, x) in mean.iter_mut().zip(f) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let centered: Vec<Vec<f64>> = flats
            .iter()
            .map(|f| f.iter().zip(&mean).map(|(x, m)| x - m).collect())
            .collect();

        let mut gram = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                gram[(i, j)] = dot;
                gram[(j, i)] = dot;
            }
        }
        let total_variance = gram.trace() / n as f64;

        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

        let gamma_max = eig.eigenvalues[order[0]].max(0.0);
        let rank_tol = RANK_REL_TOL * gamma_max.max(1e-300);

        let mut basis = Vec::with_capacity(dim * p2);
        let mut eigenvalues = Vec::with_capacity(dim);
        for &k in order.iter().take(dim) {
            let gamma = eig.eigenvalues[k];
            if gamma > rank_tol {
                let wv = eig.eigenvectors.column(k);
                let mut col = vec![0.0f64; p2];
                for (i, c) in centered.iter().enumerate() {
                    let wi = wv[i];
                    for (acc, x) in col.iter_mut().zip(c) {
                        *acc += wi * x;
                    }
                }
                let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in col.iter_mut() {
                    *x /= norm;
                }
                fix_sign(&mut col);
                basis.extend_from_slice(&col);
                eigenvalues.push(gamma / n as f64);
            } else {
                let col = filler_column(&basis, p2, eigenvalues.len());
                basis.extend_from_slice(&col);
                eigenvalues.push(0.0);
            }
        }

        Ok(PcaModel {
            grid,
            mean,
            basis,
            eigenvalues,
            total_variance,
            convention,
        })
    }
}

/// Make the largest-magnitude coordinate positive; first such on ties.
fn fix_sign(col: &mut [f64]) {
    let mut arg = 0usize;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > col[arg].abs() {
            arg = i;
        }
    }
    if col[arg] < 0.0 {
        for x in col.iter_mut() {
            *x = -*x;
        }
    }
}

/// Deterministic orthonormal completion: the first canonical vector with a
/// substantial component orthogonal to the existing columns, normalized.
fn filler_column(basis: &[f64], p2: usize, ncols: usize) -> Vec<f64> {
    for cand in 0..p2 {
        let mut col = vec![0.0f64; p2];
        col[cand] = 1.0;
        for j in 0..ncols {
            let existing = &basis[j * p2..(j + 1) * p2];
            let dot: f64 = existing.iter().zip(&col).map(|(u, c)| u * c).sum();
            for (c, u) in col.iter_mut().zip(existing) {
                *c -= dot * u;
            }
        }
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            for x in col.iter_mut() {
                *x /= norm;
            }
            fix_sign(&mut col);
            return col;
        }
    }
    unreachable!("dim is capped at the ambient dimension");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lot::TangentVector;
    use crate::PixelGrid;
    use rand::Rng;
    use rand::SeedableRng;

    fn tv(grid: PixelGrid, flat: &[f64]) -> TangentVector {
        TangentVector::from_flat(grid, flat).unwrap()
    }

    fn seeded_vectors(n: usize, grid: PixelGrid, seed: u64) -> Vec<TangentVector> {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let flat: Vec<f64> = (0..2 * grid.len())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                tv(grid, &flat)
            })
            .collect()
    }

    #[test]
    fn identical_vectors_have_zero_spectrum_and_scores() {
        let g = PixelGrid::new(2, 2).unwrap();
        let v = tv(g, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0, 0.0, 2.0]);
        let m = PcaModel::fit(&vec![v.clone(); 5], 2, ScoreConvention::Orthonormal).unwrap();
        assert_eq!(m.eigenvalues(), &[0.0, 0.0]);
        let s = m.project(&v).unwrap();
        assert!(s.iter().all(|x| x.abs() < 1e-9), "{s:?}");
        assert!(m.residual_distance(&v).unwrap() < 1e-9);
    }

    #[test]
    fn collinear_data_is_exactly_one_dimensional() {
        let g = PixelGrid::new(1, 2).unwrap();
        let dir = [3.0, 0.0, -4.0, 0.0];
        let vs: Vec<TangentVector> = (0..6)
            .map(|i| {
                let t = i as f64 - 2.5;
                tv(g, &dir.map(|d| d * t))
            })
            .collect();
        let m = PcaModel::fit(&vs, 1, ScoreConvention::Orthonormal).unwrap();
        assert!(m.eigenvalues()[0] > 0.0);
        for v in &vs {
            assert!(m.residual_distance(v).unwrap() < 1e-9);
            let back = m.reconstruct(&m.project(v).unwrap()).unwrap();
            for (a, b) in back.flatten().iter().zip(v.flatten()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matches_jacobi_oracle_on_seeded_data() {
        let g = PixelGrid::new(2, 3).unwrap();
        let vs = seeded_vectors(8, g, 42);
        let m = PcaModel::fit(&vs, 3, ScoreConvention::Orthonormal).unwrap();

        // Independent route: covariance spectrum via Gram + cyclic Jacobi.
        let flats: Vec<Vec<f64>> = vs.iter().map(|v| v.flatten()).collect();
        let n = flats.len();
        let p2 = flats[0].len();
        let mut mean = vec![0.0; p2];
        for f in &flats {
            for (m, x) in mean.iter_mut().zip(f) {
                *m += x / n as f64;
            }
        }
        let cen: Vec<Vec<f64>> = flats
            .iter()
            .map(|f| f.iter().zip(&mean).map(|(x, mu)| x - mu).collect())
            .collect();
        let gram: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| cen[i].iter().zip(&cen[j]).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect();
        let (gvals, _) = oracles::jacobi_eigh(&gram);
        for j in 0..3 {
            assert!(
                (m.eigenvalues()[j] - gvals[j] / n as f64).abs() < 1e-9,
                "eigenvalue {j}"
            );
        }

        // Orthonormality of the lifted basis.
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = m
                    .basis_column(a)
                    .iter()
                    .zip(m.basis_column(b))
                    .map(|(x, y)| x * y)
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9, "columns {a},{b}: {dot}");
            }
        }
    }

    #[test]
    fn scores_plus_residual_recover_deviation_norm() {
        let g = PixelGrid::new(2, 2).unwrap();
        let vs = seeded_vectors(7, g, 7);
        let m = PcaModel::fit(&vs, 3, ScoreConvention::Orthonormal).unwrap();
        for v in &vs {
            let dev_sq: f64 = v
                .flatten()
                .iter()
                .zip(m.mean())
                .map(|(x, mu)| (x - mu) * (x - mu))
                .sum();
            let score_sq: f64 = m.project(v).unwrap().iter().map(|s| s * s).sum();
            let res = m.residual_distance(v).unwrap();
            assert!(
                (dev_sq - score_sq - res * res).abs() < 1e-9,
                "pythagoras broke"
            );
        }
    }

    #[test]
    fn variance_scaled_scores_are_sqrt_lambda_times_orthonormal() {
        let g = PixelGrid::new(2, 2).unwrap();
        let vs = seeded_vectors(9, g, 5);
        let mo = PcaModel::fit(&vs, 2, ScoreConvention::Orthonormal).unwrap();
        let ms = PcaModel::fit(&vs, 2, ScoreConvention::VarianceScaled).unwrap();
        for v in &vs {
            let so = mo.project(v).unwrap();
            let ss = ms.project(v).unwrap();
            for j in 0..2 {
                assert!((ss[j] - so[j] * mo.eigenvalues()[j].sqrt()).abs() < 1e-9);
            }
            // Reconstruction agrees between conventions.
            let ro = mo.reconstruct(&so).unwrap();
            let rs = ms.reconstruct(&ss).unwrap();
            for (a, b) in ro.flatten().iter().zip(rs.flatten()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn variance_scaled_rejects_zero_direction_scores() {
        let g = PixelGrid::new(1, 2).unwrap();
        // Rank-1 data, dim 2: second direction has zero variance.
        let vs: Vec<TangentVector> = (0..5)
            .map(|i| tv(g, &[i as f64, 0.0, 0.0, 0.0]))
            .collect();
        let m = PcaModel::fit(&vs, 2, ScoreConvention::VarianceScaled).unwrap();
        assert_eq!(m.eigenvalues()[1], 0.0);
        assert!(m.reconstruct(&[1.0, 0.0]).is_ok());
        let e = m.reconstruct(&[1.0, 0.5]).unwrap_err();
        assert!(matches!(e, Error::Degenerate(_)));
    }

    #[test]
    fn fit_rejects_bad_arguments() {
        let g = PixelGrid::new(1, 2).unwrap();
        let vs = seeded_vectors(4, g, 1);
        assert!(PcaModel::fit(&vs[..1], 1, ScoreConvention::Orthonormal).is_err());
        assert!(PcaModel::fit(&vs, 0, ScoreConvention::Orthonormal).is_err());
        assert!(PcaModel::fit(&vs, 4, ScoreConvention::Orthonormal).is_err()); // > n-1
        let g2 = PixelGrid::new(2, 1).unwrap();
        let mut mixed = vs.clone();
        mixed.push(TangentVector::zero(g2));
        assert!(PcaModel::fit(&mixed, 1, ScoreConvention::Orthonormal).is_err());
    }

    #[test]
    fn refit_is_bit_identical() {
        let g = PixelGrid::new(2, 3).unwrap();
        let vs = seeded_vectors(10, g, 33);
        let a = PcaModel::fit(&vs, 4, ScoreConvention::Orthonormal).unwrap();
        let b = PcaModel::fit(&vs, 4, ScoreConvention::Orthonormal).unwrap();
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.eigenvalues(), b.eigenvalues());
        for j in 0..4 {
            assert_eq!(a.basis_column(j), b.basis_column(j));
        }
    }
}
