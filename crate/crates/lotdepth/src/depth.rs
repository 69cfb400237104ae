//! End-to-end image depth: embed, reduce, rank, score.
//!
//! A fitted [`Pipeline`] carries the three trained stages:
//! template (tangent embedding base point), PCA (dimension reduction of the
//! flattened displacement fields), and the quantile potentials fitted on the
//! latent scores. Two depths are reported per image:
//!
//! * inner depth: halfspace depth of the latent point through the norm of
//!   its entropic rank, high for images central in latent space;
//! * outer depth: `1 / (1 + residual)` where `residual` is the Euclidean
//!   distance from the embedding to the fitted PCA subspace, high for
//!   images the latent space can actually represent.
//!
//! The two are complementary: an image can sit dead-center in latent space
//! while being far from the subspace (inner high, outer low).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::ImageHistogram;
use crate::lot::{log_map, log_map_batch, select_template, TemplateModel, TemplateMode};
use crate::par;
use crate::pca::{PcaModel, ScoreConvention};
use crate::quantiles::{
    fit_potentials_with, sample_reference, EpsSchedule, EvalMode, FitOptions, QuantileModel,
    ReferenceKind,
};
use crate::seeding::derive_seed;

/// Fit-time knobs for [`Pipeline::fit`].
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub template_mode: TemplateMode,
    /// Latent dimension passed to the PCA stage.
    pub dim: usize,
    pub convention: ScoreConvention,
    pub reference_kind: ReferenceKind,
    /// Reference sample size; 0 means "match the dataset size".
    pub reference_size: usize,
    /// Epsilon schedule for the potential fit; `None` picks the default
    /// schedule scaled to the latent spread.
    pub schedule: Option<EpsSchedule>,
    pub fit_options: FitOptions,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            template_mode: TemplateMode::ClosestToMean,
            dim: 2,
            convention: ScoreConvention::Orthonormal,
            reference_kind: ReferenceKind::SphericalUniform,
            reference_size: 0,
            schedule: None,
            fit_options: FitOptions::default(),
            seed: 0,
        }
    }
}

/// The trained stages of the depth pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pipeline {
    template: TemplateModel,
    pca: PcaModel,
    quantiles: QuantileModel,
}

impl Pipeline {
    /// Fit all three stages on a dataset sharing one grid.
    pub fn fit(images: &[ImageHistogram], config: &PipelineConfig) -> Result<Pipeline> {
        if images.is_empty() {
            return Err(Error::Degenerate("empty dataset".to_string()));
        }
        let grid = images[0].grid();
        if images.iter().any(|i| i.grid() != grid) {
            return Err(Error::InvalidArgument(
                "images must share one grid".to_string(),
            ));
        }
        let template = select_template(images, config.template_mode)?;
        let embeddings = log_map_batch(images, &template)?;
        let pca = PcaModel::fit(&embeddings, config.dim, config.convention)?;
        let latents = par::try_map_slice(&embeddings, |v| pca.project(v))?;
        let m = if config.reference_size == 0 {
            images.len()
        } else {
            config.reference_size
        };
        let reference = sample_reference(
            m,
            pca.dim(),
            config.reference_kind,
            derive_seed(config.seed, 1),
        )?;
        let schedule = match &config.schedule {
            Some(s) => s.clone(),
            None => EpsSchedule::default_for_data(&latents)?,
        };
        let quantiles = fit_potentials_with(&latents, reference, schedule, config.fit_options)?;
        Ok(Pipeline {
            template,
            pca,
            quantiles,
        })
    }

    pub fn from_parts(
        template: TemplateModel,
        pca: PcaModel,
        quantiles: QuantileModel,
    ) -> Pipeline {
        Pipeline {
            template,
            pca,
            quantiles,
        }
    }

    pub fn template(&self) -> &TemplateModel {
        &self.template
    }

    pub fn pca(&self) -> &PcaModel {
        &self.pca
    }

    pub fn quantiles(&self) -> &QuantileModel {
        &self.quantiles
    }

    /// Latent score vector of an image (embed, then project).
    pub fn embed(&self, image: &ImageHistogram) -> Result<Vec<f64>> {
        let v = log_map(image, &self.template)?;
        self.pca.project(&v)
    }

    /// Latent scores plus the subspace residual, sharing one embedding.
    pub fn embed_with_residual(&self, image: &ImageHistogram) -> Result<(Vec<f64>, f64)> {
        let v = log_map(image, &self.template)?;
        Ok((self.pca.project(&v)?, self.pca.residual_distance(&v)?))
    }

    /// Full per-image record.
    pub fn record(&self, id: usize, image: &ImageHistogram) -> Result<DepthRecord> {
        let (latent, residual) = self.embed_with_residual(image)?;
        let rank = self.quantiles.rank(&latent, EvalMode::Entropic)?;
        let inner = self.quantiles.mk_depth(&latent)?;
        Ok(DepthRecord {
            id,
            inner,
            outer: outer_from_residual(residual),
            rank,
            latent,
            residual,
        })
    }
}

#[inline]
fn outer_from_residual(residual: f64) -> f64 {
    1.0 / (1.0 + residual)
}

/// Inner depth of one image under a fitted pipeline.
pub fn inner_depth(pipeline: &Pipeline, image: &ImageHistogram) -> Result<f64> {
    let latent = pipeline.embed(image)?;
    pipeline.quantiles().mk_depth(&latent)
}

/// Outer depth of one image: `1 / (1 + residual)`.
pub fn outer_depth(pipeline: &Pipeline, image: &ImageHistogram) -> Result<f64> {
    let v = log_map(image, pipeline.template())?;
    Ok(outer_from_residual(pipeline.pca().residual_distance(&v)?))
}

/// Everything the pipeline knows about one image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthRecord {
    /// Position of the image in the scored dataset.
    pub id: usize,
    pub inner: f64,
    pub outer: f64,
    /// Entropic rank of the latent point.
    pub rank: Vec<f64>,
    pub latent: Vec<f64>,
    /// Euclidean distance to the PCA subspace.
    pub residual: f64,
}

impl DepthRecord {
    pub fn depth(&self, key: DepthKey) -> f64 {
        match key {
            DepthKey::Inner => self.inner,
            DepthKey::Outer => self.outer,
        }
    }
}

/// Which depth an ordering or summary refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthKey {
    Inner,
    Outer,
}

/// Depth records for a dataset, in input order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthReport {
    pub records: Vec<DepthRecord>,
}

impl DepthReport {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Score a dataset against a fitted pipeline; parallel over images.
pub fn depth_report(pipeline: &Pipeline, images: &[ImageHistogram]) -> Result<DepthReport> {
    let records = par::try_map_slice(images, |img| {
        // Index recovered below; the parallel map preserves order.
        pipeline.record(usize::MAX, img)
    })?;
    let records = records
        .into_iter()
        .enumerate()
        .map(|(id, mut r)| {
            r.id = id;
            r
        })
        .collect();
    Ok(DepthReport { records })
}

/// Record ids sorted from deepest to shallowest; exact ties keep the lower
/// id first.
pub fn order_statistics(records: &[DepthRecord], key: DepthKey) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| {
        records[b]
            .depth(key)
            .total_cmp(&records[a].depth(key))
            .then(records[a].id.cmp(&records[b].id))
    });
    idx.into_iter().map(|i| records[i].id).collect()
}

/// The five-image summary: ids of the order statistics at positions
/// 1 (deepest), `ceil(0.25 n)`, `ceil(0.5 n)`, `ceil(0.75 n)` and `n`
/// (least deep) of the nonincreasing depth ordering. For n = 100 these are
/// positions 1, 25, 50, 75, 100.
pub fn five_summary(records: &[DepthRecord], key: DepthKey) -> Result<[usize; 5]> {
    let n = records.len();
    if n < 5 {
        return Err(Error::InvalidArgument(format!(
            "five-image summary needs at least 5 records, got {n}"
        )));
    }
    let ordered = order_statistics(records, key);
    let pos = |q: f64| ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    Ok([
        ordered[0],
        ordered[pos(0.25)],
        ordered[pos(0.5)],
        ordered[pos(0.75)],
        ordered[n - 1],
    ])
}

/// Diagnostic variant of the inner depth using the hard (argmax) rank; the
/// reported depth is then piecewise constant in the image.
pub fn inner_depth_hard(pipeline: &Pipeline, image: &ImageHistogram) -> Result<f64> {
    let latent = pipeline.embed(image)?;
    let model = pipeline.quantiles();
    let r = model.rank(&latent, EvalMode::Hard)?;
    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt().clamp(0.0, 1.0);
    crate::quantiles::tukey_depth_spherical(norm, model.dim())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PixelGrid;
    use crate::synth::synth_blob;

    fn rec(id: usize, inner: f64, outer: f64) -> DepthRecord {
        DepthRecord {
            id,
            inner,
            outer,
            rank: vec![],
            latent: vec![],
            residual: 1.0 / outer - 1.0,
        }
    }

    fn blob_corpus(n: usize, grid: PixelGrid) -> Vec<ImageHistogram> {
        // Centers spiral outward so the corpus has a clear center and rim.
        (0..n)
            .map(|s| {
                let t = s as f64 / n as f64;
                let angle = 2.0 * std::f64::consts::PI * (s as f64) * 0.37;
                let r = 2.2 * t;
                let c = [
                    3.5 + r * angle.sin(),
                    3.5 + r * angle.cos(),
                ];
                synth_blob(grid, c, 1.2, s as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn ordering_is_nonincreasing_with_stable_ties() {
        let recs = vec![
            rec(0, 0.2, 0.5),
            rec(1, 0.4, 0.5),
            rec(2, 0.2, 0.9),
            rec(3, 0.5, 0.1),
        ];
        assert_eq!(order_statistics(&recs, DepthKey::Inner), vec![3, 1, 0, 2]);
        // Outer ties between 0 and 1 keep the lower id first.
        assert_eq!(order_statistics(&recs, DepthKey::Outer), vec![2, 0, 1, 3]);
    }

    #[test]
    fn five_summary_positions() {
        // Depth of record i is i/10, so the descending order is by
        // decreasing id and position k holds id n-k.
        // n = 5: positions 1..5, the whole ordering.
        let recs: Vec<DepthRecord> = (0..5).map(|i| rec(i, (i as f64) / 10.0, 0.5)).collect();
        let s = five_summary(&recs, DepthKey::Inner).unwrap();
        assert_eq!(s, [4, 3, 2, 1, 0]);

        // n = 7: positions 1, 2, 4, 6, 7.
        let recs: Vec<DepthRecord> = (0..7).map(|i| rec(i, (i as f64) / 10.0, 0.5)).collect();
        let s = five_summary(&recs, DepthKey::Inner).unwrap();
        assert_eq!(s, [6, 5, 3, 1, 0]);

        // n = 100: positions 1, 25, 50, 75, 100.
        let recs: Vec<DepthRecord> =
            (0..100).map(|i| rec(i, (i as f64) / 100.0, 0.5)).collect();
        let s = five_summary(&recs, DepthKey::Inner).unwrap();
        assert_eq!(s, [99, 75, 50, 25, 0]);

        // Fewer than five records is refused.
        let four: Vec<DepthRecord> = (0..4).map(|i| rec(i, 0.1, 0.5)).collect();
        assert!(five_summary(&four, DepthKey::Inner).is_err());
    }

    #[test]
    fn ordering_matches_a_selection_sort_oracle() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let recs: Vec<DepthRecord> = (0..100).map(|i| rec(i, next() * 0.5, 0.5)).collect();
        let got = order_statistics(&recs, DepthKey::Inner);
        // Oracle: repeatedly pick the deepest remaining record, lowest id
        // on ties.
        let mut remaining: Vec<usize> = (0..recs.len()).collect();
        let mut expect = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0usize;
            for k in 1..remaining.len() {
                let (a, b) = (recs[remaining[k]].inner, recs[remaining[best]].inner);
                if a > b {
                    best = k;
                }
            }
            expect.push(remaining.remove(best));
        }
        assert_eq!(got, expect);
        // The ordering is a permutation of all ids.
        let mut sorted = got.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..recs.len()).collect::<Vec<_>>());
    }

    #[test]
    fn deeper_than_relation_is_transitive() {
        let recs: Vec<DepthRecord> = (0..40)
            .map(|i| rec(i, ((i * 7) % 13) as f64 / 26.0, 0.5))
            .collect();
        for a in &recs {
            assert!(a.inner >= a.inner); // reflexive
            for b in &recs {
                for c in &recs {
                    if a.inner >= b.inner && b.inner >= c.inner {
                        assert!(a.inner >= c.inner);
                    }
                }
            }
        }
    }

    #[test]
    fn full_rank_fit_has_outer_depth_one() {
        // 2x2 grid: ambient dimension 2p = 8; with 12 images the PCA can
        // keep all 8 directions, so every training residual is zero.
        let grid = PixelGrid::new(2, 2).unwrap();
        let images: Vec<ImageHistogram> = (0..12)
            .map(|s| synth_blob(grid, [0.5, 0.5], 0.8, s as u64).unwrap())
            .collect();
        let cfg = PipelineConfig {
            dim: 8,
            ..PipelineConfig::default()
        };
        let pipeline = Pipeline::fit(&images, &cfg).unwrap();
        for img in &images {
            let o = outer_depth(&pipeline, img).unwrap();
            assert!(o > 1.0 - 1e-9, "outer {o}");
        }
    }

    #[test]
    fn orthogonal_perturbation_drops_outer_depth() {
        let grid = PixelGrid::new(8, 8).unwrap();
        let images = blob_corpus(24, grid);
        let pipeline = Pipeline::fit(&images, &PipelineConfig::default()).unwrap();
        let report = depth_report(&pipeline, &images).unwrap();
        let min_outer = report
            .records
            .iter()
            .map(|r| r.outer)
            .fold(f64::INFINITY, f64::min);
        // Build a unit vector orthogonal to the PCA basis and to the first
        // image's deviation, then push the embedding 10 units along it.
        let v = crate::lot::log_map(&images[0], pipeline.template()).unwrap();
        let flat = v.flatten();
        let pca = pipeline.pca();
        let mut w: Vec<f64> = (0..flat.len())
            .map(|k| ((k * 2654435761) % 97) as f64 / 97.0 - 0.5)
            .collect();
        // dev_perp = deviation minus its basis components, so the set
        // {basis columns, dev_perp} is orthogonal and one projection pass
        // per direction orthogonalizes w exactly.
        let mut dev: Vec<f64> = flat.iter().zip(pca.mean()).map(|(a, m)| a - m).collect();
        for j in 0..pca.dim() {
            let col = pca.basis_column(j);
            let dot: f64 = dev.iter().zip(col).map(|(a, b)| a * b).sum();
            for (di, ci) in dev.iter_mut().zip(col) {
                *di -= dot * ci;
            }
        }
        for col in (0..pca.dim()).map(|j| pca.basis_column(j).to_vec()).chain([dev]) {
            let dot: f64 = w.iter().zip(&col).map(|(a, b)| a * b).sum();
            let nrm: f64 = col.iter().map(|x| x * x).sum();
            if nrm > 1e-18 {
                for (wi, ci) in w.iter_mut().zip(&col) {
                    *wi -= dot / nrm * ci;
                }
            }
        }
        let nrm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(nrm > 1e-9);
        let perturbed: Vec<f64> = flat
            .iter()
            .zip(&w)
            .map(|(a, wi)| a + 10.0 * wi / nrm)
            .collect();
        let tv = crate::lot::TangentVector::from_flat(grid, &perturbed).unwrap();
        let residual = pca.residual_distance(&tv).unwrap();
        assert!(residual >= 10.0 - 1e-6, "residual {residual}");
        let outer = 1.0 / (1.0 + residual);
        assert!(
            outer < min_outer,
            "perturbed outer {outer} vs training min {min_outer}"
        );
    }

    #[test]
    fn outer_depth_formula() {
        assert_eq!(outer_from_residual(0.0), 1.0);
        assert_eq!(outer_from_residual(3.0), 0.25);
        assert_eq!(outer_from_residual(1.0), 0.5);
    }

    #[test]
    fn pipeline_scores_center_above_rim() {
        let grid = PixelGrid::new(8, 8).unwrap();
        let images = blob_corpus(40, grid);
        let pipeline = Pipeline::fit(&images, &PipelineConfig::default()).unwrap();
        let report = depth_report(&pipeline, &images).unwrap();
        assert_eq!(report.len(), 40);
        for (id, r) in report.records.iter().enumerate() {
            assert_eq!(r.id, id);
            assert!((0.0..=0.5 + 1e-12).contains(&r.inner), "inner {}", r.inner);
            assert!((0.0..=1.0).contains(&r.outer), "outer {}", r.outer);
            assert!((r.outer - outer_from_residual(r.residual)).abs() < 1e-15);
        }
        // The most central images (first in the spiral) should be deeper on
        // average than the rim images (last in the spiral).
        let head: f64 = report.records[..10].iter().map(|r| r.inner).sum::<f64>() / 10.0;
        let tail: f64 = report.records[30..].iter().map(|r| r.inner).sum::<f64>() / 10.0;
        assert!(head > tail, "head {head} vs tail {tail}");
    }

    #[test]
    fn inner_depth_is_monotone_in_rank_norm() {
        let grid = PixelGrid::new(8, 8).unwrap();
        let images = blob_corpus(30, grid);
        let pipeline = Pipeline::fit(&images, &PipelineConfig::default()).unwrap();
        let report = depth_report(&pipeline, &images).unwrap();
        // Depth is strictly decreasing in the entropic rank norm, so
        // "deepest first" must equal "smallest norm first". Both orderings
        // break exact ties by id ascending.
        let by_depth = order_statistics(&report.records, DepthKey::Inner);
        let mut by_norm: Vec<usize> = (0..report.len()).collect();
        by_norm.sort_by(|&a, &b| {
            let na: f64 = report.records[a].rank.iter().map(|v| v * v).sum();
            let nb: f64 = report.records[b].rank.iter().map(|v| v * v).sum();
            na.total_cmp(&nb).then(a.cmp(&b))
        });
        assert_eq!(by_depth, by_norm);
    }

    #[test]
    fn record_and_free_functions_agree() {
        let grid = PixelGrid::new(8, 8).unwrap();
        let images = blob_corpus(16, grid);
        let pipeline = Pipeline::fit(&images, &PipelineConfig::default()).unwrap();
        let r = pipeline.record(7, &images[3]).unwrap();
        assert_eq!(r.id, 7);
        let i = inner_depth(&pipeline, &images[3]).unwrap();
        let o = outer_depth(&pipeline, &images[3]).unwrap();
        assert_eq!(r.inner, i);
        assert_eq!(r.outer, o);
        let latent = pipeline.embed(&images[3]).unwrap();
        assert_eq!(r.latent, latent);
    }

    #[test]
    fn fit_rejects_mixed_grids_and_empty_input() {
        let g1 = PixelGrid::new(6, 6).unwrap();
        let g2 = PixelGrid::new(6, 7).unwrap();
        let mut images = vec![synth_blob(g1, [2.0, 2.0], 1.0, 1).unwrap()];
        assert!(Pipeline::fit(&[], &PipelineConfig::default()).is_err());
        images.push(synth_blob(g2, [2.0, 2.0], 1.0, 2).unwrap());
        assert!(Pipeline::fit(&images, &PipelineConfig::default()).is_err());
    }
}
