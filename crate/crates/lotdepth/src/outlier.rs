//! Depth-calibrated outlier detection.
//!
//! A fitted pipeline scores each image with an inner depth (centrality of
//! its latent point) and an outer depth (closeness to the latent subspace).
//! Thresholds come from a held-out calibration set: for each depth the
//! threshold is the value at position `ceil((1 - alpha) n)` of the
//! nonincreasing calibration ordering, so a fraction `alpha` of calibration
//! images falls strictly below it (exactly `floor(alpha n)` when depths are
//! distinct). A query image is an outlier when either depth drops strictly
//! below its threshold; the two flags carve the inlier quadrant of the
//! DD plot.
//!
//! For ranking (ROC/AUC) the two depths combine into one score through
//! their calibration empirical CDFs: `min(F_inner(inner), F_outer(outer))`,
//! low values being outlier-like in both coordinates at once.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depth::{depth_report, Pipeline};
use crate::error::{Error, Result};
use crate::histogram::ImageHistogram;
use crate::par;

/// Calibrated decision rule on top of a fitted pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutlierModel {
    pipeline: Pipeline,
    inner_threshold: f64,
    outer_threshold: f64,
    alpha: f64,
    /// Calibration depths, ascending, for quantile normalization.
    calibration_inner: Vec<f64>,
    calibration_outer: Vec<f64>,
}

/// Depth at position `ceil((1 - alpha) n)` of the nonincreasing ordering.
/// With `alpha = 0`, or when `n * alpha < 1` (logged), this is the minimum.
pub fn depth_threshold(depths: &[f64], alpha: f64) -> Result<f64> {
    let n = depths.len();
    if n == 0 {
        return Err(Error::Degenerate(
            "cannot calibrate on an empty set".to_string(),
        ));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside [0, 1)"
        )));
    }
    if alpha > 0.0 && (n as f64) * alpha < 1.0 {
        log::warn!(
            "calibration set of {n} cannot resolve alpha {alpha}; \
             threshold falls back to the minimum depth"
        );
    }
    let mut sorted = depths.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let pos = (((1.0 - alpha) * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[pos - 1])
}

/// Calibrate thresholds for both depths on held-out images. The
/// calibration set must be disjoint from the pipeline's training images.
pub fn calibrate(
    calibration: &[ImageHistogram],
    pipeline: Pipeline,
    alpha: f64,
) -> Result<OutlierModel> {
    let report = depth_report(&pipeline, calibration)?;
    let inner: Vec<f64> = report.records.iter().map(|r| r.inner).collect();
    let outer: Vec<f64> = report.records.iter().map(|r| r.outer).collect();
    let inner_threshold = depth_threshold(&inner, alpha)?;
    let outer_threshold = depth_threshold(&outer, alpha)?;
    let mut calibration_inner = inner;
    let mut calibration_outer = outer;
    calibration_inner.sort_by(f64::total_cmp);
    calibration_outer.sort_by(f64::total_cmp);
    Ok(OutlierModel {
        pipeline,
        inner_threshold,
        outer_threshold,
        alpha,
        calibration_inner,
        calibration_outer,
    })
}

/// What [`classify`] reports for one image.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Verdict {
    pub is_outlier: bool,
    pub inner: f64,
    pub outer: f64,
}

impl OutlierModel {
    /// Diagnostic constructor with explicit thresholds and no calibration
    /// quantiles (the combined score then degenerates to 0/1 steps).
    pub fn with_thresholds(
        pipeline: Pipeline,
        inner_threshold: f64,
        outer_threshold: f64,
        alpha: f64,
    ) -> OutlierModel {
        OutlierModel {
            pipeline,
            inner_threshold,
            outer_threshold,
            alpha,
            calibration_inner: vec![inner_threshold],
            calibration_outer: vec![outer_threshold],
        }
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn inner_threshold(&self) -> f64 {
        self.inner_threshold
    }

    pub fn outer_threshold(&self) -> f64 {
        self.outer_threshold
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The decision rule on raw depth values: outlier iff either depth is
    /// strictly below its threshold.
    pub fn is_outlier_depths(&self, inner: f64, outer: f64) -> bool {
        inner < self.inner_threshold || outer < self.outer_threshold
    }

    /// Combined outlier score from raw depths: the smaller of the two
    /// calibration-CDF positions. Low means outlier-like.
    pub fn combined_score_depths(&self, inner: f64, outer: f64) -> f64 {
        let fi = ecdf(&self.calibration_inner, inner);
        let fo = ecdf(&self.calibration_outer, outer);
        fi.min(fo)
    }

    /// Combined outlier score of an image.
    pub fn combined_score(&self, image: &ImageHistogram) -> Result<f64> {
        let (latent, residual) = self.pipeline.embed_with_residual(image)?;
        let inner = self.pipeline.quantiles().mk_depth(&latent)?;
        let outer = 1.0 / (1.0 + residual);
        Ok(self.combined_score_depths(inner, outer))
    }
}

/// Fraction of `sorted` (ascending) that is `<= value`.
fn ecdf(sorted: &[f64], value: f64) -> f64 {
    let count = sorted.partition_point(|&x| x <= value);
    count as f64 / sorted.len() as f64
}

/// Classify one image against a calibrated model.
pub fn classify(image: &ImageHistogram, model: &OutlierModel) -> Result<Verdict> {
    let (latent, residual) = model.pipeline.embed_with_residual(image)?;
    let inner = model.pipeline.quantiles().mk_depth(&latent)?;
    let outer = 1.0 / (1.0 + residual);
    Ok(Verdict {
        is_outlier: model.is_outlier_depths(inner, outer),
        inner,
        outer,
    })
}

/// Classify many images; parallel over images.
pub fn classify_batch(images: &[ImageHistogram], model: &OutlierModel) -> Result<Vec<Verdict>> {
    par::try_map_slice(images, |img| classify(img, model))
}

/// Write the DD plot (outer depth against inner depth) as CSV: a comment
/// header with the thresholds, then one row per image. Deterministic byte
/// output for fixed inputs.
pub fn dd_plot_export(
    images: &[ImageHistogram],
    model: &OutlierModel,
    labels: Option<&[String]>,
    path: &Path,
) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != images.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} images",
                l.len(),
                images.len()
            )));
        }
    }
    let verdicts = classify_batch(images, model)?;
    let mut out = String::new();
    out.push_str(&format!(
        "# inner_threshold={:?} outer_threshold={:?} alpha={:?}\n",
        model.inner_threshold, model.outer_threshold, model.alpha
    ));
    out.push_str("id,inner,outer,is_outlier,label\n");
    for (i, v) in verdicts.iter().enumerate() {
        let label = labels.map(|l| l[i].as_str()).unwrap_or("");
        out.push_str(&format!(
            "{},{:?},{:?},{},{}\n",
            i, v.inner, v.outer, v.is_outlier, label
        ));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// One point of the ROC curve swept over score thresholds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score value whose tie group was folded in at this point.
    pub threshold: f64,
}

/// ROC curve and trapezoidal AUC for depth-like scores (LOW score means
/// outlier-like). Tie groups move diagonally, so the trapezoid rule equals
/// the Mann-Whitney statistic `P(outlier < inlier) + P(tie)/2` exactly.
pub fn roc_auc(scores: &[(f64, bool)]) -> Result<(Vec<RocPoint>, f64)> {
    let positives = scores.iter().filter(|(_, o)| *o).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidArgument(
            "ROC needs both classes present".to_string(),
        ));
    }
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::Domain("NaN score".to_string()));
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    // Ascending score: most outlier-like first.
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::NEG_INFINITY,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    // 2 * area * positives * negatives, accumulated exactly in integers so
    // degenerate curves give AUC 1.0 and 0.5 without rounding residue.
    let mut twice_area = 0u128;
    let mut k = 0usize;
    while k < sorted.len() {
        let score = sorted[k].0;
        let mut group_tp = 0usize;
        let mut group_fp = 0usize;
        while k < sorted.len() && sorted[k].0 == score {
            if sorted[k].1 {
                group_tp += 1;
            } else {
                group_fp += 1;
            }
            k += 1;
        }
        let tp_before = tp;
        tp += group_tp;
        fp += group_fp;
        twice_area += group_fp as u128 * (tp_before + tp) as u128;
        points.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            threshold: score,
        });
    }
    let auc = twice_area as f64 / (2.0 * positives as f64 * negatives as f64);
    Ok((points, auc))
}
