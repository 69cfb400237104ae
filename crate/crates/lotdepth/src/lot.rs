//! Tangent-space embedding of images at a template.
//!
//! Each image `I` is represented by the displacement field of the exact
//! transport plan pushing the template onto `I` (barycentric projection when
//! plan rows split). The fields live on the template pixels, carry the
//! template-weighted inner product, and flatten to `2p` coordinates in the
//! fixed order `[dr0, dc0, dr1, dc1, ...]`.
//!
//! Pairwise tangent distances dominate the true Wasserstein distance when
//! both plans are maps; [`w2_upper_bound_check`] measures both sides and
//! says whether the domination condition held.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::histogram::{mean_image, ImageHistogram};
use crate::ot::{barycentric_map, solve_exact};
use crate::par;

/// How the template is chosen from a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateMode {
    /// Dataset image closest (L2 on weights) to the pixelwise mean;
    /// ties keep the lowest index. Default.
    ClosestToMean,
    /// The pixelwise mean itself, renormalized.
    PixelwiseMean,
    /// A fixed dataset index.
    Explicit(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateModel {
    image: ImageHistogram,
    mode: TemplateMode,
    /// Index into the dataset when the template is a dataset member.
    source_index: Option<usize>,
}

impl TemplateModel {
    pub fn image(&self) -> &ImageHistogram {
        &self.image
    }

    pub fn grid(&self) -> PixelGrid {
        self.image.grid()
    }

    pub fn mode(&self) -> TemplateMode {
        self.mode
    }

    pub fn source_index(&self) -> Option<usize> {
        self.source_index
    }

    /// Wrap an arbitrary image as a template.
    pub fn from_image(image: ImageHistogram) -> TemplateModel {
        TemplateModel {
            image,
            mode: TemplateMode::PixelwiseMean,
            source_index: None,
        }
    }
}

/// Choose the template for a dataset on a common grid.
pub fn select_template(images: &[ImageHistogram], mode: TemplateMode) -> Result<TemplateModel> {
    if images.is_empty() {
        return Err(Error::Degenerate(
            "cannot select a template from an empty dataset".to_string(),
        ));
    }
    match mode {
        TemplateMode::PixelwiseMean => Ok(TemplateModel {
            image: mean_image(images)?,
            mode,
            source_index: None,
        }),
        TemplateMode::Explicit(r) => {
            if r >= images.len() {
                return Err(Error::InvalidArgument(format!(
                    "template index {r} out of range for {} images",
                    images.len()
                )));
            }
            Ok(TemplateModel {
                image: images[r].clone(),
                mode,
                source_index: Some(r),
            })
        }
        TemplateMode::ClosestToMean => {
            let mean = mean_image(images)?;
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, img) in images.iter().enumerate() {
                let d = img.l2_sq_distance(&mean)?;
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            Ok(TemplateModel {
                image: images[best].clone(),
                mode,
                source_index: Some(best),
            })
        }
    }
}

/// A displacement field on the template pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    grid: PixelGrid,
    /// `disp[k]` is the (row, col) displacement of template pixel `k`.
    disp: Vec<[f64; 2]>,
}

impl TangentVector {
    pub fn zero(grid: PixelGrid) -> TangentVector {
        TangentVector {
            grid,
            disp: vec![[0.0, 0.0]; grid.len()],
        }
    }

    pub fn grid(&self) -> PixelGrid {
        self.grid
    }

    pub fn displacements(&self) -> &[[f64; 2]] {
        &self.disp
    }

    /// Flatten to `2p` coordinates, `[dr0, dc0, dr1, dc1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.disp.len());
        for d in &self.disp {
            out.push(d[0]);
            out.push(d[1]);
        }
        out
    }

    /// Inverse of [`TangentVector::flatten`].
    pub fn from_flat(grid: PixelGrid, flat: &[f64]) -> Result<TangentVector> {
        if flat.len() != 2 * grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coordinates, got {}",
                2 * grid.len(),
                flat.len()
            )));
        }
        let disp = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Ok(TangentVector { grid, disp })
    }
}

/// Embed one image: displacement field of the exact plan template -> image.
/// Rows that split mass are averaged (barycentric projection); pixels
/// without template mass get zero displacement.
pub fn log_map(image: &ImageHistogram, template: &TemplateModel) -> Result<TangentVector> {
    let plan = solve_exact(template.image(), image)?;
    let map = barycentric_map(&plan);
    let grid = template.grid();
    let disp = (0..grid.len())
        .map(|k| {
            let from = grid.coord(k);
            let to = map.image_of(k);
            [to[0] - from[0], to[1] - from[1]]
        })
        .collect();
    Ok(TangentVector { grid, disp })
}

/// Embed a dataset; parallel over images when the feature is enabled.
pub fn log_map_batch(
    images: &[ImageHistogram],
    template: &TemplateModel,
) -> Result<Vec<TangentVector>> {
    par::try_map_slice(images, |img| log_map(img, template))
}

/// Serial twin of [`log_map_batch`], for benchmarking the parallel gain.
pub fn log_map_batch_serial(
    images: &[ImageHistogram],
    template: &TemplateModel,
) -> Result<Vec<TangentVector>> {
    par::try_map_slice_serial(images, |img| log_map(img, template))
}

/// Push the template forward through `id + v`: each template pixel's mass is
/// moved to its displaced position and split bilinearly over the four
/// surrounding pixels. Destinations are clamped to the grid, the result is
/// renormalized.
pub fn exp_map(v: &TangentVector, template: &TemplateModel) -> Result<ImageHistogram> {
    if v.grid != template.grid() {
        return Err(Error::InvalidArgument(
            "tangent vector and template live on different grids".to_string(),
        ));
    }
    let grid = template.grid();
    let (h, w) = (grid.height(), grid.width());
    let mut acc = vec![0.0f64; grid.len()];
    for (k, &weight) in template.image().weights().iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        let from = grid.coord(k);
        let r = (from[0] + v.disp[k][0]).clamp(0.0, (h - 1) as f64);
        let c = (from[1] + v.disp[k][1]).clamp(0.0, (w - 1) as f64);
        let r0 = r.floor() as usize;
        let c0 = c.floor() as usize;
        let r1 = (r0 + 1).min(h - 1);
        let c1 = (c0 + 1).min(w - 1);
        let fr = r - r0 as f64;
        let fc = c - c0 as f64;
        acc[grid.index(r0, c0)] += weight * (1.0 - fr) * (1.0 - fc);
        acc[grid.index(r0, c1)] += weight * (1.0 - fr) * fc;
        acc[grid.index(r1, c0)] += weight * fr * (1.0 - fc);
        acc[grid.index(r1, c1)] += weight * fr * fc;
    }
    ImageHistogram::from_intensities(grid, &acc)
}

/// Template-weighted inner product of two displacement fields.
pub fn tangent_metric(v: &TangentVector, w: &TangentVector, template: &TemplateModel) -> f64 {
    debug_assert_eq!(v.grid, template.grid());
    debug_assert_eq!(w.grid, template.grid());
    template
        .image()
        .weights()
        .iter()
        .zip(v.disp.iter().zip(&w.disp))
        .map(|(&wt, (a, b))| wt * (a[0] * b[0] + a[1] * b[1]))
        .sum()
}

/// Template-weighted squared norm of `v - w`, the embedded distance.
pub fn tangent_sq_distance(
    v: &TangentVector,
    w: &TangentVector,
    template: &TemplateModel,
) -> f64 {
    template
        .image()
        .weights()
        .iter()
        .zip(v.disp.iter().zip(&w.disp))
        .map(|(&wt, (a, b))| {
            let dr = a[0] - b[0];
            let dc = a[1] - b[1];
            wt * (dr * dr + dc * dc)
        })
        .sum()
}

/// Both sides of the domination inequality for one image pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct W2Bound {
    /// Exact squared Wasserstein distance between the two images.
    pub w2_sq: f64,
    /// Squared template-weighted distance of their embeddings.
    pub embedded_sq: f64,
    /// Whether both template plans were maps. Only then is
    /// `embedded_sq >= w2_sq` guaranteed.
    pub both_maps: bool,
}

/// Compare the exact squared distance of a pair against its embedded
/// distance at the template.
pub fn w2_upper_bound_check(
    i: &ImageHistogram,
    j: &ImageHistogram,
    template: &TemplateModel,
) -> Result<W2Bound> {
    let plan_i = solve_exact(template.image(), i)?;
    let plan_j = solve_exact(template.image(), j)?;
    let both_maps = plan_i.is_map() && plan_j.is_map();
    let vi = log_map(i, template)?;
    let vj = log_map(j, template)?;
    let embedded_sq = tangent_sq_distance(&vi, &vj, template);
    let w2_sq = solve_exact(i, j)?.cost();
    Ok(W2Bound {
        w2_sq,
        embedded_sq,
        both_maps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_uniform_support;

    fn hist(g: PixelGrid, w: &[f64]) -> ImageHistogram {
        ImageHistogram::from_intensities(g, w).unwrap()
    }

    #[test]
    fn template_selection_modes() {
        let g = PixelGrid::new(1, 3).unwrap();
        let imgs = vec![
            hist(g, &[1.0, 0.0, 0.0]),
            hist(g, &[0.0, 1.0, 0.0]),
            hist(g, &[1.0, 1.0, 1.0]),
        ];
        // Mean is (4/9, 4/9, 1/9)-ish; the uniform image is closest.
        let t = select_template(&imgs, TemplateMode::ClosestToMean).unwrap();
        assert_eq!(t.source_index(), Some(2));
        let m = select_template(&imgs, TemplateMode::PixelwiseMean).unwrap();
        assert!((m.image().weights()[0] - 4.0 / 9.0).abs() < 1e-12);
        assert_eq!(m.source_index(), None);
        let e = select_template(&imgs, TemplateMode::Explicit(1)).unwrap();
        assert_eq!(e.image().weights(), imgs[1].weights());
        assert!(select_template(&imgs, TemplateMode::Explicit(3)).is_err());
        assert!(select_template(&[], TemplateMode::ClosestToMean).is_err());
    }

    #[test]
    fn tie_on_distance_keeps_lowest_index() {
        let g = PixelGrid::new(1, 2).unwrap();
        let imgs = vec![
            hist(g, &[1.0, 0.0]),
            hist(g, &[0.0, 1.0]),
        ];
        // Both are equally far from the (.5, .5) mean.
        let t = select_template(&imgs, TemplateMode::ClosestToMean).unwrap();
        assert_eq!(t.source_index(), Some(0));
    }

    #[test]
    fn log_map_of_template_is_zero() {
        let g = PixelGrid::new(4, 4).unwrap();
        let t = select_template(
            &[crate::synth::synth_blob(g, [1.5, 2.0], 1.0, 3).unwrap()],
            TemplateMode::Explicit(0),
        )
        .unwrap();
        let v = log_map(t.image(), &t).unwrap();
        assert_eq!(v, TangentVector::zero(g));
    }

    #[test]
    fn point_mass_displacement_and_norm() {
        let g = PixelGrid::new(6, 6).unwrap();
        let mut tw = vec![0.0; 36];
        tw[g.index(1, 1)] = 1.0;
        let mut iw = vec![0.0; 36];
        iw[g.index(4, 5)] = 1.0;
        let t = TemplateModel::from_image(hist(g, &tw));
        let img = hist(g, &iw);
        let v = log_map(&img, &t).unwrap();
        assert_eq!(v.displacements()[g.index(1, 1)], [3.0, 4.0]);
        assert_eq!(tangent_metric(&v, &v, &t), 25.0);
        // For point masses the embedding is isometric.
        let b = w2_upper_bound_check(t.image(), &img, &t).unwrap();
        assert!(b.both_maps);
        assert_eq!(b.w2_sq, 25.0);
        assert_eq!(b.embedded_sq, 25.0);
    }

    #[test]
    fn flatten_roundtrip_and_order() {
        let g = PixelGrid::new(1, 2).unwrap();
        let v = TangentVector {
            grid: g,
            disp: vec![[1.0, 2.0], [3.0, 4.0]],
        };
        assert_eq!(v.flatten(), vec![1.0, 2.0, 3.0, 4.0]);
        let back = TangentVector::from_flat(g, &v.flatten()).unwrap();
        assert_eq!(back, v);
        assert!(TangentVector::from_flat(g, &[1.0]).is_err());
    }

    #[test]
    fn exp_map_restores_template_and_integer_shifts() {
        let g = PixelGrid::new(5, 5).unwrap();
        let t = TemplateModel::from_image(crate::synth::synth_blob(g, [2.0, 2.0], 1.0, 1).unwrap());
        let back = exp_map(&TangentVector::zero(g), &t).unwrap();
        for (x, y) in back.weights().iter().zip(t.image().weights()) {
            assert!((x - y).abs() < 1e-12);
        }
        // Uniform shift by (0, 2): mass moves two columns right (where it fits).
        let mut tw = vec![0.0; 25];
        tw[g.index(2, 0)] = 1.0;
        tw[g.index(2, 1)] = 1.0;
        let t2 = TemplateModel::from_image(hist(g, &tw));
        let shift = TangentVector {
            grid: g,
            disp: vec![[0.0, 2.0]; 25],
        };
        let moved = exp_map(&shift, &t2).unwrap();
        assert_eq!(moved.weights()[g.index(2, 2)], 0.5);
        assert_eq!(moved.weights()[g.index(2, 3)], 0.5);
    }

    #[test]
    fn exp_map_clamps_at_the_boundary() {
        let g = PixelGrid::new(3, 3).unwrap();
        let mut tw = vec![0.0; 9];
        tw[g.index(1, 2)] = 1.0;
        let t = TemplateModel::from_image(hist(g, &tw));
        let shift = TangentVector {
            grid: g,
            disp: vec![[0.0, 5.0]; 9],
        };
        let moved = exp_map(&shift, &t).unwrap();
        // Everything piles up at the right edge instead of leaving the grid.
        assert_eq!(moved.weights()[g.index(1, 2)], 1.0);
        assert!((moved.total_mass() - 1.0).abs() <= crate::histogram::MASS_TOL);
    }

    #[test]
    fn exp_inverts_log_on_permutation_plans() {
        let g = PixelGrid::new(6, 6).unwrap();
        let t = TemplateModel::from_image(synth_uniform_support(g, 8, 1).unwrap());
        let img = synth_uniform_support(g, 8, 2).unwrap();
        let v = log_map(&img, &t).unwrap();
        let back = exp_map(&v, &t).unwrap();
        for (x, y) in back.weights().iter().zip(img.weights()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn metric_is_bilinear_and_cauchy_schwarz_holds() {
        let g = PixelGrid::new(8, 8).unwrap();
        let t = TemplateModel::from_image(crate::synth::synth_blob(g, [3.5, 3.5], 2.0, 9).unwrap());
        let imgs: Vec<ImageHistogram> = (0..20)
            .map(|s| crate::synth::synth_blob(g, [2.0 + (s % 4) as f64, 3.0], 1.5, s).unwrap())
            .collect();
        let vs = log_map_batch(&imgs, &t).unwrap();
        for a in 0..vs.len() {
            for b in (a + 1)..vs.len() {
                let vv = tangent_metric(&vs[a], &vs[a], &t);
                let ww = tangent_metric(&vs[b], &vs[b], &t);
                let vw = tangent_metric(&vs[a], &vs[b], &t);
                assert!(vw * vw <= vv * ww + 1e-9, "cauchy-schwarz violated");
                assert!((vw - tangent_metric(&vs[b], &vs[a], &t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embedded_distance_dominates_w2_on_map_corpora() {
        let g = PixelGrid::new(8, 8).unwrap();
        let k = 12;
        let t = TemplateModel::from_image(synth_uniform_support(g, k, 100).unwrap());
        for s in 0..20u64 {
            let i = synth_uniform_support(g, k, 200 + s).unwrap();
            let j = synth_uniform_support(g, k, 300 + s).unwrap();
            let b = w2_upper_bound_check(&i, &j, &t).unwrap();
            assert!(b.both_maps, "seed {s}: expected permutation plans");
            assert!(
                b.embedded_sq >= b.w2_sq - 1e-9,
                "seed {s}: embedded {} < w2 {}",
                b.embedded_sq,
                b.w2_sq
            );
        }
    }

    #[test]
    fn batch_parallel_equals_serial() {
        let g = PixelGrid::new(8, 8).unwrap();
        let imgs: Vec<ImageHistogram> = (0..12)
            .map(|s| crate::synth::synth_blob(g, [3.0, 4.0], 1.5, s).unwrap())
            .collect();
        let t = select_template(&imgs, TemplateMode::ClosestToMean).unwrap();
        let a = log_map_batch(&imgs, &t).unwrap();
        let b = log_map_batch_serial(&imgs, &t).unwrap();
        assert_eq!(a, b);
    }
}
