//! Quantiles, ranks and statistical depths for images.
//!
//! Images are treated as discrete probability measures on a pixel grid and
//! compared with the quadratic Wasserstein distance. A dataset is embedded
//! into the tangent space at a template image (one exact transport solve per
//! image), reduced with PCA, and the low-dimensional scores are analysed
//! with center-outward ranks and quantiles driven by entropic optimal
//! transport towards a reference distribution. On top of that sit two
//! depth notions (inner: depth of the score; outer: distance to the score
//! subspace), a distribution-free two-sample rank test, and a depth-based
//! outlier detector.
//!
//! All randomness flows from explicit `u64` seeds; results are reproducible
//! across runs and across the `parallel` feature (on by default), which only
//! changes how per-item work is scheduled, never the arithmetic.

pub mod container;
pub mod depth;
pub mod error;
pub mod grid;
pub mod histogram;
pub mod io;
pub mod lot;
pub mod ot;
pub mod outlier;
pub mod par;
pub mod pca;
pub mod quantiles;
pub mod seeding;
pub mod synth;

pub use error::{Error, Result};
pub use grid::PixelGrid;
pub use histogram::ImageHistogram;
pub use lot::{log_map, log_map_batch, log_map_batch_serial, select_template};
pub use lot::{exp_map, tangent_metric, w2_upper_bound_check};
pub use lot::{TangentVector, TemplateMode, TemplateModel, W2Bound};
pub use ot::{barycentric_map, solve_entropic, solve_entropic_scheduled, solve_exact, wasserstein};
pub use ot::{MongeMapGrid, PlanEntry, TransportPlan};
pub use pca::{PcaModel, ScoreConvention};
pub use quantiles::{
    fit_potentials, fit_potentials_with, sample_reference, tukey_depth_spherical, EpsSchedule,
    EvalMode, FitOptions, QuantileModel, ReferenceKind, ReferenceSample,
};
pub use depth::{
    depth_report, five_summary, inner_depth, inner_depth_hard, order_statistics, outer_depth,
    DepthKey, DepthRecord, DepthReport, Pipeline, PipelineConfig,
};
pub use rank_test::{
    chi2_quantile, latent_rejection_rate_experiment, latent_two_sample_test,
    rejection_rate_experiment, two_sample_test, TestResult,
};
pub use outlier::{
    calibrate, classify, classify_batch, dd_plot_export, depth_threshold, roc_auc, OutlierModel,
    RocPoint, Verdict,
};
pub use container::{ModelContainer, CONTAINER_VERSION, FLATTEN_ORDER};
pub use io::{load_idx_images, load_idx_labels, load_images, write_idx_images, write_pgm};
pub use seeding::derive_seed;
