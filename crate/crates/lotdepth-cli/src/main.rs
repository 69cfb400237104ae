//! Command line front end for transport-based image depth statistics.
//!
//! Subcommands cover the full workflow: `synth` writes seeded datasets,
//! `embed` fits the pipeline and saves a model container, and `depth`,
//! `summary`, `quantile`, `test` and `outlier` consume images and/or a
//! container and emit CSV/JSON/PGM artifacts. Every command is a
//! deterministic function of its inputs, flags and `--seed`: re-running
//! writes byte-identical files. Worker threads honour the
//! `LOTDEPTH_THREADS` environment variable.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lotdepth::io::{load_idx_labels, load_images, write_idx_images, write_idx_labels, write_pgm};
use lotdepth::{
    calibrate, classify_batch, dd_plot_export, depth_report, derive_seed, exp_map, five_summary,
    roc_auc, synth::digit_raster, synth::synth_blob, two_sample_test, DepthKey, DepthReport,
    EpsSchedule, EvalMode, ImageHistogram, ModelContainer, Pipeline, PipelineConfig, PixelGrid,
    ReferenceKind, TemplateMode,
};

#[derive(Parser)]
#[command(
    name = "lotdepth",
    version,
    about = "Quantiles, ranks and statistical depths for images",
    long_about = "Treats images as probability measures, embeds them into the tangent \
                  space at a template via optimal transport, reduces with PCA, and runs \
                  center-outward rank/quantile/depth analyses on the latent scores. \
                  All commands are deterministic given their inputs and --seed; set \
                  LOTDEPTH_THREADS to bound worker threads."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset (IDX stack plus labels).
    Synth(SynthArgs),
    /// Fit template + PCA + quantile potentials; save a model container.
    Embed(EmbedArgs),
    /// Score images against a container: depth report as CSV or JSON.
    Depth(DepthArgs),
    /// Five-image depth summary: PGM images plus a CSV of their depths.
    Summary(SummaryArgs),
    /// Latent quantile points on centered circles, with exp-mapped images.
    Quantile(QuantileArgs),
    /// Distribution-free two-sample rank test, plus subsampled rate table.
    Test(TestArgs),
    /// Calibrated two-depth outlier detection with DD-plot/ROC exports.
    Outlier(OutlierArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
enum SynthKind {
    /// Gaussian blobs with seeded center/scale jitter.
    Blobs,
    /// Stroke-rendered digit glyphs with seeded distortion.
    Digits,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
enum RefKindArg {
    /// Spherical uniform reference (required for depths).
    Sphere,
    /// Standard Gaussian reference.
    Gauss,
}

impl From<RefKindArg> for ReferenceKind {
    fn from(k: RefKindArg) -> ReferenceKind {
        match k {
            RefKindArg::Sphere => ReferenceKind::SphericalUniform,
            RefKindArg::Gauss => ReferenceKind::Gaussian,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
enum TemplateArg {
    /// Dataset image closest to the pixelwise mean.
    ClosestToMean,
    /// The renormalized pixelwise mean itself.
    PixelwiseMean,
}

impl From<TemplateArg> for TemplateMode {
    fn from(t: TemplateArg) -> TemplateMode {
        match t {
            TemplateArg::ClosestToMean => TemplateMode::ClosestToMean,
            TemplateArg::PixelwiseMean => TemplateMode::PixelwiseMean,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
enum KeyArg {
    Inner,
    Outer,
}

impl From<KeyArg> for DepthKey {
    fn from(k: KeyArg) -> DepthKey {
        match k {
            KeyArg::Inner => DepthKey::Inner,
            KeyArg::Outer => DepthKey::Outer,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
enum ModeArg {
    /// Argmax over the discrete sample: quantiles are data points.
    Hard,
    /// Softmax-smoothed map at the final fitted epsilon.
    Entropic,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> EvalMode {
        match m {
            ModeArg::Hard => EvalMode::Hard,
            ModeArg::Entropic => EvalMode::Entropic,
        }
    }
}

/// Epsilon-schedule flags; give all three or none (then a default schedule
/// scaled to the latent spread is used).
#[derive(Args, Clone, Serialize, Deserialize)]
struct EpsArgs {
    /// First (largest) regularization stage.
    #[arg(long, requires = "eps_end", requires = "eps_stages")]
    eps_start: Option<f64>,
    /// Last (smallest) regularization stage.
    #[arg(long, requires = "eps_start")]
    eps_end: Option<f64>,
    /// Number of geometric stages from start to end.
    #[arg(long, requires = "eps_start")]
    eps_stages: Option<usize>,
}

impl EpsArgs {
    fn schedule(&self) -> Result<Option<EpsSchedule>> {
        match (self.eps_start, self.eps_end, self.eps_stages) {
            (None, None, None) => Ok(None),
            (Some(start), Some(end), Some(stages)) => {
                Ok(Some(EpsSchedule::geometric(start, end, stages)?))
            }
            _ => bail!("--eps-start, --eps-end and --eps-stages go together"),
        }
    }
}

#[derive(Args, Serialize, Deserialize)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Blobs)]
    kind: SynthKind,
    /// Images to generate (per class for digits).
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Digit classes to render, comma separated (digits only).
    #[arg(long, default_value = "2,3")]
    classes: String,
    /// Constant shift of every blob center, in pixels (blobs only).
    #[arg(long, default_value_t = 0.0)]
    shift_x: f64,
    #[arg(long, default_value_t = 0.0)]
    shift_y: f64,
    /// Trailing fraction of blobs drawn displaced and widened, labeled 1.
    #[arg(long, default_value_t = 0.0)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for images.idx and labels.idx.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
struct EmbedArgs {
    /// Image dataset: .idx stack, single .pgm/.csv, or a directory.
    #[arg(long)]
    input: PathBuf,
    /// Latent dimension of the PCA stage.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, value_enum, default_value_t = TemplateArg::ClosestToMean)]
    template: TemplateArg,
    #[arg(long, value_enum, default_value_t = RefKindArg::Sphere)]
    ref_kind: RefKindArg,
    /// Reference sample size; 0 matches the dataset size.
    #[arg(long, default_value_t = 0)]
    ref_size: usize,
    #[command(flatten)]
    eps: EpsArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Container file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
struct DepthArgs {
    /// Model container written by `embed`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Report file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
struct SummaryArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Which depth orders the images.
    #[arg(long, value_enum, default_value_t = KeyArg::Inner)]
    key: KeyArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
struct QuantileArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directions per circle.
    #[arg(long, default_value_t = 8)]
    angles: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Hard)]
    mode: ModeArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
struct TestArgs {
    /// First sample (image dataset path).
    #[arg(long)]
    input_a: PathBuf,
    /// Second sample (image dataset path).
    #[arg(long)]
    input_b: PathBuf,
    /// Latent dimension (degrees of freedom of the test).
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subsampled repetitions for the rejection-rate table; 0 skips it.
    #[arg(long, default_value_t = 0)]
    reps: usize,
    /// Subsample size per side; defaults to half the smaller dataset.
    #[arg(long)]
    subsample: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
struct OutlierArgs {
    /// Training images for the pipeline fit.
    #[arg(long)]
    train: PathBuf,
    /// Held-out images that set the depth thresholds.
    #[arg(long)]
    calibrate: PathBuf,
    /// Images to classify.
    #[arg(long)]
    input: PathBuf,
    /// Optional 0/1 outlier flags for ROC/AUC: .idx labels or one flag
    /// per text line.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Calibration false-alarm budget per depth.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Reference sample size; 0 matches the training size.
    #[arg(long, default_value_t = 0)]
    ref_size: usize,
    #[command(flatten)]
    eps: EpsArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads();
    match Cli::parse().command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Embed(a) => cmd_embed(&a),
        Command::Depth(a) => cmd_depth(&a),
        Command::Summary(a) => cmd_summary(&a),
        Command::Quantile(a) => cmd_quantile(&a),
        Command::Test(a) => cmd_test(&a),
        Command::Outlier(a) => cmd_outlier(&a),
    }
}

fn configure_threads() {
    let Ok(raw) = std::env::var("LOTDEPTH_THREADS") else {
        return;
    };
    match raw.parse::<usize>() {
        Ok(k) if k >= 1 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
                log::debug!("thread pool already configured: {e}");
            }
        }
        _ => log::warn!("ignoring LOTDEPTH_THREADS={raw:?}: not a positive integer"),
    }
}

/// Pretty JSON with a trailing newline; byte-deterministic for fixed values.
fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Vec<ImageHistogram>> {
    let images =
        load_images(path).with_context(|| format!("loading images from {}", path.display()))?;
    Ok(images)
}

fn load_container(path: &Path) -> Result<ModelContainer> {
    ModelContainer::load(path)
        .with_context(|| format!("loading model container {} (run `embed` first?)", path.display()))
}

/// Rescale weights to 0..=255 for IDX/PGM byte frames.
fn quantize(image: &ImageHistogram) -> Vec<u8> {
    let peak = image
        .weights()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    image
        .weights()
        .iter()
        .map(|&v| (255.0 * v / peak).round() as u8)
        .collect()
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    if args.count == 0 {
        bail!("--count must be positive");
    }
    let (frames, labels, rows, cols) = match args.kind {
        SynthKind::Blobs => synth_blob_set(args)?,
        SynthKind::Digits => synth_digit_set(args)?,
    };
    write_idx_images(args.out.join("images.idx"), rows, cols, &frames)?;
    write_idx_labels(args.out.join("labels.idx"), &labels)?;
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    write_text(&args.out.join("labels.txt"), &text)?;
    write_json(&args.out.join("run_config.json"), args)?;
    println!(
        "wrote {} images ({rows}x{cols}) to {}",
        frames.len(),
        args.out.display()
    );
    Ok(())
}

fn synth_blob_set(args: &SynthArgs) -> Result<(Vec<Vec<u8>>, Vec<u8>, usize, usize)> {
    use rand::Rng;
    let grid = PixelGrid::new(args.height, args.width)?;
    let base = [
        (args.height as f64 - 1.0) / 2.0 + args.shift_y,
        (args.width as f64 - 1.0) / 2.0 + args.shift_x,
    ];
    if !(0.0..=0.5).contains(&args.outlier_fraction) {
        bail!("--outlier-fraction outside [0, 0.5]");
    }
    let n_out = (args.outlier_fraction * args.count as f64).ceil() as usize;
    let mut frames = Vec::with_capacity(args.count);
    let mut labels = Vec::with_capacity(args.count);
    for k in 0..args.count {
        let sk = derive_seed(args.seed, k as u64);
        let mut rng = lotdepth::seeding::rng_for(sk, 0);
        let jitter = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        let mut center = [base[0] + jitter[0], base[1] + jitter[1]];
        let mut scale = 1.2 * rng.random_range(0.85..1.15);
        let outlier = k >= args.count - n_out;
        if outlier {
            // Displaced towards a corner and widened: off-distribution in
            // both location (inner) and shape (outer).
            center[0] -= args.height as f64 * 0.27;
            center[1] += args.width as f64 * 0.27;
            scale *= 1.6;
        }
        let img = synth_blob(grid, center, scale, derive_seed(sk, 1))?;
        frames.push(quantize(&img));
        labels.push(u8::from(outlier));
    }
    Ok((frames, labels, args.height, args.width))
}

fn synth_digit_set(args: &SynthArgs) -> Result<(Vec<Vec<u8>>, Vec<u8>, usize, usize)> {
    if args.height != args.width {
        bail!("digit glyphs need a square grid, got {}x{}", args.height, args.width);
    }
    let mut classes = Vec::new();
    for tok in args.classes.split(',') {
        let c: u8 = tok
            .trim()
            .parse()
            .with_context(|| format!("bad digit class {tok:?}"))?;
        if c > 9 {
            bail!("digit class {c} outside 0..=9");
        }
        classes.push(c);
    }
    if classes.is_empty() {
        bail!("--classes is empty");
    }
    let mut frames = Vec::with_capacity(classes.len() * args.count);
    let mut labels = Vec::with_capacity(classes.len() * args.count);
    for &c in &classes {
        let class_seed = derive_seed(args.seed, c as u64);
        for k in 0..args.count {
            frames.push(digit_raster(args.height, c, derive_seed(class_seed, k as u64)));
            labels.push(c);
        }
    }
    Ok((frames, labels, args.height, args.width))
}

fn cmd_embed(args: &EmbedArgs) -> Result<()> {
    let images = load_dataset(&args.input)?;
    let config = PipelineConfig {
        template_mode: args.template.into(),
        dim: args.dim,
        reference_kind: args.ref_kind.into(),
        reference_size: args.ref_size,
        schedule: args.eps.schedule()?,
        seed: args.seed,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::fit(&images, &config)?;
    let embeddings = lotdepth::log_map_batch(&images, pipeline.template())?;
    let latents = embeddings
        .iter()
        .map(|v| pipeline.pca().project(v))
        .collect::<lotdepth::Result<Vec<_>>>()?;
    let ratios = pipeline.pca().explained_variance_ratio();
    let container = ModelContainer::new(pipeline, embeddings, latents)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    container.save(&args.out)?;
    for (k, r) in ratios.iter().enumerate() {
        println!("component {k}: explained variance ratio {r:.6}");
    }
    println!(
        "total explained variance {:.6}; container written to {}",
        ratios.iter().sum::<f64>(),
        args.out.display()
    );
    Ok(())
}

fn depth_csv(report: &DepthReport, d: usize) -> String {
    let mut out = String::from("id,inner,outer,residual");
    for j in 0..d {
        out.push_str(&format!(",latent_{j}"));
    }
    for j in 0..d {
        out.push_str(&format!(",rank_{j}"));
    }
    out.push('\n');
    for r in &report.records {
        out.push_str(&format!("{},{:?},{:?},{:?}", r.id, r.inner, r.outer, r.residual));
        for v in &r.latent {
            out.push_str(&format!(",{v:?}"));
        }
        for v in &r.rank {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

fn cmd_depth(args: &DepthArgs) -> Result<()> {
    let container = load_container(&args.model)?;
    let images = load_dataset(&args.input)?;
    let pipeline = container.into_pipeline();
    let report = depth_report(&pipeline, &images)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    match args.format {
        FormatArg::Csv => write_text(&args.out, &depth_csv(&report, pipeline.pca().dim()))?,
        FormatArg::Json => write_json(&args.out, &report)?,
    }
    println!("scored {} images into {}", report.len(), args.out.display());
    Ok(())
}

/// Order-statistic positions (1-based) reported by the five-image summary.
fn summary_positions(n: usize) -> [usize; 5] {
    [1, n.div_ceil(4), n.div_ceil(2), (3 * n).div_ceil(4), n]
}

fn cmd_summary(args: &SummaryArgs) -> Result<()> {
    let container = load_container(&args.model)?;
    let images = load_dataset(&args.input)?;
    let pipeline = container.into_pipeline();
    let report = depth_report(&pipeline, &images)?;
    let ids = five_summary(&report.records, args.key.into())?;
    let positions = summary_positions(report.len());
    ensure_dir(&args.out)?;
    let mut csv = String::from("position,id,inner,outer\n");
    for (&pos, &id) in positions.iter().zip(&ids) {
        let rec = &report.records[id];
        csv.push_str(&format!("{pos},{id},{:?},{:?}\n", rec.inner, rec.outer));
        write_pgm(args.out.join(format!("summary_p{pos:04}.pgm")), &images[id])?;
    }
    write_text(&args.out.join("summary.csv"), &csv)?;
    write_json(&args.out.join("run_config.json"), args)?;
    println!(
        "five-image summary at positions {:?} written to {}",
        positions,
        args.out.display()
    );
    Ok(())
}

fn cmd_quantile(args: &QuantileArgs) -> Result<()> {
    let container = load_container(&args.model)?;
    let pipeline = container.into_pipeline();
    let quantiles = pipeline.quantiles();
    if quantiles.dim() != 2 {
        bail!(
            "circle layout needs a 2-dimensional latent space, model has {}",
            quantiles.dim()
        );
    }
    if args.angles == 0 {
        bail!("--angles must be positive");
    }
    ensure_dir(&args.out)?;
    let mode: EvalMode = args.mode.into();
    let mut csv = String::from("radius,angle,theta,u_0,u_1,q_0,q_1\n");
    let mut emit = |u: [f64; 2], radius: f64, angle: usize, theta: f64, name: String| -> Result<()> {
        let q = quantiles.quantile(&u, mode)?;
        let tangent = pipeline.pca().reconstruct(&q)?;
        let image = exp_map(&tangent, pipeline.template())?;
        write_pgm(args.out.join(name), &image)?;
        csv.push_str(&format!(
            "{radius:?},{angle},{theta:?},{:?},{:?},{:?},{:?}\n",
            u[0], u[1], q[0], q[1]
        ));
        Ok(())
    };
    emit([0.0, 0.0], 0.0, 0, 0.0, "quantile_center.pgm".to_string())?;
    for &radius in &[0.25, 0.5, 0.75] {
        for angle in 0..args.angles {
            let theta = std::f64::consts::TAU * angle as f64 / args.angles as f64;
            let u = [radius * theta.cos(), radius * theta.sin()];
            let name = format!("quantile_r{:03}_a{angle:02}.pgm", (radius * 100.0) as u32);
            emit(u, radius, angle, theta, name)?;
        }
    }
    write_text(&args.out.join("quantile.csv"), &csv)?;
    write_json(&args.out.join("run_config.json"), args)?;
    println!(
        "{} quantile points written to {}",
        1 + 3 * args.angles,
        args.out.display()
    );
    Ok(())
}

/// First `k` indices of a seeded shuffle of `0..n`.
fn subsample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut lotdepth::seeding::rng_for(seed, 0x5b5));
    order.truncate(k);
    order
}

fn pick(images: &[ImageHistogram], idx: &[usize]) -> Vec<ImageHistogram> {
    idx.iter().map(|&i| images[i].clone()).collect()
}

fn cmd_test(args: &TestArgs) -> Result<()> {
    let a = load_dataset(&args.input_a)?;
    let b = load_dataset(&args.input_b)?;
    let result = two_sample_test(&a, &b, args.dim, args.alpha, args.seed)?;
    ensure_dir(&args.out)?;
    write_json(&args.out.join("test_result.json"), &result)?;
    println!(
        "T = {:.6}, chi-squared({}) critical value {:.6} at alpha {}: {}",
        result.statistic,
        result.dof,
        result.critical_value,
        result.alpha,
        if result.reject { "REJECT" } else { "no rejection" }
    );
    if args.reps > 0 {
        let half = args.subsample.unwrap_or(a.len().min(b.len()) / 2);
        if half < 2 {
            bail!("subsample size {half} too small; need at least 2 per side");
        }
        if 2 * half > a.len() || half > b.len() {
            bail!(
                "subsample size {half} too large for datasets of {} and {}",
                a.len(),
                b.len()
            );
        }
        // Null row: disjoint halves of A. Alternative row: A half vs B half.
        let mut null_rejects = 0usize;
        let mut alt_rejects = 0usize;
        for rep in 0..args.reps {
            let rep_seed = derive_seed(args.seed, 1 + rep as u64);
            let ia = subsample_indices(a.len(), 2 * half, derive_seed(rep_seed, 1));
            let null = two_sample_test(
                &pick(&a, &ia[..half]),
                &pick(&a, &ia[half..]),
                args.dim,
                args.alpha,
                derive_seed(rep_seed, 3),
            )?;
            null_rejects += usize::from(null.reject);
            let ja = subsample_indices(a.len(), half, derive_seed(rep_seed, 4));
            let jb = subsample_indices(b.len(), half, derive_seed(rep_seed, 5));
            let alt = two_sample_test(
                &pick(&a, &ja),
                &pick(&b, &jb),
                args.dim,
                args.alpha,
                derive_seed(rep_seed, 6),
            )?;
            alt_rejects += usize::from(alt.reject);
        }
        let table = format!(
            "pair,m,n,d,alpha,rate\nA-vs-A,{half},{half},{},{:?},{:?}\nA-vs-B,{half},{half},{},{:?},{:?}\n",
            args.dim,
            args.alpha,
            null_rejects as f64 / args.reps as f64,
            args.dim,
            args.alpha,
            alt_rejects as f64 / args.reps as f64,
        );
        write_text(&args.out.join("rejection_rates.csv"), &table)?;
        println!(
            "rejection rates over {} subsampled repetitions: A-vs-A {:.3}, A-vs-B {:.3}",
            args.reps,
            null_rejects as f64 / args.reps as f64,
            alt_rejects as f64 / args.reps as f64
        );
    }
    write_json(&args.out.join("run_config.json"), args)?;
    Ok(())
}

fn load_flags(path: &Path, expect: usize) -> Result<Vec<bool>> {
    let flags: Vec<bool> = if path.extension().and_then(|e| e.to_str()) == Some("idx") {
        load_idx_labels(path)?.iter().map(|&b| b != 0).collect()
    } else {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut flags = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "0" => flags.push(false),
                "1" => flags.push(true),
                other => bail!("line {}: flag {other:?} is not 0 or 1", ln + 1),
            }
        }
        flags
    };
    if flags.len() != expect {
        bail!("{} flags for {} images", flags.len(), expect);
    }
    Ok(flags)
}

#[derive(Serialize)]
struct VerdictRow {
    id: usize,
    is_outlier: bool,
    inner: f64,
    outer: f64,
}

#[derive(Serialize)]
struct OutlierReport {
    alpha: f64,
    inner_threshold: f64,
    outer_threshold: f64,
    train_size: usize,
    calibration_size: usize,
    total: usize,
    flagged: usize,
    /// Present when ground-truth labels were supplied.
    auc: Option<f64>,
}

fn cmd_outlier(args: &OutlierArgs) -> Result<()> {
    let train = load_dataset(&args.train)?;
    let cal = load_dataset(&args.calibrate)?;
    let queries = load_dataset(&args.input)?;
    let flags = args
        .labels
        .as_deref()
        .map(|p| load_flags(p, queries.len()))
        .transpose()?;
    let config = PipelineConfig {
        dim: args.dim,
        reference_size: args.ref_size,
        schedule: args.eps.schedule()?,
        seed: args.seed,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::fit(&train, &config)?;
    let model = calibrate(&cal, pipeline, args.alpha)?;
    let verdicts = classify_batch(&queries, &model)?;
    ensure_dir(&args.out)?;

    let rows: Vec<VerdictRow> = verdicts
        .iter()
        .enumerate()
        .map(|(id, v)| VerdictRow {
            id,
            is_outlier: v.is_outlier,
            inner: v.inner,
            outer: v.outer,
        })
        .collect();
    write_json(&args.out.join("verdicts.json"), &rows)?;

    let labels: Option<Vec<String>> = flags.as_ref().map(|f| {
        f.iter()
            .map(|&o| if o { "outlier" } else { "inlier" }.to_string())
            .collect()
    });
    dd_plot_export(
        &queries,
        &model,
        labels.as_deref(),
        &args.out.join("dd_plot.csv"),
    )?;

    let auc = match &flags {
        Some(f) => {
            let scores: Vec<(f64, bool)> = queries
                .iter()
                .zip(f)
                .map(|(img, &o)| Ok((model.combined_score(img)?, o)))
                .collect::<lotdepth::Result<_>>()?;
            let (points, auc) = roc_auc(&scores)?;
            let mut csv = String::from("fpr,tpr,threshold\n");
            for p in &points {
                csv.push_str(&format!("{:?},{:?},{:?}\n", p.fpr, p.tpr, p.threshold));
            }
            write_text(&args.out.join("roc.csv"), &csv)?;
            Some(auc)
        }
        None => None,
    };

    let report = OutlierReport {
        alpha: args.alpha,
        inner_threshold: model.inner_threshold(),
        outer_threshold: model.outer_threshold(),
        train_size: train.len(),
        calibration_size: cal.len(),
        total: queries.len(),
        flagged: verdicts.iter().filter(|v| v.is_outlier).count(),
        auc,
    };
    write_json(&args.out.join("outlier_report.json"), &report)?;
    write_json(&args.out.join("run_config.json"), args)?;
    println!(
        "flagged {}/{} images{}; report in {}",
        report.flagged,
        report.total,
        match report.auc {
            Some(a) => format!(", AUC {a:.4}"),
            None => String::new(),
        },
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_positions_match_the_documented_examples() {
        assert_eq!(summary_positions(100), [1, 25, 50, 75, 100]);
        assert_eq!(summary_positions(5), [1, 2, 3, 4, 5]);
        assert_eq!(summary_positions(7), [1, 2, 4, 6, 7]);
    }

    #[test]
    fn subsampling_is_deterministic_and_disjoint() {
        let a = subsample_indices(20, 10, 42);
        let b = subsample_indices(20, 10, 42);
        assert_eq!(a, b);
        let c = subsample_indices(20, 20, 7);
        let mut sorted = c.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn eps_args_build_the_requested_schedule() {
        let none = EpsArgs {
            eps_start: None,
            eps_end: None,
            eps_stages: None,
        };
        assert!(none.schedule().unwrap().is_none());
        let some = EpsArgs {
            eps_start: Some(1.0),
            eps_end: Some(0.01),
            eps_stages: Some(5),
        };
        let s = some.schedule().unwrap().unwrap();
        assert_eq!(s.values().len(), 5);
        assert!((s.values()[0] - 1.0).abs() < 1e-12);
        assert!((s.final_epsilon() - 0.01).abs() < 1e-12);
        let partial = EpsArgs {
            eps_start: Some(1.0),
            eps_end: None,
            eps_stages: None,
        };
        assert!(partial.schedule().is_err());
    }

    #[test]
    fn run_configs_roundtrip_through_json() {
        let args = TestArgs {
            input_a: PathBuf::from("a.idx"),
            input_b: PathBuf::from("b.idx"),
            dim: 3,
            alpha: 0.05,
            seed: 9,
            reps: 4,
            subsample: Some(12),
            out: PathBuf::from("out"),
        };
        let json = serde_json::to_string(&args).unwrap();
        let back: TestArgs = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}
