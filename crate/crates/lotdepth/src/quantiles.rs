//! Center-outward ranks and quantiles by entropic transport to a reference.
//!
//! A dataset `x_1..x_n` in R^d is coupled to `M` seeded reference draws
//! `u_1..u_M` (both uniformly weighted) under the cost `-<u, x>`; the
//! regularized dual potentials `psi` (reference side) and `psi_star` (data
//! side) then define
//!
//! * rank(x)     = argmax_j <u_j, x> - psi(u_j)   (hard), or the softmax
//!   average of the `u_j` with the same exponents (entropic);
//! * quantile(u) = argmax_i <u, x_i> - psi_star(x_i), symmetrically.
//!
//! Potentials are fitted over a decreasing epsilon schedule with warm
//! starts; all arithmetic is in the log domain. The fit ends with a data-
//! side update, which makes the Fenchel-Young inequality
//! `psi(u_j) + psi_star(x_i) >= <u_j, x_i> - eps_final * ln(M)` exact.
//! `psi` is normalized to mean zero (with the opposite shift on `psi_star`),
//! pinning the additive gauge freedom.
//!
//! The norm of the rank feeds halfspace depth: under the spherical uniform
//! reference, the depth of a point at distance `r` from the origin is
//! `D(r) = integral_r^1 s_d(r/rho) drho` with `s_d(t)` the mass of the
//! spherical cap `{phi_1 >= t}`; see [`tukey_depth_spherical`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::par;
use crate::seeding::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ReferenceKind {
    /// `R * Phi` with `R ~ U[0,1]` and `Phi` uniform on the unit sphere:
    /// the norm itself is uniform, so quantile regions `{|u| <= alpha}`
    /// carry exactly `alpha` of the mass.
    #[default]
    SphericalUniform,
    /// Standard normal in each coordinate.
    Gaussian,
}

/// Seeded reference draws, `m x dim` row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSample {
    kind: ReferenceKind,
    dim: usize,
    points: Vec<f64>,
    seed: u64,
}

impl ReferenceSample {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> ReferenceKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }
}

/// Draw `m` reference points in dimension `dim`.
pub fn sample_reference(
    m: usize,
    dim: usize,
    kind: ReferenceKind,
    seed: u64,
) -> Result<ReferenceSample> {
    if m == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "reference size {m} and dimension {dim} must be positive"
        )));
    }
    let mut rng = rng_for(seed, 0x0ef5);
    let mut points = Vec::with_capacity(m * dim);
    for _ in 0..m {
        match kind {
            ReferenceKind::Gaussian => {
                for _ in 0..dim {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    points.push(g);
                }
            }
            ReferenceKind::SphericalUniform => {
                // Direction from normalized Gaussians, radius uniform.
                let start = points.len();
                let mut norm_sq = 0.0;
                for _ in 0..dim {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    norm_sq += g * g;
                    points.push(g);
                }
                let r: f64 = rng.random::<f64>();
                let scale = r / norm_sq.sqrt().max(f64::MIN_POSITIVE);
                for v in points[start..].iter_mut() {
                    *v *= scale;
                }
            }
        }
    }
    Ok(ReferenceSample {
        kind,
        dim,
        points,
        seed,
    })
}

/// Strictly decreasing positive epsilon values, one fitting stage each.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsSchedule {
    values: Vec<f64>,
}

impl EpsSchedule {
    pub fn from_values(values: Vec<f64>) -> Result<EpsSchedule> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty epsilon schedule".to_string()));
        }
        for w in values.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::InvalidArgument(format!(
                    "epsilon schedule must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if !values.iter().all(|&e| e.is_finite() && e > 0.0) {
            return Err(Error::InvalidArgument(
                "epsilon values must be positive and finite".to_string(),
            ));
        }
        Ok(EpsSchedule { values })
    }

    /// Geometric interpolation from `start` down to `end` in `stages` steps.
    pub fn geometric(start: f64, end: f64, stages: usize) -> Result<EpsSchedule> {
        if stages == 0 {
            return Err(Error::InvalidArgument("need at least one stage".to_string()));
        }
        if !(end > 0.0 && start >= end && start.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need start >= end > 0, got start {start}, end {end}"
            )));
        }
        if stages == 1 || start == end {
            return EpsSchedule::from_values(vec![end]);
        }
        let ratio = (end / start).powf(1.0 / (stages - 1) as f64);
        let mut values = Vec::with_capacity(stages);
        let mut e = start;
        for k in 0..stages {
            values.push(if k + 1 == stages { end } else { e });
            e *= ratio;
        }
        EpsSchedule::from_values(values)
    }

    /// Default schedule for a dataset: 10 geometric stages from `1.0` down
    /// to `0.001`, both scaled by the mean squared data norm.
    pub fn default_for_data(data: &[Vec<f64>]) -> Result<EpsSchedule> {
        let n = data.len().max(1);
        let sigma2 = data
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        let scale = sigma2.max(1e-9);
        EpsSchedule::geometric(scale, 1e-3 * scale, 10)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn final_epsilon(&self) -> f64 {
        *self.values.last().expect("schedule is nonempty")
    }
}

/// Knobs for [`fit_potentials_with`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Iteration budget per epsilon stage.
    pub max_iter_per_stage: usize,
    /// Early-exit L1 error on the reference marginal.
    pub stage_tol: f64,
    /// Residual error above this at the end of the final stage is a hard
    /// failure.
    pub fail_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter_per_stage: 400,
            stage_tol: 1e-8,
            fail_tol: 1e-3,
        }
    }
}

/// How rank and quantile evaluations combine the potentials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Argmax over the fitted support; piecewise constant.
    Hard,
    /// Softmax average at the final epsilon; continuous.
    Entropic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileModel {
    reference: ReferenceSample,
    /// Data points, `n x dim` row-major.
    data: Vec<f64>,
    n: usize,
    /// Reference-side potential, mean zero.
    psi: Vec<f64>,
    /// Data-side potential.
    psi_star: Vec<f64>,
    schedule: EpsSchedule,
    /// L1 error of the reference marginal at the accepted potentials.
    marginal_error: f64,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Streaming logsumexp: one pass, no allocation.
struct StreamLse {
    max: f64,
    sum: f64,
}

impl StreamLse {
    fn new() -> Self {
        StreamLse {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    #[inline]
    fn push(&mut self, t: f64) {
        if t <= self.max {
            self.sum += (t - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - t).exp() + 1.0;
            self.max = t;
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Fit with default options; see [`fit_potentials_with`].
pub fn fit_potentials(
    data: &[Vec<f64>],
    reference: ReferenceSample,
    schedule: EpsSchedule,
) -> Result<QuantileModel> {
    fit_potentials_with(data, reference, schedule, FitOptions::default())
}

/// Fit entropic dual potentials between `data` and `reference` over the
/// epsilon schedule, warm-starting each stage from the previous one.
pub fn fit_potentials_with(
    data: &[Vec<f64>],
    reference: ReferenceSample,
    schedule: EpsSchedule,
    opts: FitOptions,
) -> Result<QuantileModel> {
    let n = data.len();
    let d = reference.dim();
    if n == 0 {
        return Err(Error::Degenerate("empty dataset".to_string()));
    }
    for (i, x) in data.iter().enumerate() {
        if x.len() != d {
            return Err(Error::InvalidArgument(format!(
                "data point {i} has dimension {}, reference has {d}",
                x.len()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("data point {i} is not finite")));
        }
    }
    let m = reference.len();
    let data_flat: Vec<f64> = data.iter().flatten().copied().collect();
    let ref_flat = reference.points_flat();
    let ln_m = (m as f64).ln();
    let ln_n = (n as f64).ln();

    // Log-domain potentials with mass-included coupling
    // pi_ji = (1/m)(1/n) exp((f_j + g_i - C_ji)/eps), C_ji = -<u_j, x_i>.
    let mut f = vec![0.0f64; m];
    let mut g = vec![0.0f64; n];
    let mut err = f64::INFINITY;
    let stages = schedule.values().len();
    for (stage, &eps) in schedule.values().iter().enumerate() {
        let mut iters = 0usize;
        loop {
            iters += 1;
            // Reference-side update: rows become exact.
            par::for_each_mut(&mut f, |j, fj| {
                let u = &ref_flat[j * d..(j + 1) * d];
                let mut lse = StreamLse::new();
                for i in 0..n {
                    let x = &data_flat[i * d..(i + 1) * d];
                    lse.push((g[i] + dot(u, x)) / eps);
                }
                *fj = -eps * (lse.value() - ln_n);
            });
            // Data-side update: columns become exact.
            par::for_each_mut(&mut g, |i, gi| {
                let x = &data_flat[i * d..(i + 1) * d];
                let mut lse = StreamLse::new();
                for j in 0..m {
                    let u = &ref_flat[j * d..(j + 1) * d];
                    lse.push((f[j] + dot(u, x)) / eps);
                }
                *gi = -eps * (lse.value() - ln_m);
            });
            // Row (reference) marginal error.
            if iters % 4 == 0 || iters >= opts.max_iter_per_stage {
                let row_errs = par::map_indices(m, |j| {
                    let u = &ref_flat[j * d..(j + 1) * d];
                    let mut lse = StreamLse::new();
                    for i in 0..n {
                        let x = &data_flat[i * d..(i + 1) * d];
                        lse.push((f[j] + g[i] + dot(u, x)) / eps);
                    }
                    ((lse.value() - ln_n).exp() - 1.0).abs() / m as f64
                });
                err = row_errs.iter().sum();
                if !err.is_finite() {
                    return Err(Error::Numerical(format!(
                        "potential fit diverged at stage {stage} (epsilon {eps:.3e})"
                    )));
                }
                if err < opts.stage_tol || iters >= opts.max_iter_per_stage {
                    break;
                }
            }
        }
        if err >= opts.stage_tol {
            log::debug!(
                "stage {stage} (epsilon {eps:.3e}) stopped at marginal error {err:.3e} \
                 after {iters} iterations"
            );
        }
        if stage + 1 == stages && err >= opts.fail_tol {
            return Err(Error::NoConvergence {
                context: format!("potential fit, final stage {stage} at epsilon {eps:.3e}"),
                gap: err,
                iterations: iters,
            });
        }
    }

    // Gauge: psi = -f has mean zero; psi_star = -g absorbs the shift.
    let mut psi: Vec<f64> = f.iter().map(|&v| -v).collect();
    let shift = psi.iter().sum::<f64>() / m as f64;
    for p in psi.iter_mut() {
        *p -= shift;
    }
    let psi_star: Vec<f64> = g.iter().map(|&v| -v + shift).collect();

    Ok(QuantileModel {
        reference,
        data: data_flat,
        n,
        psi,
        psi_star,
        schedule,
        marginal_error: err,
    })
}

impl QuantileModel {
    pub fn reference(&self) -> &ReferenceSample {
        &self.reference
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn data_point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn psi_star(&self) -> &[f64] {
        &self.psi_star
    }

    pub fn final_epsilon(&self) -> f64 {
        self.schedule.final_epsilon()
    }

    pub fn schedule(&self) -> &EpsSchedule {
        &self.schedule
    }

    pub fn marginal_error(&self) -> f64 {
        self.marginal_error
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "point has dimension {}, model has {}",
                x.len(),
                self.dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("point is not finite".to_string()));
        }
        Ok(())
    }

    /// Index of the hard rank: argmax over reference points, lowest index
    /// on exact ties.
    pub fn hard_rank_index(&self, x: &[f64]) -> Result<usize> {
        self.check_point(x)?;
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for j in 0..self.reference.len() {
            let v = dot(self.reference.point(j), x) - self.psi[j];
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        Ok(best)
    }

    /// Center-outward rank of `x`; lies in the reference's support hull.
    pub fn rank(&self, x: &[f64], mode: EvalMode) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let d = self.dim();
        match mode {
            EvalMode::Hard => Ok(self.reference.point(self.hard_rank_index(x)?).to_vec()),
            EvalMode::Entropic => {
                let eps = self.final_epsilon();
                let mut lse = StreamLse::new();
                for j in 0..self.reference.len() {
                    lse.push((dot(self.reference.point(j), x) - self.psi[j]) / eps);
                }
                let denom = lse.value();
                let mut out = vec![0.0f64; d];
                for j in 0..self.reference.len() {
                    let w =
                        ((dot(self.reference.point(j), x) - self.psi[j]) / eps - denom).exp();
                    for (o, u) in out.iter_mut().zip(self.reference.point(j)) {
                        *o += w * u;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Index of the hard quantile: argmax over data points.
    pub fn hard_quantile_index(&self, u: &[f64]) -> Result<usize> {
        self.check_quantile_arg(u)?;
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for i in 0..self.n {
            let v = dot(self.data_point(i), u) - self.psi_star[i];
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        Ok(best)
    }

    fn check_quantile_arg(&self, u: &[f64]) -> Result<()> {
        self.check_point(u)?;
        if self.reference.kind() == ReferenceKind::SphericalUniform {
            let norm = dot(u, u).sqrt();
            if norm > 1.0 + 1e-9 {
                return Err(Error::Domain(format!(
                    "quantile argument has norm {norm:.6}, must lie in the unit ball"
                )));
            }
        }
        Ok(())
    }

    /// Empirical quantile at reference position `u`.
    pub fn quantile(&self, u: &[f64], mode: EvalMode) -> Result<Vec<f64>> {
        self.check_quantile_arg(u)?;
        match mode {
            EvalMode::Hard => Ok(self.data_point(self.hard_quantile_index(u)?).to_vec()),
            EvalMode::Entropic => {
                let eps = self.final_epsilon();
                let d = self.dim();
                let mut lse = StreamLse::new();
                for i in 0..self.n {
                    lse.push((dot(self.data_point(i), u) - self.psi_star[i]) / eps);
                }
                let denom = lse.value();
                let mut out = vec![0.0f64; d];
                for i in 0..self.n {
                    let w =
                        ((dot(self.data_point(i), u) - self.psi_star[i]) / eps - denom).exp();
                    for (o, xi) in out.iter_mut().zip(self.data_point(i)) {
                        *o += w * xi;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Halfspace depth of `x` through the norm of its entropic rank.
    /// Defined for the spherical uniform reference.
    pub fn mk_depth(&self, x: &[f64]) -> Result<f64> {
        if self.reference.kind() != ReferenceKind::SphericalUniform {
            return Err(Error::InvalidArgument(
                "depth needs the spherical uniform reference".to_string(),
            ));
        }
        let r = self.rank(x, EvalMode::Entropic)?;
        let norm = dot(&r, &r).sqrt().clamp(0.0, 1.0);
        tukey_depth_spherical(norm, self.dim())
    }

    /// Largest violation of `psi + psi_star >= <u, x>` over all pairs,
    /// i.e. `max_{j,i} <u_j, x_i> - psi_j - psi_star_i`. Bounded by
    /// `eps_final * ln(reference size)` right after fitting.
    pub fn fenchel_young_slack(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..self.reference.len() {
            let u = self.reference.point(j);
            for i in 0..self.n {
                let s = dot(u, self.data_point(i)) - self.psi[j] - self.psi_star[i];
                worst = worst.max(s);
            }
        }
        worst
    }
}

/// Halfspace (Tukey) depth of a point at distance `r` from the origin under
/// the spherical uniform distribution in dimension `d`.
///
/// The worst halfspace is `{z : <z, e> >= r}` for the radial direction `e`;
/// conditioning on the radius `rho ~ U[0,1]` gives
/// `D(r) = integral_r^1 s_d(r/rho) drho`, where `s_d(t)` is the measure of
/// the cap `{phi : phi_1 >= t}` on the unit sphere:
/// `s_d(t) = (1/2) I_{1-t^2}((d-1)/2, 1/2)` (regularized incomplete beta),
/// because `phi_1^2 ~ Beta(1/2, (d-1)/2)` for a uniform direction.
/// `D(0) = 1/2` and `D(1) = 0` exactly; strictly decreasing in between.
pub fn tukey_depth_spherical(r: f64, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".to_string()));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!(
            "radius {r} outside [0, 1]; ranks of the spherical reference never leave the ball"
        )));
    }
    if r == 0.0 {
        return Ok(0.5);
    }
    if r == 1.0 {
        return Ok(0.0);
    }
    if d == 1 {
        // The unit "sphere" is {-1, +1}: the cap has mass 1/2 for any
        // t in (0, 1], so D(r) = (1 - r)/2.
        return Ok(0.5 * (1.0 - r));
    }
    let cap = |t: f64| -> f64 {
        debug_assert!((0.0..=1.0).contains(&t));
        0.5 * beta_reg((d as f64 - 1.0) / 2.0, 0.5, (1.0 - t * t).max(0.0))
    };
    let integrand = |rho: f64| cap(r / rho);
    Ok(adaptive_simpson(&integrand, r, 1.0, 1e-11, 40))
}

/// Classic adaptive Simpson quadrature with absolute tolerance.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let c = 0.5 * (a + b);
    let fa = f(a);
    let fb = f(b);
    let fc = f(c);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_rec(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let fd = f(d);
    let fe = f(e);
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        simpson_rec(f, a, c, fa, fc, fd, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, c, b, fc, fb, fe, right, 0.5 * tol, depth - 1)
    }
}
