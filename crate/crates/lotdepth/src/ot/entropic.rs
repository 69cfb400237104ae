//! Sinkhorn iterations for entropy-regularized transport.
//!
//! Two arithmetic domains:
//! * scaling domain (kernel matrix `K = exp(-c/eps)` and diagonal scalings),
//!   cheap but underflows once `c/eps` gets large;
//! * log domain (dual potentials and logsumexp rows), slower per iteration
//!   but stable at any epsilon.
//!
//! `Auto` picks the scaling domain above [`LOG_DOMAIN_THRESHOLD`] and falls
//! back to the log domain either below it or when underflow is detected
//! mid-run. `Scaling` reports underflow as an error instead of falling back,
//! so callers can pin the cheap path and learn when it stops being valid.

use crate::error::{Error, Result};

/// Below this epsilon the scaling domain is never attempted.
pub const LOG_DOMAIN_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SinkhornMode {
    #[default]
    Auto,
    Scaling,
    LogDomain,
}

#[derive(Debug)]
pub(crate) struct SinkhornOutput {
    /// Dense coupling, row-major `ns x nt`.
    pub plan: Vec<f64>,
    /// Unregularized transport cost of the coupling.
    pub cost: f64,
    pub iterations: usize,
    pub marginal_error: f64,
}

/// Run Sinkhorn until the L1 violation of the column marginal drops below
/// `tol` (row marginals are exact by construction after each row update).
pub(crate) fn sinkhorn(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
    mode: SinkhornMode,
) -> Result<SinkhornOutput> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    match mode {
        SinkhornMode::LogDomain => sinkhorn_log(a, b, cost, epsilon, max_iter, tol),
        SinkhornMode::Scaling => sinkhorn_scaling(a, b, cost, epsilon, max_iter, tol),
        SinkhornMode::Auto => {
            if epsilon < LOG_DOMAIN_THRESHOLD {
                return sinkhorn_log(a, b, cost, epsilon, max_iter, tol);
            }
            match sinkhorn_scaling(a, b, cost, epsilon, max_iter, tol) {
                Err(Error::Numerical(why)) => {
                    log::debug!("scaling-domain sinkhorn underflowed ({why}); retrying in log domain");
                    sinkhorn_log(a, b, cost, epsilon, max_iter, tol)
                }
                other => other,
            }
        }
    }
}

fn plan_cost(plan: &[f64], cost: &[f64]) -> f64 {
    plan.iter().zip(cost).map(|(p, c)| p * c).sum()
}

fn sinkhorn_scaling(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornOutput> {
    let ns = a.len();
    let nt = b.len();
    let kernel: Vec<f64> = cost.iter().map(|&c| (-c / epsilon).exp()).collect();
    let mut u = vec![1.0f64; ns];
    let mut v = vec![1.0f64; nt];
    let mut err = f64::INFINITY;
    let mut iters = 0usize;
    for it in 1..=max_iter {
        iters = it;
        // u-update: rows become exact.
        for i in 0..ns {
            let kv: f64 = kernel[i * nt..(i + 1) * nt]
                .iter()
                .zip(&v)
                .map(|(k, vj)| k * vj)
                .sum();
            if kv <= 0.0 || !kv.is_finite() || !(a[i] / kv).is_finite() {
                return Err(Error::Numerical(format!(
                    "sinkhorn scaling underflow at iteration {it} (epsilon {epsilon:.3e}); \
                     use the log-domain mode (always available) or a larger epsilon"
                )));
            }
            u[i] = a[i] / kv;
        }
        // v-update: columns become exact.
        let mut ku = vec![0.0f64; nt];
        for i in 0..ns {
            let ui = u[i];
            for (j, k) in kernel[i * nt..(i + 1) * nt].iter().enumerate() {
                ku[j] += k * ui;
            }
        }
        for j in 0..nt {
            if ku[j] <= 0.0 || !ku[j].is_finite() || !(b[j] / ku[j]).is_finite() {
                return Err(Error::Numerical(format!(
                    "sinkhorn scaling underflow at iteration {it} (epsilon {epsilon:.3e}); \
                     use the log-domain mode (always available) or a larger epsilon"
                )));
            }
            v[j] = b[j] / ku[j];
        }
        // After the v-update the columns are exact; check the rows.
        if it % 4 == 0 || it == max_iter {
            err = 0.0;
            for i in 0..ns {
                let kv: f64 = kernel[i * nt..(i + 1) * nt]
                    .iter()
                    .zip(&v)
                    .map(|(k, vj)| k * vj)
                    .sum();
                err += (u[i] * kv - a[i]).abs();
            }
            if err < tol {
                break;
            }
        }
    }
    if err >= tol {
        return Err(Error::NoConvergence {
            context: format!("sinkhorn scaling at epsilon {epsilon:.3e}"),
            gap: err,
            iterations: iters,
        });
    }
    let mut plan = vec![0.0f64; ns * nt];
    for i in 0..ns {
        for j in 0..nt {
            plan[i * nt + j] = u[i] * kernel[i * nt + j] * v[j];
        }
    }
    Ok(SinkhornOutput {
        cost: plan_cost(&plan, cost),
        iterations: iters,
        marginal_error: err,
        plan,
    })
}

/// Max-stabilized logsumexp over an iterator of finite terms.
pub(crate) fn logsumexp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = terms.map(|t| (t - m).exp()).sum();
    m + s.ln()
}

/// Log-domain sweeps starting from the potentials in `f`/`g` (pass zeros for
/// a cold start). Returns `(iterations, row_error)` without judging success,
/// so a scheduled caller can warm-start the next stage from the same buffers.
#[allow(clippy::too_many_arguments)]
fn sinkhorn_log_sweeps(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
    f: &mut [f64],
    g: &mut [f64],
) -> (usize, f64) {
    let ns = a.len();
    let nt = b.len();
    let ln_a: Vec<f64> = a.iter().map(|&x| x.ln()).collect();
    let ln_b: Vec<f64> = b.iter().map(|&x| x.ln()).collect();
    let mut err = f64::INFINITY;
    let mut iters = 0usize;
    for it in 1..=max_iter {
        iters = it;
        for i in 0..ns {
            let row = &cost[i * nt..(i + 1) * nt];
            let lse = logsumexp((0..nt).map(|j| (g[j] - row[j]) / epsilon + ln_b[j]));
            f[i] = -epsilon * lse;
        }
        for j in 0..nt {
            let lse = logsumexp((0..ns).map(|i| (f[i] - cost[i * nt + j]) / epsilon + ln_a[i]));
            g[j] = -epsilon * lse;
        }
        // After the g-update the columns are exact; check the rows.
        if it % 4 == 0 || it == max_iter {
            err = 0.0;
            for i in 0..ns {
                let row = &cost[i * nt..(i + 1) * nt];
                let lse =
                    logsumexp((0..nt).map(|j| (f[i] + g[j] - row[j]) / epsilon + ln_b[j]));
                err += (a[i] * (lse.exp() - 1.0)).abs();
            }
            if err < tol {
                break;
            }
        }
    }
    (iters, err)
}

fn finish_log(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    epsilon: f64,
    f: &[f64],
    g: &[f64],
    iterations: usize,
    marginal_error: f64,
) -> SinkhornOutput {
    let ns = a.len();
    let nt = b.len();
    let mut plan = vec![0.0f64; ns * nt];
    for i in 0..ns {
        for j in 0..nt {
            let e = (f[i] + g[j] - cost[i * nt + j]) / epsilon + a[i].ln() + b[j].ln();
            plan[i * nt + j] = e.exp();
        }
    }
    SinkhornOutput {
        cost: plan_cost(&plan, cost),
        iterations,
        marginal_error,
        plan,
    }
}

fn sinkhorn_log(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornOutput> {
    let mut f = vec![0.0f64; a.len()];
    let mut g = vec![0.0f64; b.len()];
    let (iters, err) = sinkhorn_log_sweeps(a, b, cost, epsilon, max_iter, tol, &mut f, &mut g);
    if err >= tol {
        return Err(Error::NoConvergence {
            context: format!("sinkhorn log-domain at epsilon {epsilon:.3e}"),
            gap: err,
            iterations: iters,
        });
    }
    Ok(finish_log(a, b, cost, epsilon, &f, &g, iters, err))
}

/// Warm-started annealing: run log-domain Sinkhorn through a strictly
/// decreasing epsilon sequence, carrying the potentials between stages.
/// Intermediate stages are best effort; only the final stage must reach
/// `tol`. Reported iterations are summed over stages.
pub(crate) fn sinkhorn_scheduled(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    epsilons: &[f64],
    max_iter_per_stage: usize,
    tol: f64,
) -> Result<SinkhornOutput> {
    let Some(&last) = epsilons.last() else {
        return Err(Error::InvalidArgument(
            "epsilon schedule is empty".to_string(),
        ));
    };
    for pair in epsilons.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(Error::InvalidArgument(format!(
                "epsilon schedule must strictly decrease, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    if !(last.is_finite() && last > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {last}"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut f = vec![0.0f64; a.len()];
    let mut g = vec![0.0f64; b.len()];
    let mut total = 0usize;
    let mut err = f64::INFINITY;
    for &eps in epsilons {
        let (iters, e) =
            sinkhorn_log_sweeps(a, b, cost, eps, max_iter_per_stage, tol, &mut f, &mut g);
        total += iters;
        err = e;
    }
    if err >= tol {
        return Err(Error::NoConvergence {
            context: format!("scheduled sinkhorn at final epsilon {last:.3e}"),
            gap: err,
            iterations: total,
        });
    }
    Ok(finish_log(a, b, cost, last, &f, &g, total, err))
}
