//! Optimal transport between images under squared pixel distance.

mod entropic;
mod simplex;

pub use entropic::{SinkhornMode, LOG_DOMAIN_THRESHOLD};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::histogram::ImageHistogram;

/// Guard against accidentally dense huge instances; the dense support-pair
/// cost matrix is capped at this many entries (~1.5 GiB of f64).
const DENSE_BUDGET: usize = 200_000_000;

/// One coupling entry between full-grid pixel indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source_index: usize,
    pub target_index: usize,
    pub mass: f64,
}

/// A sparse coupling between two images together with its transport cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportPlan {
    source_grid: PixelGrid,
    target_grid: PixelGrid,
    source_weights: Vec<f64>,
    target_weights: Vec<f64>,
    /// Sorted by `(source_index, target_index)`, all masses > 0.
    entries: Vec<PlanEntry>,
    cost: f64,
}

impl TransportPlan {
    /// Squared-distance transport cost of this coupling.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn source_grid(&self) -> PixelGrid {
        self.source_grid
    }

    pub fn target_grid(&self) -> PixelGrid {
        self.target_grid
    }

    /// Recompute the cost from the entries and the pixel geometry.
    pub fn recompute_cost(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let p = self.source_grid.coord(e.source_index);
                let q = self.target_grid.coord(e.target_index);
                let dr = p[0] - q[0];
                let dc = p[1] - q[1];
                e.mass * (dr * dr + dc * dc)
            })
            .sum()
    }

    /// L1 distances between the plan marginals and the two weight vectors.
    pub fn marginal_errors(&self) -> (f64, f64) {
        let mut row = vec![0.0f64; self.source_grid.len()];
        let mut col = vec![0.0f64; self.target_grid.len()];
        for e in &self.entries {
            row[e.source_index] += e.mass;
            col[e.target_index] += e.mass;
        }
        let re: f64 = row
            .iter()
            .zip(&self.source_weights)
            .map(|(x, y)| (x - y).abs())
            .sum();
        let ce: f64 = col
            .iter()
            .zip(&self.target_weights)
            .map(|(x, y)| (x - y).abs())
            .sum();
        (re, ce)
    }

    /// True when every supported source pixel sends its whole mass to a
    /// single target pixel (the coupling is induced by a map).
    pub fn is_map(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| w[0].source_index != w[1].source_index)
    }
}

fn squared_cost_matrix(
    sg: PixelGrid,
    tg: PixelGrid,
    s_sup: &[usize],
    t_sup: &[usize],
) -> Result<Vec<f64>> {
    let (ns, nt) = (s_sup.len(), t_sup.len());
    if ns.saturating_mul(nt) > DENSE_BUDGET {
        return Err(Error::InvalidArgument(format!(
            "support sizes {ns} x {nt} exceed the dense cost budget; \
             smooth less or use the entropic solver on a coarser grid"
        )));
    }
    let mut c = Vec::with_capacity(ns * nt);
    for &i in s_sup {
        let p = sg.coord(i);
        for &j in t_sup {
            let q = tg.coord(j);
            let dr = p[0] - q[0];
            let dc = p[1] - q[1];
            c.push(dr * dr + dc * dc);
        }
    }
    Ok(c)
}

/// Exact optimal transport between two images by network simplex on the
/// support pixels. The returned plan is a vertex of the coupling polytope:
/// at most `|supp a| + |supp b| - 1` entries.
pub fn solve_exact(a: &ImageHistogram, b: &ImageHistogram) -> Result<TransportPlan> {
    let s_sup = a.support();
    let t_sup = b.support();
    let cost = squared_cost_matrix(a.grid(), b.grid(), &s_sup, &t_sup)?;
    let aw: Vec<f64> = s_sup.iter().map(|&k| a.weights()[k]).collect();
    let bw: Vec<f64> = t_sup.iter().map(|&k| b.weights()[k]).collect();
    let sol = simplex::solve_network_simplex(&aw, &bw, &cost)?;
    let mut entries: Vec<PlanEntry> = sol
        .entries
        .into_iter()
        .map(|(i, j, mass)| PlanEntry {
            source_index: s_sup[i],
            target_index: t_sup[j],
            mass,
        })
        .collect();
    entries.sort_by_key(|e| (e.source_index, e.target_index));
    let mut plan = TransportPlan {
        source_grid: a.grid(),
        target_grid: b.grid(),
        source_weights: a.weights().to_vec(),
        target_weights: b.weights().to_vec(),
        entries,
        cost: 0.0,
    };
    plan.cost = plan.recompute_cost();
    // Self check: the solver's accumulated objective and the cost recomputed
    // from grid coordinates must be two routes to the same number.
    if (plan.cost - sol.cost).abs() > 1e-9 * (1.0 + plan.cost.abs()) {
        return Err(Error::Numerical(format!(
            "simplex objective {} disagrees with recomputed cost {}",
            sol.cost, plan.cost
        )));
    }
    Ok(plan)
}

/// Entropy-regularized transport; see [`solve_entropic_with_mode`].
/// Epsilon below [`LOG_DOMAIN_THRESHOLD`] automatically runs in the log
/// domain, above it the cheap scaling domain is tried first.
pub fn solve_entropic(
    a: &ImageHistogram,
    b: &ImageHistogram,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    solve_entropic_with_mode(a, b, epsilon, max_iter, tol, SinkhornMode::Auto)
}

/// Entropy-regularized transport with an explicit arithmetic domain.
/// The reported cost is the unregularized transport cost of the coupling.
pub fn solve_entropic_with_mode(
    a: &ImageHistogram,
    b: &ImageHistogram,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
    mode: SinkhornMode,
) -> Result<TransportPlan> {
    let s_sup = a.support();
    let t_sup = b.support();
    let cost = squared_cost_matrix(a.grid(), b.grid(), &s_sup, &t_sup)?;
    let aw: Vec<f64> = s_sup.iter().map(|&k| a.weights()[k]).collect();
    let bw: Vec<f64> = t_sup.iter().map(|&k| b.weights()[k]).collect();
    let out = entropic::sinkhorn(&aw, &bw, &cost, epsilon, max_iter, tol, mode)?;
    dense_to_plan(a, b, &s_sup, &t_sup, out, tol)
}

/// Warm-started entropic transport over a strictly decreasing epsilon
/// schedule, always in the log domain. The potentials from each stage seed
/// the next, so small final epsilons converge far faster than a cold start.
/// Only the final stage must reach `tol`.
pub fn solve_entropic_scheduled(
    a: &ImageHistogram,
    b: &ImageHistogram,
    epsilons: &[f64],
    max_iter_per_stage: usize,
    tol: f64,
) -> Result<TransportPlan> {
    let s_sup = a.support();
    let t_sup = b.support();
    let cost = squared_cost_matrix(a.grid(), b.grid(), &s_sup, &t_sup)?;
    let aw: Vec<f64> = s_sup.iter().map(|&k| a.weights()[k]).collect();
    let bw: Vec<f64> = t_sup.iter().map(|&k| b.weights()[k]).collect();
    let out = entropic::sinkhorn_scheduled(&aw, &bw, &cost, epsilons, max_iter_per_stage, tol)?;
    dense_to_plan(a, b, &s_sup, &t_sup, out, tol)
}

fn dense_to_plan(
    a: &ImageHistogram,
    b: &ImageHistogram,
    s_sup: &[usize],
    t_sup: &[usize],
    out: entropic::SinkhornOutput,
    tol: f64,
) -> Result<TransportPlan> {
    log::debug!(
        "sinkhorn: {} iterations, marginal error {:.3e}, cost {:.6e}",
        out.iterations,
        out.marginal_error,
        out.cost
    );
    // Entries below this threshold sum to well under tol and are dropped to
    // keep the plan sparse.
    let drop = tol * 1e-3 / (s_sup.len() * t_sup.len()) as f64;
    let nt = t_sup.len();
    let mut entries = Vec::new();
    for (k, &mass) in out.plan.iter().enumerate() {
        if mass > drop {
            entries.push(PlanEntry {
                source_index: s_sup[k / nt],
                target_index: t_sup[k % nt],
                mass,
            });
        }
    }
    entries.sort_by_key(|e| (e.source_index, e.target_index));
    let mut plan = TransportPlan {
        source_grid: a.grid(),
        target_grid: b.grid(),
        source_weights: a.weights().to_vec(),
        target_weights: b.weights().to_vec(),
        entries,
        cost: 0.0,
    };
    plan.cost = plan.recompute_cost();
    Ok(plan)
}

/// Quadratic Wasserstein distance (not squared) between two images.
pub fn wasserstein(a: &ImageHistogram, b: &ImageHistogram) -> Result<f64> {
    Ok(solve_exact(a, b)?.cost().sqrt())
}

/// Pixelwise transport destinations: where each unit of source mass goes,
/// averaged over the plan row (barycentric projection of the coupling).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MongeMapGrid {
    grid: PixelGrid,
    /// `images[k]` is the destination of pixel `k`, `(row, col)`.
    images: Vec<[f64; 2]>,
}

impl MongeMapGrid {
    pub fn grid(&self) -> PixelGrid {
        self.grid
    }

    /// Destination of pixel `k`.
    pub fn image_of(&self, k: usize) -> [f64; 2] {
        self.images[k]
    }

    pub fn images(&self) -> &[[f64; 2]] {
        &self.images
    }
}

/// Average destination per source pixel. Pixels without mass keep their own
/// coordinate, so the map is total and the induced displacement is zero off
/// the support.
pub fn barycentric_map(plan: &TransportPlan) -> MongeMapGrid {
    let grid = plan.source_grid;
    let mut num = vec![[0.0f64; 2]; grid.len()];
    let mut den = vec![0.0f64; grid.len()];
    for e in &plan.entries {
        let q = plan.target_grid.coord(e.target_index);
        num[e.source_index][0] += e.mass * q[0];
        num[e.source_index][1] += e.mass * q[1];
        den[e.source_index] += e.mass;
    }
    let images = (0..grid.len())
        .map(|k| {
            if den[k] > 0.0 {
                [num[k][0] / den[k], num[k][1] / den[k]]
            } else {
                grid.coord(k)
            }
        })
        .collect();
    MongeMapGrid { grid, images }
}
