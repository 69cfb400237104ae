//! Network simplex for the balanced transportation problem.
//!
//! Primal simplex on the bipartite graph (sources -> targets) plus an
//! artificial root node, in the style of the well-known C++ graph library
//! implementations: spanning-tree basis, block pricing over a sqrt-sized
//! window of arcs, artificial arcs with a prohibitive cost that are never
//! priced back in. Tree structure and potentials are recomputed in O(nodes)
//! per pivot, which is the right trade at the problem sizes this crate
//! targets (hundreds of support pixels) and keeps the update logic simple
//! enough to trust.
//!
//! Determinism: arcs are scanned in a fixed cyclic order, ties in the
//! entering test keep the first (lowest-index) candidate, and the leaving
//! rule is the standard first/second path sweep with fixed orientation, so
//! identical inputs produce identical pivots and identical optimal bases.

use crate::error::{Error, Result};

/// Relative tolerance for the entering-arc test.
const PIVOT_REL_EPS: f64 = 1e-12;

/// Artificial flow above this (in mass units) means the instance was not
/// actually balanced / feasible.
const FEAS_TOL: f64 = 1e-9;

pub(crate) struct SimplexSolution {
    /// `(source, target, mass)` with strictly positive mass,
    /// sorted by `(source, target)`.
    pub entries: Vec<(usize, usize, f64)>,
    /// Transport cost of the returned plan.
    pub cost: f64,
}

/// Solve `min sum c[i*nt+j] x_ij` over couplings of `a` and `b`.
/// `a` and `b` must be strictly positive and have equal totals (the target
/// side is rescaled to balance exactly).
pub(crate) fn solve_network_simplex(a: &[f64], b: &[f64], cost: &[f64]) -> Result<SimplexSolution> {
    let ns = a.len();
    let nt = b.len();
    assert_eq!(cost.len(), ns * nt, "cost matrix shape mismatch");
    assert!(ns > 0 && nt > 0);

    let sum_a: f64 = a.iter().sum();
    let sum_b: f64 = b.iter().sum();
    let scale_b = sum_a / sum_b; // exact balance, removes 1e-16 drift
    let b: Vec<f64> = b.iter().map(|&x| x * scale_b).collect();

    let n_nodes = ns + nt + 1; // + artificial root
    let root = ns + nt;
    let m_real = ns * nt;

    let max_cost = cost.iter().cloned().fold(0.0f64, f64::max);
    let art_cost = (1.0 + max_cost) * n_nodes as f64;

    // Node state. parent/pred/pred_up define the spanning tree.
    let mut parent = vec![usize::MAX; n_nodes];
    let mut pred_arc = vec![usize::MAX; n_nodes]; // arc joining node to parent
    let mut pred_up = vec![true; n_nodes]; // arc oriented node -> parent
    let mut pi = vec![0.0f64; n_nodes];
    // flow, indexed by arc id; artificial arc for node k has id m_real + k.
    let mut flow = vec![0.0f64; m_real + ns + nt];
    let mut in_tree = vec![false; m_real + ns + nt];

    // Initial basis: every node hangs off the root by its artificial arc.
    for i in 0..ns {
        parent[i] = root;
        pred_arc[i] = m_real + i;
        pred_up[i] = true; // source -> root carries the supply
        flow[m_real + i] = a[i];
        in_tree[m_real + i] = true;
        pi[i] = -art_cost;
    }
    for j in 0..nt {
        let u = ns + j;
        parent[u] = root;
        pred_arc[u] = m_real + ns + j;
        pred_up[u] = false; // root -> target delivers the demand
        flow[m_real + ns + j] = b[j];
        in_tree[m_real + ns + j] = true;
        pi[u] = art_cost;
    }

    let block_size = ((m_real as f64).sqrt().ceil() as usize).clamp(16, m_real.max(16));
    let mut next_arc = 0usize;

    // Scratch for join-finding: stamped ancestors of the entering source.
    let mut stamp = vec![u32::MAX; n_nodes];
    let mut stamp_gen = 0u32;

    let pivots_budget = 200 * n_nodes + 20_000;
    let mut pivots = 0usize;

    loop {
        // Entering arc: best reduced cost in the next non-empty block.
        let mut enter: Option<(usize, f64)> = None;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        while scanned < m_real {
            let e = next_arc;
            next_arc += 1;
            if next_arc == m_real {
                next_arc = 0;
            }
            scanned += 1;
            if !in_tree[e] {
                let (i, j) = (e / nt, e % nt);
                let r = cost[e] + pi[i] - pi[ns + j];
                if enter.is_none_or(|(_, best)| r < best) {
                    enter = Some((e, r));
                }
            }
            in_block += 1;
            if in_block == block_size {
                in_block = 0;
                if let Some((e, r)) = enter {
                    let (i, j) = (e / nt, e % nt);
                    let tol = PIVOT_REL_EPS
                        * pi[i].abs().max(pi[ns + j].abs()).max(cost[e].abs()).max(1.0);
                    if r < -tol {
                        break;
                    }
                    enter = None;
                }
            }
        }
        let entering = match enter {
            Some((e, r)) => {
                let (i, j) = (e / nt, e % nt);
                let tol =
                    PIVOT_REL_EPS * pi[i].abs().max(pi[ns + j].abs()).max(cost[e].abs()).max(1.0);
                if r < -tol {
                    e
                } else {
                    break; // optimal
                }
            }
            None => break, // optimal
        };

        pivots += 1;
        if pivots > pivots_budget {
            let primal: f64 = flow[..m_real]
                .iter()
                .zip(cost)
                .map(|(f, c)| f * c)
                .sum();
            let dual: f64 = a.iter().enumerate().map(|(i, &w)| -pi[i] * w).sum::<f64>()
                + b.iter().enumerate().map(|(j, &w)| pi[ns + j] * w).sum::<f64>();
            return Err(Error::NoConvergence {
                context: "network simplex pivot budget".to_string(),
                gap: primal - dual,
                iterations: pivots,
            });
        }

        let src = entering / nt;
        let tgt = ns + entering % nt;

        // Join node: stamp ancestors of src, walk up from tgt.
        stamp_gen = stamp_gen.wrapping_add(1);
        let mut u = src;
        loop {
            stamp[u] = stamp_gen;
            if u == root {
                break;
            }
            u = parent[u];
        }
        let mut join = tgt;
        while stamp[join] != stamp_gen {
            join = parent[join];
        }

        // Leaving arc: min residual along the cycle. Flow is pushed src->tgt.
        // Path tgt..join runs with the push; arcs oriented down (parent->node)
        // oppose it there. Path src..join runs against the push; arcs oriented
        // up (node->parent) oppose it there.
        let mut delta = f64::INFINITY;
        let mut out_node = usize::MAX;
        let mut out_on_src_path = true;
        let mut u = src;
        while u != join {
            if pred_up[u] {
                let f = flow[pred_arc[u]];
                if f < delta {
                    delta = f;
                    out_node = u;
                    out_on_src_path = true;
                }
            }
            u = parent[u];
        }
        let mut u = tgt;
        while u != join {
            if !pred_up[u] {
                let f = flow[pred_arc[u]];
                if f <= delta {
                    delta = f;
                    out_node = u;
                    out_on_src_path = false;
                }
            }
            u = parent[u];
        }

        // Apply the flow change around the cycle (delta 0 = degenerate pivot;
        // the basis still changes).
        if delta > 0.0 {
            flow[entering] += delta;
            let mut u = src;
            while u != join {
                let e = pred_arc[u];
                flow[e] += if pred_up[u] { -delta } else { delta };
                u = parent[u];
            }
            let mut u = tgt;
            while u != join {
                let e = pred_arc[u];
                flow[e] += if pred_up[u] { delta } else { -delta };
                u = parent[u];
            }
        }

        debug_assert!(out_node != usize::MAX, "cycle had no leaving candidate");
        let leaving = pred_arc[out_node];
        in_tree[leaving] = false;
        flow[leaving] = 0.0;
        in_tree[entering] = true;

        // Tree surgery: the leaving arc splits off the subtree containing
        // whichever endpoint of the entering arc lies below it. Re-root that
        // subtree at this endpoint by reversing the parent chain up to
        // out_node, then hang it on the entering arc.
        let (new_child, new_parent, up) = if out_on_src_path {
            (src, tgt, true) // entering arc oriented src -> tgt, src below
        } else {
            (tgt, src, false)
        };
        let mut node = new_child;
        let mut prev_parent = parent[node];
        let mut prev_arc = pred_arc[node];
        let mut prev_up = pred_up[node];
        parent[node] = new_parent;
        pred_arc[node] = entering;
        pred_up[node] = up;
        while node != out_node {
            let next = prev_parent;
            let (np, na, nu) = (parent[next], pred_arc[next], pred_up[next]);
            parent[next] = node;
            pred_arc[next] = prev_arc;
            pred_up[next] = !prev_up;
            node = next;
            prev_parent = np;
            prev_arc = na;
            prev_up = nu;
        }

        // Potentials from scratch along the tree (O(nodes)).
        recompute_potentials(
            ns, nt, root, cost, art_cost, &parent, &pred_arc, &pred_up, &mut pi,
        );
    }

    // Feasibility: artificial arcs must carry (numerically) nothing.
    let art_flow: f64 = flow[m_real..].iter().sum();
    if art_flow > FEAS_TOL {
        return Err(Error::NoConvergence {
            context: "network simplex feasibility".to_string(),
            gap: art_flow,
            iterations: pivots,
        });
    }

    let mut entries = Vec::new();
    let mut total = 0.0;
    for e in 0..m_real {
        if flow[e] > 0.0 {
            entries.push((e / nt, e % nt, flow[e]));
            total += flow[e] * cost[e];
        }
    }
    Ok(SimplexSolution {
        entries,
        cost: total,
    })
}

#[allow(clippy::too_many_arguments)]
fn recompute_potentials(
    ns: usize,
    nt: usize,
    root: usize,
    cost: &[f64],
    art_cost: f64,
    parent: &[usize],
    pred_arc: &[usize],
    pred_up: &[bool],
    pi: &mut [f64],
) {
    let n_nodes = ns + nt + 1;
    let m_real = ns * nt;
    // Children lists from parent pointers.
    let mut head = vec![usize::MAX; n_nodes];
    let mut next = vec![usize::MAX; n_nodes];
    for u in 0..n_nodes {
        if u == root {
            continue;
        }
        let p = parent[u];
        next[u] = head[p];
        head[p] = u;
    }
    pi[root] = 0.0;
    let mut stack = vec![root];
    while let Some(p) = stack.pop() {
        let mut u = head[p];
        while u != usize::MAX {
            let e = pred_arc[u];
            let c = if e < m_real { cost[e] } else { art_cost };
            // Tree arcs have zero reduced cost: c + pi[from] - pi[to] = 0.
            pi[u] = if pred_up[u] { pi[p] - c } else { pi[p] + c };
            stack.push(u);
            u = next[u];
        }
    }
}
