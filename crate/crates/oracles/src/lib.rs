//! Slow, independent reference implementations used only by tests.
//!
//! Everything here is deliberately written with textbook algorithms and no
//! shared code with the main crate, so agreement between the two is evidence
//! of correctness rather than of copy-paste.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Minimum-cost transport between histograms `a` (rows) and `b` (columns)
/// with dense cost `c` (row-major `a.len() x b.len()`), solved by a two-phase
/// dense tableau simplex with Bland's rule. Returns the optimal cost.
///
/// Intended for tiny instances (tens of rows/columns); complexity is
/// unapologetically cubic-ish.
pub fn transport_lp_cost(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let (ns, nt) = (a.len(), b.len());
    assert_eq!(c.len(), ns * nt);
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    assert!((sa - sb).abs() < 1e-9, "unbalanced marginals");

    // Variables: x_ij (ns*nt), then one artificial per constraint (ns+nt).
    // Constraints: row sums = a_i, column sums = b_j.
    let ncons = ns + nt;
    let nvar = ns * nt + ncons;
    let width = nvar + 1; // + rhs
    let mut t = vec![0.0f64; ncons * width];
    for i in 0..ns {
        for j in 0..nt {
            t[i * width + i * nt + j] = 1.0;
        }
        t[i * width + ns * nt + i] = 1.0;
        t[i * width + nvar] = a[i];
    }
    for j in 0..nt {
        for i in 0..ns {
            t[(ns + j) * width + i * nt + j] = 1.0;
        }
        t[(ns + j) * width + ns * nt + ns + j] = 1.0;
        t[(ns + j) * width + nvar] = b[j];
    }
    let mut basis: Vec<usize> = (0..ncons).map(|r| ns * nt + r).collect();

    let eps = 1e-11;
    let pivot = |t: &mut Vec<f64>, z: &mut Vec<f64>, basis: &mut Vec<usize>, row: usize, col: usize| {
        let piv = t[row * width + col];
        for v in t[row * width..(row + 1) * width].iter_mut() {
            *v /= piv;
        }
        for r in 0..ncons {
            if r == row {
                continue;
            }
            let f = t[r * width + col];
            if f != 0.0 {
                for k in 0..width {
                    t[r * width + k] -= f * t[row * width + k];
                }
            }
        }
        let f = z[col];
        if f != 0.0 {
            for k in 0..width {
                z[k] -= f * t[row * width + k];
            }
        }
        basis[row] = col;
    };

    // Bland's rule loop for a given reduced-cost row; `allowed` masks columns.
    let run = |t: &mut Vec<f64>, z: &mut Vec<f64>, basis: &mut Vec<usize>, allowed: &dyn Fn(usize) -> bool| {
        loop {
            let mut enter = None;
            for col in 0..nvar {
                if allowed(col) && z[col] < -eps {
                    enter = Some(col);
                    break;
                }
            }
            let Some(col) = enter else { break };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..ncons {
                let coef = t[r * width + col];
                if coef > eps {
                    let ratio = t[r * width + nvar] / coef;
                    let better = match leave {
                        None => true,
                        // Bland: smallest ratio, ties by smallest basis index.
                        Some((lr, lv)) => {
                            ratio < lv - eps || (ratio < lv + eps && basis[r] < basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let (row, _) = leave.expect("transport LP cannot be unbounded");
            pivot(t, z, basis, row, col);
        }
    };

    // Phase 1: minimize sum of artificials.
    let mut z1 = vec![0.0f64; width];
    for v in z1[ns * nt..nvar].iter_mut() {
        *v = 1.0;
    }
    for r in 0..ncons {
        // Price out the initial artificial basis.
        for k in 0..width {
            z1[k] -= t[r * width + k];
        }
    }
    run(&mut t, &mut z1, &mut basis, &|col| col < ns * nt);
    assert!(
        -z1[nvar] < 1e-8,
        "phase 1 infeasible, artificial mass {}",
        -z1[nvar]
    );

    // Phase 2: minimize true cost, artificials barred from entering.
    let mut z2 = vec![0.0f64; width];
    z2[..ns * nt].copy_from_slice(c);
    for r in 0..ncons {
        let bi = basis[r];
        let cb = if bi < ns * nt { c[bi] } else { 0.0 };
        if cb != 0.0 {
            for k in 0..width {
                z2[k] -= cb * t[r * width + k];
            }
        }
    }
    run(&mut t, &mut z2, &mut basis, &|col| col < ns * nt);

    let mut cost = 0.0;
    for r in 0..ncons {
        if basis[r] < ns * nt {
            cost += c[basis[r]] * t[r * width + nvar];
        }
    }
    cost
}

/// Minimum-cost perfect matching on a square cost matrix (rows to columns),
/// the classic O(n^3) potentials algorithm. Returns `assign[row] = col` and
/// the total cost.
pub fn hungarian(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    assert!(n > 0 && cost.iter().all(|r| r.len() == n));
    const INF: f64 = f64::INFINITY;
    // 1-based with a dummy column 0, as in the standard formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[col] = row matched to col
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i][assign[i]]).sum();
    (assign, total)
}

/// Eigen-decomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// `eigenvectors[k]` is the unit eigenvector for `eigenvalues[k]`.
pub fn jacobi_eigh(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    assert!(n > 0 && matrix.iter().all(|r| r.len() == n));
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let vals = order.iter().map(|&k| a[k][k]).collect();
    let vecs = order
        .iter()
        .map(|&k| (0..n).map(|r| v[r][k]).collect())
        .collect();
    (vals, vecs)
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against the
/// continuous CDF `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    d
}

/// Asymptotic KS critical value: P(D_n > c) = alpha.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln() / n as f64).sqrt()
}

/// Monte Carlo halfspace depth of radius `r` under the spherical uniform
/// distribution in dimension `d`: the fraction of draws `R * Phi` whose first
/// coordinate is at least `r`. By rotational symmetry this is the depth of
/// any point at distance `r` from the origin.
pub fn mc_spherical_halfspace_depth(r: f64, d: usize, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..draws {
        let mut norm_sq = 0.0;
        let mut first = 0.0;
        for k in 0..d {
            let g: f64 = StandardNormal.sample(&mut rng);
            if k == 0 {
                first = g;
            }
            norm_sq += g * g;
        }
        let radius: f64 = rng.random::<f64>();
        let z1 = radius * first / norm_sq.sqrt();
        if z1 >= r {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

/// Monte Carlo `prob`-quantile of the chi-square distribution with `d`
/// degrees of freedom.
pub fn mc_chi2_quantile(d: usize, prob: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut xs: Vec<f64> = (0..draws)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g * g
                })
                .sum()
        })
        .collect();
    xs.sort_by(f64::total_cmp);
    let pos = ((prob * draws as f64).ceil() as usize).clamp(1, draws);
    xs[pos - 1]
}

/// AUC by direct pair counting: the probability that a positive outscores a
/// negative, ties counted half. `scored[i] = (score, is_positive)`.
pub fn pairwise_auc(scored: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = scored.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = scored.iter().filter(|s| !s.1).map(|s| s.0).collect();
    assert!(!pos.is_empty() && !neg.is_empty());
    let mut acc = 0.0;
    for &p in &pos {
        for &n in &neg {
            acc += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    acc / (pos.len() * neg.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lp_identity_costs_zero() {
        let a = [0.3, 0.7];
        let c = [0.0, 1.0, 1.0, 0.0];
        assert!(transport_lp_cost(&a, &a, &c).abs() < 1e-12);
    }

    #[test]
    fn lp_forced_move() {
        // Point mass must travel at cost 1 per unit.
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let c = [0.0, 1.0, 1.0, 0.0];
        assert!((transport_lp_cost(&a, &b, &c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lp_known_small_instance() {
        // Uniform marginals on 2 points apart by 1: half the mass moves.
        let a = [0.5, 0.5];
        let b = [1.0, 0.0];
        let c = [0.0, 1.0, 1.0, 0.0];
        assert!((transport_lp_cost(&a, &b, &c) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hungarian_three_by_three() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let (assign, total) = hungarian(&cost);
        assert_eq!(assign, vec![1, 0, 2]);
        assert!((total - 5.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_matches_hand_computed_eigs() {
        let m = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        let (vals, vecs) = jacobi_eigh(&m);
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        let inv_sqrt2 = 0.5f64.sqrt();
        assert!((vecs[0][0].abs() - inv_sqrt2).abs() < 1e-12);
    }

    #[test]
    fn ks_of_exact_uniform_grid_is_small() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_statistic(&xs, |x| x) <= 0.5e-3 + 1e-12);
    }

    #[test]
    fn auc_of_perfect_separation() {
        let s = [(0.9, true), (0.8, true), (0.2, false), (0.1, false)];
        assert_eq!(pairwise_auc(&s), 1.0);
        let t = [(0.5, true), (0.5, false)];
        assert_eq!(pairwise_auc(&t), 0.5);
    }
}
