//! Exact optimal transport between finitely supported measures.
//!
//! Distances are solved as finite transportation problems with a
//! network-simplex-style pivoting scheme (MODI / u-v method on the dense
//! bipartite graph). The hard support cap keeps the solver in its
//! desk-scale exactness regime; larger inputs must be subsampled by the
//! caller. One-dimensional `W1` bypasses the solver entirely through the
//! quantile-coupling formula, which is exact for arbitrary weights.

use crate::error::{Error, Result};
use crate::geometry::lex_cmp_points;
use crate::linalg::dist;
use crate::measures::EmpiricalMeasure;

/// Hard cap on each support size for the exact solver.
pub const SUPPORT_CAP: usize = 512;

/// Marginal tolerance of a transport plan.
pub const COUPLING_TOL: f64 = 1e-10;

/// A transport plan between two atom clouds: nonnegative masses indexed by
/// `(atom of mu, atom of nu)` whose row sums recover the weights of `mu` and
/// column sums the weights of `nu`.
#[derive(Debug, Clone)]
pub struct Coupling {
    n_row: usize,
    n_col: usize,
    plan: Vec<f64>,
}

impl Coupling {
    pub fn n_row(&self) -> usize {
        self.n_row
    }

    pub fn n_col(&self) -> usize {
        self.n_col
    }

    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.n_col + j]
    }

    pub fn plan(&self) -> &[f64] {
        &self.plan
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_row)
            .map(|i| self.plan[i * self.n_col..(i + 1) * self.n_col].iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.n_col)
            .map(|j| (0..self.n_row).map(|i| self.mass(i, j)).sum())
            .collect()
    }

    /// Checks the coupling invariant against the two weight vectors.
    pub fn validate_marginals(&self, mu_weights: &[f64], nu_weights: &[f64]) -> Result<()> {
        let rows = self.row_sums();
        let cols = self.col_sums();
        let row_ok = rows
            .iter()
            .zip(mu_weights)
            .all(|(r, w)| (r - w).abs() <= COUPLING_TOL);
        let col_ok = cols
            .iter()
            .zip(nu_weights)
            .all(|(c, w)| (c - w).abs() <= COUPLING_TOL);
        if rows.len() != mu_weights.len() || cols.len() != nu_weights.len() || !row_ok || !col_ok {
            return Err(Error::InvalidParameter(
                "coupling marginals do not match the measure weights".into(),
            ));
        }
        Ok(())
    }

    /// Total cost of the plan under a ground cost.
    pub fn transport_cost<C: Fn(usize, usize) -> f64>(&self, cost: C) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n_row {
            for j in 0..self.n_col {
                let m = self.mass(i, j);
                if m > 0.0 {
                    total += m * cost(i, j);
                }
            }
        }
        total
    }
}

/// Exact `W1` between one-dimensional measures via the sorted
/// quantile-coupling formula `int |F_mu - F_nu| dx`.
pub fn w1_exact_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() != 1 {
        return Err(Error::NotOneDimensional { got: mu.dim() });
    }
    if nu.dim() != 1 {
        return Err(Error::NotOneDimensional { got: nu.dim() });
    }
    let mut a: Vec<(f64, f64)> = mu
        .atoms()
        .zip(mu.weights())
        .map(|(x, &w)| (x[0], w))
        .collect();
    let mut b: Vec<(f64, f64)> = nu
        .atoms()
        .zip(nu.weights())
        .map(|(x, &w)| (x[0], w))
        .collect();
    a.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    b.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());

    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut cdf_a, mut cdf_b) = (0.0f64, 0.0f64);
    let mut prev = f64::NAN;
    let mut total = 0.0;
    while ia < a.len() || ib < b.len() {
        let x = match (a.get(ia), b.get(ib)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        if prev.is_finite() {
            total += (x - prev) * (cdf_a - cdf_b).abs();
        }
        while ia < a.len() && a[ia].0 <= x {
            cdf_a += a[ia].1;
            ia += 1;
        }
        while ib < b.len() && b[ib].0 <= x {
            cdf_b += b[ib].1;
            ib += 1;
        }
        prev = x;
    }
    Ok(total)
}

/// Exact `W_p` (`p` in `{1, 2}`) between same-dimension measures with small
/// supports, solved to optimality as a finite transportation problem.
pub fn wp_exact_small(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: u32) -> Result<f64> {
    if p != 1 && p != 2 {
        return Err(Error::InvalidParameter(format!(
            "transport order p = {p}; only 1 and 2 are supported"
        )));
    }
    check_pair(mu, nu)?;
    // Canonical argument order: the optimal value is symmetric, so a
    // deterministic swap makes wp(mu, nu) and wp(nu, mu) bit-identical.
    let (a, b) = if measure_lex_le(mu, nu) {
        (mu, nu)
    } else {
        (nu, mu)
    };
    let pf = p as f64;
    let (cost, _) = solve_measures(a, b, |x, y| dist(x, y).powf(pf))?;
    Ok(cost.max(0.0).powf(1.0 / pf))
}

/// Exact truncated distance with ground cost `1 ^ |x - y|`; bounded by both
/// `W1` and the discrete total variation.
pub fn w1_truncated(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    check_pair(mu, nu)?;
    let (a, b) = if measure_lex_le(mu, nu) {
        (mu, nu)
    } else {
        (nu, mu)
    };
    let (cost, _) = solve_measures(a, b, |x, y| dist(x, y).min(1.0))?;
    Ok(cost.clamp(0.0, 1.0))
}

/// `W_p` value together with an optimal coupling of `(mu, nu)` (row marginals
/// follow `mu`). Unlike [`wp_exact_small`], arguments are not reordered.
pub fn optimal_coupling(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: u32,
) -> Result<(f64, Coupling)> {
    if p != 1 && p != 2 {
        return Err(Error::InvalidParameter(format!(
            "transport order p = {p}; only 1 and 2 are supported"
        )));
    }
    check_pair(mu, nu)?;
    let pf = p as f64;
    let (cost, coupling) = solve_measures(mu, nu, |x, y| dist(x, y).powf(pf))?;
    Ok((cost.max(0.0).powf(1.0 / pf), coupling))
}

/// `W1` dispatcher: the quantile formula in one dimension (no support cap),
/// the exact solver otherwise.
pub fn w1_auto(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() == 1 && nu.dim() == 1 {
        w1_exact_1d(mu, nu)
    } else {
        wp_exact_small(mu, nu, 1)
    }
}

fn check_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    for m in [mu, nu] {
        if m.len() > SUPPORT_CAP {
            return Err(Error::SupportCap {
                cap: SUPPORT_CAP,
                got: m.len(),
            });
        }
    }
    Ok(())
}

fn measure_lex_le(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> bool {
    use std::cmp::Ordering;
    match a.len().cmp(&b.len()) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => match lex_cmp_points(a.flat_atoms(), b.flat_atoms()) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => lex_cmp_points(a.weights(), b.weights()) != Ordering::Greater,
        },
    }
}

fn solve_measures<C: Fn(&[f64], &[f64]) -> f64>(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    ground: C,
) -> Result<(f64, Coupling)> {
    let n = mu.len();
    let m = nu.len();
    let mut cost = vec![0.0; n * m];
    for (i, x) in mu.atoms().enumerate() {
        for (j, y) in nu.atoms().enumerate() {
            let c = ground(x, y);
            if !c.is_finite() {
                return Err(Error::NonFinite {
                    what: "transport ground cost",
                });
            }
            cost[i * m + j] = c;
        }
    }
    transport_simplex(mu.weights(), nu.weights(), &cost, m)
}

/// Transportation simplex on the dense bipartite graph.
///
/// Rows are supply nodes (weights of `mu`), columns demand nodes (weights of
/// `nu`). Starts from the northwest-corner spanning tree, then pivots on the
/// most negative reduced cost until optimality. Degenerate pivots keep the
/// basis a spanning tree; an iteration cap guards against pathological
/// cycling.
fn transport_simplex(
    supply_in: &[f64],
    demand_in: &[f64],
    cost: &[f64],
    m: usize,
) -> Result<(f64, Coupling)> {
    let n = supply_in.len();
    debug_assert_eq!(cost.len(), n * m);

    // Balance exactly: normalize each side, then absorb the last-ulp
    // discrepancy into the final demand entry.
    let s_sum: f64 = supply_in.iter().sum();
    let d_sum: f64 = demand_in.iter().sum();
    let mut supply: Vec<f64> = supply_in.iter().map(|w| w / s_sum).collect();
    let mut demand: Vec<f64> = demand_in.iter().map(|w| w / d_sum).collect();
    let resid: f64 = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
    demand[m - 1] += resid;

    let n_basic = n + m - 1;
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(n_basic);
    let mut flow: Vec<f64> = Vec::with_capacity(n_basic);
    let mut in_basis = vec![false; n * m];

    // Northwest-corner initialization: a staircase of exactly n + m - 1
    // basic cells (degenerate zero-flow cells appear on simultaneous
    // exhaustion).
    {
        let (mut i, mut j) = (0usize, 0usize);
        for _ in 0..n_basic {
            let q = supply[i].min(demand[j]).max(0.0);
            basis.push((i, j));
            flow.push(q);
            in_basis[i * m + j] = true;
            supply[i] -= q;
            demand[j] -= q;
            if i + 1 < n && (supply[i] <= demand[j] || j + 1 >= m) {
                i += 1;
            } else if j + 1 < m {
                j += 1;
            }
        }
    }

    let cost_scale = 1.0 + cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let eps = 1e-12 * cost_scale;
    let max_pivots = 200 * (n + m) + 1000;

    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; m];
    let mut known_u = vec![false; n];
    let mut known_v = vec![false; m];
    let mut row_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut col_adj: Vec<Vec<usize>> = vec![Vec::new(); m];

    for pivot in 0..=max_pivots {
        // Duals from the spanning tree (u[0] = 0), by BFS.
        row_adj.iter_mut().for_each(Vec::clear);
        col_adj.iter_mut().for_each(Vec::clear);
        for (e, &(i, j)) in basis.iter().enumerate() {
            row_adj[i].push(e);
            col_adj[j].push(e);
        }
        known_u.fill(false);
        known_v.fill(false);
        known_u[0] = true;
        u[0] = 0.0;
        let mut queue: Vec<(bool, usize)> = vec![(true, 0)]; // (is_row, index)
        while let Some((is_row, idx)) = queue.pop() {
            let edges = if is_row { &row_adj[idx] } else { &col_adj[idx] };
            for &e in edges {
                let (i, j) = basis[e];
                if is_row && !known_v[j] {
                    v[j] = cost[i * m + j] - u[i];
                    known_v[j] = true;
                    queue.push((false, j));
                } else if !is_row && !known_u[i] {
                    u[i] = cost[i * m + j] - v[j];
                    known_u[i] = true;
                    queue.push((true, i));
                }
            }
        }

        // Entering arc: most negative reduced cost (Dantzig rule).
        let mut best = -eps;
        let mut entering: Option<(usize, usize)> = None;
        for i in 0..n {
            let ui = u[i];
            for j in 0..m {
                if in_basis[i * m + j] {
                    continue;
                }
                let rc = cost[i * m + j] - ui - v[j];
                if rc < best {
                    best = rc;
                    entering = Some((i, j));
                }
            }
        }
        let (ei, ej) = match entering {
            None => break, // optimal
            Some(cell) if pivot == max_pivots => {
                let _ = cell;
                return Err(Error::TransportNoConvergence(max_pivots));
            }
            Some(cell) => cell,
        };

        // Unique tree path from row node ei to column node ej.
        let path = tree_path(n, m, &basis, &row_adj, &col_adj, ei, ej);

        // Cycle signs: the entering cell takes +theta; walking the tree path
        // from ei, edges alternate -, +, -, ... starting with -.
        let mut theta = f64::INFINITY;
        let mut leaving: Option<usize> = None;
        for (t, &e) in path.iter().enumerate() {
            if t % 2 == 0 && (flow[e] < theta || (flow[e] == theta && smaller_cell(&basis, e, leaving))) {
                theta = flow[e];
                leaving = Some(e);
            }
        }
        let leaving = leaving.expect("cycle must contain a donor cell");
        let theta = theta.max(0.0);

        for (t, &e) in path.iter().enumerate() {
            if t % 2 == 0 {
                flow[e] -= theta;
            } else {
                flow[e] += theta;
            }
        }
        flow[leaving] = 0.0;
        let (li, lj) = basis[leaving];
        in_basis[li * m + lj] = false;
        in_basis[ei * m + ej] = true;
        basis[leaving] = (ei, ej);
        flow[leaving] = theta;
    }

    let mut plan = vec![0.0; n * m];
    let mut total = 0.0;
    for (&(i, j), &f) in basis.iter().zip(&flow) {
        let f = f.max(0.0);
        plan[i * m + j] = f;
        total += f * cost[i * m + j];
    }
    Ok((
        total,
        Coupling {
            n_row: n,
            n_col: m,
            plan,
        },
    ))
}

fn smaller_cell(basis: &[(usize, usize)], e: usize, current: Option<usize>) -> bool {
    match current {
        None => true,
        Some(c) => basis[e] < basis[c],
    }
}

/// Edge indices of the unique tree path from row node `start_row` to column
/// node `end_col`, in walk order.
fn tree_path(
    n: usize,
    m: usize,
    basis: &[(usize, usize)],
    row_adj: &[Vec<usize>],
    col_adj: &[Vec<usize>],
    start_row: usize,
    end_col: usize,
) -> Vec<usize> {
    // Node ids: rows 0..n, cols n..n+m.
    let total = n + m;
    let mut parent_edge = vec![usize::MAX; total];
    let mut parent_node = vec![usize::MAX; total];
    let mut visited = vec![false; total];
    let start = start_row;
    let goal = n + end_col;
    visited[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == goal {
            break;
        }
        let edges = if node < n {
            &row_adj[node]
        } else {
            &col_adj[node - n]
        };
        for &e in edges {
            let (i, j) = basis[e];
            let next = if node < n { n + j } else { i };
            if !visited[next] {
                visited[next] = true;
                parent_edge[next] = e;
                parent_node[next] = node;
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = goal;
    while node != start {
        path.push(parent_edge[node]);
        node = parent_node[node];
    }
    path.reverse();
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    fn em1(points: &[f64]) -> EmpiricalMeasure {
        let pts: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
        EmpiricalMeasure::uniform(&pts).unwrap()
    }

    fn em(points: &[Vec<f64>]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(points).unwrap()
    }

    #[test]
    fn w1_1d_diracs() {
        let d0 = em1(&[0.0]);
        assert_eq!(w1_exact_1d(&d0, &d0).unwrap(), 0.0);
        assert!((w1_exact_1d(&em1(&[-2.0]), &em1(&[3.5])).unwrap() - 5.5).abs() < 1e-15);
    }

    #[test]
    fn w1_1d_three_atom_pair() {
        // Brute-force minimum over all assignment couplings is 1.
        let mu = em1(&[0.0, 1.0, 2.0]);
        let nu = em1(&[0.0, 2.0, 4.0]);
        assert!((w1_exact_1d(&mu, &nu).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w1_1d_rejects_higher_dimensions() {
        let two_d = em(&[vec![0.0, 0.0]]);
        assert!(matches!(
            w1_exact_1d(&two_d, &two_d),
            Err(Error::NotOneDimensional { got: 2 })
        ));
    }

    #[test]
    fn wp_identical_measures() {
        let mu = em(&[vec![0.3, -1.0], vec![2.0, 0.5]]);
        assert!(wp_exact_small(&mu, &mu, 1).unwrap() < 1e-12);
        assert!(wp_exact_small(&mu, &mu, 2).unwrap() < 1e-9);
    }

    #[test]
    fn wp_single_coupling() {
        let mu = em(&[vec![0.0, 0.0]]);
        let nu = em(&[vec![3.0, 4.0]]);
        assert!((wp_exact_small(&mu, &nu, 1).unwrap() - 5.0).abs() < 1e-12);
        assert!((wp_exact_small(&mu, &nu, 2).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn wp_two_by_two_vertical_shift() {
        // Both vertex plans of the 2x2 transport polytope cost 1 and sqrt(2);
        // the identity-like matching wins.
        let mu = em(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let nu = em(&[vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert!((wp_exact_small(&mu, &nu, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wp_matches_1d_formula_on_weighted_inputs() {
        let mu = EmpiricalMeasure::from_samples(
            &[vec![0.0], vec![1.0], vec![4.0]],
            Some(&[0.2, 0.5, 0.3]),
        )
        .unwrap();
        let nu = EmpiricalMeasure::from_samples(
            &[vec![-1.0], vec![2.0]],
            Some(&[0.6, 0.4]),
        )
        .unwrap();
        let lp = wp_exact_small(&mu, &nu, 1).unwrap();
        let cdf = w1_exact_1d(&mu, &nu).unwrap();
        assert!(
            (lp - cdf).abs() < 1e-10,
            "simplex {lp} vs quantile formula {cdf}"
        );
    }

    #[test]
    fn wp_symmetry_is_bit_exact() {
        let mu = em(&[vec![0.1, 0.7], vec![-0.4, 2.0], vec![1.0, 1.0]]);
        let nu = em(&[vec![0.0, 0.0], vec![0.5, -1.5]]);
        assert_eq!(
            wp_exact_small(&mu, &nu, 1).unwrap().to_bits(),
            wp_exact_small(&nu, &mu, 1).unwrap().to_bits()
        );
    }

    #[test]
    fn wp_rejects_oversized_support_and_dim_mismatch() {
        let big: Vec<Vec<f64>> = (0..SUPPORT_CAP + 1).map(|i| vec![i as f64]).collect();
        let big = em(&big);
        let small = em1(&[0.0]);
        assert!(matches!(
            wp_exact_small(&big, &small, 1),
            Err(Error::SupportCap { .. })
        ));
        let two_d = em(&[vec![0.0, 0.0]]);
        assert!(wp_exact_small(&small, &two_d, 1).is_err());
        assert!(wp_exact_small(&small, &small, 3).is_err());
    }

    #[test]
    fn truncated_examples() {
        assert!((w1_truncated(&em1(&[0.0]), &em1(&[3.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!((w1_truncated(&em1(&[0.0]), &em1(&[0.25])).unwrap() - 0.25).abs() < 1e-12);
        // Two assignment plans: {0->0.5, 10->10} costs 0.25, the swap costs 1.
        let mu = em1(&[0.0, 10.0]);
        let nu = em1(&[0.5, 10.0]);
        assert!((w1_truncated(&mu, &nu).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn coupling_marginals_validate() {
        let mu = em(&[vec![0.0], vec![1.0], vec![5.0]]);
        let nu = EmpiricalMeasure::from_samples(
            &[vec![0.5], vec![4.0]],
            Some(&[0.25, 0.75]),
        )
        .unwrap();
        let (w1, plan) = optimal_coupling(&mu, &nu, 1).unwrap();
        plan.validate_marginals(mu.weights(), nu.weights()).unwrap();
        assert!((w1 - w1_exact_1d(&mu, &nu).unwrap()).abs() < 1e-10);
        assert!(plan.plan().iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn w1_auto_dispatch() {
        let a = em1(&[0.0, 1.0]);
        let b = em1(&[2.0, 3.0]);
        assert!((w1_auto(&a, &b).unwrap() - 2.0).abs() < 1e-12);
        let c = em(&[vec![0.0, 0.0]]);
        let d = em(&[vec![1.0, 0.0]]);
        assert!((w1_auto(&c, &d).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_shapes() {
        // 1 x m and n x 1 instances exercise trivial trees.
        let one = em1(&[0.0]);
        let many = em1(&[-1.0, 0.5, 2.0, 7.0]);
        let direct: f64 = many
            .atoms()
            .zip(many.weights())
            .map(|(x, &w)| w * x[0].abs())
            .sum();
        assert!((wp_exact_small(&one, &many, 1).unwrap() - direct).abs() < 1e-12);
        assert!((wp_exact_small(&many, &one, 1).unwrap() - direct).abs() < 1e-12);
    }
}
