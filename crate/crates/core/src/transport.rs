//! Linear transport machinery: an exact transportation simplex, vertex
//! enumeration of transportation polytopes and one-dimensional quantile
//! matching.

use std::collections::{HashSet, VecDeque};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Number of Dantzig pivots before switching to Bland's rule.
const DANTZIG_PIVOTS: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cell {
    row: usize,
    col: usize,
}

/// Minimizes `Σ cost_ij x_ij` over nonnegative `x` with row sums `a` and
/// column sums `b`.
///
/// Runs the transportation simplex from a northwest-corner basis. The
/// returned plan is a vertex of the polytope. Ties for the entering cell are
/// broken by the first cell found in row-major order.
pub fn solve_transport(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Result<DMatrix<f64>> {
    let (m, n) = (a.len(), b.len());
    if cost.nrows() != m || cost.ncols() != n {
        return Err(Error::Shape(format!("cost is {}x{}, marginals are {m} and {n}", cost.nrows(), cost.ncols())));
    }
    if m == 0 || n == 0 {
        return Err(Error::Shape("empty marginal".into()));
    }
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    if (sa - sb).abs() > 1e-9 {
        return Err(Error::Marginal(format!("total masses differ: {sa} vs {sb}")));
    }

    let (mut basis, mut x) = northwest_corner(a, b);
    let mut is_basic = DMatrix::from_element(m, n, false);
    for c in &basis {
        is_basic[(c.row, c.col)] = true;
    }
    let scale = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let eps = 1e-12 * (1.0 + scale);
    let max_pivots = DANTZIG_PIVOTS + 50 * m * n * (m + n);

    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    for pivot in 0..=max_pivots {
        potentials(cost, &basis, m, n, &mut u, &mut v);
        let mut entering: Option<(Cell, f64)> = None;
        'scan: for i in 0..m {
            for j in 0..n {
                if is_basic[(i, j)] {
                    continue;
                }
                let reduced = cost[(i, j)] - u[i] - v[j];
                if reduced < -eps {
                    let better = entering.map_or(true, |(_, r)| reduced < r);
                    if better {
                        entering = Some((Cell { row: i, col: j }, reduced));
                    }
                    if pivot >= DANTZIG_PIVOTS {
                        break 'scan;
                    }
                }
            }
        }
        let Some((enter, _)) = entering else {
            let mut plan = DMatrix::zeros(m, n);
            for (c, &val) in basis.iter().zip(&x) {
                plan[(c.row, c.col)] = val.max(0.0);
            }
            return Ok(plan);
        };

        let path = tree_path(&basis, m, n, enter.row, m + enter.col);
        // path edges alternate starting with a donor (minus) cell
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 && (x[e] < theta || (x[e] == theta && e < leave && pivot >= DANTZIG_PIVOTS)) {
                theta = x[e];
                leave = e;
            }
        }
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 {
                x[e] -= theta;
            } else {
                x[e] += theta;
            }
        }
        let old = basis[leave];
        is_basic[(old.row, old.col)] = false;
        is_basic[(enter.row, enter.col)] = true;
        basis[leave] = enter;
        x[leave] = theta;
    }
    Err(Error::Numerical("transportation simplex did not terminate".into()))
}

fn northwest_corner(a: &[f64], b: &[f64]) -> (Vec<Cell>, Vec<f64>) {
    let (m, n) = (a.len(), b.len());
    let mut ra = a.to_vec();
    let mut rb = b.to_vec();
    let mut basis = Vec::with_capacity(m + n - 1);
    let mut x = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let val = if i == m - 1 && j == n - 1 { ra[i].max(rb[j]).max(0.0) } else { ra[i].min(rb[j]).max(0.0) };
        basis.push(Cell { row: i, col: j });
        x.push(val);
        ra[i] -= val;
        rb[j] -= val;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || ra[i] <= rb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    (basis, x)
}

fn potentials(cost: &DMatrix<f64>, basis: &[Cell], m: usize, n: usize, u: &mut [f64], v: &mut [f64]) {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
    for (k, c) in basis.iter().enumerate() {
        adj[c.row].push(k);
        adj[m + c.col].push(k);
    }
    let mut seen = vec![false; m + n];
    let mut queue = VecDeque::new();
    for root in 0..m + n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        if root < m {
            u[root] = 0.0;
        } else {
            v[root - m] = 0.0;
        }
        queue.push_back(root);
        while let Some(node) = queue.pop_front() {
            for &k in &adj[node] {
                let c = basis[k];
                let (r, col) = (c.row, m + c.col);
                let other = if node == r { col } else { r };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                if other < m {
                    u[other] = cost[(c.row, c.col)] - v[c.col];
                } else {
                    v[c.col] = cost[(c.row, c.col)] - u[c.row];
                }
                queue.push_back(other);
            }
        }
    }
}

/// Basis indices of the tree path from node `from` to node `to`, in order.
fn tree_path(basis: &[Cell], m: usize, n: usize, from: usize, to: usize) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
    for (k, c) in basis.iter().enumerate() {
        adj[c.row].push(k);
        adj[m + c.col].push(k);
    }
    let mut via = vec![usize::MAX; m + n];
    let mut seen = vec![false; m + n];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &k in &adj[node] {
            let c = basis[k];
            let other = if node == c.row { m + c.col } else { c.row };
            if !seen[other] {
                seen[other] = true;
                via[other] = k;
                queue.push_back(other);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = to;
    while node != from {
        let k = via[node];
        path.push(k);
        let c = basis[k];
        node = if node == c.row { m + c.col } else { c.row };
    }
    path.reverse();
    path
}

/// Number of spanning trees of the complete bipartite graph `K_{m,n}`,
/// saturating at `u128::MAX`.
pub fn spanning_tree_count(m: usize, n: usize) -> u128 {
    if m == 0 || n == 0 {
        return 0;
    }
    let pow = |base: usize, exp: usize| -> u128 {
        (0..exp).fold(1u128, |acc, _| acc.saturating_mul(base as u128))
    };
    pow(m, n - 1).saturating_mul(pow(n, m - 1))
}

/// All vertices of the transportation polytope with marginals `a`, `b`.
///
/// Every vertex is supported on a spanning forest of `K_{m,n}`; the search
/// visits all spanning trees and keeps the nonnegative basic solutions,
/// deduplicated. Cost grows like the tree count, so callers should guard
/// with [`spanning_tree_count`].
pub fn transport_vertices(a: &[f64], b: &[f64]) -> Vec<DMatrix<f64>> {
    let (m, n) = (a.len(), b.len());
    let edges: Vec<Cell> = (0..m).flat_map(|i| (0..n).map(move |j| Cell { row: i, col: j })).collect();
    let mut search = VertexSearch { a, b, m, n, edges, chosen: Vec::new(), seen: HashSet::new(), out: Vec::new() };
    let parent: Vec<usize> = (0..m + n).collect();
    search.recurse(0, parent);
    search.out
}

struct VertexSearch<'a> {
    a: &'a [f64],
    b: &'a [f64],
    m: usize,
    n: usize,
    edges: Vec<Cell>,
    chosen: Vec<Cell>,
    seen: HashSet<Vec<i64>>,
    out: Vec<DMatrix<f64>>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl VertexSearch<'_> {
    fn recurse(&mut self, next: usize, parent: Vec<usize>) {
        let needed = self.m + self.n - 1;
        if self.chosen.len() == needed {
            self.record();
            return;
        }
        if self.edges.len() - next < needed - self.chosen.len() {
            return;
        }
        let e = self.edges[next];
        let mut with = parent.clone();
        let (ra, rb) = (find(&mut with, e.row), find(&mut with, self.m + e.col));
        if ra != rb {
            with[ra] = rb;
            self.chosen.push(e);
            self.recurse(next + 1, with);
            self.chosen.pop();
        }
        self.recurse(next + 1, parent);
    }

    fn record(&mut self) {
        let (m, n) = (self.m, self.n);
        let mut ra = self.a.to_vec();
        let mut rb = self.b.to_vec();
        let mut degree = vec![0usize; m + n];
        for c in &self.chosen {
            degree[c.row] += 1;
            degree[m + c.col] += 1;
        }
        let mut alive = vec![true; self.chosen.len()];
        let mut plan = DMatrix::zeros(m, n);
        for _ in 0..self.chosen.len() {
            // peel a leaf
            let Some((k, leaf_is_row)) = self.chosen.iter().enumerate().filter(|(k, _)| alive[*k]).find_map(|(k, c)| {
                if degree[c.row] == 1 {
                    Some((k, true))
                } else if degree[m + c.col] == 1 {
                    Some((k, false))
                } else {
                    None
                }
            }) else {
                return;
            };
            let c = self.chosen[k];
            let val = if leaf_is_row { ra[c.row] } else { rb[c.col] };
            if val < -1e-12 {
                return;
            }
            let val = val.max(0.0);
            plan[(c.row, c.col)] = val;
            ra[c.row] -= val;
            rb[c.col] -= val;
            degree[c.row] -= 1;
            degree[m + c.col] -= 1;
            alive[k] = false;
        }
        let key: Vec<i64> = plan.iter().map(|&x| (x * 1e12).round() as i64).collect();
        if self.seen.insert(key) {
            self.out.push(plan);
        }
    }
}

/// Optimal one-dimensional transport cost between two discrete laws given
/// as `(value, mass)` atoms, by quantile matching.
///
/// Returns `W_p^p` for finite `p` and `W_∞` for `p = ∞`.
pub fn quantile_transport_cost(first: &[(f64, f64)], second: &[(f64, f64)], p: f64) -> f64 {
    let sorted = |atoms: &[(f64, f64)]| {
        let mut v: Vec<(f64, f64)> = atoms.iter().copied().filter(|&(_, m)| m > 0.0).collect();
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        v
    };
    let (xs, ys) = (sorted(first), sorted(second));
    let (mut i, mut j) = (0usize, 0usize);
    let (mut rx, mut ry) = (xs.first().map_or(0.0, |a| a.1), ys.first().map_or(0.0, |a| a.1));
    let mut total = 0.0f64;
    while i < xs.len() && j < ys.len() {
        let mass = rx.min(ry);
        let gap = (xs[i].0 - ys[j].0).abs();
        if p.is_infinite() {
            if mass > 1e-15 {
                total = total.max(gap);
            }
        } else if mass > 0.0 {
            total += mass * gap.powf(p);
        }
        rx -= mass;
        ry -= mass;
        if rx <= 1e-15 {
            i += 1;
            if i < xs.len() {
                rx += xs[i].1;
            }
        }
        if ry <= 1e-15 {
            j += 1;
            if j < ys.len() {
                ry += ys[j].1;
            }
        }
    }
    total
}
