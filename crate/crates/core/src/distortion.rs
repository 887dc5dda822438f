//! Distortion distance between finite spaces with certified bounds.
//!
//! Upper bounds come from explicit couplings (exhaustive permutation search,
//! vertex enumeration, Frank–Wolfe). Lower bounds come from the size
//! difference, the law of distances and a per-point transport bound. For
//! `p = 2` the objective is `size0² + size1² − 2Q(μ)` with `Q` bilinear in
//! the gauges; when both gauges are of negative type `Q` is convex on the
//! coupling polytope and its maximum sits at a vertex, so enumerating
//! vertices gives the exact value.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::couplings::{diagonal_coupling, distortion, permutation_coupling, product_coupling, Coupling};
use crate::error::{Error, Result};
use crate::spaces::{pow_abs, size_p, Exponent, FiniteSpace};
use crate::transport::{quantile_transport_cost, solve_transport, spanning_tree_count, transport_vertices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Auto,
    Exhaustive,
    FrankWolfe,
}

impl std::str::FromStr for Solver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Solver::Auto),
            "exhaustive" => Ok(Solver::Exhaustive),
            "fw" | "frank_wolfe" => Ok(Solver::FrankWolfe),
            _ => Err(Error::Parse(format!("unknown solver {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub exhaustive_bound: usize,
    pub fw_restarts: usize,
    pub fw_max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Largest spanning-tree count for which transport vertices are enumerated.
    pub vertex_bound: u64,
    pub solver: Solver,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            exhaustive_bound: 8,
            fw_restarts: 16,
            fw_max_iter: 1000,
            tol: 1e-9,
            seed: 0,
            vertex_bound: 500_000,
            solver: Solver::Auto,
        }
    }
}

impl SolverConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistResult {
    pub lower: f64,
    pub upper: f64,
    pub best_coupling: Coupling,
    pub certified: bool,
    pub solver_trace: Vec<(String, f64)>,
}

impl DistResult {
    /// The certified value, if any.
    pub fn value(&self) -> Option<f64> {
        self.certified.then_some(self.upper)
    }

    pub fn transpose(&self) -> Self {
        Self { best_coupling: self.best_coupling.transpose(), ..self.clone() }
    }
}

/// `|size_p(X0) − size_p(X1)|`.
pub fn lower_bound_size(x0: &FiniteSpace, x1: &FiniteSpace, p: f64) -> Result<f64> {
    Ok((size_p(x0, p)? - size_p(x1, p)?).abs())
}

fn distance_law(x: &FiniteSpace) -> Vec<(f64, f64)> {
    let n = x.n();
    let mut atoms = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            atoms.push((x.d(i, j), x.w(i) * x.w(j)));
        }
    }
    atoms
}

/// One-dimensional `W_p` between the laws of `d0` under `m0²` and `d1` under `m1²`.
pub fn lower_bound_distance_distribution(x0: &FiniteSpace, x1: &FiniteSpace, p: f64) -> Result<f64> {
    Ok(match Exponent::new(p)? {
        Exponent::Infinity => quantile_transport_cost(&distance_law(x0), &distance_law(x1), f64::INFINITY),
        Exponent::Finite(p) => quantile_transport_cost(&distance_law(x0), &distance_law(x1), p).max(0.0).powf(1.0 / p),
    })
}

/// Transport bound with cost `W_p^p(law of d0(x,·), law of d1(x',·))`.
pub fn lower_bound_local_distributions(x0: &FiniteSpace, x1: &FiniteSpace, p: f64) -> Result<f64> {
    let p = match Exponent::new(p)? {
        Exponent::Finite(p) => p,
        Exponent::Infinity => return Ok(0.0),
    };
    let row_law = |x: &FiniteSpace, i: usize| (0..x.n()).map(|j| (x.d(i, j), x.w(j))).collect::<Vec<_>>();
    let laws0: Vec<_> = (0..x0.n()).map(|i| row_law(x0, i)).collect();
    let laws1: Vec<_> = (0..x1.n()).map(|i| row_law(x1, i)).collect();
    let cost = DMatrix::from_fn(x0.n(), x1.n(), |i, j| quantile_transport_cost(&laws0[i], &laws1[j], p));
    let plan = solve_transport(&cost, x0.weights(), x1.weights())?;
    Ok(cost.component_mul(&plan).sum().max(0.0).powf(1.0 / p))
}

/// True when `J·D·J ⪯ 0` on the support, with `J` the centering matrix.
pub fn is_negative_type(x: &FiniteSpace) -> bool {
    let x = x.restrict_to_support();
    let n = x.n();
    if n <= 2 {
        return x.gauge().iter().all(|&d| d >= 0.0);
    }
    let j = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let centered = &j * x.gauge() * &j;
    let scale = x.gauge().iter().fold(0.0f64, |a, d| a.max(d.abs()));
    let eig = SymmetricEigen::new(centered);
    eig.eigenvalues.iter().all(|&l| l <= 1e-10 * (1.0 + scale * n as f64))
}

/// Minimum permutation-coupling distortion for uniform spaces of equal size.
pub fn solve_exhaustive_permutations(x0: &FiniteSpace, x1: &FiniteSpace, p: f64, bound: usize) -> Result<(f64, Coupling)> {
    let exponent = Exponent::new(p)?;
    let n = x0.n();
    if !x0.is_uniform() || !x1.is_uniform() || x1.n() != n {
        return Err(Error::Precondition("exhaustive permutation search needs uniform spaces of equal size".into()));
    }
    if n > bound {
        return Err(Error::SizeBound { size: n, bound });
    }
    let mut sigma: Vec<usize> = (0..n).collect();
    let mut best = (f64::INFINITY, sigma.clone());
    loop {
        let mut cost = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let gap = x0.d(i, j) - x1.d(sigma[i], sigma[j]);
                cost = match exponent {
                    Exponent::Infinity => cost.max(gap.abs()),
                    Exponent::Finite(p) => cost + pow_abs(gap, p),
                };
            }
        }
        if cost < best.0 {
            best = (cost, sigma.clone());
        }
        if !next_permutation(&mut sigma) {
            break;
        }
    }
    let coupling = permutation_coupling(&best.1, x0.weights())?;
    let value = distortion(&coupling, x0, x1, p)?;
    Ok((value, coupling))
}

/// Advances to the next permutation in lexicographic order.
pub fn next_permutation(a: &mut [usize]) -> bool {
    let n = a.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Minimum distortion over all vertices of the coupling polytope.
pub fn solve_vertices(x0: &FiniteSpace, x1: &FiniteSpace, p: f64, bound: u64) -> Result<(f64, Coupling)> {
    let count = spanning_tree_count(x0.n(), x1.n());
    if count > bound as u128 {
        return Err(Error::SizeBound { size: count.min(usize::MAX as u128) as usize, bound: bound as usize });
    }
    let mut best: Option<(f64, Coupling)> = None;
    for plan in transport_vertices(x0.weights(), x1.weights()) {
        let c = Coupling::from_plan(plan)?;
        let value = distortion(&c, x0, x1, p)?;
        if best.as_ref().map_or(true, |b| value < b.0) {
            best = Some((value, c));
        }
    }
    best.ok_or_else(|| Error::Numerical("no vertex found".into()))
}

fn bilinear(d0: &DMatrix<f64>, d1: &DMatrix<f64>, mu: &DMatrix<f64>, nu: &DMatrix<f64>) -> f64 {
    (d0 * mu * d1).component_mul(nu).sum()
}

/// One Frank–Wolfe ascent on `Q(μ) = ⟨μ, D0 μ D1⟩` from `start`.
fn frank_wolfe_run(x0: &FiniteSpace, x1: &FiniteSpace, start: DMatrix<f64>, max_iter: usize) -> Result<(f64, DMatrix<f64>)> {
    let (d0, d1) = (x0.gauge(), x1.gauge());
    let mut mu = start;
    let mut q = bilinear(d0, d1, &mu, &mu);
    for _ in 0..max_iter {
        let g = d0 * &mu * d1;
        let target = solve_transport(&(-&g), x0.weights(), x1.weights())?;
        let delta = &target - &mu;
        let slope = 2.0 * g.component_mul(&delta).sum();
        if slope <= 1e-15 * (1.0 + q.abs()) {
            break;
        }
        let curve = bilinear(d0, d1, &delta, &delta);
        let gamma = if curve < 0.0 { (-slope / (2.0 * curve)).clamp(0.0, 1.0) } else { 1.0 };
        let next_mu = &mu + &delta * gamma;
        let next_q = bilinear(d0, d1, &next_mu, &next_mu);
        let improvement = next_q - q;
        if improvement <= 0.0 {
            break;
        }
        mu = next_mu;
        q = next_q;
        if improvement <= 1e-10 * q.abs().max(1e-300) {
            break;
        }
    }
    Ok((q, mu))
}

/// Frank–Wolfe with restarts for `p = 2`.
///
/// Starts from the product coupling, the diagonal when both weight vectors
/// agree, and `restarts` random vertices. Restarts run in parallel; the
/// reduction is by value and then by restart index, so the result does not
/// depend on scheduling.
pub fn solve_frank_wolfe(x0: &FiniteSpace, x1: &FiniteSpace, p: f64, restarts: usize, max_iter: usize, seed: u64) -> Result<(f64, Coupling)> {
    if p != 2.0 {
        return Err(Error::Precondition(format!("Frank-Wolfe needs p = 2, got {p}")));
    }
    let (m, n) = (x0.n(), x1.n());
    let mut starts = vec![product_coupling(x0.weights(), x1.weights()).plan().clone()];
    if x0.weights() == x1.weights() {
        starts.push(diagonal_coupling(x0.weights()).plan().clone());
    }
    let randoms: Vec<DMatrix<f64>> = (0..restarts)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let cost = DMatrix::from_fn(m, n, |_, _| rng.gen::<f64>());
            solve_transport(&cost, x0.weights(), x1.weights())
        })
        .collect::<Result<_>>()?;
    starts.extend(randoms);
    let runs: Vec<(f64, DMatrix<f64>)> = starts
        .into_par_iter()
        .map(|s| frank_wolfe_run(x0, x1, s, max_iter))
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, Coupling)> = None;
    for (_, plan) in runs {
        let c = Coupling::from_plan(plan.map(|x| x.max(0.0)))?;
        let value = distortion(&c, x0, x1, 2.0)?;
        if best.as_ref().map_or(true, |b| value < b.0) {
            best = Some((value, c));
        }
    }
    Ok(best.expect("at least one start"))
}

/// Quotient distance on `n`-point spaces: the best relabeled `ℓ²` gap with
/// normalization `2/n² Σ_{i<j}`.
pub fn npoint_quotient_distance(f: &FiniteSpace, g: &FiniteSpace, bound: usize) -> Result<f64> {
    solve_exhaustive_permutations(f, g, 2.0, bound).map(|(v, _)| v)
}

fn lift(c: &Coupling, s0: &[usize], s1: &[usize], n0: usize, n1: usize) -> Coupling {
    let mut plan = DMatrix::zeros(n0, n1);
    for (a, &i) in s0.iter().enumerate() {
        for (b, &j) in s1.iter().enumerate() {
            plan[(i, j)] = c.plan()[(a, b)];
        }
    }
    Coupling::from_plan(plan).expect("lifted plan is nonnegative")
}

/// Distortion distance `D_p(X0, X1)` as a certified interval.
pub fn dist(x0: &FiniteSpace, x1: &FiniteSpace, p: f64, config: &SolverConfig) -> Result<DistResult> {
    let exponent = Exponent::new(p)?;
    let (s0, s1) = (x0.support(), x1.support());
    let (y0, y1) = (x0.restrict_to_support(), x1.restrict_to_support());
    if y0.n() * y1.n() > crate::couplings::MAX_PLAN_ENTRIES {
        return Err(Error::SizeBound { size: y0.n() * y1.n(), bound: crate::couplings::MAX_PLAN_ENTRIES });
    }
    let mut trace = Vec::new();
    let mut lower = 0.0f64;
    let mut candidates: Vec<(f64, Coupling)> = Vec::new();

    if y0.n() == 1 || y1.n() == 1 {
        let c = product_coupling(y0.weights(), y1.weights());
        let value = distortion(&c, &y0, &y1, p)?;
        trace.push(("unique_coupling".to_string(), value));
        return Ok(DistResult { lower: value, upper: value, best_coupling: lift(&c, &s0, &s1, x0.n(), x1.n()), certified: true, solver_trace: trace });
    }

    for (name, bound) in [
        ("lower_size", lower_bound_size(&y0, &y1, p)?),
        ("lower_distance_law", lower_bound_distance_distribution(&y0, &y1, p)?),
        ("lower_local_laws", lower_bound_local_distributions(&y0, &y1, p)?),
    ] {
        trace.push((name.to_string(), bound));
        lower = lower.max(bound);
    }

    let uniform_square = y0.is_uniform() && y1.is_uniform() && y0.n() == y1.n();
    let convex = exponent == Exponent::two() && is_negative_type(&y0) && is_negative_type(&y1);
    let mut exact: Option<f64> = None;

    let run_exhaustive = matches!(config.solver, Solver::Auto | Solver::Exhaustive);
    if run_exhaustive && uniform_square && y0.n() <= config.exhaustive_bound {
        let (value, c) = solve_exhaustive_permutations(&y0, &y1, p, config.exhaustive_bound)?;
        trace.push(("exhaustive_permutations".to_string(), value));
        if convex {
            exact = Some(value);
        }
        candidates.push((value, c));
    } else if run_exhaustive && spanning_tree_count(y0.n(), y1.n()) <= config.vertex_bound as u128 {
        let (value, c) = solve_vertices(&y0, &y1, p, config.vertex_bound)?;
        trace.push(("vertex_enumeration".to_string(), value));
        if convex {
            exact = Some(value);
        }
        candidates.push((value, c));
    } else if config.solver == Solver::Exhaustive {
        return Err(Error::Precondition("instance too large for exhaustive search".into()));
    }

    let run_fw = matches!(config.solver, Solver::Auto | Solver::FrankWolfe) && exponent == Exponent::two();
    if config.solver == Solver::FrankWolfe && exponent != Exponent::two() {
        return Err(Error::Precondition(format!("Frank-Wolfe needs p = 2, got {p}")));
    }
    if run_fw {
        let (value, c) = solve_frank_wolfe(&y0, &y1, p, config.fw_restarts, config.fw_max_iter, config.seed)?;
        trace.push(("frank_wolfe".to_string(), value));
        candidates.push((value, c));
    }
    if candidates.is_empty() {
        return Err(Error::Precondition(format!("no solver applies to p = {p} on {}x{} points", y0.n(), y1.n())));
    }

    let (upper, best) = candidates.into_iter().fold(None::<(f64, Coupling)>, |acc, (v, c)| match acc {
        Some((bv, bc)) if bv <= v => Some((bv, bc)),
        _ => Some((v, c)),
    })
    .expect("nonempty");
    if let Some(value) = exact {
        trace.push(("vertex_certificate".to_string(), value));
        lower = lower.max(value.min(upper));
    }
    let lower = lower.min(upper);
    Ok(DistResult {
        lower,
        upper,
        best_coupling: lift(&best, &s0, &s1, x0.n(), x1.n()),
        certified: upper - lower <= config.tol,
        solver_trace: trace,
    })
}
