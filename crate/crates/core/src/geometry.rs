//! Geodesics, the exponential map and comparison checks in the space of
//! spaces.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::couplings::{Coupling, SUPPORT_EPS};
use crate::distortion::{dist, DistResult, SolverConfig};
use crate::error::{Error, Result};
use crate::spaces::{size2, FiniteSpace, GAUGE_TOL};

/// A point on the geodesic induced by a coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPoint {
    pub t: f64,
    pub space: FiniteSpace,
    /// For each point of `space`, the pair `(x0, x1)` it came from.
    pub pairs: Vec<(usize, usize)>,
}

impl GeodesicPoint {
    /// Coupling of `space` with the endpoint `side` (0 or 1) through the pair projection.
    pub fn projection(&self, side: usize, endpoint_size: usize) -> Coupling {
        let mut plan = DMatrix::zeros(self.pairs.len(), endpoint_size);
        for (k, &(a, b)) in self.pairs.iter().enumerate() {
            plan[(k, if side == 0 { a } else { b })] = self.space.w(k);
        }
        Coupling::from_plan(plan).expect("projection plan is nonnegative")
    }
}

/// `d_t((x0,x1),(y0,y1)) = (1−t)d0(x0,y0) + t d1(x1,y1)` on the support of the coupling.
///
/// Pairs with mass at most `1e-15` are dropped.
pub fn geodesic_point(x0: &FiniteSpace, x1: &FiniteSpace, coupling: &Coupling, t: f64) -> Result<GeodesicPoint> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("geodesic parameter {t} outside [0,1]")));
    }
    coupling.check_marginals(x0.weights(), x1.weights())?;
    let support = coupling.support();
    let pairs: Vec<(usize, usize)> = support.iter().map(|&(i, j, _)| (i, j)).collect();
    let total: f64 = support.iter().map(|s| s.2).sum();
    let weights: Vec<f64> = support.iter().map(|s| s.2 / total).collect();
    let k = pairs.len();
    let gauge = DMatrix::from_fn(k, k, |a, b| {
        let ((i, j), (y, z)) = (pairs[a], pairs[b]);
        (1.0 - t) * x0.d(i, y) + t * x1.d(j, z)
    });
    Ok(GeodesicPoint { t, space: FiniteSpace::new(gauge, weights)?, pairs })
}

/// A symmetric perturbation of a gauge with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub g: DMatrix<f64>,
}

impl TangentVector {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        let n = g.nrows();
        if g.ncols() != n {
            return Err(Error::Shape(format!("tangent vector is {}x{}", n, g.ncols())));
        }
        let mut g = g;
        for i in 0..n {
            for j in 0..i {
                if (g[(i, j)] - g[(j, i)]).abs() > GAUGE_TOL {
                    return Err(Error::Asymmetric { i, j, a: g[(i, j)], b: g[(j, i)] });
                }
                g[(i, j)] = g[(j, i)];
            }
            g[(i, i)] = 0.0;
        }
        Ok(Self { g })
    }

    pub fn zeros(n: usize) -> Self {
        Self { g: DMatrix::zeros(n, n) }
    }

    /// Symmetrizes and clears the diagonal.
    pub fn symmetrized(m: &DMatrix<f64>) -> Self {
        let mut g = (m + m.transpose()) * 0.5;
        g.fill_diagonal(0.0);
        Self { g }
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// `Σ g_ij h_ij w_i w_j`.
    pub fn inner(&self, other: &TangentVector, base: &FiniteSpace) -> f64 {
        let n = self.n();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += self.g[(i, j)] * other.g[(i, j)] * base.w(i) * base.w(j);
            }
        }
        total
    }

    pub fn norm(&self, base: &FiniteSpace) -> f64 {
        self.inner(self, base).max(0.0).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { g: &self.g * s }
    }
}

/// `⟨X, d + t·g, m⟩`.
pub fn exponential(base: &FiniteSpace, v: &TangentVector, t: f64) -> Result<FiniteSpace> {
    if v.n() != base.n() {
        return Err(Error::Shape(format!("tangent vector has {} points, base has {}", v.n(), base.n())));
    }
    base.with_gauge(base.gauge() + &v.g * t)
}

/// Bounds on the angle `2·arcsin(D/2)` between unit-size spaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleBounds {
    pub lower: f64,
    pub upper: f64,
    pub certified: bool,
}

pub fn sphere_angle(d: f64) -> f64 {
    2.0 * (d / 2.0).clamp(0.0, 1.0).asin()
}

/// Intrinsic distance on the unit sphere of the space of spaces.
pub fn sphere_distance(x: &FiniteSpace, y: &FiniteSpace, config: &SolverConfig) -> Result<AngleBounds> {
    for s in [x, y] {
        let size = size2(s);
        if (size - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!("space has size {size}, expected 1")));
        }
    }
    let r = dist(x, y, 2.0, config)?;
    Ok(AngleBounds { lower: sphere_angle(r.lower), upper: sphere_angle(r.upper), certified: r.certified })
}

/// `s² + t² − 2st·cos θ`.
pub fn cone_distance_squared(s: f64, t: f64, angle: f64) -> f64 {
    s * s + t * t - 2.0 * s * t * angle.cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Result of a comparison check.
///
/// `slacks` are guaranteed lower bounds on the true slack: they equal it
/// when every distance involved is certified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub grid: Vec<f64>,
    pub slacks: Vec<f64>,
    pub certified: Vec<bool>,
    pub verdict: Verdict,
    pub tol: f64,
}

fn verdict(slacks: &[f64], certified: &[bool], tol: f64) -> Verdict {
    if slacks.iter().all(|&s| s >= -tol) {
        Verdict::Pass
    } else if slacks.iter().zip(certified).any(|(&s, &c)| c && s < -tol) {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    }
}

pub const DEFAULT_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Triangle comparison along the geodesic through `coupling`:
/// `D²(X_t,X') ≥ (1−t)D²(X0,X') + tD²(X1,X') − t(1−t)D²(X0,X1)`.
pub fn check_triangle_comparison(
    x0: &FiniteSpace,
    x1: &FiniteSpace,
    coupling: &Coupling,
    other: &FiniteSpace,
    grid: &[f64],
    config: &SolverConfig,
    tol: f64,
) -> Result<ComparisonReport> {
    let d01 = dist(x0, x1, 2.0, config)?;
    let d0 = dist(x0, other, 2.0, config)?;
    let d1 = dist(x1, other, 2.0, config)?;
    let points: Vec<DistResult> = grid
        .par_iter()
        .map(|&t| {
            let xt = geodesic_point(x0, x1, coupling, t)?;
            dist(&xt.space, other, 2.0, config)
        })
        .collect::<Result<_>>()?;
    let mut slacks = Vec::with_capacity(grid.len());
    let mut certified = Vec::with_capacity(grid.len());
    for (&t, dt) in grid.iter().zip(&points) {
        let rhs = (1.0 - t) * d0.upper.powi(2) + t * d1.upper.powi(2) - t * (1.0 - t) * d01.lower.powi(2);
        slacks.push(dt.lower.powi(2) - rhs);
        certified.push(dt.certified && d0.certified && d1.certified && d01.certified);
    }
    let v = verdict(&slacks, &certified, tol);
    Ok(ComparisonReport { grid: grid.to_vec(), slacks, certified, verdict: v, tol })
}

/// Quadruple comparison `Σ_i D²(X0,Xi) − ⅓ Σ_{i<j} D²(Xi,Xj)`.
pub fn check_quadruple(spaces: [&FiniteSpace; 4], config: &SolverConfig, tol: f64) -> Result<ComparisonReport> {
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let results: Vec<DistResult> = pairs
        .par_iter()
        .map(|&(a, b)| dist(spaces[a], spaces[b], 2.0, config))
        .collect::<Result<_>>()?;
    let mut slack = 0.0;
    for (&(a, _), r) in pairs.iter().zip(&results) {
        if a == 0 {
            slack += r.lower.powi(2);
        } else {
            slack -= r.upper.powi(2) / 3.0;
        }
    }
    let all = results.iter().all(|r| r.certified);
    let v = verdict(&[slack], &[all], tol);
    Ok(ComparisonReport { grid: Vec::new(), slacks: vec![slack], certified: vec![all], verdict: v, tol })
}

/// True when the coupling has no mass below the support threshold to prune.
pub fn is_fully_supported(coupling: &Coupling) -> bool {
    coupling.plan().iter().all(|&m| m > SUPPORT_EPS)
}
