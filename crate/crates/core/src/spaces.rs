//! Finite gauged measure spaces.
//!
//! A [`FiniteSpace`] is a symmetric `n×n` gauge matrix with zero diagonal
//! together with a probability vector of point masses. It is the concrete
//! representative of a (pseudo) metric measure space used throughout the
//! crate. Values are immutable once constructed.

use nalgebra::DMatrix;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for axiom checks on gauge entries.
pub const GAUGE_TOL: f64 = 1e-12;
/// Absolute tolerance on the total mass.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Which axioms a gauge satisfies, ordered from weakest to strongest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Gauged,
    PseudoMetric,
    Metric,
}

impl SpaceKind {
    pub fn satisfies_triangle(self) -> bool {
        self >= SpaceKind::PseudoMetric
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSpace {
    gauge: DMatrix<f64>,
    weights: Vec<f64>,
    exact_weights: Option<Vec<Rational64>>,
    name: Option<String>,
}

impl FiniteSpace {
    /// Builds a space from a gauge matrix and weights.
    ///
    /// The diagonal is forced to zero. Fails on shape mismatch, asymmetry
    /// beyond [`GAUGE_TOL`], negative weights or a total mass off by more
    /// than [`WEIGHT_SUM_TOL`].
    pub fn new(gauge: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::Shape("space must have at least one point".into()));
        }
        if gauge.nrows() != n || gauge.ncols() != n {
            return Err(Error::Shape(format!(
                "gauge is {}x{} but there are {} weights",
                gauge.nrows(),
                gauge.ncols(),
                n
            )));
        }
        for (index, &weight) in weights.iter().enumerate() {
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(Error::NegativeWeight { index, weight });
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightSum(total));
        }
        let mut gauge = gauge;
        for i in 0..n {
            for j in 0..n {
                let a = gauge[(i, j)];
                if !a.is_finite() {
                    return Err(Error::InvalidParameter(format!("gauge entry ({i},{j}) is {a}")));
                }
                let b = gauge[(j, i)];
                if (a - b).abs() > GAUGE_TOL {
                    return Err(Error::Asymmetric { i, j, a, b });
                }
            }
            gauge[(i, i)] = 0.0;
        }
        // exact symmetry from here on
        for i in 0..n {
            for j in (i + 1)..n {
                gauge[(j, i)] = gauge[(i, j)];
            }
        }
        Ok(Self { gauge, weights, exact_weights: None, name: None })
    }

    /// Builds a space with exact rational weights, which must sum to one.
    pub fn with_rational_weights(gauge: DMatrix<f64>, weights: Vec<Rational64>) -> Result<Self> {
        let total: Rational64 = weights.iter().copied().sum();
        if total != Rational64::from_integer(1) {
            return Err(Error::WeightSum(ratio_to_f64(total)));
        }
        let approx = weights.iter().map(|&w| ratio_to_f64(w)).collect();
        let mut space = Self::new(gauge, approx)?;
        space.exact_weights = Some(weights);
        Ok(space)
    }

    /// Uniform weights on the given gauge.
    pub fn uniform(gauge: DMatrix<f64>) -> Result<Self> {
        let n = gauge.nrows() as i64;
        if n == 0 {
            return Err(Error::Shape("space must have at least one point".into()));
        }
        Self::with_rational_weights(gauge, vec![Rational64::new(1, n); n as usize])
    }

    /// The one-point space.
    pub fn delta() -> Self {
        Self::uniform(DMatrix::zeros(1, 1)).expect("one-point space is valid").named("delta")
    }

    /// Complete graph on `n` vertices with unit distances and uniform mass.
    pub fn complete_graph(n: usize) -> Self {
        let gauge = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        Self::uniform(gauge).expect("complete graph is valid").named(format!("K{n}"))
    }

    /// Cycle graph on `n` vertices with the graph distance and uniform mass.
    pub fn discrete_circle(n: usize) -> Self {
        let gauge = DMatrix::from_fn(n, n, |i, j| {
            let k = i.abs_diff(j);
            k.min(n - k) as f64
        });
        Self::uniform(gauge).expect("circle is valid").named(format!("circle{n}"))
    }

    /// Path graph on `n` vertices with unit edges and uniform mass.
    pub fn path(n: usize) -> Self {
        let gauge = DMatrix::from_fn(n, n, |i, j| i.abs_diff(j) as f64);
        Self::uniform(gauge).expect("path is valid").named(format!("path{n}"))
    }

    /// Euclidean distances between the given points, uniform mass.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        let gauge = DMatrix::from_fn(n, n, |i, j| {
            points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        });
        Self::uniform(gauge)
    }

    /// Two points at distance `a` with uniform mass.
    pub fn two_point(a: f64) -> Self {
        Self::uniform(DMatrix::from_row_slice(2, 2, &[0.0, a, a, 0.0])).expect("two-point space is valid")
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn gauge(&self) -> &DMatrix<f64> {
        &self.gauge
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn exact_weights(&self) -> Option<&[Rational64]> {
        self.exact_weights.as_deref()
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.gauge[(i, j)]
    }

    #[inline]
    pub fn w(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Indices of points with positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    /// True when all weights are exactly `1/n`.
    pub fn is_uniform(&self) -> bool {
        let n = self.n();
        match &self.exact_weights {
            Some(exact) => exact.iter().all(|&w| w == Rational64::new(1, n as i64)),
            None => self.weights.iter().all(|&w| (w - 1.0 / n as f64).abs() <= 1e-15),
        }
    }

    /// Returns a copy with a new gauge, same weights.
    pub fn with_gauge(&self, gauge: DMatrix<f64>) -> Result<Self> {
        let mut space = Self::new(gauge, self.weights.clone())?;
        space.exact_weights = self.exact_weights.clone();
        space.name = self.name.clone();
        Ok(space)
    }

    /// Relabels points: point `i` of the result is point `perm[i]` of `self`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n || !is_permutation(perm) {
            return Err(Error::InvalidParameter("not a permutation".into()));
        }
        let gauge = DMatrix::from_fn(n, n, |i, j| self.gauge[(perm[i], perm[j])]);
        let mut out = Self::new(gauge, perm.iter().map(|&p| self.weights[p]).collect())?;
        out.exact_weights = self.exact_weights.as_ref().map(|e| perm.iter().map(|&p| e[p]).collect());
        out.name = self.name.clone();
        Ok(out)
    }

    /// Drops points of zero mass.
    pub fn restrict_to_support(&self) -> Self {
        let support = self.support();
        if support.len() == self.n() {
            return self.clone();
        }
        let k = support.len();
        let gauge = DMatrix::from_fn(k, k, |a, b| self.gauge[(support[a], support[b])]);
        let weights: Vec<f64> = support.iter().map(|&i| self.weights[i]).collect();
        let total: f64 = weights.iter().sum();
        let mut out = Self::new(gauge, weights.iter().map(|w| w / total).collect()).expect("support is valid");
        out.exact_weights = self.exact_weights.as_ref().map(|e| support.iter().map(|&i| e[i]).collect());
        out.name = self.name.clone();
        out
    }
}

pub(crate) fn ratio_to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub(crate) fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// Classifies the gauge of `space`.
///
/// Triangle and positivity checks run over the support only.
pub fn validate(space: &FiniteSpace) -> SpaceKind {
    let support = space.support();
    let mut positive = true;
    for &i in &support {
        for &j in &support {
            let dij = space.d(i, j);
            if dij < -GAUGE_TOL {
                return SpaceKind::Gauged;
            }
            if i != j && dij <= GAUGE_TOL {
                positive = false;
            }
        }
    }
    for &i in &support {
        for &j in &support {
            for &k in &support {
                if space.d(i, k) > space.d(i, j) + space.d(j, k) + GAUGE_TOL {
                    return SpaceKind::Gauged;
                }
            }
        }
    }
    if positive {
        SpaceKind::Metric
    } else {
        SpaceKind::PseudoMetric
    }
}

/// Exponent of an `L^p` quantity: finite `p ≥ 1` or infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub fn new(p: f64) -> Result<Self> {
        if p == f64::INFINITY {
            Ok(Exponent::Infinity)
        } else if p >= 1.0 && p.is_finite() {
            Ok(Exponent::Finite(p))
        } else {
            Err(Error::InvalidParameter(format!("exponent p = {p} must be >= 1 or infinity")))
        }
    }

    pub fn two() -> Self {
        Exponent::Finite(2.0)
    }

    pub fn value(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Infinity => f64::INFINITY,
        }
    }
}

impl std::str::FromStr for Exponent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "infinity" | "∞" => Ok(Exponent::Infinity),
            _ => Exponent::new(s.parse::<f64>().map_err(|e| Error::Parse(format!("exponent {s:?}: {e}")))?),
        }
    }
}

#[inline]
pub(crate) fn pow_abs(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 1.0 {
        x.abs()
    } else {
        x.abs().powf(p)
    }
}

/// The `L^p`-size `(Σ |d_ij|^p w_i w_j)^{1/p}`; for `p = ∞` the diameter of the support.
pub fn size_p(space: &FiniteSpace, p: f64) -> Result<f64> {
    Ok(match Exponent::new(p)? {
        Exponent::Infinity => {
            let support = space.support();
            let mut diam = 0.0f64;
            for &i in &support {
                for &j in &support {
                    diam = diam.max(space.d(i, j).abs());
                }
            }
            diam
        }
        Exponent::Finite(p) => {
            let n = space.n();
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    total += pow_abs(space.d(i, j), p) * space.w(i) * space.w(j);
                }
            }
            total.powf(1.0 / p)
        }
    })
}

/// Shorthand for the `L^2`-size.
pub fn size2(space: &FiniteSpace) -> f64 {
    size_p(space, 2.0).expect("p = 2 is valid")
}

/// Multiplies the gauge by `t ≥ 0`.
pub fn scale(space: &FiniteSpace, t: f64) -> Result<FiniteSpace> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("scale factor {t} must be nonnegative")));
    }
    let mut out = space.clone();
    out.gauge.iter_mut().for_each(|x| *x *= t);
    Ok(out)
}

/// Rescales to unit `L^2`-size.
pub fn normalize_to_unit_sphere(space: &FiniteSpace) -> Result<FiniteSpace> {
    let size = size2(space);
    if size <= 0.0 {
        return Err(Error::InvalidParameter("space of zero size cannot be normalized".into()));
    }
    let mut out = space.clone();
    out.gauge.iter_mut().for_each(|x| *x /= size);
    Ok(out)
}

/// Replaces a space whose weights are multiples of `1/denominator` by a
/// uniform space on `denominator` points.
///
/// Point `i` is replicated `k_i = w_i·N` times; copies are at mutual
/// gauge 0. Also returns, for every new point, the index it copies.
pub fn split_atoms_with_owner(space: &FiniteSpace, denominator: u64) -> Result<(FiniteSpace, Vec<usize>)> {
    if denominator == 0 {
        return Err(Error::InvalidParameter("denominator must be positive".into()));
    }
    let counts: Vec<u64> = match space.exact_weights() {
        Some(exact) => exact
            .iter()
            .map(|&w| {
                let k = w * Rational64::from_integer(denominator as i64);
                if k.is_integer() {
                    Ok(k.to_integer() as u64)
                } else {
                    Err(Error::NotRepresentable(denominator))
                }
            })
            .collect::<Result<_>>()?,
        None => space
            .weights()
            .iter()
            .map(|&w| {
                let k = w * denominator as f64;
                if (k - k.round()).abs() <= 1e-9 {
                    Ok(k.round() as u64)
                } else {
                    Err(Error::NotRepresentable(denominator))
                }
            })
            .collect::<Result<_>>()?,
    };
    if counts.iter().sum::<u64>() != denominator {
        return Err(Error::NotRepresentable(denominator));
    }
    let owner: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &k)| std::iter::repeat(i).take(k as usize))
        .collect();
    let m = owner.len();
    let gauge = DMatrix::from_fn(m, m, |a, b| space.d(owner[a], owner[b]));
    let mut out = FiniteSpace::uniform(gauge)?;
    out.name = space.name.clone();
    Ok((out, owner))
}

pub fn split_atoms(space: &FiniteSpace, denominator: u64) -> Result<FiniteSpace> {
    split_atoms_with_owner(space, denominator).map(|(s, _)| s)
}

/// Mass of violated triangle inequalities:
/// `Σ_{i,j,k} max(d_ik − d_ij − d_jk, 0) w_i w_j w_k`.
pub fn triangle_defect(space: &FiniteSpace) -> f64 {
    let support = space.support();
    let mut total = 0.0;
    for &i in &support {
        for &j in &support {
            let wij = space.w(i) * space.w(j);
            for &k in &support {
                let excess = space.d(i, k) - space.d(i, j) - space.d(j, k);
                if excess > 0.0 {
                    total += excess * wij * space.w(k);
                }
            }
        }
    }
    total
}
