//! Couplings between finite spaces and their algebra.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::{is_permutation, pow_abs, Exponent, FiniteSpace, GAUGE_TOL};

/// Tolerance on coupling marginals.
pub const MARGINAL_TOL: f64 = 1e-10;
/// Plan entries at or below this value are outside the support.
pub const SUPPORT_EPS: f64 = 1e-15;
/// Largest dense plan accepted, as `rows·cols`.
pub const MAX_PLAN_ENTRIES: usize = 1_000_000;

/// A transport plan between two weight vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CouplingJson", try_from = "CouplingJson")]
pub struct Coupling {
    plan: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct CouplingJson {
    plan: Vec<Vec<f64>>,
    rows: usize,
    cols: usize,
}

impl From<Coupling> for CouplingJson {
    fn from(c: Coupling) -> Self {
        CouplingJson {
            plan: (0..c.rows()).map(|i| c.plan.row(i).iter().copied().collect()).collect(),
            rows: c.rows(),
            cols: c.cols(),
        }
    }
}

impl TryFrom<CouplingJson> for Coupling {
    type Error = Error;
    fn try_from(j: CouplingJson) -> Result<Self> {
        if j.plan.len() != j.rows || j.plan.iter().any(|r| r.len() != j.cols) {
            return Err(Error::Shape(format!("plan does not have shape {}x{}", j.rows, j.cols)));
        }
        let plan = DMatrix::from_fn(j.rows, j.cols, |a, b| j.plan[a][b]);
        Coupling::from_plan(plan)
    }
}

impl Coupling {
    /// Wraps a nonnegative plan; marginals are whatever it sums to.
    pub fn from_plan(plan: DMatrix<f64>) -> Result<Self> {
        if plan.nrows() * plan.ncols() > MAX_PLAN_ENTRIES {
            return Err(Error::SizeBound { size: plan.nrows() * plan.ncols(), bound: MAX_PLAN_ENTRIES });
        }
        if let Some(x) = plan.iter().find(|&&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("plan entry {x} is not a nonnegative number")));
        }
        Ok(Self { plan })
    }

    /// Wraps a plan and checks it couples `w0` with `w1`.
    pub fn new(plan: DMatrix<f64>, w0: &[f64], w1: &[f64]) -> Result<Self> {
        let c = Self::from_plan(plan)?;
        c.check_marginals(w0, w1)?;
        Ok(c)
    }

    pub fn plan(&self) -> &DMatrix<f64> {
        &self.plan
    }

    pub fn rows(&self) -> usize {
        self.plan.nrows()
    }

    pub fn cols(&self) -> usize {
        self.plan.ncols()
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self.plan.row(i).sum()).collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        (0..self.cols()).map(|j| self.plan.column(j).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self { plan: self.plan.transpose() }
    }

    pub fn check_marginals(&self, w0: &[f64], w1: &[f64]) -> Result<()> {
        if w0.len() != self.rows() || w1.len() != self.cols() {
            return Err(Error::Shape(format!(
                "plan is {}x{}, marginals have lengths {} and {}",
                self.rows(),
                self.cols(),
                w0.len(),
                w1.len()
            )));
        }
        for (i, (&got, &want)) in self.row_marginal().iter().zip(w0).enumerate() {
            if (got - want).abs() > MARGINAL_TOL {
                return Err(Error::Marginal(format!("row {i} sums to {got}, expected {want}")));
            }
        }
        for (j, (&got, &want)) in self.col_marginal().iter().zip(w1).enumerate() {
            if (got - want).abs() > MARGINAL_TOL {
                return Err(Error::Marginal(format!("column {j} sums to {got}, expected {want}")));
            }
        }
        Ok(())
    }

    /// Nonzero entries `(i, j, mass)` in row-major order.
    pub fn support(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                let m = self.plan[(i, j)];
                if m > SUPPORT_EPS {
                    out.push((i, j, m));
                }
            }
        }
        out
    }
}

pub fn product_coupling(w0: &[f64], w1: &[f64]) -> Coupling {
    Coupling { plan: DMatrix::from_fn(w0.len(), w1.len(), |i, j| w0[i] * w1[j]) }
}

pub fn diagonal_coupling(w: &[f64]) -> Coupling {
    Coupling { plan: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(w)) }
}

/// The coupling induced by `i ↦ sigma[i]` on a uniform weight vector.
pub fn permutation_coupling(sigma: &[usize], w: &[f64]) -> Result<Coupling> {
    let n = w.len();
    if sigma.len() != n || !is_permutation(sigma) {
        return Err(Error::InvalidParameter("not a permutation of the index set".into()));
    }
    let u = 1.0 / n as f64;
    if w.iter().any(|&x| (x - u).abs() > 1e-15) {
        return Err(Error::Precondition("permutation couplings need uniform weights".into()));
    }
    let mut plan = DMatrix::zeros(n, n);
    for (i, &s) in sigma.iter().enumerate() {
        plan[(i, s)] = u;
    }
    Ok(Coupling { plan })
}

/// The gluing of two couplings along their shared middle marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct Gluing {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Gluing {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    /// Marginal on the factors `(a, b)` with `a < b`.
    pub fn face(&self, a: usize, b: usize) -> DMatrix<f64> {
        let [n0, n1, n2] = self.dims;
        let mut out = DMatrix::zeros(self.dims[a], self.dims[b]);
        for i in 0..n0 {
            for j in 0..n1 {
                for k in 0..n2 {
                    let idx = [i, j, k];
                    out[(idx[a], idx[b])] += self.get(i, j, k);
                }
            }
        }
        out
    }
}

fn middle_marginal(mu1: &Coupling, mu2: &Coupling) -> Result<Vec<f64>> {
    if mu1.cols() != mu2.rows() {
        return Err(Error::Shape(format!("cannot glue {}x{} with {}x{}", mu1.rows(), mu1.cols(), mu2.rows(), mu2.cols())));
    }
    let left = mu1.col_marginal();
    let right = mu2.row_marginal();
    for (j, (a, b)) in left.iter().zip(&right).enumerate() {
        if (a - b).abs() > MARGINAL_TOL {
            return Err(Error::Marginal(format!("middle marginals differ at {j}: {a} vs {b}")));
        }
    }
    Ok(left)
}

/// `T(i,j,k) = mu1(i,j)·mu2(j,k)/w1(j)`, zero where `w1(j) = 0`.
pub fn glue(mu1: &Coupling, mu2: &Coupling) -> Result<Gluing> {
    let w1 = middle_marginal(mu1, mu2)?;
    let dims = [mu1.rows(), mu1.cols(), mu2.cols()];
    let mut data = vec![0.0; dims[0] * dims[1] * dims[2]];
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            if w1[j] <= 0.0 {
                continue;
            }
            let a = mu1.plan[(i, j)] / w1[j];
            for k in 0..dims[2] {
                data[(i * dims[1] + j) * dims[2] + k] = a * mu2.plan[(j, k)];
            }
        }
    }
    Ok(Gluing { dims, data })
}

/// Outer marginal of the gluing.
pub fn melt(mu1: &Coupling, mu2: &Coupling) -> Result<Coupling> {
    let w1 = middle_marginal(mu1, mu2)?;
    let scaled = DMatrix::from_fn(mu1.rows(), mu1.cols(), |i, j| if w1[j] > 0.0 { mu1.plan[(i, j)] / w1[j] } else { 0.0 });
    Ok(Coupling { plan: scaled * &mu2.plan })
}

/// `L^p`-distortion of a coupling; the maximum over support pairs for `p = ∞`.
pub fn distortion(mu: &Coupling, x0: &FiniteSpace, x1: &FiniteSpace, p: f64) -> Result<f64> {
    let exponent = Exponent::new(p)?;
    mu.check_marginals(x0.weights(), x1.weights())?;
    let support = mu.support();
    Ok(match exponent {
        Exponent::Infinity => {
            let mut worst = 0.0f64;
            for &(i, a, _) in &support {
                for &(j, b, _) in &support {
                    worst = worst.max((x0.d(i, j) - x1.d(a, b)).abs());
                }
            }
            worst
        }
        Exponent::Finite(p) => {
            let mut total = 0.0;
            for &(i, a, m) in &support {
                let mut row = 0.0;
                for &(j, b, m2) in &support {
                    row += pow_abs(x0.d(i, j) - x1.d(a, b), p) * m2;
                }
                total += row * m;
            }
            total.powf(1.0 / p)
        }
    })
}

/// The `L²` norm of a self-coupling of `x`.
pub fn coupling_norm(mu: &Coupling, x: &FiniteSpace) -> Result<f64> {
    distortion(mu, x, x, 2.0)
}

/// Gauge- and weight-preserving permutations of a space.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryGroup {
    pub base: FiniteSpace,
    pub elements: Vec<Vec<usize>>,
}

impl SymmetryGroup {
    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn contains(&self, sigma: &[usize]) -> bool {
        self.elements.iter().any(|e| e == sigma)
    }

    /// True if `sigma` maps gauge and weights of the base to themselves.
    pub fn preserves(&self, sigma: &[usize]) -> bool {
        preserves(&self.base, sigma)
    }
}

pub fn preserves(x: &FiniteSpace, sigma: &[usize]) -> bool {
    let n = x.n();
    sigma.len() == n
        && is_permutation(sigma)
        && (0..n).all(|i| {
            x.w(sigma[i]) == x.w(i) && (0..n).all(|j| (x.d(sigma[i], sigma[j]) - x.d(i, j)).abs() <= GAUGE_TOL)
        })
}

/// `(a ∘ b)(i) = a[b[i]]`.
pub fn compose(a: &[usize], b: &[usize]) -> Vec<usize> {
    b.iter().map(|&i| a[i]).collect()
}

pub fn inverse(a: &[usize]) -> Vec<usize> {
    let mut out = vec![0; a.len()];
    for (i, &ai) in a.iter().enumerate() {
        out[ai] = i;
    }
    out
}

pub const DEFAULT_SYMMETRY_BOUND: usize = 10;

/// All symmetries of `x` by backtracking, in lexicographic order.
pub fn symmetry_group(x: &FiniteSpace, bound: usize) -> Result<SymmetryGroup> {
    let n = x.n();
    if n > bound {
        return Err(Error::SizeBound { size: n, bound });
    }
    let mut elements = Vec::new();
    let mut sigma = Vec::with_capacity(n);
    let mut used = vec![false; n];
    extend(x, &mut sigma, &mut used, &mut elements);
    Ok(SymmetryGroup { base: x.clone(), elements })
}

fn extend(x: &FiniteSpace, sigma: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
    let i = sigma.len();
    if i == x.n() {
        out.push(sigma.clone());
        return;
    }
    for s in 0..x.n() {
        if used[s] || x.w(s) != x.w(i) {
            continue;
        }
        if (0..i).any(|j| (x.d(s, sigma[j]) - x.d(i, j)).abs() > GAUGE_TOL) {
            continue;
        }
        used[s] = true;
        sigma.push(s);
        extend(x, sigma, used, out);
        sigma.pop();
        used[s] = false;
    }
}
