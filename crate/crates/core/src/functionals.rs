//! Polynomial functionals `U(X) = ∫ u((d(x^i,x^j))_{i<j}) dm^n` and their
//! ambient gradients, including the quadruple functionals `G_K` and `H_K`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TangentVector;
use crate::spaces::FiniteSpace;

/// Largest number of tuples summed exactly.
pub const EXACT_TUPLE_BOUND: u128 = 100_000_000;

/// `ζ(r) = −2r − 1` for `r ≤ −1`, `r²` on `[−1, 0]`, `0` for `r ≥ 0`.
pub fn zeta(r: f64) -> f64 {
    if r >= 0.0 {
        0.0
    } else if r >= -1.0 {
        r * r
    } else {
        -2.0 * r - 1.0
    }
}

pub fn zeta_prime(r: f64) -> f64 {
    if r >= 0.0 {
        0.0
    } else if r >= -1.0 {
        2.0 * r
    } else {
        -2.0
    }
}

pub type Integrand = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type Partials = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A polynomial functional of a given order.
///
/// `u` receives the distances `ξ_ij` for `i < j` in lexicographic order of
/// the pairs; see [`pair_index`].
#[derive(Clone)]
pub struct PolynomialSpec {
    pub name: String,
    pub order: usize,
    pub u: Integrand,
    pub partials: Option<Partials>,
}

impl std::fmt::Debug for PolynomialSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PolynomialSpec")
            .field("name", &self.name)
            .field("order", &self.order)
            .field("partials", &self.partials.is_some())
            .finish()
    }
}

/// Position of the pair `(i, j)`, `i < j`, among the pairs of `0..order`.
pub fn pair_index(i: usize, j: usize, order: usize) -> usize {
    debug_assert!(i < j && j < order);
    i * (2 * order - i - 1) / 2 + (j - i - 1)
}

pub fn pairs(order: usize) -> Vec<(usize, usize)> {
    (0..order).flat_map(|i| ((i + 1)..order).map(move |j| (i, j))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

impl Mode {
    /// Exact when the tuple count is within [`EXACT_TUPLE_BOUND`], sampling otherwise.
    pub fn auto(points: usize, order: usize, samples: usize, seed: u64) -> Self {
        if tuple_count(points, order) <= EXACT_TUPLE_BOUND {
            Mode::Exact
        } else {
            Mode::MonteCarlo { samples, seed }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: Option<f64>,
}

fn tuple_count(points: usize, order: usize) -> u128 {
    (0..order).fold(1u128, |acc, _| acc.saturating_mul(points as u128))
}

fn check_guard(points: usize, order: usize) -> Result<()> {
    let count = tuple_count(points, order);
    if count > EXACT_TUPLE_BOUND {
        return Err(Error::SizeBound { size: count.min(usize::MAX as u128) as usize, bound: EXACT_TUPLE_BOUND as usize });
    }
    Ok(())
}

fn fill_xi(x: &FiniteSpace, tuple: &[usize], xi: &mut [f64]) {
    let order = tuple.len();
    let mut k = 0;
    for i in 0..order {
        for j in (i + 1)..order {
            xi[k] = x.d(tuple[i], tuple[j]);
            k += 1;
        }
    }
}

/// Calls `visit(tuple, weight)` for every tuple of support points whose first
/// entry is `first`, in lexicographic order.
fn for_each_tuple(support: &[usize], x: &FiniteSpace, order: usize, first: usize, mut visit: impl FnMut(&[usize], f64)) {
    let mut idx = vec![0usize; order.saturating_sub(1)];
    let mut tuple = vec![first; order];
    loop {
        let mut w = x.w(first);
        for (slot, &k) in idx.iter().enumerate() {
            tuple[slot + 1] = support[k];
            w *= x.w(support[k]);
        }
        visit(&tuple, w);
        let mut pos = idx.len();
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < support.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// `∫ u dm^order`, exactly or by sampling.
pub fn eval_polynomial(spec: &PolynomialSpec, x: &FiniteSpace, mode: Mode) -> Result<Estimate> {
    let order = spec.order;
    let npairs = order * (order - 1) / 2;
    let support = x.support();
    match mode {
        Mode::Exact => {
            check_guard(support.len(), order)?;
            let parts: Vec<f64> = support
                .par_iter()
                .map(|&first| {
                    let mut xi = vec![0.0; npairs];
                    let mut total = 0.0;
                    for_each_tuple(&support, x, order, first, |t, w| {
                        fill_xi(x, t, &mut xi);
                        let v = (spec.u)(&xi);
                        if v != 0.0 {
                            total += w * v;
                        }
                    });
                    total
                })
                .collect();
            Ok(Estimate { value: parts.iter().sum(), stderr: None })
        }
        Mode::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::InvalidParameter("Monte Carlo needs at least two samples".into()));
            }
            let dist = WeightedIndex::new(x.weights()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut xi = vec![0.0; npairs];
            let mut tuple = vec![0usize; order];
            let (mut mean, mut m2) = (0.0f64, 0.0f64);
            for k in 0..samples {
                tuple.iter_mut().for_each(|t| *t = dist.sample(&mut rng));
                fill_xi(x, &tuple, &mut xi);
                let v = (spec.u)(&xi);
                let delta = v - mean;
                mean += delta / (k + 1) as f64;
                m2 += delta * (v - mean);
            }
            let var = m2 / (samples - 1) as f64;
            Ok(Estimate { value: mean, stderr: Some((var / samples as f64).sqrt()) })
        }
    }
}

/// `Σ_{i<j} ∫ ∂_ij u · g(x^i,x^j) dm^order`.
pub fn directional_derivative(spec: &PolynomialSpec, x: &FiniteSpace, v: &TangentVector) -> Result<f64> {
    let partials = spec.partials.as_ref().ok_or(Error::MissingDerivative("polynomial partials"))?;
    let order = spec.order;
    let npairs = order * (order - 1) / 2;
    let support = x.support();
    check_guard(support.len(), order)?;
    let pair_list = pairs(order);
    let parts: Vec<f64> = support
        .par_iter()
        .map(|&first| {
            let mut xi = vec![0.0; npairs];
            let mut du = vec![0.0; npairs];
            let mut total = 0.0;
            for_each_tuple(&support, x, order, first, |t, w| {
                fill_xi(x, t, &mut xi);
                partials(&xi, &mut du);
                let s: f64 = pair_list.iter().zip(&du).map(|(&(i, j), &d)| d * v.g[(t[i], t[j])]).sum();
                total += w * s;
            });
            total
        })
        .collect();
    Ok(parts.iter().sum())
}

/// Ambient gradient: the symmetrization of
/// `f̃(y,z) = Σ_{i<j} ∫ ∂_ij u(…, y at i, …, z at j, …) dm^{order−2}`.
pub fn ambient_gradient_polynomial(spec: &PolynomialSpec, x: &FiniteSpace) -> Result<TangentVector> {
    let partials = spec.partials.as_ref().ok_or(Error::MissingDerivative("polynomial partials"))?;
    let order = spec.order;
    let npairs = order * (order - 1) / 2;
    let support = x.support();
    check_guard(support.len(), order)?;
    let n = x.n();
    let pair_list = pairs(order);
    let parts: Vec<DMatrix<f64>> = support
        .par_iter()
        .map(|&first| {
            let mut acc = DMatrix::zeros(n, n);
            let mut xi = vec![0.0; npairs];
            let mut du = vec![0.0; npairs];
            for_each_tuple(&support, x, order, first, |t, w| {
                fill_xi(x, t, &mut xi);
                partials(&xi, &mut du);
                for (&(i, j), &d) in pair_list.iter().zip(&du) {
                    if d != 0.0 {
                        let (y, z) = (t[i], t[j]);
                        acc[(y, z)] += w * d / (x.w(y) * x.w(z));
                    }
                }
            });
            acc
        })
        .collect();
    let mut total = DMatrix::zeros(n, n);
    for p in &parts {
        total += p;
    }
    Ok(TangentVector::symmetrized(&total))
}

pub fn size2_spec() -> PolynomialSpec {
    PolynomialSpec {
        name: "size2".into(),
        order: 2,
        u: Arc::new(|xi| xi[0] * xi[0]),
        partials: Some(Arc::new(|xi, out| out[0] = 2.0 * xi[0])),
    }
}

/// `u = max(ξ_02 − ξ_01 − ξ_12, 0)`; its integral is the triangle defect.
pub fn triangle_defect_spec() -> PolynomialSpec {
    PolynomialSpec {
        name: "triangle_defect".into(),
        order: 3,
        u: Arc::new(|xi| (xi[1] - xi[0] - xi[2]).max(0.0)),
        partials: Some(Arc::new(|xi, out| {
            let on = if xi[1] - xi[0] - xi[2] > 0.0 { 1.0 } else { 0.0 };
            out[0] = -on;
            out[1] = on;
            out[2] = -on;
        })),
    }
}

// order-4 pair slots: (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
const HUB: [usize; 3] = [0, 1, 2];
const RIM: [usize; 3] = [3, 4, 5];
const CYCLE: [usize; 4] = [0, 3, 5, 2];
const DIAGONALS: [usize; 2] = [1, 4];

fn g_argument(k: f64, xi: &[f64]) -> f64 {
    if k == 0.0 {
        3.0 * HUB.iter().map(|&a| xi[a] * xi[a]).sum::<f64>() - RIM.iter().map(|&a| xi[a] * xi[a]).sum::<f64>()
    } else if k > 0.0 {
        let s = k.sqrt();
        let c: f64 = HUB.iter().map(|&a| (s * xi[a]).cos()).sum();
        -c * c / k + 3.0 / k + 2.0 / k * RIM.iter().map(|&a| (s * xi[a]).cos()).sum::<f64>()
    } else {
        let s = (-k).sqrt();
        let hub: f64 = HUB.iter().map(|&a| (s * xi[a]).cosh()).sum();
        let rim: f64 = RIM.iter().map(|&a| (s * xi[a]).cosh()).sum();
        -18.0 / k * (hub / 3.0).ln() + 9.0 / k * (1.0 / 3.0 + 2.0 / 9.0 * rim).ln()
    }
}

fn g_argument_partials(k: f64, xi: &[f64], out: &mut [f64]) {
    if k == 0.0 {
        for a in HUB {
            out[a] = 6.0 * xi[a];
        }
        for a in RIM {
            out[a] = -2.0 * xi[a];
        }
    } else if k > 0.0 {
        let s = k.sqrt();
        let c: f64 = HUB.iter().map(|&a| (s * xi[a]).cos()).sum();
        for a in HUB {
            out[a] = 2.0 / s * c * (s * xi[a]).sin();
        }
        for a in RIM {
            out[a] = -2.0 / s * (s * xi[a]).sin();
        }
    } else {
        let s = (-k).sqrt();
        let hub: f64 = HUB.iter().map(|&a| (s * xi[a]).cosh()).sum();
        let rim: f64 = 1.0 / 3.0 + 2.0 / 9.0 * RIM.iter().map(|&a| (s * xi[a]).cosh()).sum::<f64>();
        for a in HUB {
            out[a] = -18.0 / k * s * (s * xi[a]).sinh() / hub;
        }
        for a in RIM {
            out[a] = 2.0 / k * s * (s * xi[a]).sinh() / rim;
        }
    }
}

/// `G_K` as a polynomial of order 4 (without the perimeter guard).
pub fn g_spec(k: f64) -> PolynomialSpec {
    PolynomialSpec {
        name: format!("G{k}"),
        order: 4,
        u: Arc::new(move |xi| zeta(g_argument(k, xi))),
        partials: Some(Arc::new(move |xi, out| {
            let z = zeta_prime(g_argument(k, xi));
            g_argument_partials(k, xi, out);
            out.iter_mut().for_each(|o| *o *= z);
        })),
    }
}

/// `cos*` is `−∞` outside `[−π/2, π/2]`, which sends the argument to `+∞`.
fn h_argument(k: f64, xi: &[f64]) -> f64 {
    if k == 0.0 {
        CYCLE.iter().map(|&a| xi[a] * xi[a]).sum::<f64>() - DIAGONALS.iter().map(|&a| xi[a] * xi[a]).sum::<f64>()
    } else if k > 0.0 {
        let s = k.sqrt();
        if CYCLE.iter().any(|&a| (s * xi[a]).abs() > std::f64::consts::FRAC_PI_2) {
            return f64::INFINITY;
        }
        -2.0 / k * CYCLE.iter().map(|&a| (s * xi[a]).cos()).sum::<f64>()
            + 8.0 / k * (0.5 * s * xi[DIAGONALS[0]]).cos() * (0.5 * s * xi[DIAGONALS[1]]).cos()
    } else {
        let s = (-k).sqrt();
        let cyc: f64 = CYCLE.iter().map(|&a| (s * xi[a]).cosh()).sum();
        -8.0 / k * (cyc / 4.0).ln()
            + 8.0 / k * ((0.5 * s * xi[DIAGONALS[0]]).cosh() * (0.5 * s * xi[DIAGONALS[1]]).cosh()).ln()
    }
}

fn h_argument_partials(k: f64, xi: &[f64], out: &mut [f64]) {
    if k == 0.0 {
        for a in CYCLE {
            out[a] = 2.0 * xi[a];
        }
        for a in DIAGONALS {
            out[a] = -2.0 * xi[a];
        }
    } else if k > 0.0 {
        let s = k.sqrt();
        for a in CYCLE {
            out[a] = 2.0 / s * (s * xi[a]).sin();
        }
        let (p, q) = (0.5 * s * xi[DIAGONALS[0]], 0.5 * s * xi[DIAGONALS[1]]);
        out[DIAGONALS[0]] = -4.0 / s * p.sin() * q.cos();
        out[DIAGONALS[1]] = -4.0 / s * p.cos() * q.sin();
    } else {
        let s = (-k).sqrt();
        let cyc: f64 = CYCLE.iter().map(|&a| (s * xi[a]).cosh()).sum();
        for a in CYCLE {
            out[a] = -8.0 / k * s * (s * xi[a]).sinh() / cyc;
        }
        for a in DIAGONALS {
            out[a] = 4.0 / k * s * (0.5 * s * xi[a]).tanh();
        }
    }
}

/// `H_K` as a polynomial of order 4 on the cyclic quadruple `x0 x1 x2 x3`.
pub fn h_spec(k: f64) -> PolynomialSpec {
    PolynomialSpec {
        name: format!("H{k}"),
        order: 4,
        u: Arc::new(move |xi| zeta(h_argument(k, xi))),
        partials: Some(Arc::new(move |xi, out| {
            let arg = h_argument(k, xi);
            if arg.is_infinite() {
                out.iter_mut().for_each(|o| *o = 0.0);
                return;
            }
            let z = zeta_prime(arg);
            h_argument_partials(k, xi, out);
            out.iter_mut().for_each(|o| *o *= z);
        })),
    }
}

/// First support triple whose perimeter exceeds `2π/√K`, if any.
pub fn perimeter_violation(x: &FiniteSpace, k: f64) -> Option<[usize; 3]> {
    if k <= 0.0 {
        return None;
    }
    let limit = 2.0 * std::f64::consts::PI / k.sqrt();
    let support = x.support();
    for &a in &support {
        for &b in &support {
            for &c in &support {
                if x.d(a, b) + x.d(b, c) + x.d(c, a) > limit {
                    return Some([a, b, c]);
                }
            }
        }
    }
    None
}

/// `G_K(X)`; `+∞` when `K > 0` and some support triangle is too long.
pub fn eval_g(x: &FiniteSpace, k: f64, mode: Mode) -> Result<Estimate> {
    if perimeter_violation(x, k).is_some() {
        return Ok(Estimate { value: f64::INFINITY, stderr: None });
    }
    eval_polynomial(&g_spec(k), x, mode)
}

pub fn eval_h(x: &FiniteSpace, k: f64, mode: Mode) -> Result<Estimate> {
    eval_polynomial(&h_spec(k), x, mode)
}

/// Double sum `Σ_{y,y'} w_y w_y' kernel(y, y')` over the support.
fn double_sum(x: &FiniteSpace, support: &[usize], mut kernel: impl FnMut(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for &y in support {
        for &yy in support {
            total += x.w(y) * x.w(yy) * kernel(y, yy);
        }
    }
    total
}

fn pairwise_gradient(x: &FiniteSpace, entry: impl Fn(&[usize], usize, usize) -> f64 + Sync) -> TangentVector {
    let n = x.n();
    let support = x.support();
    let rows: Vec<Vec<(usize, f64)>> = support
        .par_iter()
        .map(|&z| support.iter().map(|&zz| (zz, if z == zz { 0.0 } else { entry(&support, z, zz) })).collect())
        .collect();
    let mut f = DMatrix::zeros(n, n);
    for (&z, row) in support.iter().zip(&rows) {
        for &(zz, v) in row {
            f[(z, zz)] = v;
        }
    }
    TangentVector::symmetrized(&f)
}

/// Ambient gradient of `G_0` by the closed double-sum formula
/// `f̃(z,z') = 6d(z,z')·∫[3ζ'(A) − ζ'(B)] dm²(y,y')` with
/// `A = 3(d²(z,z')+d²(z,y)+d²(z,y')) − (d²(z',y)+d²(z',y')+d²(y,y'))` and
/// `B = 3(d²(y,z)+d²(y,z')+d²(y,y')) − (d²(z,z')+d²(z,y')+d²(z',y'))`.
pub fn gradient_g0(x: &FiniteSpace) -> TangentVector {
    let d2 = |a: usize, b: usize| x.d(a, b) * x.d(a, b);
    pairwise_gradient(x, |support, z, zz| {
        let dz = x.d(z, zz);
        if dz == 0.0 {
            return 0.0;
        }
        let s = double_sum(x, support, |y, yy| {
            let a = 3.0 * (d2(z, zz) + d2(z, y) + d2(z, yy)) - (d2(zz, y) + d2(zz, yy) + d2(y, yy));
            let b = 3.0 * (d2(y, z) + d2(y, zz) + d2(y, yy)) - (d2(z, zz) + d2(z, yy) + d2(zz, yy));
            3.0 * zeta_prime(a) - zeta_prime(b)
        });
        6.0 * dz * s
    })
}

/// Ambient gradient of `H_0`:
/// `f̃(z,z') = 4d(z,z')·∫[2ζ'(A) − ζ'(B)] dm²(y,y')` with
/// `A = d²(z,z')+d²(z',y)+d²(y,y')+d²(y',z) − d²(z,y) − d²(z',y')` and
/// `B = d²(z,y)+d²(y,z')+d²(z',y')+d²(y',z) − d²(z,z') − d²(y,y')`.
pub fn gradient_h0(x: &FiniteSpace) -> TangentVector {
    let d2 = |a: usize, b: usize| x.d(a, b) * x.d(a, b);
    pairwise_gradient(x, |support, z, zz| {
        let dz = x.d(z, zz);
        if dz == 0.0 {
            return 0.0;
        }
        let s = double_sum(x, support, |y, yy| {
            let a = d2(z, zz) + d2(zz, y) + d2(y, yy) + d2(yy, z) - d2(z, y) - d2(zz, yy);
            let b = d2(z, y) + d2(y, zz) + d2(zz, yy) + d2(yy, z) - d2(z, zz) - d2(y, yy);
            2.0 * zeta_prime(a) - zeta_prime(b)
        });
        4.0 * dz * s
    })
}

pub type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `U(X) = ∫ outer(∫ inner(d(x,y)) dm(y)) dm(x)`.
#[derive(Clone)]
pub struct NestedSpec {
    pub outer: Scalar,
    pub outer_prime: Option<Scalar>,
    pub inner: Scalar,
    pub inner_prime: Option<Scalar>,
}

impl NestedSpec {
    pub fn new(outer: impl Fn(f64) -> f64 + Send + Sync + 'static, inner: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { outer: Arc::new(outer), outer_prime: None, inner: Arc::new(inner), inner_prime: None }
    }

    pub fn with_derivatives(
        mut self,
        outer_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        inner_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.outer_prime = Some(Arc::new(outer_prime));
        self.inner_prime = Some(Arc::new(inner_prime));
        self
    }
}

fn inner_masses(spec: &NestedSpec, x: &FiniteSpace) -> Vec<f64> {
    (0..x.n()).map(|i| (0..x.n()).map(|j| x.w(j) * (spec.inner)(x.d(i, j))).sum()).collect()
}

pub fn eval_nested(spec: &NestedSpec, x: &FiniteSpace) -> f64 {
    inner_masses(spec, x).iter().enumerate().map(|(i, &m)| x.w(i) * (spec.outer)(m)).sum()
}

/// `f(x,y) = ½(U'(w(x)) + U'(w(y)))·η'(d(x,y))`.
pub fn gradient_nested(spec: &NestedSpec, x: &FiniteSpace) -> Result<TangentVector> {
    let up = spec.outer_prime.as_ref().ok_or(Error::MissingDerivative("outer derivative"))?;
    let ep = spec.inner_prime.as_ref().ok_or(Error::MissingDerivative("inner derivative"))?;
    let w: Vec<f64> = inner_masses(spec, x).into_iter().map(|m| up(m)).collect();
    let n = x.n();
    let mut f = DMatrix::from_fn(n, n, |i, j| 0.5 * (w[i] + w[j]) * ep(x.d(i, j)));
    f.fill_diagonal(0.0);
    Ok(TangentVector { g: f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exponential;
    use crate::spaces::{size2, triangle_defect};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn square() -> FiniteSpace {
        FiniteSpace::from_points(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap()
    }

    fn tripod() -> FiniteSpace {
        let g = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else if i == 0 || j == 0 { 1.0 } else { 2.0 });
        FiniteSpace::uniform(g).unwrap()
    }

    fn random_space(rng: &mut ChaCha8Rng, n: usize) -> FiniteSpace {
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.2..2.0));
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = w.iter().sum();
        FiniteSpace::new((&g + g.transpose()) * 0.5, w.iter().map(|x| x / total).collect()).unwrap()
    }

    fn probe(rng: &mut ChaCha8Rng, n: usize) -> TangentVector {
        TangentVector::symmetrized(&DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)))
    }

    fn central_difference(f: impl Fn(&FiniteSpace) -> f64, x: &FiniteSpace, v: &TangentVector) -> f64 {
        let h = 1e-5;
        (f(&exponential(x, v, h).unwrap()) - f(&exponential(x, v, -h).unwrap())) / (2.0 * h)
    }

    #[test]
    fn zeta_values() {
        assert_eq!(zeta(-3.0), 5.0);
        assert_eq!(zeta(-0.5), 0.25);
        assert_eq!(zeta(2.0), 0.0);
        for k in -300..300 {
            let r = k as f64 / 50.0;
            assert!((-2.0..=0.0).contains(&zeta_prime(r)));
        }
    }

    #[test]
    fn pair_indices() {
        for order in 2..6 {
            for (k, (i, j)) in pairs(order).into_iter().enumerate() {
                assert_eq!(pair_index(i, j, order), k);
            }
        }
    }

    #[test]
    fn size_and_defect_as_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_space(&mut rng, 5);
        let s = eval_polynomial(&size2_spec(), &x, Mode::Exact).unwrap().value;
        assert_relative_eq!(s, size2(&x).powi(2), epsilon = 1e-13);
        let bad = FiniteSpace::uniform(DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0])).unwrap();
        let t = eval_polynomial(&triangle_defect_spec(), &bad, Mode::Exact).unwrap().value;
        assert_relative_eq!(t, triangle_defect(&bad), epsilon = 1e-15);
        assert_relative_eq!(t, 6.0 / 27.0, epsilon = 1e-15);
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let x = FiniteSpace::complete_graph(4);
        let exact = eval_polynomial(&size2_spec(), &x, Mode::Exact).unwrap().value;
        let mc = eval_polynomial(&size2_spec(), &x, Mode::MonteCarlo { samples: 20_000, seed: 9 }).unwrap();
        assert!((mc.value - exact).abs() <= 3.0 * mc.stderr.unwrap());
    }

    #[test]
    fn g0_examples() {
        assert_eq!(eval_g(&square(), 0.0, Mode::Exact).unwrap().value, 0.0);
        let t = tripod();
        let xi: Vec<f64> = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)].iter().map(|&(a, b)| t.d(a, b)).collect();
        assert_eq!(g_argument(0.0, &xi), -3.0);
        assert_eq!((g_spec(0.0).u)(&xi), 5.0);
        // 256-term oracle written out independently
        let mut oracle = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let d2 = |i: usize, j: usize| t.d(i, j).powi(2);
                        let arg = 3.0 * (d2(a, b) + d2(a, c) + d2(a, d)) - (d2(b, c) + d2(b, d) + d2(c, d));
                        oracle += zeta(arg) / 256.0;
                    }
                }
            }
        }
        let v = eval_g(&t, 0.0, Mode::Exact).unwrap().value;
        assert!(v > 0.0);
        assert_relative_eq!(v, oracle, epsilon = 1e-15);
    }

    #[test]
    fn h0_examples() {
        // the flat square is an equality case, so rounding of √2² leaves ~1e-32
        assert!(eval_h(&square(), 0.0, Mode::Exact).unwrap().value <= 1e-24);
        // star with unequal arms is a tree metric
        let arms = [0.0, 1.0, 2.0, 0.5];
        let g = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else if i == 0 || j == 0 { arms[i.max(j)] } else { arms[i] + arms[j] });
        let star = FiniteSpace::uniform(g).unwrap();
        assert_eq!(eval_h(&star, 0.0, Mode::Exact).unwrap().value, 0.0);
        assert!(gradient_h0(&star).g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_curvature_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for x in [tripod(), square(), random_space(&mut rng, 4), random_space(&mut rng, 5)] {
            let g0 = eval_g(&x, 0.0, Mode::Exact).unwrap().value;
            let h0 = eval_h(&x, 0.0, Mode::Exact).unwrap().value;
            for k in [1e-6, -1e-6] {
                assert!((eval_g(&x, k, Mode::Exact).unwrap().value - g0).abs() <= 1e-4);
                assert!((eval_h(&x, k, Mode::Exact).unwrap().value - h0).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn perimeter_guard() {
        let x = FiniteSpace::complete_graph(3);
        assert!(eval_g(&x, 1.0, Mode::Exact).unwrap().value.is_finite());
        // perimeter 3 > 2π/√K once K > (2π/3)²
        assert_eq!(eval_g(&x, 5.0, Mode::Exact).unwrap().value, f64::INFINITY);
        assert_eq!(perimeter_violation(&x, 5.0), Some([0, 1, 2]));
    }

    #[test]
    fn long_edges_vanish_in_h_positive_k() {
        let x = FiniteSpace::complete_graph(4);
        // √K·1 > π/2 on every edge: every integrand is ζ(+∞) = 0 except
        // degenerate quadruples where repeated points give zero-length edges
        let v = eval_h(&x, 9.0, Mode::Exact).unwrap().value;
        assert!(v.is_finite());
    }

    #[test]
    fn closed_form_gradients_match_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for x in [tripod(), random_space(&mut rng, 4), random_space(&mut rng, 5)] {
            let generic = ambient_gradient_polynomial(&g_spec(0.0), &x).unwrap();
            assert!((generic.g - gradient_g0(&x).g).abs().max() < 1e-10);
            let generic = ambient_gradient_polynomial(&h_spec(0.0), &x).unwrap();
            assert!((generic.g - gradient_h0(&x).g).abs().max() < 1e-10);
        }
    }

    #[test]
    fn gradients_pass_riesz_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in [0.0, 0.3, -0.4] {
            for _ in 0..3 {
                let x = random_space(&mut rng, 4);
                let v = probe(&mut rng, 4);
                for spec in [g_spec(k), h_spec(k)] {
                    let grad = ambient_gradient_polynomial(&spec, &x).unwrap();
                    let dd = directional_derivative(&spec, &x, &v).unwrap();
                    assert_relative_eq!(grad.inner(&v, &x), dd, epsilon = 1e-10, max_relative = 1e-10);
                    let fd = central_difference(|y| eval_polynomial(&spec, y, Mode::Exact).unwrap().value, &x, &v);
                    assert!((fd - dd).abs() <= 1e-6 * dd.abs().max(1.0), "{} k={k}: fd {fd} vs {dd}", spec.name);
                }
            }
        }
    }

    #[test]
    fn g0_gradient_norm_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = random_space(&mut rng, 5);
            assert!(gradient_g0(&x).norm(&x) <= 36.0 * size2(&x));
        }
        assert!(gradient_g0(&square()).g.iter().all(|&v| v == 0.0));
        assert!(gradient_g0(&tripod()).norm(&tripod()) > 0.0);
    }

    #[test]
    fn gradient_of_negated_functional() {
        let x = tripod();
        let spec = g_spec(0.0);
        let neg = PolynomialSpec {
            name: "-G0".into(),
            order: 4,
            u: Arc::new({
                let u = spec.u.clone();
                move |xi| -u(xi)
            }),
            partials: Some(Arc::new({
                let p = spec.partials.clone().unwrap();
                move |xi, out| {
                    p(xi, out);
                    out.iter_mut().for_each(|o| *o = -*o);
                }
            })),
        };
        let a = ambient_gradient_polynomial(&spec, &x).unwrap();
        let b = ambient_gradient_polynomial(&neg, &x).unwrap();
        assert_eq!(a.g, -b.g);
        let constant = PolynomialSpec { name: "one".into(), order: 3, u: Arc::new(|_| 1.0), partials: Some(Arc::new(|_, o| o.fill(0.0))) };
        assert!(ambient_gradient_polynomial(&constant, &x).unwrap().g.iter().all(|&v| v == 0.0));
        assert_eq!(directional_derivative(&spec, &x, &TangentVector::zeros(4)).unwrap(), 0.0);
    }

    #[test]
    fn size2_gradient_is_twice_the_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_space(&mut rng, 4);
        let grad = ambient_gradient_polynomial(&size2_spec(), &x).unwrap();
        assert!((grad.g - x.gauge() * 2.0).abs().max() < 1e-12);
    }

    #[test]
    fn nested_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_space(&mut rng, 5);
        let id = NestedSpec::new(|a| a, |d| d * d).with_derivatives(|_| 1.0, |d| 2.0 * d);
        assert_relative_eq!(eval_nested(&id, &x), size2(&x).powi(2), epsilon = 1e-13);
        let g = gradient_nested(&id, &x).unwrap();
        let mut twice = x.gauge() * 2.0;
        twice.fill_diagonal(0.0);
        assert!((g.g - twice).abs().max() < 1e-14);
        let constant = NestedSpec::new(|a| a * a, |_| 0.7).with_derivatives(|a| 2.0 * a, |_| 0.0);
        assert_relative_eq!(eval_nested(&constant, &x), 0.49, epsilon = 1e-15);
        assert!(gradient_nested(&constant, &x).unwrap().g.iter().all(|&v| v == 0.0));
        assert!(gradient_nested(&NestedSpec::new(|a| a, |d| d), &x).is_err());
    }

    #[test]
    fn nested_square_of_smoothed_ball() {
        let x = FiniteSpace::complete_graph(4);
        let spec = NestedSpec::new(|a| a * a, |d| (-d * d).exp());
        // each point sees itself with η(0)=1 and three neighbours with e^{-1}
        let inner = 0.25 * (1.0 + 3.0 * (-1.0f64).exp());
        assert_relative_eq!(eval_nested(&spec, &x), inner * inner, epsilon = 1e-15);
    }

    #[test]
    fn nested_riesz_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_space(&mut rng, 5);
        let spec = NestedSpec::new(|a| a * a * a, |d| (-d).exp() * d).with_derivatives(|a| 3.0 * a * a, |d| (-d).exp() * (1.0 - d));
        let grad = gradient_nested(&spec, &x).unwrap();
        for _ in 0..5 {
            let v = probe(&mut rng, 5);
            let fd = central_difference(|y| eval_nested(&spec, y), &x, &v);
            assert!((fd - grad.inner(&v, &x)).abs() <= 1e-8);
        }
        let w = inner_masses(&spec, &x);
        let mut expected = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    let e = (-x.d(i, j)).exp() * (1.0 - x.d(i, j));
                    expected += 0.25 * (3.0 * w[i] * w[i] + 3.0 * w[j] * w[j]).powi(2) * e * e * x.w(i) * x.w(j);
                }
            }
        }
        assert_relative_eq!(grad.norm(&x), expected.sqrt(), epsilon = 1e-13);
    }

    #[test]
    fn relabeling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_space(&mut rng, 5);
        let y = x.relabel(&[3, 0, 4, 1, 2]).unwrap();
        for f in [g_spec(0.0), h_spec(0.0), h_spec(-0.5)] {
            let a = eval_polynomial(&f, &x, Mode::Exact).unwrap().value;
            let b = eval_polynomial(&f, &y, Mode::Exact).unwrap().value;
            assert_relative_eq!(a, b, epsilon = 1e-14, max_relative = 1e-13);
        }
    }
}
