//! Volume growth, balanced spaces, the functional
//! `F(X) = ½ ∫ ∫_X (w_r(x) − w*_r)² dm(x) ρ_r dr` with `w_r = ∫_0^r v_t dt`,
//! and its downward gradient flow on n-point spaces.

mod flow;
mod profile;
mod weight;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use flow::{contraction_check, flow, flow_velocity, ClampEvent, ContractionReport, FlowConfig, FlowFunctional, FlowRecord, FlowTrajectory, Integrator};
pub use profile::GrowthProfile;
pub use weight::WeightFunction;

use crate::error::{Error, Result};
use crate::geometry::TangentVector;
use crate::spaces::FiniteSpace;

/// Relative tolerance of the adaptive Simpson rule used for smooth profiles.
pub const QUADRATURE_TOL: f64 = 1e-8;
pub const QUADRATURE_DEPTH: u32 = 40;

pub fn model_profile_constant_curvature(dim: usize, k: f64, volume: Option<f64>) -> Result<GrowthProfile> {
    GrowthProfile::constant_curvature(dim, k, volume)
}

/// `m(B_r(x_i))` with the strict ball `|d(x_i, y)| < r`.
pub fn volume_growth(x: &FiniteSpace, i: usize, r: f64) -> f64 {
    x.support().into_iter().filter(|&k| x.d(i, k).abs() < r).map(|k| x.w(k)).sum()
}

/// Unsorted jumps `(|d(x_i, x_k)|, m_k)` of `r ↦ v_r(x_i)`.
pub(crate) fn point_atoms(x: &FiniteSpace, i: usize) -> Vec<(f64, f64)> {
    x.support().into_iter().map(|k| (x.d(i, k).abs(), x.w(k))).collect()
}

/// Breakpoints `(r, v)` of the growth at `x_i`: `v_t(x_i) = v` just above `r`.
pub fn growth_breakpoints(x: &FiniteSpace, i: usize) -> Vec<(f64, f64)> {
    profile::cumulative(point_atoms(x, i))
}

/// Whether every support point has the same growth, within `tol` in both
/// radius and mass; returns the common profile when it does.
pub fn is_balanced(x: &FiniteSpace, tol: f64) -> (bool, Option<GrowthProfile>) {
    let support = x.support();
    let Some(&first) = support.first() else {
        return (false, None);
    };
    let reference = growth_breakpoints(x, first);
    for &i in &support[1..] {
        let other = growth_breakpoints(x, i);
        let same = other.len() == reference.len()
            && other.iter().zip(&reference).all(|(a, b)| (a.0 - b.0).abs() <= tol && (a.1 - b.1).abs() <= tol);
        if !same {
            return (false, None);
        }
    }
    (true, GrowthProfile::step(reference).ok())
}

fn check_gauge(x: &FiniteSpace) -> Result<()> {
    for i in 0..x.n() {
        for j in 0..x.n() {
            if x.d(i, j) < 0.0 {
                return Err(Error::Precondition(format!("negative gauge entry {} at ({i},{j})", x.d(i, j))));
            }
        }
    }
    Ok(())
}

/// `∫_0^r V_t dt` for a step function given by cumulative breakpoints.
fn ramp(breakpoints: &[(f64, f64)], r: f64) -> f64 {
    let mut total = 0.0;
    for (k, &(t, v)) in breakpoints.iter().enumerate() {
        if t >= r {
            break;
        }
        let end = breakpoints.get(k + 1).map_or(r, |b| b.0.min(r));
        total += v * (end - t);
    }
    total
}

/// Step value just above each merged radius: `(radius, [values...])`.
fn merge_steps(steps: &[&[(f64, f64)]]) -> Vec<(f64, Vec<f64>)> {
    let mut radii: Vec<f64> = steps.iter().flat_map(|s| s.iter().map(|b| b.0)).collect();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let mut cursor = vec![0usize; steps.len()];
    let mut current = vec![0.0; steps.len()];
    let mut out = Vec::with_capacity(radii.len());
    for r in radii {
        for (s, step) in steps.iter().enumerate() {
            while cursor[s] < step.len() && step[cursor[s]].0 <= r {
                current[s] = step[cursor[s]].1;
                cursor[s] += 1;
            }
        }
        out.push((r, current.clone()));
    }
    out
}

/// `½ ∫ ρ_r (w_r(x_i) − w*_r)² dr` for a step model.
fn point_energy_step(point: &[(f64, f64)], model: &[(f64, f64)], rho: &WeightFunction) -> f64 {
    let merged = merge_steps(&[point, model]);
    let mut h = 0.0;
    let mut total = 0.0;
    for (k, (a, values)) in merged.iter().enumerate() {
        let b = merged.get(k + 1).map_or(f64::INFINITY, |m| m.0);
        let beta = values[0] - values[1];
        if h != 0.0 || beta != 0.0 {
            let alpha = h - beta * a;
            total += alpha * alpha * rho.moment(0, *a, b) + 2.0 * alpha * beta * rho.moment(1, *a, b) + beta * beta * rho.moment(2, *a, b);
        }
        if b.is_finite() {
            h += beta * (b - a);
        }
    }
    0.5 * total
}

fn smooth_pieces(mut radii: Vec<f64>, model: &GrowthProfile, rho: &WeightFunction, start: f64) -> Vec<f64> {
    radii.push(model.saturation());
    radii.extend(rho.knots());
    radii.push(start);
    radii.retain(|&r| r >= start);
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    radii
}

fn point_energy_smooth(point: &[(f64, f64)], model: &GrowthProfile, rho: &WeightFunction) -> Result<f64> {
    let radii = smooth_pieces(point.iter().map(|b| b.0).collect(), model, rho, 0.0);
    let h = |r: f64| ramp(point, r) - model.integral(r);
    let mut total = 0.0;
    for w in radii.windows(2) {
        let integrand = |r: f64| {
            let v = h(r);
            rho.rho_within(r, w[0], w[1]) * v * v
        };
        total += adaptive_simpson(&integrand, w[0], w[1])?;
    }
    let end = *radii.last().unwrap_or(&0.0);
    let c = h(end);
    total += c * c * rho.tail(end);
    Ok(0.5 * total)
}

/// `F(X)` relative to `model` and `rho`.
pub fn eval_f(x: &FiniteSpace, model: &GrowthProfile, rho: &WeightFunction) -> Result<f64> {
    let support = x.support();
    let energies: Vec<f64> = match model {
        GrowthProfile::Step { breakpoints } => support
            .par_iter()
            .map(|&i| point_energy_step(&growth_breakpoints(x, i), breakpoints, rho))
            .collect(),
        _ => support
            .par_iter()
            .map(|&i| point_energy_smooth(&growth_breakpoints(x, i), model, rho))
            .collect::<Result<_>>()?,
    };
    Ok(support.iter().zip(&energies).map(|(&i, e)| x.w(i) * e).sum())
}

/// `∫_d^∞ ρ_r ((w_r(x)+w_r(y))/2 − w*_r) dr` for a step model.
fn pair_gradient_step(px: &[(f64, f64)], py: &[(f64, f64)], model: &[(f64, f64)], d: f64, rho: &WeightFunction) -> f64 {
    let merged = merge_steps(&[px, py, model]);
    let mut h = 0.0;
    let mut total = 0.0;
    for (k, (a, values)) in merged.iter().enumerate() {
        let b = merged.get(k + 1).map_or(f64::INFINITY, |m| m.0);
        let beta = 0.5 * (values[0] + values[1]) - values[2];
        if b > d && (h != 0.0 || beta != 0.0) {
            let lo = a.max(d);
            let alpha = h - beta * a;
            total += alpha * rho.moment(0, lo, b) + beta * rho.moment(1, lo, b);
        }
        if b.is_finite() {
            h += beta * (b - a);
        }
    }
    total
}

fn pair_gradient_smooth(px: &[(f64, f64)], py: &[(f64, f64)], model: &GrowthProfile, d: f64, rho: &WeightFunction) -> Result<f64> {
    let radii = smooth_pieces(px.iter().chain(py).map(|b| b.0).collect(), model, rho, d);
    let h = |r: f64| 0.5 * (ramp(px, r) + ramp(py, r)) - model.integral(r);
    let mut total = 0.0;
    for w in radii.windows(2) {
        let integrand = |r: f64| rho.rho_within(r, w[0], w[1]) * h(r);
        total += adaptive_simpson(&integrand, w[0], w[1])?;
    }
    let end = *radii.last().unwrap_or(&d);
    total += h(end) * rho.tail(end);
    Ok(total)
}

/// The ambient gradient of `−F`:
/// `f(x,y) = ∫_0^∞ ((v_r(x)+v_r(y))/2 − v*_r) ρ̄(r ∨ d(x,y)) dr`.
///
/// Positive entries mark pairs whose balls are too large compared with the
/// model; the downward flow enlarges them.
pub fn grad_minus_f(x: &FiniteSpace, model: &GrowthProfile, rho: &WeightFunction) -> Result<TangentVector> {
    check_gauge(x)?;
    let n = x.n();
    let support = x.support();
    let growth: Vec<Vec<(f64, f64)>> = (0..n).map(|i| if x.w(i) > 0.0 { growth_breakpoints(x, i) } else { Vec::new() }).collect();
    let pairs: Vec<(usize, usize)> =
        support.iter().flat_map(|&i| support.iter().filter(move |&&j| j > i).map(move |&j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = x.d(i, j);
            match model {
                GrowthProfile::Step { breakpoints } => Ok(pair_gradient_step(&growth[i], &growth[j], breakpoints, d, rho)),
                _ => pair_gradient_smooth(&growth[i], &growth[j], model, d, rho),
            }
        })
        .collect::<Result<_>>()?;
    let mut g = DMatrix::zeros(n, n);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        g[(i, j)] = v;
        g[(j, i)] = v;
    }
    Ok(TangentVector { g })
}

/// `Grad(−F̃)(x,y) = [(v_d(x)+v_d(y))/2 − v*_d]·ρ_d` with `d = d(x,y)`.
pub fn grad_minus_f_tilde(x: &FiniteSpace, model: &GrowthProfile, rho: &WeightFunction) -> Result<TangentVector> {
    check_gauge(x)?;
    let n = x.n();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = x.d(i, j);
            let v = (0.5 * (volume_growth(x, i, d) + volume_growth(x, j, d)) - model.value(d)) * rho.rho(d);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(TangentVector { g })
}

/// Adaptive Simpson rule with relative tolerance [`QUADRATURE_TOL`].
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    if !(b > a) {
        return Ok(0.0);
    }
    let pieces = 8;
    let h = (b - a) / pieces as f64;
    let mut total = 0.0;
    for k in 0..pieces {
        let lo = a + k as f64 * h;
        let hi = if k + 1 == pieces { b } else { lo + h };
        let mid = 0.5 * (lo + hi);
        let (fa, fm, fb) = (f(lo), f(mid), f(hi));
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        total += simpson_step(f, lo, hi, fa, fm, fb, whole, QUADRATURE_DEPTH)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, depth: u32) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(Error::Quadrature { a, b });
    }
    // an interval that can no longer be bisected contributes at rounding level
    let unsplittable = !(a < lm && lm < m && m < rm && rm < b);
    if unsplittable || delta.abs() <= 15.0 * (QUADRATURE_TOL * (left + right).abs()).max(1e-16 * (b - a)) {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature { a, b });
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, depth - 1)? + simpson_step(f, m, b, fm, frm, fb, right, depth - 1)?)
}
