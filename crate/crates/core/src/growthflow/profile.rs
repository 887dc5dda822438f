use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{is_balanced, point_atoms};
use crate::error::{Error, Result};
use crate::spaces::FiniteSpace;

const PROFILE_TOL: f64 = 1e-12;

/// A model volume growth `r ↦ v*_r`, nondecreasing and left-continuous with
/// `v*_0 = 0` and `v*_∞ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GrowthProfile {
    /// `v*_t = v_k` for `t ∈ (r_k, r_{k+1}]` and `0` for `t ≤ r_0`, with the
    /// last value equal to 1.
    Step { breakpoints: Vec<(f64, f64)> },
    /// The space form of dimension `dim` and curvature `k`. For `k > 0` the
    /// sphere normalized to mass 1; for `k ≤ 0` the ball volume divided by
    /// `volume` and capped at 1.
    ConstantCurvature { dim: usize, k: f64, volume: Option<f64> },
}

impl GrowthProfile {
    pub fn step(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        let p = GrowthProfile::Step { breakpoints };
        p.validate()?;
        Ok(p)
    }

    /// Growth of the discrete circle with `n` points: `min((2k+1)/n, 1)` on `(k, k+1]`.
    pub fn circle(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("circle needs at least one point".into()));
        }
        GrowthProfile::from_space(&FiniteSpace::discrete_circle(n))
    }

    /// The common growth of a balanced space, or the mass-averaged growth
    /// `Σ_x m_x v_r(x)` otherwise.
    pub fn from_space(x: &FiniteSpace) -> Result<Self> {
        let (balanced, common) = is_balanced(x, 0.0);
        if balanced {
            if let Some(p) = common {
                return Ok(p);
            }
        }
        let mut all: Vec<(f64, f64)> = Vec::new();
        for i in x.support() {
            for (r, m) in point_atoms(x, i) {
                all.push((r, m * x.w(i)));
            }
        }
        GrowthProfile::from_atoms(all)
    }

    /// Builds a step profile from jumps `(radius, mass)`; the masses must sum to 1.
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        GrowthProfile::step(cumulative(atoms))
    }

    /// Normalized profile of the space form `M^{dim,k}`; `volume` caps the
    /// growth when `k ≤ 0`.
    pub fn constant_curvature(dim: usize, k: f64, volume: Option<f64>) -> Result<Self> {
        let p = GrowthProfile::ConstantCurvature { dim, k, volume };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GrowthProfile::Step { breakpoints } => {
                if breakpoints.is_empty() {
                    return Err(Error::InvalidParameter("step profile needs breakpoints".into()));
                }
                let mut prev_r = -1.0;
                let mut prev_v = 0.0;
                for &(r, v) in breakpoints {
                    if !(r.is_finite() && r >= 0.0 && r > prev_r) {
                        return Err(Error::InvalidParameter(format!("breakpoint radius {r} out of order")));
                    }
                    if !(v.is_finite() && v >= prev_v - PROFILE_TOL && v <= 1.0 + PROFILE_TOL) {
                        return Err(Error::InvalidParameter(format!("profile value {v} at {r} not nondecreasing in [0, 1]")));
                    }
                    prev_r = r;
                    prev_v = v;
                }
                if (prev_v - 1.0).abs() > PROFILE_TOL {
                    return Err(Error::InvalidParameter(format!("profile ends at {prev_v}, expected 1")));
                }
            }
            GrowthProfile::ConstantCurvature { dim, k, volume } => {
                if *dim == 0 {
                    return Err(Error::InvalidParameter("dimension must be at least 1".into()));
                }
                if !k.is_finite() {
                    return Err(Error::InvalidParameter(format!("curvature {k}")));
                }
                match (*k > 0.0, volume) {
                    (true, Some(_)) => {
                        return Err(Error::InvalidParameter("positive curvature profiles are already normalized".into()))
                    }
                    (false, None) => {
                        return Err(Error::InvalidParameter("curvature <= 0 needs a total-volume cap".into()))
                    }
                    (false, Some(v)) if !(v.is_finite() && *v > 0.0) => {
                        return Err(Error::InvalidParameter(format!("volume cap {v}")))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn is_step(&self) -> bool {
        matches!(self, GrowthProfile::Step { .. })
    }

    /// Jumps `(radius, mass)` of a step profile.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            GrowthProfile::Step { breakpoints } => {
                let mut prev = 0.0;
                Some(
                    breakpoints
                        .iter()
                        .map(|&(r, v)| {
                            let jump = v - prev;
                            prev = v;
                            (r, jump)
                        })
                        .collect(),
                )
            }
            _ => None,
        }
    }

    /// `v*_r`.
    pub fn value(&self, r: f64) -> f64 {
        match self {
            GrowthProfile::Step { breakpoints } => {
                let k = breakpoints.partition_point(|&(t, _)| t < r);
                if k == 0 {
                    0.0
                } else {
                    breakpoints[k - 1].1
                }
            }
            GrowthProfile::ConstantCurvature { dim, k, volume } => {
                if r <= 0.0 {
                    return 0.0;
                }
                let m = dim - 1;
                if *k > 0.0 {
                    let s = k.sqrt();
                    sin_power(m, (s * r).min(PI)) / sin_power(m, PI)
                } else {
                    let v = volume.unwrap_or(1.0);
                    (ball_volume(*dim, *k, r) / v).min(1.0)
                }
            }
        }
    }

    /// `w*_r = ∫_0^r v*_t dt`.
    pub fn integral(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match self {
            GrowthProfile::Step { .. } => {
                let atoms = self.atoms().unwrap_or_default();
                atoms.iter().map(|&(t, a)| a * (r - t).max(0.0)).sum()
            }
            GrowthProfile::ConstantCurvature { dim, k, volume } => {
                let m = dim - 1;
                let sat = self.saturation();
                let below = |r: f64| -> f64 {
                    if *k > 0.0 {
                        let s = k.sqrt();
                        sin_power_twice(m, s * r) / (s * sin_power(m, PI))
                    } else {
                        ball_volume_integral(*dim, *k, r) / volume.unwrap_or(1.0)
                    }
                };
                if r <= sat {
                    below(r)
                } else {
                    below(sat) + (r - sat)
                }
            }
        }
    }

    /// Smallest radius past which `v* = 1`.
    pub fn saturation(&self) -> f64 {
        match self {
            GrowthProfile::Step { breakpoints } => breakpoints.last().map(|b| b.0).unwrap_or(0.0),
            GrowthProfile::ConstantCurvature { dim, k, volume } => {
                if *k > 0.0 {
                    PI / k.sqrt()
                } else {
                    let v = volume.unwrap_or(1.0);
                    let mut hi = 1.0;
                    while ball_volume(*dim, *k, hi) < v {
                        hi *= 2.0;
                    }
                    let mut lo = 0.0;
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if ball_volume(*dim, *k, mid) < v {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                        if hi - lo <= f64::EPSILON * hi {
                            break;
                        }
                    }
                    hi
                }
            }
        }
    }
}

/// Sorts jumps by radius and accumulates them into `(radius, value)`
/// breakpoints, snapping a final value within 1e-9 of 1 to 1.
pub(crate) fn cumulative(mut atoms: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut breakpoints: Vec<(f64, f64)> = Vec::new();
    let mut acc = 0.0;
    for (r, m) in atoms {
        acc += m;
        match breakpoints.last_mut() {
            Some(last) if last.0 == r => last.1 = acc,
            _ => breakpoints.push((r, acc)),
        }
    }
    if let Some(last) = breakpoints.last_mut() {
        if (last.1 - 1.0).abs() <= 1e-9 {
            last.1 = 1.0;
        }
    }
    breakpoints
}

impl std::str::FromStr for GrowthProfile {
    type Err = Error;

    /// `circle:n` or `sphere:dim,K`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').ok_or_else(|| Error::Parse(format!("model spec `{s}`")))?;
        match kind.trim() {
            "circle" => {
                let n: usize = arg.trim().parse().map_err(|_| Error::Parse(format!("circle size `{arg}`")))?;
                GrowthProfile::circle(n)
            }
            "sphere" => {
                let (d, k) = arg.split_once(',').ok_or_else(|| Error::Parse(format!("sphere spec `{arg}`")))?;
                let dim: usize = d.trim().parse().map_err(|_| Error::Parse(format!("dimension `{d}`")))?;
                let k: f64 = k.trim().parse().map_err(|_| Error::Parse(format!("curvature `{k}`")))?;
                GrowthProfile::constant_curvature(dim, k, None)
            }
            other => Err(Error::Parse(format!("unknown model kind `{other}`"))),
        }
    }
}

/// `∫_0^x sin^m t dt`.
fn sin_power(m: usize, x: f64) -> f64 {
    match m {
        0 => x,
        1 => 2.0 * (0.5 * x).sin().powi(2),
        _ => {
            let mf = m as f64;
            -x.sin().powi(m as i32 - 1) * x.cos() / mf + (mf - 1.0) / mf * sin_power(m - 2, x)
        }
    }
}

/// `∫_0^x ∫_0^s sin^m t dt ds`.
fn sin_power_twice(m: usize, x: f64) -> f64 {
    match m {
        0 => 0.5 * x * x,
        1 => x - x.sin(),
        _ => {
            let mf = m as f64;
            -x.sin().powi(m as i32) / (mf * mf) + (mf - 1.0) / mf * sin_power_twice(m - 2, x)
        }
    }
}

fn sinh_power(m: usize, x: f64) -> f64 {
    match m {
        0 => x,
        1 => 2.0 * (0.5 * x).sinh().powi(2),
        _ => {
            let mf = m as f64;
            x.sinh().powi(m as i32 - 1) * x.cosh() / mf - (mf - 1.0) / mf * sinh_power(m - 2, x)
        }
    }
}

fn sinh_power_twice(m: usize, x: f64) -> f64 {
    match m {
        0 => 0.5 * x * x,
        1 => x.sinh() - x,
        _ => {
            let mf = m as f64;
            x.sinh().powi(m as i32) / (mf * mf) - (mf - 1.0) / mf * sinh_power_twice(m - 2, x)
        }
    }
}

/// `Γ(n/2)`.
fn gamma_half(n: usize) -> f64 {
    let (mut g, mut x) = if n % 2 == 0 { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    while x < n as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

fn sphere_area(dim: usize) -> f64 {
    2.0 * PI.powf(dim as f64 / 2.0) / gamma_half(dim)
}

/// Volume of a ball of radius `r` in `M^{dim,k}` for `k ≤ 0`.
fn ball_volume(dim: usize, k: f64, r: f64) -> f64 {
    let m = dim - 1;
    let omega = sphere_area(dim);
    if k == 0.0 {
        omega * r.powi(dim as i32) / dim as f64
    } else {
        let s = (-k).sqrt();
        omega * sinh_power(m, s * r) / s.powi(dim as i32)
    }
}

fn ball_volume_integral(dim: usize, k: f64, r: f64) -> f64 {
    let m = dim - 1;
    let omega = sphere_area(dim);
    if k == 0.0 {
        omega * r.powi(dim as i32 + 1) / (dim * (dim + 1)) as f64
    } else {
        let s = (-k).sqrt();
        omega * sinh_power_twice(m, s * r) / s.powi(dim as i32 + 1)
    }
}
