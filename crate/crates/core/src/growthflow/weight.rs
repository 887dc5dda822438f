use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A weight `ρ` on radii used by the volume-growth functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFunction {
    /// `λ e^{−λr}`.
    Exponential { lambda: f64 },
    /// `1/R` on `[0, R]`.
    TruncatedUniform { radius: f64 },
    /// Piecewise constant: `values[k]` on `[knots[k], knots[k+1])`, zero past the last knot.
    Custom { knots: Vec<f64>, values: Vec<f64> },
}

impl WeightFunction {
    pub fn exponential(lambda: f64) -> Result<Self> {
        let w = WeightFunction::Exponential { lambda };
        w.validate()?;
        Ok(w)
    }

    pub fn truncated_uniform(radius: f64) -> Result<Self> {
        let w = WeightFunction::TruncatedUniform { radius };
        w.validate()?;
        Ok(w)
    }

    pub fn custom(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let w = WeightFunction::Custom { knots, values };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WeightFunction::Exponential { lambda } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(Error::InvalidParameter(format!("exponential rate {lambda}")));
                }
            }
            WeightFunction::TruncatedUniform { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidParameter(format!("uniform radius {radius}")));
                }
            }
            WeightFunction::Custom { knots, values } => {
                if knots.len() < 2 || values.len() + 1 != knots.len() {
                    return Err(Error::InvalidParameter("custom weight needs knots.len() == values.len() + 1 >= 2".into()));
                }
                if knots[0] != 0.0 || knots.windows(2).any(|w| !(w[1] > w[0])) || !knots.iter().all(|k| k.is_finite()) {
                    return Err(Error::InvalidParameter("custom knots must start at 0 and increase".into()));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidParameter("custom weight values must be finite and nonnegative".into()));
                }
            }
        }
        Ok(())
    }

    pub fn rho(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        match self {
            WeightFunction::Exponential { lambda } => lambda * (-lambda * r).exp(),
            WeightFunction::TruncatedUniform { radius } => {
                if r <= *radius {
                    1.0 / radius
                } else {
                    0.0
                }
            }
            WeightFunction::Custom { knots, values } => {
                let k = knots.partition_point(|&t| t <= r);
                if k == 0 || k > values.len() {
                    0.0
                } else {
                    values[k - 1]
                }
            }
        }
    }

    /// `ρ_r` for `r` in the closed piece `[lo, hi]` between consecutive knots,
    /// taking one-sided limits at the ends.
    pub fn rho_within(&self, r: f64, lo: f64, hi: f64) -> f64 {
        match self {
            WeightFunction::Exponential { .. } => self.rho(r),
            _ => self.rho(0.5 * (lo + hi)),
        }
    }

    /// Radii where `ρ` is not smooth.
    pub fn knots(&self) -> Vec<f64> {
        match self {
            WeightFunction::Exponential { .. } => Vec::new(),
            WeightFunction::TruncatedUniform { radius } => vec![*radius],
            WeightFunction::Custom { knots, .. } => knots[1..].to_vec(),
        }
    }

    /// `∫_a^b r^k ρ_r dr` for `k ∈ {0, 1, 2}`; `b` may be infinite.
    pub fn moment(&self, k: u32, a: f64, b: f64) -> f64 {
        let a = a.max(0.0);
        if !(b > a) {
            return 0.0;
        }
        match self {
            WeightFunction::Exponential { lambda } => {
                let l = *lambda;
                let anti = |r: f64| -> f64 {
                    if r.is_infinite() {
                        return 0.0;
                    }
                    let e = (-l * r).exp();
                    match k {
                        0 => -e,
                        1 => -(r + 1.0 / l) * e,
                        _ => -(r * r + 2.0 * r / l + 2.0 / (l * l)) * e,
                    }
                };
                anti(b) - anti(a)
            }
            WeightFunction::TruncatedUniform { radius } => power_moment(k, a, b.min(*radius)) / radius,
            WeightFunction::Custom { knots, values } => {
                let mut total = 0.0;
                for (i, &v) in values.iter().enumerate() {
                    let lo = a.max(knots[i]);
                    let hi = b.min(knots[i + 1]);
                    if hi > lo {
                        total += v * power_moment(k, lo, hi);
                    }
                }
                total
            }
        }
    }

    /// `ρ̄(a) = ∫_a^∞ ρ_r dr`.
    pub fn tail(&self, a: f64) -> f64 {
        self.moment(0, a, f64::INFINITY)
    }

    /// `∫_0^∞ r ρ_r dr`, the Lipschitz constant of `F`.
    pub fn first_moment(&self) -> f64 {
        self.moment(1, 0.0, f64::INFINITY)
    }

    /// `sup_r r ρ_r`.
    pub fn sup_r_rho(&self) -> f64 {
        match self {
            WeightFunction::Exponential { .. } => (-1.0f64).exp(),
            WeightFunction::TruncatedUniform { .. } => 1.0,
            WeightFunction::Custom { knots, values } => {
                values.iter().enumerate().map(|(i, v)| v * knots[i + 1]).fold(0.0, f64::max)
            }
        }
    }

    /// Convexity modulus `κ = −sup_r r ρ_r`.
    pub fn kappa(&self) -> f64 {
        -self.sup_r_rho()
    }

    /// Radius beyond which `ρ` vanishes, if any.
    pub fn support_end(&self) -> Option<f64> {
        match self {
            WeightFunction::Exponential { .. } => None,
            WeightFunction::TruncatedUniform { radius } => Some(*radius),
            WeightFunction::Custom { knots, .. } => knots.last().copied(),
        }
    }
}

fn power_moment(k: u32, a: f64, b: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let e = (k + 1) as i32;
    (b.powi(e) - a.powi(e)) / e as f64
}

impl std::str::FromStr for WeightFunction {
    type Err = Error;

    /// `exp:λ` or `unif:R`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').ok_or_else(|| Error::Parse(format!("weight spec `{s}`")))?;
        let value: f64 = arg.trim().parse().map_err(|_| Error::Parse(format!("weight parameter `{arg}`")))?;
        match kind.trim() {
            "exp" => WeightFunction::exponential(value),
            "unif" => WeightFunction::truncated_uniform(value),
            other => Err(Error::Parse(format!("unknown weight kind `{other}`"))),
        }
    }
}
