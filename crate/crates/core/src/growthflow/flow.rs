use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{eval_f, grad_minus_f, GrowthProfile, WeightFunction};
use crate::distortion::{dist, SolverConfig};
use crate::error::{Error, Result};
use crate::functionals::{ambient_gradient_polynomial, eval_g, g_spec, gradient_g0, Mode};
use crate::geometry::{TangentVector, Verdict};
use crate::spaces::{triangle_defect, FiniteSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    Rk4,
}

impl std::str::FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Integrator::Euler),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(Error::Parse(format!("unknown integrator `{other}`"))),
        }
    }
}

/// The functional whose downward gradient flow is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowFunctional {
    F,
    FPlusG { k: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub integrator: Integrator,
    pub dt: f64,
    pub steps: usize,
    /// Keep every `save_every`-th state; the final state is always kept.
    pub save_every: usize,
    pub functional: FlowFunctional,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { integrator: Integrator::Rk4, dt: 1e-3, steps: 1000, save_every: 1, functional: FlowFunctional::F }
    }
}

/// A gauge entry pushed below zero and reset to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub step: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// One line of trajectory output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub t: f64,
    pub gauge: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "G", skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    pub triangle_defect: f64,
    pub clamp_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub gauges: Vec<DMatrix<f64>>,
    pub f_values: Vec<f64>,
    pub g_values: Vec<Option<f64>>,
    pub triangle_defects: Vec<f64>,
    /// Running count of clamp events at each saved state.
    pub clamp_counts: Vec<usize>,
    pub clamp_events: Vec<ClampEvent>,
    pub config: FlowConfig,
}

impl FlowTrajectory {
    pub fn records(&self) -> Vec<FlowRecord> {
        (0..self.times.len())
            .map(|k| {
                let m = &self.gauges[k];
                FlowRecord {
                    t: self.times[k],
                    gauge: (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect(),
                    f: self.f_values[k],
                    g: self.g_values[k],
                    triangle_defect: self.triangle_defects[k],
                    clamp_events: self.clamp_counts[k],
                }
            })
            .collect()
    }

    pub fn final_gauge(&self) -> &DMatrix<f64> {
        self.gauges.last().expect("trajectory holds the initial state")
    }

    /// The saved state `k` as a space with the weights of `base`.
    pub fn space_at(&self, base: &FiniteSpace, k: usize) -> Result<FiniteSpace> {
        base.with_gauge(self.gauges[k].clone())
    }
}

/// `d/dt d = Grad(−F)`, minus `Grad G_K` for the combined functional.
pub fn flow_velocity(x: &FiniteSpace, model: &GrowthProfile, rho: &WeightFunction, functional: FlowFunctional) -> Result<TangentVector> {
    let f = grad_minus_f(x, model, rho)?;
    match functional {
        FlowFunctional::F => Ok(f),
        FlowFunctional::FPlusG { k } => {
            let g = if k == 0.0 { gradient_g0(x) } else { ambient_gradient_polynomial(&g_spec(k), x)? };
            Ok(TangentVector { g: f.g - g.g })
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = 0.0;
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn velocity_at(base: &FiniteSpace, gauge: &DMatrix<f64>, model: &GrowthProfile, rho: &WeightFunction, functional: FlowFunctional) -> Result<DMatrix<f64>> {
    // intermediate stages are evaluated at the projection onto d ≥ 0
    let mut g = gauge.map(|v| v.max(0.0));
    symmetrize(&mut g);
    let v = flow_velocity(&base.with_gauge(g)?, model, rho, functional)?;
    if v.g.iter().any(|e| !e.is_finite()) {
        return Err(Error::Numerical("non-finite flow velocity".into()));
    }
    Ok(v.g)
}

fn functional_values(x: &FiniteSpace, model: &GrowthProfile, rho: &WeightFunction, functional: FlowFunctional) -> Result<(f64, Option<f64>)> {
    let f = eval_f(x, model, rho)?;
    let g = match functional {
        FlowFunctional::F => None,
        FlowFunctional::FPlusG { k } => Some(eval_g(x, k, Mode::Exact)?.value),
    };
    Ok((f, g))
}

/// Integrates the downward gradient flow from `x0`, which must carry uniform
/// weights.
///
/// Negative entries are clamped to 0 after every step and logged. Triangle
/// inequalities are not enforced; their defect is recorded instead. The
/// integrator does nothing special when the flow meets additional symmetries.
pub fn flow(x0: &FiniteSpace, model: &GrowthProfile, rho: &WeightFunction, config: &FlowConfig) -> Result<FlowTrajectory> {
    if !x0.is_uniform() {
        return Err(Error::Precondition("flow needs uniform weights".into()));
    }
    if !(config.dt.is_finite() && config.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step {}", config.dt)));
    }
    if config.save_every == 0 {
        return Err(Error::InvalidParameter("save stride must be positive".into()));
    }
    let n = x0.n();
    let dt = config.dt;
    let mut gauge = x0.gauge().clone();
    symmetrize(&mut gauge);
    let mut current = x0.with_gauge(gauge.clone())?;
    let (f0, g0) = functional_values(&current, model, rho, config.functional)?;
    let mut trajectory = FlowTrajectory {
        times: vec![0.0],
        gauges: vec![gauge.clone()],
        f_values: vec![f0],
        g_values: vec![g0],
        triangle_defects: vec![triangle_defect(&current)],
        clamp_counts: vec![0],
        clamp_events: Vec::new(),
        config: *config,
    };
    for step in 1..=config.steps {
        let velocity = |g: &DMatrix<f64>| velocity_at(x0, g, model, rho, config.functional);
        let mut next = match config.integrator {
            Integrator::Euler => &gauge + velocity(&gauge)? * dt,
            Integrator::Rk4 => {
                let k1 = velocity(&gauge)?;
                let k2 = velocity(&(&gauge + &k1 * (0.5 * dt)))?;
                let k3 = velocity(&(&gauge + &k2 * (0.5 * dt)))?;
                let k4 = velocity(&(&gauge + &k3 * dt))?;
                &gauge + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            }
        };
        symmetrize(&mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gauge at step {step}")));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if next[(i, j)] < 0.0 {
                    trajectory.clamp_events.push(ClampEvent { step, i, j, value: next[(i, j)] });
                    next[(i, j)] = 0.0;
                    next[(j, i)] = 0.0;
                }
            }
        }
        gauge = next;
        if step % config.save_every == 0 || step == config.steps {
            current = x0.with_gauge(gauge.clone())?;
            let (f, g) = functional_values(&current, model, rho, config.functional)?;
            if !f.is_finite() {
                return Err(Error::Numerical(format!("non-finite F at step {step}")));
            }
            trajectory.times.push(step as f64 * dt);
            trajectory.gauges.push(gauge.clone());
            trajectory.f_values.push(f);
            trajectory.g_values.push(g);
            trajectory.triangle_defects.push(triangle_defect(&current));
            trajectory.clamp_counts.push(trajectory.clamp_events.len());
        }
    }
    Ok(trajectory)
}

/// Slack added to the contraction bound so that equal endpoints compare as equal.
pub const CONTRACTION_ABS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub t_end: f64,
    pub kappa: f64,
    /// `e^{|κ| T}`.
    pub factor: f64,
    pub initial: (f64, f64),
    pub terminal: (f64, f64),
    pub ratio: Option<f64>,
    pub verdict: Verdict,
}

/// Runs both flows to `t_end` and compares `D(X_T, X'_T)` with `e^{|κ|T} D(X_0, X'_0)`.
///
/// The verdict is INCONCLUSIVE unless both distances are certified.
pub fn contraction_check(
    x0: &FiniteSpace,
    x1: &FiniteSpace,
    model: &GrowthProfile,
    rho: &WeightFunction,
    t_end: f64,
    config: &FlowConfig,
    solver: &SolverConfig,
) -> Result<ContractionReport> {
    if x0.n() != x1.n() {
        return Err(Error::Shape(format!("spaces have {} and {} points", x0.n(), x1.n())));
    }
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("final time {t_end}")));
    }
    let steps = (t_end / config.dt).round() as usize;
    let cfg = FlowConfig { steps, save_every: steps.max(1), dt: if steps > 0 { t_end / steps as f64 } else { config.dt }, ..*config };
    let (a, b) = rayon::join(|| flow(x0, model, rho, &cfg), || flow(x1, model, rho, &cfg));
    let (a, b) = (a?, b?);
    let xa = x0.with_gauge(a.final_gauge().clone())?;
    let xb = x1.with_gauge(b.final_gauge().clone())?;
    let (d0, dt) = rayon::join(|| dist(x0, x1, 2.0, solver), || dist(&xa, &xb, 2.0, solver));
    let (d0, dt) = (d0?, dt?);
    let kappa = rho.kappa();
    let factor = (kappa.abs() * t_end).exp();
    let ratio = if d0.lower > 0.0 { Some(dt.upper / d0.lower) } else { None };
    let verdict = if !(d0.certified && dt.certified) {
        Verdict::Inconclusive
    } else if dt.upper <= factor * d0.lower * (1.0 + 1e-3) + CONTRACTION_ABS_TOL {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(ContractionReport { t_end, kappa, factor, initial: (d0.lower, d0.upper), terminal: (dt.lower, dt.upper), ratio, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::couplings::symmetry_group;

    fn setup() -> (GrowthProfile, WeightFunction) {
        (GrowthProfile::circle(4).unwrap(), WeightFunction::exponential(1.0).unwrap())
    }

    #[test]
    fn minimizer_is_stationary() {
        let x = FiniteSpace::discrete_circle(4);
        let (model, rho) = setup();
        let t = flow(&x, &model, &rho, &FlowConfig { steps: 50, ..Default::default() }).unwrap();
        assert!(t.gauges.iter().all(|g| g == x.gauge()));
        assert!(t.f_values.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn euler_flow_on_k4_decreases_f_and_keeps_symmetry() {
        let x = FiniteSpace::complete_graph(4);
        let (model, rho) = setup();
        let cfg = FlowConfig { integrator: Integrator::Euler, dt: 1e-3, steps: 2000, save_every: 10, functional: FlowFunctional::F };
        let t = flow(&x, &model, &rho, &cfg).unwrap();
        assert!(t.f_values.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(t.f_values.last().unwrap() < &t.f_values[0]);
        let group = symmetry_group(&x, 10).unwrap();
        for g in &t.gauges {
            for sigma in &group.elements {
                for i in 0..4 {
                    for j in 0..4 {
                        assert!((g[(sigma[i], sigma[j])] - g[(i, j)]).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn combined_velocity_is_additive() {
        let (model, rho) = setup();
        let x = FiniteSpace::from_points(&[vec![0.0, 0.0], vec![1.0, 0.1], vec![0.3, 1.2], vec![1.1, 0.9]]).unwrap();
        for k in [0.0, -0.5] {
            let v = flow_velocity(&x, &model, &rho, FlowFunctional::FPlusG { k }).unwrap();
            let f = grad_minus_f(&x, &model, &rho).unwrap();
            let g = if k == 0.0 { gradient_g0(&x) } else { ambient_gradient_polynomial(&g_spec(k), &x).unwrap() };
            for (a, (b, c)) in v.g.iter().zip(f.g.iter().zip(g.g.iter())) {
                assert!((a - (b - c)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn records_are_serializable() {
        let x = FiniteSpace::complete_graph(3);
        let (model, rho) = setup();
        let t = flow(&x, &model, &rho, &FlowConfig { steps: 5, save_every: 2, ..Default::default() }).unwrap();
        assert_eq!(t.times, vec![0.0, 0.002, 0.004, 0.005]);
        let line = serde_json::to_string(&t.records()[1]).unwrap();
        assert!(line.contains("\"F\":") && !line.contains("\"G\""));
    }

    #[test]
    fn rejects_weighted_input() {
        let (model, rho) = setup();
        let x = FiniteSpace::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), vec![0.25, 0.75]).unwrap();
        assert!(matches!(flow(&x, &model, &rho, &FlowConfig::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn contraction_of_identical_spaces() {
        let (model, rho) = setup();
        let x = FiniteSpace::complete_graph(4);
        let r = contraction_check(&x, &x, &model, &rho, 0.5, &FlowConfig { dt: 1e-2, ..Default::default() }, &SolverConfig::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.terminal.1, 0.0);
    }
}
