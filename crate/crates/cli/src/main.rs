//! `mmflow`: distances, geodesics, functionals and flows on finite metric
//! measure spaces from JSON files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmflow::couplings::Coupling;
use mmflow::distortion::{dist, Solver, SolverConfig};
use mmflow::functionals::{
    ambient_gradient_polynomial, eval_g, eval_h, eval_polynomial, g_spec, gradient_g0, gradient_h0, h_spec, size2_spec,
    triangle_defect_spec, Mode,
};
use mmflow::geometry::{check_quadruple, check_triangle_comparison, geodesic_point, TangentVector, Verdict, DEFAULT_GRID};
use mmflow::growthflow::{eval_f, flow, grad_minus_f, is_balanced, FlowConfig, FlowFunctional, GrowthProfile, Integrator, WeightFunction};
use mmflow::io::{read_space, space_from_json_str, space_to_json_string};
use mmflow::sampling::{empirical_homomorphism_test, sample_matrix_distribution, DEFAULT_ALPHA, DEFAULT_RESAMPLES};
use mmflow::spaces::{triangle_defect, validate, FiniteSpace};
use mmflow::Error;
use serde_json::{json, Map, Value};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "mmflow", version, about = "Distortion distances and volume-growth flows on finite metric measure spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Distortion distance between two spaces.
    Dist {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Leave the optimal coupling out of the output.
        #[arg(long)]
        no_coupling: bool,
    },
    /// A point on the geodesic through an optimal coupling.
    Geodesic {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        t: f64,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the intermediate space as a space file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a functional and optionally its gradient.
    Functional {
        space: PathBuf,
        #[arg(long, value_enum)]
        functional: FunctionalName,
        #[arg(long = "K", default_value_t = 0.0, allow_hyphen_values = true)]
        k: f64,
        #[arg(long, default_value = "self")]
        model: String,
        #[arg(long, default_value = "exp:1")]
        rho: String,
        #[arg(long)]
        gradient: bool,
        /// Monte Carlo sample count when the exact sum is too large.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Integrate the downward gradient flow of F (or F + G_K).
    Flow {
        space: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "exp:1")]
        rho: String,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = IntegratorArg::Rk4)]
        integrator: IntegratorArg,
        #[arg(long, default_value_t = 1)]
        save_every: usize,
        /// Add G_K with this curvature to the flowing functional.
        #[arg(long = "with-G", allow_hyphen_values = true)]
        with_g: Option<f64>,
        /// Trajectory JSONL; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Table of (t, F) for plotting.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Property checks printing PASS, FAIL or INCONCLUSIVE.
    Check {
        #[command(subcommand)]
        check: CheckCommand,
    },
    /// Draw matrix samples, or compare two spaces through them.
    Sample {
        space: PathBuf,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Compare against this space instead of writing samples.
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum CheckCommand {
    /// Triangle inequality of the gauge.
    Triangle { space: PathBuf },
    /// Whether all points share one volume growth.
    Balanced {
        space: PathBuf,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Quadruple comparison for four spaces.
    Quadruple {
        spaces: Vec<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Triangle comparison along the geodesic from A to B against C.
    TriangleComparison {
        a: PathBuf,
        b: PathBuf,
        c: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value = "2")]
    p: String,
    #[arg(long, default_value = "auto")]
    solver: String,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn exponent(&self) -> Result<f64, Error> {
        match self.p.as_str() {
            "inf" | "infinity" => Ok(f64::INFINITY),
            s => s.parse().map_err(|_| Error::Parse(format!("exponent `{s}`"))),
        }
    }

    fn config(&self) -> Result<SolverConfig, Error> {
        let solver: Solver = self.solver.parse()?;
        Ok(SolverConfig { solver, fw_restarts: self.restarts, seed: self.seed, ..SolverConfig::default() })
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FunctionalName {
    #[value(name = "size2")]
    Size2,
    #[value(name = "triangle_defect")]
    TriangleDefect,
    #[value(name = "G0")]
    G0,
    #[value(name = "GK")]
    Gk,
    #[value(name = "H0")]
    H0,
    #[value(name = "HK")]
    Hk,
    #[value(name = "F")]
    F,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum IntegratorArg {
    Euler,
    Rk4,
}

/// A failure with its exit code: 2 for bad input, 3 for unmet preconditions.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Precondition(_)
            | Error::SizeBound { .. }
            | Error::MissingDerivative(_)
            | Error::Quadrature { .. }
            | Error::Numerical(_)
            | Error::NotRepresentable(_) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 2, message: e.to_string() }
    }
}

type CmdResult = Result<u8, Failure>;

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn load(p: &Path) -> Result<FiniteSpace, Failure> {
    read_space(p).map_err(|e| Failure::from(e).with_context(&path_str(p)))
}

impl Failure {
    fn with_context(self, ctx: &str) -> Self {
        Failure { message: format!("{ctx}: {}", self.message), ..self }
    }
}

/// Writes `value` with the run configuration and version embedded.
fn envelope(config: &Value, mut body: Map<String, Value>) -> Value {
    body.insert("mmflow_version".into(), json!(VERSION));
    body.insert("config".into(), config.clone());
    Value::Object(body)
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string(v).expect("json values serialize"));
}

fn body(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

fn verdict_exit(v: Verdict) -> u8 {
    eprintln!("{}", serde_json::to_value(v).ok().and_then(|s| s.as_str().map(str::to_owned)).unwrap_or_default());
    match v {
        Verdict::Fail => 1,
        Verdict::Pass | Verdict::Inconclusive => 0,
    }
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn parse_model(spec: &str, x: &FiniteSpace) -> Result<GrowthProfile, Failure> {
    if spec == "self" {
        return Ok(GrowthProfile::from_space(x)?);
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let text = fs::read_to_string(path)?;
        if let Ok(profile) = serde_json::from_str::<GrowthProfile>(&text) {
            profile.validate()?;
            return Ok(profile);
        }
        return Ok(GrowthProfile::from_space(&space_from_json_str(&text)?)?);
    }
    Ok(spec.parse()?)
}

fn cmd_dist(a: &Path, b: &Path, solver: &SolverArgs, no_coupling: bool) -> CmdResult {
    let (x0, x1) = (load(a)?, load(b)?);
    let p = solver.exponent()?;
    let cfg = solver.config()?;
    let config = json!({"subcommand": "dist", "inputs": [path_str(a), path_str(b)], "p": solver.p, "solver": cfg});
    let r = dist(&x0, &x1, p, &cfg)?;
    let mut out = body(json!({"lower": r.lower, "upper": r.upper, "certified": r.certified, "solver_trace": r.solver_trace}));
    if !no_coupling {
        out.insert("coupling".into(), serde_json::to_value(&r.best_coupling).map_err(Error::from)?);
    }
    print_json(&envelope(&config, out));
    Ok(0)
}

fn cmd_geodesic(a: &Path, b: &Path, t: f64, solver: &SolverArgs, out: Option<&Path>) -> CmdResult {
    let (x0, x1) = (load(a)?, load(b)?);
    let cfg = solver.config()?;
    let config = json!({"subcommand": "geodesic", "inputs": [path_str(a), path_str(b)], "t": t, "solver": cfg,
        "output": out.map(path_str)});
    let r = dist(&x0, &x1, 2.0, &cfg)?;
    let point = geodesic_point(&x0, &x1, &r.best_coupling, t)?;
    let space_text = space_to_json_string(&point.space);
    if let Some(path) = out {
        fs::write(path, space_text.clone() + "\n")?;
    }
    let space: Value = serde_json::from_str(&space_text).map_err(Error::from)?;
    let pairs: Vec<Value> = point.pairs.iter().map(|&(i, j)| json!([i, j])).collect();
    let body = body(json!({"t": t, "distance": {"lower": r.lower, "upper": r.upper, "certified": r.certified},
        "space": space, "pairs": pairs}));
    print_json(&envelope(&config, body));
    Ok(0)
}

fn tangent_json(v: &TangentVector) -> Value {
    json!(matrix_rows(&v.g))
}

#[allow(clippy::too_many_arguments)]
fn cmd_functional(path: &Path, name: FunctionalName, k: f64, model: &str, rho: &str, gradient: bool, samples: usize, seed: u64) -> CmdResult {
    let x = load(path)?;
    let key = name.to_possible_value().map(|v| v.get_name().to_owned()).unwrap_or_default();
    let mut config = body(json!({"subcommand": "functional", "inputs": [path_str(path)], "functional": key, "gradient": gradient}));
    let mode = Mode::auto(x.n(), 4, samples, seed);
    let (value, stderr, grad) = match name {
        FunctionalName::Size2 | FunctionalName::TriangleDefect => {
            let spec = if matches!(name, FunctionalName::Size2) { size2_spec() } else { triangle_defect_spec() };
            let est = eval_polynomial(&spec, &x, Mode::auto(x.n(), spec.order, samples, seed))?;
            let value = if matches!(name, FunctionalName::TriangleDefect) && est.stderr.is_none() { triangle_defect(&x) } else { est.value };
            let g = if gradient { Some(ambient_gradient_polynomial(&spec, &x)?) } else { None };
            (value, est.stderr, g)
        }
        FunctionalName::G0 | FunctionalName::Gk => {
            let k = if matches!(name, FunctionalName::G0) { 0.0 } else { k };
            config.insert("K".into(), json!(k));
            let est = eval_g(&x, k, mode)?;
            let g = match (gradient, k == 0.0) {
                (false, _) => None,
                (true, true) => Some(gradient_g0(&x)),
                (true, false) => Some(ambient_gradient_polynomial(&g_spec(k), &x)?),
            };
            (est.value, est.stderr, g)
        }
        FunctionalName::H0 | FunctionalName::Hk => {
            let k = if matches!(name, FunctionalName::H0) { 0.0 } else { k };
            config.insert("K".into(), json!(k));
            let est = eval_h(&x, k, mode)?;
            let g = match (gradient, k == 0.0) {
                (false, _) => None,
                (true, true) => Some(gradient_h0(&x)),
                (true, false) => Some(ambient_gradient_polynomial(&h_spec(k), &x)?),
            };
            (est.value, est.stderr, g)
        }
        FunctionalName::F => {
            config.insert("model".into(), json!(model));
            config.insert("rho".into(), json!(rho));
            let profile = parse_model(model, &x)?;
            let weight: WeightFunction = rho.parse()?;
            let value = eval_f(&x, &profile, &weight)?;
            let g = if gradient { Some(grad_minus_f(&x, &profile, &weight)?.scaled(-1.0)) } else { None };
            (value, None, g)
        }
    };
    if matches!(mode, Mode::MonteCarlo { .. }) {
        config.insert("samples".into(), json!(samples));
        config.insert("seed".into(), json!(seed));
    }
    let mut out = body(json!({"value": value, "stderr": stderr}));
    if let Some(g) = grad {
        out.insert("gradient".into(), tangent_json(&g));
    }
    print_json(&envelope(&Value::Object(config), out));
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_flow(
    path: &Path,
    model: &str,
    rho: &str,
    dt: f64,
    steps: usize,
    integrator: IntegratorArg,
    save_every: usize,
    with_g: Option<f64>,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> CmdResult {
    let x = load(path)?;
    let profile = parse_model(model, &x)?;
    let weight: WeightFunction = rho.parse()?;
    let integrator = match integrator {
        IntegratorArg::Euler => Integrator::Euler,
        IntegratorArg::Rk4 => Integrator::Rk4,
    };
    let functional = match with_g {
        Some(k) => FlowFunctional::FPlusG { k },
        None => FlowFunctional::F,
    };
    let cfg = FlowConfig { integrator, dt, steps, save_every, functional };
    let config = json!({"subcommand": "flow", "inputs": [path_str(path)], "model": model, "rho": rho, "flow": cfg,
        "output": out.map(path_str), "csv": csv.map(path_str)});
    let trajectory = flow(&x, &profile, &weight, &cfg)?;
    let mut lines = vec![serde_json::to_string(&envelope(&config, body(json!({"record": "header"})))).map_err(Error::from)?];
    for r in trajectory.records() {
        lines.push(serde_json::to_string(&r).map_err(Error::from)?);
    }
    let text = lines.join("\n") + "\n";
    match out {
        Some(p) => {
            fs::write(p, &text)?;
            let summary = body(json!({
                "saved_states": trajectory.times.len(),
                "final_F": trajectory.f_values.last(),
                "clamp_events": trajectory.clamp_events,
            }));
            print_json(&envelope(&config, summary));
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    if let Some(p) = csv {
        let mut table = format!("# mmflow {VERSION} {}\nt,F\n", serde_json::to_string(&config).map_err(Error::from)?);
        for (t, f) in trajectory.times.iter().zip(&trajectory.f_values) {
            table.push_str(&format!("{t},{f}\n"));
        }
        fs::write(p, table)?;
    }
    Ok(0)
}

fn cmd_check(check: &CheckCommand) -> CmdResult {
    match check {
        CheckCommand::Triangle { space } => {
            let x = load(space)?;
            let kind = validate(&x);
            let verdict = if kind.satisfies_triangle() { Verdict::Pass } else { Verdict::Fail };
            let config = json!({"subcommand": "check triangle", "inputs": [path_str(space)]});
            print_json(&envelope(&config, body(json!({"kind": kind, "triangle_defect": triangle_defect(&x), "verdict": verdict}))));
            Ok(verdict_exit(verdict))
        }
        CheckCommand::Balanced { space, tol } => {
            let x = load(space)?;
            let (balanced, profile) = is_balanced(&x, *tol);
            let verdict = if balanced { Verdict::Pass } else { Verdict::Fail };
            let config = json!({"subcommand": "check balanced", "inputs": [path_str(space)], "tol": tol});
            print_json(&envelope(&config, body(json!({"balanced": balanced, "profile": profile, "verdict": verdict}))));
            Ok(verdict_exit(verdict))
        }
        CheckCommand::Quadruple { spaces, solver, tol } => {
            if spaces.len() != 4 {
                return Err(Failure { code: 2, message: format!("quadruple check needs 4 spaces, got {}", spaces.len()) });
            }
            let xs = spaces.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
            let cfg = solver.config()?;
            let report = check_quadruple([&xs[0], &xs[1], &xs[2], &xs[3]], &cfg, *tol)?;
            let config = json!({"subcommand": "check quadruple", "inputs": spaces.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
                "solver": cfg, "tol": tol});
            let v = report.verdict;
            print_json(&envelope(&config, body(serde_json::to_value(&report).map_err(Error::from)?)));
            Ok(verdict_exit(v))
        }
        CheckCommand::TriangleComparison { a, b, c, solver, grid, tol } => {
            let (x0, x1, other) = (load(a)?, load(b)?, load(c)?);
            let cfg = solver.config()?;
            let grid = grid.clone().unwrap_or_else(|| DEFAULT_GRID.to_vec());
            let d = dist(&x0, &x1, 2.0, &cfg)?;
            let coupling: Coupling = d.best_coupling;
            let report = check_triangle_comparison(&x0, &x1, &coupling, &other, &grid, &cfg, *tol)?;
            let config = json!({"subcommand": "check triangle-comparison", "inputs": [path_str(a), path_str(b), path_str(c)],
                "solver": cfg, "grid": grid, "tol": tol});
            let v = report.verdict;
            print_json(&envelope(&config, body(serde_json::to_value(&report).map_err(Error::from)?)));
            Ok(verdict_exit(v))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    path: &Path,
    n: usize,
    count: usize,
    seed: u64,
    against: Option<&Path>,
    resamples: usize,
    alpha: f64,
    out: Option<&Path>,
) -> CmdResult {
    let x = load(path)?;
    let mut inputs = vec![path_str(path)];
    if let Some(other) = against {
        inputs.push(path_str(other));
        let y = load(other)?;
        let config = json!({"subcommand": "sample", "inputs": inputs, "n": n, "count": count, "seed": seed,
            "resamples": resamples, "alpha": alpha});
        let report = empirical_homomorphism_test(&x, &y, n, count, seed, resamples, alpha)?;
        print_json(&envelope(&config, body(serde_json::to_value(&report).map_err(Error::from)?)));
        return Ok(0);
    }
    let config = json!({"subcommand": "sample", "inputs": inputs, "n": n, "count": count, "seed": seed, "output": out.map(path_str)});
    let samples = sample_matrix_distribution(&x, n, count, seed)?;
    let mut lines = vec![serde_json::to_string(&envelope(&config, body(json!({"record": "header"})))).map_err(Error::from)?];
    for s in &samples {
        lines.push(serde_json::to_string(s).map_err(Error::from)?);
    }
    let text = lines.join("\n") + "\n";
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(0)
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("MMFLOW_THREADS") {
        let threads: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Failure { code: 2, message: format!("MMFLOW_THREADS must be a positive integer, got `{v}`") })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure { code: 2, message: e.to_string() })?;
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    match &cli.command {
        Command::Dist { a, b, solver, no_coupling } => cmd_dist(a, b, solver, *no_coupling),
        Command::Geodesic { a, b, t, solver, out } => cmd_geodesic(a, b, *t, solver, out.as_deref()),
        Command::Functional { space, functional, k, model, rho, gradient, samples, seed } => {
            cmd_functional(space, *functional, *k, model, rho, *gradient, *samples, *seed)
        }
        Command::Flow { space, model, rho, dt, steps, integrator, save_every, with_g, out, csv } => {
            cmd_flow(space, model, rho, *dt, *steps, *integrator, *save_every, *with_g, out.as_deref(), csv.as_deref())
        }
        Command::Check { check } => cmd_check(check),
        Command::Sample { space, n, count, seed, against, resamples, alpha, out } => {
            cmd_sample(space, *n, *count, *seed, against.as_deref(), *resamples, *alpha, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
