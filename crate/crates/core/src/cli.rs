//! JSON run configurations and the command runner behind `tcontrol`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::control::{evaluate_plan, solve_control, ControlProblem, Objective, SolveOptions, SolveReport};
use crate::error::{Error, Result};
use crate::geometry::{build_grid, candidate_points, dist, norm, Domain, Region};
use crate::measures::{estimate_density, DiscreteMeasure};
use crate::pde::{gradient_field, BackendKind, PoissonBackend, ScalarField};
use crate::structure::{
    build_annulus_example, build_sparsity_example, check_curvature, check_density_bound, check_optimality,
    check_state_bounds, check_transport_rays, difference_radius, extract_transport_map, sparsity_threshold,
    adjoint_lipschitz_ratio, CertificateReport, HolderData, MapSummary, StructureReport, ANNULUS_MASS,
};
use crate::transport::{
    cost_matrix, solve_kantorovich_exact, solve_sinkhorn, CostModel, SinkhornOptions, TransportPlan,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_UNCONVERGED: i32 = 2;
pub const EXIT_CERTIFICATE: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Verify,
    ExampleAnnulus,
    ExampleSparsity,
    Ot,
}

impl Command {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.into()))
            .map_err(|_| Error::Parse(format!("unknown command {s:?}; expected solve, verify, example-annulus, example-sparsity or ot")))
    }

    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Verify => "verify",
            Command::ExampleAnnulus => "example-annulus",
            Command::ExampleSparsity => "example-sparsity",
            Command::Ot => "ot",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    Metric,
    Quadratic,
    Power { gamma: f64 },
}

impl CostSpec {
    pub fn model(&self) -> Result<CostModel> {
        match *self {
            CostSpec::Metric => Ok(CostModel::Metric),
            CostSpec::Quadratic => Ok(CostModel::Quadratic),
            CostSpec::Power { gamma } => CostModel::power(gamma),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSpec {
    #[default]
    FdGrid,
    GreenDisk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Constant(f64),
    /// `c₀ + c₁x + c₂y + c₃xy`
    Polynomial([f64; 4]),
    /// Nodal values as `x,y,value` rows.
    Csv(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    TrackingFull { target: TargetSpec },
    TrackingWindow { target: TargetSpec, window: Region },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// `[x, y, weight]` triples.
    Atoms(Vec<[f64; 3]>),
    /// `x,y,w` rows.
    Csv(PathBuf),
    /// Lattice nodes of the region with weight `density·h²`.
    Uniform { region: Region, density: f64 },
    /// `count` atoms drawn uniformly in the region from the config seed,
    /// sharing `mass` equally.
    Random { region: Region, count: usize, mass: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtMethod {
    #[default]
    Exact,
    Sinkhorn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtSpec {
    pub source: MeasureSpec,
    pub target: MeasureSpec,
    #[serde(default)]
    pub method: OtMethod,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-2
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    5000
}
fn default_domain() -> Domain {
    Domain::UnitSquare
}
fn default_candidates() -> Region {
    Region::Full
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default = "default_domain")]
    pub domain: Domain,
    /// Grid spacing; the default depends on the command.
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub objective: Option<ObjectiveSpec>,
    #[serde(default)]
    pub prior: Option<MeasureSpec>,
    #[serde(default = "default_candidates")]
    pub candidates: Region,
    /// Multiple of the computable threshold used by `example-sparsity`.
    #[serde(default)]
    pub sparsity_factor: Option<f64>,
    /// Cell size of the density check, `5h` when absent.
    #[serde(default)]
    pub density_cell: Option<f64>,
    #[serde(default)]
    pub ot: Option<OtSpec>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Reads and validates a JSON config. Relative paths are resolved against
/// the config's directory and must exist.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
    cfg.resolve_paths(base);
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_measure = |m: &mut MeasureSpec| {
            if let MeasureSpec::Csv(p) = m {
                fix(p);
            }
        };
        if let Some(m) = self.prior.as_mut() {
            fix_measure(m);
        }
        if let Some(ot) = self.ot.as_mut() {
            fix_measure(&mut ot.source);
            fix_measure(&mut ot.target);
        }
        if let Some(ObjectiveSpec::TrackingFull { target: TargetSpec::Csv(p) } | ObjectiveSpec::TrackingWindow { target: TargetSpec::Csv(p), .. }) =
            self.objective.as_mut()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Parse(format!("config key `{key}`: {msg}")));
        if let Some(h) = self.h {
            if !(h > 0.0 && h < 0.25) {
                return bad("h", format!("must be in (0, 1/4), got {h}"));
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0) || !a.is_finite() {
                return bad("alpha", format!("must be positive, got {a}"));
            }
        }
        if let Some(CostSpec::Power { gamma }) = self.cost {
            if !(gamma > 1.0 && gamma <= 2.0) {
                return bad("cost.gamma", "gamma must be in (1,2]".into());
            }
        }
        if !(self.tol > 0.0) {
            return bad("tol", format!("must be positive, got {}", self.tol));
        }
        if let Some(f) = self.sparsity_factor {
            if !(f > 0.0) {
                return bad("sparsity_factor", format!("must be positive, got {f}"));
            }
        }
        if let Some(c) = self.density_cell {
            if !(c > 0.0) {
                return bad("density_cell", format!("must be positive, got {c}"));
            }
        }
        if self.backend == BackendSpec::GreenDisk && self.domain != Domain::UnitDisk {
            return bad("backend", "green_disk needs domain unit_disk".into());
        }
        let check_measure = |key: &str, m: &MeasureSpec| -> Result<()> {
            match m {
                MeasureSpec::Atoms(atoms) => {
                    if let Some(a) = atoms.iter().find(|a| !(a[2] >= 0.0)) {
                        return bad(key, format!("weight {} is negative (measures must be nonnegative)", a[2]));
                    }
                }
                MeasureSpec::Csv(p) => {
                    if !p.exists() {
                        return bad(key, format!("file {} does not exist", p.display()));
                    }
                    DiscreteMeasure::load_csv(p).map_err(|e| Error::Parse(format!("config key `{key}`: {e}")))?;
                }
                MeasureSpec::Uniform { density, .. } => {
                    if !(*density >= 0.0) {
                        return bad(key, format!("density must be nonnegative, got {density}"));
                    }
                }
                MeasureSpec::Random { mass, count, .. } => {
                    if !(*mass >= 0.0) || *count == 0 {
                        return bad(key, "needs count > 0 and nonnegative mass".into());
                    }
                }
            }
            Ok(())
        };
        if let Some(m) = &self.prior {
            check_measure("prior", m)?;
        }
        if let Some(ot) = &self.ot {
            check_measure("ot.source", &ot.source)?;
            check_measure("ot.target", &ot.target)?;
            if !(ot.epsilon > 0.0) {
                return bad("ot.epsilon", format!("must be positive, got {}", ot.epsilon));
            }
        }
        if let Some(ObjectiveSpec::TrackingFull { target: TargetSpec::Csv(p) } | ObjectiveSpec::TrackingWindow { target: TargetSpec::Csv(p), .. }) =
            &self.objective
        {
            if !p.exists() {
                return bad("objective.target", format!("file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Fills command-dependent defaults so the stored config rebuilds the run.
    fn resolved(&self, command: Command) -> RunConfig {
        let mut c = self.clone();
        c.command = Some(command);
        match command {
            Command::ExampleAnnulus => {
                c.domain = Domain::UnitDisk;
                c.h.get_or_insert(0.04);
                c.alpha.get_or_insert(1.0);
                c.cost = Some(CostSpec::Metric);
            }
            Command::ExampleSparsity => {
                c.domain = Domain::UnitSquare;
                c.h.get_or_insert(0.025);
                c.sparsity_factor.get_or_insert(2.0);
                c.cost = Some(CostSpec::Metric);
            }
            _ => {
                c.h.get_or_insert(0.05);
                c.alpha.get_or_insert(1.0);
                c.cost.get_or_insert(CostSpec::Metric);
            }
        }
        c
    }
}

/// Which structural checks to run.
#[derive(Clone, Debug, PartialEq)]
pub enum CheckSelection {
    All,
    None,
    Only(BTreeSet<String>),
}

pub const CHECK_NAMES: [&str; 7] = ["certificate", "rays", "curvature", "map", "state_bounds", "sparsity", "density"];

impl CheckSelection {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(Self::All),
            "none" => Ok(Self::None),
            list => {
                let names: BTreeSet<String> = list.split(',').map(|n| n.trim().to_string()).collect();
                if let Some(bad) = names.iter().find(|n| !CHECK_NAMES.contains(&n.as_str())) {
                    return Err(Error::Parse(format!("unknown check {bad:?}; expected all, none or a list of {CHECK_NAMES:?}")));
                }
                Ok(Self::Only(names))
            }
        }
    }

    fn wants(&self, name: &str) -> bool {
        match self {
            Self::All => true,
            Self::None => false,
            Self::Only(set) => set.contains(name),
        }
    }

    fn explicit(&self, name: &str) -> bool {
        matches!(self, Self::Only(set) if set.contains(name))
    }
}

/// Command-line overrides applied on top of the config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: Vec<String>,
    pub out_dir: PathBuf,
}

fn build_measure(spec: &MeasureSpec, domain: Domain, h: f64, rng: &mut ChaCha8Rng) -> Result<DiscreteMeasure> {
    match spec {
        MeasureSpec::Atoms(atoms) => DiscreteMeasure::new(atoms.iter().map(|a| [a[0], a[1]]).collect(), atoms.iter().map(|a| a[2]).collect()),
        MeasureSpec::Csv(p) => DiscreteMeasure::load_csv(p),
        MeasureSpec::Uniform { region, density } => {
            let pts = candidate_points(domain, *region, h)?;
            let n = pts.len();
            DiscreteMeasure::new(pts, vec![density * h * h; n])
        }
        MeasureSpec::Random { region, count, mass } => {
            let (lo, hi) = domain.bounding_box();
            let mut pts = Vec::with_capacity(*count);
            let mut tries = 0usize;
            while pts.len() < *count {
                tries += 1;
                if tries > 1000 * count {
                    return Err(Error::EmptySet(format!("could not sample {count} points in {region:?}")));
                }
                let p = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
                if domain.contains_open(p) && region.contains(p) {
                    pts.push(p);
                }
            }
            DiscreteMeasure::new(pts, vec![mass / *count as f64; *count])
        }
    }
}

fn build_target(spec: &TargetSpec, grid: &Arc<crate::geometry::Grid>) -> Result<ScalarField> {
    match spec {
        TargetSpec::Constant(c) => Ok(ScalarField::from_fn(grid.clone(), |_| *c)),
        TargetSpec::Polynomial(c) => Ok(ScalarField::from_fn(grid.clone(), |p| c[0] + c[1] * p[0] + c[2] * p[1] + c[3] * p[0] * p[1])),
        TargetSpec::Csv(p) => ScalarField::read_csv(grid.clone(), fs::File::open(p)?, false),
    }
}

fn missing(key: &str, command: Command) -> Error {
    Error::Parse(format!("config key `{key}` is required for `{}`", command.name()))
}

/// A control problem together with what is needed to check it.
struct Built {
    problem: ControlProblem,
    uniform_prior: bool,
}

fn build_problem(cfg: &RunConfig, command: Command) -> Result<Built> {
    match command {
        Command::ExampleAnnulus => {
            let (problem, _) = build_annulus_example(cfg.h.unwrap(), cfg.alpha.unwrap())?;
            Ok(Built { problem, uniform_prior: false })
        }
        Command::ExampleSparsity => {
            let (problem, _) = build_sparsity_example(cfg.h.unwrap(), cfg.sparsity_factor.unwrap())?;
            Ok(Built { problem, uniform_prior: false })
        }
        _ => {
            let h = cfg.h.unwrap();
            let grid = Arc::new(build_grid(cfg.domain, h)?);
            let kind = match cfg.backend {
                BackendSpec::FdGrid => BackendKind::FdGrid,
                BackendSpec::GreenDisk => BackendKind::GreenDisk,
            };
            let backend = PoissonBackend::new(kind, grid.clone())?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let prior_spec = cfg.prior.as_ref().ok_or_else(|| missing("prior", command))?;
            let prior = build_measure(prior_spec, cfg.domain, h, &mut rng)?;
            let candidates = candidate_points(cfg.domain, cfg.candidates, h)?;
            let objective = match cfg.objective.as_ref().ok_or_else(|| missing("objective", command))? {
                ObjectiveSpec::TrackingFull { target } => Objective::TrackingFull { target: build_target(target, &grid)? },
                ObjectiveSpec::TrackingWindow { target, window } => Objective::TrackingWindow {
                    target: build_target(target, &grid)?,
                    window: grid.nodes().iter().map(|&x| window.contains(x)).collect(),
                },
            };
            let model = cfg.cost.unwrap().model()?;
            let problem = ControlProblem::new(backend, prior, candidates, model, objective, cfg.alpha.unwrap())?;
            Ok(Built { problem, uniform_prior: matches!(prior_spec, MeasureSpec::Uniform { .. }) })
        }
    }
}

/// Builds the control problem a config describes, with per-command defaults filled in.
pub fn build_control_problem(cfg: &RunConfig, command: Command) -> Result<ControlProblem> {
    cfg.validate()?;
    Ok(build_problem(&cfg.resolved(command), command)?.problem)
}

/// Structural diagnostics and whether any of them failed.
fn run_checks(
    cfg: &RunConfig,
    built: &Built,
    report: &SolveReport,
    checks: &CheckSelection,
) -> Result<(Option<CertificateReport>, StructureReport, bool)> {
    let problem = &built.problem;
    let model = problem.cost_model();
    let metric = matches!(model, CostModel::Metric);
    let convex = matches!(model, CostModel::Quadratic | CostModel::Power { .. });
    let h = problem.grid().h();
    let not_applicable = |name: &str, why: &str| -> Result<()> {
        if checks.explicit(name) {
            return Err(Error::InvalidParameter(format!("check `{name}` does not apply: {why}")));
        }
        Ok(())
    };
    let mut failed = false;
    let mut structure = StructureReport::default();

    let certificate = if checks.wants("certificate") {
        let c = check_optimality(problem, report, cfg.tol)?;
        failed |= !c.passed;
        Some(c)
    } else {
        None
    };
    let grad = gradient_field(&report.adjoint);

    if checks.wants("rays") {
        if metric {
            let r = check_transport_rays(problem, &report.plan, &grad, cfg.tol, 5.0)?;
            failed |= !r.passed;
            structure.rays = Some(r);
        } else {
            not_applicable("rays", "needs the metric cost")?;
        }
    }
    let rho = difference_radius(problem.prior().points(), problem.candidates());
    if checks.wants("curvature") || checks.wants("map") {
        if convex {
            let grads: Vec<[f64; 2]> = problem.candidates().iter().map(|&xi| grad.eval(xi)).collect();
            let c = check_curvature(&grads, problem.candidates(), model, problem.alpha(), rho)?;
            if checks.wants("map") {
                let holder = HolderData {
                    beta: c.beta,
                    kappa: c.kappa,
                    alpha: problem.alpha(),
                    lipschitz: model.lipschitz_on(rho).unwrap_or(f64::INFINITY),
                };
                let m = extract_transport_map(&report.plan, problem.prior().points(), problem.candidates(), cfg.tol, Some(&holder));
                let support = report.control.iter().filter(|w| **w > 0.0).count();
                let summary = MapSummary::from_result(&m, support);
                // a map is guaranteed only under the curvature condition
                failed |= c.verdict && (!summary.is_map || support > problem.prior().len());
                structure.transport_map = Some(summary);
            }
            if checks.wants("curvature") {
                structure.curvature = Some(c);
            }
        } else {
            not_applicable("curvature", "needs a quadratic or power cost")?;
            not_applicable("map", "needs a quadratic or power cost")?;
        }
    }
    if checks.wants("state_bounds") {
        let full = matches!(problem.objective_spec(), Objective::TrackingFull { .. });
        if full && model.laplacian_bound().is_ok() {
            let s = check_state_bounds(problem, report, 10.0)?;
            failed |= !s.passed;
            structure.state_bounds = Some(s);
        } else {
            not_applicable("state_bounds", "needs full tracking and a quadratic cost")?;
        }
    }
    if checks.wants("sparsity") {
        let window = matches!(problem.objective_spec(), Objective::TrackingWindow { .. });
        if metric && window {
            match sparsity_threshold(problem) {
                Ok(s) => {
                    if s.predicted {
                        failed |= !plan_is_diagonal(problem, &report.plan);
                    }
                    structure.sparsity = Some(s);
                }
                Err(e @ Error::Separation(_)) => not_applicable("sparsity", &e.to_string())?,
                Err(e) => return Err(e),
            }
        } else {
            not_applicable("sparsity", "needs the metric cost and an observation window")?;
        }
    }
    if checks.wants("density") {
        let gamma = match *model {
            CostModel::Quadratic => Some(2.0),
            CostModel::Power { gamma } => Some(gamma),
            _ => None,
        };
        match gamma {
            Some(gamma) if built.uniform_prior => {
                let density = estimate_density(problem.prior(), problem.grid());
                let cells = build_grid(problem.grid().domain(), cfg.density_cell.unwrap_or(5.0 * h))?;
                structure.density = Some(check_density_bound(problem, report, gamma, &density, &cells, &cfg.candidates)?);
            }
            _ => not_applicable("density", "needs a power cost and a uniform prior")?,
        }
    }
    structure.adjoint_lipschitz_ratio = Some(adjoint_lipschitz_ratio(problem, &report.adjoint_at_candidates));
    Ok((certificate, structure, failed))
}

fn plan_is_diagonal(problem: &ControlProblem, plan: &TransportPlan) -> bool {
    let (src, tgt) = (problem.prior().points(), problem.candidates());
    let off: f64 = plan.entries().filter(|&(i, j, _)| dist(src[i], tgt[j]) > 0.0).map(|e| e.2).sum();
    off <= 1e-10 * problem.prior().total_mass()
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_solution(dir: &Path, problem: &ControlProblem, report: &SolveReport) -> Result<()> {
    report.u_bar(problem.candidates()).save_csv(&dir.join("u_bar.csv"))?;
    report.plan.write_csv(fs::File::create(dir.join("plan.csv"))?, problem.prior().points(), problem.candidates())?;
    report.state.write_csv(fs::File::create(dir.join("state.csv"))?)?;
    report.adjoint.write_csv(fs::File::create(dir.join("adjoint.csv"))?)?;
    Ok(())
}

fn solution_json(cfg: &RunConfig, problem: &ControlProblem, report: &SolveReport) -> Value {
    json!({
        "command": cfg.command.map(Command::name),
        "config": cfg,
        "alpha": problem.alpha(),
        "cost": problem.cost_model().label(),
        "sources": problem.costs().rows(),
        "candidates": problem.costs().cols(),
        "objective": report.objective,
        "gap": report.gap,
        "iterations": report.iterations,
        "converged": report.converged,
        "wall_time": report.wall_time,
        "prior_mass": problem.prior().total_mass(),
        "control_mass": report.control.iter().sum::<f64>(),
        "objective_history": report.objective_history,
        "gap_history": report.gap_history,
        "psi": report.psi,
        "phi": report.phi,
        "files": {
            "u_bar": "u_bar.csv",
            "plan": "plan.csv",
            "state": "state.csv",
            "adjoint": "adjoint.csv",
        },
    })
}

fn example_summary(command: Command, problem: &ControlProblem, report: &SolveReport, summary: &mut Vec<String>) -> Option<Value> {
    match command {
        Command::ExampleAnnulus => {
            let h = problem.grid().h();
            let mass: f64 = report.control.iter().sum();
            let ring: f64 = problem
                .candidates()
                .iter()
                .zip(&report.control)
                .filter(|(xi, _)| (norm(**xi) - 0.5).abs() <= 2.0 * h)
                .map(|(_, w)| w)
                .sum();
            summary.push(format!("ring mass {ring:.6} of {mass:.6} (reference {ANNULUS_MASS:.6})"));
            Some(json!({ "reference_mass": ANNULUS_MASS, "control_mass": mass, "ring_mass": ring, "ring_band": 2.0 * h }))
        }
        Command::ExampleSparsity => {
            let equal = plan_is_diagonal(problem, &report.plan);
            summary.push(format!("u_bar == u0: {equal}"));
            Some(json!({ "u_bar_equals_u0": equal }))
        }
        _ => None,
    }
}

/// Runs one command. Errors are usage or I/O problems (exit 1); solver and
/// certificate outcomes are reported through the exit code.
pub fn run(command: Command, cfg: &RunConfig, overrides: &Overrides, checks: &CheckSelection) -> Result<RunOutcome> {
    if let Some(c) = cfg.command {
        if c != command {
            return Err(Error::Parse(format!("config is for `{}`, invoked as `{}`", c.name(), command.name())));
        }
    }
    let mut cfg = cfg.clone();
    if let Some(t) = overrides.tol {
        cfg.tol = t;
    }
    if let Some(m) = overrides.max_iter {
        cfg.max_iter = m;
    }
    cfg.validate()?;
    let out_dir = overrides.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    // the output directory is not part of the reproducible record
    cfg.out = None;
    fs::create_dir_all(&out_dir)?;
    match command {
        Command::Ot => run_ot(&cfg, out_dir),
        Command::Verify => Err(Error::Parse("`verify` reads a report.json, see `verify()`".into())),
        _ => run_solve(command, &cfg.resolved(command), out_dir, checks),
    }
}

fn run_solve(command: Command, cfg: &RunConfig, out_dir: PathBuf, checks: &CheckSelection) -> Result<RunOutcome> {
    let built = build_problem(cfg, command)?;
    let problem = &built.problem;
    let report = solve_control(problem, &SolveOptions { tol: cfg.tol, max_iter: cfg.max_iter, ..Default::default() })?;
    let (certificate, structure, failed) = run_checks(cfg, &built, &report, checks)?;
    let mut summary = vec![format!(
        "{}: objective {:.9e}, gap {:.3e}, {} iterations, converged {}",
        command.name(),
        report.objective,
        report.gap,
        report.iterations,
        report.converged
    )];
    let example = example_summary(command, problem, &report, &mut summary);
    let mut doc = solution_json(cfg, problem, &report);
    doc["certificate"] = serde_json::to_value(&certificate)?;
    doc["structure"] = serde_json::to_value(&structure)?;
    if let Some(e) = example {
        doc["example"] = e;
    }
    write_solution(&out_dir, problem, &report)?;
    write_json(&out_dir.join("report.json"), &doc)?;
    if let Some(c) = &certificate {
        summary.push(format!("certificate passed: {}", c.passed));
    }
    let exit_code = if !report.converged {
        EXIT_UNCONVERGED
    } else if failed {
        EXIT_CERTIFICATE
    } else {
        EXIT_OK
    };
    Ok(RunOutcome { exit_code, summary, out_dir })
}

fn run_ot(cfg: &RunConfig, out_dir: PathBuf) -> Result<RunOutcome> {
    let spec = cfg.ot.as_ref().ok_or_else(|| missing("ot", Command::Ot))?;
    let h = cfg.h.unwrap_or(0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mu = build_measure(&spec.source, cfg.domain, h, &mut rng)?;
    let nu = build_measure(&spec.target, cfg.domain, h, &mut rng)?;
    let model = cfg.cost.unwrap_or(CostSpec::Metric).model()?;
    let costs = cost_matrix(&model, mu.points(), nu.points())?;
    let (plan, value, duals, extra) = match spec.method {
        OtMethod::Exact => {
            let s = solve_kantorovich_exact(mu.weights(), nu.weights(), &costs)?;
            (s.plan, s.value, s.duals, json!({ "dual_value": s.dual_value, "pivots": s.pivots }))
        }
        OtMethod::Sinkhorn => {
            let opts = SinkhornOptions { epsilon: spec.epsilon, tol: cfg.tol, max_iter: cfg.max_iter.max(1) * 20 };
            let s = solve_sinkhorn(mu.weights(), nu.weights(), &costs, &opts)?;
            (s.plan, s.value, s.duals, json!({ "iterations": s.iterations, "epsilon": spec.epsilon }))
        }
    };
    plan.write_csv(fs::File::create(out_dir.join("plan.csv"))?, mu.points(), nu.points())?;
    plan.target_measure(nu.points())?.save_csv(&out_dir.join("u_bar.csv"))?;
    let mut resolved = cfg.clone();
    resolved.command = Some(Command::Ot);
    let doc = json!({
        "command": "ot",
        "config": resolved,
        "cost": model.label(),
        "value": value,
        "phi": duals.phi,
        "psi": duals.psi,
        "nnz": plan.nnz(),
        "solver": extra,
        "files": { "plan": "plan.csv", "u_bar": "u_bar.csv" },
    });
    write_json(&out_dir.join("report.json"), &doc)?;
    Ok(RunOutcome { exit_code: EXIT_OK, summary: vec![format!("ot: value {value:.12e}, {} plan entries", plan.nnz())], out_dir })
}

/// Re-checks a stored run: rebuilds the problem from the recorded config,
/// reads the stored plan and potentials and recomputes the certificate.
pub fn verify(report_path: &Path, overrides: &Overrides, checks: &CheckSelection) -> Result<RunOutcome> {
    let text = fs::read_to_string(report_path)?;
    let doc: Value = serde_json::from_str(&text)?;
    let dir = report_path.parent().unwrap_or(Path::new("."));
    let cfg: RunConfig = serde_json::from_value(doc.get("config").cloned().ok_or_else(|| Error::Parse("report has no `config`".into()))?)
        .map_err(|e| Error::Parse(format!("report config: {e}")))?;
    let command = cfg.command.ok_or_else(|| Error::Parse("report config has no `command`".into()))?;
    if matches!(command, Command::Ot | Command::Verify) {
        return Err(Error::Parse(format!("cannot verify a `{}` report", command.name())));
    }
    let mut cfg = cfg;
    if let Some(t) = overrides.tol {
        cfg.tol = t;
    }
    cfg.validate()?;
    let built = build_problem(&cfg, command)?;
    let problem = &built.problem;
    let plan_file = doc["files"]["plan"].as_str().unwrap_or("plan.csv");
    let plan = TransportPlan::read_csv(fs::File::open(dir.join(plan_file))?, problem.costs().rows(), problem.costs().cols())?;
    let mut report = evaluate_plan(problem, &plan, cfg.tol)?;
    let stored = |key: &str, n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = serde_json::from_value(doc.get(key).cloned().unwrap_or(Value::Null))
            .map_err(|e| Error::Parse(format!("report `{key}`: {e}")))?;
        if v.len() != n {
            return Err(Error::Shape(format!("report `{key}` has {} entries, expected {n}", v.len())));
        }
        Ok(v)
    };
    report.psi = stored("psi", problem.costs().cols())?;
    report.phi = stored("phi", problem.costs().rows())?;
    let checks = if *checks == CheckSelection::None { CheckSelection::Only(["certificate".to_string()].into()) } else { checks.clone() };
    let (certificate, structure, failed) = run_checks(&cfg, &built, &report, &checks)?;
    let passed = !failed;
    let mut summary = vec![format!("verify: gap {:.3e}, converged {}, checks passed {passed}", report.gap, report.converged)];
    if let Some(c) = &certificate {
        for check in c.checks.iter().filter(|c| !c.passed) {
            summary.push(format!("failed {}: residual {:.3e} > {:.3e}", check.name, check.residual, check.tolerance));
        }
    }
    let out_dir = overrides.out.clone().unwrap_or_else(|| dir.to_path_buf());
    if overrides.out.is_some() {
        fs::create_dir_all(&out_dir)?;
        let doc = json!({
            "command": "verify",
            "report": report_path.display().to_string(),
            "gap": report.gap,
            "converged": report.converged,
            "certificate": certificate,
            "structure": structure,
            "passed": passed,
        });
        write_json(&out_dir.join("verify.json"), &doc)?;
    }
    let exit_code = if !report.converged {
        EXIT_UNCONVERGED
    } else if failed {
        EXIT_CERTIFICATE
    } else {
        EXIT_OK
    };
    Ok(RunOutcome { exit_code, summary, out_dir })
}
