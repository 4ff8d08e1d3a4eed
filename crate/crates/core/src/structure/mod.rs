//! Certificates for computed solutions and checks of the structural
//! predictions: support conditions, transport rays, maps, densities, state
//! bounds and the sparsity threshold.

mod examples;

pub use examples::{build_annulus_example, build_sparsity_example, AnnulusReference, ANNULUS_MASS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::{ControlProblem, SolveReport};
use crate::error::{Error, Result};
use crate::geometry::{dist, norm, Grid, Point, Region, GEOM_EPS};
use crate::measures::DensityEstimate;
use crate::pde::{gradient_field, ScalarField, VectorField};
use crate::transport::{CostMatrix, CostModel, TransportPlan};

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, residual: f64, tolerance: f64) -> Self {
        Self { name: name.into(), residual, tolerance, passed: residual.is_finite() && residual <= tolerance }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    /// `max_ij (φ_i + ψ_j − C_ij)`
    pub dual_feasibility: f64,
    /// `⟨C,π⟩ − ⟨φ,u⁰⟩ − ⟨ψ,ū⟩`
    pub ot_gap: f64,
    pub fw_gap: f64,
    /// `max_i |ψ_i + p_i/α|` between the stored and the recomputed potential.
    pub psi_consistency: f64,
    pub support_inclusion: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Verifies the first-order system of a solve: dual feasibility of
/// `(φ, ψ)`, the OT duality gap, the FW gap and the support condition.
///
/// The report's `phi`/`psi` are used as stored; `adjoint_at_candidates` is
/// taken as the reference adjoint.
pub fn check_optimality(problem: &ControlProblem, report: &SolveReport, tol: f64) -> Result<CertificateReport> {
    let costs = problem.costs();
    let alpha = problem.alpha();
    if report.phi.len() != costs.rows() || report.psi.len() != costs.cols() {
        return Err(Error::Shape("stored potentials do not match the problem size".into()));
    }
    let duals = crate::transport::DualPotentials { phi: report.phi.clone(), psi: report.psi.clone() };
    let dual_feasibility = duals.feasibility_residual(costs);
    let u0 = problem.prior().weights();
    let control = report.plan.column_sums();
    let ot_gap = report.plan.cost(costs)
        - u0.iter().zip(&report.phi).map(|(a, b)| a * b).sum::<f64>()
        - control.iter().zip(&report.psi).map(|(a, b)| a * b).sum::<f64>();
    let psi_consistency =
        report.psi.iter().zip(&report.adjoint_at_candidates).fold(0.0f64, |a, (s, p)| a.max((s + p / alpha).abs()));
    let support_inclusion = check_support_inclusion(&report.plan, &report.adjoint_at_candidates, alpha, costs)?;

    let scale = 1.0 + report.objective.abs();
    let psi_scale = 1.0 + report.psi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let checks = vec![
        Check::new("dual_feasibility", dual_feasibility, tol * (1.0 + costs.max_abs())),
        Check::new("ot_gap", ot_gap.abs(), tol * scale / alpha),
        Check::new("fw_gap", report.gap, tol * scale),
        Check::new("psi_consistency", psi_consistency, 1e-9 * psi_scale),
        Check::new("support_inclusion", support_inclusion, tol.sqrt() * (1.0 + costs.max_abs())),
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(CertificateReport { dual_feasibility, ot_gap, fw_gap: report.gap, psi_consistency, support_inclusion, checks, passed })
}

/// `max` over positive plan entries of `C_ij + p_j/α − min_k (C_ik + p_k/α)`.
pub fn check_support_inclusion(plan: &TransportPlan, p: &[f64], alpha: f64, costs: &CostMatrix) -> Result<f64> {
    if plan.n_rows() != costs.rows() || plan.n_cols() != costs.cols() || p.len() != costs.cols() {
        return Err(Error::Shape("plan, adjoint and cost dimensions differ".into()));
    }
    Ok((0..plan.n_rows())
        .into_par_iter()
        .map(|i| {
            let row = plan.row(i);
            if row.is_empty() {
                return 0.0;
            }
            let c = costs.row(i);
            let best = c.iter().zip(p).map(|(c, p)| c + p / alpha).fold(f64::INFINITY, f64::min);
            row.iter().map(|&(j, _)| c[j] + p[j] / alpha - best).fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max))
}

#[derive(Clone, Debug, Serialize)]
pub struct RayReport {
    /// `max (‖∇p(ξ)‖ − α)` over charged targets.
    pub gradient_excess: f64,
    /// `max ‖x − ξ − ‖x − ξ‖∇p(ξ)/α‖` over plan entries.
    pub ray_residual: f64,
    /// `max |‖∇p(ξ)‖ − α|` over targets receiving mass from elsewhere.
    pub norm_defect: f64,
    pub slack: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Transport-ray conditions for the metric cost, with slack `tol + k_slack·h`.
pub fn check_transport_rays(
    problem: &ControlProblem,
    plan: &TransportPlan,
    grad_p: &VectorField,
    tol: f64,
    k_slack: f64,
) -> Result<RayReport> {
    if !matches!(problem.cost_model(), CostModel::Metric) {
        return Err(Error::WrongModel(format!("transport rays need the metric cost, got {}", problem.cost_model().label())));
    }
    let alpha = problem.alpha();
    let sources = problem.prior().points();
    let targets = problem.candidates();
    let grads: Vec<[f64; 2]> = targets.iter().map(|&xi| grad_p.eval(xi)).collect();
    let mut gradient_excess = f64::NEG_INFINITY;
    let mut ray_residual = 0.0f64;
    let mut norm_defect = 0.0f64;
    let mut charged = vec![false; targets.len()];
    for (i, j, _) in plan.entries() {
        let (x, xi, g) = (sources[i], targets[j], grads[j]);
        charged[j] = true;
        let r = dist(x, xi);
        let fit = [x[0] - xi[0] - r * g[0] / alpha, x[1] - xi[1] - r * g[1] / alpha];
        ray_residual = ray_residual.max(norm(fit));
        if r > GEOM_EPS {
            norm_defect = norm_defect.max((norm(g) - alpha).abs());
        }
    }
    for (j, g) in grads.iter().enumerate() {
        if charged[j] {
            gradient_excess = gradient_excess.max(norm(*g) - alpha);
        }
    }
    if gradient_excess == f64::NEG_INFINITY {
        gradient_excess = 0.0;
    }
    let slack = tol + k_slack * problem.grid().h();
    let checks = vec![
        Check::new("gradient_bound", gradient_excess, slack),
        Check::new("ray_fit", ray_residual, slack),
        Check::new("gradient_norm_on_rays", norm_defect, slack),
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(RayReport { gradient_excess, ray_residual, norm_defect, slack, checks, passed })
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvatureReport {
    /// `max −⟨∇p(ξ) − ∇p(ζ), ξ − ζ⟩ / ‖ξ − ζ‖²` over the sampled pairs.
    pub kappa: f64,
    pub beta: f64,
    pub alpha: f64,
    pub pairs: usize,
    /// `κ̂ < αβ`
    pub verdict: bool,
}

/// Pairs sampled at random above this many points.
pub const CURVATURE_ALL_PAIRS: usize = 2000;
pub const CURVATURE_SAMPLES: usize = 1_000_000;
pub const CURVATURE_SEED: u64 = 42;

/// One-sided curvature estimate of `p` on the candidate set.
///
/// `rho` is the radius with `ω₁ − ω₀ ⊂ B_ρ(0)`, used for the power-cost modulus.
pub fn check_curvature(grads: &[[f64; 2]], points: &[Point], model: &CostModel, alpha: f64, rho: f64) -> Result<CurvatureReport> {
    if grads.len() != points.len() {
        return Err(Error::Shape("one gradient per point expected".into()));
    }
    let beta = model.strong_convexity(rho)?;
    let n = points.len();
    let pair = |a: usize, b: usize| -> f64 {
        let d = [points[a][0] - points[b][0], points[a][1] - points[b][1]];
        let dd = d[0] * d[0] + d[1] * d[1];
        if dd <= GEOM_EPS * GEOM_EPS {
            return f64::NEG_INFINITY;
        }
        let dg = [grads[a][0] - grads[b][0], grads[a][1] - grads[b][1]];
        -(dg[0] * d[0] + dg[1] * d[1]) / dd
    };
    let (kappa, pairs) = if n <= CURVATURE_ALL_PAIRS {
        let k = (0..n).into_par_iter().map(|a| (a + 1..n).map(|b| pair(a, b)).fold(f64::NEG_INFINITY, f64::max)).reduce(
            || f64::NEG_INFINITY,
            f64::max,
        );
        (k, n * n.saturating_sub(1) / 2)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(CURVATURE_SEED);
        let mut k = f64::NEG_INFINITY;
        for _ in 0..CURVATURE_SAMPLES {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                k = k.max(pair(a, b));
            }
        }
        (k, CURVATURE_SAMPLES)
    };
    // with fewer than two distinct points there is no curvature to detect
    let kappa = if kappa == f64::NEG_INFINITY { 0.0 } else { kappa };
    Ok(CurvatureReport { kappa, beta, alpha, pairs, verdict: kappa < alpha * beta })
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderData {
    pub beta: f64,
    pub kappa: f64,
    pub alpha: f64,
    /// Lipschitz constant of the cost profile on `ω₁ − ω₀`.
    pub lipschitz: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MapReport {
    /// Target index per source (`None` for sources without mass).
    pub map: Vec<Option<usize>>,
    pub pushforward_error: f64,
    /// `(‖x₁ − x₂‖, ‖T(x₁) − T(x₂)‖)` per source pair, when requested.
    pub holder_pairs: Vec<(f64, f64)>,
    /// `max ((β − κ̂/α)‖ΔT‖² − 2·Lip·‖Δx‖)` over all pairs.
    pub holder_violation: f64,
}

/// Reads a plan as a map `T` when every row is concentrated on one entry.
pub fn extract_transport_map(
    plan: &TransportPlan,
    sources: &[Point],
    targets: &[Point],
    tol: f64,
    holder: Option<&HolderData>,
) -> Result<MapReport> {
    let mut map = Vec::with_capacity(plan.n_rows());
    let mut worst = (0, 0.0f64);
    for i in 0..plan.n_rows() {
        let row = plan.row(i);
        let total: f64 = row.iter().map(|e| e.1).sum();
        let Some(&(j, w)) = row.iter().max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0))) else {
            map.push(None);
            continue;
        };
        let fraction = (total - w) / total;
        if fraction > worst.1 {
            worst = (i, fraction);
        }
        map.push(Some(j));
    }
    if worst.1 > tol {
        return Err(Error::NotAMap { row: worst.0, fraction: worst.1 });
    }
    let mut pushed = vec![0.0; plan.n_cols()];
    for (i, t) in map.iter().enumerate() {
        if let Some(j) = t {
            pushed[*j] += plan.row_marginal()[i];
        }
    }
    let pushforward_error =
        pushed.iter().zip(plan.column_sums()).fold(0.0f64, |a, (p, c)| a.max((p - c).abs()));

    let mut holder_pairs = Vec::new();
    let mut holder_violation = f64::NEG_INFINITY;
    if let Some(hd) = holder {
        let mapped: Vec<(Point, Point)> =
            map.iter().enumerate().filter_map(|(i, t)| t.map(|j| (sources[i], targets[j]))).collect();
        let modulus = hd.beta - hd.kappa / hd.alpha;
        for a in 0..mapped.len() {
            for b in a + 1..mapped.len() {
                let dx = dist(mapped[a].0, mapped[b].0);
                let dt = dist(mapped[a].1, mapped[b].1);
                holder_violation = holder_violation.max(modulus * dt * dt - 2.0 * hd.lipschitz * dx);
                if mapped.len() <= 150 {
                    holder_pairs.push((dx, dt));
                }
            }
        }
    }
    if holder_violation == f64::NEG_INFINITY {
        holder_violation = 0.0;
    }
    Ok(MapReport { map, pushforward_error, holder_pairs, holder_violation })
}

/// Radius of a ball containing all differences `ξ − x`.
pub fn difference_radius(sources: &[Point], targets: &[Point]) -> f64 {
    sources
        .par_iter()
        .map(|x| targets.iter().map(|xi| dist(*x, *xi)).fold(0.0f64, f64::max))
        .reduce(|| 0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct DensityReport {
    pub gamma: f64,
    /// `max (Ū − (U⁰∘T̃)|det DT̃|)` over the checked cells.
    pub max_violation: f64,
    pub worst_cell: Point,
    pub cells: usize,
    pub cell_size: f64,
}

/// `T̃(ξ) = ξ − ‖∇ψ‖^{(2−γ)/(γ−1)} ∇ψ` with `ψ = −p/α`.
pub fn density_map(grad_p: &VectorField, alpha: f64, gamma: f64, xi: Point) -> Point {
    let g = grad_p.eval(xi);
    let gpsi = [-g[0] / alpha, -g[1] / alpha];
    let e = (2.0 - gamma) / (gamma - 1.0);
    let s = if e == 0.0 { 1.0 } else { norm(gpsi).powf(e) };
    [xi[0] - s * gpsi[0], xi[1] - s * gpsi[1]]
}

/// Compares the density of `ū` with `(U⁰∘T̃)|det DT̃|` cell by cell on the
/// estimation grid `cells`, over the cells lying inside `interior` at a
/// distance of at least 1.5 cell sizes from its boundary.
///
/// Both sides are cell averages: the right-hand side is sampled at spacing
/// `h/2` of the problem grid and `DT̃` is a central difference with step `h/2`.
pub fn check_density_bound(
    problem: &ControlProblem,
    report: &SolveReport,
    gamma: f64,
    prior_density: &DensityEstimate,
    cells: &Grid,
    interior: &Region,
) -> Result<DensityReport> {
    if !(gamma > 1.0 && gamma <= 2.0) {
        return Err(Error::InvalidParameter(format!("gamma must be in (1,2], got {gamma}")));
    }
    let alpha = problem.alpha();
    let h = problem.grid().h();
    let big_h = cells.h();
    let grad = gradient_field(&report.adjoint);
    let estimate = cell_averages(problem.candidates(), &report.control, cells);
    let delta = 0.5 * h;
    let per_side = ((big_h / delta).round() as usize).max(1);
    let step = big_h / per_side as f64;
    let bound_at = |xi: Point| -> f64 {
        let t = |p: Point| density_map(&grad, alpha, gamma, p);
        let (xp, xm) = (t([xi[0] + delta, xi[1]]), t([xi[0] - delta, xi[1]]));
        let (yp, ym) = (t([xi[0], xi[1] + delta]), t([xi[0], xi[1] - delta]));
        let j = [
            [(xp[0] - xm[0]) / (2.0 * delta), (yp[0] - ym[0]) / (2.0 * delta)],
            [(xp[1] - xm[1]) / (2.0 * delta), (yp[1] - ym[1]) / (2.0 * delta)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        prior_density.eval(t(xi)) * det.abs()
    };
    let inside = |p: Point| match interior {
        Region::Full => problem.grid().domain().signed_boundary_distance(p) >= 1.5 * big_h - GEOM_EPS,
        Region::Box { min, max } => {
            p[0] - min[0] >= 1.5 * big_h - GEOM_EPS
                && max[0] - p[0] >= 1.5 * big_h - GEOM_EPS
                && p[1] - min[1] >= 1.5 * big_h - GEOM_EPS
                && max[1] - p[1] >= 1.5 * big_h - GEOM_EPS
        }
        Region::Annulus { r1, r2 } => {
            let r = norm(p);
            r - r1 >= 1.5 * big_h - GEOM_EPS && r2 - r >= 1.5 * big_h - GEOM_EPS
        }
    };
    let results: Vec<(f64, Point)> = (0..cells.len())
        .into_par_iter()
        .filter(|&k| cells.weights()[k] > 0.0 && inside(cells.node(k)))
        .map(|k| {
            let c = cells.node(k);
            let mut acc = 0.0;
            for a in 0..per_side {
                for b in 0..per_side {
                    let p = [c[0] - 0.5 * big_h + (a as f64 + 0.5) * step, c[1] - 0.5 * big_h + (b as f64 + 0.5) * step];
                    acc += bound_at(p);
                }
            }
            let bound = acc / (per_side * per_side) as f64;
            (estimate[k] - bound, c)
        })
        .collect();
    let (max_violation, worst_cell) =
        results.iter().fold((f64::NEG_INFINITY, [f64::NAN; 2]), |a, &(v, c)| if v > a.0 { (v, c) } else { a });
    Ok(DensityReport { gamma, max_violation, worst_cell, cells: results.len(), cell_size: big_h })
}

/// Mass per cell over cell area; an atom on a cell boundary is shared equally
/// by the cells whose closed square contains it.
fn cell_averages(points: &[Point], weights: &[f64], cells: &Grid) -> Vec<f64> {
    let big_h = cells.h();
    let (nx, ny) = cells.shape();
    let origin = cells.node(0);
    let mut mass = vec![0.0; cells.len()];
    for (p, &w) in points.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let owners = |c: f64, o: f64, n: usize| -> Vec<usize> {
            let t = (c - o) / big_h;
            let k = t.round();
            let mut out = vec![k];
            if ((t - k).abs() - 0.5).abs() <= 1e-9 {
                out.push(if t > k { k + 1.0 } else { k - 1.0 });
            }
            out.into_iter().filter(|v| *v >= 0.0 && *v < n as f64).map(|v| v as usize).collect()
        };
        let ix = owners(p[0], origin[0], nx);
        let iy = owners(p[1], origin[1], ny);
        let share = w / (ix.len() * iy.len()) as f64;
        for &a in &ix {
            for &b in &iy {
                mass[cells.index(a, b)] += share;
            }
        }
    }
    mass.iter().zip(cells.weights()).map(|(m, q)| if *q > 0.0 { m / q } else { 0.0 }).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct StateBoundReport {
    /// `max|Δ_ξ c|`
    pub laplacian_bound: f64,
    /// `min (y_d + α max|Δc| − ȳ)` over charged interior candidates.
    pub support_margin: f64,
    /// `‖y_d‖_∞ + α max|Δc| − ‖ȳ‖_∞`
    pub global_margin: f64,
    pub slack: f64,
    pub passed: bool,
}

/// State bounds on the support of `ū` and globally; margins must be `≥ −slack`
/// with `slack = k_slack·h`.
pub fn check_state_bounds(problem: &ControlProblem, report: &SolveReport, k_slack: f64) -> Result<StateBoundReport> {
    let crate::control::Objective::TrackingFull { target } = problem.objective_spec() else {
        return Err(Error::InvalidParameter("state bounds need full tracking".into()));
    };
    let lap = problem.cost_model().laplacian_bound()?;
    let alpha = problem.alpha();
    let grid = problem.grid();
    let mut support_margin = f64::INFINITY;
    for (j, &xi) in problem.candidates().iter().enumerate() {
        if report.control[j] > 0.0 && grid.domain().contains_open(xi) {
            let m = target.eval(xi) + alpha * lap - report.state.eval(xi);
            support_margin = support_margin.min(m);
        }
    }
    if support_margin == f64::INFINITY {
        support_margin = 0.0;
    }
    let global_margin = target.norm_inf() + alpha * lap - report.state.norm_inf();
    let slack = k_slack * grid.h();
    let passed = support_margin >= -slack && global_margin >= -slack;
    Ok(StateBoundReport { laplacian_bound: lap, support_margin, global_margin, slack, passed })
}

#[derive(Clone, Debug, Serialize)]
pub struct SparsityReport {
    /// Estimate of `‖S‖` from measures to `L²(D)`.
    pub s_norm: f64,
    /// `dist(ω₁, ∂(Ω∖D̄))`
    pub separation: f64,
    pub target_norm: f64,
    pub prior_mass: f64,
    pub bound: f64,
    pub alpha: f64,
    pub predicted: bool,
}

/// Threshold on `α` above which the metric-cost solution keeps `ū = u⁰`.
pub fn sparsity_threshold(problem: &ControlProblem) -> Result<SparsityReport> {
    if !matches!(problem.cost_model(), CostModel::Metric) {
        return Err(Error::WrongModel(format!("the sparsity threshold needs the metric cost, got {}", problem.cost_model().label())));
    }
    tikhonov_bound(problem)
}

/// Computable threshold `4d²‖S‖/r² (‖y_d‖_{L²(D)} + ‖S‖|u⁰|)` with `d = 2`,
/// valid for any cost model. For the quadratic cost it bounds the curvature
/// of `p` by `α`.
///
/// `‖S‖` is the largest singular value of the candidate Diracs observed on
/// `D` (power iteration), an upper bound for the norm on measures. The
/// distance to `D̄` is measured to the window nodes minus half a cell
/// diagonal, so it never overestimates.
pub fn tikhonov_bound(problem: &ControlProblem) -> Result<SparsityReport> {
    let crate::control::Objective::TrackingWindow { target, window } = problem.objective_spec() else {
        return Err(Error::InvalidParameter("the sparsity threshold needs a tracking window".into()));
    };
    let grid = problem.grid();
    let cands = problem.candidates();
    let window_nodes: Vec<Point> = (0..grid.len()).filter(|&k| window[k]).map(|k| grid.node(k)).collect();
    if window_nodes.is_empty() {
        return Err(Error::EmptySet("observation window has no nodes".into()));
    }
    if window_nodes.iter().any(|&w| in_convex_hull(cands, w)) {
        return Err(Error::Separation("the observation window meets the hull of the candidate set".into()));
    }
    let half_diag = grid.h() * std::f64::consts::FRAC_1_SQRT_2;
    let separation = cands
        .par_iter()
        .map(|&xi| {
            let to_window = window_nodes.iter().map(|&w| dist(w, xi)).fold(f64::INFINITY, f64::min) - half_diag;
            grid.domain().signed_boundary_distance(xi).min(to_window)
        })
        .reduce(|| f64::INFINITY, f64::min);
    if !(separation > 0.0) {
        return Err(Error::Separation(format!("candidates are not separated from the window boundary (distance {separation})")));
    }

    let q = grid.weights();
    let masked = |z: &ScalarField| -> Result<ScalarField> {
        let v = z.values().iter().enumerate().map(|(k, v)| if window[k] { *v } else { 0.0 }).collect();
        ScalarField::new(grid.clone(), v, false)
    };
    let mut v = vec![1.0 / (cands.len() as f64).sqrt(); cands.len()];
    let mut sigma2 = 0.0;
    for _ in 0..50 {
        let z = problem.state_of_control(&v)?;
        let (_, w) = problem.backend().adjoint_at(&masked(&z)?, cands)?;
        let nrm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm == 0.0 {
            break;
        }
        let prev = sigma2;
        sigma2 = nrm;
        v = w.iter().map(|x| x / nrm).collect();
        if (sigma2 - prev).abs() <= 1e-10 * sigma2 {
            break;
        }
    }
    let s_norm = sigma2.sqrt();
    let target_norm =
        (0..grid.len()).filter(|&k| window[k]).map(|k| q[k] * target.values()[k].powi(2)).sum::<f64>().sqrt();
    let prior_mass = problem.prior().total_mass();
    let d = 2.0;
    let bound = 4.0 * d * d * s_norm / (separation * separation) * (target_norm + s_norm * prior_mass);
    Ok(SparsityReport {
        s_norm,
        separation,
        target_norm,
        prior_mass,
        bound,
        alpha: problem.alpha(),
        predicted: problem.alpha() > bound,
    })
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Closed convex hull membership (monotone chain hull).
fn in_convex_hull(points: &[Point], q: Point) -> bool {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() == 1 {
        return dist(pts[0], q) <= GEOM_EPS;
    }
    let mut hull: Vec<Point> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        let (a, b) = (hull[0], *hull.get(1).unwrap_or(&hull[0]));
        let ab = dist(a, b);
        return (dist(a, q) + dist(q, b) - ab).abs() <= GEOM_EPS;
    }
    (0..hull.len()).all(|k| cross(hull[k], hull[(k + 1) % hull.len()], q) >= -GEOM_EPS)
}

/// Collected structural diagnostics attached to a solve.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StructureReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rays: Option<RayReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curvature: Option<CurvatureReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport_map: Option<MapSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_bounds: Option<StateBoundReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<SparsityReport>,
    /// Discrete Lipschitz constant of `p/α` on the candidates (information only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjoint_lipschitz_ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MapSummary {
    pub is_map: bool,
    pub worst_row: Option<usize>,
    pub worst_fraction: Option<f64>,
    pub support_size: usize,
    pub pushforward_error: Option<f64>,
    pub holder_violation: Option<f64>,
}

impl MapSummary {
    pub fn from_result(result: &Result<MapReport>, support_size: usize) -> Self {
        match result {
            Ok(m) => Self {
                is_map: true,
                worst_row: None,
                worst_fraction: None,
                support_size,
                pushforward_error: Some(m.pushforward_error),
                holder_violation: Some(m.holder_violation),
            },
            Err(Error::NotAMap { row, fraction }) => Self {
                is_map: false,
                worst_row: Some(*row),
                worst_fraction: Some(*fraction),
                support_size,
                pushforward_error: None,
                holder_violation: None,
            },
            Err(_) => Self {
                is_map: false,
                worst_row: None,
                worst_fraction: None,
                support_size,
                pushforward_error: None,
                holder_violation: None,
            },
        }
    }
}

/// `max |p_i − p_j| / (α‖ξ_i − ξ_j‖)` over grid-neighbouring candidates.
pub fn adjoint_lipschitz_ratio(problem: &ControlProblem, p: &[f64]) -> f64 {
    let cands = problem.candidates();
    let h = problem.grid().h();
    let grid = problem.grid();
    let mut by_node = vec![usize::MAX; grid.len()];
    for (j, &xi) in cands.iter().enumerate() {
        if let Some(k) = grid.node_at(xi) {
            by_node[k] = j;
        }
    }
    let mut best = 0.0f64;
    for (k, &j) in by_node.iter().enumerate() {
        if j == usize::MAX {
            continue;
        }
        for nb in grid.neighbors(k) {
            let l = by_node[nb];
            if l != usize::MAX {
                best = best.max((p[j] - p[l]).abs() / (problem.alpha() * h));
            }
        }
    }
    best
}
