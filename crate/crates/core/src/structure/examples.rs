//! Builders for the closed-form annulus example and a separated sparsity setup.

use std::f64::consts::PI;
use std::sync::Arc;

use super::{sparsity_threshold, SparsityReport};
use crate::control::{ControlProblem, Objective};
use crate::error::{Error, Result};
use crate::geometry::{build_grid, candidate_points, norm, Domain, Point, Region};
use crate::measures::DiscreteMeasure;
use crate::pde::{PoissonBackend, ScalarField};
use crate::transport::{CostModel, TransportPlan};

/// `u⁰(Ω̄) = ū(Ω̄)` in the annulus example.
pub const ANNULUS_MASS: f64 = 0.75 * PI;

/// Known solution of the annulus example.
#[derive(Clone, Debug)]
pub struct AnnulusReference {
    pub alpha: f64,
    /// Continuum optimum `¾·H¹` on the circle of radius ½, as equal atoms.
    pub ring: DiscreteMeasure,
    /// Optimal plan of the discrete problem: every source on its lowest-index
    /// minimizer of `c(x,·) + p/α` over the candidates.
    pub plan: TransportPlan,
    /// `P₁#plan` on the candidates.
    pub control: Vec<f64>,
    /// `p = α(‖ξ‖² − 1)` at the interior nodes.
    pub adjoint: ScalarField,
}

impl AnnulusReference {
    pub fn adjoint_exact(&self, x: Point) -> f64 {
        self.alpha * (x[0] * x[0] + x[1] * x[1] - 1.0)
    }

    /// `ψ^c̄` of `ψ = −p/α = 1 − ‖ξ‖²`.
    pub fn psi_cbar(x: Point) -> f64 {
        let r = norm(x);
        if r < 0.5 {
            r * r - 1.0
        } else {
            r - 1.25
        }
    }

    /// Continuum transport map `x ↦ x/(2‖x‖)` outside the ring, identity inside.
    pub fn reference_map(x: Point) -> Point {
        let r = norm(x);
        if r >= 0.5 {
            [x[0] / (2.0 * r), x[1] / (2.0 * r)]
        } else {
            x
        }
    }
}

/// Disk example with `u⁰ = λ²` on the annulus `½ ≤ ‖x‖ ≤ 1`, metric cost and
/// a target `y_d` for which `p = α(‖ξ‖² − 1)` is the discrete adjoint.
///
/// The target is assembled from the discrete optimum so that the discrete
/// problem has a known exact solution: `y_d = ȳ_h − (−Δ_h) p_h`.
pub fn build_annulus_example(h: f64, alpha: f64) -> Result<(ControlProblem, AnnulusReference)> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let grid = Arc::new(build_grid(Domain::UnitDisk, h)?);
    let backend = PoissonBackend::fd_grid(grid.clone());
    let sources = candidate_points(Domain::UnitDisk, Region::Annulus { r1: 0.5, r2: 1.0 }, h)?;
    let raw: Vec<f64> = sources
        .iter()
        .map(|&x| grid.node_at(x).map_or(0.0, |k| grid.weights()[k]))
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w * (ANNULUS_MASS / total)).collect();
    let prior = DiscreteMeasure::new(sources, weights)?;
    let candidates = candidate_points(Domain::UnitDisk, Region::Full, h)?;

    let adjoint = ScalarField::new(
        grid.clone(),
        grid.nodes().iter().map(|x| alpha * (x[0] * x[0] + x[1] * x[1] - 1.0)).collect(),
        true,
    )?;
    let p_at: Vec<f64> = candidates.iter().map(|&xi| adjoint.eval(xi)).collect();
    let placeholder = ControlProblem::new(
        backend.clone(),
        prior.clone(),
        candidates.clone(),
        CostModel::Metric,
        Objective::TrackingFull { target: ScalarField::zeros(grid.clone()) },
        alpha,
    )?;
    let costs = placeholder.costs();
    let rows: Vec<Vec<(usize, f64)>> = (0..costs.rows())
        .map(|i| {
            let row = costs.row(i);
            let mut best = (0, f64::INFINITY);
            for (j, (c, p)) in row.iter().zip(&p_at).enumerate() {
                let v = c + p / alpha;
                if v < best.1 {
                    best = (j, v);
                }
            }
            vec![(best.0, prior.weights()[i])]
        })
        .collect();
    let plan = TransportPlan::from_rows(rows, candidates.len())?.with_row_marginal(prior.weights().to_vec());
    let control = plan.column_sums();
    let state = backend.solve_state_atoms(&candidates, &control)?;
    let lap = backend.apply_laplacian(&adjoint)?;
    let target = state.axpby(1.0, &lap, -1.0)?;
    let problem = placeholder.with_objective(Objective::TrackingFull { target })?;

    let n_ring = (2.0 * PI * 0.5 / h).ceil() as usize;
    let ring_pts: Vec<Point> = (0..n_ring)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n_ring as f64;
            [0.5 * t.cos(), 0.5 * t.sin()]
        })
        .collect();
    let ring = DiscreteMeasure::new(ring_pts, vec![ANNULUS_MASS / n_ring as f64; n_ring])?;
    Ok((problem, AnnulusReference { alpha, ring, plan, control, adjoint }))
}

/// Square domain, prior and candidates on `[0.15, 0.45]²`, observation window
/// `[0.75, 1]²`, metric cost, `α = factor ×` the computable threshold.
pub fn build_sparsity_example(h: f64, factor: f64) -> Result<(ControlProblem, SparsityReport)> {
    if !(factor > 0.0) {
        return Err(Error::InvalidParameter(format!("factor must be positive, got {factor}")));
    }
    let grid = Arc::new(build_grid(Domain::UnitSquare, h)?);
    let backend = PoissonBackend::fd_grid(grid.clone());
    let omega = Region::Box { min: [0.15, 0.15], max: [0.45, 0.45] };
    let candidates = candidate_points(Domain::UnitSquare, omega, h)?;
    let weights = candidates
        .iter()
        .map(|p| h * h * (1.0 + 0.5 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).cos()))
        .collect();
    let prior = DiscreteMeasure::new(candidates.clone(), weights)?;
    let observe = Region::Box { min: [0.75, 0.75], max: [1.0, 1.0] };
    let window: Vec<bool> = grid.nodes().iter().map(|&x| observe.contains(x)).collect();
    let target = ScalarField::from_fn(grid, |p| 1.0 + p[0] * p[1]);
    let problem = ControlProblem::new(
        backend,
        prior,
        candidates,
        CostModel::Metric,
        Objective::TrackingWindow { target, window },
        1.0,
    )?;
    let threshold = sparsity_threshold(&problem)?;
    let problem = problem.with_alpha(factor * threshold.bound)?;
    let threshold = SparsityReport { alpha: problem.alpha(), predicted: problem.alpha() > threshold.bound, ..threshold };
    Ok((problem, threshold))
}
