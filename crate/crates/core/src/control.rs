//! Reduced control problem over transport plans and its Frank–Wolfe solver.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};
use crate::measures::DiscreteMeasure;
use crate::pde::{PoissonBackend, ScalarField};
use crate::transport::{c_bar_transform, cost_matrix, CostMatrix, CostModel, TransportPlan};

/// Tracking functional `J(y) = ½‖y − y_d‖²` over the whole domain or a window.
#[derive(Clone, Debug)]
pub enum Objective {
    TrackingFull { target: ScalarField },
    TrackingWindow { target: ScalarField, window: Vec<bool> },
}

impl Objective {
    pub fn target(&self) -> &ScalarField {
        match self {
            Objective::TrackingFull { target } | Objective::TrackingWindow { target, .. } => target,
        }
    }

    pub fn window(&self) -> Option<&[bool]> {
        match self {
            Objective::TrackingFull { .. } => None,
            Objective::TrackingWindow { window, .. } => Some(window),
        }
    }

    #[inline]
    fn observed(&self, k: usize) -> bool {
        self.window().map_or(true, |w| w[k])
    }
}

#[derive(Clone, Debug)]
pub struct ControlProblem {
    backend: PoissonBackend,
    prior: DiscreteMeasure,
    candidates: Vec<Point>,
    cost_model: CostModel,
    costs: Arc<CostMatrix>,
    objective: Objective,
    alpha: f64,
}

impl ControlProblem {
    pub fn new(
        backend: PoissonBackend,
        prior: DiscreteMeasure,
        candidates: Vec<Point>,
        cost_model: CostModel,
        objective: Objective,
        alpha: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if !prior.is_nonnegative() {
            return Err(Error::InvalidParameter("prior must be nonnegative".into()));
        }
        if prior.is_empty() || candidates.is_empty() {
            return Err(Error::EmptySet("prior and candidate set must be nonempty".into()));
        }
        let grid = backend.grid().clone();
        for p in &candidates {
            if !grid.domain().contains_closed(*p) {
                return Err(Error::OutsideDomain(p[0], p[1]));
            }
        }
        if !grid.same_as(objective.target().grid()) {
            return Err(Error::Shape("target field and backend grid differ".into()));
        }
        if let Some(w) = objective.window() {
            if w.len() != grid.len() {
                return Err(Error::Shape(format!("window mask has {} entries for {} nodes", w.len(), grid.len())));
            }
        }
        let costs = Arc::new(cost_matrix(&cost_model, prior.points(), &candidates)?);
        Ok(Self { backend, prior, candidates, cost_model, costs, objective, alpha })
    }

    pub fn backend(&self) -> &PoissonBackend {
        &self.backend
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.backend.grid()
    }

    pub fn prior(&self) -> &DiscreteMeasure {
        &self.prior
    }

    pub fn candidates(&self) -> &[Point] {
        &self.candidates
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost_model
    }

    pub fn costs(&self) -> &CostMatrix {
        &self.costs
    }

    pub fn objective_spec(&self) -> &Objective {
        &self.objective
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Same problem with another regularization weight.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha, ..self.clone() })
    }

    /// Same problem with another tracking objective.
    pub fn with_objective(&self, objective: Objective) -> Result<Self> {
        let grid = self.grid();
        if !grid.same_as(objective.target().grid()) {
            return Err(Error::Shape("target field and backend grid differ".into()));
        }
        if let Some(w) = objective.window() {
            if w.len() != grid.len() {
                return Err(Error::Shape(format!("window mask has {} entries for {} nodes", w.len(), grid.len())));
            }
        }
        Ok(Self { objective, ..self.clone() })
    }

    pub fn state_of_control(&self, control: &[f64]) -> Result<ScalarField> {
        self.backend.solve_state_atoms(&self.candidates, control)
    }

    pub fn state_of_plan(&self, plan: &TransportPlan) -> Result<ScalarField> {
        self.check_plan(plan)?;
        self.state_of_control(&plan.column_sums())
    }

    /// `J(y)`
    pub fn tracking(&self, y: &ScalarField) -> f64 {
        let yd = self.objective.target().values();
        let q = self.grid().weights();
        y.values()
            .iter()
            .enumerate()
            .filter(|(k, _)| self.objective.observed(*k))
            .map(|(k, v)| 0.5 * q[k] * (v - yd[k]).powi(2))
            .sum()
    }

    fn masked(&self, z: &ScalarField) -> Result<ScalarField> {
        let values = z.values().iter().enumerate().map(|(k, v)| if self.objective.observed(k) { *v } else { 0.0 }).collect();
        ScalarField::new(self.grid().clone(), values, false)
    }

    /// `χ_D (y − y_d)`
    pub fn residual(&self, y: &ScalarField) -> Result<ScalarField> {
        let yd = self.objective.target().values();
        let values = y
            .values()
            .iter()
            .enumerate()
            .map(|(k, v)| if self.objective.observed(k) { v - yd[k] } else { 0.0 })
            .collect();
        ScalarField::new(self.grid().clone(), values, false)
    }

    /// Adjoint state `p = S*(χ_D(y − y_d))` and its values at the candidates.
    pub fn adjoint(&self, y: &ScalarField) -> Result<(ScalarField, Vec<f64>)> {
        self.backend.adjoint_at(&self.residual(y)?, &self.candidates)
    }

    /// `J(S P₁#π) + α⟨C, π⟩`
    pub fn objective(&self, plan: &TransportPlan) -> Result<f64> {
        let y = self.state_of_plan(plan)?;
        Ok(self.tracking(&y) + self.alpha * plan.cost(&self.costs))
    }

    /// Dense row-major gradient `α C_ij + p(ξ_j)`.
    pub fn gradient_wrt_plan(&self, plan: &TransportPlan) -> Result<Vec<f64>> {
        let y = self.state_of_plan(plan)?;
        let (_, p) = self.adjoint(&y)?;
        Ok(self.dense_gradient(&p))
    }

    fn dense_gradient(&self, p: &[f64]) -> Vec<f64> {
        let n = self.costs.cols();
        let mut g = vec![0.0; self.costs.rows() * n];
        g.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for ((gij, c), pj) in row.iter_mut().zip(self.costs.row(i)).zip(p) {
                *gij = self.alpha * c + pj;
            }
        });
        g
    }

    fn check_plan(&self, plan: &TransportPlan) -> Result<()> {
        if plan.n_rows() != self.costs.rows() || plan.n_cols() != self.costs.cols() {
            return Err(Error::Shape(format!(
                "plan is {}x{}, problem is {}x{}",
                plan.n_rows(),
                plan.n_cols(),
                self.costs.rows(),
                self.costs.cols()
            )));
        }
        Ok(())
    }

    /// Row-wise minimizers of `α C_ij + p_j` with their values.
    fn row_minima(&self, p: &[f64]) -> Vec<(usize, f64)> {
        (0..self.costs.rows())
            .into_par_iter()
            .map(|i| {
                let mut best = (0, f64::INFINITY);
                for (j, (c, pj)) in self.costs.row(i).iter().zip(p).enumerate() {
                    let g = self.alpha * c + pj;
                    if g < best.1 {
                        best = (j, g);
                    }
                }
                best
            })
            .collect()
    }

    /// The plan keeping every source in place when it is itself a candidate,
    /// otherwise sending it to its cheapest candidate.
    pub fn initial_plan(&self) -> TransportPlan {
        let zeros = vec![0.0; self.costs.cols()];
        vertex_from_minima(&self.row_minima(&zeros), self.prior.weights(), self.costs.cols())
    }
}

fn vertex_from_minima(minima: &[(usize, f64)], weights: &[f64], n_cols: usize) -> TransportPlan {
    let rows = minima.iter().zip(weights).map(|(&(j, _), &w)| if w > 0.0 { vec![(j, w)] } else { Vec::new() }).collect();
    TransportPlan::from_rows(rows, n_cols).expect("vertex plan is valid").with_row_marginal(weights.to_vec())
}

/// Linear-minimization oracle: each row's full mass on its lowest-index minimizer.
pub fn fw_vertex(gradient: &[f64], n_cols: usize, u0_weights: &[f64]) -> Result<TransportPlan> {
    if n_cols == 0 || gradient.len() != n_cols * u0_weights.len() {
        return Err(Error::Shape(format!("gradient of length {} for {} rows", gradient.len(), u0_weights.len())));
    }
    let minima: Vec<(usize, f64)> = gradient
        .par_chunks(n_cols)
        .map(|row| {
            row.iter().enumerate().fold((0, f64::INFINITY), |best, (j, &g)| if g < best.1 { (j, g) } else { best })
        })
        .collect();
    Ok(vertex_from_minima(&minima, u0_weights, n_cols))
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Run a fully corrective pass every this many iterations (0 disables it).
    pub corrective_every: usize,
    pub corrective_iters: usize,
    pub initial: Option<TransportPlan>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 5000, corrective_every: 10, corrective_iters: 50, initial: None }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub plan: TransportPlan,
    /// `P₁#π̄` on every candidate.
    pub control: Vec<f64>,
    pub state: ScalarField,
    pub adjoint: ScalarField,
    /// Adjoint at the candidates.
    pub adjoint_at_candidates: Vec<f64>,
    /// `ψ = −p/α` on the candidates.
    pub psi: Vec<f64>,
    /// `φ = ψ^c̄` on the sources.
    pub phi: Vec<f64>,
    pub objective: f64,
    pub gap: f64,
    pub objective_history: Vec<f64>,
    pub gap_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn u_bar(&self, candidates: &[Point]) -> DiscreteMeasure {
        let (pts, ws) = candidates.iter().zip(&self.control).filter(|(_, w)| **w > 0.0).map(|(p, w)| (*p, *w)).unzip();
        DiscreteMeasure::new(pts, ws).expect("column sums are nonnegative")
    }
}

/// Mutable plan iterate whose rows always sum to the prior weights.
struct Iterate {
    rows: Vec<Vec<(usize, f64)>>,
    weights: Vec<f64>,
    n_cols: usize,
}

impl Iterate {
    fn from_plan(plan: &TransportPlan, weights: &[f64]) -> Result<Self> {
        let mut it = Self { rows: plan.rows().to_vec(), weights: weights.to_vec(), n_cols: plan.n_cols() };
        for i in 0..it.rows.len() {
            let s: f64 = it.rows[i].iter().map(|e| e.1).sum();
            if (s - weights[i]).abs() > 1e-9 * weights[i].max(1e-300) {
                return Err(Error::InvalidParameter(format!("initial plan row {i} sums to {s}, expected {}", weights[i])));
            }
            it.settle_row(i);
        }
        Ok(it)
    }

    /// Drops zero entries and assigns the row remainder to the largest entry.
    fn settle_row(&mut self, i: usize) {
        let w = self.weights[i];
        let row = &mut self.rows[i];
        row.retain(|e| e.1 > 0.0);
        if row.is_empty() {
            return;
        }
        let big = (0..row.len()).max_by(|&a, &b| row[a].1.total_cmp(&row[b].1).then(b.cmp(&a))).unwrap();
        let rest: f64 = row.iter().enumerate().filter(|(k, _)| *k != big).map(|(_, e)| e.1).sum();
        row[big].1 = w - rest;
    }

    fn step_towards(&mut self, vertex: &[(usize, f64)], t: f64) {
        let weights = &self.weights;
        self.rows.par_iter_mut().enumerate().for_each(|(i, row)| {
            if weights[i] == 0.0 {
                return;
            }
            let v = vertex[i].0;
            if t >= 1.0 {
                row.clear();
                row.push((v, weights[i]));
                return;
            }
            for e in row.iter_mut() {
                e.1 *= 1.0 - t;
            }
            match row.binary_search_by_key(&v, |e| e.0) {
                Ok(k) => row[k].1 += t * weights[i],
                Err(k) => row.insert(k, (v, t * weights[i])),
            }
        });
        for i in 0..self.rows.len() {
            self.settle_row(i);
        }
    }

    fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for row in &self.rows {
            for &(j, w) in row {
                out[j] += w;
            }
        }
        out
    }

    fn cost(&self, costs: &CostMatrix) -> f64 {
        self.rows.iter().enumerate().map(|(i, r)| r.iter().map(|&(j, w)| w * costs.get(i, j)).sum::<f64>()).sum()
    }

    fn linear(&self, g: impl Fn(usize, usize) -> f64 + Sync) -> f64 {
        // per-row sums in parallel, total in a fixed order for reproducibility
        let per_row: Vec<f64> =
            self.rows.par_iter().enumerate().map(|(i, r)| r.iter().map(|&(j, w)| w * g(i, j)).sum::<f64>()).collect();
        per_row.iter().sum()
    }

    fn to_plan(&self) -> TransportPlan {
        TransportPlan::from_rows(self.rows.clone(), self.n_cols)
            .expect("iterate entries are valid")
            .with_row_marginal(self.weights.clone())
    }
}

/// Euclidean projection of `x` onto `{z ≥ 0, Σz = mass}`.
fn project_simplex(x: &mut [f64], mass: f64) {
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cum += v;
        let cand = (cum - mass) / (k + 1) as f64;
        if v - cand > 0.0 {
            theta = cand;
        }
    }
    for v in x.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

struct Evaluation {
    state: ScalarField,
    objective: f64,
}

impl ControlProblem {
    fn evaluate(&self, it: &Iterate) -> Result<Evaluation> {
        let state = self.state_of_control(&it.column_sums())?;
        let objective = self.tracking(&state) + self.alpha * it.cost(&self.costs);
        Ok(Evaluation { state, objective })
    }

    /// Projected-gradient re-optimization over the current per-row supports.
    fn fully_corrective(&self, it: &mut Iterate, iters: usize) -> Result<Evaluation> {
        let mut eval = self.evaluate(it)?;
        let lip = self.support_lipschitz(it)?;
        if !(lip > 0.0) {
            return Ok(eval);
        }
        let mut step = 1.0 / lip;
        for _ in 0..iters {
            let (_, p) = self.adjoint(&eval.state)?;
            let mut trial = Iterate { rows: it.rows.clone(), weights: it.weights.clone(), n_cols: it.n_cols };
            loop {
                trial.rows.par_iter_mut().zip(&it.rows).enumerate().for_each(|(i, (row, old))| {
                    if old.len() < 2 {
                        return;
                    }
                    let mut x: Vec<f64> =
                        old.iter().map(|&(j, w)| w - step * (self.alpha * self.costs.get(i, j) + p[j])).collect();
                    project_simplex(&mut x, it.weights[i]);
                    for (e, v) in row.iter_mut().zip(x) {
                        e.1 = v;
                    }
                });
                for i in 0..trial.rows.len() {
                    if trial.rows[i].len() >= 2 {
                        trial.settle_row(i);
                    }
                }
                let next = self.evaluate(&trial)?;
                if next.objective <= eval.objective {
                    *it = trial;
                    eval = next;
                    break;
                }
                step *= 0.5;
                if step * lip < 1e-6 {
                    return Ok(eval);
                }
                trial = Iterate { rows: it.rows.clone(), weights: it.weights.clone(), n_cols: it.n_cols };
            }
        }
        Ok(eval)
    }

    /// Largest eigenvalue of the tracking Hessian restricted to the active
    /// entries, by power iteration.
    fn support_lipschitz(&self, it: &Iterate) -> Result<f64> {
        let mut d: Vec<Vec<f64>> = it.rows.iter().map(|r| vec![1.0; r.len()]).collect();
        let mut lambda = 0.0;
        for _ in 0..20 {
            let nrm = d.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            if nrm == 0.0 {
                return Ok(0.0);
            }
            let mut u = vec![0.0; it.n_cols];
            for (row, dr) in it.rows.iter().zip(&d) {
                for (&(j, _), v) in row.iter().zip(dr) {
                    u[j] += v / nrm;
                }
            }
            let z = self.state_of_control(&u)?;
            let (_, q) = self.backend.adjoint_at(&self.masked(&z)?, &self.candidates)?;
            d = it.rows.iter().map(|row| row.iter().map(|&(j, _)| q[j]).collect()).collect();
            lambda = d.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        }
        Ok(1.1 * lambda)
    }
}

/// Frank–Wolfe with exact line search and periodic fully corrective passes.
pub fn solve_control(problem: &ControlProblem, opts: &SolveOptions) -> Result<SolveReport> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let start = Instant::now();
    let weights = problem.prior.weights();
    let initial = match &opts.initial {
        Some(plan) => {
            problem.check_plan(plan)?;
            plan.clone()
        }
        None => problem.initial_plan(),
    };
    let mut it = Iterate::from_plan(&initial, weights)?;
    let mut eval = problem.evaluate(&it)?;
    let mut objective_history = Vec::new();
    let mut gap_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let alpha = problem.alpha;
    let costs = &problem.costs;

    let (adjoint, p) = loop {
        let (adjoint, p) = problem.adjoint(&eval.state)?;
        let minima = problem.row_minima(&p);
        let current = it.linear(|i, j| alpha * costs.get(i, j) + p[j]);
        let best: f64 = minima.iter().zip(weights).map(|(m, w)| m.1 * w).sum();
        let gap = (current - best).max(0.0);
        objective_history.push(eval.objective);
        gap_history.push(gap);
        if gap <= opts.tol * (1.0 + eval.objective.abs()) {
            converged = true;
            break (adjoint, p);
        }
        if iterations >= opts.max_iter {
            break (adjoint, p);
        }
        iterations += 1;

        let vertex_control = {
            let mut u = vec![0.0; it.n_cols];
            for (&(j, _), &w) in minima.iter().zip(weights) {
                u[j] += w;
            }
            u
        };
        let sv = problem.state_of_control(&vertex_control)?;
        let z = sv.axpby(1.0, &eval.state, -1.0)?;
        let curvature = problem.tracking_quadratic(&z);
        let t = if curvature > 0.0 { (gap / (2.0 * curvature)).clamp(0.0, 1.0) } else { 1.0 };
        if t == 0.0 {
            break (adjoint, p);
        }
        it.step_towards(&minima, t);
        let state = eval.state.axpby(1.0 - t, &sv, t)?;
        let objective = problem.tracking(&state) + alpha * it.cost(costs);
        eval = Evaluation { state, objective };

        if opts.corrective_every > 0 && iterations % opts.corrective_every == 0 {
            eval = problem.fully_corrective(&mut it, opts.corrective_iters)?;
        }
    };

    let plan = it.to_plan();
    let control = plan.column_sums();
    let psi: Vec<f64> = p.iter().map(|v| -v / alpha).collect();
    let phi = c_bar_transform(&psi, costs)?.values;
    Ok(SolveReport {
        plan,
        control,
        state: eval.state,
        adjoint,
        adjoint_at_candidates: p,
        psi,
        phi,
        objective: eval.objective,
        gap: *gap_history.last().unwrap(),
        objective_history,
        gap_history,
        converged,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Report for a given plan without iterating: state, adjoint, potentials and
/// FW gap. `converged` means the gap meets `tol·(1 + |objective|)`.
pub fn evaluate_plan(problem: &ControlProblem, plan: &TransportPlan, tol: f64) -> Result<SolveReport> {
    let start = Instant::now();
    problem.check_plan(plan)?;
    let alpha = problem.alpha;
    let costs = &problem.costs;
    let state = problem.state_of_plan(plan)?;
    let objective = problem.tracking(&state) + alpha * plan.cost(costs);
    let (adjoint, p) = problem.adjoint(&state)?;
    let minima = problem.row_minima(&p);
    let current: f64 = plan.entries().map(|(i, j, w)| w * (alpha * costs.get(i, j) + p[j])).sum();
    let best: f64 = minima.iter().zip(problem.prior.weights()).map(|(m, w)| m.1 * w).sum();
    let gap = (current - best).max(0.0);
    let psi: Vec<f64> = p.iter().map(|v| -v / alpha).collect();
    let phi = c_bar_transform(&psi, costs)?.values;
    Ok(SolveReport {
        control: plan.column_sums(),
        plan: plan.clone(),
        state,
        adjoint,
        adjoint_at_candidates: p,
        psi,
        phi,
        objective,
        gap,
        objective_history: vec![objective],
        gap_history: vec![gap],
        converged: gap <= tol * (1.0 + objective.abs()),
        iterations: 0,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

impl ControlProblem {
    /// `½‖z‖²_D`
    fn tracking_quadratic(&self, z: &ScalarField) -> f64 {
        let q = self.grid().weights();
        z.values()
            .iter()
            .enumerate()
            .filter(|(k, _)| self.objective.observed(*k))
            .map(|(k, v)| 0.5 * q[k] * v * v)
            .sum()
    }
}
