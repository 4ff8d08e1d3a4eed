//! State and adjoint Poisson solves with measure data.
//!
//! The finite-difference backend discretizes `-Δy = u` with the 5-point
//! stencil in weak form, `K y = b`, where `K` is the stencil matrix scaled by
//! `h²` and `b` holds the atom masses deposited onto interior nodes by bilinear
//! weights. Field data `f` (adjoint right-hand sides) enter as `M f` with `M` the
//! diagonal of quadrature weights, so that
//! `<S u, f>_M = <u, S* f>` holds exactly for the discrete operators.
//! Dirichlet nodes (everything not strictly inside the domain) are zero.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{dist, norm, Domain, Grid, Point, GEOM_EPS};
use crate::measures::{fmt_f64, DiscreteMeasure};

/// Relative residual target of the conjugate gradient solver.
pub const CG_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    dirichlet: bool,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, dirichlet: bool) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!("{} values for {} grid nodes", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("field values must be finite".into()));
        }
        let mut values = values;
        if dirichlet {
            for (v, &inside) in values.iter_mut().zip(grid.interior()) {
                if !inside {
                    *v = 0.0;
                }
            }
        }
        Ok(Self { grid, values, dirichlet })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n], dirichlet: true }
    }

    /// Samples `f` at every node (no boundary condition imposed).
    pub fn from_fn<F: Fn(Point) -> f64>(grid: Arc<Grid>, f: F) -> Self {
        let values = grid.nodes().iter().map(|&p| f(p)).collect();
        Self { grid, values, dirichlet: false }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_dirichlet(&self) -> bool {
        self.dirichlet
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Bilinear interpolation.
    pub fn eval(&self, p: Point) -> f64 {
        self.grid.bilinear_stencil(p).iter().map(|&(k, w)| w * self.values[k]).sum()
    }

    /// Quadrature inner product `Σ q_k f_k g_k`.
    pub fn dot_quad(&self, other: &ScalarField) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(self.grid.weights())
            .map(|((a, b), q)| q * a * b)
            .sum())
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().zip(self.grid.weights()).map(|(v, q)| q * v * v).sum::<f64>().sqrt()
    }

    pub fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::Shape("fields live on different grids".into()))
        }
    }

    pub fn map_values<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect(), dirichlet: self.dirichlet }
    }

    /// Pointwise linear combination `a*self + b*other`.
    pub fn axpby(&self, a: f64, other: &ScalarField, b: f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
            dirichlet: self.dirichlet && other.dirichlet,
        })
    }

    /// Rows `x,y,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y", "value"])?;
        for (p, v) in self.grid.nodes().iter().zip(&self.values) {
            w.write_record([fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `x,y,value` rows; every row must hit a grid node.
    pub fn read_csv<R: std::io::Read>(grid: Arc<Grid>, reader: R, dirichlet: bool) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut values = vec![0.0; grid.len()];
        let mut seen = vec![false; grid.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse(format!("field CSV row {}: column {i} is not a number", line + 1)))
            };
            let p = [num(0)?, num(1)?];
            let k = grid
                .node_at(p)
                .ok_or_else(|| Error::Parse(format!("field CSV row {}: ({}, {}) is not a grid node", line + 1, p[0], p[1])))?;
            values[k] = num(2)?;
            seen[k] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            let p = grid.node(k);
            return Err(Error::Parse(format!("field CSV misses grid node ({}, {})", p[0], p[1])));
        }
        Self::new(grid, values, dirichlet)
    }
}

/// Nodal gradients with bilinear interpolation between nodes.
#[derive(Clone, Debug)]
pub struct VectorField {
    grid: Arc<Grid>,
    values: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl VectorField {
    pub fn values(&self) -> &[[f64; 2]] {
        &self.values
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Bilinear interpolation over the valid corners of the containing cell.
    pub fn eval(&self, p: Point) -> [f64; 2] {
        let mut acc = [0.0, 0.0];
        let mut wsum = 0.0;
        for (k, w) in self.grid.bilinear_stencil(p) {
            if self.valid[k] && w > 0.0 {
                acc[0] += w * self.values[k][0];
                acc[1] += w * self.values[k][1];
                wsum += w;
            }
        }
        if wsum > 0.0 {
            [acc[0] / wsum, acc[1] / wsum]
        } else {
            let k = self.grid.nearest_node(p);
            self.values[k]
        }
    }
}

/// Finite differences of a nodal field.
///
/// Central differences where both axis neighbours carry valid data, one-sided
/// (second order when possible) next to the boundary. For Dirichlet fields only
/// interior nodes and nodes on the boundary count as valid.
pub fn gradient_field(f: &ScalarField) -> VectorField {
    let grid = f.grid.clone();
    let (nx, ny) = grid.shape();
    let h = grid.h();
    let domain = grid.domain();
    let valid: Vec<bool> = (0..grid.len())
        .map(|k| !f.dirichlet || grid.is_interior(k) || domain.contains_closed(grid.node(k)))
        .collect();
    let v = &f.values;
    let diff = |k: usize, minus: Option<usize>, minus2: Option<usize>, plus: Option<usize>, plus2: Option<usize>| -> f64 {
        let ok = |o: Option<usize>| o.filter(|&i| valid[i]);
        match (ok(minus), ok(plus)) {
            (Some(m), Some(p)) => (v[p] - v[m]) / (2.0 * h),
            (None, Some(p)) => match ok(plus2) {
                Some(p2) => (-3.0 * v[k] + 4.0 * v[p] - v[p2]) / (2.0 * h),
                None => (v[p] - v[k]) / h,
            },
            (Some(m), None) => match ok(minus2) {
                Some(m2) => (3.0 * v[k] - 4.0 * v[m] + v[m2]) / (2.0 * h),
                None => (v[k] - v[m]) / h,
            },
            (None, None) => 0.0,
        }
    };
    let mut values = vec![[0.0, 0.0]; grid.len()];
    for k in 0..grid.len() {
        if !valid[k] {
            continue;
        }
        let (ix, iy) = grid.coords(k);
        let gx = diff(
            k,
            (ix >= 1).then(|| k - 1),
            (ix >= 2).then(|| k - 2),
            (ix + 1 < nx).then(|| k + 1),
            (ix + 2 < nx).then(|| k + 2),
        );
        let gy = diff(
            k,
            (iy >= 1).then(|| k - nx),
            (iy >= 2).then(|| k - 2 * nx),
            (iy + 1 < ny).then(|| k + nx),
            (iy + 2 < ny).then(|| k + 2 * nx),
        );
        values[k] = [gx, gy];
    }
    VectorField { grid, values, valid }
}

/// Green function of the unit disk with homogeneous Dirichlet data,
/// `G(x, ξ) = (1/2π) ln(‖x − ξ*‖‖ξ‖ / ‖x − ξ‖)` with `ξ* = ξ/‖ξ‖²`.
///
/// Distances below `clamp_radius·e^{-1/2}` are replaced by that value, so at
/// `x = ξ` the result is the potential at the center of a uniformly charged
/// disk of radius `clamp_radius`. The clamped distance never exceeds the
/// image distance, which keeps `G ≥ 0` for sources close to the boundary.
pub fn green_disk(x: Point, xi: Point, clamp_radius: f64) -> f64 {
    let r = norm(xi);
    let image = if r == 0.0 {
        1.0
    } else {
        // ‖x − ξ*‖·‖ξ‖ = ‖ |ξ| x − ξ/|ξ| ‖
        ((r * x[0] - xi[0] / r).powi(2) + (r * x[1] - xi[1] / r).powi(2)).sqrt()
    };
    let d = dist(x, xi).max(clamp_radius * (-0.5f64).exp()).min(image);
    (image / d).ln() / (2.0 * PI)
}

/// Compressed 5-point operator on the interior nodes.
#[derive(Debug)]
struct FivePoint {
    /// grid index of each unknown
    nodes: Vec<usize>,
    /// unknown index of each grid node, `usize::MAX` for Dirichlet nodes
    slot: Vec<usize>,
    /// unknown indices of the interior neighbours
    nbrs: Vec<[u32; 4]>,
}

const NONE: u32 = u32::MAX;

impl FivePoint {
    fn new(grid: &Grid) -> Self {
        let nodes: Vec<usize> = (0..grid.len()).filter(|&k| grid.is_interior(k)).collect();
        let mut slot = vec![usize::MAX; grid.len()];
        for (i, &k) in nodes.iter().enumerate() {
            slot[k] = i;
        }
        let nbrs = nodes
            .iter()
            .map(|&k| {
                let mut out = [NONE; 4];
                for (o, nb) in out.iter_mut().zip(grid.neighbors(k)) {
                    if slot[nb] != usize::MAX {
                        *o = slot[nb] as u32;
                    }
                }
                out
            })
            .collect();
        Self { nodes, slot, nbrs }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 4.0 * x[i];
            for &j in &self.nbrs[i] {
                if j != NONE {
                    s -= x[j as usize];
                }
            }
            *o = s;
        }
    }

    /// Conjugate gradients for `K x = b` (unknown-indexed vectors).
    fn solve(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let max_iter = 10 * n.max(1);
        for _ in 0..max_iter {
            if rr.sqrt() <= tol * bnorm {
                return Ok(x);
            }
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            let step = rr / pap;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        if rr.sqrt() <= tol * bnorm {
            Ok(x)
        } else {
            Err(Error::Convergence { iterations: max_iter, residual: rr.sqrt() / bnorm })
        }
    }
}

/// Solution operator `S = (−Δ)^{-1}` with homogeneous Dirichlet conditions.
#[derive(Clone, Debug)]
pub enum PoissonBackend {
    /// 5-point finite differences on a grid, conjugate gradient solves.
    FdGrid { grid: Arc<Grid>, op: Arc<FivePointHandle> },
    /// Closed-form disk Green function, evaluated at the nodes of a quadrature grid.
    GreenDisk { grid: Arc<Grid> },
}

/// Opaque shared operator data of the finite-difference backend.
#[derive(Debug)]
pub struct FivePointHandle(FivePoint);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    FdGrid,
    GreenDisk,
}

impl PoissonBackend {
    pub fn fd_grid(grid: Arc<Grid>) -> Self {
        let op = Arc::new(FivePointHandle(FivePoint::new(&grid)));
        PoissonBackend::FdGrid { grid, op }
    }

    pub fn green_disk(grid: Arc<Grid>) -> Result<Self> {
        if grid.domain() != Domain::UnitDisk {
            return Err(Error::InvalidParameter("the Green backend is only available on the unit disk".into()));
        }
        Ok(PoissonBackend::GreenDisk { grid })
    }

    pub fn new(kind: BackendKind, grid: Arc<Grid>) -> Result<Self> {
        match kind {
            BackendKind::FdGrid => Ok(Self::fd_grid(grid)),
            BackendKind::GreenDisk => Self::green_disk(grid),
        }
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            PoissonBackend::FdGrid { .. } => BackendKind::FdGrid,
            PoissonBackend::GreenDisk { .. } => BackendKind::GreenDisk,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        match self {
            PoissonBackend::FdGrid { grid, .. } | PoissonBackend::GreenDisk { grid } => grid,
        }
    }

    fn clamp_radius(&self) -> f64 {
        0.5 * self.grid().h()
    }

    fn check_atoms(&self, points: &[Point]) -> Result<()> {
        let domain = self.grid().domain();
        for p in points {
            if !domain.contains_closed(*p) {
                return Err(Error::OutsideDomain(p[0], p[1]));
            }
        }
        Ok(())
    }

    /// State of the measure `Σ w_j δ_{ξ_j}` (weights may be signed).
    pub fn solve_state_atoms(&self, points: &[Point], weights: &[f64]) -> Result<ScalarField> {
        if points.len() != weights.len() {
            return Err(Error::Shape("points and weights differ in length".into()));
        }
        self.check_atoms(points)?;
        let grid = self.grid().clone();
        match self {
            PoissonBackend::FdGrid { op, .. } => {
                let op = &op.0;
                let mut b = vec![0.0; op.nodes.len()];
                for (p, &w) in points.iter().zip(weights) {
                    if w == 0.0 {
                        continue;
                    }
                    for (k, s) in grid.bilinear_stencil(*p) {
                        let i = op.slot[k];
                        if i != usize::MAX && s > 0.0 {
                            b[i] += w * s;
                        }
                    }
                }
                let x = op.solve(&b, CG_TOL)?;
                let mut values = vec![0.0; grid.len()];
                for (i, &k) in op.nodes.iter().enumerate() {
                    values[k] = x[i];
                }
                Ok(ScalarField { grid, values, dirichlet: true })
            }
            PoissonBackend::GreenDisk { .. } => {
                let rc = self.clamp_radius();
                let atoms: Vec<(Point, f64)> = points
                    .iter()
                    .zip(weights)
                    .filter(|(p, w)| **w != 0.0 && norm(**p) < 1.0 - GEOM_EPS)
                    .map(|(p, w)| (*p, *w))
                    .collect();
                let values = grid
                    .nodes()
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| {
                        if grid.is_interior(k) {
                            atoms.iter().map(|&(xi, w)| w * green_disk(x, xi, rc)).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Ok(ScalarField { grid, values, dirichlet: true })
            }
        }
    }

    pub fn solve_state(&self, u: &DiscreteMeasure) -> Result<ScalarField> {
        self.solve_state_atoms(u.points(), u.weights())
    }

    /// Homogeneous Dirichlet solution of `−Δp = rhs`.
    pub fn solve_adjoint(&self, rhs: &ScalarField) -> Result<ScalarField> {
        let grid = self.grid().clone();
        if !grid.same_as(&rhs.grid) {
            return Err(Error::Shape("adjoint right-hand side lives on a different grid".into()));
        }
        match self {
            PoissonBackend::FdGrid { op, .. } => {
                let op = &op.0;
                let q = grid.weights();
                let b: Vec<f64> = op.nodes.iter().map(|&k| q[k] * rhs.values[k]).collect();
                let x = op.solve(&b, CG_TOL)?;
                let mut values = vec![0.0; grid.len()];
                for (i, &k) in op.nodes.iter().enumerate() {
                    values[k] = x[i];
                }
                Ok(ScalarField { grid, values, dirichlet: true })
            }
            PoissonBackend::GreenDisk { .. } => {
                let sources = self.quadrature_sources(rhs);
                let rc = self.clamp_radius();
                let values = grid
                    .nodes()
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| {
                        if grid.is_interior(k) {
                            sources.iter().map(|&(xi, w)| w * green_disk(x, xi, rc)).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Ok(ScalarField { grid, values, dirichlet: true })
            }
        }
    }

    fn quadrature_sources(&self, rhs: &ScalarField) -> Vec<(Point, f64)> {
        let grid = self.grid();
        (0..grid.len())
            .filter(|&k| grid.is_interior(k) && rhs.values[k] != 0.0)
            .map(|k| (grid.node(k), grid.weights()[k] * rhs.values[k]))
            .collect()
    }

    /// Adjoint solution evaluated at arbitrary points: interpolated for the
    /// grid backend, evaluated in closed form for the Green backend.
    pub fn adjoint_at(&self, rhs: &ScalarField, points: &[Point]) -> Result<(ScalarField, Vec<f64>)> {
        let p = self.solve_adjoint(rhs)?;
        let at = match self {
            PoissonBackend::FdGrid { .. } => points.iter().map(|&x| p.eval(x)).collect(),
            PoissonBackend::GreenDisk { .. } => {
                let sources = self.quadrature_sources(rhs);
                let rc = self.clamp_radius();
                points
                    .iter()
                    .map(|&x| {
                        if norm(x) >= 1.0 - GEOM_EPS {
                            0.0
                        } else {
                            sources.iter().map(|&(xi, w)| w * green_disk(x, xi, rc)).sum()
                        }
                    })
                    .collect()
            }
        };
        Ok((p, at))
    }

    /// Discrete `−Δ` in strong form, `M⁻¹K f`, at the interior nodes (zero
    /// elsewhere). Only the grid backend has an assembled operator.
    pub fn apply_laplacian(&self, f: &ScalarField) -> Result<ScalarField> {
        let grid = self.grid().clone();
        if !grid.same_as(&f.grid) {
            return Err(Error::Shape("field lives on a different grid".into()));
        }
        let PoissonBackend::FdGrid { op, .. } = self else {
            return Err(Error::InvalidParameter("the Green backend has no assembled operator".into()));
        };
        let op = &op.0;
        let x: Vec<f64> = op.nodes.iter().map(|&k| f.values[k]).collect();
        let mut kx = vec![0.0; x.len()];
        op.apply(&x, &mut kx);
        let mut values = vec![0.0; grid.len()];
        let q = grid.weights();
        for (i, &k) in op.nodes.iter().enumerate() {
            // boundary neighbours carry the field's own values
            let mut s = kx[i];
            for nb in grid.neighbors(k) {
                if op.slot[nb] == usize::MAX {
                    s -= f.values[nb];
                }
            }
            values[k] = s / q[k];
        }
        Ok(ScalarField { grid, values, dirichlet: false })
    }

    /// Pointwise Green potential `Σ w_j G(x, ξ_j)`; `+∞` at an atom.
    pub fn green_potential(&self, mu: &DiscreteMeasure, x: Point) -> Result<f64> {
        if !self.grid().domain().contains_open(x) {
            return Err(Error::OutsideDomain(x[0], x[1]));
        }
        if mu.iter().any(|(p, w)| w != 0.0 && dist(p, x) <= GEOM_EPS) {
            return Ok(f64::INFINITY);
        }
        match self {
            PoissonBackend::FdGrid { .. } => Ok(self.solve_state(mu)?.eval(x)),
            PoissonBackend::GreenDisk { .. } => {
                self.check_atoms(mu.points())?;
                Ok(mu
                    .iter()
                    .filter(|(p, _)| norm(*p) < 1.0 - GEOM_EPS)
                    .map(|(p, w)| w * green_disk(x, p, 0.0))
                    .sum())
            }
        }
    }
}
