//! Domains, uniform lattices and candidate point sets.
//!
//! Every grid used by the solver is a uniform lattice over the bounding box
//! of the domain. Nodes strictly inside the domain carry unknowns, all other
//! nodes are Dirichlet nodes. Quadrature weights are the area of the node's
//! lattice cell clipped to the domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Tolerance used for closed-set membership tests.
pub const GEOM_EPS: f64 = 1e-12;

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// `[0, 1]^2`
    UnitSquare,
    /// The open unit ball centered at the origin.
    UnitDisk,
}

impl Domain {
    pub fn bounding_box(&self) -> (Point, Point) {
        match self {
            Domain::UnitSquare => ([0.0, 0.0], [1.0, 1.0]),
            Domain::UnitDisk => ([-1.0, -1.0], [1.0, 1.0]),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Domain::UnitSquare => 1.0,
            Domain::UnitDisk => std::f64::consts::PI,
        }
    }

    pub fn perimeter(&self) -> f64 {
        match self {
            Domain::UnitSquare => 4.0,
            Domain::UnitDisk => 2.0 * std::f64::consts::PI,
        }
    }

    pub fn contains_closed(&self, p: Point) -> bool {
        match self {
            Domain::UnitSquare => {
                p[0] >= -GEOM_EPS && p[0] <= 1.0 + GEOM_EPS && p[1] >= -GEOM_EPS && p[1] <= 1.0 + GEOM_EPS
            }
            Domain::UnitDisk => norm(p) <= 1.0 + GEOM_EPS,
        }
    }

    pub fn contains_open(&self, p: Point) -> bool {
        match self {
            Domain::UnitSquare => {
                p[0] > GEOM_EPS && p[0] < 1.0 - GEOM_EPS && p[1] > GEOM_EPS && p[1] < 1.0 - GEOM_EPS
            }
            Domain::UnitDisk => norm(p) < 1.0 - GEOM_EPS,
        }
    }

    /// Distance from `p` to the boundary; negative outside.
    pub fn signed_boundary_distance(&self, p: Point) -> f64 {
        match self {
            Domain::UnitSquare => {
                let inside = p[0].min(1.0 - p[0]).min(p[1]).min(1.0 - p[1]);
                if inside >= 0.0 {
                    inside
                } else {
                    let dx = (-p[0]).max(p[0] - 1.0).max(0.0);
                    let dy = (-p[1]).max(p[1] - 1.0).max(0.0);
                    -dx.hypot(dy)
                }
            }
            Domain::UnitDisk => 1.0 - norm(p),
        }
    }

    /// Area of the axis-aligned cell `[lo, hi]` inside the domain.
    fn clipped_cell_area(&self, lo: Point, hi: Point) -> f64 {
        match self {
            Domain::UnitSquare => {
                let wx = (hi[0].min(1.0) - lo[0].max(0.0)).max(0.0);
                let wy = (hi[1].min(1.0) - lo[1].max(0.0)).max(0.0);
                wx * wy
            }
            Domain::UnitDisk => {
                let far = [lo[0].abs().max(hi[0].abs()), lo[1].abs().max(hi[1].abs())];
                let cell = (hi[0] - lo[0]) * (hi[1] - lo[1]);
                if norm(far) <= 1.0 {
                    return cell;
                }
                // 4x4 midpoint subsampling of the cut cell
                const SUB: usize = 4;
                let sx = (hi[0] - lo[0]) / SUB as f64;
                let sy = (hi[1] - lo[1]) / SUB as f64;
                let mut inside = 0usize;
                for a in 0..SUB {
                    for b in 0..SUB {
                        let q = [lo[0] + (a as f64 + 0.5) * sx, lo[1] + (b as f64 + 0.5) * sy];
                        if norm(q) <= 1.0 {
                            inside += 1;
                        }
                    }
                }
                cell * inside as f64 / (SUB * SUB) as f64
            }
        }
    }
}

/// Uniform lattice over the bounding box of a domain.
#[derive(Clone, Debug)]
pub struct Grid {
    domain: Domain,
    h: f64,
    origin: Point,
    nx: usize,
    ny: usize,
    nodes: Vec<Point>,
    interior: Vec<bool>,
    weights: Vec<f64>,
}

fn lattice_count(width: f64, h: f64) -> usize {
    let cells = width / h;
    let rounded = cells.round();
    let cells = if (cells - rounded).abs() < 1e-9 { rounded } else { cells.ceil() };
    cells as usize + 1
}

/// Uniform grid of spacing `h` covering the bounding box of `domain`.
///
/// Accepts `0 < h <= 1/2`.
pub fn build_grid(domain: Domain, h: f64) -> Result<Grid> {
    if !(h > 0.0 && h <= 0.5) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("grid spacing h = {h} must lie in (0, 1/2]")));
    }
    let (lo, hi) = domain.bounding_box();
    let nx = lattice_count(hi[0] - lo[0], h);
    let ny = lattice_count(hi[1] - lo[1], h);
    let mut nodes = Vec::with_capacity(nx * ny);
    let mut interior = Vec::with_capacity(nx * ny);
    let mut weights = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let p = [lo[0] + ix as f64 * h, lo[1] + iy as f64 * h];
            nodes.push(p);
            interior.push(domain.contains_open(p));
            let w = if domain.contains_closed(p) {
                domain.clipped_cell_area([p[0] - 0.5 * h, p[1] - 0.5 * h], [p[0] + 0.5 * h, p[1] + 0.5 * h])
            } else {
                0.0
            };
            weights.push(w);
        }
    }
    Ok(Grid { domain, h, origin: lo, nx, ny, nodes, interior, weights })
}

impl Grid {
    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> Point {
        self.nodes[k]
    }

    pub fn interior(&self) -> &[bool] {
        &self.interior
    }

    pub fn is_interior(&self, k: usize) -> bool {
        self.interior[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    /// Same lattice and domain.
    pub fn same_as(&self, other: &Grid) -> bool {
        self.domain == other.domain && self.nx == other.nx && self.ny == other.ny && self.h == other.h
    }

    /// Index of the nearest lattice node (clamped to the index range).
    pub fn nearest_node(&self, p: Point) -> usize {
        let ix = ((p[0] - self.origin[0]) / self.h).round().clamp(0.0, (self.nx - 1) as f64) as usize;
        let iy = ((p[1] - self.origin[1]) / self.h).round().clamp(0.0, (self.ny - 1) as f64) as usize;
        self.index(ix, iy)
    }

    /// Lattice node coinciding with `p` up to `GEOM_EPS`, if any.
    pub fn node_at(&self, p: Point) -> Option<usize> {
        let k = self.nearest_node(p);
        (dist(self.nodes[k], p) <= GEOM_EPS.max(1e-9 * self.h)).then_some(k)
    }

    /// Bilinear stencil of the cell containing `p`: four `(node, weight)` pairs.
    ///
    /// Points outside the bounding box are clamped onto it.
    pub fn bilinear_stencil(&self, p: Point) -> [(usize, f64); 4] {
        let fx = ((p[0] - self.origin[0]) / self.h).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((p[1] - self.origin[1]) / self.h).clamp(0.0, (self.ny - 1) as f64);
        let ix = (fx.floor() as usize).min(self.nx - 2);
        let iy = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        [
            (self.index(ix, iy), (1.0 - tx) * (1.0 - ty)),
            (self.index(ix + 1, iy), tx * (1.0 - ty)),
            (self.index(ix, iy + 1), (1.0 - tx) * ty),
            (self.index(ix + 1, iy + 1), tx * ty),
        ]
    }

    /// 5-point neighbors of node `k` that exist in the index range.
    pub fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        let (ix, iy) = self.coords(k);
        let cands = [
            (ix > 0).then(|| k - 1),
            (ix + 1 < self.nx).then(|| k + 1),
            (iy > 0).then(|| k - self.nx),
            (iy + 1 < self.ny).then(|| k + self.nx),
        ];
        cands.into_iter().flatten()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "region", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Full,
    Annulus { r1: f64, r2: f64 },
    /// Axis-aligned box `[min, max]`.
    Box { min: Point, max: Point },
}

impl Region {
    pub fn contains(&self, p: Point) -> bool {
        match *self {
            Region::Full => true,
            Region::Annulus { r1, r2 } => {
                let r = norm(p);
                r >= r1 - GEOM_EPS && r <= r2 + GEOM_EPS
            }
            Region::Box { min, max } => {
                p[0] >= min[0] - GEOM_EPS
                    && p[0] <= max[0] + GEOM_EPS
                    && p[1] >= min[1] - GEOM_EPS
                    && p[1] <= max[1] + GEOM_EPS
            }
        }
    }
}

/// Lattice points of spacing `h` (aligned with [`build_grid`]) inside the
/// closed domain and the region, sorted lexicographically.
pub fn candidate_points(domain: Domain, region: Region, h: f64) -> Result<Vec<Point>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("spacing h = {h} must be positive")));
    }
    if let Region::Annulus { r1, r2 } = region {
        if !(0.0..=r2).contains(&r1) {
            return Err(Error::InvalidParameter(format!("annulus radii ({r1}, {r2}) not ordered")));
        }
    }
    let (lo, hi) = domain.bounding_box();
    let nx = lattice_count(hi[0] - lo[0], h);
    let ny = lattice_count(hi[1] - lo[1], h);
    let mut pts = Vec::new();
    for ix in 0..nx {
        for iy in 0..ny {
            let p = [lo[0] + ix as f64 * h, lo[1] + iy as f64 * h];
            if domain.contains_closed(p) && region.contains(p) {
                pts.push(p);
            }
        }
    }
    if pts.is_empty() {
        return Err(Error::EmptySet(format!("no lattice point of spacing {h} inside {region:?}")));
    }
    // ix-major traversal already yields lexicographic (x, y) order
    debug_assert!(pts.windows(2).all(|w| (w[0][0], w[0][1]) < (w[1][0], w[1][1])));
    Ok(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn square_half_spacing_has_one_interior_node() {
        let g = build_grid(Domain::UnitSquare, 0.5).unwrap();
        assert_eq!(g.shape(), (3, 3));
        let interior: Vec<_> = (0..g.len()).filter(|&k| g.is_interior(k)).map(|k| g.node(k)).collect();
        assert_eq!(interior, vec![[0.5, 0.5]]);
    }

    #[test]
    fn square_weights_sum_exactly() {
        let g = build_grid(Domain::UnitSquare, 0.25).unwrap();
        assert_eq!(g.total_weight(), 1.0);
        assert!(g.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn disk_weights_approximate_area() {
        let h = 0.05;
        let g = build_grid(Domain::UnitDisk, h).unwrap();
        assert!((g.total_weight() - PI).abs() <= 2.0 * h * 2.0 * PI);
    }

    #[test]
    fn disk_area_error_decays_under_refinement() {
        let e1 = (build_grid(Domain::UnitDisk, 0.1).unwrap().total_weight() - PI).abs();
        let e2 = (build_grid(Domain::UnitDisk, 0.05).unwrap().total_weight() - PI).abs();
        assert!(e1 <= 2.0 * 0.1 * 2.0 * PI);
        assert!(e2 < 0.75 * e1, "e(h)={e1}, e(h/2)={e2}");
    }

    #[test]
    fn interior_nodes_have_full_stencil() {
        for (d, h) in [(Domain::UnitSquare, 0.1), (Domain::UnitDisk, 0.07)] {
            let g = build_grid(d, h).unwrap();
            for k in (0..g.len()).filter(|&k| g.is_interior(k)) {
                assert_eq!(g.neighbors(k).count(), 4);
            }
        }
    }

    #[test]
    fn rejects_bad_spacing() {
        assert!(matches!(build_grid(Domain::UnitSquare, 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_grid(Domain::UnitSquare, 0.7), Err(Error::InvalidParameter(_))));
        assert!(build_grid(Domain::UnitDisk, f64::NAN).is_err());
    }

    #[test]
    fn candidates_full_square() {
        let pts = candidate_points(Domain::UnitSquare, Region::Full, 0.5).unwrap();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], [0.0, 0.0]);
        assert_eq!(pts[1], [0.0, 0.5]);
    }

    #[test]
    fn candidates_annulus_membership() {
        let pts = candidate_points(Domain::UnitDisk, Region::Annulus { r1: 0.4, r2: 0.6 }, 0.05).unwrap();
        assert!(!pts.is_empty());
        assert!(pts.iter().all(|&p| (0.4 - 1e-12..=0.6 + 1e-12).contains(&norm(p))));
    }

    #[test]
    fn candidates_disk_count_matches_area() {
        let h = 0.1;
        let pts = candidate_points(Domain::UnitDisk, Region::Full, h).unwrap();
        let expect = PI / (h * h);
        assert!((pts.len() as f64 - expect).abs() <= 2.0 * PI / h, "{} vs {expect}", pts.len());
    }

    #[test]
    fn candidates_are_sorted_and_unique() {
        let pts = candidate_points(Domain::UnitDisk, Region::Full, 0.13).unwrap();
        for w in pts.windows(2) {
            assert!(w[0][0] < w[1][0] || (w[0][0] == w[1][0] && w[0][1] < w[1][1]));
        }
    }

    #[test]
    fn empty_region_is_an_error() {
        let r = Region::Box { min: [2.0, 2.0], max: [3.0, 3.0] };
        assert!(matches!(candidate_points(Domain::UnitSquare, r, 0.1), Err(Error::EmptySet(_))));
    }

    #[test]
    fn candidates_coincide_with_grid_nodes() {
        let g = build_grid(Domain::UnitDisk, 0.1).unwrap();
        for p in candidate_points(Domain::UnitDisk, Region::Full, 0.1).unwrap() {
            assert!(g.node_at(p).is_some());
        }
    }
}
