//! Finite atomic measures on the plane.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, Grid, Point};

/// Atoms closer than this are merged.
pub const MERGE_TOL: f64 = 1e-12;

/// Atoms `(point, weight)` with pairwise distinct points.
///
/// Weights are nonnegative unless the measure was built with
/// [`DiscreteMeasure::new_signed`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| **w < 0.0) {
            return Err(Error::InvalidParameter(format!("negative atom weight {w}")));
        }
        Self::new_signed(points, weights)
    }

    /// Like [`DiscreteMeasure::new`] but allows negative weights.
    pub fn new_signed(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::Shape(format!("{} points but {} weights", points.len(), weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) || points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidParameter("non-finite atom".into()));
        }
        Ok(merge_atoms(points, weights))
    }

    pub fn dirac(point: Point, weight: f64) -> Result<Self> {
        Self::new(vec![point], vec![weight])
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.weights.iter().all(|w| *w >= 0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Point, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { points: self.points.clone(), weights: self.weights.iter().map(|w| w * factor).collect() }
    }

    /// Mass carried by atoms within `radius` of `center`.
    pub fn ball_mass(&self, center: Point, radius: f64) -> f64 {
        self.iter().filter(|(p, _)| dist(*p, center) <= radius).map(|(_, w)| w).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y", "w"])?;
        for (p, m) in self.iter() {
            w.write_record([fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(m)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `x,y,w` CSV format. Negative weights are rejected.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["x", "y", "w"] {
            return Err(Error::Parse(format!("measure CSV header must be \"x,y,w\", found {:?}", header)));
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse(format!("measure CSV row {}: column {i} is not a number", line + 1)))
            };
            let (x, y, w) = (field(0)?, field(1)?, field(2)?);
            if w < 0.0 {
                return Err(Error::Parse(format!(
                    "measure CSV row {}: weight {w} is negative (measures must be nonnegative)",
                    line + 1
                )));
            }
            points.push([x, y]);
            weights.push(w);
        }
        Self::new(points, weights)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Shortest round-trip representation, used by all CSV writers.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn merge_atoms(points: Vec<Point>, weights: Vec<f64>) -> DiscreteMeasure {
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(points[a][1].total_cmp(&points[b][1])));
    // group[i] = smallest input index of the cluster containing atom i
    let mut group = vec![usize::MAX; n];
    for (pos, &a) in order.iter().enumerate() {
        if group[a] != usize::MAX {
            continue;
        }
        let mut members = vec![a];
        for &b in &order[pos + 1..] {
            if points[b][0] - points[a][0] > MERGE_TOL {
                break;
            }
            if group[b] == usize::MAX && dist(points[a], points[b]) <= MERGE_TOL {
                members.push(b);
            }
        }
        let rep = *members.iter().min().unwrap();
        for m in members {
            group[m] = rep;
        }
    }
    let mut slot = vec![usize::MAX; n];
    let mut out_p = Vec::new();
    let mut out_w: Vec<f64> = Vec::new();
    for i in 0..n {
        let r = group[i];
        if slot[r] == usize::MAX {
            slot[r] = out_p.len();
            out_p.push(points[r]);
            out_w.push(0.0);
        }
        out_w[slot[r]] += weights[i];
    }
    DiscreteMeasure { points: out_p, weights: out_w }
}

/// Image measure `T#mu`: each atom moves to `map(point)`, coinciding images merge.
pub fn pushforward<F: Fn(Point) -> Point>(map: F, mu: &DiscreteMeasure) -> DiscreteMeasure {
    let points = mu.points.iter().map(|&p| map(p)).collect();
    merge_atoms(points, mu.weights.clone())
}

/// Atoms carrying more than `mass_tol * total_mass`.
pub fn support(mu: &DiscreteMeasure, mass_tol: f64) -> Vec<Point> {
    let thresh = mass_tol * mu.total_mass();
    mu.iter().filter(|(_, w)| *w > thresh).map(|(p, _)| p).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AtomReport {
    /// Largest mass found in a ball of radius `2h` at each level.
    pub max_ball_mass: Vec<f64>,
    /// Ratio between consecutive levels.
    pub ratios: Vec<f64>,
    pub atomic: bool,
}

/// Non-decaying ball mass under refinement is the discrete stand-in for an atom.
///
/// `levels[k]` is the measure computed at spacing `spacings[k]`. The measure
/// sequence is flagged atomic when every consecutive ratio of the maximal
/// `2h`-ball mass exceeds 0.8.
pub fn detect_atoms(levels: &[DiscreteMeasure], spacings: &[f64]) -> Result<AtomReport> {
    if levels.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 refinement levels, got {}", levels.len())));
    }
    if levels.len() != spacings.len() {
        return Err(Error::Shape("one spacing per refinement level required".into()));
    }
    let max_ball_mass: Vec<f64> = levels
        .iter()
        .zip(spacings)
        .map(|(mu, &h)| max_ball_mass(mu, 2.0 * h))
        .collect();
    let ratios: Vec<f64> = max_ball_mass
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    let atomic = ratios.iter().all(|&r| r > 0.8);
    Ok(AtomReport { max_ball_mass, ratios, atomic })
}

fn max_ball_mass(mu: &DiscreteMeasure, radius: f64) -> f64 {
    if mu.is_empty() {
        return 0.0;
    }
    // bucket atoms so that each query only touches neighbouring buckets
    let cell = radius.max(1e-9);
    let key = |p: Point| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (i, &p) in mu.points.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let mut best = 0.0f64;
    for &c in &mu.points {
        let (kx, ky) = key(c);
        let mut m = 0.0;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = buckets.get(&(kx + dx, ky + dy)) {
                    for &j in ids {
                        if dist(mu.points[j], c) <= radius {
                            m += mu.weights[j];
                        }
                    }
                }
            }
        }
        best = best.max(m);
    }
    best
}

/// Piecewise-constant density on the Voronoi cells of a grid.
#[derive(Clone, Debug)]
pub struct DensityEstimate {
    grid: Grid,
    values: Vec<f64>,
    norm_inf: f64,
}

impl DensityEstimate {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_inf(&self) -> f64 {
        self.norm_inf
    }

    /// Density at an arbitrary point (value of the nearest node, 0 outside the box).
    pub fn eval(&self, p: Point) -> f64 {
        let (nx, ny) = self.grid.shape();
        let h = self.grid.h();
        let lo = self.grid.node(0);
        let fx = (p[0] - lo[0]) / h;
        let fy = (p[1] - lo[1]) / h;
        if fx < -0.5 || fy < -0.5 || fx > nx as f64 - 0.5 || fy > ny as f64 - 0.5 {
            return 0.0;
        }
        self.values[self.grid.nearest_node(p)]
    }

    /// Quadrature integral of the density.
    pub fn integral(&self) -> f64 {
        self.values.iter().zip(self.grid.weights()).map(|(v, w)| v * w).sum()
    }

    /// Builds an estimate from given nodal values (e.g. a known prior density).
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!("{} density values for {} nodes", values.len(), grid.len())));
        }
        if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter("density values must be finite and nonnegative".into()));
        }
        let norm_inf = values.iter().fold(0.0f64, |a, &b| a.max(b));
        Ok(Self { grid, values, norm_inf })
    }
}

/// Histogram density: mass in each node's Voronoi cell over the cell's area
/// inside the domain. Atoms whose nearest node has zero cell area are ignored.
pub fn estimate_density(mu: &DiscreteMeasure, grid: &Grid) -> DensityEstimate {
    let mut mass = vec![0.0; grid.len()];
    for (p, w) in mu.iter() {
        mass[grid.nearest_node(p)] += w;
    }
    let values: Vec<f64> = mass
        .iter()
        .zip(grid.weights())
        .map(|(&m, &a)| if a > 0.0 { m / a } else { 0.0 })
        .collect();
    let norm_inf = values.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    DensityEstimate { grid: grid.clone(), values, norm_inf }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, Domain};
    use proptest::prelude::*;

    fn mu2() -> DiscreteMeasure {
        DiscreteMeasure::new(vec![[0.0, 0.0], [1.0, 0.0]], vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn rejects_negative_weights() {
        assert!(DiscreteMeasure::new(vec![[0.0, 0.0]], vec![-1.0]).is_err());
        assert!(DiscreteMeasure::new_signed(vec![[0.0, 0.0]], vec![-1.0]).is_ok());
    }

    #[test]
    fn merges_close_atoms() {
        let mu = DiscreteMeasure::new(vec![[0.5, 0.5], [0.1, 0.2], [0.5, 0.5 + 1e-13]], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(mu.len(), 2);
        assert_eq!(mu.points()[0], [0.5, 0.5]);
        assert_eq!(mu.weights(), &[4.0, 2.0]);
    }

    #[test]
    fn pushforward_identity() {
        assert_eq!(pushforward(|p| p, &mu2()), mu2());
    }

    #[test]
    fn pushforward_constant_merges() {
        let img = pushforward(|_| [0.3, 0.3], &mu2());
        assert_eq!(img.points(), &[[0.3, 0.3]]);
        assert_eq!(img.weights(), &[3.0]);
    }

    #[test]
    fn pushforward_scaling() {
        let img = pushforward(|p| [2.0 * p[0], 2.0 * p[1]], &mu2());
        assert_eq!(img.points(), &[[0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(img.weights(), &[1.0, 2.0]);
    }

    #[test]
    fn support_thresholds() {
        let mu = DiscreteMeasure::dirac([0.2, 0.1], 1.0).unwrap();
        assert_eq!(support(&mu, 0.0), vec![[0.2, 0.1]]);
        let mu = DiscreteMeasure::new(vec![[0.0, 0.0], [1.0, 1.0]], vec![1.0, 1e-15]).unwrap();
        assert_eq!(support(&mu, 1e-10), vec![[0.0, 0.0]]);
    }

    #[test]
    fn detect_atoms_needs_two_levels() {
        assert!(matches!(detect_atoms(&[mu2()], &[0.1]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn dirac_sequence_is_atomic() {
        let d = DiscreteMeasure::dirac([0.5, 0.5], 1.0).unwrap();
        let rep = detect_atoms(&[d.clone(), d.clone(), d], &[0.1, 0.05, 0.025]).unwrap();
        assert!(rep.atomic);
        assert!(rep.max_ball_mass.iter().all(|&m| m == 1.0));
    }

    fn uniform_square(h: f64) -> DiscreteMeasure {
        let n = (1.0 / h).round() as usize;
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
            }
        }
        let w = 1.0 / pts.len() as f64;
        let len = pts.len();
        DiscreteMeasure::new(pts, vec![w; len]).unwrap()
    }

    fn ring(h: f64, radius: f64, mass: f64) -> DiscreteMeasure {
        let n = (2.0 * std::f64::consts::PI * radius / h).ceil() as usize;
        let pts = (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [radius * t.cos(), radius * t.sin()]
            })
            .collect();
        DiscreteMeasure::new(pts, vec![mass / n as f64; n]).unwrap()
    }

    #[test]
    fn uniform_sequence_is_not_atomic() {
        let hs = [0.1, 0.05, 0.025];
        let levels: Vec<_> = hs.iter().map(|&h| uniform_square(h)).collect();
        let rep = detect_atoms(&levels, &hs).unwrap();
        assert!(!rep.atomic);
        for r in &rep.ratios {
            assert!(*r < 0.4, "ball mass should decay like h^2: {r}");
        }
    }

    #[test]
    fn ring_sequence_is_not_atomic() {
        // arc of length 4h on a circle of radius 1/2 carries mass (3pi/4) * 4h / pi
        let hs = [0.04, 0.02, 0.01];
        let levels: Vec<_> = hs.iter().map(|&h| ring(h, 0.5, 0.75 * std::f64::consts::PI)).collect();
        let rep = detect_atoms(&levels, &hs).unwrap();
        assert!(!rep.atomic);
        for (m, h) in rep.max_ball_mass.iter().zip(hs) {
            let analytic = 0.75 * std::f64::consts::PI * (4.0 * h) / std::f64::consts::PI;
            assert!((m - analytic).abs() <= 0.25 * analytic, "{m} vs {analytic}");
        }
    }

    #[test]
    fn density_of_dirac() {
        let g = build_grid(Domain::UnitSquare, 0.1).unwrap();
        let d = estimate_density(&DiscreteMeasure::dirac([0.52, 0.31], 2.0).unwrap(), &g);
        let k = g.nearest_node([0.52, 0.31]);
        assert!((d.values()[k] - 2.0 / 0.01).abs() < 1e-9);
        assert!((d.integral() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn density_of_uniform_measure() {
        let g = build_grid(Domain::UnitSquare, 0.1).unwrap();
        let d = estimate_density(&uniform_square(0.025), &g);
        for k in (0..g.len()).filter(|&k| g.is_interior(k)) {
            assert!((d.values()[k] - 1.0).abs() < 1e-9);
        }
        assert!((d.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let mut buf = Vec::new();
        mu2().write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("x,y,w\n"));
        assert_eq!(DiscreteMeasure::read_csv(&buf[..]).unwrap(), mu2());
        let bad = "x,y,w\n0.1,0.2,-1\n";
        let err = DiscreteMeasure::read_csv(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("negative"));
    }

    fn arb_measure() -> impl Strategy<Value = DiscreteMeasure> {
        prop::collection::vec(((0.0f64..1.0, 0.0f64..1.0), 0.0f64..5.0), 1..30).prop_map(|atoms| {
            let (pts, ws): (Vec<_>, Vec<_>) = atoms.into_iter().map(|((x, y), w)| ([x, y], w)).unzip();
            DiscreteMeasure::new(pts, ws).unwrap()
        })
    }

    proptest! {
        #[test]
        fn pushforward_preserves_mass(mu in arb_measure(), a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let img = pushforward(|p| [a * p[0] + b * p[1], (p[0] * 7.0).floor() / 7.0], &mu);
            prop_assert!((img.total_mass() - mu.total_mass()).abs() <= 1e-12 * mu.total_mass().max(1.0));
        }

        #[test]
        fn support_commutes_with_injective_maps(mu in arb_measure(), tx in -1.0f64..1.0, ty in -1.0f64..1.0) {
            let t = |p: Point| [p[0] + tx, 2.0 * p[1] + ty];
            let mut lhs = support(&pushforward(t, &mu), 0.01);
            let mut rhs: Vec<Point> = support(&mu, 0.01).into_iter().map(t).collect();
            let key = |p: &Point| (p[0].to_bits(), p[1].to_bits());
            lhs.sort_by_key(key);
            rhs.sort_by_key(key);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn density_integral_reproduces_mass(mu in arb_measure()) {
            let g = build_grid(Domain::UnitSquare, 0.1).unwrap();
            let d = estimate_density(&mu, &g);
            prop_assert!((d.integral() - mu.total_mass()).abs() <= 1e-12 * mu.total_mass().max(1.0));
        }
    }
}
