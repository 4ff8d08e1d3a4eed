//! Transportation simplex: northwest-corner start, MODI pricing, Bland's rule.

use std::collections::VecDeque;

use super::{CostMatrix, DualPotentials, TransportPlan, MASS_TOL};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ExactSolution {
    pub plan: TransportPlan,
    pub duals: DualPotentials,
    pub value: f64,
    pub dual_value: f64,
    pub pivots: usize,
}

struct Basis {
    m: usize,
    n: usize,
    // basic cells with their flows, kept unordered
    cells: Vec<(usize, usize, f64)>,
}

impl Basis {
    fn northwest_corner(mu: &[f64], nu: &[f64]) -> Self {
        let (m, n) = (mu.len(), nu.len());
        let mut a = mu.to_vec();
        let mut b = nu.to_vec();
        let mut cells = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            if i == m - 1 && j == n - 1 {
                cells.push((i, j, a[i].max(0.0)));
                break;
            }
            let q = a[i].min(b[j]);
            cells.push((i, j, q));
            a[i] -= q;
            b[j] -= q;
            if (a[i] <= b[j] && i < m - 1) || j == n - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { m, n, cells }
    }

    /// Adjacency over nodes `0..m` (rows) and `m..m+n` (columns); values are cell indices.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j, _)) in self.cells.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    fn potentials(&self, costs: &CostMatrix, adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let mut pot = vec![f64::NAN; m + n];
        let mut queue = VecDeque::new();
        pot[0] = 0.0;
        queue.push_back(0);
        while let Some(v) = queue.pop_front() {
            for &(w, k) in &adj[v] {
                if pot[w].is_nan() {
                    let (i, j, _) = self.cells[k];
                    pot[w] = costs.get(i, j) - pot[v];
                    queue.push_back(w);
                }
            }
        }
        (pot[..m].to_vec(), pot[m..].to_vec())
    }

    /// Cell indices on the tree path from column node `m+j` to row node `i`.
    fn path(&self, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
        let start = self.m + j;
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            if v == i {
                break;
            }
            for &(w, k) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    prev[w] = Some((v, k));
                    queue.push_back(w);
                }
            }
        }
        let mut out = Vec::new();
        let mut v = i;
        while let Some((u, k)) = prev[v] {
            out.push(k);
            v = u;
        }
        out.reverse();
        out
    }
}

/// Exact optimal transport between `mu` and `nu` by the transportation simplex.
///
/// `nu` is rescaled to the mass of `mu` after the relative mass check. Duals are
/// pinned by `phi[0] = 0`.
pub fn solve_kantorovich_exact(mu: &[f64], nu: &[f64], costs: &CostMatrix) -> Result<ExactSolution> {
    let (m, n) = (mu.len(), nu.len());
    if m != costs.rows() || n != costs.cols() {
        return Err(Error::Shape(format!("marginals {m}x{n} vs cost {}x{}", costs.rows(), costs.cols())));
    }
    if m == 0 || n == 0 {
        return Err(Error::EmptySet("transport between empty marginals".into()));
    }
    if mu.iter().chain(nu).any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter("marginals must be finite and nonnegative".into()));
    }
    let (ma, mb): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (ma - mb).abs() > MASS_TOL * ma.max(mb) {
        return Err(Error::Infeasible(format!("marginal masses differ: {ma} vs {mb}")));
    }
    let nu: Vec<f64> = if mb > 0.0 { nu.iter().map(|w| w * (ma / mb)).collect() } else { nu.to_vec() };

    let mut basis = Basis::northwest_corner(mu, &nu);
    let tol = 1e-12 * costs.max_abs().max(1e-300);
    let max_pivots = 50 * (m + n) * (m + n).max(100);
    let mut pivots = 0;
    let (phi, psi) = loop {
        let adj = basis.adjacency();
        let (phi, psi) = basis.potentials(costs, &adj);
        let entering = (0..m).find_map(|i| {
            let row = costs.row(i);
            (0..n).find(|&j| row[j] - phi[i] - psi[j] < -tol).map(|j| (i, j))
        });
        let Some((ei, ej)) = entering else { break (phi, psi) };
        if pivots >= max_pivots {
            let r = costs.get(ei, ej) - phi[ei] - psi[ej];
            return Err(Error::Convergence { iterations: pivots, residual: -r });
        }
        pivots += 1;

        let path = basis.path(&adj, ei, ej);
        // path cells alternate −,+,−,… starting next to the entering cell
        let minus: Vec<usize> = path.iter().step_by(2).copied().collect();
        let plus: Vec<usize> = path.iter().skip(1).step_by(2).copied().collect();
        let theta = minus.iter().map(|&k| basis.cells[k].2).fold(f64::INFINITY, f64::min);
        let leave = minus
            .iter()
            .copied()
            .filter(|&k| basis.cells[k].2 == theta)
            .min_by_key(|&k| (basis.cells[k].0, basis.cells[k].1))
            .expect("cycle has a decreasing cell");
        for &k in &minus {
            basis.cells[k].2 = (basis.cells[k].2 - theta).max(0.0);
        }
        for &k in &plus {
            basis.cells[k].2 += theta;
        }
        basis.cells[leave] = (ei, ej, theta);
    };

    let mut rows = vec![Vec::new(); m];
    for &(i, j, x) in &basis.cells {
        if x > 0.0 {
            rows[i].push((j, x));
        }
    }
    let plan = TransportPlan::from_rows(rows, n)?.with_row_marginal(mu.to_vec());
    let value = plan.cost(costs);
    let dual_value = mu.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>()
        + nu.iter().zip(&psi).map(|(a, b)| a * b).sum::<f64>();
    Ok(ExactSolution { plan, duals: DualPotentials { phi, psi }, value, dual_value, pivots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{cost_matrix, duality_gap, CostModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pair() {
        let c = cost_matrix(&CostModel::Metric, &[[0.0, 0.0]], &[[0.3, 0.4]]).unwrap();
        let s = solve_kantorovich_exact(&[1.0], &[1.0], &c).unwrap();
        assert!((s.value - 0.5).abs() < 1e-15);
        assert_eq!(s.plan.nnz(), 1);
    }

    #[test]
    fn identical_marginals_cost_nothing() {
        let pts = [[0.1, 0.1], [0.9, 0.2], [0.4, 0.7], [0.5, 0.5]];
        let c = cost_matrix(&CostModel::Metric, &pts, &pts).unwrap();
        let w = [0.3, 0.1, 0.4, 0.2];
        let s = solve_kantorovich_exact(&w, &w, &c).unwrap();
        assert!(s.value.abs() < 1e-15);
        for (i, j, _) in s.plan.entries() {
            assert_eq!(i, j);
        }
    }

    #[test]
    fn mass_mismatch_is_infeasible() {
        let c = cost_matrix(&CostModel::Metric, &[[0.0, 0.0]], &[[0.3, 0.4]]).unwrap();
        assert!(matches!(solve_kantorovich_exact(&[1.0], &[1.1], &c), Err(Error::Infeasible(_))));
    }

    #[test]
    fn strong_duality_support_and_marginals_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let m = rng.gen_range(1..25);
            let n = rng.gen_range(1..25);
            let x: Vec<_> = (0..m).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            let y: Vec<_> = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            // integer weights force degenerate pivots
            let mut mu: Vec<f64> = (0..m).map(|_| rng.gen_range(0..4) as f64).collect();
            mu[0] += 1.0;
            let total: f64 = mu.iter().sum();
            let mut nu = vec![0.0; n];
            for _ in 0..total as usize {
                nu[rng.gen_range(0..n)] += 1.0;
            }
            let model = if trial % 2 == 0 { CostModel::Metric } else { CostModel::Quadratic };
            let c = cost_matrix(&model, &x, &y).unwrap();
            let s = solve_kantorovich_exact(&mu, &nu, &c).unwrap();
            assert!((s.value - s.dual_value).abs() <= 1e-9 * (1.0 + s.value));
            assert!(s.plan.nnz() <= m + n - 1);
            assert!(s.duals.feasibility_residual(&c) <= 1e-12);
            let g = duality_gap(&s.plan, &s.duals, &c, 1e-12).unwrap();
            assert!(g.gap.abs() <= 1e-9 * (1.0 + s.value));
            for (a, b) in s.plan.row_sums().iter().zip(&mu) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in s.plan.column_sums().iter().zip(&nu) {
                assert!((a - b).abs() < 1e-12);
            }
            for (i, w) in mu.iter().enumerate() {
                if *w > 0.0 {
                    assert!(!s.plan.row(i).is_empty());
                }
            }
        }
    }
}
