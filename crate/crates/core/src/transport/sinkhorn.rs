//! Log-domain Sinkhorn iterations with ε-scaling.

use rayon::prelude::*;

use super::{CostMatrix, DualPotentials, TransportPlan, MASS_TOL};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    /// ℓ¹ marginal tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { epsilon: 1e-2, tol: 1e-9, max_iter: 100_000 }
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornSolution {
    pub plan: TransportPlan,
    pub value: f64,
    /// Entropic potentials `(f, g)` at the final ε.
    pub duals: DualPotentials,
    pub iterations: usize,
}

fn log_sum_exp(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Entropic transport plan; rows are rescaled to match `mu` exactly at the end.
pub fn solve_sinkhorn(mu: &[f64], nu: &[f64], costs: &CostMatrix, opts: &SinkhornOptions) -> Result<SinkhornSolution> {
    let (m, n) = (mu.len(), nu.len());
    if m != costs.rows() || n != costs.cols() {
        return Err(Error::Shape(format!("marginals {m}x{n} vs cost {}x{}", costs.rows(), costs.cols())));
    }
    if !(opts.epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    if mu.iter().chain(nu).any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter("marginals must be finite and nonnegative".into()));
    }
    let (ma, mb): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (ma - mb).abs() > MASS_TOL * ma.max(mb) {
        return Err(Error::Infeasible(format!("marginal masses differ: {ma} vs {mb}")));
    }
    let nu: Vec<f64> = nu.iter().map(|w| w * (ma / mb)).collect();
    let log_mu: Vec<f64> = mu.iter().map(|w| w.ln()).collect();
    let log_nu: Vec<f64> = nu.iter().map(|w| w.ln()).collect();

    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut eps = costs.max_abs().max(opts.epsilon);
    let mut iterations = 0;
    let row_update = |f: &mut [f64], g: &[f64], eps: f64| {
        f.par_iter_mut().enumerate().for_each(|(i, fi)| {
            let row = costs.row(i);
            *fi = eps * log_mu[i] - eps * log_sum_exp((0..n).map(|j| (g[j] - row[j]) / eps));
        });
    };
    let col_update = |f: &[f64], g: &mut [f64], eps: f64| {
        g.par_iter_mut().enumerate().for_each(|(j, gj)| {
            *gj = eps * log_nu[j] - eps * log_sum_exp((0..m).map(|i| (f[i] - costs.get(i, j)) / eps));
        });
    };
    let row_error = |f: &[f64], g: &[f64], eps: f64| -> f64 {
        let per_row: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| {
                if mu[i] == 0.0 {
                    return 0.0;
                }
                let row = costs.row(i);
                let s: f64 = (0..n).map(|j| ((f[i] + g[j] - row[j]) / eps).exp()).sum();
                (s - mu[i]).abs()
            })
            .collect();
        per_row.iter().sum()
    };
    loop {
        let last = eps <= opts.epsilon;
        // at intermediate ε a loose tolerance is enough to warm-start the next level
        let level_tol = if last { opts.tol } else { 1e-3 * ma };
        loop {
            row_update(&mut f, &g, eps);
            col_update(&f, &mut g, eps);
            iterations += 1;
            let err = row_error(&f, &g, eps);
            if err <= level_tol {
                break;
            }
            if iterations >= opts.max_iter {
                return Err(Error::Convergence { iterations, residual: err });
            }
        }
        if last {
            break;
        }
        eps = (eps * 0.5).max(opts.epsilon);
    }

    let rows: Vec<Vec<(usize, f64)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            if mu[i] == 0.0 {
                return Vec::new();
            }
            let row = costs.row(i);
            let mut entries: Vec<(usize, f64)> =
                (0..n).map(|j| (j, ((f[i] + g[j] - row[j]) / eps).exp())).filter(|e| e.1 > 0.0).collect();
            let s: f64 = entries.iter().map(|e| e.1).sum();
            for e in entries.iter_mut() {
                e.1 *= mu[i] / s;
            }
            entries
        })
        .collect();
    let plan = TransportPlan::from_rows(rows, n)?.with_row_marginal(mu.to_vec());
    let value = plan.cost(costs);
    Ok(SinkhornSolution { plan, value, duals: DualPotentials { phi: f, psi: g }, iterations })
}
