//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

/// Minimum transport cost by enumerating every basic solution: each set of
/// `m+n−1` cells forming a spanning tree of the bipartite row/column graph
/// determines a unique flow, kept when it is nonnegative.
pub fn brute_force_ot(mu: &[f64], nu: &[f64], cost: &[Vec<f64>]) -> Option<f64> {
    let (m, n) = (mu.len(), nu.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let scale = mu.iter().sum::<f64>().max(1.0);
    let mut best: Option<f64> = None;
    for subset in combinations(cells.len(), k) {
        let chosen: Vec<(usize, usize)> = subset.iter().map(|&c| cells[c]).collect();
        let Some(flow) = tree_flow(mu, nu, &chosen) else { continue };
        if flow.iter().any(|f| *f < -1e-12 * scale) {
            continue;
        }
        let value: f64 = chosen.iter().zip(&flow).map(|(&(i, j), f)| cost[i][j] * f).sum();
        best = Some(best.map_or(value, |b: f64| b.min(value)));
    }
    best
}

/// Flows on a spanning tree by repeatedly peeling leaves; `None` when the
/// cells contain a cycle.
fn tree_flow(mu: &[f64], nu: &[f64], cells: &[(usize, usize)]) -> Option<Vec<f64>> {
    let (m, n) = (mu.len(), nu.len());
    let mut supply: Vec<f64> = mu.iter().chain(nu).copied().collect();
    let mut degree = vec![0usize; m + n];
    for &(i, j) in cells {
        degree[i] += 1;
        degree[m + j] += 1;
    }
    let mut flow = vec![f64::NAN; cells.len()];
    let mut done = vec![false; cells.len()];
    for _ in 0..cells.len() {
        let leaf = (0..m + n).find(|&v| degree[v] == 1)?;
        let (c, &(i, j)) = cells.iter().enumerate().find(|(c, &(i, j))| !done[*c] && (i == leaf || m + j == leaf))?;
        let f = supply[leaf];
        flow[c] = f;
        done[c] = true;
        let other = if i == leaf { m + j } else { i };
        supply[other] -= f;
        supply[leaf] = 0.0;
        degree[leaf] -= 1;
        degree[other] -= 1;
    }
    Some(flow)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for s in start..n {
            if n - s < k - cur.len() {
                break;
            }
            cur.push(s);
            rec(s + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}
