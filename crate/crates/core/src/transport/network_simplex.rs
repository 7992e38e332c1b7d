//! Exact transportation simplex on the bipartite `m x n` instance.
//!
//! The basis is a spanning tree over `m` row nodes and `n` column nodes
//! (`m + n - 1` basic cells, degenerate zeros included). Pivoting follows
//! Bland's rule so degenerate instances (one-hot marginals are heavily
//! degenerate) cannot cycle.

use std::collections::VecDeque;

use crate::error::{Error, Result};

const MAX_PIVOTS: usize = 1_000_000;

/// Solves `min <T, cost>` subject to row sums `supply` and column sums
/// `demand`. `cost` is row-major `m x n`. Returns the flows, row-major.
pub(crate) fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<Vec<f64>> {
    let m = supply.len();
    let n = demand.len();
    debug_assert_eq!(cost.len(), m * n);
    let mut flow = vec![0.0; m * n];
    let mut basic = vec![false; m * n];
    let mut basis: Vec<usize> = Vec::with_capacity(m + n - 1);

    // Northwest-corner start: always yields a spanning tree.
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].min(d[j]);
        let cell = i * n + j;
        flow[cell] = x;
        basic[cell] = true;
        basis.push(cell);
        s[i] -= x;
        d[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || s[i] <= d[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    debug_assert_eq!(basis.len(), m + n - 1);

    let scale = cost.iter().fold(1.0f64, |acc, &c| acc.max(c.abs()));
    let tol = 1e-12 * scale;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];

    for _ in 0..MAX_PIVOTS {
        let adj = adjacency(&basis, m, n);
        potentials(&adj, cost, m, &mut u, &mut v);

        // Bland: first improving cell in row-major order.
        let entering =
            (0..m * n).find(|&cell| !basic[cell] && cost[cell] - u[cell / n] - v[cell % n] < -tol);
        let Some(entering) = entering else {
            for f in &mut flow {
                if *f < 0.0 {
                    *f = 0.0;
                }
            }
            return Ok(flow);
        };

        let (ei, ej) = (entering / n, entering % n);
        let path = tree_path(&adj, ei, m + ej, m, n);
        // Cells along the path alternate -, +, -, ... starting at row ei.
        let mut leaving = usize::MAX;
        let mut theta = f64::INFINITY;
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 && (flow[cell] < theta || (flow[cell] == theta && cell < leaving)) {
                theta = flow[cell];
                leaving = cell;
            }
        }
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                flow[cell] = (flow[cell] - theta).max(0.0);
            } else {
                flow[cell] += theta;
            }
        }
        flow[entering] = theta;
        flow[leaving] = 0.0;
        basic[leaving] = false;
        basic[entering] = true;
        let pos = basis
            .iter()
            .position(|&c| c == leaving)
            .expect("leaving cell is basic");
        basis[pos] = entering;
    }
    Err(Error::SolverStalled(MAX_PIVOTS))
}

/// Tree adjacency: node `r < m` is row `r`, node `m + c` is column `c`.
/// Each entry is `(neighbour, cell)`.
fn adjacency(basis: &[usize], m: usize, n: usize) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); m + n];
    for &cell in basis {
        let (r, c) = (cell / n, cell % n);
        adj[r].push((m + c, cell));
        adj[m + c].push((r, cell));
    }
    adj
}

fn potentials(adj: &[Vec<(usize, usize)>], cost: &[f64], m: usize, u: &mut [f64], v: &mut [f64]) {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    u[0] = 0.0;
    while let Some(node) = queue.pop_front() {
        for &(next, cell) in &adj[node] {
            if seen[next] {
                continue;
            }
            seen[next] = true;
            if next >= m {
                v[next - m] = cost[cell] - u[node];
            } else {
                u[next] = cost[cell] - v[node - m];
            }
            queue.push_back(next);
        }
    }
}

/// Basic cells on the unique tree path from `from` to `to`, in order.
fn tree_path(
    adj: &[Vec<(usize, usize)>],
    from: usize,
    to: usize,
    m: usize,
    n: usize,
) -> Vec<usize> {
    let mut via: Vec<Option<(usize, usize)>> = vec![None; m + n];
    let mut seen = vec![false; m + n];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &(next, cell) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                via[next] = Some((node, cell));
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = to;
    while node != from {
        let (prev, cell) = via[node].expect("basis is a spanning tree");
        path.push(cell);
        node = prev;
    }
    path.reverse();
    path
}
