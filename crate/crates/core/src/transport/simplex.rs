//! Transportation simplex on a dense cost matrix.
//!
//! Northwest-corner start, potentials by tree traversal, most negative
//! reduced cost enters, the ratio test runs along the unique tree cycle.

use crate::error::{Error, Result};
use std::collections::VecDeque;

pub(crate) struct Plan {
    /// Basic cells `(i, j, flow)`; zero flows are kept (degenerate basis).
    pub cells: Vec<(usize, usize, f64)>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations: usize,
}

fn northwest(a: &[f64], b: &[f64]) -> Vec<(usize, usize, f64)> {
    let (m, k) = (a.len(), b.len());
    let mut cells = Vec::with_capacity(m + k - 1);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0], b[0]);
    loop {
        let x = ra.min(rb).max(0.0);
        cells.push((i, j, x));
        ra -= x;
        rb -= x;
        if i + 1 == m && j + 1 == k {
            break;
        }
        if j + 1 == k || (i + 1 < m && ra <= rb) {
            i += 1;
            ra = a[i];
        } else {
            j += 1;
            rb = b[j];
        }
    }
    cells
}

/// Rows are nodes `0..m`, columns `m..m+k`; returns per-node list of cell indices.
fn adjacency(cells: &[(usize, usize, f64)], m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); m + k];
    for (e, &(i, j, _)) in cells.iter().enumerate() {
        adj[i].push(e);
        adj[m + j].push(e);
    }
    adj
}

fn other(cell: &(usize, usize, f64), node: usize, m: usize) -> usize {
    if node < m {
        m + cell.1
    } else {
        cell.0
    }
}

fn potentials(cells: &[(usize, usize, f64)], adj: &[Vec<usize>], cost: &[f64], m: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pot = vec![f64::NAN; m + k];
    pot[0] = 0.0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(n) = queue.pop_front() {
        for &e in &adj[n] {
            let o = other(&cells[e], n, m);
            if pot[o].is_nan() {
                let c = cost[cells[e].0 * k + cells[e].1];
                pot[o] = c - pot[n];
                queue.push_back(o);
            }
        }
    }
    let v = pot.split_off(m);
    (pot, v)
}

/// Cells on the tree path from row `i` to column `j`, ordered from `i`.
fn tree_path(cells: &[(usize, usize, f64)], adj: &[Vec<usize>], m: usize, i: usize, j: usize) -> Vec<usize> {
    let target = m + j;
    let mut via = vec![usize::MAX; adj.len()];
    let mut seen = vec![false; adj.len()];
    seen[i] = true;
    let mut queue = VecDeque::from([i]);
    while let Some(n) = queue.pop_front() {
        if n == target {
            break;
        }
        for &e in &adj[n] {
            let o = other(&cells[e], n, m);
            if !seen[o] {
                seen[o] = true;
                via[o] = e;
                queue.push_back(o);
            }
        }
    }
    let mut path = Vec::new();
    let mut n = target;
    while n != i {
        let e = via[n];
        path.push(e);
        n = other(&cells[e], n, m);
    }
    path.reverse();
    path
}

/// Minimizes `Σ x_ij c_ij` subject to row sums `a` and column sums `b`.
pub(crate) fn solve(a: &[f64], b: &[f64], cost: &[f64]) -> Result<Plan> {
    let (m, k) = (a.len(), b.len());
    assert_eq!(cost.len(), m * k);
    let cmax = cost.iter().fold(0.0f64, |s, c| s.max(c.abs()));
    let tol = 1e-12 * (1.0 + cmax);
    let mut cells = northwest(a, b);
    let cap = 50 * m * k + 1000;
    let mut iterations = 0;
    loop {
        let adj = adjacency(&cells, m, k);
        let (u, v) = potentials(&cells, &adj, cost, m, k);
        let mut best = (-tol, usize::MAX, usize::MAX);
        for (i, ui) in u.iter().enumerate() {
            let row = &cost[i * k..(i + 1) * k];
            for (j, (c, vj)) in row.iter().zip(&v).enumerate() {
                let r = c - ui - vj;
                if r < best.0 {
                    best = (r, i, j);
                }
            }
        }
        if best.1 == usize::MAX {
            return Ok(Plan {
                cells,
                u,
                v,
                iterations,
            });
        }
        iterations += 1;
        if iterations > cap {
            return Err(Error::Infeasible(format!(
                "transportation simplex did not converge in {cap} pivots"
            )));
        }
        let (_, ei, ej) = best;
        let path = tree_path(&cells, &adj, m, ei, ej);
        // The entering cell gets +θ; path cells alternate starting with −θ at the column end.
        let len = path.len();
        let mut leave = usize::MAX;
        let mut theta = f64::INFINITY;
        for (pos, &e) in path.iter().enumerate() {
            if (len - 1 - pos) % 2 == 0 && cells[e].2 < theta {
                theta = cells[e].2;
                leave = e;
            }
        }
        for (pos, &e) in path.iter().enumerate() {
            if (len - 1 - pos) % 2 == 0 {
                cells[e].2 = (cells[e].2 - theta).max(0.0);
            } else {
                cells[e].2 += theta;
            }
        }
        cells[leave] = (ei, ej, theta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn northwest_has_spanning_size() {
        let cells = northwest(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(cells.len(), 3);
        let cells = northwest(&[0.2, 0.3, 0.5], &[0.6, 0.4]);
        assert_eq!(cells.len(), 4);
    }

    #[test]
    fn two_by_two_picks_cheaper_pairing() {
        let plan = solve(&[0.5, 0.5], &[0.5, 0.5], &[4.0, 1.0, 1.0, 4.0]).unwrap();
        let cost: f64 = plan.cells.iter().map(|&(i, j, x)| x * [4.0, 1.0, 1.0, 4.0][i * 2 + j]).sum();
        assert!((cost - 1.0).abs() < 1e-14);
    }
}
