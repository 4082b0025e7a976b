//! Geometric tour instances for edge classification: random points in the
//! unit square, a k-nearest-neighbor graph, and edge labels marking the
//! optimal (or 2-opt heuristic) tour.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EdgeData, Graph, GraphError};
use crate::tensor::Tensor;

/// Largest instance the exact dynamic program will label; the table costs
/// O(2^n * n^2).
pub const MAX_EXACT_NODES: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TspLabelMode {
    /// Held-Karp dynamic program; requires `n <= MAX_EXACT_NODES`.
    Exact,
    /// Nearest-neighbor start plus 2-opt improvement; labels are approximate.
    TwoOpt,
}

/// Generates a tour instance. Node features are the point coordinates, edge
/// features the Euclidean distances; edges on the tour get label 1.
pub fn gen_tsp(n: usize, k: usize, seed: u64, mode: TspLabelMode) -> Result<Graph, GraphError> {
    if n < 3 {
        return Err(GraphError::TooSmall { what: "node count", min: 3, value: n });
    }
    if k == 0 || k >= n {
        return Err(GraphError::NeighborCount { k, n });
    }
    if mode == TspLabelMode::Exact && n > MAX_EXACT_NODES {
        return Err(GraphError::ExactTourTooLarge { n, max: MAX_EXACT_NODES });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let dist = distance_matrix(&points);

    let tour = match mode {
        TspLabelMode::Exact => held_karp_tour(&dist),
        TspLabelMode::TwoOpt => two_opt_tour(&dist),
    };
    let mut on_tour = vec![vec![false; n]; n];
    for w in 0..n {
        let (a, b) = (tour[w], tour[(w + 1) % n]);
        on_tour[a][b] = true;
        on_tour[b][a] = true;
    }

    // k nearest neighbors per node, symmetrized, tour edges force-added
    let mut keep = vec![vec![false; n]; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist[i][a].partial_cmp(&dist[i][b]).unwrap().then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            keep[i][j] = true;
            keep[j][i] = true;
        }
    }
    let mut pairs = Vec::new();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if keep[i][j] || on_tour[i][j] {
                pairs.push((i, j));
                feats.push(dist[i][j]);
                labels.push(on_tour[i][j] as usize);
            }
        }
    }
    let node_feats =
        Tensor::new(n, 2, points.iter().flat_map(|&(x, y)| [x, y]).collect::<Vec<f64>>());
    Graph::undirected_with(
        n,
        &pairs,
        node_feats,
        EdgeData {
            feats: Some(Tensor::new(pairs.len(), 1, feats)),
            labels: Some(labels),
        },
    )
}

fn distance_matrix(points: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dx = points[i].0 - points[j].0;
            let dy = points[i].1 - points[j].1;
            dist[i][j] = (dx * dx + dy * dy).sqrt();
        }
    }
    dist
}

/// Length of the closed tour visiting `order`, summed in visiting order.
pub fn tour_length(order: &[usize], dist: &[Vec<f64>]) -> f64 {
    let n = order.len();
    (0..n).map(|w| dist[order[w]][order[(w + 1) % n]]).sum()
}

/// Exact optimal tour by dynamic programming over subsets, O(2^n * n^2).
/// Returns the visiting order starting at node 0.
pub fn held_karp_tour(dist: &[Vec<f64>]) -> Vec<usize> {
    let n = dist.len();
    assert!(n >= 2);
    let full: usize = (1 << n) - 1;
    // dp[mask][v]: cheapest path from 0 through exactly `mask`, ending at v
    let mut dp = vec![vec![f64::INFINITY; n]; 1 << n];
    let mut parent = vec![vec![usize::MAX; n]; 1 << n];
    dp[1][0] = 0.0;
    for mask in 1..=full {
        if mask & 1 == 0 {
            continue;
        }
        for v in 0..n {
            let cost = dp[mask][v];
            if !cost.is_finite() || mask & (1 << v) == 0 {
                continue;
            }
            for w in 0..n {
                if mask & (1 << w) != 0 {
                    continue;
                }
                let next = mask | (1 << w);
                let cand = cost + dist[v][w];
                if cand < dp[next][w] {
                    dp[next][w] = cand;
                    parent[next][w] = v;
                }
            }
        }
    }
    let mut best_end = 1;
    let mut best = f64::INFINITY;
    for v in 1..n {
        let cand = dp[full][v] + dist[v][0];
        if cand < best {
            best = cand;
            best_end = v;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = full;
    let mut v = best_end;
    while v != usize::MAX {
        order.push(v);
        let p = parent[mask][v];
        mask &= !(1 << v);
        v = p;
    }
    order.reverse();
    debug_assert_eq!(order.len(), n);
    debug_assert_eq!(order[0], 0);
    order
}

/// Nearest-neighbor construction followed by first-improvement 2-opt passes.
fn two_opt_tour(dist: &[Vec<f64>]) -> Vec<usize> {
    let n = dist.len();
    let mut order = Vec::with_capacity(n);
    let mut used = vec![false; n];
    order.push(0);
    used[0] = true;
    for _ in 1..n {
        let last = *order.last().unwrap();
        let next = (0..n)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| dist[last][a].partial_cmp(&dist[last][b]).unwrap().then(a.cmp(&b)))
            .unwrap();
        order.push(next);
        used[next] = true;
    }
    loop {
        let mut improved = false;
        for i in 0..n - 1 {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = (order[i], order[i + 1]);
                let (c, d) = (order[j], order[(j + 1) % n]);
                let delta = dist[a][c] + dist[b][d] - dist[a][b] - dist[c][d];
                if delta < -1e-12 {
                    order[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            return order;
        }
    }
}
