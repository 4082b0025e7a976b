//! Seeded synthetic dataset generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, GraphError};
use crate::tensor::Tensor;

/// Stochastic block model parameters. Node labels are block ids.
///
/// Features: with `semi_supervised` off, every node carries a one-hot of its
/// label, corrupted with probability `noise` to a uniformly random class.
/// With it on, one randomly chosen node per class keeps its true one-hot and
/// every other node gets a zero (unknown) feature.
#[derive(Debug, Clone)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    pub p_intra: f64,
    pub p_inter: f64,
    pub noise: f64,
    pub semi_supervised: bool,
}

impl SbmSpec {
    fn validate(&self) -> Result<(), GraphError> {
        for &p in [self.p_intra, self.p_inter, self.noise].iter() {
            if !(0.0..=1.0).contains(&p) {
                return Err(GraphError::InvalidProbability { value: p });
            }
        }
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return Err(GraphError::TooSmall { what: "block size", min: 1, value: 0 });
        }
        Ok(())
    }
}

pub fn gen_sbm(spec: &SbmSpec, seed: u64) -> Result<Graph, GraphError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = spec.block_sizes.len();
    let n: usize = spec.block_sizes.iter().sum();
    let mut labels = Vec::with_capacity(n);
    for (c, &size) in spec.block_sizes.iter().enumerate() {
        labels.extend(std::iter::repeat_n(c, size));
    }

    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { spec.p_intra } else { spec.p_inter };
            if rng.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }

    let mut feats = Tensor::zeros(n, classes);
    if spec.semi_supervised {
        let mut start = 0;
        for (c, &size) in spec.block_sizes.iter().enumerate() {
            let revealed = start + rng.random_range(0..size);
            feats.set(revealed, c, 1.0);
            start += size;
        }
    } else {
        for (i, &label) in labels.iter().enumerate() {
            let shown = if rng.random::<f64>() < spec.noise {
                rng.random_range(0..classes)
            } else {
                label
            };
            feats.set(i, shown, 1.0);
        }
    }

    Graph::undirected(n, &pairs, feats)?.with_node_labels(labels)
}

/// A set of SBM graphs with per-graph seeds derived from `seed`.
pub fn gen_sbm_set(spec: &SbmSpec, count: usize, seed: u64) -> Result<Vec<Graph>, GraphError> {
    (0..count).map(|i| gen_sbm(spec, derive_seed(seed, i))).collect()
}

pub(crate) fn derive_seed(seed: u64, index: usize) -> u64 {
    // splitmix-style spread so per-item streams do not overlap
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const VOCAB: usize = 4;

/// Structural regression target: average degree + triangles/n + (share of
/// nodes in category 0). Categories come from the one-hot node features.
pub fn regression_target(g: &Graph) -> f64 {
    let n = g.n() as f64;
    let avg_degree = g.num_edges() as f64 / n;
    let mut triangles = 0usize;
    for (src, dst) in g.arcs() {
        let (a, b) = (g.neighbors(src), g.neighbors(dst));
        // count common neighbors via merge; each triangle appears 6 times
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    triangles += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    let tri = triangles as f64 / 6.0;
    let cat0 = (0..g.n()).filter(|&i| g.node_feats().get(i, 0) == 1.0).count() as f64;
    avg_degree + tri / n + cat0 / n
}

/// Connected random graphs with categorical one-hot features and the
/// structural functional as the regression target.
pub fn gen_regression(
    count: usize,
    min_nodes: usize,
    max_nodes: usize,
    seed: u64,
) -> Result<Vec<Graph>, GraphError> {
    if min_nodes < 2 {
        return Err(GraphError::TooSmall { what: "node count", min: 2, value: min_nodes });
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
            let n = rng.random_range(min_nodes..=max_nodes);
            let p = (1.5 * (n as f64).ln() / n as f64).min(0.9);
            let pairs = er_connected(n, p, &mut rng);
            let feats = random_categories(n, &mut rng);
            let g = Graph::undirected(n, &pairs, feats)?;
            let target = regression_target(&g);
            Ok(g.with_graph_target(target))
        })
        .collect()
}

/// Graph classification set: class labels index evenly spaced edge densities,
/// so the classes are separable from structure alone. Classes are assigned
/// round-robin for exact balance.
pub fn gen_graph_classes(
    count: usize,
    min_nodes: usize,
    max_nodes: usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<Graph>, GraphError> {
    if min_nodes < 2 {
        return Err(GraphError::TooSmall { what: "node count", min: 2, value: min_nodes });
    }
    if classes < 2 {
        return Err(GraphError::TooSmall { what: "class count", min: 2, value: classes });
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
            let class = i % classes;
            let n = rng.random_range(min_nodes..=max_nodes);
            let p = 0.25 + 0.5 * class as f64 / (classes - 1) as f64;
            let pairs = er_connected(n, p, &mut rng);
            let feats = random_categories(n, &mut rng);
            Ok(Graph::undirected(n, &pairs, feats)?.with_graph_label(class))
        })
        .collect()
}

fn random_categories(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut feats = Tensor::zeros(n, VOCAB);
    for i in 0..n {
        let c = rng.random_range(0..VOCAB);
        feats.set(i, c, 1.0);
    }
    feats
}

/// Erdos-Renyi pair list, resampled until connected.
fn er_connected(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    loop {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    pairs.push((i, j));
                }
            }
        }
        if is_connected(n, &pairs) {
            return pairs;
        }
    }
}

fn is_connected(n: usize, pairs: &[(usize, usize)]) -> bool {
    if n == 0 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in pairs {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}
