//! Louvain modularity maximization on a weighted undirected graph.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;

use crate::rng::{stream, Purpose};

/// Symmetric weighted adjacency with self-loop weights kept separately.
struct Graph {
    /// Neighbour lists `(node, weight)` excluding self loops.
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
}

impl Graph {
    fn len(&self) -> usize {
        self.adj.len()
    }

    fn degree(&self, i: usize) -> f64 {
        self.self_loop[i] + self.adj[i].iter().map(|e| e.1).sum::<f64>()
    }
}

/// One level of local moves. Returns the community of each node and whether
/// any node moved.
fn local_moves(g: &Graph, resolution: f64, order: &[usize]) -> (Vec<usize>, bool) {
    let n = g.len();
    let degree: Vec<f64> = (0..n).map(|i| g.degree(i)).collect();
    let two_m: f64 = degree.iter().sum();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut tot = degree.clone();
    let mut links = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut moved_any = false;
    if two_m <= 0.0 {
        return (comm, false);
    }
    loop {
        let mut moved = false;
        for &i in order {
            let ki = degree[i];
            if ki <= 0.0 {
                continue;
            }
            let own = comm[i];
            for &(j, w) in &g.adj[i] {
                let cj = comm[j];
                if links[cj] == 0.0 {
                    touched.push(cj);
                }
                links[cj] += w;
            }
            tot[own] -= ki;
            let gain = |c: usize, links: &[f64]| links[c] - resolution * tot[c] * ki / two_m;
            let stay = gain(own, &links);
            let mut best = own;
            let mut best_gain = stay;
            // deterministic scan: lowest community id wins ties
            touched.sort_unstable();
            for &c in &touched {
                let gc = gain(c, &links);
                if gc > best_gain {
                    best = c;
                    best_gain = gc;
                }
            }
            if best_gain <= stay {
                best = own;
            }
            tot[best] += ki;
            if best != own {
                comm[i] = best;
                moved = true;
                moved_any = true;
            }
            for &c in &touched {
                links[c] = 0.0;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
    }
    (comm, moved_any)
}

/// Renumbers labels by first appearance in node order.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

fn aggregate(g: &Graph, comm: &[usize], k: usize) -> Graph {
    let mut weights = vec![std::collections::BTreeMap::<usize, f64>::new(); k];
    let mut self_loop = vec![0.0; k];
    for i in 0..g.len() {
        let ci = comm[i];
        self_loop[ci] += g.self_loop[i];
        for &(j, w) in &g.adj[i] {
            let cj = comm[j];
            if ci == cj {
                // each internal edge is seen from both endpoints
                self_loop[ci] += w;
            } else {
                *weights[ci].entry(cj).or_default() += w;
            }
        }
    }
    Graph {
        adj: weights.into_iter().map(|m| m.into_iter().collect()).collect(),
        self_loop,
    }
}

/// Partition of the nodes of `|weights|` (diagonal ignored) maximizing
/// modularity at the given resolution. Nodes are visited in index order; a
/// seed enables shuffled visiting orders instead. Labels are canonical.
pub fn louvain(weights: ArrayView2<f64>, resolution: f64, shuffle_seed: Option<u64>) -> Vec<usize> {
    let n = weights.nrows();
    assert_eq!(n, weights.ncols(), "adjacency must be square");
    let adj = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, 0.5 * (weights[[i, j]].abs() + weights[[j, i]].abs())))
                .filter(|e| e.1 > 0.0)
                .collect()
        })
        .collect();
    let mut graph = Graph {
        adj,
        self_loop: vec![0.0; n],
    };
    let mut membership: Vec<usize> = (0..n).collect();
    let mut level = 0u64;
    loop {
        let mut order: Vec<usize> = (0..graph.len()).collect();
        if let Some(seed) = shuffle_seed {
            order.shuffle(&mut stream(seed, Purpose::Louvain, level));
        }
        let (comm, moved) = local_moves(&graph, resolution, &order);
        if !moved {
            break;
        }
        let comm = canonical_labels(&comm);
        let k = comm.iter().max().map_or(0, |m| m + 1);
        for m in membership.iter_mut() {
            *m = comm[*m];
        }
        graph = aggregate(&graph, &comm, k);
        level += 1;
    }
    canonical_labels(&membership)
}

/// Newman modularity of a partition of `|weights|`.
pub fn modularity(weights: ArrayView2<f64>, labels: &[usize], resolution: f64) -> f64 {
    let n = weights.nrows();
    let w = |i: usize, j: usize| if i == j { 0.0 } else { weights[[i, j]].abs() };
    let degree: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w(i, j)).sum()).collect();
    let two_m: f64 = degree.iter().sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                q += w(i, j) - resolution * degree[i] * degree[j] / two_m;
            }
        }
    }
    q / two_m
}
