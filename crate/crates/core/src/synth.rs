//! Seeded synthetic graphs for tests, demos and the desk-scale benchmark.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{FeatureMatrix, Graph, Labels};

fn build(features: FeatureMatrix, edges: &[(usize, usize)], labels: Option<Labels>) -> Graph {
    Graph::from_edges(features, edges, labels)
        .expect("generated edges are in range")
        .0
}

fn gaussian_features(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let data = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMatrix::new(n, dim, data).unwrap()
}

/// G(n, p) with 4-dim uniform features.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let features = gaussian_features(n, 4, &mut rng);
    build(features, &edges, None)
}

/// Connected graph: a random recursive tree plus `extra` random chords.
pub fn connected(n: usize, extra: usize, feature_dim: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<_> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
    if n > 1 {
        for _ in 0..extra {
            edges.push((rng.gen_range(0..n), rng.gen_range(0..n)));
        }
    }
    let features = gaussian_features(n, feature_dim, &mut rng);
    build(features, &edges, None)
}

/// Two equal blocks with intra/inter edge probabilities; labels are the blocks.
pub fn two_block_sbm(n: usize, p_in: f64, p_out: f64, feature_dim: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block: Vec<usize> = (0..n).map(|v| usize::from(v >= n / 2)).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block[u] == block[v] { p_in } else { p_out };
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let features = gaussian_features(n, feature_dim, &mut rng);
    build(features, &edges, Some(Labels::single(block)))
}

/// Parameters of a degree-heterogeneous, homophilous citation-style graph.
#[derive(Debug, Clone)]
pub struct CitationLike {
    pub nodes: usize,
    pub edges: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub words_per_node: usize,
    /// Probability that an edge stays within the source's class.
    pub homophily: f64,
    /// Pareto tail index of the expected-degree weights.
    pub tail: f64,
    /// Probability that a word is drawn from the node's class vocabulary.
    pub topic_strength: f64,
    pub seed: u64,
}

impl CitationLike {
    /// Same size as the Cora citation graph: 2708 nodes, 5278 undirected
    /// edges, 1433 binary features, 7 classes.
    pub fn cora_scale(seed: u64) -> Self {
        CitationLike {
            nodes: 2708,
            edges: 5278,
            classes: 7,
            feature_dim: 1433,
            words_per_node: 18,
            homophily: 0.8,
            tail: 2.1,
            topic_strength: 0.35,
            seed,
        }
    }

    /// Chung-Lu style sampling with class-biased endpoints and bag-of-words
    /// features. The requested edge count is met exactly unless the graph
    /// saturates.
    pub fn generate(&self) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.nodes;
        let class: Vec<usize> = (0..n).map(|v| v % self.classes).collect();
        let weight: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                u.powf(-1.0 / (self.tail - 1.0)).min(n as f64 / 4.0)
            })
            .collect();
        let any = WeightedIndex::new(&weight).unwrap();
        let per_class: Vec<(Vec<usize>, WeightedIndex<f64>)> = (0..self.classes)
            .map(|c| {
                let members: Vec<usize> = (0..n).filter(|&v| class[v] == c).collect();
                let w: Vec<f64> = members.iter().map(|&v| weight[v]).collect();
                (members, WeightedIndex::new(&w).unwrap())
            })
            .collect();

        let mut seen = std::collections::HashSet::new();
        let mut edges = Vec::with_capacity(self.edges);
        let mut attempts = 0usize;
        while edges.len() < self.edges && attempts < 50 * self.edges + 1000 {
            attempts += 1;
            let u = any.sample(&mut rng);
            let v = if rng.gen_bool(self.homophily) {
                let (members, dist) = &per_class[class[u]];
                members[dist.sample(&mut rng)]
            } else {
                any.sample(&mut rng)
            };
            if u != v && seen.insert((u.min(v), u.max(v))) {
                edges.push((u, v));
            }
        }

        let vocab = self.feature_dim / self.classes;
        let mut data = vec![0.0; n * self.feature_dim];
        for v in 0..n {
            for _ in 0..self.words_per_node {
                let w = if vocab > 0 && rng.gen_bool(self.topic_strength) {
                    class[v] * vocab + rng.gen_range(0..vocab)
                } else {
                    rng.gen_range(0..self.feature_dim)
                };
                data[v * self.feature_dim + w] = 1.0;
            }
        }
        let features = FeatureMatrix::new(n, self.feature_dim, data).unwrap();
        build(features, &edges, Some(Labels::single(class)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::degree_centrality;

    #[test]
    fn cora_scale_shape() {
        let g = CitationLike::cora_scale(1).generate();
        assert_eq!(g.node_count(), 2708);
        assert_eq!(g.edge_count(), 5278);
        assert_eq!(g.feature_dim(), 1433);
        assert_eq!(g.labels().unwrap().num_classes(), 7);
        let deg = degree_centrality(&g);
        let max = *deg.iter().max().unwrap();
        assert!(max > 30, "expected a heavy degree tail, max degree {max}");
    }

    #[test]
    fn connected_is_connected() {
        let g = connected(60, 20, 3, 4);
        let d = crate::distance::bfs_sssp(&g, 0).unwrap();
        assert!(d.iter().all(|&x| x != crate::distance::UNREACHABLE));
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(erdos_renyi(40, 0.1, 3), erdos_renyi(40, 0.1, 3));
        assert_eq!(
            two_block_sbm(30, 0.3, 0.02, 2, 8),
            two_block_sbm(30, 0.3, 0.02, 2, 8)
        );
    }
}
