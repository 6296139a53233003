//! Inductive train/downstream/evaluation splits.
//!
//! Node classification uses three vertex-induced subgraphs (60/30/10 % of
//! the nodes). Link prediction keeps 60 % of the edges for embedding
//! training and splits the rest evenly into two positive sets, each paired
//! with an equally sized set of sampled non-edges.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, Graph, Labels, Subgraph};

pub const NODE_FRACTIONS: [f64; 3] = [0.6, 0.3, 0.1];
pub const EDGE_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

/// Splits `total` into parts proportional to `fractions`: floor every share,
/// then hand the leftover units to the largest fractional remainders
/// (earlier parts win ties).
pub fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

#[derive(Debug, Clone)]
pub struct NodeSplitBundle {
    pub g1: Subgraph,
    pub g2: Subgraph,
    pub g3: Subgraph,
    /// Classes present in `g3` but missing from `g2`.
    pub warnings: Vec<String>,
}

impl NodeSplitBundle {
    pub fn parts(&self) -> [&Subgraph; 3] {
        [&self.g1, &self.g2, &self.g3]
    }

    /// Text manifest: one section per part listing parent node ids.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        for (name, part) in ["g1", "g2", "g3"].iter().zip(self.parts()) {
            let _ = writeln!(s, "[{name}] {}", part.parent_ids.len());
            for id in &part.parent_ids {
                let _ = writeln!(s, "{id}");
            }
        }
        s
    }
}

pub fn node_split(g: &Graph, seed: u64) -> Result<NodeSplitBundle> {
    let n = g.node_count();
    if n < 10 {
        return Err(Error::Argument(format!(
            "node split needs >= 10 nodes, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sizes = apportion(n, &NODE_FRACTIONS);
    let (a, rest) = order.split_at(sizes[0]);
    let (b, c) = rest.split_at(sizes[1]);
    let g1 = induced_subgraph(g, a)?;
    let g2 = induced_subgraph(g, b)?;
    let g3 = induced_subgraph(g, c)?;
    let warnings = class_coverage_warnings(g2.graph.labels(), g3.graph.labels());
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(NodeSplitBundle {
        g1,
        g2,
        g3,
        warnings,
    })
}

fn class_coverage_warnings(train: Option<&Labels>, eval: Option<&Labels>) -> Vec<String> {
    let (Some(train), Some(eval)) = (train, eval) else {
        return Vec::new();
    };
    let have = train.class_frequencies();
    eval.class_frequencies()
        .iter()
        .enumerate()
        .filter(|&(c, &f)| f > 0 && have.get(c).copied().unwrap_or(0) == 0)
        .map(|(c, _)| format!("class {c} appears in g3 but not in g2"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct EdgeSplitBundle {
    /// All nodes, 60 % of the edges.
    pub g1: Graph,
    pub g2_pos: Vec<(usize, usize)>,
    pub g2_neg: Vec<(usize, usize)>,
    pub g3_pos: Vec<(usize, usize)>,
    pub g3_neg: Vec<(usize, usize)>,
}

impl EdgeSplitBundle {
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let g1: Vec<_> = self.g1.edges().collect();
        for (name, edges) in [
            ("g1", &g1),
            ("g2_pos", &self.g2_pos),
            ("g2_neg", &self.g2_neg),
            ("g3_pos", &self.g3_pos),
            ("g3_neg", &self.g3_neg),
        ] {
            let _ = writeln!(s, "[{name}] {}", edges.len());
            for (u, v) in edges {
                let _ = writeln!(s, "{u} {v}");
            }
        }
        s
    }
}

pub fn edge_split(g: &Graph, seed: u64) -> Result<EdgeSplitBundle> {
    let m = g.edge_count();
    if m < 10 {
        return Err(Error::Argument(format!(
            "edge split needs >= 10 edges, got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = g.edges().collect();
    edges.shuffle(&mut rng);
    let sizes = apportion(m, &EDGE_FRACTIONS);
    let g3_pos = edges.split_off(sizes[0] + sizes[1]);
    let g2_pos = edges.split_off(sizes[0]);
    let g1 = g.with_edges(&edges)?;

    let mut negatives = sample_non_edges(g, g2_pos.len() + g3_pos.len(), &mut rng)?;
    let g3_neg = negatives.split_off(g2_pos.len());
    Ok(EdgeSplitBundle {
        g1,
        g2_pos,
        g2_neg: negatives,
        g3_pos,
        g3_neg,
    })
}

/// Distinct node pairs that are not edges of `g`, uniform by rejection.
fn sample_non_edges(g: &Graph, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let n = g.node_count();
    let pairs = n * n.saturating_sub(1) / 2;
    let available = pairs - g.edge_count();
    if available < count {
        return Err(Error::Capacity(format!(
            "need {count} negative pairs but the graph has only {available} non-edges"
        )));
    }
    let budget = 100 * count + 10_000;
    let mut chosen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut trials = 0;
    while out.len() < count {
        if trials == budget {
            return Err(Error::Capacity(format!(
                "found only {} of {count} negative pairs in {budget} trials",
                out.len()
            )));
        }
        trials += 1;
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v || g.has_edge(u, v) {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if chosen.insert(key) {
            out.push(key);
        }
    }
    Ok(out)
}
