//! wasm-bindgen entry points for the static demo page in `www/`.
//!
//! Each export returns a JSON string so the page can stay plain JavaScript.
//! The same functions are plain Rust underneath and are tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cafin::distance::{build_exact, build_landmark, ExactOptions, UNREACHABLE};
use cafin::graph::{degree_centrality, median_group_split, FeatureMatrix, Graph, Group};
use cafin::loss::{fairness_term, FairnessContext, FairnessTerm};
use cafin::synth::{self, CitationLike};

#[derive(Debug, Serialize)]
pub struct Curve {
    pub distance: Vec<f64>,
    pub value: Vec<f64>,
    /// Embedding distance where the term vanishes, `k * hops / diameter`.
    pub zero_at: f64,
    pub weight: f64,
}

/// Fairness-term value for one anchor as its embedding distance to a node
/// `hops` away sweeps `(0, 2]`.
pub fn curve(
    hops: u16,
    diameter: u16,
    degree: usize,
    max_degree: usize,
    k: f64,
    samples: usize,
) -> Result<Curve, String> {
    if hops == 0 || hops > diameter {
        return Err(format!("hops must be in 1..={diameter}"));
    }
    if degree == 0 || degree > max_degree {
        return Err(format!("degree must be in 1..={max_degree}"));
    }
    if k.is_nan() || k <= 0.0 || samples < 2 {
        return Err("k must be positive and samples at least 2".into());
    }
    let n = usize::from(diameter) + 1;
    let edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
    let path = Graph::from_edges(FeatureMatrix::zeros(n, 1), &edges, None)
        .map_err(|e| e.to_string())?
        .0;
    let oracle = build_exact(&path, ExactOptions::default()).map_err(|e| e.to_string())?;
    let mut degrees = vec![1; path.node_count()];
    degrees[0] = degree;
    let ctx = FairnessContext {
        degrees: &degrees,
        oracle: &oracle,
        diameter: f64::from(diameter),
        max_degree,
        k,
    };
    let mut out = Curve {
        distance: Vec::with_capacity(samples),
        value: Vec::with_capacity(samples),
        zero_at: k * f64::from(hops) / f64::from(diameter),
        weight: max_degree as f64 / degree as f64,
    };
    for i in 1..=samples {
        let d = 2.0 * i as f64 / samples as f64;
        if let FairnessTerm::Value { value, .. } =
            fairness_term(0, usize::from(hops), &[0.0], &[d], &ctx)
        {
            out.distance.push(d);
            out.value.push(value);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct Stretch {
    pub nodes: usize,
    pub edges: usize,
    pub landmarks: usize,
    pub pairs: usize,
    pub exact_fraction: f64,
    pub mean_stretch: f64,
    pub max_stretch: f64,
    /// Pair counts by additive error 0, 1, 2, ... (last bucket open).
    pub error_histogram: Vec<usize>,
    pub exact_bytes: usize,
    pub landmark_bytes: usize,
}

/// Compares landmark upper bounds against exact distances on a random
/// connected graph.
pub fn stretch(
    nodes: usize,
    extra_edges: usize,
    landmarks: usize,
    seed: u64,
) -> Result<Stretch, String> {
    if !(2..=3000).contains(&nodes) {
        return Err("nodes must be in 2..=3000".into());
    }
    let g = synth::connected(nodes, extra_edges, 1, seed);
    let exact = build_exact(&g, ExactOptions::default()).map_err(|e| e.to_string())?;
    let approx = build_landmark(&g, landmarks.clamp(1, nodes), seed).map_err(|e| e.to_string())?;
    let mut hist = vec![0usize; 6];
    let (mut pairs, mut same, mut sum, mut max) = (0usize, 0usize, 0.0, 1.0f64);
    for u in 0..nodes {
        for v in u + 1..nodes {
            let (d, a) = (exact.query(u, v), approx.query(u, v));
            if d == UNREACHABLE || a == UNREACHABLE {
                continue;
            }
            let err = usize::from(a - d);
            let last = hist.len() - 1;
            hist[err.min(last)] += 1;
            pairs += 1;
            same += usize::from(err == 0);
            let s = f64::from(a) / f64::from(d);
            sum += s;
            max = max.max(s);
        }
    }
    Ok(Stretch {
        nodes,
        edges: g.edge_count(),
        landmarks: approx.landmarks().len(),
        pairs,
        exact_fraction: same as f64 / pairs.max(1) as f64,
        mean_stretch: sum / pairs.max(1) as f64,
        max_stretch: max,
        error_histogram: hist,
        exact_bytes: exact.encoded_len(),
        landmark_bytes: approx.encoded_len(),
    })
}

#[derive(Debug, Serialize)]
pub struct DegreeSplit {
    pub nodes: usize,
    pub edges: usize,
    pub median: f64,
    pub popular: usize,
    pub unpopular: usize,
    /// `histogram[d]` = (popular, unpopular) node counts with degree `d`.
    pub histogram: Vec<(usize, usize)>,
}

/// Degree histogram of a heavy-tailed citation-style graph, coloured by
/// median group.
pub fn degree_split(nodes: usize, edges: usize, seed: u64) -> Result<DegreeSplit, String> {
    if !(10..=20000).contains(&nodes) {
        return Err("nodes must be in 10..=20000".into());
    }
    let g = CitationLike {
        nodes,
        edges,
        feature_dim: 7,
        words_per_node: 1,
        seed,
        ..CitationLike::cora_scale(seed)
    }
    .generate();
    let deg = degree_centrality(&g);
    let c: Vec<f64> = deg.iter().map(|&d| d as f64).collect();
    let groups = median_group_split(&c).map_err(|e| e.to_string())?;
    let mut histogram = vec![(0, 0); deg.iter().max().map_or(0, |m| m + 1)];
    for (&d, &grp) in deg.iter().zip(&groups.group) {
        match grp {
            Group::Popular => histogram[d].0 += 1,
            Group::Unpopular => histogram[d].1 += 1,
        }
    }
    Ok(DegreeSplit {
        nodes,
        edges: g.edge_count(),
        median: groups.median,
        popular: groups.popular_count(),
        unpopular: nodes - groups.popular_count(),
        histogram,
    })
}

fn json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn fairness_curve(
    hops: u16,
    diameter: u16,
    degree: usize,
    max_degree: usize,
    k: f64,
    samples: usize,
) -> Result<String, JsError> {
    json(curve(hops, diameter, degree, max_degree, k, samples))
}

#[wasm_bindgen]
pub fn landmark_stretch(
    nodes: usize,
    extra_edges: usize,
    landmarks: usize,
    seed: u64,
) -> Result<String, JsError> {
    json(stretch(nodes, extra_edges, landmarks, seed))
}

#[wasm_bindgen]
pub fn degree_groups(nodes: usize, edges: usize, seed: u64) -> Result<String, JsError> {
    json(degree_split(nodes, edges, seed))
}
