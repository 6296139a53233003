//! GraphSAGE encoder with a concatenating mean aggregator.
//!
//! Layer `k` maps a node's previous representation and the mean of its
//! sampled neighbors' representations through
//! `h_k(v) = relu(W_k [h_{k-1}(v) || mean h_{k-1}(N(v))] + b_k)`.
//! The last layer is L2-normalized. Gradients are exact reverse mode.
//!
//! The first layer is linear in the raw features, so it is evaluated from
//! per-node projections `W_self x_v` and `W_neigh x_v` computed once per
//! parameter state. This keeps sparse bag-of-words inputs cheap.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SageConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Neighbor sample cap per hop, outermost hop last.
    pub fanouts: Vec<usize>,
    pub seed: u64,
}

impl Default for SageConfig {
    fn default() -> Self {
        SageConfig {
            num_layers: 3,
            hidden_dim: 256,
            fanouts: vec![10, 10, 10],
            seed: 0,
        }
    }
}

impl SageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "num_layers and hidden_dim must be positive".into(),
            ));
        }
        if self.fanouts.len() != self.num_layers {
            return Err(Error::Config(format!(
                "{} fanouts for {} layers",
                self.fanouts.len(),
                self.num_layers
            )));
        }
        Ok(())
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(serde_json::to_vec(self).expect("config serializes")).into()
    }
}

/// One aggregation layer. `weight` is `out_dim x 2*in_dim`, row-major, with
/// the self half in the first `in_dim` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weight: vec![0.0; out_dim * 2 * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weight[o * 2 * self.in_dim..(o + 1) * 2 * self.in_dim]
    }
}

/// Encoder parameters; the same shape doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct SageParams {
    pub layers: Vec<Layer>,
    pub seed: u64,
    pub config_hash: [u8; 32],
}

impl SageParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &SageConfig, feature_dim: usize) -> Result<Self> {
        cfg.validate()?;
        if feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut layers = Vec::with_capacity(cfg.num_layers);
        let mut in_dim = feature_dim;
        for _ in 0..cfg.num_layers {
            let mut layer = Layer::zeros(in_dim, cfg.hidden_dim);
            let bound = (6.0 / (2 * in_dim + cfg.hidden_dim) as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.gen_range(-bound..bound);
            }
            layers.push(layer);
            in_dim = cfg.hidden_dim;
        }
        Ok(SageParams {
            layers,
            seed: cfg.seed,
            config_hash: cfg.hash(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        SageParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
            seed: self.seed,
            config_hash: self.config_hash,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.slices().map(<[f64]>::len).sum()
    }

    pub fn get(&self, mut i: usize) -> f64 {
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut i: usize, value: f64) {
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = value;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index out of range")
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &SageParams) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|x| x.is_finite()))
    }

    fn check_features(&self, dim: usize) -> Result<()> {
        if dim != self.feature_dim() {
            return Err(Error::Config(format!(
                "features have {dim} columns, encoder expects {}",
                self.feature_dim()
            )));
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"CAFINSP1";

    /// Checkpoint layout (little endian): magic, `layers: u64`, `seed: u64`,
    /// 32-byte config hash, then per layer `in: u64`, `out: u64`, the
    /// row-major weight and the bias as `f64`.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(Self::MAGIC);
        buf.extend_from_slice(&(self.layers.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&self.config_hash);
        for l in &self.layers {
            buf.extend_from_slice(&(l.in_dim as u64).to_le_bytes());
            buf.extend_from_slice(&(l.out_dim as u64).to_le_bytes());
            for x in l.weight.iter().chain(&l.bias) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("reading checkpoint", e))?;
        let mut pos = 0usize;
        let mut take = |k: usize| -> Result<&[u8]> {
            let s = bytes
                .get(pos..pos + k)
                .ok_or_else(|| Error::Serde("truncated checkpoint".into()))?;
            pos += k;
            Ok(s)
        };
        if take(8)? != Self::MAGIC {
            return Err(Error::Serde("not an encoder checkpoint".into()));
        }
        let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
        let count = u64_at(take(8)?) as usize;
        let seed = u64_at(take(8)?);
        let config_hash: [u8; 32] = take(32)?.try_into().unwrap();
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let in_dim = u64_at(take(8)?) as usize;
            let out_dim = u64_at(take(8)?) as usize;
            let mut layer = Layer::zeros(in_dim, out_dim);
            let raw = take(8 * (layer.weight.len() + out_dim))?;
            let mut vals = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
            for x in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *x = vals.next().unwrap();
            }
            layers.push(layer);
        }
        if pos != bytes.len() {
            return Err(Error::Serde("trailing bytes in checkpoint".into()));
        }
        Ok(SageParams {
            layers,
            seed,
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Feature rows as (column, value) lists of their nonzeros.
#[derive(Debug, Clone)]
pub struct SparseFeatures {
    dim: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseFeatures {
    pub fn new(m: &FeatureMatrix) -> Self {
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in 0..m.rows() {
            for (j, &x) in m.row(i).iter().enumerate() {
                if x != 0.0 {
                    cols.push(j);
                    vals.push(x);
                }
            }
            offsets.push(cols.len());
        }
        SparseFeatures {
            dim: m.cols(),
            offsets,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }
}

/// `W_self x_v` and `W_neigh x_v` of the first layer for every node.
#[derive(Debug, Clone)]
pub struct Projections {
    dim: usize,
    self_part: Vec<f64>,
    neigh_part: Vec<f64>,
}

impl Projections {
    pub fn compute(params: &SageParams, feats: &SparseFeatures) -> Result<Self> {
        params.check_features(feats.dim())?;
        let layer = &params.layers[0];
        let (d, out) = (layer.in_dim, layer.out_dim);
        let n = feats.rows();
        let mut self_part = vec![0.0; n * out];
        let mut neigh_part = vec![0.0; n * out];
        for v in 0..n {
            let sp = &mut self_part[v * out..(v + 1) * out];
            let np = &mut neigh_part[v * out..(v + 1) * out];
            for (f, x) in feats.row(v) {
                for o in 0..out {
                    let row = o * 2 * d;
                    sp[o] += layer.weight[row + f] * x;
                    np[o] += layer.weight[row + d + f] * x;
                }
            }
        }
        Ok(Projections {
            dim: out,
            self_part,
            neigh_part,
        })
    }

    fn self_row(&self, v: usize) -> &[f64] {
        &self.self_part[v * self.dim..(v + 1) * self.dim]
    }

    fn neigh_row(&self, v: usize) -> &[f64] {
        &self.neigh_part[v * self.dim..(v + 1) * self.dim]
    }
}

/// Sampled neighborhood of one root. Level 0 is the root; the children of
/// position `i` of level `k` are `hops[k].nodes[hops[k].offsets[i]..hops[k].offsets[i + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputationGraph {
    pub root: usize,
    pub hops: Vec<Hop>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hop {
    pub nodes: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl ComputationGraph {
    pub fn depth(&self) -> usize {
        self.hops.len()
    }

    fn level(&self, j: usize) -> &[usize] {
        if j == 0 {
            std::slice::from_ref(&self.root)
        } else {
            &self.hops[j - 1].nodes
        }
    }

    fn children(&self, j: usize, i: usize) -> std::ops::Range<usize> {
        let h = &self.hops[j];
        h.offsets[i]..h.offsets[i + 1]
    }

    pub fn size(&self) -> usize {
        1 + self.hops.iter().map(|h| h.nodes.len()).sum::<usize>()
    }
}

/// Samples up to `fanouts[k]` distinct neighbors per node at hop `k + 1`.
/// Nodes with fewer neighbors than the cap contribute all of them once.
pub fn sample_computation_graph<R: Rng + ?Sized>(
    g: &Graph,
    node: usize,
    fanouts: &[usize],
    rng: &mut R,
) -> ComputationGraph {
    let mut hops: Vec<Hop> = Vec::with_capacity(fanouts.len());
    let mut frontier = vec![node];
    for &cap in fanouts {
        let mut nodes = Vec::new();
        let mut offsets = Vec::with_capacity(frontier.len() + 1);
        offsets.push(0);
        for &v in &frontier {
            let nb = g.neighbors(v);
            if nb.len() <= cap {
                nodes.extend_from_slice(nb);
            } else {
                nodes.extend(index::sample(rng, nb.len(), cap).into_iter().map(|i| nb[i]));
            }
            offsets.push(nodes.len());
        }
        frontier = nodes.clone();
        hops.push(Hop { nodes, offsets });
    }
    ComputationGraph { root: node, hops }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `pre[k][j]`: pre-activations of layer `k + 1` at level `j`, row-major.
    pre: Vec<Vec<Vec<f64>>>,
    /// `mean_in[k][j]`: neighbor means fed to layer `k + 1` (empty for layer 1).
    mean_in: Vec<Vec<Vec<f64>>>,
    /// Unnormalized output of the last layer at the root.
    out: Vec<f64>,
    norm: f64,
    embedding: Vec<f64>,
}

impl Tape {
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn check_depth(params: &SageParams, cg: &ComputationGraph) -> Result<()> {
    if cg.depth() != params.layers.len() {
        return Err(Error::Config(format!(
            "computation graph has {} hops, encoder has {} layers",
            cg.depth(),
            params.layers.len()
        )));
    }
    Ok(())
}

/// Forward pass recording the activations of one computation graph.
pub fn forward_tape(
    params: &SageParams,
    cg: &ComputationGraph,
    proj: &Projections,
) -> Result<Tape> {
    check_depth(params, cg)?;
    let depth = params.layers.len();
    let mut pre = Vec::with_capacity(depth);
    let mut mean_in = Vec::with_capacity(depth);

    // Layer 1 from cached projections.
    let l1 = &params.layers[0];
    let mut layer_pre = Vec::with_capacity(depth);
    for j in 0..depth {
        let level = cg.level(j);
        let mut buf = Vec::with_capacity(level.len() * l1.out_dim);
        for (i, &v) in level.iter().enumerate() {
            let start = buf.len();
            buf.extend(proj.self_row(v).iter().zip(&l1.bias).map(|(a, b)| a + b));
            let kids = cg.children(j, i);
            if !kids.is_empty() {
                let inv = 1.0 / kids.len() as f64;
                let row = &mut buf[start..];
                for &c in &cg.hops[j].nodes[kids] {
                    for (r, x) in row.iter_mut().zip(proj.neigh_row(c)) {
                        *r += inv * x;
                    }
                }
            }
        }
        layer_pre.push(buf);
    }
    pre.push(layer_pre);
    mean_in.push(Vec::new());

    for k in 1..depth {
        let layer = &params.layers[k];
        let (din, dout) = (layer.in_dim, layer.out_dim);
        let prev = &pre[k - 1];
        let mut layer_pre = Vec::with_capacity(depth - k);
        let mut layer_mean = Vec::with_capacity(depth - k);
        for j in 0..depth - k {
            let count = cg.level(j).len();
            let mut means = vec![0.0; count * din];
            let mut out = Vec::with_capacity(count * dout);
            for i in 0..count {
                let kids = cg.children(j, i);
                let mean = &mut means[i * din..(i + 1) * din];
                if !kids.is_empty() {
                    let inv = 1.0 / kids.len() as f64;
                    for p in kids {
                        for (m, &x) in mean.iter_mut().zip(&prev[j + 1][p * din..(p + 1) * din]) {
                            *m += inv * relu(x);
                        }
                    }
                }
                let h_self = &prev[j][i * din..(i + 1) * din];
                for o in 0..dout {
                    let w = layer.row(o);
                    let mut acc = layer.bias[o];
                    for (wi, &x) in w[..din].iter().zip(h_self) {
                        acc += wi * relu(x);
                    }
                    for (wi, &m) in w[din..].iter().zip(mean.iter()) {
                        acc += wi * m;
                    }
                    out.push(acc);
                }
            }
            layer_pre.push(out);
            layer_mean.push(means);
        }
        pre.push(layer_pre);
        mean_in.push(layer_mean);
    }

    let out: Vec<f64> = pre[depth - 1][0].iter().map(|&x| relu(x)).collect();
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    let embedding = if norm > 0.0 {
        out.iter().map(|x| x / norm).collect()
    } else {
        vec![0.0; out.len()]
    };
    Ok(Tape {
        pre,
        mean_in,
        out,
        norm,
        embedding,
    })
}

/// Sparse per-node accumulator of first-layer projection gradients.
#[derive(Debug, Clone)]
struct RowAcc {
    dim: usize,
    slot: Vec<u32>,
    nodes: Vec<usize>,
    values: Vec<f64>,
}

impl RowAcc {
    const EMPTY: u32 = u32::MAX;

    fn new(n: usize, dim: usize) -> Self {
        RowAcc {
            dim,
            slot: vec![Self::EMPTY; n],
            nodes: Vec::new(),
            values: Vec::new(),
        }
    }

    fn row_mut(&mut self, v: usize) -> &mut [f64] {
        let mut s = self.slot[v];
        if s == Self::EMPTY {
            s = self.nodes.len() as u32;
            self.slot[v] = s;
            self.nodes.push(v);
            self.values.resize(self.values.len() + self.dim, 0.0);
        }
        let s = s as usize;
        &mut self.values[s * self.dim..(s + 1) * self.dim]
    }

    fn add(&mut self, v: usize, scale: f64, g: &[f64]) {
        for (r, x) in self.row_mut(v).iter_mut().zip(g) {
            *r += scale * x;
        }
    }

    fn merge(&mut self, other: &RowAcc) {
        for (s, &v) in other.nodes.iter().enumerate() {
            self.add(v, 1.0, &other.values[s * other.dim..(s + 1) * other.dim]);
        }
    }

    fn clear(&mut self) {
        for &v in &self.nodes {
            self.slot[v] = Self::EMPTY;
        }
        self.nodes.clear();
        self.values.clear();
    }
}

/// Gradient accumulator. Layers above the first are dense; the first layer
/// keeps per-node projection gradients until [`GradBuffer::finish`].
#[derive(Debug, Clone)]
pub struct GradBuffer {
    dense: SageParams,
    self_rows: RowAcc,
    neigh_rows: RowAcc,
}

impl GradBuffer {
    pub fn new(params: &SageParams, node_count: usize) -> Self {
        let dim = params.layers[0].out_dim;
        GradBuffer {
            dense: params.zeros_like(),
            self_rows: RowAcc::new(node_count, dim),
            neigh_rows: RowAcc::new(node_count, dim),
        }
    }

    pub fn merge(&mut self, other: &GradBuffer) {
        self.dense.axpy(1.0, &other.dense);
        self.self_rows.merge(&other.self_rows);
        self.neigh_rows.merge(&other.neigh_rows);
    }

    pub fn clear(&mut self) {
        for s in self.dense.slices_mut() {
            s.fill(0.0);
        }
        self.self_rows.clear();
        self.neigh_rows.clear();
    }

    /// Folds projection gradients into first-layer weight gradients.
    pub fn finish(&self, feats: &SparseFeatures) -> SageParams {
        let mut grads = self.dense.clone();
        let layer = &mut grads.layers[0];
        let d = layer.in_dim;
        for (acc, offset) in [(&self.self_rows, 0), (&self.neigh_rows, d)] {
            for (s, &v) in acc.nodes.iter().enumerate() {
                let g = &acc.values[s * acc.dim..(s + 1) * acc.dim];
                for (f, x) in feats.row(v) {
                    for (o, &go) in g.iter().enumerate() {
                        layer.weight[o * 2 * d + offset + f] += go * x;
                    }
                }
            }
        }
        grads
    }
}

/// Accumulates the gradient of `upstream . embedding` into `acc`.
pub fn backward_tape(
    params: &SageParams,
    cg: &ComputationGraph,
    tape: &Tape,
    upstream: &[f64],
    acc: &mut GradBuffer,
) -> Result<()> {
    check_depth(params, cg)?;
    let depth = params.layers.len();
    if upstream.len() != params.output_dim() {
        return Err(Error::Config(format!(
            "upstream gradient has {} entries, embedding has {}",
            upstream.len(),
            params.output_dim()
        )));
    }
    if tape.norm == 0.0 {
        return Ok(());
    }
    // d(h/|h|)/dh = (I - z z^T)/|h|
    let z = &tape.embedding;
    let zg: f64 = z.iter().zip(upstream).map(|(a, b)| a * b).sum();
    let mut grad_h: Vec<Vec<f64>> = vec![upstream
        .iter()
        .zip(z)
        .map(|(g, zi)| (g - zi * zg) / tape.norm)
        .collect()];
    debug_assert_eq!(tape.out.len(), upstream.len());

    for k in (0..depth).rev() {
        let layer = &params.layers[k];
        let (din, dout) = (layer.in_dim, layer.out_dim);
        let levels = depth - k;
        let mut next: Vec<Vec<f64>> = if k > 0 {
            (0..=levels)
                .map(|j| vec![0.0; cg.level(j).len() * din])
                .collect()
        } else {
            Vec::new()
        };
        let dense = &mut acc.dense.layers[k];
        for j in 0..levels {
            let pre = &tape.pre[k][j];
            for (i, &v) in cg.level(j).iter().enumerate() {
                let g_pre: Vec<f64> = (0..dout)
                    .map(|o| {
                        if pre[i * dout + o] > 0.0 {
                            grad_h[j][i * dout + o]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if g_pre.iter().all(|&x| x == 0.0) {
                    continue;
                }
                for (b, g) in dense.bias.iter_mut().zip(&g_pre) {
                    *b += g;
                }
                let kids = cg.children(j, i);
                if k == 0 {
                    acc.self_rows.add(v, 1.0, &g_pre);
                    if !kids.is_empty() {
                        let inv = 1.0 / kids.len() as f64;
                        for &c in &cg.hops[j].nodes[kids] {
                            acc.neigh_rows.add(c, inv, &g_pre);
                        }
                    }
                    continue;
                }
                let h_self = &tape.pre[k - 1][j][i * din..(i + 1) * din];
                let mean = &tape.mean_in[k][j][i * din..(i + 1) * din];
                let mut g_self = vec![0.0; din];
                let mut g_mean = vec![0.0; din];
                for (o, &go) in g_pre.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    let w = layer.row(o);
                    let dw = &mut dense.weight[o * 2 * din..(o + 1) * 2 * din];
                    for t in 0..din {
                        dw[t] += go * relu(h_self[t]);
                        dw[din + t] += go * mean[t];
                        g_self[t] += go * w[t];
                        g_mean[t] += go * w[din + t];
                    }
                }
                for (a, b) in next[j][i * din..(i + 1) * din].iter_mut().zip(&g_self) {
                    *a += b;
                }
                if !kids.is_empty() {
                    let inv = 1.0 / kids.len() as f64;
                    for p in kids {
                        for (a, b) in next[j + 1][p * din..(p + 1) * din].iter_mut().zip(&g_mean) {
                            *a += inv * b;
                        }
                    }
                }
            }
        }
        if k > 0 {
            grad_h = next;
        }
    }
    Ok(())
}

/// Embedding of the root of `cg`.
pub fn forward(
    params: &SageParams,
    cg: &ComputationGraph,
    features: &FeatureMatrix,
) -> Result<Vec<f64>> {
    let feats = SparseFeatures::new(features);
    let proj = Projections::compute(params, &feats)?;
    Ok(forward_tape(params, cg, &proj)?.embedding)
}

/// Gradient of `upstream . forward(params, cg, features)` with respect to the parameters.
pub fn backward(
    params: &SageParams,
    cg: &ComputationGraph,
    features: &FeatureMatrix,
    upstream: &[f64],
) -> Result<SageParams> {
    let feats = SparseFeatures::new(features);
    let proj = Projections::compute(params, &feats)?;
    let tape = forward_tape(params, cg, &proj)?;
    let mut acc = GradBuffer::new(params, feats.rows());
    backward_tape(params, cg, &tape, upstream, &mut acc)?;
    Ok(acc.finish(&feats))
}

/// Embeds every node of `g`, sampling each neighborhood from a stream
/// seeded by `seed`.
pub fn embed_all(
    params: &SageParams,
    g: &Graph,
    fanouts: &[usize],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let feats = SparseFeatures::new(g.features());
    let proj = Projections::compute(params, &feats)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..g.node_count())
        .map(|v| {
            let cg = sample_computation_graph(g, v, fanouts, &mut rng);
            forward_tape(params, &cg, &proj).map(|t| t.embedding)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::{graph, star};

    fn one_dim_params(ws: f64, wn: f64, b: f64) -> SageParams {
        SageParams {
            layers: vec![Layer {
                in_dim: 1,
                out_dim: 1,
                weight: vec![ws, wn],
                bias: vec![b],
            }],
            seed: 0,
            config_hash: [0; 32],
        }
    }

    fn full_cg(g: &Graph, v: usize, depth: usize) -> ComputationGraph {
        sample_computation_graph(
            g,
            v,
            &vec![usize::MAX; depth],
            &mut ChaCha8Rng::seed_from_u64(0),
        )
    }

    #[test]
    fn sampling_caps_and_slack() {
        let g = star(6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cg = sample_computation_graph(&g, 0, &[2, 2], &mut rng);
        assert_eq!(cg.hops[0].nodes.len(), 2);
        assert!(cg.hops[0].nodes.iter().all(|&v| v >= 1));
        assert_eq!(cg.hops[1].nodes, vec![0, 0]);

        let cg = sample_computation_graph(&g, 0, &[10], &mut rng);
        assert_eq!(cg.hops[0].nodes, vec![1, 2, 3, 4, 5, 6]);

        let iso = graph(3, &[(0, 1)]);
        let cg = sample_computation_graph(&iso, 2, &[3, 3], &mut rng);
        assert!(cg.hops.iter().all(|h| h.nodes.is_empty()));
        assert_eq!(cg.size(), 1);
    }

    #[test]
    fn sampled_nodes_are_neighbors() {
        let g = crate::synth::erdos_renyi(40, 0.2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in 0..40 {
            let cg = sample_computation_graph(&g, v, &[3, 4, 2], &mut rng);
            for j in 0..3 {
                for (i, &p) in cg.level(j).iter().enumerate() {
                    for &c in &cg.hops[j].nodes[cg.children(j, i)] {
                        assert!(g.has_edge(p, c));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_embedding() {
        let g = crate::synth::erdos_renyi(12, 0.3, 4);
        let cfg = SageConfig {
            num_layers: 2,
            hidden_dim: 3,
            fanouts: vec![5, 5],
            seed: 1,
        };
        let mut p = SageParams::init(&cfg, g.feature_dim()).unwrap();
        for s in p.slices_mut() {
            s.fill(0.0);
        }
        let cg = full_cg(&g, 0, 2);
        assert!(forward(&p, &cg, g.features())
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
        let grads = backward(&p, &cg, g.features(), &[1.0, 1.0, 1.0]).unwrap();
        assert!(grads.slices().all(|s| s.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn one_dim_forward_is_relu_of_self_plus_mean() {
        // node 0 has feature 2, neighbors with features 1 and -5 -> mean -2.
        let features = FeatureMatrix::new(3, 1, vec![2.0, 1.0, -5.0]).unwrap();
        let (g, _) = Graph::from_edges(features, &[(0, 1), (0, 2)], None).unwrap();
        let cg = full_cg(&g, 0, 1);
        let p = one_dim_params(1.0, 1.0, 0.0);
        let pre = {
            let feats = SparseFeatures::new(g.features());
            let proj = Projections::compute(&p, &feats).unwrap();
            forward_tape(&p, &cg, &proj).unwrap().out
        };
        assert_eq!(pre, vec![0.0]);
        // With self weight 3: relu(6 - 2) = 4, normalized to 1.
        let p = one_dim_params(3.0, 1.0, 0.0);
        assert_eq!(forward(&p, &cg, g.features()).unwrap(), vec![1.0]);
    }

    #[test]
    fn output_is_unit_norm() {
        let g = crate::synth::connected(20, 15, 5, 9);
        let cfg = SageConfig {
            num_layers: 2,
            hidden_dim: 6,
            fanouts: vec![4, 4],
            seed: 3,
        };
        let p = SageParams::init(&cfg, 5).unwrap();
        for v in 0..20 {
            let z = forward(&p, &full_cg(&g, v, 2), g.features()).unwrap();
            let n: f64 = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let g = crate::synth::erdos_renyi(5, 0.5, 1);
        let cfg = SageConfig {
            num_layers: 1,
            hidden_dim: 2,
            fanouts: vec![2],
            seed: 0,
        };
        let p = SageParams::init(&cfg, 7).unwrap();
        let cg = full_cg(&g, 0, 1);
        assert!(matches!(
            forward(&p, &cg, g.features()),
            Err(Error::Config(_))
        ));
        let p = SageParams::init(&cfg, 4).unwrap();
        assert!(matches!(
            forward(&p, &full_cg(&g, 0, 2), g.features()),
            Err(Error::Config(_))
        ));
        assert!(SageConfig {
            fanouts: vec![1, 2],
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn neighbor_order_does_not_matter() {
        let g = crate::synth::connected(15, 10, 3, 2);
        let cfg = SageConfig {
            num_layers: 2,
            hidden_dim: 4,
            fanouts: vec![5, 5],
            seed: 5,
        };
        let p = SageParams::init(&cfg, 3).unwrap();
        let cg = full_cg(&g, 0, 2);
        let mut reversed = cg.clone();
        // Reverse the root's children, carrying their subtrees along.
        let kids: Vec<usize> = reversed.hops[0].nodes.clone();
        let sub: Vec<Vec<usize>> = (0..kids.len())
            .map(|i| cg.hops[1].nodes[cg.children(1, i)].to_vec())
            .collect();
        reversed.hops[0].nodes = kids.into_iter().rev().collect();
        let mut nodes = Vec::new();
        let mut offsets = vec![0];
        for s in sub.iter().rev() {
            nodes.extend(s.iter().rev());
            offsets.push(nodes.len());
        }
        reversed.hops[1] = Hop { nodes, offsets };
        let a = forward(&p, &cg, g.features()).unwrap();
        let b = forward(&p, &reversed, g.features()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..6 {
            let g = crate::synth::connected(8, 6, 3, seed);
            let cfg = SageConfig {
                num_layers: 2,
                hidden_dim: 4,
                fanouts: vec![3, 3],
                seed,
            };
            let p = SageParams::init(&cfg, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cg = sample_computation_graph(&g, 0, &cfg.fanouts, &mut rng);
            let up: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let head = |q: &SageParams| -> f64 {
                forward(q, &cg, g.features())
                    .unwrap()
                    .iter()
                    .zip(&up)
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let grads = backward(&p, &cg, g.features(), &up).unwrap();
            let h = 1e-5;
            for i in 0..p.num_params() {
                let mut plus = p.clone();
                plus.set(i, p.get(i) + h);
                let mut minus = p.clone();
                minus.set(i, p.get(i) - h);
                let fd = (head(&plus) - head(&minus)) / (2.0 * h);
                let an = grads.get(i);
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-4, "seed {seed} param {i}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn gradient_is_linear_in_upstream() {
        let g = crate::synth::connected(10, 8, 3, 4);
        let cfg = SageConfig {
            num_layers: 2,
            hidden_dim: 3,
            fanouts: vec![4, 4],
            seed: 2,
        };
        let p = SageParams::init(&cfg, 3).unwrap();
        let cg = full_cg(&g, 1, 2);
        let u = [0.3, -0.7, 1.1];
        let a = backward(&p, &cg, g.features(), &u).unwrap();
        let scaled: Vec<f64> = u.iter().map(|x| -2.5 * x).collect();
        let b = backward(&p, &cg, g.features(), &scaled).unwrap();
        for i in 0..p.num_params() {
            assert!((b.get(i) + 2.5 * a.get(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = SageConfig {
            num_layers: 2,
            hidden_dim: 3,
            fanouts: vec![2, 2],
            seed: 11,
        };
        let p = SageParams::init(&cfg, 5).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(SageParams::read_from(&buf[..]).unwrap(), p);
        assert!(SageParams::read_from(&buf[..10]).is_err());
    }

    #[test]
    fn embed_all_is_deterministic() {
        let g = crate::synth::connected(25, 20, 4, 1);
        let cfg = SageConfig {
            num_layers: 2,
            hidden_dim: 5,
            fanouts: vec![2, 2],
            seed: 0,
        };
        let p = SageParams::init(&cfg, 4).unwrap();
        assert_eq!(
            embed_all(&p, &g, &cfg.fanouts, 7).unwrap(),
            embed_all(&p, &g, &cfg.fanouts, 7).unwrap()
        );
    }
}
