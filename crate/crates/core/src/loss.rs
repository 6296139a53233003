//! Training objective and trainer.
//!
//! The base objective is the unsupervised GraphSAGE contrastive loss. The
//! fairness term pulls the embedding distance of a pair towards its
//! normalized graph distance, weighted by the inverse degree of the anchor:
//!
//! ```text
//! f(u, v) = (max_deg / deg(u)) * ln^2( (D(z_u, z_v) / k) * (diameter / d(u, v)) )
//! ```
//!
//! and enters the objective as `L_o + alpha * (f(u, v) + f(u, v_n))`, or with
//! only the positive or only the negative part for the ablation variants.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distance::{DistanceOracle, UNREACHABLE};
use crate::encoder::{
    backward_tape, forward_tape, sample_computation_graph, ComputationGraph, GradBuffer,
    Projections, SageConfig, SageParams, SparseFeatures,
};
use crate::error::{Error, Result};
use crate::graph::{degree_centrality, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    #[serde(rename = "cafin")]
    CafinFull,
    #[serde(rename = "cafin-p")]
    CafinP,
    #[serde(rename = "cafin-n")]
    CafinN,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::CafinFull,
        Variant::CafinP,
        Variant::CafinN,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::CafinFull => "cafin",
            Variant::CafinP => "cafin-p",
            Variant::CafinN => "cafin-n",
        }
    }

    fn uses_positive(self) -> bool {
        matches!(self, Variant::CafinFull | Variant::CafinP)
    }

    fn uses_negative(self) -> bool {
        matches!(self, Variant::CafinFull | Variant::CafinN)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    /// Embedding-distance normalizer. Unit-norm embeddings are at most 2 apart.
    pub k: f64,
    /// Negatives per triple.
    pub negatives: usize,
    pub variant: Variant,
    /// Minimum hop distance of a negative from its anchor.
    pub min_neg_threshold: u16,
    pub walk_length: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.05,
            k: 2.0,
            negatives: 1,
            variant: Variant::CafinFull,
            min_neg_threshold: 3,
            walk_length: 5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan()
            || self.alpha < 0.0
            || self.k.is_nan()
            || self.k <= 0.0
            || self.negatives == 0
        {
            return Err(Error::Config(
                "loss needs alpha >= 0, k > 0 and at least one negative".into(),
            ));
        }
        if self.walk_length == 0 {
            return Err(Error::Config("walk_length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrainTriple {
    pub u: usize,
    pub v: usize,
    pub negatives: Vec<usize>,
}

/// A node visited by one random walk of `walk_length` steps from `u`,
/// chosen uniformly over walk positions other than `u`. `None` for isolated `u`.
pub fn sample_positive<R: Rng + ?Sized>(
    g: &Graph,
    u: usize,
    walk_length: usize,
    rng: &mut R,
) -> Option<usize> {
    let mut cur = u;
    let mut visits = Vec::with_capacity(walk_length);
    for _ in 0..walk_length {
        let nb = g.neighbors(cur);
        let Some(&next) = nb.choose(rng) else { break };
        cur = next;
        if cur != u {
            visits.push(cur);
        }
    }
    visits.choose(rng).copied()
}

const NEGATIVE_TRIES: usize = 20;

/// Uniform rejection sampling of a node at least `threshold` hops from `u`
/// (unreachable counts as far). After a bounded number of tries the
/// farthest candidate seen is returned. `None` only when there is no other node.
pub fn sample_negative<R: Rng + ?Sized>(
    u: usize,
    oracle: &DistanceOracle,
    threshold: u16,
    rng: &mut R,
) -> Option<usize> {
    let n = oracle.node_count();
    if n < 2 {
        return None;
    }
    let mut best: Option<(u16, usize)> = None;
    for _ in 0..NEGATIVE_TRIES {
        let mut v = rng.gen_range(0..n - 1);
        if v >= u {
            v += 1;
        }
        let d = oracle.query(u, v);
        if d == UNREACHABLE || d >= threshold {
            return Some(v);
        }
        if best.is_none_or(|(bd, _)| d > bd) {
            best = Some((d, v));
        }
    }
    best.map(|(_, v)| v)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseLoss {
    pub value: f64,
    pub grad_u: Vec<f64>,
    pub grad_v: Vec<f64>,
    pub grad_negs: Vec<Vec<f64>>,
}

/// `-ln s(z_u.z_v) - Q * mean_n ln s(-z_u.z_n)` with its gradients.
pub fn base_loss(z_u: &[f64], z_v: &[f64], z_negs: &[&[f64]], q: usize) -> BaseLoss {
    let sp = dot(z_u, z_v);
    // -ln s(x) = softplus(-x)
    let mut value = softplus(-sp);
    let a_pos = -sigmoid(-sp);
    let mut grad_u: Vec<f64> = z_v.iter().map(|x| a_pos * x).collect();
    let grad_v: Vec<f64> = z_u.iter().map(|x| a_pos * x).collect();
    let scale = if z_negs.is_empty() {
        0.0
    } else {
        q as f64 / z_negs.len() as f64
    };
    let mut grad_negs = Vec::with_capacity(z_negs.len());
    for z_n in z_negs {
        let sn = dot(z_u, z_n);
        value += scale * softplus(sn);
        let a = scale * sigmoid(sn);
        for (g, x) in grad_u.iter_mut().zip(z_n.iter()) {
            *g += a * x;
        }
        grad_negs.push(z_u.iter().map(|x| a * x).collect());
    }
    BaseLoss {
        value,
        grad_u,
        grad_v,
        grad_negs,
    }
}

/// Read-only graph statistics the fairness term needs.
#[derive(Debug, Clone, Copy)]
pub struct FairnessContext<'a> {
    pub degrees: &'a [usize],
    pub oracle: &'a DistanceOracle,
    pub diameter: f64,
    pub max_degree: usize,
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    SameNode,
    Unreachable,
    ZeroDegree,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FairnessTerm {
    Value {
        value: f64,
        grad_u: Vec<f64>,
        grad_v: Vec<f64>,
    },
    Skipped(SkipReason),
}

/// Embedding distances below this are clamped before the logarithm.
pub const DISTANCE_EPS: f64 = 1e-9;

pub fn fairness_term(
    u: usize,
    v: usize,
    z_u: &[f64],
    z_v: &[f64],
    ctx: &FairnessContext<'_>,
) -> FairnessTerm {
    let hops = ctx.oracle.query(u, v);
    if hops == 0 {
        return FairnessTerm::Skipped(SkipReason::SameNode);
    }
    if hops == UNREACHABLE {
        return FairnessTerm::Skipped(SkipReason::Unreachable);
    }
    let deg = ctx.degrees[u];
    if deg == 0 {
        return FairnessTerm::Skipped(SkipReason::ZeroDegree);
    }
    let diff: Vec<f64> = z_u.iter().zip(z_v).map(|(a, b)| a - b).collect();
    let dist = dot(&diff, &diff).sqrt();
    let clamped = dist < DISTANCE_EPS;
    let d_emb = if clamped { DISTANCE_EPS } else { dist };
    let weight = ctx.max_degree as f64 / deg as f64;
    let log_ratio = (d_emb / ctx.k * ctx.diameter / f64::from(hops)).ln();
    let value = weight * log_ratio * log_ratio;
    // d value / d D = 2 w ln(r) / D, and dD/dz_u = (z_u - z_v) / D.
    let coef = if clamped {
        0.0
    } else {
        2.0 * weight * log_ratio / (d_emb * d_emb)
    };
    let grad_u: Vec<f64> = diff.iter().map(|x| coef * x).collect();
    let grad_v = grad_u.iter().map(|x| -x).collect();
    FairnessTerm::Value {
        value,
        grad_u,
        grad_v,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    /// Objective value for the configured variant.
    pub value: f64,
    pub base: f64,
    /// `f(u, v) + mean_n f(u, v_n)` regardless of variant, for monitoring.
    pub fairness: f64,
    pub skipped: usize,
    pub grad_u: Vec<f64>,
    pub grad_v: Vec<f64>,
    pub grad_negs: Vec<Vec<f64>>,
}

/// Objective of one triple and its gradients with respect to the embeddings.
pub fn total_loss(
    triple: &TrainTriple,
    z_u: &[f64],
    z_v: &[f64],
    z_negs: &[&[f64]],
    cfg: &LossConfig,
    ctx: &FairnessContext<'_>,
) -> TotalLoss {
    let base = base_loss(z_u, z_v, z_negs, cfg.negatives);
    let mut out = TotalLoss {
        value: base.value,
        base: base.value,
        fairness: 0.0,
        skipped: 0,
        grad_u: base.grad_u,
        grad_v: base.grad_v,
        grad_negs: base.grad_negs,
    };
    let axpy = |dst: &mut [f64], a: f64, src: &[f64]| {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += a * s;
        }
    };
    let alpha = cfg.alpha;
    match fairness_term(triple.u, triple.v, z_u, z_v, ctx) {
        FairnessTerm::Value {
            value,
            grad_u,
            grad_v,
        } => {
            out.fairness += value;
            if cfg.variant.uses_positive() {
                out.value += alpha * value;
                axpy(&mut out.grad_u, alpha, &grad_u);
                axpy(&mut out.grad_v, alpha, &grad_v);
            }
        }
        FairnessTerm::Skipped(_) => out.skipped += 1,
    }
    let share = 1.0 / z_negs.len().max(1) as f64;
    for (i, (&n, z_n)) in triple.negatives.iter().zip(z_negs).enumerate() {
        match fairness_term(triple.u, n, z_u, z_n, ctx) {
            FairnessTerm::Value {
                value,
                grad_u,
                grad_v,
            } => {
                out.fairness += share * value;
                if cfg.variant.uses_negative() {
                    out.value += alpha * share * value;
                    axpy(&mut out.grad_u, alpha * share, &grad_u);
                    axpy(&mut out.grad_negs[i], alpha * share, &grad_v);
                }
            }
            FairnessTerm::Skipped(_) => out.skipped += 1,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate is multiplied by `gamma` every `step_size` epochs.
    pub step_size: usize,
    pub gamma: f64,
    /// Triples per parameter update.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 0.0025,
            step_size: 40,
            gamma: 0.5,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.gamma.powi((epoch / self.step_size.max(1)) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub base_mean: f64,
    pub fairness_mean: f64,
    pub objective_mean: f64,
    pub skips: usize,
    pub triples: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: SageParams,
    pub trace: Vec<EpochStats>,
    /// SHA-256 over the sampled triple sequence, for paired-run checks.
    pub triple_hash: String,
}

/// Loss trace as CSV.
pub fn trace_csv(trace: &[EpochStats]) -> String {
    let mut s = String::from("epoch,lr,base_mean,fairness_mean,objective_mean,skips,triples\n");
    for e in trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.epoch, e.lr, e.base_mean, e.fairness_mean, e.objective_mean, e.skips, e.triples
        );
    }
    s
}

struct Sample {
    triple: TrainTriple,
    graphs: Vec<ComputationGraph>,
}

#[derive(Default)]
struct ChunkStats {
    base: f64,
    fairness: f64,
    objective: f64,
    skips: usize,
}

/// Triples per gradient buffer. Buffers are reduced in a fixed order, so
/// results do not depend on the number of workers.
const CHUNK: usize = 8;

/// Minibatch gradient descent over one triple per node per epoch.
///
/// Gradients are summed over the triples of a batch. Pass `workers > 1` to
/// evaluate triples on a thread pool; results are identical for any worker count.
pub fn train(
    g1: &Graph,
    oracle: &DistanceOracle,
    sage: &SageConfig,
    loss: &LossConfig,
    cfg: &TrainConfig,
    workers: usize,
) -> Result<TrainOutcome> {
    loss.validate()?;
    if oracle.node_count() != g1.node_count() {
        return Err(Error::Argument(format!(
            "oracle covers {} nodes, training graph has {}",
            oracle.node_count(),
            g1.node_count()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if workers <= 1 {
        return train_inner(g1, oracle, sage, loss, cfg, false);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(|| train_inner(g1, oracle, sage, loss, cfg, true))
}

fn train_inner(
    g1: &Graph,
    oracle: &DistanceOracle,
    sage: &SageConfig,
    loss: &LossConfig,
    cfg: &TrainConfig,
    parallel: bool,
) -> Result<TrainOutcome> {
    let n = g1.node_count();
    let feats = SparseFeatures::new(g1.features());
    let mut params = SageParams::init(sage, g1.feature_dim())?;
    let degrees = degree_centrality(g1);
    let ctx = FairnessContext {
        degrees: &degrees,
        oracle,
        diameter: f64::from(oracle.diameter()),
        max_degree: degrees.iter().copied().max().unwrap_or(0),
        k: loss.k,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut hasher = Sha256::new();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut stats = ChunkStats::default();
        let mut triples = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let samples = draw_samples(g1, oracle, batch, sage, loss, &mut rng, &mut hasher);
            if samples.is_empty() {
                continue;
            }
            triples += samples.len();
            let proj = Projections::compute(&params, &feats)?;
            let eval = |chunk: &[Sample]| evaluate_chunk(&params, &proj, chunk, loss, &ctx, n);
            let parts: Vec<Result<(GradBuffer, ChunkStats)>> = if parallel {
                samples.par_chunks(CHUNK).map(eval).collect()
            } else {
                samples.chunks(CHUNK).map(eval).collect()
            };
            let mut total = GradBuffer::new(&params, n);
            let mut batch_objective = 0.0;
            for part in parts {
                let (buf, s) = part?;
                total.merge(&buf);
                stats.base += s.base;
                stats.fairness += s.fairness;
                stats.objective += s.objective;
                stats.skips += s.skips;
                batch_objective += s.objective;
            }
            if !batch_objective.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_objective,
                });
            }
            params.axpy(-lr, &total.finish(&feats));
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
        let denom = triples.max(1) as f64;
        trace.push(EpochStats {
            epoch,
            lr,
            base_mean: stats.base / denom,
            fairness_mean: stats.fairness / denom,
            objective_mean: stats.objective / denom,
            skips: stats.skips,
            triples,
        });
    }
    let triple_hash = hasher.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });
    Ok(TrainOutcome {
        params,
        trace,
        triple_hash,
    })
}

fn draw_samples(
    g: &Graph,
    oracle: &DistanceOracle,
    batch: &[usize],
    sage: &SageConfig,
    loss: &LossConfig,
    rng: &mut ChaCha8Rng,
    hasher: &mut Sha256,
) -> Vec<Sample> {
    let mut out = Vec::with_capacity(batch.len());
    for &u in batch {
        let Some(v) = sample_positive(g, u, loss.walk_length, rng) else {
            continue;
        };
        let negatives: Vec<usize> = (0..loss.negatives)
            .filter_map(|_| sample_negative(u, oracle, loss.min_neg_threshold, rng))
            .collect();
        if negatives.is_empty() {
            continue;
        }
        let mut graphs = Vec::with_capacity(2 + negatives.len());
        for &x in [u, v].iter().chain(&negatives) {
            graphs.push(sample_computation_graph(g, x, &sage.fanouts, rng));
        }
        for x in [u, v].iter().chain(&negatives) {
            hasher.update((*x as u64).to_le_bytes());
        }
        out.push(Sample {
            triple: TrainTriple { u, v, negatives },
            graphs,
        });
    }
    out
}

fn evaluate_chunk(
    params: &SageParams,
    proj: &Projections,
    chunk: &[Sample],
    loss: &LossConfig,
    ctx: &FairnessContext<'_>,
    n: usize,
) -> Result<(GradBuffer, ChunkStats)> {
    let mut buf = GradBuffer::new(params, n);
    let mut stats = ChunkStats::default();
    for s in chunk {
        let tapes = s
            .graphs
            .iter()
            .map(|cg| forward_tape(params, cg, proj))
            .collect::<Result<Vec<_>>>()?;
        let z_negs: Vec<&[f64]> = tapes[2..].iter().map(|t| t.embedding()).collect();
        let l = total_loss(
            &s.triple,
            tapes[0].embedding(),
            tapes[1].embedding(),
            &z_negs,
            loss,
            ctx,
        );
        stats.base += l.base;
        stats.fairness += l.fairness;
        stats.objective += l.value;
        stats.skips += l.skipped;
        let upstream = [&l.grad_u, &l.grad_v].into_iter().chain(&l.grad_negs);
        for ((cg, tape), g) in s.graphs.iter().zip(&tapes).zip(upstream) {
            backward_tape(params, cg, tape, g, &mut buf)?;
        }
    }
    Ok((buf, stats))
}
