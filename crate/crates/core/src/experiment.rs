//! End-to-end experiment driver behind the `preprocess`, `run` and `report`
//! commands.
//!
//! Everything a run writes except `timings.json` is a pure function of the
//! config, so repeated runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distance::{build_exact, build_landmark, DistanceOracle, ExactOptions};
use crate::downstream::{edge_feature, fit, FitOptions, Mode, Targets};
use crate::encoder::{embed_all, SageConfig};
use crate::error::{Error, Result};
use crate::graph::{
    degree_centrality, load_content_cites, load_edge_list, median_group_split, Graph,
    GroupAssignment, Labels,
};
use crate::loss::{trace_csv, train, LossConfig, TrainConfig, Variant};
use crate::metrics::{
    self, ca, cv, degree_buckets, edge_group, edge_group_accuracies, ii, imparity_lp, imparity_nc,
    imparity_nc_multilabel, t_overhead, FairnessReport, Overhead, Task,
};
use crate::splits::{edge_split, node_split};
use crate::synth::CitationLike;

pub const ENV_OUTPUT_DIR: &str = "CAFIN_OUTPUT_DIR";
pub const ENV_WORKERS: &str = "CAFIN_WORKERS";

/// Offset between the run seed and the neighborhood-sampling seed used at
/// embedding time, so inference does not replay the training stream.
const EMBED_SEED_OFFSET: u64 = 0x9e37_79b9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Citation-dataset layout (`<name>.content` + `<name>.cites`), an
    /// alternative to `edges` / `features` / `labels`.
    pub content: Option<PathBuf>,
    pub cites: Option<PathBuf>,
    /// Built-in generator used when no file source is given. Only
    /// `"cora-scale"` is recognized.
    pub synthetic: Option<String>,
    pub synthetic_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            edges: None,
            features: None,
            labels: None,
            content: None,
            cites: None,
            synthetic: Some("cora-scale".into()),
            synthetic_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub task: Task,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            task: Task::LinkPrediction,
            variants: vec![Variant::Baseline, Variant::CafinFull],
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("cafin-out"),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Exact,
    Landmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub mode: OracleKind,
    pub landmarks: usize,
    /// Landmark draw seed. Defaults to the run seed.
    pub landmark_seed: Option<u64>,
    pub memory_budget_bytes: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            mode: OracleKind::Exact,
            landmarks: 100,
            landmark_seed: None,
            memory_budget_bytes: ExactOptions::default().memory_budget,
        }
    }
}

impl OracleConfig {
    pub fn build(&self, g: &Graph, seed: u64, workers: usize) -> Result<DistanceOracle> {
        match self.mode {
            OracleKind::Exact => build_exact(
                g,
                ExactOptions {
                    workers,
                    memory_budget: self.memory_budget_bytes,
                },
            ),
            OracleKind::Landmark => build_landmark(
                g,
                self.landmarks.min(g.node_count()),
                self.landmark_seed.unwrap_or(seed),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamConfig {
    pub reg: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        let f = FitOptions::default();
        DownstreamConfig {
            reg: f.reg,
            max_iter: f.max_iter,
            tol: f.tol,
        }
    }
}

impl DownstreamConfig {
    fn options(&self) -> FitOptions {
        FitOptions {
            reg: self.reg,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

/// Full experiment description, read from TOML.
///
/// The `seed` fields of `[encoder]` and `[train]` are replaced by each run
/// seed, and `[loss].variant` by each entry of `experiment.variants`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub experiment: RunSection,
    pub oracle: OracleConfig,
    pub encoder: SageConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub downstream: DownstreamConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative data paths resolve against the file's
    /// directory. Environment overrides are applied.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.data.edges,
            &mut cfg.data.features,
            &mut cfg.data.labels,
            &mut cfg.data.content,
            &mut cfg.data.cites,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.apply_overrides(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(dir) = lookup(ENV_OUTPUT_DIR) {
            self.experiment.output_dir = PathBuf::from(dir);
        }
        if let Some(w) = lookup(ENV_WORKERS) {
            self.experiment.workers = w
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_WORKERS}={w:?} is not a worker count")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds is empty".into()));
        }
        if e.variants.is_empty() {
            return Err(Error::Config("experiment.variants is empty".into()));
        }
        let mut v = e.variants.clone();
        v.sort();
        v.dedup();
        if v.len() != e.variants.len() {
            return Err(Error::Config("experiment.variants has duplicates".into()));
        }
        let mut s = e.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != e.seeds.len() {
            return Err(Error::Config("experiment.seeds has duplicates".into()));
        }
        if e.workers == 0 {
            return Err(Error::Config("experiment.workers must be positive".into()));
        }
        let d = &self.data;
        if d.edges.is_some() != d.features.is_some() {
            return Err(Error::Config(
                "data.edges and data.features go together".into(),
            ));
        }
        if d.content.is_some() != d.cites.is_some() {
            return Err(Error::Config(
                "data.content and data.cites go together".into(),
            ));
        }
        if d.edges.is_some() && d.content.is_some() {
            return Err(Error::Config(
                "give either data.edges or data.content, not both".into(),
            ));
        }
        if d.edges.is_none() && d.content.is_none() && d.synthetic.is_none() {
            return Err(Error::Config(
                "no data source: set data.edges, data.content or data.synthetic".into(),
            ));
        }
        self.encoder.validate()?;
        self.loss.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Hash of everything that affects results (output dir and worker
    /// count excluded).
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.experiment.output_dir = PathBuf::new();
        c.experiment.workers = 1;
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("config serializes"));
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load_graph(&self) -> Result<Graph> {
        let d = &self.data;
        if let (Some(e), Some(f)) = (&d.edges, &d.features) {
            return Ok(load_edge_list(e, f, d.labels.as_deref())?.0);
        }
        if let (Some(c), Some(e)) = (&d.content, &d.cites) {
            return Ok(load_content_cites(c, e)?.0);
        }
        match d.synthetic.as_deref() {
            Some("cora-scale") => Ok(CitationLike::cora_scale(d.synthetic_seed).generate()),
            other => Err(Error::Config(format!(
                "unknown synthetic dataset {other:?}"
            ))),
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn groups_for(g: &Graph) -> Result<GroupAssignment> {
    let c: Vec<f64> = degree_centrality(g).iter().map(|&d| d as f64).collect();
    median_group_split(&c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub nodes: usize,
    pub edges: usize,
    pub mode: OracleKind,
    pub landmarks: usize,
    pub diameter: u16,
    pub oracle_bytes: usize,
    pub build_seconds: f64,
}

/// Builds the full-graph oracle and writes it with degrees and groups to
/// `<output>/preprocess/`.
pub fn cmd_preprocess(cfg: &ExperimentConfig) -> Result<PreprocessSummary> {
    let g = cfg.load_graph()?;
    let dir = cfg.experiment.output_dir.join("preprocess");
    mkdir(&dir)?;
    let start = Instant::now();
    let oracle = cfg.oracle.build(
        &g,
        cfg.oracle.landmark_seed.unwrap_or(0),
        cfg.experiment.workers,
    )?;
    let build_seconds = start.elapsed().as_secs_f64();
    oracle.save(&dir.join("oracle.bin"))?;
    let degrees = degree_centrality(&g);
    let mut deg_csv = String::from("node,degree\n");
    for (v, d) in degrees.iter().enumerate() {
        let _ = writeln!(deg_csv, "{v},{d}");
    }
    write(&dir.join("degrees.csv"), deg_csv)?;
    write(&dir.join("groups.json"), to_json(&groups_for(&g)?)?)?;
    let summary = PreprocessSummary {
        nodes: g.node_count(),
        edges: g.edge_count(),
        mode: cfg.oracle.mode,
        landmarks: oracle.landmarks().len(),
        diameter: oracle.diameter(),
        oracle_bytes: oracle.encoded_len(),
        build_seconds,
    };
    write(&dir.join("preprocess.json"), to_json(&summary)?)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

/// Wall-clock times of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub oracle_seconds: f64,
    pub train_seconds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub task: Task,
    pub variant: String,
    pub seeds_ok: usize,
    pub mean_imparity: f64,
    pub mean_accuracy: f64,
    pub mean_ii_percent: Option<f64>,
    pub cv_ii_percent: Option<f64>,
    pub mean_ca_points: Option<f64>,
}

impl AggregateRow {
    pub const CSV_HEADER: &'static str =
        "task,variant,seeds_ok,mean_imparity,mean_accuracy,mean_ii_percent,cv_ii_percent,mean_ca_points";

    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.task.name(),
            self.variant,
            self.seeds_ok,
            self.mean_imparity,
            self.mean_accuracy,
            o(self.mean_ii_percent),
            o(self.cv_ii_percent),
            o(self.mean_ca_points)
        )
    }
}

/// Overhead per variant, from mean times across successful seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub variant: String,
    pub mean_oracle_seconds: f64,
    pub mean_train_delta_seconds: f64,
    pub t_seconds_per_point: Option<Overhead>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub seeds: Vec<SeedTiming>,
    pub overhead: Vec<OverheadRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReports {
    pub config_hash: String,
    pub reports: Vec<FairnessReport>,
    pub failures: Vec<SeedFailure>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub reports: RunReports,
    pub aggregate: Vec<AggregateRow>,
    pub timings: Timings,
    /// Sampled-triple hash per (seed, variant).
    pub triple_hashes: BTreeMap<(u64, String), String>,
}

impl RunSummary {
    pub fn all_ok(&self) -> bool {
        self.reports.failures.is_empty()
    }
}

/// Per-node (or per-edge) results of one evaluated model.
struct Evaluation {
    imparity: f64,
    accuracy: f64,
    slope: Option<f64>,
    /// (degree, accuracy, count) rows for the evaluation nodes.
    buckets: Vec<(usize, f64, usize)>,
}

struct SeedOutput {
    reports: Vec<FairnessReport>,
    timing: SeedTiming,
    hashes: Vec<(String, String)>,
}

/// Split, train every variant on identical triples, evaluate and write the
/// seed directory.
fn run_seed(
    cfg: &ExperimentConfig,
    g: &Graph,
    groups: &GroupAssignment,
    seed: u64,
    hash: &str,
) -> Result<SeedOutput> {
    let task = cfg.experiment.task;
    let dir = cfg.experiment.output_dir.join(format!("seed-{seed}"));
    mkdir(&dir)?;
    let workers = cfg.experiment.workers;

    #[allow(clippy::large_enum_variant)]
    enum Split {
        Node(crate::splits::NodeSplitBundle),
        Edge(crate::splits::EdgeSplitBundle),
    }
    let split = match task {
        Task::NodeClassification => {
            let b = node_split(g, seed)?;
            write(&dir.join("split.txt"), b.manifest())?;
            Split::Node(b)
        }
        Task::LinkPrediction => {
            let b = edge_split(g, seed)?;
            write(&dir.join("split.txt"), b.manifest())?;
            Split::Edge(b)
        }
    };
    let g1 = match &split {
        Split::Node(b) => &b.g1.graph,
        Split::Edge(b) => &b.g1,
    };

    let start = Instant::now();
    let oracle = cfg.oracle.build(g1, seed, workers)?;
    let oracle_seconds = start.elapsed().as_secs_f64();
    let oracle_path = dir.join("oracle.bin");
    oracle.save(&oracle_path)?;
    let oracle = DistanceOracle::load(&oracle_path)?;

    let sage = SageConfig {
        seed,
        ..cfg.encoder.clone()
    };
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let mut timing = SeedTiming {
        seed,
        oracle_seconds,
        train_seconds: BTreeMap::new(),
    };
    let mut evals = Vec::new();
    let mut hashes = Vec::new();
    for &variant in &cfg.experiment.variants {
        let lcfg = LossConfig {
            variant,
            ..cfg.loss.clone()
        };
        log::info!("seed {seed}: training {variant}");
        let start = Instant::now();
        let out = train(g1, &oracle, &sage, &lcfg, &tcfg, workers)?;
        timing
            .train_seconds
            .insert(variant.name().into(), start.elapsed().as_secs_f64());
        write(
            &dir.join(format!("trace-{variant}.csv")),
            trace_csv(&out.trace),
        )?;
        out.params
            .save(&dir.join(format!("params-{variant}.ckpt")))?;
        hashes.push((variant.name().to_string(), out.triple_hash.clone()));

        let embed_seed = seed.wrapping_add(EMBED_SEED_OFFSET);
        let eval = match &split {
            Split::Node(b) => {
                let z2 = embed_all(&out.params, &b.g2.graph, &sage.fanouts, embed_seed)?;
                let z3 = embed_all(&out.params, &b.g3.graph, &sage.fanouts, embed_seed)?;
                evaluate_nc(cfg, g, groups, b, &z2, &z3)?
            }
            Split::Edge(b) => {
                let z = embed_all(&out.params, g1, &sage.fanouts, embed_seed)?;
                evaluate_lp(cfg, groups, b, &z)?
            }
        };
        if let Some(rows) = (!eval.buckets.is_empty()).then_some(&eval.buckets) {
            let mut csv = String::from("degree,accuracy,count\n");
            for (d, a, n) in rows {
                let _ = writeln!(csv, "{d},{a},{n}");
            }
            write(&dir.join(format!("per-degree-{variant}.csv")), csv)?;
        }
        evals.push((variant, eval));
    }

    if let Some((first, rest)) = hashes.split_first() {
        if let Some((v, _)) = rest.iter().find(|(_, h)| h != &first.1) {
            return Err(Error::Consistency(format!(
                "{v} saw a different triple sequence than {}",
                first.0
            )));
        }
    }

    let base = evals
        .iter()
        .find(|(v, _)| *v == Variant::Baseline)
        .map(|(_, e)| (e.imparity, e.accuracy));
    let reports: Vec<FairnessReport> = evals
        .iter()
        .map(|(variant, e)| {
            let (ii_percent, ca_points) = match base {
                Some((bi, ba)) if *variant != Variant::Baseline => {
                    let ii_v = ii(bi, e.imparity)
                        .map_err(|err| log::warn!("seed {seed}: {err}"))
                        .ok();
                    (ii_v, Some(ca(e.accuracy, ba)))
                }
                _ => (None, None),
            };
            FairnessReport {
                task,
                variant: variant.name().into(),
                seed,
                config_hash: hash.into(),
                imparity: e.imparity,
                overall_accuracy: e.accuracy,
                ii_percent,
                ca_points,
                cv_percent: None,
                t_seconds_per_point: None,
                slope: e.slope,
            }
        })
        .collect();
    write(&dir.join("reports.json"), to_json(&reports)?)?;
    Ok(SeedOutput {
        reports,
        timing,
        hashes,
    })
}

fn evaluate_nc(
    cfg: &ExperimentConfig,
    g: &Graph,
    groups: &GroupAssignment,
    b: &crate::splits::NodeSplitBundle,
    z2: &[Vec<f64>],
    z3: &[Vec<f64>],
) -> Result<Evaluation> {
    let labels = |gr: &Graph| {
        gr.labels()
            .cloned()
            .ok_or_else(|| Error::Config("node classification needs labels".into()))
    };
    let full = labels(g)?;
    let (l2, l3) = (labels(&b.g2.graph)?, labels(&b.g3.graph)?);
    let eval_groups: Vec<_> = b.g3.parent_ids.iter().map(|&v| groups.group[v]).collect();
    let degrees: Vec<usize> = b.g3.parent_ids.iter().map(|&v| g.degree(v)).collect();
    let opts = cfg.downstream.options();
    let (imparity, accuracy, correct) = match (&l2, &l3) {
        (Labels::Single { classes: y2, .. }, Labels::Single { classes: y3, .. }) => {
            let clf = fit(z2, Targets::Classes(y2), Mode::OneVsRest, &opts)?;
            let pred = clf.predict(z3)?;
            let imp = imparity_nc(
                &pred,
                y3,
                &eval_groups,
                &full.class_frequencies(),
                g.node_count(),
            )?;
            let correct: Vec<bool> = pred.iter().zip(y3).map(|(p, t)| p == t).collect();
            let acc = correct.iter().filter(|&&c| c).count() as f64 / correct.len().max(1) as f64;
            (imp, acc, correct)
        }
        (Labels::Multi { rows: y2, .. }, Labels::Multi { rows: y3, .. }) => {
            let clf = fit(z2, Targets::MultiLabel(y2), Mode::OneVsRest, &opts)?;
            let pred = clf.predict_multilabel(z3)?;
            let imp = imparity_nc_multilabel(&pred, y3, &eval_groups)?;
            let cells = y3.len() * full.num_classes();
            let hits: usize = pred
                .iter()
                .zip(y3)
                .map(|(p, t)| p.iter().zip(t).filter(|(a, b)| a == b).count())
                .sum();
            let correct = pred.iter().zip(y3).map(|(p, t)| p == t).collect();
            (imp, hits as f64 / cells.max(1) as f64, correct)
        }
        _ => return Err(Error::Consistency("mixed label kinds across splits".into())),
    };
    let slope = metrics::degree_accuracy_slope(&correct, &degrees)
        .map_err(|e| log::warn!("slope: {e}"))
        .ok();
    Ok(Evaluation {
        imparity,
        accuracy,
        slope,
        buckets: degree_buckets(&correct, &degrees)?,
    })
}

fn edge_rows(
    z: &[Vec<f64>],
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut x = Vec::with_capacity(pos.len() + neg.len());
    let mut y = Vec::with_capacity(pos.len() + neg.len());
    for (edges, label) in [(pos, 1), (neg, 0)] {
        for &(u, v) in edges {
            x.push(edge_feature(&z[u], &z[v])?);
            y.push(label);
        }
    }
    Ok((x, y))
}

fn evaluate_lp(
    cfg: &ExperimentConfig,
    groups: &GroupAssignment,
    b: &crate::splits::EdgeSplitBundle,
    z: &[Vec<f64>],
) -> Result<Evaluation> {
    let (x2, y2) = edge_rows(z, &b.g2_pos, &b.g2_neg)?;
    let (x3, y3) = edge_rows(z, &b.g3_pos, &b.g3_neg)?;
    let clf = fit(
        &x2,
        Targets::Classes(&y2),
        Mode::Binary,
        &cfg.downstream.options(),
    )?;
    let pred = clf.predict(&x3)?;
    let correct: Vec<bool> = pred.iter().zip(&y3).map(|(p, t)| p == t).collect();
    let cats: Vec<_> = b
        .g3_pos
        .iter()
        .chain(&b.g3_neg)
        .map(|&(u, v)| edge_group(u, v, &groups.group))
        .collect();
    let [pp, pup, upup] = edge_group_accuracies(&correct, &cats)?;
    Ok(Evaluation {
        imparity: imparity_lp(pp, pup, upup),
        accuracy: correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64,
        slope: None,
        buckets: Vec::new(),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn aggregate(cfg: &ExperimentConfig, reports: &[FairnessReport]) -> Vec<AggregateRow> {
    cfg.experiment
        .variants
        .iter()
        .filter_map(|v| {
            let rows: Vec<_> = reports.iter().filter(|r| r.variant == v.name()).collect();
            if rows.is_empty() {
                return None;
            }
            let col = |f: fn(&FairnessReport) -> Option<f64>| -> Option<Vec<f64>> {
                rows.iter().map(|r| f(r)).collect()
            };
            let iis = col(|r| r.ii_percent);
            Some(AggregateRow {
                task: cfg.experiment.task,
                variant: v.name().into(),
                seeds_ok: rows.len(),
                mean_imparity: mean(&rows.iter().map(|r| r.imparity).collect::<Vec<_>>()),
                mean_accuracy: mean(&rows.iter().map(|r| r.overall_accuracy).collect::<Vec<_>>()),
                mean_ii_percent: iis.as_deref().map(mean),
                cv_ii_percent: iis.as_deref().and_then(|x| cv(x).ok()),
                mean_ca_points: col(|r| r.ca_points).as_deref().map(mean),
            })
        })
        .collect()
}

fn overhead_rows(
    cfg: &ExperimentConfig,
    timings: &[SeedTiming],
    agg: &[AggregateRow],
) -> Vec<OverheadRow> {
    if timings.is_empty() || !cfg.experiment.variants.contains(&Variant::Baseline) {
        return Vec::new();
    }
    let t_p = mean(&timings.iter().map(|t| t.oracle_seconds).collect::<Vec<_>>());
    agg.iter()
        .filter(|a| a.variant != Variant::Baseline.name())
        .map(|a| {
            let deltas: Vec<f64> = timings
                .iter()
                .filter_map(|t| {
                    Some(t.train_seconds.get(&a.variant)? - t.train_seconds.get("baseline")?)
                })
                .collect();
            let t_t = if deltas.is_empty() {
                0.0
            } else {
                mean(&deltas)
            };
            OverheadRow {
                variant: a.variant.clone(),
                mean_oracle_seconds: t_p,
                mean_train_delta_seconds: t_t,
                t_seconds_per_point: a.mean_ii_percent.map(|ii| t_overhead(t_p, t_t, ii)),
            }
        })
        .collect()
}

/// Runs every seed. A failing seed is recorded and the others continue.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = &cfg.experiment.output_dir;
    mkdir(out)?;
    let g = cfg.load_graph()?;
    let groups = groups_for(&g)?;
    let hash = cfg.config_hash();
    write(&out.join("config.json"), to_json(cfg)?)?;

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    let mut triple_hashes = BTreeMap::new();
    for &seed in &cfg.experiment.seeds {
        match run_seed(cfg, &g, &groups, seed, &hash) {
            Ok(s) => {
                reports.extend(s.reports);
                timings.push(s.timing);
                for (v, h) in s.hashes {
                    triple_hashes.insert((seed, v), h);
                }
            }
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }

    let agg = aggregate(cfg, &reports);
    // Attach the across-seed CV to each variant's per-seed rows.
    for r in &mut reports {
        r.cv_percent = agg
            .iter()
            .find(|a| a.variant == r.variant)
            .and_then(|a| a.cv_ii_percent);
    }
    let run = RunReports {
        config_hash: hash.clone(),
        reports,
        failures,
    };
    write(&out.join("reports.json"), to_json(&run)?)?;
    let mut csv = format!("{}\n", FairnessReport::CSV_HEADER);
    for r in &run.reports {
        let _ = writeln!(csv, "{}", r.csv_row());
    }
    for f in &run.failures {
        let _ = writeln!(
            csv,
            "{}",
            FairnessReport::failure_csv_row(cfg.experiment.task, f.seed, &hash, &f.error)
        );
    }
    write(&out.join("reports.csv"), csv)?;
    write(&out.join("aggregate.json"), to_json(&agg)?)?;
    let mut acsv = format!("{}\n", AggregateRow::CSV_HEADER);
    for a in &agg {
        let _ = writeln!(acsv, "{}", a.csv_row());
    }
    write(&out.join("aggregate.csv"), acsv)?;

    let timings = Timings {
        overhead: overhead_rows(cfg, &timings, &agg),
        seeds: timings,
    };
    write(&out.join("timings.json"), to_json(&timings)?)?;
    Ok(RunSummary {
        reports: run,
        aggregate: agg,
        timings,
        triple_hashes,
    })
}

pub const REPORT_INPUTS: [&str; 3] = ["reports.json", "aggregate.json", "timings.json"];

/// Renders a finished run as a text table and writes `report.txt` and a
/// combined `per-degree.csv` into the run directory. Returns the table.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let missing: Vec<String> = REPORT_INPUTS
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts {
            dir: dir.to_path_buf(),
            expected: missing,
        });
    }
    let read = |name: &str| {
        fs::read_to_string(dir.join(name)).map_err(|e| Error::io(format!("reading {name}"), e))
    };
    let run: RunReports = serde_json::from_str(&read("reports.json")?)?;
    let agg: Vec<AggregateRow> = serde_json::from_str(&read("aggregate.json")?)?;
    let timings: Timings = serde_json::from_str(&read("timings.json")?)?;

    let f = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
    let mut s = String::new();
    let _ = writeln!(s, "config {}", run.config_hash);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<6} {:<9} {:>5} {:>10} {:>9} {:>9} {:>9} {:>9} {:>10}",
        "task", "variant", "seeds", "imparity", "accuracy", "II %", "CV %", "CA pts", "T s/pt"
    );
    for a in &agg {
        let t = timings
            .overhead
            .iter()
            .find(|o| o.variant == a.variant)
            .and_then(|o| o.t_seconds_per_point)
            .map_or("-".to_string(), |t| match t {
                Overhead::Finite(v) => format!("{v:.3}"),
                Overhead::Inf => "INF".into(),
            });
        let _ = writeln!(
            s,
            "{:<6} {:<9} {:>5} {:>10.5} {:>9.4} {:>9} {:>9} {:>9} {:>10}",
            a.task.name(),
            a.variant,
            a.seeds_ok,
            a.mean_imparity,
            a.mean_accuracy,
            f(a.mean_ii_percent, 2),
            f(a.cv_ii_percent, 2),
            f(a.mean_ca_points, 2),
            t
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<6} {:<9} {:>10} {:>9} {:>9} {:>9} {:>9}",
        "seed", "variant", "imparity", "accuracy", "II %", "CA pts", "slope"
    );
    for r in &run.reports {
        let _ = writeln!(
            s,
            "{:<6} {:<9} {:>10.5} {:>9.4} {:>9} {:>9} {:>9}",
            r.seed,
            r.variant,
            r.imparity,
            r.overall_accuracy,
            f(r.ii_percent, 2),
            f(r.ca_points, 2),
            f(r.slope, 5)
        );
    }
    for fl in &run.failures {
        let _ = writeln!(s, "{:<6} FAILED: {}", fl.seed, fl.error);
    }

    let mut per_degree = String::from("seed,variant,degree,accuracy,count\n");
    for r in &run.reports {
        let path = dir
            .join(format!("seed-{}", r.seed))
            .join(format!("per-degree-{}.csv", r.variant));
        let Ok(text) = fs::read_to_string(&path) else {
            continue;
        };
        for line in text.lines().skip(1) {
            let _ = writeln!(per_degree, "{},{},{line}", r.seed, r.variant);
        }
    }
    write(&dir.join("report.txt"), &s)?;
    write(&dir.join("per-degree.csv"), per_degree)?;
    Ok(s)
}
