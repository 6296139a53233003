//! Group imparity, improvement and cost metrics.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Group;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "nc")]
    NodeClassification,
    #[serde(rename = "lp")]
    LinkPrediction,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::NodeClassification => "nc",
            Task::LinkPrediction => "lp",
        }
    }
}

fn check_aligned(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Argument(format!(
            "{what}: lengths {a} and {b} differ"
        )));
    }
    Ok(())
}

/// Weighted per-class accuracy gap between the two groups:
/// `sum_c (f_c / total) * |acc_popular(c) - acc_unpopular(c)|`.
///
/// A class with no members in one of the groups contributes 0.
pub fn imparity_nc(
    pred: &[usize],
    truth: &[usize],
    groups: &[Group],
    class_freq: &[usize],
    total_nodes: usize,
) -> Result<f64> {
    check_aligned(pred.len(), truth.len(), "imparity_nc predictions")?;
    check_aligned(pred.len(), groups.len(), "imparity_nc groups")?;
    if total_nodes == 0 {
        return Err(Error::Argument("imparity_nc with zero total nodes".into()));
    }
    // [class][group] -> (correct, count)
    let mut cells = vec![[(0usize, 0usize); 2]; class_freq.len()];
    for ((&p, &t), &g) in pred.iter().zip(truth).zip(groups) {
        let cell = cells
            .get_mut(t)
            .ok_or_else(|| Error::Argument(format!("class {t} outside class_freq")))?;
        let slot = &mut cell[usize::from(g == Group::Unpopular)];
        slot.0 += usize::from(p == t);
        slot.1 += 1;
    }
    let mut sum = 0.0;
    let mut defined = 0;
    for (c, cell) in cells.iter().enumerate() {
        let [(c1, n1), (c2, n2)] = *cell;
        if n1 == 0 || n2 == 0 {
            if n1 + n2 > 0 {
                log::debug!("class {c} is missing from one group; contributes 0");
            }
            continue;
        }
        defined += 1;
        let gap = (c1 as f64 / n1 as f64 - c2 as f64 / n2 as f64).abs();
        sum += class_freq[c] as f64 / total_nodes as f64 * gap;
    }
    if defined == 0 {
        return Err(Error::UndefinedMetric(
            "no class has members in both groups".into(),
        ));
    }
    Ok(sum)
}

fn macro_f1(pred: &[&Vec<bool>], truth: &[&Vec<bool>], classes: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..classes {
        let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
        for (p, t) in pred.iter().zip(truth) {
            match (p[c], t[c]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fne;
        if denom > 0 {
            total += 2.0 * tp as f64 / denom as f64;
        }
    }
    total / classes as f64
}

/// `|macroF1(popular) - macroF1(unpopular)|`, per-class F1 with 0/0 := 0.
pub fn imparity_nc_multilabel(
    pred: &[Vec<bool>],
    truth: &[Vec<bool>],
    groups: &[Group],
) -> Result<f64> {
    check_aligned(
        pred.len(),
        truth.len(),
        "imparity_nc_multilabel predictions",
    )?;
    check_aligned(pred.len(), groups.len(), "imparity_nc_multilabel groups")?;
    let classes = truth.first().map_or(0, Vec::len);
    if classes == 0 {
        return Err(Error::UndefinedMetric("no classes".into()));
    }
    if pred.iter().chain(truth).any(|r| r.len() != classes) {
        return Err(Error::Argument("ragged label rows".into()));
    }
    let mut f1 = [0.0; 2];
    for (i, which) in [Group::Popular, Group::Unpopular].into_iter().enumerate() {
        let idx: Vec<usize> = (0..groups.len()).filter(|&v| groups[v] == which).collect();
        if idx.is_empty() {
            return Err(Error::UndefinedMetric(format!("{which:?} group is empty")));
        }
        let p: Vec<_> = idx.iter().map(|&v| &pred[v]).collect();
        let t: Vec<_> = idx.iter().map(|&v| &truth[v]).collect();
        f1[i] = macro_f1(&p, &t, classes);
    }
    Ok((f1[0] - f1[1]).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeGroup {
    PP,
    PUP,
    UPUP,
}

impl EdgeGroup {
    pub const ALL: [EdgeGroup; 3] = [EdgeGroup::PP, EdgeGroup::PUP, EdgeGroup::UPUP];
}

impl fmt::Display for EdgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeGroup::PP => "p-p",
            EdgeGroup::PUP => "p-up",
            EdgeGroup::UPUP => "up-up",
        })
    }
}

pub fn edge_group(u: usize, v: usize, groups: &[Group]) -> EdgeGroup {
    match (groups[u], groups[v]) {
        (Group::Popular, Group::Popular) => EdgeGroup::PP,
        (Group::Unpopular, Group::Unpopular) => EdgeGroup::UPUP,
        _ => EdgeGroup::PUP,
    }
}

/// Accuracy within each edge category, in `EdgeGroup::ALL` order.
pub fn edge_group_accuracies(correct: &[bool], categories: &[EdgeGroup]) -> Result<[f64; 3]> {
    check_aligned(correct.len(), categories.len(), "edge categories")?;
    let mut out = [0.0; 3];
    for (slot, cat) in out.iter_mut().zip(EdgeGroup::ALL) {
        let (hit, n) = correct
            .iter()
            .zip(categories)
            .filter(|(_, &c)| c == cat)
            .fold((0usize, 0usize), |(h, n), (&ok, _)| {
                (h + usize::from(ok), n + 1)
            });
        if n == 0 {
            return Err(Error::UndefinedMetric(format!(
                "edge category {cat} is empty"
            )));
        }
        *slot = hit as f64 / n as f64;
    }
    Ok(out)
}

/// Population standard deviation of the three category accuracies.
pub fn imparity_lp(acc_pp: f64, acc_pup: f64, acc_upup: f64) -> f64 {
    let mu = (acc_pp + acc_pup + acc_upup) / 3.0;
    let var = [acc_pp, acc_pup, acc_upup]
        .iter()
        .map(|a| (a - mu) * (a - mu))
        .sum::<f64>()
        / 3.0;
    var.sqrt()
}

/// Percentage decrease of imparity relative to the original model.
pub fn ii(i_original: f64, i_current: f64) -> Result<f64> {
    if i_original == 0.0 {
        return Err(Error::UndefinedMetric("original imparity is zero".into()));
    }
    Ok((i_original - i_current) / i_original * 100.0)
}

/// Accuracy change in percentage points.
pub fn ca(acc_current: f64, acc_original: f64) -> f64 {
    (acc_current - acc_original) * 100.0
}

/// Population coefficient of variation in percent, `sigma / |mu| * 100`.
pub fn cv(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Argument(format!(
            "coefficient of variation needs >= 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    if mu == 0.0 {
        return Err(Error::UndefinedMetric("samples have zero mean".into()));
    }
    let var = samples.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    Ok(var.sqrt() / mu.abs() * 100.0)
}

/// Seconds of overhead per percentage point of imparity improvement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Overhead {
    Finite(f64),
    Inf,
}

impl fmt::Display for Overhead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Overhead::Finite(v) => write!(f, "{v}"),
            Overhead::Inf => f.write_str("INF"),
        }
    }
}

impl Serialize for Overhead {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Overhead::Finite(v) => s.serialize_f64(*v),
            Overhead::Inf => s.serialize_str("INF"),
        }
    }
}

impl<'de> Deserialize<'de> for Overhead {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Overhead::Finite(v)),
            Raw::Text(t) if t == "INF" => Ok(Overhead::Inf),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad overhead {t:?}"))),
        }
    }
}

/// `(t_p + t_t) / II`, or `Inf` when II is not positive. A negative training
/// delta (variant faster than baseline) counts as zero.
pub fn t_overhead(t_preprocess_sec: f64, t_train_delta_sec: f64, ii_percent: f64) -> Overhead {
    if ii_percent <= 0.0 {
        return Overhead::Inf;
    }
    Overhead::Finite((t_preprocess_sec.max(0.0) + t_train_delta_sec.max(0.0)) / ii_percent)
}

/// One row per distinct degree: (degree, mean correctness, count).
pub fn degree_buckets(correct: &[bool], degrees: &[usize]) -> Result<Vec<(usize, f64, usize)>> {
    check_aligned(correct.len(), degrees.len(), "degree buckets")?;
    let mut acc: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&ok, &d) in correct.iter().zip(degrees) {
        let e = acc.entry(d).or_default();
        e.0 += usize::from(ok);
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(d, (h, n))| (d, h as f64 / n as f64, n))
        .collect())
}

/// OLS slope of bucket accuracy on degree, one point per distinct degree.
pub fn degree_accuracy_slope(correct: &[bool], degrees: &[usize]) -> Result<f64> {
    let buckets = degree_buckets(correct, degrees)?;
    let points: Vec<(f64, f64)> = buckets.iter().map(|&(d, a, _)| (d as f64, a)).collect();
    ols_slope(&points)
}

pub fn ols_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::UndefinedMetric(
            "slope needs at least two distinct degrees".into(),
        ));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::UndefinedMetric("all x values coincide".into()));
    }
    Ok(sxy / sxx)
}

/// One evaluated model: a (variant, seed) pair on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub task: Task,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub imparity: f64,
    pub overall_accuracy: f64,
    pub ii_percent: Option<f64>,
    pub ca_points: Option<f64>,
    pub cv_percent: Option<f64>,
    pub t_seconds_per_point: Option<Overhead>,
    pub slope: Option<f64>,
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), ToString::to_string)
}

impl FairnessReport {
    pub const CSV_HEADER: &'static str =
        "task,variant,seed,status,imparity,overall_accuracy,ii_percent,ca_points,cv_percent,t_seconds_per_point,slope,config_hash";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},ok,{},{},{},{},{},{},{},{}",
            self.task.name(),
            self.variant,
            self.seed,
            self.imparity,
            self.overall_accuracy,
            opt(&self.ii_percent),
            opt(&self.ca_points),
            opt(&self.cv_percent),
            opt(&self.t_seconds_per_point),
            opt(&self.slope),
            self.config_hash
        )
    }

    /// Row recording a seed that aborted before producing metrics.
    pub fn failure_csv_row(task: Task, seed: u64, config_hash: &str, message: &str) -> String {
        let clean: String = message
            .chars()
            .map(|c| if c == ',' || c == '\n' { ';' } else { c })
            .collect();
        format!(
            "{},*,{seed},failed: {clean},,,,,,,,{config_hash}",
            task.name()
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.imparity.is_nan() || self.imparity < 0.0 {
            return Err(Error::Consistency(format!(
                "imparity {} < 0",
                self.imparity
            )));
        }
        if let Some(c) = self.cv_percent {
            if c.is_nan() || c < 0.0 {
                return Err(Error::Consistency(format!("cv {c} < 0")));
            }
        }
        if let (Some(ii), Some(t)) = (self.ii_percent, self.t_seconds_per_point) {
            if (t == Overhead::Inf) != (ii <= 0.0) {
                return Err(Error::Consistency(format!("T is {t} but II is {ii}")));
            }
        }
        Ok(())
    }
}
