//! Undirected simple graphs in CSR form with dense node features.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Consistency(format!(
                "feature buffer has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn select_rows(&self, ids: &[usize]) -> Self {
        let mut data = Vec::with_capacity(ids.len() * self.cols);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: ids.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Node labels: one class per node, or a binary membership row per node.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Single {
        classes: Vec<usize>,
        num_classes: usize,
    },
    Multi {
        rows: Vec<Vec<bool>>,
        num_classes: usize,
    },
}

impl Labels {
    pub fn single(classes: Vec<usize>) -> Self {
        let num_classes = classes.iter().max().map_or(0, |&m| m + 1);
        Labels::Single {
            classes,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Single { classes, .. } => classes.len(),
            Labels::Multi { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Labels::Single { num_classes, .. } | Labels::Multi { num_classes, .. } => *num_classes,
        }
    }

    /// Number of nodes carrying each class.
    pub fn class_frequencies(&self) -> Vec<usize> {
        let mut freq = vec![0; self.num_classes()];
        match self {
            Labels::Single { classes, .. } => {
                for &c in classes {
                    freq[c] += 1;
                }
            }
            Labels::Multi { rows, .. } => {
                for row in rows {
                    for (c, &on) in row.iter().enumerate() {
                        if on {
                            freq[c] += 1;
                        }
                    }
                }
            }
        }
        freq
    }

    fn select(&self, ids: &[usize]) -> Self {
        match self {
            Labels::Single {
                classes,
                num_classes,
            } => Labels::Single {
                classes: ids.iter().map(|&i| classes[i]).collect(),
                num_classes: *num_classes,
            },
            Labels::Multi { rows, num_classes } => Labels::Multi {
                rows: ids.iter().map(|&i| rows[i].clone()).collect(),
                num_classes: *num_classes,
            },
        }
    }
}

/// What was discarded while building a simple undirected graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeCleanup {
    pub self_loops: usize,
    pub duplicates: usize,
}

/// Immutable undirected simple graph.
///
/// Neighbor lists are sorted, so adjacency tests are a binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: FeatureMatrix,
    labels: Option<Labels>,
}

impl Graph {
    /// Builds a graph from an undirected edge list, symmetrizing and dropping
    /// self-loops and repeated pairs.
    pub fn from_edges(
        features: FeatureMatrix,
        edges: &[(usize, usize)],
        labels: Option<Labels>,
    ) -> Result<(Self, EdgeCleanup)> {
        let n = features.rows();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Consistency(format!(
                    "{} label rows for {n} nodes",
                    l.len()
                )));
            }
        }
        let mut cleanup = EdgeCleanup::default();
        let mut pairs = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Consistency(format!(
                    "edge ({u}, {v}) references a node beyond the {n} feature rows"
                )));
            }
            if u == v {
                cleanup.self_loops += 1;
                continue;
            }
            pairs.push((u.min(v), u.max(v)));
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        cleanup.duplicates = before - pairs.len();

        let mut degree = vec![0usize; n];
        for &(u, v) in &pairs {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut neighbors = vec![0usize; offsets[n]];
        for &(u, v) in &pairs {
            neighbors[cursor[u]] = v;
            cursor[u] += 1;
            neighbors[cursor[v]] = u;
            cursor[v] += 1;
        }
        for v in 0..n {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Ok((
            Graph {
                offsets,
                neighbors,
                features,
                labels,
            },
            cleanup,
        ))
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn csr_neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    /// Same nodes, features and labels, different edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        Graph::from_edges(self.features.clone(), edges, self.labels.clone()).map(|(g, _)| g)
    }
}

/// Degree of every node, read off the CSR offsets.
pub fn degree_centrality(g: &Graph) -> Vec<usize> {
    g.offsets.windows(2).map(|w| w[1] - w[0]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    Popular,
    Unpopular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub group: Vec<Group>,
    pub centrality: Vec<f64>,
    pub median: f64,
}

impl GroupAssignment {
    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }

    pub fn popular_count(&self) -> usize {
        self.group.iter().filter(|&&g| g == Group::Popular).count()
    }
}

/// Splits nodes at the median centrality. Nodes at or above the median are popular.
pub fn median_group_split(centrality: &[f64]) -> Result<GroupAssignment> {
    if centrality.is_empty() {
        return Err(Error::Argument(
            "median of an empty centrality vector".into(),
        ));
    }
    if let Some(bad) = centrality.iter().find(|c| !c.is_finite()) {
        return Err(Error::Argument(format!("non-finite centrality {bad}")));
    }
    let mut sorted = centrality.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let group = centrality
        .iter()
        .map(|&c| {
            if c >= median {
                Group::Popular
            } else {
                Group::Unpopular
            }
        })
        .collect();
    Ok(GroupAssignment {
        group,
        centrality: centrality.to_vec(),
        median,
    })
}

/// A vertex-induced subgraph together with its id translation.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: Graph,
    /// `parent_ids[local]` is the id of the node in the parent graph.
    pub parent_ids: Vec<usize>,
}

impl Subgraph {
    /// Parent-to-local map; `None` for parent nodes that were not kept.
    pub fn local_ids(&self, parent_nodes: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; parent_nodes];
        for (local, &p) in self.parent_ids.iter().enumerate() {
            map[p] = Some(local);
        }
        map
    }
}

/// Keeps the listed nodes (in the given order) and every edge between them.
pub fn induced_subgraph(g: &Graph, nodes: &[usize]) -> Result<Subgraph> {
    let n = g.node_count();
    let mut local = vec![usize::MAX; n];
    for (i, &v) in nodes.iter().enumerate() {
        if v >= n {
            return Err(Error::Argument(format!("node {v} out of range 0..{n}")));
        }
        if local[v] != usize::MAX {
            return Err(Error::Argument(format!("node {v} listed twice")));
        }
        local[v] = i;
    }
    let mut edges = Vec::new();
    for (i, &v) in nodes.iter().enumerate() {
        for &w in g.neighbors(v) {
            let j = local[w];
            if j != usize::MAX && i < j {
                edges.push((i, j));
            }
        }
    }
    let features = g.features.select_rows(nodes);
    let labels = g.labels.as_ref().map(|l| l.select(nodes));
    let (graph, _) = Graph::from_edges(features, &edges, labels)?;
    Ok(Subgraph {
        graph,
        parent_ids: nodes.to_vec(),
    })
}

/// Loads a graph from an edge list, a feature matrix and optional labels.
///
/// The node count is the number of feature rows. Returns what was dropped
/// while simplifying the edge list.
pub fn load_edge_list(
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
) -> Result<(Graph, EdgeCleanup)> {
    let features = read_features(feature_path)?;
    let edges = read_edges(edge_path)?;
    let labels = label_path.map(read_labels).transpose()?;
    if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u.max(v) >= features.rows()) {
        return Err(Error::Consistency(format!(
            "edge ({u}, {v}) in {} references a node beyond the {} rows of {}",
            edge_path.display(),
            features.rows(),
            feature_path.display()
        )));
    }
    let (g, cleanup) = Graph::from_edges(features, &edges, labels)?;
    if cleanup.self_loops + cleanup.duplicates > 0 {
        log::info!(
            "{}: dropped {} self-loops and {} duplicate edges",
            edge_path.display(),
            cleanup.self_loops,
            cleanup.duplicates
        );
    }
    Ok((g, cleanup))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (lineno, line) in content_lines(&text) {
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, lineno, "expected two node ids"));
        };
        let parse = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| parse_err(path, lineno, format!("bad node id {t:?}")))
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let text = read_text(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for (lineno, line) in content_lines(&text) {
        let before = data.len();
        for t in tokens(line) {
            let x: f64 = t
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad real {t:?}")))?;
            data.push(x);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("row has {width} values, expected {c}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    FeatureMatrix::new(rows, cols.unwrap_or(0), data)
}

/// One integer per row means single-label; several 0/1 tokens mean multi-label.
pub fn read_labels(path: &Path) -> Result<Labels> {
    let text = read_text(path)?;
    let mut parsed: Vec<(usize, Vec<usize>)> = Vec::new();
    for (lineno, line) in content_lines(&text) {
        let row = tokens(line)
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| parse_err(path, lineno, format!("bad label {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        parsed.push((lineno, row));
    }
    let multi = parsed.iter().any(|(_, r)| r.len() != 1);
    if !multi {
        return Ok(Labels::single(
            parsed.into_iter().map(|(_, r)| r[0]).collect(),
        ));
    }
    let width = parsed.first().map_or(0, |(_, r)| r.len());
    let mut rows = Vec::with_capacity(parsed.len());
    for (lineno, r) in parsed {
        if r.len() != width {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {width} label columns"),
            ));
        }
        if r.iter().any(|&b| b > 1) {
            return Err(parse_err(path, lineno, "multi-label rows must be 0/1"));
        }
        rows.push(r.into_iter().map(|b| b == 1).collect());
    }
    Ok(Labels::Multi {
        rows,
        num_classes: width,
    })
}

/// Loads the `<name>.content` / `<name>.cites` layout used by the Cora and
/// CiteSeer citation datasets.
///
/// Content rows are `doc_id f_1 .. f_d class_name`; node ids follow row
/// order and class ids follow the sorted class names. Citations naming a
/// document without a content row are dropped and logged.
pub fn load_content_cites(content_path: &Path, cites_path: &Path) -> Result<(Graph, EdgeCleanup)> {
    let text = read_text(content_path)?;
    let mut ids = std::collections::HashMap::new();
    let mut data = Vec::new();
    let mut names = Vec::new();
    let mut cols = None;
    for (lineno, line) in content_lines(&text) {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 3 {
            return Err(parse_err(
                content_path,
                lineno,
                "expected id, features and class",
            ));
        }
        let width = t.len() - 2;
        if *cols.get_or_insert(width) != width {
            return Err(parse_err(
                content_path,
                lineno,
                format!("row has {width} features"),
            ));
        }
        if ids.insert(t[0].to_string(), names.len()).is_some() {
            return Err(parse_err(
                content_path,
                lineno,
                format!("duplicate document id {}", t[0]),
            ));
        }
        for f in &t[1..t.len() - 1] {
            data.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(content_path, lineno, format!("bad feature {f:?}")))?,
            );
        }
        names.push(t[t.len() - 1].to_string());
    }
    let mut classes: Vec<&String> = names.iter().collect();
    classes.sort();
    classes.dedup();
    let labels = names
        .iter()
        .map(|n| classes.binary_search(&n).expect("class collected above"))
        .collect();
    let features = FeatureMatrix::new(names.len(), cols.unwrap_or(0), data)?;

    let text = read_text(cites_path)?;
    let mut edges = Vec::new();
    let mut unknown = 0;
    for (lineno, line) in content_lines(&text) {
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(cites_path, lineno, "expected two document ids"));
        };
        match (ids.get(a), ids.get(b)) {
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => unknown += 1,
        }
    }
    if unknown > 0 {
        log::warn!(
            "{}: dropped {unknown} citations to unknown documents",
            cites_path.display()
        );
    }
    Graph::from_edges(features, &edges, Some(Labels::single(labels)))
}
