//! Graph data model: graphs, datasets, batching and augmentation.
//!
//! Undirected graphs are stored with both directed pairs present, so every
//! aggregation operator only has to look at in-edges.

mod batch;
mod io;
mod synth;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use batch::{batch_graphs, GraphBatch};
pub use io::{load_dataset, load_splits, save_dataset, GraphRecord};
pub use synth::{count_triangles, generate_synthetic, SyntheticSpec, SyntheticTask, DEGREE_FEATURE_CAP};
#[cfg(test)]
use synth::label_for;

/// Prediction target of one graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    /// Class index of a multi-class task.
    Class(usize),
    /// One entry per binary task; `None` marks a missing target.
    Binary(Vec<Option<bool>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TaskType {
    Binary,
    MultiBinary { tasks: usize },
    MultiClass { classes: usize },
}

impl TaskType {
    /// Width of the classifier head.
    pub fn num_outputs(self) -> usize {
        match self {
            TaskType::Binary => 1,
            TaskType::MultiBinary { tasks } => tasks,
            TaskType::MultiClass { classes } => classes,
        }
    }

    pub fn check_label(self, label: &Label) -> Result<()> {
        match (self, label) {
            (TaskType::Binary, Label::Binary(v)) if v.len() == 1 => Ok(()),
            (TaskType::MultiBinary { tasks }, Label::Binary(v)) if v.len() == tasks => Ok(()),
            (TaskType::MultiClass { classes }, Label::Class(c)) if *c < classes => Ok(()),
            (t, l) => Err(Error::Validation(format!("label {l:?} does not fit task {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_features: Tensor,
    edges: Vec<(usize, usize)>,
    edge_features: Option<Tensor>,
    label: Label,
}

impl Graph {
    /// `node_features` is `N x d_in`; `edge_features`, when given, `E x d_e`.
    pub fn new(
        node_features: Tensor,
        edges: Vec<(usize, usize)>,
        edge_features: Option<Tensor>,
        label: Label,
    ) -> Result<Self> {
        if node_features.shape().len() != 2 {
            return Err(Error::Validation(format!(
                "node features must be a matrix, got shape {:?}",
                node_features.shape()
            )));
        }
        let n = node_features.rows();
        if let Some(&(s, d)) = edges.iter().find(|&&(s, d)| s >= n || d >= n) {
            return Err(Error::Validation(format!(
                "edge ({s},{d}) out of range for {n} nodes"
            )));
        }
        if let Some(ef) = &edge_features {
            if ef.shape().len() != 2 || ef.rows() != edges.len() {
                return Err(Error::Validation(format!(
                    "edge features have shape {:?} but there are {} edges",
                    ef.shape(),
                    edges.len()
                )));
            }
        }
        Ok(Self {
            node_features,
            edges,
            edge_features,
            label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn edge_feature_dim(&self) -> Option<usize> {
        self.edge_features.as_ref().map(Tensor::cols)
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_features(&self) -> Option<&Tensor> {
        self.edge_features.as_ref()
    }

    pub fn label(&self) -> &Label {
        &self.label
    }

    /// Number of undirected edges, counting a stored `(u,v)`/`(v,u)` pair once.
    pub fn num_undirected_edges(&self) -> usize {
        undirected_pairs(&self.edges).len()
    }
}

fn undirected_pairs(edges: &[(usize, usize)]) -> std::collections::BTreeSet<(usize, usize)> {
    edges.iter().map(|&(s, d)| (s.min(d), s.max(d))).collect()
}

/// Degree of every node, counting an undirected pair stored in both
/// directions once.
pub fn compute_degrees(g: &Graph) -> Vec<usize> {
    degrees_of(g.num_nodes(), &g.edges)
}

pub(crate) fn degrees_of(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut deg = vec![0; n];
    for (a, b) in undirected_pairs(edges) {
        deg[a] += 1;
        if b != a {
            deg[b] += 1;
        }
    }
    deg
}

/// Append a zero-feature node wired in both directions to every original
/// node. Not idempotent: each call adds another node.
pub fn add_virtual_node(g: &Graph) -> Graph {
    let n = g.num_nodes();
    let d = g.feature_dim();
    let mut feats = g.node_features.data().to_vec();
    feats.extend(std::iter::repeat_n(0.0, d));
    let node_features = Tensor::matrix(n + 1, d, feats).expect("n+1 x d");

    let mut edges = g.edges.clone();
    for u in 0..n {
        edges.push((n, u));
        edges.push((u, n));
    }
    let edge_features = g.edge_features.as_ref().map(|ef| {
        let de = ef.cols();
        let mut data = ef.data().to_vec();
        data.extend(std::iter::repeat_n(0.0, 2 * n * de));
        Tensor::matrix(edges.len(), de, data).expect("E x de")
    });
    Graph {
        node_features,
        edges,
        edge_features,
        label: g.label.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split `{s}`"))),
        }
    }
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Splits must be disjoint and together cover `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for split in Split::ALL {
            for &i in self.get(split) {
                if i >= n {
                    return Err(Error::Validation(format!(
                        "{} split index {i} out of range for {n} graphs",
                        split.name()
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Validation(format!(
                        "graph {i} appears in more than one split"
                    )));
                }
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(Error::Validation(format!("graph {i} is in no split")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub task: TaskType,
    pub splits: Splits,
}

impl Dataset {
    pub fn new(graphs: Vec<Graph>, task: TaskType, splits: Splits) -> Result<Self> {
        splits.validate(graphs.len())?;
        if let Some(first) = graphs.first() {
            let (d, de) = (first.feature_dim(), first.edge_feature_dim());
            for (i, g) in graphs.iter().enumerate() {
                if g.feature_dim() != d || g.edge_feature_dim() != de {
                    return Err(Error::Validation(format!(
                        "graph {i} has feature widths ({}, {:?}), expected ({d}, {de:?})",
                        g.feature_dim(),
                        g.edge_feature_dim()
                    )));
                }
                task.check_label(&g.label)
                    .map_err(|e| Error::Validation(format!("graph {i}: {e}")))?;
            }
        }
        Ok(Self {
            graphs,
            task,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn edge_feature_dim(&self) -> Option<usize> {
        self.graphs.first().and_then(Graph::edge_feature_dim)
    }

    pub fn split(&self, split: Split) -> Vec<&Graph> {
        self.splits.get(split).iter().map(|&i| &self.graphs[i]).collect()
    }

    /// Copy with a virtual node added to every graph.
    pub fn with_virtual_nodes(&self) -> Dataset {
        Dataset {
            graphs: self.graphs.iter().map(add_virtual_node).collect(),
            task: self.task,
            splits: self.splits.clone(),
        }
    }

    /// Graph count plus mean nodes and mean undirected edges per graph.
    pub fn summary(&self) -> DatasetSummary {
        let n = self.graphs.len().max(1) as f64;
        DatasetSummary {
            num_graphs: self.graphs.len(),
            mean_nodes: self.graphs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / n,
            mean_edges: self
                .graphs
                .iter()
                .map(|g| g.num_undirected_edges() as f64)
                .sum::<f64>()
                / n,
            train: self.splits.train.len(),
            valid: self.splits.valid.len(),
            test: self.splits.test.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub num_graphs: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}
