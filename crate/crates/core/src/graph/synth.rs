//! Desk-scale synthetic graph-classification tasks with exactly computed
//! labels.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{degrees_of, Dataset, Graph, Label, Splits, TaskType};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticTask {
    /// Label 1 iff the graph contains at least `threshold` triangles.
    TriangleThreshold { threshold: usize },
    /// Label 1 iff a strict majority of nodes has odd degree.
    DegreeParity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    pub num_graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Erdős–Rényi edge probability.
    pub edge_prob: f64,
}

impl SyntheticSpec {
    pub fn triangles(num_graphs: usize) -> Self {
        SyntheticSpec {
            task: SyntheticTask::TriangleThreshold { threshold: 5 },
            num_graphs,
            min_nodes: 8,
            max_nodes: 16,
            edge_prob: 0.3,
        }
    }

    pub fn degree_parity(num_graphs: usize) -> Self {
        SyntheticSpec {
            task: SyntheticTask::DegreeParity,
            num_graphs,
            min_nodes: 8,
            max_nodes: 16,
            edge_prob: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_graphs < 10 {
            return Err(Error::InvalidArgument(format!(
                "need at least 10 graphs for an 80/10/10 split, got {}",
                self.num_graphs
            )));
        }
        if self.min_nodes == 0 || self.min_nodes > self.max_nodes {
            return Err(Error::InvalidArgument(format!(
                "invalid node range {}..={}",
                self.min_nodes, self.max_nodes
            )));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::InvalidArgument(format!(
                "edge probability {} outside [0, 1]",
                self.edge_prob
            )));
        }
        if let SyntheticTask::TriangleThreshold { threshold: 0 } = self.task {
            return Err(Error::InvalidArgument("triangle threshold must be >= 1".into()));
        }
        Ok(())
    }
}

/// Node features are a one-hot degree, with degrees at or above the cap
/// sharing the last slot.
pub const DEGREE_FEATURE_CAP: usize = 9;

fn degree_one_hot(n: usize, edges: &[(usize, usize)]) -> Tensor {
    let w = DEGREE_FEATURE_CAP + 1;
    let mut data = vec![0.0; n * w];
    for (i, d) in degrees_of(n, edges).into_iter().enumerate() {
        data[i * w + d.min(DEGREE_FEATURE_CAP)] = 1.0;
    }
    Tensor::new(vec![n, w], data).expect("n x w")
}

/// Triangles in a graph stored with both edge directions.
pub fn count_triangles(g: &Graph) -> usize {
    let n = g.num_nodes();
    let mut adj = vec![false; n * n];
    for &(s, d) in g.edges() {
        if s != d {
            adj[s * n + d] = true;
            adj[d * n + s] = true;
        }
    }
    let mut count = 0;
    for i in 0..n {
        for j in i + 1..n {
            if !adj[i * n + j] {
                continue;
            }
            for k in j + 1..n {
                if adj[i * n + k] && adj[j * n + k] {
                    count += 1;
                }
            }
        }
    }
    count
}

pub(crate) fn label_for(task: SyntheticTask, g: &Graph) -> bool {
    match task {
        SyntheticTask::TriangleThreshold { threshold } => count_triangles(g) >= threshold,
        SyntheticTask::DegreeParity => {
            let odd = degrees_of(g.num_nodes(), g.edges())
                .iter()
                .filter(|&&d| d % 2 == 1)
                .count();
            2 * odd > g.num_nodes()
        }
    }
}

/// Generate a binary-task dataset. Deterministic in `(spec, seed)`; the split
/// is stratified by label with exactly `floor(0.8n)` train and `floor(0.1n)`
/// valid graphs.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seed::rng(seed, "synthetic-graphs");
    let mut graphs = Vec::with_capacity(spec.num_graphs);
    for _ in 0..spec.num_graphs {
        let n = rng.gen_range(spec.min_nodes..=spec.max_nodes);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(spec.edge_prob) {
                    edges.push((i, j));
                    edges.push((j, i));
                }
            }
        }
        let feats = degree_one_hot(n, &edges);
        let unlabeled = Graph::new(feats, edges, None, Label::Binary(vec![None]))?;
        let y = label_for(spec.task, &unlabeled);
        graphs.push(Graph {
            label: Label::Binary(vec![Some(y)]),
            ..unlabeled
        });
    }
    let splits = stratified_split(&graphs, seed)?;
    Dataset::new(graphs, TaskType::Binary, splits)
}

fn stratified_split(graphs: &[Graph], seed: u64) -> Result<Splits> {
    let mut rng = seed::rng(seed, "synthetic-split");
    let mut by_class: BTreeMap<bool, Vec<usize>> = BTreeMap::new();
    for (i, g) in graphs.iter().enumerate() {
        let key = matches!(g.label(), Label::Binary(v) if v[0] == Some(true));
        by_class.entry(key).or_default().push(i);
    }
    // Interleave classes by relative position so every prefix is close to
    // the overall class ratio.
    let mut keyed: Vec<(f64, bool, usize)> = Vec::with_capacity(graphs.len());
    for (&class, members) in by_class.iter_mut() {
        members.shuffle(&mut rng);
        let m = members.len() as f64;
        for (rank, &i) in members.iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / m, class, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = graphs.len();
    let n_train = n * 8 / 10;
    let n_valid = n / 10;
    let mut order: Vec<usize> = keyed.into_iter().map(|k| k.2).collect();
    let mut test = order.split_off(n_train + n_valid);
    let mut valid = order.split_off(n_train);
    let mut train = order;
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(Splits { train, valid, test })
}
