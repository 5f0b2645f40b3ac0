use std::sync::Arc;

use super::{degrees_of, Graph, Label};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Block-diagonal union of several graphs.
///
/// Index vectors are shared (`Arc`) so a batch can be read from several
/// workers and handed to the tape without copying.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub node_features: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub edge_features: Option<Tensor>,
    pub graph_ids: Arc<[usize]>,
    /// Undirected degree of each node within its own graph.
    pub degrees: Vec<usize>,
    pub labels: Vec<Label>,
    /// `node_offsets[g]..node_offsets[g+1]` are the nodes of graph `g`.
    pub node_offsets: Vec<usize>,
    pub edge_offsets: Vec<usize>,
}

pub fn batch_graphs(graphs: &[&Graph]) -> Result<GraphBatch> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot batch zero graphs".into()))?;
    let d = first.feature_dim();
    let de = first.edge_feature_dim();

    let mut feats = Vec::new();
    let mut edges = Vec::new();
    let mut efeats = de.map(|_| Vec::new());
    let mut graph_ids = Vec::new();
    let mut degrees = Vec::new();
    let mut labels = Vec::with_capacity(graphs.len());
    let mut node_offsets = vec![0];
    let mut edge_offsets = vec![0];
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        if g.feature_dim() != d || g.edge_feature_dim() != de {
            return Err(Error::Validation(format!(
                "graph {gi} in batch has feature widths ({}, {:?}), expected ({d}, {de:?})",
                g.feature_dim(),
                g.edge_feature_dim()
            )));
        }
        let n = g.num_nodes();
        feats.extend_from_slice(g.node_features.data());
        edges.extend(g.edges.iter().map(|&(s, t)| (s + offset, t + offset)));
        if let (Some(acc), Some(ef)) = (efeats.as_mut(), g.edge_features.as_ref()) {
            acc.extend_from_slice(ef.data());
        }
        graph_ids.extend(std::iter::repeat_n(gi, n));
        degrees.extend(degrees_of(n, &g.edges));
        labels.push(g.label.clone());
        offset += n;
        node_offsets.push(offset);
        edge_offsets.push(edges.len());
    }
    let src: Arc<[usize]> = edges.iter().map(|e| e.0).collect();
    let dst: Arc<[usize]> = edges.iter().map(|e| e.1).collect();
    let edge_features = match (efeats, de) {
        (Some(data), Some(de)) => Some(Tensor::matrix(edges.len(), de, data)?),
        _ => None,
    };
    Ok(GraphBatch {
        node_features: Tensor::matrix(offset, d, feats)?,
        edges,
        src,
        dst,
        edge_features,
        graph_ids: graph_ids.into(),
        degrees,
        labels,
        node_offsets,
        edge_offsets,
    })
}

impl GraphBatch {
    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Recover graph `g` exactly as it was batched.
    pub fn graph(&self, g: usize) -> Result<Graph> {
        let (n0, n1) = (self.node_offsets[g], self.node_offsets[g + 1]);
        let (e0, e1) = (self.edge_offsets[g], self.edge_offsets[g + 1]);
        let d = self.node_features.cols();
        let feats = self.node_features.data()[n0 * d..n1 * d].to_vec();
        let edges = self.edges[e0..e1]
            .iter()
            .map(|&(s, t)| (s - n0, t - n0))
            .collect();
        let edge_features = self
            .edge_features
            .as_ref()
            .map(|ef| {
                let de = ef.cols();
                Tensor::matrix(e1 - e0, de, ef.data()[e0 * de..e1 * de].to_vec())
            })
            .transpose()?;
        Graph::new(
            Tensor::matrix(n1 - n0, d, feats)?,
            edges,
            edge_features,
            self.labels[g].clone(),
        )
    }
}
