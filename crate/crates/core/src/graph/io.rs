//! JSON-lines graph files and JSON split files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Dataset, Graph, Label, Splits, TaskType};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One line of a graph file.
///
/// `node_feat: null` means the graph has no node features; every node then
/// gets the constant feature `[1.0]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecord {
    pub num_nodes: usize,
    #[serde(default)]
    pub node_feat: Option<Vec<Vec<f64>>>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default)]
    pub edge_feat: Option<Vec<Vec<f64>>>,
    pub label: Value,
}

impl GraphRecord {
    pub fn from_graph(g: &Graph) -> Self {
        let label = match g.label() {
            Label::Class(c) => Value::from(*c),
            Label::Binary(v) if v.len() == 1 && v[0].is_some() => Value::from(u8::from(v[0] == Some(true))),
            Label::Binary(v) => Value::Array(
                v.iter()
                    .map(|x| x.map_or(Value::Null, |b| Value::from(u8::from(b))))
                    .collect(),
            ),
        };
        GraphRecord {
            num_nodes: g.num_nodes(),
            node_feat: Some(g.node_features().to_rows()),
            edges: g.edges().iter().map(|&(s, d)| [s, d]).collect(),
            edge_feat: g.edge_features().map(Tensor::to_rows),
            label,
        }
    }

    pub fn into_graph(self, task: TaskType) -> Result<Graph> {
        let n = self.num_nodes;
        let node_features = match self.node_feat {
            Some(rows) => {
                if rows.len() != n {
                    return Err(Error::Validation(format!(
                        "num_nodes is {n} but node_feat has {} rows",
                        rows.len()
                    )));
                }
                if rows.is_empty() {
                    Tensor::zeros(&[0, 0])
                } else {
                    Tensor::from_rows(&rows).map_err(|_| {
                        Error::Validation("node_feat rows have inconsistent widths".into())
                    })?
                }
            }
            None => Tensor::full(&[n, 1], 1.0),
        };
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let edge_features = match self.edge_feat {
            Some(rows) if rows.is_empty() => None,
            Some(rows) => Some(Tensor::from_rows(&rows).map_err(|_| {
                Error::Validation("edge_feat rows have inconsistent widths".into())
            })?),
            None => None,
        };
        let label = parse_label(&self.label, task)?;
        task.check_label(&label)?;
        Graph::new(node_features, edges, edge_features, label)
    }
}

fn binary_entry(v: &Value) -> Result<Option<bool>> {
    match v {
        Value::Null => Ok(None),
        Value::Number(x) => match x.as_f64() {
            Some(0.0) => Ok(Some(false)),
            Some(1.0) => Ok(Some(true)),
            _ => Err(Error::Validation(format!(
                "binary label must be 0, 1 or null, got {x}"
            ))),
        },
        other => Err(Error::Validation(format!("invalid binary label {other}"))),
    }
}

fn parse_label(v: &Value, task: TaskType) -> Result<Label> {
    match task {
        TaskType::MultiClass { .. } => {
            let c = v.as_u64().ok_or_else(|| {
                Error::Validation(format!("multi-class label must be a class index, got {v}"))
            })?;
            Ok(Label::Class(c as usize))
        }
        TaskType::Binary | TaskType::MultiBinary { .. } => match v {
            Value::Array(items) => Ok(Label::Binary(
                items.iter().map(binary_entry).collect::<Result<_>>()?,
            )),
            scalar => Ok(Label::Binary(vec![binary_entry(scalar)?])),
        },
    }
}

pub fn load_splits(path: &Path) -> Result<Splits> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Read a JSON-lines graph file plus its split file. Graph order follows the
/// file; errors name the offending line.
pub fn load_dataset(path: &Path, splits_path: &Path, task: TaskType) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut graphs = Vec::new();
    let mut width: Option<(usize, Option<usize>)> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GraphRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let at = |e: Error| Error::Validation(format!("{}:{line_no}: {e}", path.display()));
        let g = record.into_graph(task).map_err(at)?;
        let w = (g.feature_dim(), g.edge_feature_dim());
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(at(Error::Validation(format!(
                    "feature widths {w:?} differ from earlier graphs {expected:?}"
                ))))
            }
            _ => {}
        }
        graphs.push(g);
    }
    let splits = load_splits(splits_path)?;
    Dataset::new(graphs, task, splits)
}

/// Write `graphs.jsonl`-style and split files.
pub fn save_dataset(ds: &Dataset, path: &Path, splits_path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for g in &ds.graphs {
        serde_json::to_writer(&mut w, &GraphRecord::from_graph(g))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let splits = serde_json::to_string(&ds.splits)?;
    std::fs::write(splits_path, splits + "\n").map_err(|e| Error::io(splits_path, e))
}
