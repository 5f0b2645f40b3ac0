use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{Label, TaskType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    Ap,
    Accuracy,
}

impl Metric {
    pub fn default_for(task: TaskType) -> Self {
        match task {
            TaskType::Binary => Metric::Auc,
            TaskType::MultiBinary { .. } => Metric::Ap,
            TaskType::MultiClass { .. } => Metric::Accuracy,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Ap => "ap",
            Metric::Accuracy => "accuracy",
        }
    }

    pub fn check_task(self, task: TaskType) -> Result<()> {
        if matches!(task, TaskType::MultiClass { .. }) && self != Metric::Accuracy {
            return Err(Error::Metric(format!(
                "metric {} needs binary targets but the task is multi-class",
                self.as_str()
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auc" | "roc-auc" | "rocauc" => Ok(Metric::Auc),
            "ap" => Ok(Metric::Ap),
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            _ => Err(Error::Metric(format!("unknown metric {s:?}; expected auc, ap or accuracy"))),
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Metric(format!("{a} scores for {b} labels")));
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("ROC-AUC needs both positive and negative labels".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Twice the rank sum of the positives keeps tie averages integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1, average (i + j + 2) / 2
        let twice_avg = (i + j + 2) as u64;
        let p = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        twice_rank_sum += p * twice_avg;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok((twice_u as f64 / 2.0) / (p * n) as f64)
}

/// Descending score order; equal scores keep their original order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Mean precision at the rank of each positive, ranking by descending
/// score with ties broken by original index.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::Metric("average precision needs at least one positive".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, &i) in ranking(scores).iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

/// Index of the largest value, first index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::Metric("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Metric value over graph-level logits (`B x C`), plus per-task values for
/// multi-binary tasks. Tasks lacking either class are skipped.
pub fn score(metric: Metric, task: TaskType, logits: &Tensor, labels: &[Label]) -> Result<(f64, Option<Vec<f64>>)> {
    metric.check_task(task)?;
    check_lengths(logits.rows(), labels.len())?;
    if let TaskType::MultiClass { .. } = task {
        let preds: Vec<usize> = (0..logits.rows()).map(|r| argmax(logits.row(r))).collect();
        let ys = labels
            .iter()
            .map(|l| match l {
                Label::Class(c) => Ok(*c),
                Label::Binary(_) => Err(Error::Metric("binary label in a multi-class task".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok((accuracy(&preds, &ys)?, None));
    }

    let k = task.num_outputs();
    let mut per_task = Vec::new();
    let (mut hits, mut seen) = (0usize, 0usize);
    for j in 0..k {
        let mut s = Vec::new();
        let mut y = Vec::new();
        for (r, l) in labels.iter().enumerate() {
            let Label::Binary(v) = l else {
                return Err(Error::Metric("class label in a binary task".into()));
            };
            if let Some(b) = v.get(j).copied().flatten() {
                s.push(logits.get(r, j));
                y.push(b);
            }
        }
        match metric {
            Metric::Accuracy => {
                // argmax over [0, z] with first-index ties: positive iff z > 0
                let h = s.iter().zip(&y).filter(|(&z, &b)| (z > 0.0) == b).count();
                hits += h;
                seen += y.len();
                if !y.is_empty() {
                    per_task.push(h as f64 / y.len() as f64);
                }
            }
            Metric::Auc | Metric::Ap => {
                if y.contains(&true) && y.contains(&false) {
                    per_task.push(if metric == Metric::Auc {
                        roc_auc(&s, &y)?
                    } else {
                        average_precision(&s, &y)?
                    });
                }
            }
        }
    }
    let value = match metric {
        Metric::Accuracy => {
            if seen == 0 {
                return Err(Error::Metric("no labelled targets to score".into()));
            }
            hits as f64 / seen as f64
        }
        _ => {
            if per_task.is_empty() {
                return Err(Error::Metric(format!(
                    "{} undefined: no task has both positive and negative labels",
                    metric.as_str()
                )));
            }
            per_task.iter().sum::<f64>() / per_task.len() as f64
        }
    };
    let per_task = matches!(task, TaskType::MultiBinary { .. }).then_some(per_task);
    Ok((value, per_task))
}
