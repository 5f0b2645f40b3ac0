//! Losses, metrics, and from-scratch training of a discrete architecture.

mod loss;
mod metrics;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use loss::{bce_masked, ce, task_loss};
pub use metrics::{accuracy, argmax, average_precision, ranking, roc_auc, score, Metric};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, Dataset, Graph, GraphBatch, Split};
use crate::ops::OpConfig;
use crate::params::{Ctx, ParamKind, Sgd};
use crate::seed;
use crate::supernet::{ArchEncoding, Mode, NetConfig, Supernet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HParams {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global L2 clip on the gradient.
    pub grad_clip: Option<f64>,
    pub batch_size: usize,
    pub hidden_size: usize,
    pub dropout: f64,
    pub virtual_node: bool,
    pub epochs: usize,
    pub seed: u64,
    /// Defaults to the task's standard metric.
    pub metric: Option<Metric>,
    pub ops: OpConfig,
}

impl Default for HParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            grad_clip: None,
            batch_size: 32,
            hidden_size: 32,
            dropout: 0.0,
            virtual_node: false,
            epochs: 50,
            seed: 0,
            metric: None,
            ops: OpConfig::default(),
        }
    }
}

impl HParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if self.batch_size == 0 || self.hidden_size == 0 {
            return bad("batch_size and hidden_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn metric_for(&self, ds: &Dataset) -> Result<Metric> {
        let m = self.metric.unwrap_or_else(|| Metric::default_for(ds.task));
        m.check_task(ds.task)?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_task: Option<Vec<f64>>,
    pub loss: f64,
    pub split: Split,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: Supernet,
    pub best_epoch: usize,
    /// Train, valid and test reports of the best model.
    pub reports: Vec<EvalReport>,
    pub history: Vec<EpochLog>,
}

/// Network shape for `arch` on `ds` (after any virtual-node transform).
pub fn net_config(ds: &Dataset, num_blocks: usize, hidden: usize, dropout: f64, ops: OpConfig) -> NetConfig {
    NetConfig {
        in_dim: ds.feature_dim(),
        edge_dim: ds.edge_feature_dim(),
        hidden,
        num_blocks,
        num_outputs: ds.task.num_outputs(),
        dropout,
        ops,
    }
}

/// Batches of `batch_size` graphs in the given order.
pub fn make_batches(graphs: &[&Graph], batch_size: usize) -> Result<Vec<GraphBatch>> {
    graphs.chunks(batch_size.max(1)).map(batch_graphs).collect()
}

/// Logits and mean loss over prebuilt batches, without dropout.
pub fn predict(net: &Supernet, mode: Mode, batches: &[GraphBatch], ds: &Dataset) -> Result<(Tensor, f64)> {
    let mut rows = Vec::new();
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for b in batches {
        let mut ctx = Ctx::new(&net.store);
        let y = net.forward(&mut ctx, b, mode, None)?;
        // Loss may be undefined on an all-missing batch; it is reported only.
        if let Ok(l) = task_loss(&mut ctx.tape, y, &b.labels, ds.task) {
            loss_sum += ctx.tape.value(l).item() * b.num_graphs() as f64;
            count += b.num_graphs();
        }
        rows.extend(ctx.tape.value(y).to_rows());
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("nothing to predict".into()));
    }
    let loss = if count == 0 { f64::NAN } else { loss_sum / count as f64 };
    Ok((Tensor::from_rows(&rows)?, loss))
}

/// Score `net` on one split.
pub fn evaluate(
    net: &Supernet,
    mode: Mode,
    ds: &Dataset,
    split: Split,
    metric: Metric,
    batch_size: usize,
    epoch: usize,
) -> Result<EvalReport> {
    let graphs = ds.split(split);
    if graphs.is_empty() {
        return Err(Error::InvalidArgument(format!("{} split is empty", split.name())));
    }
    let batches = make_batches(&graphs, batch_size)?;
    let (logits, loss) = predict(net, mode, &batches, ds)?;
    let labels: Vec<_> = graphs.iter().map(|g| g.label().clone()).collect();
    let (value, per_task) = score(metric, ds.task, &logits, &labels)?;
    Ok(EvalReport { metric, value, per_task, loss, split, epoch })
}

/// One optimization step on `batch`; returns the loss before the update.
pub fn train_step(
    net: &mut Supernet,
    mode: Mode,
    batch: &GraphBatch,
    ds: &Dataset,
    opt: &mut Sgd,
    dropout_rng: Option<&mut seed::Rng>,
) -> Result<f64> {
    let (loss, grads) = {
        let mut ctx = Ctx::new(&net.store);
        let y = net.forward(&mut ctx, batch, mode, dropout_rng)?;
        let l = task_loss(&mut ctx.tape, y, &batch.labels, ds.task)?;
        ctx.tape.backward(l)?;
        (ctx.tape.value(l).item(), ctx.grads())
    };
    if !loss.is_finite() {
        return Err(Error::InvalidArgument(format!("training diverged (loss {loss})")));
    }
    opt.step(&mut net.store, &grads);
    Ok(loss)
}

/// Train `arch` from a fresh initialization and keep the best validation
/// epoch (epoch 0 is the untrained model; ties go to the earliest).
pub fn train_discrete(arch: &ArchEncoding, dataset: &Dataset, hp: &HParams) -> Result<TrainOutcome> {
    hp.validate()?;
    arch.validate()?;
    let vn;
    let ds = if hp.virtual_node {
        vn = dataset.with_virtual_nodes();
        &vn
    } else {
        dataset
    };
    let metric = hp.metric_for(ds)?;
    for s in [Split::Train, Split::Valid] {
        if ds.splits.get(s).is_empty() {
            return Err(Error::InvalidArgument(format!("{} split is empty", s.name())));
        }
    }
    let cfg = net_config(ds, arch.num_blocks, hp.hidden_size, hp.dropout, hp.ops);
    let mut net = Supernet::for_arch(cfg, arch, seed::sub_seed(hp.seed, "train-init"))?;
    let mode_arch = arch.clone();
    let mode = Mode::Discrete(&mode_arch);
    let mut opt = Sgd::new(hp.learning_rate, hp.momentum, ParamKind::Weight).with_clip(hp.grad_clip);
    let mut shuffle_rng = seed::rng(hp.seed, "train-shuffle");
    let mut dropout_rng = seed::rng(hp.seed, "train-dropout");

    let valid_batches = make_batches(&ds.split(Split::Valid), hp.batch_size)?;
    let valid_labels: Vec<_> = ds.split(Split::Valid).iter().map(|g| g.label().clone()).collect();
    let valid_score = |net: &Supernet| -> Result<f64> {
        let (logits, _) = predict(net, mode, &valid_batches, ds)?;
        Ok(score(metric, ds.task, &logits, &valid_labels)?.0)
    };

    let mut best = (valid_score(&net)?, 0usize, net.store.clone());
    let mut history = Vec::with_capacity(hp.epochs);
    let mut order: Vec<usize> = ds.splits.get(Split::Train).to_vec();
    for epoch in 1..=hp.epochs {
        order.shuffle(&mut shuffle_rng);
        let graphs: Vec<&Graph> = order.iter().map(|&i| &ds.graphs[i]).collect();
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for b in make_batches(&graphs, hp.batch_size)? {
            loss_sum += train_step(&mut net, mode, &b, ds, &mut opt, Some(&mut dropout_rng))?;
            steps += 1;
        }
        let v = valid_score(&net)?;
        history.push(EpochLog { epoch, train_loss: loss_sum / steps as f64, valid_metric: v });
        if v > best.0 {
            best = (v, epoch, net.store.clone());
        }
    }
    net.store = best.2;
    let reports = Split::ALL
        .iter()
        .filter(|&&s| !ds.splits.get(s).is_empty())
        .map(|&s| evaluate(&net, mode, ds, s, metric, hp.batch_size, best.1))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutcome { model: net, best_epoch: best.1, reports, history })
}

#[cfg(test)]
mod tests;
