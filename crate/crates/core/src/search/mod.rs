//! First-order differentiable search: operation weights descend the
//! training loss, architecture logits the validation loss, while the
//! mixing temperature anneals.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, GraphBatch, Split};
use crate::ops::{AggOp, FusionOp, OpConfig, ReadoutOp};
use crate::params::{Ctx, ParamKind, Sgd};
use crate::seed;
use crate::supernet::{ArchEncoding, BlockChoice, Mode, SearchSpace, Supernet};
use crate::trainer::{make_batches, net_config, predict, score, task_loss, Metric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anneal {
    Linear,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub num_blocks: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_weights: f64,
    pub momentum: f64,
    pub lr_alpha: f64,
    /// Global L2 clip on the weight gradient.
    pub grad_clip: Option<f64>,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub anneal: Anneal,
    /// Restrict every block to this aggregator (topology-only search).
    pub fixed_aggregation: Option<AggOp>,
    pub aggregation_candidates: Vec<AggOp>,
    pub fusion_candidates: Vec<FusionOp>,
    pub readout_candidates: Vec<ReadoutOp>,
    pub dropout: f64,
    pub virtual_node: bool,
    pub metric: Option<Metric>,
    pub ops: OpConfig,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let space = SearchSpace::default();
        Self {
            num_blocks: 4,
            hidden: 32,
            epochs: 20,
            batch_size: 32,
            lr_weights: 0.01,
            momentum: 0.9,
            lr_alpha: 3.0,
            grad_clip: Some(1.0),
            lambda_start: 1.0,
            lambda_end: 0.1,
            anneal: Anneal::Linear,
            fixed_aggregation: None,
            aggregation_candidates: space.aggregation,
            fusion_candidates: space.fusion,
            readout_candidates: space.readout,
            dropout: 0.0,
            virtual_node: false,
            metric: None,
            ops: OpConfig::default(),
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_blocks == 0 {
            return bad("num_blocks must be at least 1".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return bad("epochs, batch_size and hidden must be positive".into());
        }
        if !(self.lambda_end > 0.0 && self.lambda_start >= self.lambda_end && self.lambda_start.is_finite()) {
            return bad(format!(
                "temperatures need lambda_start >= lambda_end > 0, got {} and {}",
                self.lambda_start, self.lambda_end
            ));
        }
        if !(self.lr_weights > 0.0 && self.lr_alpha > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.dropout) {
            return bad("momentum and dropout must lie in [0, 1)".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        self.space().validate()
    }

    pub fn space(&self) -> SearchSpace {
        SearchSpace {
            fusion: self.fusion_candidates.clone(),
            aggregation: match self.fixed_aggregation {
                Some(op) => vec![op],
                None => self.aggregation_candidates.clone(),
            },
            readout: self.readout_candidates.clone(),
        }
    }
}

/// Temperature for `epoch` (0-based).
pub fn anneal(epoch: usize, cfg: &SearchConfig) -> f64 {
    let (a, b) = (cfg.lambda_start, cfg.lambda_end);
    if cfg.epochs <= 1 {
        return a;
    }
    let t = epoch.min(cfg.epochs - 1) as f64 / (cfg.epochs - 1) as f64;
    if t == 1.0 {
        return b;
    }
    match cfg.anneal {
        Anneal::Linear => a + (b - a) * t,
        Anneal::Exponential => a * (b / a).powf(t),
    }
}

/// Uniform choice at every site; an all-ZERO selection is redrawn.
pub fn random_architecture(cfg: &SearchConfig, seed: u64) -> Result<ArchEncoding> {
    cfg.validate()?;
    let space = cfg.space();
    let mut rng = seed::rng(seed, "random-architecture");
    let blocks = (0..cfg.num_blocks)
        .map(|k| {
            let select = loop {
                let s: Vec<u8> = (0..=k).map(|_| rng.gen_range(0..2)).collect();
                if s.contains(&1) {
                    break s;
                }
            };
            BlockChoice {
                select,
                fusion: *space.fusion.choose(&mut rng).expect("non-empty"),
                agg: *space.aggregation.choose(&mut rng).expect("non-empty"),
            }
        })
        .collect();
    Ok(ArchEncoding {
        num_blocks: cfg.num_blocks,
        blocks,
        readout: *space.readout.choose(&mut rng).expect("non-empty"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_metric: f64,
    pub lambda: f64,
    pub arch: ArchEncoding,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchHistory {
    pub epochs: Vec<SearchEpoch>,
}

impl SearchHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&serde_json::to_string(e).expect("history serializes"));
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub arch: ArchEncoding,
    pub history: SearchHistory,
    pub best_epoch: usize,
    /// Supernet state at the best epoch.
    pub supernet: Supernet,
    pub lambda: f64,
}

fn step(
    net: &mut Supernet,
    opt: &mut Sgd,
    batch: &GraphBatch,
    ds: &Dataset,
    lambda: f64,
    dropout_rng: Option<&mut seed::Rng>,
) -> Result<f64> {
    let (loss, grads) = {
        let mut ctx = Ctx::new(&net.store);
        let y = net.forward(&mut ctx, batch, Mode::Relaxed { lambda }, dropout_rng)?;
        let l = task_loss(&mut ctx.tape, y, &batch.labels, ds.task)?;
        ctx.tape.backward(l)?;
        (ctx.tape.value(l).item(), ctx.grads())
    };
    if !loss.is_finite() {
        return Err(Error::InvalidArgument(format!("search diverged (loss {loss})")));
    }
    opt.step(&mut net.store, &grads);
    Ok(loss)
}

/// Update operation weights on `batch`; architecture logits stay fixed.
pub fn weight_step(
    net: &mut Supernet,
    opt: &mut Sgd,
    batch: &GraphBatch,
    ds: &Dataset,
    lambda: f64,
    dropout_rng: Option<&mut seed::Rng>,
) -> Result<f64> {
    if opt.kind != ParamKind::Weight {
        return Err(Error::InvalidArgument("weight step needs a weight optimizer".into()));
    }
    step(net, opt, batch, ds, lambda, dropout_rng)
}

/// Update architecture logits on `batch`; operation weights stay fixed.
pub fn alpha_step(net: &mut Supernet, opt: &mut Sgd, batch: &GraphBatch, ds: &Dataset, lambda: f64) -> Result<f64> {
    if opt.kind != ParamKind::Arch {
        return Err(Error::InvalidArgument("alpha step needs an architecture optimizer".into()));
    }
    step(net, opt, batch, ds, lambda, None)
}

/// Alternate weight and logit updates for `cfg.epochs` epochs and derive
/// the architecture of the best validation epoch (ties to the earliest).
pub fn search(dataset: &Dataset, cfg: &SearchConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    let vn;
    let ds = if cfg.virtual_node {
        vn = dataset.with_virtual_nodes();
        &vn
    } else {
        dataset
    };
    for s in [Split::Train, Split::Valid] {
        if ds.splits.get(s).is_empty() {
            return Err(Error::InvalidArgument(format!("{} split is empty", s.name())));
        }
    }
    let metric = cfg.metric.unwrap_or_else(|| Metric::default_for(ds.task));
    metric.check_task(ds.task)?;

    let net_cfg = net_config(ds, cfg.num_blocks, cfg.hidden, cfg.dropout, cfg.ops);
    let mut net = Supernet::new(net_cfg, &cfg.space(), seed::sub_seed(cfg.seed, "search-init"))?;
    let mut w_opt = Sgd::new(cfg.lr_weights, cfg.momentum, ParamKind::Weight).with_clip(cfg.grad_clip);
    let mut a_opt = Sgd::new(cfg.lr_alpha, 0.0, ParamKind::Arch);
    let mut shuffle_rng = seed::rng(cfg.seed, "search-shuffle");
    let mut dropout_rng = seed::rng(cfg.seed, "search-dropout");

    let valid_graphs = ds.split(Split::Valid);
    let valid_eval = make_batches(&valid_graphs, cfg.batch_size)?;
    let valid_labels: Vec<_> = valid_graphs.iter().map(|g| g.label().clone()).collect();
    let mut train_order = ds.splits.get(Split::Train).to_vec();
    let mut valid_order = ds.splits.get(Split::Valid).to_vec();

    let mut history = SearchHistory::default();
    let mut best: Option<(f64, usize, Supernet, f64)> = None;
    for epoch in 0..cfg.epochs {
        let lambda = anneal(epoch, cfg);
        train_order.shuffle(&mut shuffle_rng);
        valid_order.shuffle(&mut shuffle_rng);
        let pick = |order: &[usize]| -> Vec<&Graph> { order.iter().map(|&i| &ds.graphs[i]).collect() };
        let train_batches = make_batches(&pick(&train_order), cfg.batch_size)?;
        let valid_batches = make_batches(&pick(&valid_order), cfg.batch_size)?;

        let mut loss_sum = 0.0;
        for (i, tb) in train_batches.iter().enumerate() {
            loss_sum += weight_step(&mut net, &mut w_opt, tb, ds, lambda, Some(&mut dropout_rng))?;
            alpha_step(&mut net, &mut a_opt, &valid_batches[i % valid_batches.len()], ds, lambda)?;
        }
        let (logits, valid_loss) = predict(&net, Mode::Relaxed { lambda }, &valid_eval, ds)?;
        let valid_metric = score(metric, ds.task, &logits, &valid_labels)?.0;
        history.epochs.push(SearchEpoch {
            epoch,
            train_loss: loss_sum / train_batches.len() as f64,
            valid_loss,
            valid_metric,
            lambda,
            arch: net.derive_architecture(),
        });
        if best.as_ref().is_none_or(|b| valid_metric > b.0) {
            best = Some((valid_metric, epoch, net.clone(), lambda));
        }
    }
    let (_, best_epoch, supernet, lambda) = best.expect("at least one epoch");
    Ok(SearchOutcome {
        arch: history.epochs[best_epoch].arch.clone(),
        history,
        best_epoch,
        supernet,
        lambda,
    })
}
