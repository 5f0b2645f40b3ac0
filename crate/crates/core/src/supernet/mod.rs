//! The SFA-block supernet: relaxed mixtures over every candidate operation,
//! the same network run on a single discrete architecture, and derivation
//! of that architecture from the learned logits.

mod arch;
mod store_io;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use arch::{ArchEncoding, BlockChoice};
pub use store_io::{load_model, save_model, ModelManifest, TensorEntry};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::ops::{
    aggregate, fuse, readout, select, AggOp, AggParams, FusionOp, FusionParams, OpConfig,
    ReadoutOp,
};
use crate::params::{bias_init, glorot, Ctx, ParamId, ParamKind, ParamStore};
use crate::seed;

/// Candidate operations per decision site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub fusion: Vec<FusionOp>,
    pub aggregation: Vec<AggOp>,
    pub readout: Vec<ReadoutOp>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            fusion: FusionOp::ALL.to_vec(),
            aggregation: AggOp::DEFAULT_SPACE.to_vec(),
            readout: ReadoutOp::ALL.to_vec(),
        }
    }
}

impl SearchSpace {
    /// Every operator, including the attention variants.
    pub fn full() -> Self {
        Self {
            aggregation: AggOp::ALL.to_vec(),
            ..Self::default()
        }
    }

    pub fn with_aggregation(ops: &[AggOp]) -> Self {
        Self {
            aggregation: ops.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn check<T: PartialEq + std::fmt::Display>(name: &str, ops: &[T]) -> Result<()> {
            if ops.is_empty() {
                return Err(Error::Config(format!("{name} candidate set is empty")));
            }
            for (i, op) in ops.iter().enumerate() {
                if ops[..i].contains(op) {
                    return Err(Error::Config(format!("{name} candidate {op} listed twice")));
                }
            }
            Ok(())
        }
        check("fusion", &self.fusion)?;
        check("aggregation", &self.aggregation)?;
        check("readout", &self.readout)
    }
}

/// Shape of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_dim: usize,
    pub edge_dim: Option<usize>,
    pub hidden: usize,
    pub num_blocks: usize,
    pub num_outputs: usize,
    pub dropout: f64,
    #[serde(default)]
    pub ops: OpConfig,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden == 0 || self.num_outputs == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.num_blocks == 0 {
            return Err(Error::Config("network needs at least one block".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// How decision sites are resolved during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    /// Mix every candidate with `softmax(alpha / lambda)`.
    Relaxed { lambda: f64 },
    /// Run exactly the operations named by the encoding.
    Discrete(&'a ArchEncoding),
}

#[derive(Debug, Clone)]
struct Block {
    fusion_ops: Vec<FusionOp>,
    agg_ops: Vec<AggOp>,
    /// One `[ZERO, IDENTITY]` logit pair per input.
    select_alpha: Vec<ParamId>,
    fusion_alpha: ParamId,
    agg_alpha: ParamId,
    fusion: FusionParams,
    aggs: Vec<AggParams>,
    edge_proj: Option<ParamId>,
    norm_gain: ParamId,
    norm_bias: ParamId,
}

/// Which candidates the network was built with; needed to rebuild it
/// from saved weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Layout {
    Supernet { space: SearchSpace },
    Discrete { arch: ArchEncoding },
}

#[derive(Debug, Clone)]
pub struct Supernet {
    pub config: NetConfig,
    pub layout: Layout,
    pub store: ParamStore,
    encoder_w: ParamId,
    encoder_b: ParamId,
    blocks: Vec<Block>,
    readout_ops: Vec<ReadoutOp>,
    readout_alpha: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

/// `softmax(alpha / lambda)` with max subtraction.
pub fn arch_weights(alpha: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {lambda}")));
    }
    if alpha.is_empty() {
        return Err(Error::InvalidArgument("empty logit vector".into()));
    }
    let m = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = alpha.iter().map(|a| ((a - m) / lambda).exp()).collect();
    let z: f64 = ex.iter().sum();
    Ok(ex.into_iter().map(|e| e / z).collect())
}

/// `sum_k weights[k] * outputs[k]`; `weights` is a length-`k` vector.
pub fn mixed_op(t: &mut Tape, outputs: &[Var], weights: Var) -> Result<Var> {
    let first = *outputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("mixed op over zero candidates".into()))?;
    if t.value(weights).len() != outputs.len() {
        return Err(Error::shape("mixed_op", t.shape(weights), &[outputs.len()]));
    }
    let s0 = t.shape(first).to_vec();
    let mut acc: Option<Var> = None;
    for (k, &o) in outputs.iter().enumerate() {
        if t.shape(o) != s0.as_slice() {
            return Err(Error::shape("mixed_op", &s0, t.shape(o)));
        }
        let w = t.slice(weights, 0, k, 1)?;
        let part = t.mul(o, w)?;
        acc = Some(match acc {
            Some(a) => t.add(a, part)?,
            None => part,
        });
    }
    Ok(acc.expect("non-empty"))
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn position<T: PartialEq + std::fmt::Display>(ops: &[T], op: &T, what: &str) -> Result<usize> {
    ops.iter()
        .position(|o| o == op)
        .ok_or_else(|| Error::InvalidArgument(format!("{what} {op} is not a candidate of this network")))
}

impl Supernet {
    /// A supernet over `space` with zero logits.
    pub fn new(config: NetConfig, space: &SearchSpace, seed: u64) -> Result<Self> {
        config.validate()?;
        space.validate()?;
        let per_block = vec![(space.fusion.clone(), space.aggregation.clone()); config.num_blocks];
        Self::build(config, per_block, space.readout.clone(), Layout::Supernet { space: space.clone() }, seed)
    }

    /// A network holding only the operations of `arch`.
    pub fn for_arch(config: NetConfig, arch: &ArchEncoding, seed: u64) -> Result<Self> {
        config.validate()?;
        arch.validate()?;
        if arch.num_blocks != config.num_blocks {
            return Err(Error::Config(format!(
                "architecture has {} blocks, network config {}",
                arch.num_blocks, config.num_blocks
            )));
        }
        let per_block = arch.blocks.iter().map(|b| (vec![b.fusion], vec![b.agg])).collect();
        Self::build(config, per_block, vec![arch.readout], Layout::Discrete { arch: arch.clone() }, seed)
    }

    fn build(
        config: NetConfig,
        per_block: Vec<(Vec<FusionOp>, Vec<AggOp>)>,
        readout_ops: Vec<ReadoutOp>,
        layout: Layout,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seed::rng(seed, "supernet-init");
        let mut store = ParamStore::new();
        let d = config.hidden;
        let (w, a) = (ParamKind::Weight, ParamKind::Arch);
        let encoder_w = store.add("encoder.w", w, glorot(&mut rng, config.in_dim, d));
        let encoder_b = store.add("encoder.b", w, bias_init(&mut rng, config.in_dim, d));
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for (k, (fusion_ops, agg_ops)) in per_block.into_iter().enumerate() {
            let name = format!("block{k}");
            let slots = k + 1;
            let select_alpha = (0..slots)
                .map(|j| store.add(format!("{name}.select{j}.alpha"), a, Tensor::zeros(&[2])))
                .collect();
            let fusion_alpha = store.add(format!("{name}.fusion.alpha"), a, Tensor::zeros(&[fusion_ops.len()]));
            let agg_alpha = store.add(format!("{name}.agg.alpha"), a, Tensor::zeros(&[agg_ops.len()]));
            let fusion = FusionParams::init(&fusion_ops, slots, d, &mut store, &mut rng, &format!("{name}.fusion"));
            let aggs = agg_ops
                .iter()
                .map(|&op| AggParams::init(op, d, &config.ops, &mut store, &mut rng, &format!("{name}.{op}")))
                .collect();
            let edge_proj = match config.edge_dim {
                Some(de) if agg_ops.contains(&AggOp::Gen) => {
                    Some(store.add(format!("{name}.edge_proj"), w, glorot(&mut rng, de, d)))
                }
                _ => None,
            };
            let norm_gain = store.add(format!("{name}.norm.gain"), w, Tensor::full(&[d], 1.0));
            let norm_bias = store.add(format!("{name}.norm.bias"), w, Tensor::zeros(&[d]));
            blocks.push(Block {
                fusion_ops,
                agg_ops,
                select_alpha,
                fusion_alpha,
                agg_alpha,
                fusion,
                aggs,
                edge_proj,
                norm_gain,
                norm_bias,
            });
        }
        let readout_alpha = store.add("readout.alpha", a, Tensor::zeros(&[readout_ops.len()]));
        let head_w = store.add("head.w", w, glorot(&mut rng, d, config.num_outputs));
        let head_b = store.add("head.b", w, bias_init(&mut rng, d, config.num_outputs));
        Ok(Self {
            config,
            layout,
            store,
            encoder_w,
            encoder_b,
            blocks,
            readout_ops,
            readout_alpha,
            head_w,
            head_b,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Logits of every selection site of block `k`, `[ZERO, IDENTITY]` each.
    pub fn select_alpha(&self, k: usize) -> &[ParamId] {
        &self.blocks[k].select_alpha
    }

    pub fn fusion_alpha(&self, k: usize) -> ParamId {
        self.blocks[k].fusion_alpha
    }

    pub fn agg_alpha(&self, k: usize) -> ParamId {
        self.blocks[k].agg_alpha
    }

    pub fn readout_alpha(&self) -> ParamId {
        self.readout_alpha
    }

    pub fn fusion_ops(&self, k: usize) -> &[FusionOp] {
        &self.blocks[k].fusion_ops
    }

    pub fn agg_ops(&self, k: usize) -> &[AggOp] {
        &self.blocks[k].agg_ops
    }

    pub fn agg_params(&self, k: usize) -> &[AggParams] {
        &self.blocks[k].aggs
    }

    pub fn fusion_params(&self, k: usize) -> &FusionParams {
        &self.blocks[k].fusion
    }

    pub fn readout_ops(&self) -> &[ReadoutOp] {
        &self.readout_ops
    }

    pub fn encoder(&self) -> (ParamId, ParamId) {
        (self.encoder_w, self.encoder_b)
    }

    pub fn head(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    /// Normalization gain and bias applied after block `k`.
    pub fn norm(&self, k: usize) -> (ParamId, ParamId) {
        (self.blocks[k].norm_gain, self.blocks[k].norm_bias)
    }

    fn site_weights(&self, ctx: &mut Ctx, alpha: ParamId, lambda: f64) -> Result<Var> {
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {lambda}")));
        }
        let a = ctx.param(alpha);
        let scaled = ctx.tape.scalar_mul(a, 1.0 / lambda);
        Ok(ctx.tape.softmax_rows(scaled))
    }

    /// Raw output of block `k` (0-based) given `H^0..H^k`.
    pub fn sfa_block_forward(
        &self,
        ctx: &mut Ctx,
        batch: &GraphBatch,
        k: usize,
        history: &[Var],
        mode: Mode,
    ) -> Result<Var> {
        let block = self
            .blocks
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("no block {k}")))?;
        if history.len() != k + 1 {
            return Err(Error::InvalidArgument(format!(
                "block {k} takes {} inputs, got {}",
                k + 1,
                history.len()
            )));
        }

        let mut inputs = Vec::with_capacity(history.len());
        for (j, &h) in history.iter().enumerate() {
            let w = match mode {
                Mode::Relaxed { lambda } => {
                    let c = self.site_weights(ctx, block.select_alpha[j], lambda)?;
                    ctx.tape.slice(c, 0, 1, 1)?
                }
                Mode::Discrete(arch) => {
                    let bit = arch.blocks.get(k).map(|b| b.selected(j)).unwrap_or(false);
                    ctx.tape.constant(Tensor::scalar(if bit { 1.0 } else { 0.0 }))
                }
            };
            inputs.push(select(&mut ctx.tape, w, h)?);
        }

        let fused = match mode {
            Mode::Relaxed { lambda } => {
                let mut outs = Vec::with_capacity(block.fusion_ops.len());
                for &op in &block.fusion_ops {
                    outs.push(fuse(ctx, op, &inputs, &block.fusion)?);
                }
                let c = self.site_weights(ctx, block.fusion_alpha, lambda)?;
                mixed_op(&mut ctx.tape, &outs, c)?
            }
            Mode::Discrete(arch) => {
                let op = self.discrete_block(arch, k)?.fusion;
                position(&block.fusion_ops, &op, "fusion")?;
                fuse(ctx, op, &inputs, &block.fusion)?
            }
        };

        let edge_h = match (block.edge_proj, &batch.edge_features) {
            (Some(p), Some(e)) => {
                let pv = ctx.param(p);
                let ev = ctx.tape.constant(e.clone());
                Some(ctx.tape.matmul(ev, pv)?)
            }
            _ => None,
        };

        let cfg = &self.config.ops;
        match mode {
            Mode::Relaxed { lambda } => {
                let mut outs = Vec::with_capacity(block.agg_ops.len());
                for (op, p) in block.agg_ops.iter().zip(&block.aggs) {
                    outs.push(aggregate(ctx, *op, batch, fused, edge_h, p, cfg)?);
                }
                let c = self.site_weights(ctx, block.agg_alpha, lambda)?;
                mixed_op(&mut ctx.tape, &outs, c)
            }
            Mode::Discrete(arch) => {
                let op = self.discrete_block(arch, k)?.agg;
                let i = position(&block.agg_ops, &op, "aggregation")?;
                aggregate(ctx, op, batch, fused, edge_h, &block.aggs[i], cfg)
            }
        }
    }

    fn discrete_block<'a>(&self, arch: &'a ArchEncoding, k: usize) -> Result<&'a BlockChoice> {
        if arch.num_blocks != self.blocks.len() {
            return Err(Error::InvalidArgument(format!(
                "architecture has {} blocks, network {}",
                arch.num_blocks,
                self.blocks.len()
            )));
        }
        Ok(&arch.blocks[k])
    }

    /// Graph logits `B x C`. Dropout is applied only when `dropout_rng` is
    /// given.
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        batch: &GraphBatch,
        mode: Mode,
        mut dropout_rng: Option<&mut seed::Rng>,
    ) -> Result<Var> {
        if let Mode::Discrete(arch) = mode {
            arch.validate()?;
        }
        let (ew, eb) = (ctx.param(self.encoder_w), ctx.param(self.encoder_b));
        let x = ctx.tape.constant(batch.node_features.clone());
        let h0 = ctx.tape.matmul(x, ew)?;
        let h0 = ctx.tape.add(h0, eb)?;
        let mut history = vec![h0];
        for k in 0..self.blocks.len() {
            let raw = self.sfa_block_forward(ctx, batch, k, &history, mode)?;
            let h = ctx.tape.relu(raw);
            let (g, b) = (ctx.param(self.blocks[k].norm_gain), ctx.param(self.blocks[k].norm_bias));
            let mut h = layer_norm(&mut ctx.tape, h, g, b)?;
            if let Some(rng) = dropout_rng.as_deref_mut() {
                h = dropout(&mut ctx.tape, h, self.config.dropout, rng)?;
            }
            history.push(h);
        }
        let last = *history.last().expect("non-empty");
        let g = match mode {
            Mode::Relaxed { lambda } => {
                let mut outs = Vec::with_capacity(self.readout_ops.len());
                for &op in &self.readout_ops {
                    outs.push(readout(&mut ctx.tape, op, last, &batch.graph_ids, batch.num_graphs())?);
                }
                let c = self.site_weights(ctx, self.readout_alpha, lambda)?;
                mixed_op(&mut ctx.tape, &outs, c)?
            }
            Mode::Discrete(arch) => {
                position(&self.readout_ops, &arch.readout, "readout")?;
                readout(&mut ctx.tape, arch.readout, last, &batch.graph_ids, batch.num_graphs())?
            }
        };
        let (hw, hb) = (ctx.param(self.head_w), ctx.param(self.head_b));
        let y = ctx.tape.matmul(g, hw)?;
        ctx.tape.add(y, hb)
    }

    /// Per-site argmax of the logits (first index on ties). A block whose
    /// selection sites all prefer ZERO keeps the input with the largest
    /// IDENTITY logit.
    pub fn derive_architecture(&self) -> ArchEncoding {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let sel: Vec<&[f64]> = b.select_alpha.iter().map(|&id| self.store.get(id).data()).collect();
                let mut select: Vec<u8> = sel.iter().map(|a| u8::from(argmax_first(a) == 1)).collect();
                if !select.contains(&1) {
                    let ident: Vec<f64> = sel.iter().map(|a| a[1]).collect();
                    select[argmax_first(&ident)] = 1;
                }
                BlockChoice {
                    select,
                    fusion: b.fusion_ops[argmax_first(self.store.get(b.fusion_alpha).data())],
                    agg: b.agg_ops[argmax_first(self.store.get(b.agg_alpha).data())],
                }
            })
            .collect::<Vec<_>>();
        ArchEncoding {
            num_blocks: blocks.len(),
            blocks,
            readout: self.readout_ops[argmax_first(self.store.get(self.readout_alpha).data())],
        }
    }

    /// Set every logit so that `softmax(alpha / lambda)` is one-hot on `arch`
    /// for any reasonable `lambda`.
    pub fn set_one_hot(&mut self, arch: &ArchEncoding, magnitude: f64) -> Result<()> {
        arch.validate()?;
        if arch.num_blocks != self.blocks.len() {
            return Err(Error::InvalidArgument("architecture depth differs from network".into()));
        }
        let one_hot = |n: usize, i: usize| {
            Tensor::vector((0..n).map(|k| if k == i { magnitude } else { -magnitude }).collect())
        };
        for (b, choice) in self.blocks.iter().zip(&arch.blocks) {
            for (j, &id) in b.select_alpha.iter().enumerate() {
                self.store.set(id, one_hot(2, usize::from(choice.selected(j))))?;
            }
            let f = position(&b.fusion_ops, &choice.fusion, "fusion")?;
            self.store.set(b.fusion_alpha, one_hot(b.fusion_ops.len(), f))?;
            let a = position(&b.agg_ops, &choice.agg, "aggregation")?;
            self.store.set(b.agg_alpha, one_hot(b.agg_ops.len(), a))?;
        }
        let r = position(&self.readout_ops, &arch.readout, "readout")?;
        self.store.set(self.readout_alpha, one_hot(self.readout_ops.len(), r))
    }

    /// Mixing weights of every site at temperature `lambda`, named by site.
    pub fn mixing_weights(&self, lambda: f64) -> Result<Vec<(String, Vec<String>, Vec<f64>)>> {
        let mut out = Vec::new();
        let names = |v: &[String]| v.to_vec();
        for (k, b) in self.blocks.iter().enumerate() {
            for (j, &id) in b.select_alpha.iter().enumerate() {
                out.push((
                    format!("block{k}.select{j}"),
                    names(&["ZERO".into(), "IDENTITY".into()]),
                    arch_weights(self.store.get(id).data(), lambda)?,
                ));
            }
            out.push((
                format!("block{k}.fusion"),
                b.fusion_ops.iter().map(|o| o.to_string()).collect(),
                arch_weights(self.store.get(b.fusion_alpha).data(), lambda)?,
            ));
            out.push((
                format!("block{k}.agg"),
                b.agg_ops.iter().map(|o| o.to_string()).collect(),
                arch_weights(self.store.get(b.agg_alpha).data(), lambda)?,
            ));
        }
        out.push((
            "readout".into(),
            self.readout_ops.iter().map(|o| o.to_string()).collect(),
            arch_weights(self.store.get(self.readout_alpha).data(), lambda)?,
        ));
        Ok(out)
    }
}

/// Per-node normalization over features, then `gain * x + bias`.
fn layer_norm(t: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let d = t.shape(x)[1] as f64;
    let s = t.row_sum(x);
    let mean = t.scalar_mul(s, 1.0 / d);
    let c = t.sub(x, mean)?;
    let sq = t.mul(c, c)?;
    let v = t.row_sum(sq);
    let v = t.scalar_mul(v, 1.0 / d);
    let v = t.add_scalar(v, 1e-5);
    let inv = t.powf(v, -0.5);
    let n = t.mul(c, inv)?;
    let n = t.mul(n, gain)?;
    t.add(n, bias)
}

fn dropout(t: &mut Tape, x: Var, p: f64, rng: &mut seed::Rng) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let shape = t.shape(x).to_vec();
    let scale = 1.0 / (1.0 - p);
    let n: usize = shape.iter().product();
    let mask = (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
        .collect();
    let m = t.constant(Tensor::new(shape, mask)?);
    t.mul(x, m)
}
