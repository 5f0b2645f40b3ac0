//! Neighborhood aggregation operators. Each maps `N x d` node states to
//! `N x d` without touching the graph structure; messages flow along the
//! directed edges `src -> dst` of the batch.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::AggOp;
use crate::autodiff::{SegmentMode, Tape, Tensor, Var};
use crate::error::Result;
use crate::graph::GraphBatch;
use crate::params::{bias_init, glorot, Ctx, ParamId, ParamKind, ParamStore};
use crate::seed;

/// Non-learnable operator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpConfig {
    /// MF keeps one weight matrix per degree `0..=max_degree`; larger
    /// degrees share the last one.
    pub max_degree: usize,
    /// ExpC expansion factor `k` (hidden width `k * d`).
    pub expc_factor: usize,
    pub leaky_slope: f64,
    /// Test hook: MF without its output sigmoid.
    #[doc(hidden)]
    pub mf_sigmoid: bool,
}

impl Default for OpConfig {
    fn default() -> Self {
        Self {
            max_degree: 5,
            expc_factor: 2,
            leaky_slope: 0.2,
            mf_sigmoid: true,
        }
    }
}

/// Two affine layers with a relu in between.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn init(store: &mut ParamStore, rng: &mut seed::Rng, name: &str, d: usize) -> Self {
        Mlp {
            w1: store.add(format!("{name}.w1"), ParamKind::Weight, glorot(rng, d, d)),
            b1: store.add(format!("{name}.b1"), ParamKind::Weight, bias_init(rng, d, d)),
            w2: store.add(format!("{name}.w2"), ParamKind::Weight, glorot(rng, d, d)),
            b2: store.add(format!("{name}.b2"), ParamKind::Weight, bias_init(rng, d, d)),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (
            ctx.param(self.w1),
            ctx.param(self.b1),
            ctx.param(self.w2),
            ctx.param(self.b2),
        );
        let t = &mut ctx.tape;
        let h = t.matmul(x, w1)?;
        let h = t.add(h, b1)?;
        let h = t.relu(h);
        let h = t.matmul(h, w2)?;
        t.add(h, b2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GcnParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Shared by the three attention variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatParams {
    pub weight: ParamId,
    pub att_src: ParamId,
    pub att_dst: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GinParams {
    pub eps: ParamId,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenParams {
    pub beta: ParamId,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MfParams {
    /// Indexed by clamped degree.
    pub weights: Vec<ParamId>,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpcParams {
    pub expand: ParamId,
    pub compress: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggParams {
    Gcn(GcnParams),
    Gat(GatParams),
    Gin(GinParams),
    Gen(GenParams),
    Mf(MfParams),
    Expc(ExpcParams),
}

impl AggParams {
    pub fn init(
        op: AggOp,
        d: usize,
        cfg: &OpConfig,
        store: &mut ParamStore,
        rng: &mut seed::Rng,
        name: &str,
    ) -> Self {
        let w = ParamKind::Weight;
        let bias = |store: &mut ParamStore, rng: &mut seed::Rng| {
            store.add(format!("{name}.bias"), w, bias_init(rng, d, d))
        };
        match op {
            AggOp::Gcn => AggParams::Gcn(GcnParams {
                weight: store.add(format!("{name}.weight"), w, glorot(rng, d, d)),
                bias: bias(store, rng),
            }),
            AggOp::Gat | AggOp::GatSym | AggOp::GatCos => AggParams::Gat(GatParams {
                weight: store.add(format!("{name}.weight"), w, glorot(rng, d, d)),
                att_src: store.add(format!("{name}.att_src"), w, glorot(rng, d, 1)),
                att_dst: store.add(format!("{name}.att_dst"), w, glorot(rng, d, 1)),
                bias: bias(store, rng),
            }),
            AggOp::Gin => AggParams::Gin(GinParams {
                eps: store.add(format!("{name}.eps"), w, Tensor::vector(vec![0.0])),
                mlp: Mlp::init(store, rng, &format!("{name}.mlp"), d),
            }),
            AggOp::Gen => AggParams::Gen(GenParams {
                beta: store.add(format!("{name}.beta"), w, Tensor::vector(vec![1.0])),
                mlp: Mlp::init(store, rng, &format!("{name}.mlp"), d),
            }),
            AggOp::Mf => AggParams::Mf(MfParams {
                weights: (0..=cfg.max_degree)
                    .map(|k| store.add(format!("{name}.w{k}"), w, glorot(rng, d, d)))
                    .collect(),
                bias: bias(store, rng),
            }),
            AggOp::Expc => {
                let k = cfg.expc_factor.max(1);
                AggParams::Expc(ExpcParams {
                    expand: store.add(format!("{name}.expand"), w, glorot(rng, d, k * d)),
                    compress: store.add(format!("{name}.compress"), w, glorot(rng, k * d, d)),
                    bias: bias(store, rng),
                })
            }
        }
    }
}

/// Dispatch to the operator named by `op`. `edge_h` is the block's
/// projected edge features (`E x d`), used by GEN only.
pub fn aggregate(
    ctx: &mut Ctx,
    op: AggOp,
    batch: &GraphBatch,
    h: Var,
    edge_h: Option<Var>,
    params: &AggParams,
    cfg: &OpConfig,
) -> Result<Var> {
    match (op, params) {
        (AggOp::Gcn, AggParams::Gcn(p)) => gcn(ctx, batch, h, p),
        (AggOp::Gat, AggParams::Gat(p)) => gat(ctx, batch, h, p, GatVariant::Plain, cfg),
        (AggOp::GatSym, AggParams::Gat(p)) => gat(ctx, batch, h, p, GatVariant::Sym, cfg),
        (AggOp::GatCos, AggParams::Gat(p)) => gat(ctx, batch, h, p, GatVariant::Cos, cfg),
        (AggOp::Gin, AggParams::Gin(p)) => gin(ctx, batch, h, p),
        (AggOp::Gen, AggParams::Gen(p)) => gen(ctx, batch, h, edge_h, p),
        (AggOp::Mf, AggParams::Mf(p)) => mf(ctx, batch, h, p, cfg),
        (AggOp::Expc, AggParams::Expc(p)) => expc(ctx, batch, h, p),
        (op, p) => Err(crate::Error::InvalidArgument(format!(
            "parameters {p:?} do not belong to aggregator {op}"
        ))),
    }
}

fn column(values: Vec<f64>) -> Tensor {
    let n = values.len();
    Tensor::matrix(n, 1, values).expect("n x 1")
}

/// Sum of `h[src]` into each destination.
fn neighbor_sum(t: &mut Tape, batch: &GraphBatch, h: Var) -> Result<Var> {
    let msgs = t.gather_rows(h, &batch.src)?;
    t.segment_reduce(msgs, &batch.dst, batch.num_nodes(), SegmentMode::Sum)
}

/// Softmax of `logits` (rows = edges) over the edges sharing a segment,
/// independently per column.
pub(crate) fn segment_softmax(
    t: &mut Tape,
    logits: Var,
    seg: &Arc<[usize]>,
    n: usize,
) -> Result<Var> {
    let lv = t.value(logits);
    let c = lv.cols();
    let mut max = vec![f64::NEG_INFINITY; n * c];
    for (r, &s) in seg.iter().enumerate() {
        for (k, &x) in lv.row(r).iter().enumerate() {
            let m = &mut max[s * c + k];
            *m = m.max(x);
        }
    }
    max.iter_mut().filter(|m| !m.is_finite()).for_each(|m| *m = 0.0);
    // The shift is a constant: softmax is invariant to it.
    let m = t.constant(Tensor::matrix(n, c, max)?);
    let mg = t.gather_rows(m, seg)?;
    let shifted = t.sub(logits, mg)?;
    let ex = t.exp(shifted);
    let z = t.segment_reduce(ex, seg, n, SegmentMode::Sum)?;
    let zg = t.gather_rows(z, seg)?;
    t.div(ex, zg)
}

/// `D^-1/2 (A + I) D^-1/2 H W + b`, with `D` the in-degree plus one.
pub fn gcn(ctx: &mut Ctx, batch: &GraphBatch, h: Var, p: &GcnParams) -> Result<Var> {
    let n = batch.num_nodes();
    let mut deg = vec![1.0f64; n];
    for &v in batch.dst.iter() {
        deg[v] += 1.0;
    }
    let edge_norm: Vec<f64> = batch
        .src
        .iter()
        .zip(batch.dst.iter())
        .map(|(&s, &d)| 1.0 / (deg[s] * deg[d]).sqrt())
        .collect();
    let self_norm: Vec<f64> = deg.iter().map(|d| 1.0 / d).collect();

    let (w, b) = (ctx.param(p.weight), ctx.param(p.bias));
    let t = &mut ctx.tape;
    let hw = t.matmul(h, w)?;
    let msgs = t.gather_rows(hw, &batch.src)?;
    let en = t.constant(column(edge_norm));
    let msgs = t.mul(msgs, en)?;
    let agg = t.segment_reduce(msgs, &batch.dst, n, SegmentMode::Sum)?;
    let sn = t.constant(column(self_norm));
    let own = t.mul(hw, sn)?;
    let out = t.add(agg, own)?;
    t.add(out, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatVariant {
    Plain,
    Sym,
    Cos,
}

/// Edge list with one self-loop per node appended; attention always
/// includes the node itself.
pub fn edges_with_self_loops(batch: &GraphBatch) -> (Arc<[usize]>, Arc<[usize]>) {
    let n = batch.num_nodes();
    let src: Arc<[usize]> = batch.src.iter().copied().chain(0..n).collect();
    let dst: Arc<[usize]> = batch.dst.iter().copied().chain(0..n).collect();
    (src, dst)
}

/// Attention coefficients over [`edges_with_self_loops`] (`(E + N) x 1`),
/// plus the transformed states `W h`.
pub fn gat_attention(
    ctx: &mut Ctx,
    batch: &GraphBatch,
    h: Var,
    p: &GatParams,
    variant: GatVariant,
    cfg: &OpConfig,
) -> Result<(Var, Var)> {
    let n = batch.num_nodes();
    let (src, dst) = edges_with_self_loops(batch);
    let w = ctx.param(p.weight);
    let wh = ctx.tape.matmul(h, w)?;
    let logits = match variant {
        GatVariant::Plain | GatVariant::Sym => {
            let (a_s, a_d) = (ctx.param(p.att_src), ctx.param(p.att_dst));
            let t = &mut ctx.tape;
            let s = t.matmul(wh, a_s)?;
            let d = t.matmul(wh, a_d)?;
            let fwd_s = t.gather_rows(s, &src)?;
            let fwd_d = t.gather_rows(d, &dst)?;
            let fwd = t.add(fwd_s, fwd_d)?;
            let fwd = t.leaky_relu(fwd, cfg.leaky_slope);
            if variant == GatVariant::Plain {
                fwd
            } else {
                let rev_s = t.gather_rows(s, &dst)?;
                let rev_d = t.gather_rows(d, &src)?;
                let rev = t.add(rev_s, rev_d)?;
                let rev = t.leaky_relu(rev, cfg.leaky_slope);
                t.add(fwd, rev)?
            }
        }
        GatVariant::Cos => {
            let t = &mut ctx.tape;
            let sq = t.mul(wh, wh)?;
            let norm2 = t.row_sum(sq);
            let norm2 = t.add_scalar(norm2, 1e-12);
            let inv = t.powf(norm2, -0.5);
            let unit = t.mul(wh, inv)?;
            let us = t.gather_rows(unit, &src)?;
            let ud = t.gather_rows(unit, &dst)?;
            let prod = t.mul(us, ud)?;
            t.row_sum(prod)
        }
    };
    let attn = segment_softmax(&mut ctx.tape, logits, &dst, n)?;
    Ok((attn, wh))
}

/// Single-head graph attention.
pub fn gat(
    ctx: &mut Ctx,
    batch: &GraphBatch,
    h: Var,
    p: &GatParams,
    variant: GatVariant,
    cfg: &OpConfig,
) -> Result<Var> {
    let (attn, wh) = gat_attention(ctx, batch, h, p, variant, cfg)?;
    let (src, dst) = edges_with_self_loops(batch);
    let b = ctx.param(p.bias);
    let t = &mut ctx.tape;
    let msgs = t.gather_rows(wh, &src)?;
    let msgs = t.mul(msgs, attn)?;
    let out = t.segment_reduce(msgs, &dst, batch.num_nodes(), SegmentMode::Sum)?;
    t.add(out, b)
}

/// `MLP((1 + eps) h_v + sum_{u->v} h_u)`.
pub fn gin(ctx: &mut Ctx, batch: &GraphBatch, h: Var, p: &GinParams) -> Result<Var> {
    let eps = ctx.param(p.eps);
    let t = &mut ctx.tape;
    let nb = neighbor_sum(t, batch, h)?;
    let scaled = t.mul(h, eps)?;
    let own = t.add(h, scaled)?;
    let x = t.add(own, nb)?;
    p.mlp.forward(ctx, x)
}

/// Softmax aggregation: messages `relu(h_u + e_uv) + 1e-7`, weighted per
/// channel by a softmax of `beta * m` over each destination's in-edges.
pub fn gen(
    ctx: &mut Ctx,
    batch: &GraphBatch,
    h: Var,
    edge_h: Option<Var>,
    p: &GenParams,
) -> Result<Var> {
    let beta = ctx.param(p.beta);
    let t = &mut ctx.tape;
    let hs = t.gather_rows(h, &batch.src)?;
    let pre = match edge_h {
        Some(e) => t.add(hs, e)?,
        None => hs,
    };
    let m = t.relu(pre);
    let m = t.add_scalar(m, 1e-7);
    let logits = t.mul(m, beta)?;
    let w = segment_softmax(t, logits, &batch.dst, batch.num_nodes())?;
    let wm = t.mul(w, m)?;
    let agg = t.segment_reduce(wm, &batch.dst, batch.num_nodes(), SegmentMode::Sum)?;
    let x = t.add(h, agg)?;
    p.mlp.forward(ctx, x)
}

/// Degree-specific transform: `sigmoid(W_deg(v) (h_v + sum_{u->v} h_u) + b)`.
pub fn mf(
    ctx: &mut Ctx,
    batch: &GraphBatch,
    h: Var,
    p: &MfParams,
    cfg: &OpConfig,
) -> Result<Var> {
    let n = batch.num_nodes();
    let top = p.weights.len() - 1;
    let nb = neighbor_sum(&mut ctx.tape, batch, h)?;
    let x = ctx.tape.add(h, nb)?;
    let mut out: Option<Var> = None;
    for (k, &wid) in p.weights.iter().enumerate() {
        let mask: Vec<f64> = batch
            .degrees
            .iter()
            .map(|&d| f64::from(u8::from(d.min(top) == k)))
            .collect();
        if mask.iter().all(|&m| m == 0.0) {
            continue;
        }
        let w = ctx.param(wid);
        let t = &mut ctx.tape;
        let xw = t.matmul(x, w)?;
        let mk = t.constant(column(mask));
        let part = t.mul(xw, mk)?;
        out = Some(match out {
            Some(acc) => t.add(acc, part)?,
            None => part,
        });
    }
    let b = ctx.param(p.bias);
    let t = &mut ctx.tape;
    let out = match out {
        Some(o) => o,
        None => t.constant(Tensor::zeros(&[n, t.shape(h)[1]])),
    };
    let out = t.add(out, b)?;
    Ok(if cfg.mf_sigmoid { t.sigmoid(out) } else { out })
}

/// Expand-activate-compress over the closed neighborhood:
/// `(sum_{u in N(v) + v} relu(h_u W_e)) W_c + b`.
pub fn expc(ctx: &mut Ctx, batch: &GraphBatch, h: Var, p: &ExpcParams) -> Result<Var> {
    let (we, wc, b) = (ctx.param(p.expand), ctx.param(p.compress), ctx.param(p.bias));
    let t = &mut ctx.tape;
    let r = t.matmul(h, we)?;
    let r = t.relu(r);
    let nb = neighbor_sum(t, batch, r)?;
    let agg = t.add(r, nb)?;
    let out = t.matmul(agg, wc)?;
    t.add(out, b)
}
