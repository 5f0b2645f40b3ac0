use super::FusionOp;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, Ctx, ParamId, ParamKind, ParamStore};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmParams {
    /// `d x 4d`, gate order input, forget, cell, output.
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

/// Learnable state of one fusion site. Only CONCAT and LSTM carry weights;
/// the CONCAT projection maps `slots * d` back to `d`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FusionParams {
    pub concat: Option<ParamId>,
    pub lstm: Option<LstmParams>,
}

impl FusionParams {
    pub fn init(
        ops: &[FusionOp],
        slots: usize,
        d: usize,
        store: &mut ParamStore,
        rng: &mut seed::Rng,
        name: &str,
    ) -> Self {
        let w = ParamKind::Weight;
        let concat = ops.contains(&FusionOp::Concat).then(|| {
            store.add(format!("{name}.concat"), w, glorot(rng, slots * d, d))
        });
        let lstm = ops.contains(&FusionOp::Lstm).then(|| LstmParams {
            w_ih: store.add(format!("{name}.lstm.w_ih"), w, glorot(rng, d, 4 * d)),
            w_hh: store.add(format!("{name}.lstm.w_hh"), w, glorot(rng, d, 4 * d)),
            bias: store.add(format!("{name}.lstm.bias"), w, Tensor::zeros(&[4 * d])),
        });
        FusionParams { concat, lstm }
    }
}

fn missing(what: &str) -> Error {
    Error::InvalidArgument(format!("fusion site has no {what} parameters"))
}

/// Combine the selected block inputs (all `N x d`, ordered by block index).
///
/// MEAN divides by the number of input slots, not by the selection weights.
pub fn fuse(ctx: &mut Ctx, op: FusionOp, inputs: &[Var], params: &FusionParams) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("fusion of an empty input list".into()));
    }
    match op {
        FusionOp::Sum => sum_all(&mut ctx.tape, inputs),
        FusionOp::Mean => {
            let s = sum_all(&mut ctx.tape, inputs)?;
            Ok(ctx.tape.scalar_mul(s, 1.0 / inputs.len() as f64))
        }
        FusionOp::Max => {
            let t = &mut ctx.tape;
            inputs[1..]
                .iter()
                .try_fold(inputs[0], |acc, &x| t.maximum(acc, x))
        }
        FusionOp::Concat => {
            let proj = ctx.param(params.concat.ok_or_else(|| missing("CONCAT"))?);
            let t = &mut ctx.tape;
            let cat = t.concat(inputs, 1)?;
            t.matmul(cat, proj)
        }
        FusionOp::Lstm => {
            let p = params.lstm.as_ref().ok_or_else(|| missing("LSTM"))?;
            let (w_ih, w_hh, bias) = (ctx.param(p.w_ih), ctx.param(p.w_hh), ctx.param(p.bias));
            lstm(&mut ctx.tape, inputs, w_ih, w_hh, bias)
        }
    }
}

fn sum_all(t: &mut Tape, inputs: &[Var]) -> Result<Var> {
    inputs[1..].iter().try_fold(inputs[0], |acc, &x| t.add(acc, x))
}

/// Run an LSTM cell over `inputs` from a zero state; returns the last hidden
/// state.
fn lstm(t: &mut Tape, inputs: &[Var], w_ih: Var, w_hh: Var, bias: Var) -> Result<Var> {
    let shape = t.shape(inputs[0]).to_vec();
    let (n, d) = (shape[0], shape[1]);
    let mut h = t.constant(Tensor::zeros(&[n, d]));
    let mut c = t.constant(Tensor::zeros(&[n, d]));
    for &x in inputs {
        let gx = t.matmul(x, w_ih)?;
        let gh = t.matmul(h, w_hh)?;
        let g = t.add(gx, gh)?;
        let g = t.add(g, bias)?;
        let i = t.slice(g, 1, 0, d)?;
        let f = t.slice(g, 1, d, d)?;
        let cand = t.slice(g, 1, 2 * d, d)?;
        let o = t.slice(g, 1, 3 * d, d)?;
        let i = t.sigmoid(i);
        let f = t.sigmoid(f);
        let cand = t.tanh(cand);
        let o = t.sigmoid(o);
        let keep = t.mul(f, c)?;
        let write = t.mul(i, cand)?;
        c = t.add(keep, write)?;
        let tc = t.tanh(c);
        h = t.mul(o, tc)?;
    }
    Ok(h)
}

/// Mixed ZERO/IDENTITY selection: `weight * input`, where `weight` is the
/// IDENTITY mixing weight (any single-element tensor).
pub fn select(t: &mut Tape, weight: Var, input: Var) -> Result<Var> {
    t.mul(input, weight)
}
