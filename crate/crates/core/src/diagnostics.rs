//! Finite-difference verification of every differentiable building block.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, SegmentMode, Tape, Tensor, Var};
use crate::error::Result;
use crate::graph::{batch_graphs, Graph, GraphBatch, Label};
use crate::ops::{
    aggregate, fuse, readout, select, AggParams, FusionParams, OpConfig, OpKind, SelectionOp,
};
use crate::params::{Ctx, ParamId, ParamStore};
use crate::seed;
use crate::supernet::{Mode, NetConfig, SearchSpace, Supernet};

pub const GRADCHECK_EPS: f64 = 1e-4;
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    /// `primitive`, an operator module name, or `supernet`.
    pub group: String,
    pub name: String,
    pub max_error: f64,
    pub passed: bool,
}

fn ids(v: &[usize]) -> Arc<[usize]> {
    v.into()
}

/// Random point whose coordinates stay at least 0.1 away from 0, the only
/// kink of relu/abs/leaky_relu/maximum in this suite.
pub fn random_point(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub type Probe = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

pub fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    // Random projection so every output coordinate matters.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = t.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

pub fn primitive_probes() -> Vec<(&'static str, Vec<usize>, Probe)> {
    let other = Tensor::new(vec![3, 2], vec![0.3, -0.7, 1.1, 0.4, -0.2, 0.9]).expect("3 x 2");
    let col = Tensor::new(vec![3, 1], vec![0.5, -1.2, 0.8]).expect("3 x 1");
    let mk = |f: Probe| f;
    let o1 = other.clone();
    let o2 = other.clone();
    let o3 = other.clone();
    let o4 = other.clone();
    let c1 = col.clone();
    vec![
        ("add", vec![3, 2], mk(Box::new(move |t, x| {
            let b = t.constant(o1.clone());
            let y = t.add(x, b)?;
            weighted_sum(t, y, 1)
        }))),
        ("sub", vec![3, 2], mk(Box::new(move |t, x| {
            let b = t.leaf(o2.clone());
            let y = t.sub(b, x)?;
            weighted_sum(t, y, 2)
        }))),
        ("mul_broadcast_col", vec![3, 2], mk(Box::new(move |t, x| {
            let c = t.constant(c1.clone());
            let y = t.mul(x, c)?;
            let z = t.mul(y, x)?;
            weighted_sum(t, z, 3)
        }))),
        ("div", vec![3, 2], mk(Box::new(move |t, x| {
            let b = t.constant(o3.clone());
            let b = t.add_scalar(b, 3.0);
            let y = t.div(b, x)?;
            weighted_sum(t, y, 4)
        }))),
        ("maximum", vec![3, 2], mk(Box::new(move |t, x| {
            let b = t.constant(o4.clone());
            let b = t.scalar_mul(b, 0.01);
            let y = t.maximum(x, b)?;
            weighted_sum(t, y, 5)
        }))),
        ("matmul", vec![3, 2], mk(Box::new(|t, x| {
            let w = t.constant(Tensor::new(vec![2, 4], (0..8).map(|i| i as f64 * 0.1 - 0.3).collect())?);
            let y = t.matmul(x, w)?;
            let xt = t.constant(Tensor::new(vec![2, 3], vec![0.2, -0.1, 0.7, 0.5, 0.3, -0.4])?);
            let z = t.matmul(xt, x)?;
            let a = weighted_sum(t, y, 6)?;
            let b = weighted_sum(t, z, 7)?;
            t.add(a, b)
        }))),
        ("relu", vec![3, 2], mk(Box::new(|t, x| { let y = t.relu(x); weighted_sum(t, y, 8) }))),
        ("leaky_relu", vec![3, 2], mk(Box::new(|t, x| { let y = t.leaky_relu(x, 0.2); weighted_sum(t, y, 9) }))),
        ("sigmoid", vec![3, 2], mk(Box::new(|t, x| { let y = t.sigmoid(x); weighted_sum(t, y, 10) }))),
        ("tanh", vec![3, 2], mk(Box::new(|t, x| { let y = t.tanh(x); weighted_sum(t, y, 11) }))),
        ("exp", vec![3, 2], mk(Box::new(|t, x| { let y = t.exp(x); weighted_sum(t, y, 12) }))),
        ("log", vec![3, 2], mk(Box::new(|t, x| {
            let a = t.abs(x);
            let y = t.log(a);
            weighted_sum(t, y, 13)
        }))),
        ("abs", vec![3, 2], mk(Box::new(|t, x| { let y = t.abs(x); weighted_sum(t, y, 14) }))),
        ("powf", vec![3, 2], mk(Box::new(|t, x| {
            let a = t.abs(x);
            let y = t.powf(a, -0.5);
            weighted_sum(t, y, 15)
        }))),
        ("softmax_rows", vec![3, 2], mk(Box::new(|t, x| { let y = t.softmax_rows(x); weighted_sum(t, y, 16) }))),
        ("concat", vec![3, 2], mk(Box::new(|t, x| {
            let y = t.concat(&[x, x], 1)?;
            let z = t.concat(&[x, x, x], 0)?;
            let y = t.tanh(y);
            let a = weighted_sum(t, y, 26)?;
            let z = t.tanh(z);
            let b = weighted_sum(t, z, 17)?;
            t.add(a, b)
        }))),
        ("slice", vec![3, 2], mk(Box::new(|t, x| {
            let a = t.slice(x, 0, 1, 2)?;
            let b = t.slice(x, 1, 1, 1)?;
            let a = t.exp(a);
            let p = weighted_sum(t, a, 18)?;
            let q = weighted_sum(t, b, 19)?;
            t.add(p, q)
        }))),
        ("scalar_mul", vec![3, 2], mk(Box::new(|t, x| { let y = t.scalar_mul(x, -1.7); weighted_sum(t, y, 20) }))),
        ("sum", vec![3, 2], mk(Box::new(|t, x| { let y = t.exp(x); Ok(t.sum(y)) }))),
        ("mean", vec![3, 2], mk(Box::new(|t, x| { let y = t.exp(x); Ok(t.mean(y)) }))),
        ("row_sum", vec![3, 2], mk(Box::new(|t, x| {
            let y = t.mul(x, x)?;
            let r = t.row_sum(y);
            weighted_sum(t, r, 21)
        }))),
        ("gather_rows", vec![3, 2], mk(Box::new(|t, x| {
            let y = t.gather_rows(x, &ids(&[2, 0, 2, 1]))?;
            let y = t.tanh(y);
            weighted_sum(t, y, 22)
        }))),
        ("segment_sum", vec![3, 2], mk(Box::new(|t, x| {
            let sq = t.mul(x, x)?;
            let y = t.segment_reduce(sq, &ids(&[1, 0, 1]), 3, SegmentMode::Sum)?;
            weighted_sum(t, y, 23)
        }))),
        ("segment_mean", vec![3, 2], mk(Box::new(|t, x| {
            let sq = t.mul(x, x)?;
            let y = t.segment_reduce(sq, &ids(&[1, 0, 1]), 2, SegmentMode::Mean)?;
            weighted_sum(t, y, 24)
        }))),
        ("segment_max", vec![3, 2], mk(Box::new(|t, x| {
            let y = t.segment_reduce(x, &ids(&[1, 0, 1]), 2, SegmentMode::Max)?;
            weighted_sum(t, y, 25)
        }))),
    ]
}


/// Gradient check of `f` with respect to each parameter in `params`, one
/// tensor at a time. Returns the worst error.
pub fn check_params<F>(store: &ParamStore, params: &[ParamId], f: F) -> Result<f64>
where
    F: Fn(&mut Ctx) -> Result<Var>,
{
    let mut worst: f64 = 0.0;
    for &id in params {
        let g = |t: &mut Tape, x: Var| -> Result<Var> {
            let mut ctx = Ctx::with_tape(store, std::mem::take(t));
            ctx.bind(id, x);
            let y = f(&mut ctx);
            *t = ctx.into_tape();
            y
        };
        worst = worst.max(grad_check(g, store.get(id), GRADCHECK_EPS)?);
    }
    Ok(worst)
}

/// Gradient check with respect to a free input `x` evaluated inside a
/// parameter context.
fn check_input<F>(store: &ParamStore, x: &Tensor, f: F) -> Result<f64>
where
    F: Fn(&mut Ctx, Var) -> Result<Var>,
{
    let g = |t: &mut Tape, xv: Var| -> Result<Var> {
        let mut ctx = Ctx::with_tape(store, std::mem::take(t));
        let y = f(&mut ctx, xv);
        *t = ctx.into_tape();
        y
    };
    grad_check(g, x, GRADCHECK_EPS)
}

/// Two graphs, six nodes in total, every node with at least one neighbor.
pub fn fixture_batch(d: usize) -> GraphBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mk = |n: usize, pairs: &[(usize, usize)], rng: &mut ChaCha8Rng| {
        let edges: Vec<_> = pairs.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        let x = random_point(rng, &[n, d]);
        Graph::new(x, edges, None, Label::Binary(vec![Some(true)])).expect("valid fixture")
    };
    let a = mk(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], &mut rng);
    let b = mk(2, &[(0, 1)], &mut rng);
    batch_graphs(&[&a, &b]).expect("fixture batches")
}

fn all_ids(store: &ParamStore) -> Vec<ParamId> {
    store.ids().collect()
}

fn entry(group: &str, name: &str, err: f64) -> GradcheckEntry {
    GradcheckEntry {
        group: group.into(),
        name: name.into(),
        max_error: err,
        passed: err.is_finite() && err < GRADCHECK_TOL,
    }
}

fn check_op(kind: OpKind, batch: &GraphBatch, d: usize) -> Result<f64> {
    let mut rng = seed::rng(7, kind.name());
    let n = batch.num_nodes();
    let x = random_point(&mut rng, &[n, d]);
    let proj = random_point(&mut rng, &[n, d]);
    let loss = move |ctx: &mut Ctx, y: Var| -> Result<Var> {
        let w = ctx.tape.constant(proj.clone());
        let p = ctx.tape.mul(y, w)?;
        Ok(ctx.tape.sum(p))
    };
    match kind {
        OpKind::Selection(op) => {
            let w = match op {
                SelectionOp::Zero => 0.0,
                SelectionOp::Identity => 1.0,
            };
            let store = ParamStore::new();
            let e1 = check_input(&store, &x, |ctx, xv| {
                let c = ctx.tape.constant(Tensor::scalar(w));
                let y = select(&mut ctx.tape, c, xv)?;
                loss(ctx, y)
            })?;
            let e2 = check_input(&store, &Tensor::scalar(w), |ctx, wv| {
                let xv = ctx.tape.constant(x.clone());
                let y = select(&mut ctx.tape, wv, xv)?;
                loss(ctx, y)
            })?;
            Ok(e1.max(e2))
        }
        OpKind::Fusion(op) => {
            let mut store = ParamStore::new();
            let fp = FusionParams::init(&[op], 3, d, &mut store, &mut rng, "fusion");
            let others = [random_point(&mut rng, &[n, d]), random_point(&mut rng, &[n, d])];
            let run = |ctx: &mut Ctx, xv: Var| -> Result<Var> {
                let mut inputs = vec![xv];
                for o in &others {
                    inputs.push(ctx.tape.constant(o.clone()));
                }
                let y = fuse(ctx, op, &inputs, &fp)?;
                loss(ctx, y)
            };
            let e1 = check_input(&store, &x, run)?;
            let e2 = check_params(&store, &all_ids(&store), |ctx| {
                let xv = ctx.tape.constant(x.clone());
                run(ctx, xv)
            })?;
            Ok(e1.max(e2))
        }
        OpKind::Aggregation(op) => {
            let cfg = OpConfig::default();
            let mut store = ParamStore::new();
            let ap = AggParams::init(op, d, &cfg, &mut store, &mut rng, "agg");
            let e = random_point(&mut rng, &[batch.num_edges(), d]);
            let run = |ctx: &mut Ctx, xv: Var| -> Result<Var> {
                let ev = ctx.tape.constant(e.clone());
                let y = aggregate(ctx, op, batch, xv, Some(ev), &ap, &cfg)?;
                loss(ctx, y)
            };
            let e1 = check_input(&store, &x, run)?;
            let e2 = check_params(&store, &all_ids(&store), |ctx| {
                let xv = ctx.tape.constant(x.clone());
                run(ctx, xv)
            })?;
            Ok(e1.max(e2))
        }
        OpKind::Readout(op) => {
            let store = ParamStore::new();
            let g = batch.num_graphs();
            let proj = random_point(&mut rng, &[g, d]);
            check_input(&store, &x, |ctx, xv| {
                let y = readout(&mut ctx.tape, op, xv, &batch.graph_ids, g)?;
                let w = ctx.tape.constant(proj.clone());
                let p = ctx.tape.mul(y, w)?;
                Ok(ctx.tape.sum(p))
            })
        }
    }
}

/// The relaxed supernet over every operator, checked against every
/// parameter, architecture logits included.
pub fn check_supernet(batch: &GraphBatch, lambda: f64) -> Result<f64> {
    let config = NetConfig {
        in_dim: batch.node_features.cols(),
        edge_dim: None,
        hidden: 3,
        num_blocks: 2,
        num_outputs: 2,
        dropout: 0.0,
        ops: OpConfig::default(),
    };
    let mut net = Supernet::new(config, &SearchSpace::full(), 13)?;
    // Non-uniform logits so every mixing weight has a distinct gradient.
    let mut rng = seed::rng(13, "gradcheck-alpha");
    for id in net.store.ids_of(crate::params::ParamKind::Arch).collect::<Vec<_>>() {
        let shape = net.store.get(id).shape().to_vec();
        let v = random_point(&mut rng, &shape);
        net.store.set(id, v)?;
    }
    let proj = random_point(&mut rng, &[batch.num_graphs(), 2]);
    let net = &net;
    check_params(&net.store, &all_ids(&net.store), |ctx| {
        let y = net.forward(ctx, batch, Mode::Relaxed { lambda }, None)?;
        let w = ctx.tape.constant(proj.clone());
        let p = ctx.tape.mul(y, w)?;
        Ok(ctx.tape.sum(p))
    })
}

/// Every primitive, every operator kind exactly once, and the full relaxed
/// supernet. With `inject_fault`, a deliberately wrong backward rule is
/// added as an extra primitive.
pub fn gradcheck_suite(inject_fault: bool) -> Result<Vec<GradcheckEntry>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (name, shape, f) in primitive_probes() {
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            let x = random_point(&mut rng, &shape);
            worst = worst.max(grad_check(&f, &x, GRADCHECK_EPS)?);
        }
        out.push(entry("primitive", name, worst));
    }
    if inject_fault {
        let f = |t: &mut Tape, x: Var| -> Result<Var> {
            let y = t.faulty_identity(x);
            weighted_sum(t, y, 0)
        };
        let x = random_point(&mut rng, &[3, 2]);
        out.push(entry("primitive", "FAULTY", grad_check(f, &x, GRADCHECK_EPS)?));
    }
    let d = 3;
    let batch = fixture_batch(d);
    for kind in OpKind::all() {
        let err = check_op(kind, &batch, d)?;
        out.push(entry(kind.module().as_str(), kind.name(), err));
    }
    out.push(entry("supernet", "relaxed", check_supernet(&batch, 0.7)?));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_covers_every_operator_once() {
        let report = gradcheck_suite(false).unwrap();
        for e in &report {
            assert!(e.passed, "{e:?}");
        }
        for kind in OpKind::all() {
            let n = report
                .iter()
                .filter(|e| e.group == kind.module().as_str() && e.name == kind.name())
                .count();
            assert_eq!(n, 1, "{kind:?}");
        }
        assert!(report.iter().any(|e| e.group == "supernet"));
    }

    #[test]
    fn injected_fault_is_reported() {
        let report = gradcheck_suite(true).unwrap();
        let f = report.iter().find(|e| e.name == "FAULTY").unwrap();
        assert!(!f.passed);
    }
}
