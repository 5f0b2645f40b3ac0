use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tensor, Var};
use crate::graph::{batch_graphs, Graph, GraphBatch, Label};
use crate::params::{Ctx, ParamKind, ParamStore};
use crate::seed;

fn graph(rows: &[Vec<f64>], edges: &[(usize, usize)]) -> Graph {
    Graph::new(
        Tensor::from_rows(rows).unwrap(),
        edges.to_vec(),
        None,
        Label::Binary(vec![Some(false)]),
    )
    .unwrap()
}

fn both(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    pairs.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect()
}

fn batch(g: &Graph) -> GraphBatch {
    batch_graphs(&[g]).unwrap()
}

fn init(op: AggOp, d: usize, cfg: &OpConfig) -> (ParamStore, AggParams) {
    let mut store = ParamStore::new();
    let mut rng = seed::rng(1, "ops-test");
    let p = AggParams::init(op, d, cfg, &mut store, &mut rng, "agg");
    // hand-computed examples assume bias-free layers
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with(".bias") {
            store.set(id, Tensor::zeros(&[d])).unwrap();
        }
    }
    (store, p)
}

fn identity_mlp(store: &mut ParamStore, mlp: &Mlp, d: usize) {
    store.set(mlp.w1, Tensor::identity(d)).unwrap();
    store.set(mlp.w2, Tensor::identity(d)).unwrap();
    store.set(mlp.b1, Tensor::zeros(&[d])).unwrap();
    store.set(mlp.b2, Tensor::zeros(&[d])).unwrap();
}

fn run(
    store: &ParamStore,
    op: AggOp,
    b: &GraphBatch,
    h: &Tensor,
    edge_h: Option<&Tensor>,
    p: &AggParams,
    cfg: &OpConfig,
) -> Tensor {
    let mut ctx = Ctx::new(store);
    let hv = ctx.tape.constant(h.clone());
    let ev = edge_h.map(|e| ctx.tape.constant(e.clone()));
    let out = aggregate(&mut ctx, op, b, hv, ev, p, cfg).unwrap();
    ctx.tape.value(out).clone()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.to_rows()
}

fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let diff = a.max_abs_diff(b);
    assert!(diff <= tol, "max diff {diff}\n{a:?}\n{b:?}");
}

// ---------------------------------------------------------------- GCN

#[test]
fn gcn_two_node_edge() {
    let cfg = OpConfig::default();
    let (mut store, p) = init(AggOp::Gcn, 2, &cfg);
    let AggParams::Gcn(g) = &p else { unreachable!() };
    store.set(g.weight, Tensor::identity(2)).unwrap();
    let gr = graph(&[vec![1.0, 0.0], vec![0.0, 1.0]], &both(&[(0, 1)]));
    let out = run(&store, AggOp::Gcn, &batch(&gr), gr.node_features(), None, &p, &cfg);
    assert_close(&out, &Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(), 1e-15);
}

#[test]
fn gcn_edgeless_identity_and_zero_weight() {
    let cfg = OpConfig::default();
    let (mut store, p) = init(AggOp::Gcn, 2, &cfg);
    let AggParams::Gcn(g) = &p else { unreachable!() };
    let gr = graph(&[vec![1.0, -2.0], vec![3.0, 4.0]], &[]);
    store.set(g.weight, Tensor::identity(2)).unwrap();
    let out = run(&store, AggOp::Gcn, &batch(&gr), gr.node_features(), None, &p, &cfg);
    assert_eq!(&out, gr.node_features());
    store.set(g.weight, Tensor::zeros(&[2, 2])).unwrap();
    let out = run(&store, AggOp::Gcn, &batch(&gr), gr.node_features(), None, &p, &cfg);
    assert!(out.data().iter().all(|&x| x == 0.0));
}

#[test]
fn gcn_matches_dense_normalized_adjacency() {
    let cfg = OpConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (gr, _) = random_graph(&mut rng, 3);
        let (store, p) = init(AggOp::Gcn, 3, &cfg);
        let AggParams::Gcn(gp) = &p else { unreachable!() };
        let out = run(&store, AggOp::Gcn, &batch(&gr), gr.node_features(), None, &p, &cfg);

        let n = gr.num_nodes();
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &(s, d) in gr.edges() {
            a[d][s] += 1.0;
        }
        let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        let h = gr.node_features();
        let w = store.get(gp.weight);
        for v in 0..n {
            for c in 0..3 {
                let mut want = 0.0;
                for u in 0..n {
                    let hw: f64 = (0..3).map(|k| h.get(u, k) * w.get(k, c)).sum();
                    want += a[v][u] / (deg[v] * deg[u]).sqrt() * hw;
                }
                assert!((out.get(v, c) - want).abs() < 1e-12);
            }
        }
    }
}

// ---------------------------------------------------------------- GAT

#[test]
fn gat_identical_features_gives_mean_aggregation() {
    let cfg = OpConfig::default();
    let gr = graph(&vec![vec![0.3, -0.2]; 4], &both(&[(0, 1), (1, 2), (0, 3)]));
    let b = batch(&gr);
    for op in AggOp::GAT_VARIANTS {
        let (store, p) = init(*op, 2, &cfg);
        let AggParams::Gat(gp) = &p else { unreachable!() };
        let out = run(&store, *op, &b, gr.node_features(), None, &p, &cfg);
        // Every neighbor carries W h, so any convex combination equals W h;
        // check uniform weights directly.
        let mut ctx = Ctx::new(&store);
        let h = ctx.tape.constant(gr.node_features().clone());
        let variant = match op {
            AggOp::Gat => GatVariant::Plain,
            AggOp::GatSym => GatVariant::Sym,
            _ => GatVariant::Cos,
        };
        let (attn, wh) = gat_attention(&mut ctx, &b, h, gp, variant, &cfg).unwrap();
        let (_, dst) = edges_with_self_loops(&b);
        let mut indeg = [0.0; 4];
        for &d in dst.iter() {
            indeg[d] += 1.0;
        }
        for (k, &d) in dst.iter().enumerate() {
            assert!((ctx.tape.value(attn).data()[k] - 1.0 / indeg[d]).abs() < 1e-12);
        }
        assert_close(&out, ctx.tape.value(wh), 1e-12);
    }
}

#[test]
fn gat_single_node_attends_to_itself() {
    let cfg = OpConfig::default();
    for edges in [vec![], vec![(0, 0)]] {
        let gr = graph(&[vec![1.5, -0.5]], &edges);
        for op in AggOp::GAT_VARIANTS {
            let (store, p) = init(*op, 2, &cfg);
            let AggParams::Gat(gp) = &p else { unreachable!() };
            let out = run(&store, *op, &batch(&gr), gr.node_features(), None, &p, &cfg);
            let w = store.get(gp.weight);
            let want: Vec<f64> = (0..2).map(|c| 1.5 * w.get(0, c) - 0.5 * w.get(1, c)).collect();
            assert_close(&out, &Tensor::matrix(1, 2, want).unwrap(), 1e-12);
        }
    }
}

#[test]
fn gat_sym_is_symmetric_on_two_cycle() {
    let cfg = OpConfig::default();
    let gr = graph(&[vec![0.7, 0.1], vec![0.7, 0.1]], &both(&[(0, 1)]));
    let b = batch(&gr);
    let (store, p) = init(AggOp::GatSym, 2, &cfg);
    let AggParams::Gat(gp) = &p else { unreachable!() };
    let mut ctx = Ctx::new(&store);
    let h = ctx.tape.constant(gr.node_features().clone());
    let (attn, _) = gat_attention(&mut ctx, &b, h, gp, GatVariant::Sym, &cfg).unwrap();
    let a = ctx.tape.value(attn).data();
    // edge 0 is 0->1, edge 1 is 1->0
    assert!((a[0] - a[1]).abs() < 1e-12);
}

#[test]
fn gat_attention_sums_to_one_per_destination() {
    let cfg = OpConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (gr, _) = random_graph(&mut rng, 3);
        let b = batch(&gr);
        for (op, variant) in [
            (AggOp::Gat, GatVariant::Plain),
            (AggOp::GatSym, GatVariant::Sym),
            (AggOp::GatCos, GatVariant::Cos),
        ] {
            let (store, p) = init(op, 3, &cfg);
            let AggParams::Gat(gp) = &p else { unreachable!() };
            let mut ctx = Ctx::new(&store);
            let h = ctx.tape.constant(gr.node_features().clone());
            let (attn, _) = gat_attention(&mut ctx, &b, h, gp, variant, &cfg).unwrap();
            let (_, dst) = edges_with_self_loops(&b);
            let mut sums = vec![0.0; gr.num_nodes()];
            for (k, &d) in dst.iter().enumerate() {
                sums[d] += ctx.tape.value(attn).data()[k];
            }
            assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-9), "{sums:?}");
        }
    }
}

// ---------------------------------------------------------------- GIN

fn gin_identity(eps: f64) -> (ParamStore, AggParams) {
    let cfg = OpConfig::default();
    let (mut store, p) = init(AggOp::Gin, 1, &cfg);
    let AggParams::Gin(g) = &p else { unreachable!() };
    store.set(g.eps, Tensor::vector(vec![eps])).unwrap();
    identity_mlp(&mut store, &g.mlp, 1);
    (store, p)
}

#[test]
fn gin_examples() {
    let cfg = OpConfig::default();
    let (store, p) = gin_identity(0.0);
    let cyc = graph(&[vec![1.0], vec![2.0]], &both(&[(0, 1)]));
    let out = run(&store, AggOp::Gin, &batch(&cyc), cyc.node_features(), None, &p, &cfg);
    assert_eq!(rows(&out), vec![vec![3.0], vec![3.0]]);

    let edgeless = graph(&[vec![1.0], vec![2.0]], &[]);
    let out = run(&store, AggOp::Gin, &batch(&edgeless), edgeless.node_features(), None, &p, &cfg);
    assert_eq!(&out, edgeless.node_features());

    let (store, p) = gin_identity(1.0);
    let iso = graph(&[vec![5.0]], &[]);
    let out = run(&store, AggOp::Gin, &batch(&iso), iso.node_features(), None, &p, &cfg);
    assert_eq!(rows(&out), vec![vec![10.0]]);
}

// ---------------------------------------------------------------- GEN

fn gen_identity(beta: f64, d: usize) -> (ParamStore, AggParams) {
    let cfg = OpConfig::default();
    let (mut store, p) = init(AggOp::Gen, d, &cfg);
    let AggParams::Gen(g) = &p else { unreachable!() };
    store.set(g.beta, Tensor::vector(vec![beta])).unwrap();
    identity_mlp(&mut store, &g.mlp, d);
    (store, p)
}

#[test]
fn gen_single_in_edge_has_weight_one() {
    let cfg = OpConfig::default();
    let (store, p) = gen_identity(1.3, 2);
    let gr = graph(&[vec![0.5, 2.0], vec![1.0, 0.25]], &[(0, 1)]);
    let out = run(&store, AggOp::Gen, &batch(&gr), gr.node_features(), None, &p, &cfg);
    let m = [0.5 + 1e-7, 2.0 + 1e-7];
    assert_close(
        &out,
        &Tensor::from_rows(&[vec![0.5, 2.0], vec![1.0 + m[0], 0.25 + m[1]]]).unwrap(),
        1e-12,
    );
}

#[test]
fn gen_beta_zero_is_mean_of_messages() {
    let cfg = OpConfig::default();
    let (store, p) = gen_identity(0.0, 1);
    let gr = graph(&[vec![0.0], vec![1.0], vec![3.0]], &[(1, 0), (2, 0)]);
    let out = run(&store, AggOp::Gen, &batch(&gr), gr.node_features(), None, &p, &cfg);
    assert!((out.get(0, 0) - (2.0 + 1e-7)).abs() < 1e-12);
}

#[test]
fn gen_identical_messages_split_evenly_and_use_edge_features() {
    let cfg = OpConfig::default();
    let (store, p) = gen_identity(2.0, 1);
    let gr = graph(&[vec![0.0], vec![1.0], vec![1.0]], &[(1, 0), (2, 0)]);
    let out = run(&store, AggOp::Gen, &batch(&gr), gr.node_features(), None, &p, &cfg);
    // Two identical messages, each weighted 0.5.
    assert!((out.get(0, 0) - (1.0 + 1e-7)).abs() < 1e-12);

    let e = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
    let out = run(&store, AggOp::Gen, &batch(&gr), gr.node_features(), Some(&e), &p, &cfg);
    assert!((out.get(0, 0) - (2.0 + 1e-7)).abs() < 1e-12);
}

// ---------------------------------------------------------------- MF

fn mf_params(d: usize, cfg: &OpConfig, weight: impl Fn(usize) -> Tensor) -> (ParamStore, AggParams) {
    let (mut store, p) = init(AggOp::Mf, d, cfg);
    let AggParams::Mf(m) = &p else { unreachable!() };
    for (k, &w) in m.weights.iter().enumerate() {
        store.set(w, weight(k)).unwrap();
    }
    (store, p)
}

#[test]
fn mf_with_identities_and_no_sigmoid_reduces_to_gin() {
    let cfg = OpConfig { mf_sigmoid: false, ..OpConfig::default() };
    let (mstore, mp) = mf_params(1, &cfg, |_| Tensor::identity(1));
    let (gstore, gp) = gin_identity(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let (gr, _) = random_graph(&mut rng, 1);
        // keep features non-negative so the identity MLP is exact
        let h = Tensor::matrix(gr.num_nodes(), 1, gr.node_features().data().iter().map(|x| x.abs()).collect()).unwrap();
        let b = batch(&gr);
        let a = run(&mstore, AggOp::Mf, &b, &h, None, &mp, &cfg);
        let g = run(&gstore, AggOp::Gin, &b, &h, None, &gp, &cfg);
        assert_close(&a, &g, 1e-12);
    }
}

#[test]
fn mf_clamps_high_degrees() {
    let cfg = OpConfig { max_degree: 2, mf_sigmoid: false, ..OpConfig::default() };
    // W_k = (k + 1) * I
    let (store, p) = mf_params(1, &cfg, |k| Tensor::matrix(1, 1, vec![k as f64 + 1.0]).unwrap());
    // star with center degree 4
    let gr = graph(&vec![vec![1.0]; 5], &both(&[(0, 1), (0, 2), (0, 3), (0, 4)]));
    let out = run(&store, AggOp::Mf, &batch(&gr), gr.node_features(), None, &p, &cfg);
    assert_eq!(out.get(0, 0), 3.0 * 5.0);
    assert_eq!(out.get(1, 0), 2.0 * 2.0);
}

#[test]
fn mf_edgeless_is_sigmoid_of_input() {
    let cfg = OpConfig::default();
    let (store, p) = mf_params(2, &cfg, |_| Tensor::identity(2));
    let gr = graph(&[vec![0.0, 1.0], vec![-2.0, 3.0]], &[]);
    let out = run(&store, AggOp::Mf, &batch(&gr), gr.node_features(), None, &p, &cfg);
    let want: Vec<f64> = gr.node_features().data().iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
    assert_close(&out, &Tensor::matrix(2, 2, want).unwrap(), 1e-15);
}

// ---------------------------------------------------------------- ExpC

fn expc_params(cfg: &OpConfig, d: usize, compress: Tensor) -> (ParamStore, AggParams) {
    let (mut store, p) = init(AggOp::Expc, d, cfg);
    let AggParams::Expc(e) = &p else { unreachable!() };
    store.set(e.expand, Tensor::identity(d)).unwrap();
    store.set(e.compress, compress).unwrap();
    (store, p)
}

#[test]
fn expc_examples() {
    let cfg = OpConfig { expc_factor: 1, ..OpConfig::default() };
    let (store, p) = expc_params(&cfg, 1, Tensor::identity(1));
    let gr = graph(&[vec![1.0], vec![2.0], vec![4.0]], &both(&[(0, 1)]));
    let out = run(&store, AggOp::Expc, &batch(&gr), gr.node_features(), None, &p, &cfg);
    assert_eq!(rows(&out), vec![vec![3.0], vec![3.0], vec![4.0]]);

    let iso = graph(&[vec![2.0]], &[]);
    let out = run(&store, AggOp::Expc, &batch(&iso), iso.node_features(), None, &p, &cfg);
    assert_eq!(rows(&out), vec![vec![2.0]]);

    let (store, p) = expc_params(&cfg, 1, Tensor::zeros(&[1, 1]));
    let out = run(&store, AggOp::Expc, &batch(&gr), gr.node_features(), None, &p, &cfg);
    assert!(out.data().iter().all(|&x| x == 0.0));
}

// ---------------------------------------------------------------- fusion, selection, readout

fn fuse_values(op: FusionOp, inputs: &[Tensor], setup: impl Fn(&mut ParamStore, &FusionParams)) -> Tensor {
    let d = inputs[0].cols();
    let mut store = ParamStore::new();
    let mut rng = seed::rng(0, "fuse");
    let fp = FusionParams::init(FusionOp::ALL, inputs.len(), d, &mut store, &mut rng, "f");
    setup(&mut store, &fp);
    let mut ctx = Ctx::new(&store);
    let vars: Vec<Var> = inputs.iter().map(|t| ctx.tape.constant(t.clone())).collect();
    let out = fuse(&mut ctx, op, &vars, &fp).unwrap();
    ctx.tape.value(out).clone()
}

#[test]
fn fusion_elementwise_ops() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap();
    let ins = [a.clone(), b];
    assert_eq!(fuse_values(FusionOp::Sum, &ins, |_, _| {}).data(), &[4.0, 6.0]);
    assert_eq!(fuse_values(FusionOp::Max, &ins, |_, _| {}).data(), &[3.0, 4.0]);
    assert_eq!(fuse_values(FusionOp::Mean, &ins, |_, _| {}).data(), &[2.0, 3.0]);
    for op in [FusionOp::Sum, FusionOp::Mean, FusionOp::Max] {
        assert_eq!(fuse_values(op, std::slice::from_ref(&a), |_, _| {}), a);
    }
}

#[test]
fn fusion_concat_with_selecting_projection() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
    let b = Tensor::from_rows(&[vec![3.0, 4.0], vec![7.0, 8.0]]).unwrap();
    let out = fuse_values(FusionOp::Concat, &[a.clone(), b], |s, fp| {
        // [I; 0]
        let mut proj = Tensor::zeros(&[4, 2]);
        proj.data_mut()[0] = 1.0;
        proj.data_mut()[3] = 1.0;
        s.set(fp.concat.unwrap(), proj).unwrap();
    });
    assert_eq!(out, a);
}

#[test]
fn fusion_lstm_with_zero_parameters_is_zero() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![3.0, -4.0]]).unwrap();
    let out = fuse_values(FusionOp::Lstm, &[a, b], |s, fp| {
        let l = fp.lstm.as_ref().unwrap();
        for id in [l.w_ih, l.w_hh, l.bias] {
            let shape = s.get(id).shape().to_vec();
            s.set(id, Tensor::zeros(&shape)).unwrap();
        }
    });
    // gates 0 -> i = f = o = 1/2, candidate tanh(0) = 0, so c = h = 0.
    assert!(out.data().iter().all(|&x| x == 0.0));
}

#[test]
fn fusion_rejects_empty_input() {
    let store = ParamStore::new();
    let mut ctx = Ctx::new(&store);
    assert!(fuse(&mut ctx, FusionOp::Sum, &[], &FusionParams::default()).is_err());
}

#[test]
fn selection_scales_input() {
    let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
    for (w, want) in [(0.5, [0.5, 1.0]), (0.0, [0.0, 0.0]), (1.0, [1.0, 2.0])] {
        let mut store = ParamStore::new();
        let id = store.add("w", ParamKind::Arch, Tensor::scalar(w));
        let mut ctx = Ctx::new(&store);
        let wv = ctx.param(id);
        let xv = ctx.tape.constant(x.clone());
        let y = select(&mut ctx.tape, wv, xv).unwrap();
        assert_eq!(ctx.tape.value(y).data(), &want);
    }
}

#[test]
fn readout_examples() {
    let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]]).unwrap();
    let ids: Arc<[usize]> = vec![0, 0, 1].into();
    for (op, want) in [
        (ReadoutOp::GlobalSum, [1.0, 1.0, 2.0, 2.0]),
        (ReadoutOp::GlobalMean, [0.5, 0.5, 2.0, 2.0]),
        (ReadoutOp::GlobalMax, [1.0, 1.0, 2.0, 2.0]),
    ] {
        let mut t = crate::autodiff::Tape::new();
        let hv = t.constant(h.clone());
        let y = readout(&mut t, op, hv, &ids, 2).unwrap();
        assert_eq!(t.value(y).data(), &want, "{op}");
    }
}

#[test]
fn op_names_round_trip_and_cover_modules() {
    let all = OpKind::all();
    assert_eq!(all.len(), 2 + 5 + 8 + 3);
    for k in all {
        assert_eq!(OpKind::parse(k.module(), k.name()).unwrap(), k);
    }
    assert!("POOL".parse::<AggOp>().is_err());
    assert_eq!(serde_json::to_string(&AggOp::GatSym).unwrap(), "\"GAT_SYM\"");
}

// ---------------------------------------------------------------- invariants

/// Random undirected graph with both edge directions stored, plus random
/// `E x d` edge states.
fn random_graph(rng: &mut ChaCha8Rng, d: usize) -> (Graph, Tensor) {
    let n = rng.gen_range(2..8);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.4) {
                pairs.push((i, j));
            }
        }
    }
    let edges = both(&pairs);
    let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let e = Tensor::matrix(edges.len(), d, (0..edges.len() * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    (graph(&feats, &edges), e)
}

#[test]
fn aggregators_are_permutation_equivariant() {
    let cfg = OpConfig::default();
    let d = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for op in AggOp::ALL {
        let (store, p) = init(*op, d, &cfg);
        for _ in 0..10 {
            let (gr, e) = random_graph(&mut rng, d);
            let n = gr.num_nodes();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut feats = vec![vec![0.0; d]; n];
            for i in 0..n {
                feats[perm[i]] = gr.node_features().row(i).to_vec();
            }
            let edges: Vec<(usize, usize)> = gr.edges().iter().map(|&(s, t)| (perm[s], perm[t])).collect();
            let pg = graph(&feats, &edges);
            let out = run(&store, *op, &batch(&gr), gr.node_features(), Some(&e), &p, &cfg);
            let pout = run(&store, *op, &batch(&pg), pg.node_features(), Some(&e), &p, &cfg);
            for i in 0..n {
                for c in 0..d {
                    assert!((out.get(i, c) - pout.get(perm[i], c)).abs() < 1e-9, "{op}");
                }
            }
        }
    }
}

#[test]
fn readout_is_invariant_to_node_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for op in ReadoutOp::ALL {
        for _ in 0..20 {
            let n = rng.gen_range(1..9);
            let h: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let ph: Vec<f64> = perm.iter().flat_map(|&i| [h[2 * i], h[2 * i + 1]]).collect();
            let ids: Arc<[usize]> = vec![0; n].into();
            let mut t = crate::autodiff::Tape::new();
            let a = t.constant(Tensor::matrix(n, 2, h).unwrap());
            let b = t.constant(Tensor::matrix(n, 2, ph).unwrap());
            let ra = readout(&mut t, *op, a, &ids, 1).unwrap();
            let rb = readout(&mut t, *op, b, &ids, 1).unwrap();
            assert!(t.value(ra).max_abs_diff(t.value(rb)) < 1e-9);
        }
    }
}

#[test]
fn aggregators_pass_gradcheck_on_six_node_graphs() {
    let cfg = OpConfig::default();
    let d = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)];
    let gr = graph(&vec![vec![0.0; d]; 6], &both(&pairs));
    let b = batch(&gr);
    for op in AggOp::ALL {
        let (store, p) = init(*op, d, &cfg);
        for _ in 0..5 {
            let x = Tensor::matrix(6, d, (0..6 * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let e = Tensor::matrix(b.num_edges(), d, (0..b.num_edges() * d).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap();
            let w = Tensor::matrix(6, d, (0..6 * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let f = |t: &mut crate::autodiff::Tape, xv: Var| -> crate::Result<Var> {
                // Rebuild a context around the provided tape.
                let mut ctx = Ctx::new(&store);
                std::mem::swap(&mut ctx.tape, t);
                let ev = ctx.tape.constant(e.clone());
                let y = aggregate(&mut ctx, *op, &b, xv, Some(ev), &p, &cfg)?;
                let wv = ctx.tape.constant(w.clone());
                let prod = ctx.tape.mul(y, wv)?;
                let s = ctx.tape.sum(prod);
                std::mem::swap(&mut ctx.tape, t);
                Ok(s)
            };
            let err = crate::autodiff::grad_check(f, &x, 1e-4).unwrap();
            assert!(err < 1e-4, "{op}: {err}");
        }
    }
}
