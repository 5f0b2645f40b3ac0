use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, Tape};
use crate::graph::{compute_degrees, generate_synthetic, Label, SyntheticSpec, TaskType};
use crate::ops::{AggOp, FusionOp, ReadoutOp};
use crate::supernet::BlockChoice;

// ---------------------------------------------------------------- losses

fn bce_value(z: &[f64], y: &[Option<bool>]) -> f64 {
    let mut t = Tape::new();
    let zv = t.constant(Tensor::matrix(1, z.len(), z.to_vec()).unwrap());
    let l = bce_masked(&mut t, zv, &[y.to_vec()]).unwrap();
    t.value(l).item()
}

#[test]
fn bce_examples() {
    assert!((bce_value(&[0.0], &[Some(true)]) - 2f64.ln()).abs() < 1e-15);
    assert!((bce_value(&[0.0, 5.0], &[Some(true), None]) - 2f64.ln()).abs() < 1e-15);
    let big = bce_value(&[50.0], &[Some(true)]);
    assert!(big.is_finite() && big < 1e-20);
    let neg = bce_value(&[-800.0], &[Some(true)]);
    assert!((neg - 800.0).abs() < 1e-9);
    let mut t = Tape::new();
    let zv = t.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
    assert!(bce_masked(&mut t, zv, &[vec![None]]).is_err());
}

fn ce_value(z: &[Vec<f64>], y: &[usize]) -> f64 {
    let mut t = Tape::new();
    let zv = t.constant(Tensor::from_rows(z).unwrap());
    let l = ce(&mut t, zv, y).unwrap();
    t.value(l).item()
}

#[test]
fn ce_examples() {
    assert!((ce_value(&[vec![0.0; 4]], &[2]) - 4f64.ln()).abs() < 1e-15);
    assert!(ce_value(&[vec![50.0, 0.0, 0.0]], &[0]) < 1e-20);
    let a = ce_value(&[vec![1.0, 2.0]], &[0]);
    let b = ce_value(&[vec![0.5, -1.0]], &[1]);
    let both = ce_value(&[vec![1.0, 2.0], vec![0.5, -1.0]], &[0, 1]);
    assert!((both - (a + b) / 2.0).abs() < 1e-15);
    let mut t = Tape::new();
    let zv = t.constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
    assert!(ce(&mut t, zv, &[2]).is_err());
}

#[test]
fn losses_pass_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let z = Tensor::matrix(4, 3, (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let labels: Vec<Vec<Option<bool>>> = (0..4)
            .map(|_| (0..3).map(|_| [None, Some(false), Some(true)][rng.gen_range(0..3)]).collect())
            .collect();
        let mut labels = labels;
        labels[0][0] = Some(true);
        let err = grad_check(|t, x| bce_masked(t, x, &labels), &z, 1e-5).unwrap();
        assert!(err < 1e-6, "bce {err}");
        let classes: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        let err = grad_check(|t, x| ce(t, x, &classes), &z, 1e-5).unwrap();
        assert!(err < 1e-6, "ce {err}");
    }
}

// ---------------------------------------------------------------- metrics

fn auc_oracle(s: &[f64], y: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &yi) in y.iter().enumerate() {
        if yi {
            p += 1;
        } else {
            n += 1;
        }
        for (j, &yj) in y.iter().enumerate() {
            if yi && !yj {
                twice += match s[i].partial_cmp(&s[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    (twice as f64 / 2.0) / (p * n) as f64
}

/// Position of `i` counted directly: items with a higher score, or an equal
/// score and a smaller index, come first.
fn ap_oracle(s: &[f64], y: &[bool]) -> f64 {
    let ahead = |i: usize, j: usize| s[j] > s[i] || (s[j] == s[i] && j < i);
    let mut positives: Vec<(usize, usize)> = (0..s.len())
        .filter(|&i| y[i])
        .map(|i| ((0..s.len()).filter(|&j| ahead(i, j)).count(), i))
        .collect();
    positives.sort();
    let mut total = 0.0;
    for &(rank, i) in &positives {
        let hits = (0..s.len()).filter(|&j| y[j] && (j == i || ahead(i, j))).count();
        total += hits as f64 / (rank + 1) as f64;
    }
    total / positives.len() as f64
}

#[test]
fn auc_examples() {
    assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false]).unwrap(), 0.75);
    assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.5; 5], &[true, false, true, false, false]).unwrap(), 0.5);
    assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
}

#[test]
fn ap_examples() {
    let ap = average_precision(&[3.0, 2.0, 1.0], &[true, false, true]).unwrap();
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    assert_eq!(average_precision(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(), 1.0);
    // ties: original index first
    assert_eq!(average_precision(&[1.0, 1.0], &[true, false]).unwrap(), 1.0);
    assert_eq!(average_precision(&[1.0, 1.0], &[false, true]).unwrap(), 0.5);
    assert!(average_precision(&[1.0], &[false]).is_err());
}

#[test]
fn accuracy_examples() {
    assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
    assert_eq!(accuracy(&[1, 0, 3, 0], &[1, 2, 3, 4]).unwrap(), 0.5);
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    assert!(accuracy(&[], &[]).is_err());
}

#[test]
fn multi_task_metrics_skip_single_class_tasks() {
    let task = TaskType::MultiBinary { tasks: 2 };
    let logits = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.2], vec![0.5, 0.3]]).unwrap();
    let labels = vec![
        Label::Binary(vec![Some(true), None]),
        Label::Binary(vec![Some(false), None]),
        Label::Binary(vec![Some(true), None]),
    ];
    let (ap, per) = score(Metric::Ap, task, &logits, &labels).unwrap();
    assert_eq!(ap, 1.0);
    assert_eq!(per, Some(vec![1.0]));
    let none = vec![Label::Binary(vec![None, None]); 3];
    assert!(score(Metric::Ap, task, &logits, &none).is_err());
    assert!(score(Metric::Auc, TaskType::MultiClass { classes: 3 }, &logits, &[]).is_err());

    let mc = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 2.0]]).unwrap();
    let (acc, _) = score(Metric::Accuracy, TaskType::MultiClass { classes: 2 }, &mc, &[Label::Class(0), Label::Class(0)]).unwrap();
    assert_eq!(acc, 0.5);
    let bin = Tensor::from_rows(&[vec![0.0], vec![0.3]]).unwrap();
    let labels = [Label::Binary(vec![Some(false)]), Label::Binary(vec![Some(true)])];
    assert_eq!(score(Metric::Accuracy, TaskType::Binary, &bin, &labels).unwrap().0, 1.0);
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=12).prop_flat_map(|n| {
        (
            // few distinct values so ties are common
            prop::collection::vec((0i32..6).prop_map(|v| v as f64 * 0.25), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metrics_match_brute_force((s, y) in instance()) {
        if y.contains(&true) && y.contains(&false) {
            prop_assert_eq!(roc_auc(&s, &y).unwrap(), auc_oracle(&s, &y));
        }
        if y.contains(&true) {
            prop_assert_eq!(average_precision(&s, &y).unwrap(), ap_oracle(&s, &y));
        }
    }

    #[test]
    fn metrics_invariant_to_increasing_maps((s, y) in instance()) {
        let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
        if y.contains(&true) && y.contains(&false) {
            prop_assert_eq!(roc_auc(&s, &y).unwrap(), roc_auc(&t, &y).unwrap());
        }
        if y.contains(&true) {
            prop_assert_eq!(average_precision(&s, &y).unwrap(), average_precision(&t, &y).unwrap());
        }
    }
}

// ---------------------------------------------------------------- training

fn one_block(agg: AggOp, readout: ReadoutOp) -> ArchEncoding {
    ArchEncoding {
        num_blocks: 1,
        blocks: vec![BlockChoice { select: vec![1], fusion: FusionOp::Sum, agg }],
        readout,
    }
}

fn parity_data() -> Dataset {
    generate_synthetic(&SyntheticSpec::degree_parity(200), 0).unwrap()
}

fn accuracy_hp(epochs: usize) -> HParams {
    HParams { epochs, metric: Some(Metric::Accuracy), ..HParams::default() }
}

/// Logistic regression on the fraction of odd-degree nodes.
fn logistic_oracle(ds: &Dataset) -> f64 {
    let feat = |g: &Graph| {
        let deg = compute_degrees(g);
        deg.iter().filter(|&&d| d % 2 == 1).count() as f64 / deg.len() as f64
    };
    let label = |g: &Graph| matches!(g.label(), Label::Binary(v) if v[0] == Some(true));
    let (mut w, mut b) = (0.0, 0.0);
    for _ in 0..20000 {
        let (mut gw, mut gb) = (0.0, 0.0);
        for g in ds.split(Split::Train) {
            let x = feat(g);
            let p = 1.0 / (1.0 + (-(w * x + b)).exp());
            let y = if label(g) { 1.0 } else { 0.0 };
            gw += (p - y) * x;
            gb += p - y;
        }
        w -= 2.0 * gw;
        b -= 2.0 * gb;
    }
    let valid = ds.split(Split::Valid);
    let hits = valid.iter().filter(|g| ((w * feat(g) + b) > 0.0) == label(g)).count();
    hits as f64 / valid.len() as f64
}

#[test]
fn degree_parity_is_linearly_decidable() {
    assert!(logistic_oracle(&parity_data()) > 0.9);
}

#[test]
fn one_block_learns_degree_parity() {
    let ds = parity_data();
    let out = train_discrete(&one_block(AggOp::Mf, ReadoutOp::GlobalMean), &ds, &accuracy_hp(50)).unwrap();
    let valid = out.reports.iter().find(|r| r.split == Split::Valid).unwrap();
    assert!(valid.value > 0.9, "valid accuracy {}", valid.value);
}

#[test]
fn zero_epochs_reports_initial_model() {
    let ds = parity_data();
    let arch = one_block(AggOp::Gcn, ReadoutOp::GlobalSum);
    let out = train_discrete(&arch, &ds, &accuracy_hp(0)).unwrap();
    assert_eq!(out.best_epoch, 0);
    assert!(out.history.is_empty());
    let init = Supernet::for_arch(
        net_config(&ds, 1, 32, 0.0, OpConfig::default()),
        &arch,
        seed::sub_seed(0, "train-init"),
    )
    .unwrap();
    let r = evaluate(&init, Mode::Discrete(&arch), &ds, Split::Test, Metric::Accuracy, 32, 0).unwrap();
    let t = out.reports.iter().find(|r| r.split == Split::Test).unwrap();
    assert_eq!(&r, t);
}

#[test]
fn training_is_deterministic() {
    let ds = parity_data();
    let arch = one_block(AggOp::Gin, ReadoutOp::GlobalMean);
    let hp = HParams { dropout: 0.2, ..accuracy_hp(3) };
    let a = train_discrete(&arch, &ds, &hp).unwrap();
    let b = train_discrete(&arch, &ds, &hp).unwrap();
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.history, b.history);
}

#[test]
fn width_mismatch_is_an_error() {
    let ds = parity_data();
    let arch = one_block(AggOp::Gcn, ReadoutOp::GlobalSum);
    let mut cfg = net_config(&ds, 1, 8, 0.0, OpConfig::default());
    cfg.in_dim = 3;
    let net = Supernet::for_arch(cfg, &arch, 0).unwrap();
    assert!(evaluate(&net, Mode::Discrete(&arch), &ds, Split::Valid, Metric::Accuracy, 32, 0).is_err());
    assert!(train_discrete(&arch, &ds, &HParams { metric: Some(Metric::Auc), ..accuracy_hp(0) }).is_ok());
    let mc = Dataset::new(
        ds.graphs.iter().map(|g| Graph::new(g.node_features().clone(), g.edges().to_vec(), None, Label::Class(0)).unwrap()).collect(),
        TaskType::MultiClass { classes: 2 },
        ds.splits.clone(),
    )
    .unwrap();
    assert!(train_discrete(&arch, &mc, &HParams { metric: Some(Metric::Auc), ..accuracy_hp(0) }).is_err());
}
