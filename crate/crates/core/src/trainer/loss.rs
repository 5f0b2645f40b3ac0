use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Label, TaskType};

/// Mean binary cross-entropy over the non-missing entries of `labels`
/// (`B x K`), in the stable form `max(z, 0) - z y + log(1 + exp(-|z|))`.
pub fn bce_masked(t: &mut Tape, logits: Var, labels: &[Vec<Option<bool>>]) -> Result<Var> {
    let (b, k) = t.value(logits).dims2();
    if labels.len() != b || labels.iter().any(|r| r.len() != k) {
        let got = [labels.len(), labels.first().map_or(0, Vec::len)];
        return Err(Error::shape("bce_masked", &[b, k], &got));
    }
    let mut y = Vec::with_capacity(b * k);
    let mut mask = Vec::with_capacity(b * k);
    for row in labels {
        for l in row {
            y.push(if *l == Some(true) { 1.0 } else { 0.0 });
            mask.push(if l.is_some() { 1.0 } else { 0.0 });
        }
    }
    let count: f64 = mask.iter().sum();
    if count == 0.0 {
        return Err(Error::InvalidArgument("every label in the batch is missing".into()));
    }
    let shape = t.shape(logits).to_vec();
    let yv = t.constant(Tensor::new(shape.clone(), y)?);
    let mv = t.constant(Tensor::new(shape, mask)?);
    let pos = t.relu(logits);
    let zy = t.mul(logits, yv)?;
    let a = t.abs(logits);
    let na = t.scalar_mul(a, -1.0);
    let e = t.exp(na);
    let e = t.add_scalar(e, 1.0);
    let soft = t.log(e);
    let l = t.sub(pos, zy)?;
    let l = t.add(l, soft)?;
    let l = t.mul(l, mv)?;
    let s = t.sum(l);
    Ok(t.scalar_mul(s, 1.0 / count))
}

/// Mean negative log-softmax at the true class.
pub fn ce(t: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = t.value(logits).dims2();
    if labels.len() != b {
        return Err(Error::shape("ce", &[b, c], &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!("class label {bad} out of range for {c} classes")));
    }
    let v = t.value(logits);
    let max: Vec<f64> = (0..b)
        .map(|r| v.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut one_hot = vec![0.0; b * c];
    for (r, &l) in labels.iter().enumerate() {
        one_hot[r * c + l] = 1.0;
    }
    let m = t.constant(Tensor::matrix(b, 1, max)?);
    let oh = t.constant(Tensor::matrix(b, c, one_hot)?);
    let shifted = t.sub(logits, m)?;
    let e = t.exp(shifted);
    let z = t.row_sum(e);
    let lse = t.log(z);
    let picked = t.mul(shifted, oh)?;
    let picked = t.row_sum(picked);
    let l = t.sub(lse, picked)?;
    Ok(t.mean(l))
}

/// The loss matching `task`, computed from graph labels.
pub fn task_loss(t: &mut Tape, logits: Var, labels: &[Label], task: TaskType) -> Result<Var> {
    match task {
        TaskType::MultiClass { .. } => {
            let ys = labels
                .iter()
                .map(|l| match l {
                    Label::Class(c) => Ok(*c),
                    Label::Binary(_) => Err(Error::Validation("binary label in a multi-class task".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            ce(t, logits, &ys)
        }
        TaskType::Binary | TaskType::MultiBinary { .. } => {
            let ys = labels
                .iter()
                .map(|l| match l {
                    Label::Binary(v) => Ok(v.clone()),
                    Label::Class(_) => Err(Error::Validation("class label in a binary task".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            bce_masked(t, logits, &ys)
        }
    }
}
