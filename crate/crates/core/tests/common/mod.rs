//! Gradient oracles shared by the gradient-check and acceptance targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlearn_forge::autodiff::{finite_diff_check, op_forward, Graph, OpKind, Tensor, Var};
use unlearn_forge::data::{augment_batch, AugmentationConfig};
use unlearn_forge::error::Result;
use unlearn_forge::nn::{ClassifierModel, ContrastiveModel, MlpSpec, Model, TrainBatch};
use unlearn_forge::unlearn::{composite_loss, PenaltyForm, UnlearnBatch, UnlearnConfig, Variant};
pub const TOL: f64 = 1e-4;

pub type Scalar = for<'g> fn(&'g Graph, Var<'g>) -> Result<Var<'g>>;

pub fn eval(f: &dyn Fn(&Graph, Var<'_>) -> Result<f64>, x: &Tensor) -> f64 {
    let g = Graph::new();
    f(&g, g.constant(x.clone())).unwrap()
}

/// Central differences computed only from forward values.
pub fn oracle<F>(f: F, x: &Tensor) -> Vec<f64>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let h = 1e-6;
    let forward = |g: &Graph, v: Var<'_>| -> Result<f64> { Ok(f(g, v)?.item()) };
    (0..x.numel())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (eval(&forward, &p) - eval(&forward, &m)) / (2.0 * h)
        })
        .collect()
}

pub fn analytic<F>(f: F, x: &Tensor) -> Vec<f64>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let xv = g.param(x.clone());
    let y = f(&g, xv).unwrap();
    g.grad(y, &[xv], false).unwrap()[0].value().into_data()
}

pub fn max_rel_err(a: &[f64], n: &[f64]) -> f64 {
    a.iter()
        .zip(n)
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// Checks `f` with both the test oracle and the library's own checker.
pub fn check<F>(f: F, x: &Tensor) -> (f64, f64)
where
    F: Copy + for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let ours = max_rel_err(&analytic(f, x), &oracle(f, x));
    let lib = finite_diff_check(f, x, 1e-6).unwrap();
    (ours, lib)
}

pub fn scalar_fn<F>(f: F) -> F
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    f
}

pub fn weights(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|i| ((i as u64 * 7919 + seed * 104729) % 1000) as f64 / 1000.0 + 0.1)
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Projects an op's output onto fixed weights so every coordinate matters.
pub fn project<'g>(g: &'g Graph, y: Var<'g>, seed: u64) -> Result<Var<'g>> {
    let w = g.constant(weights(&y.shape(), seed));
    Ok(y.mul(w)?.sum())
}

pub fn op_case(kind: OpKind) -> Scalar {
    match kind {
        OpKind::Add => |g, x| {
            let c = g.constant(weights(&[3, 4], 1));
            project(g, op_forward(OpKind::Add, &[x, c])?.exp(), 2)
        },
        OpKind::Sub => |g, x| {
            let c = g.constant(weights(&[3, 4], 3));
            project(g, op_forward(OpKind::Sub, &[c, x])?.exp(), 4)
        },
        OpKind::MulElementwise => |g, x| {
            let c = g.constant(weights(&[3, 4], 5));
            project(g, op_forward(OpKind::MulElementwise, &[x, c])?.exp(), 6)
        },
        OpKind::Matmul => |g, x| {
            let right = g.constant(weights(&[4, 2], 6));
            let left = g.constant(weights(&[5, 3], 7));
            let y = op_forward(OpKind::Matmul, &[x, right])?;
            let z = op_forward(OpKind::Matmul, &[left, x])?;
            project(g, y.exp(), 8)?.add(project(g, z.exp(), 9)?)
        },
        OpKind::Relu => |g, x| project(g, op_forward(OpKind::Relu, &[x])?, 10),
        OpKind::Exp => |g, x| project(g, op_forward(OpKind::Exp, &[x])?, 11),
        OpKind::Log => |g, x| project(g, op_forward(OpKind::Log, &[x])?, 12),
        OpKind::Sum => |_, x| Ok(op_forward(OpKind::Sum, &[x])?.exp()),
        OpKind::Mean => |_, x| {
            let m = op_forward(OpKind::Mean, &[x.exp()])?;
            m.mul(m)
        },
        OpKind::RowL2Norm => |g, x| project(g, op_forward(OpKind::RowL2Norm, &[x])?, 13),
        OpKind::SoftmaxRows => |g, x| {
            let mut pick = vec![0.0; 12];
            for row in 0..3 {
                pick[row * 4 + row] = 1.0;
            }
            let pick = g.constant(Tensor::new(vec![3, 4], pick).unwrap());
            let log_probs = op_forward(OpKind::SoftmaxRows, &[x])?.log()?;
            op_forward(OpKind::Sum, &[log_probs.mul(pick)?])
        },
        OpKind::ConcatRows => |g, x| {
            let c = g.constant(weights(&[2, 4], 15));
            let y = op_forward(OpKind::ConcatRows, &[x, c, x.scale(2.0)])?;
            project(g, y.exp(), 16)
        },
        OpKind::Scale(_) => |g, x| project(g, op_forward(OpKind::Scale(-2.5), &[x])?.exp(), 17),
    }
}

pub const KINDS: [OpKind; 13] = [
    OpKind::Add,
    OpKind::Sub,
    OpKind::MulElementwise,
    OpKind::Matmul,
    OpKind::Relu,
    OpKind::Exp,
    OpKind::Log,
    OpKind::Sum,
    OpKind::Mean,
    OpKind::RowL2Norm,
    OpKind::SoftmaxRows,
    OpKind::ConcatRows,
    OpKind::Scale(-2.5),
];

/// Range of entries for a random point of `kind`, away from its
/// non-smooth or undefined regions.
pub fn entry_range(kind: OpKind) -> (f64, f64, f64) {
    // (low, high, excluded band around zero)
    match kind {
        OpKind::Log => (0.1, 3.0, 0.0),
        OpKind::Relu => (-2.0, 2.0, 0.05),
        OpKind::RowL2Norm => (-2.0, 2.0, 0.2),
        _ => (-1.5, 1.5, 0.0),
    }
}

pub fn random_point<R: Rng>(kind: OpKind, rng: &mut R) -> Tensor {
    let (lo, hi, band) = entry_range(kind);
    let data = (0..12)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if v.abs() >= band {
                break v;
            }
        })
        .collect();
    Tensor::new(vec![3, 4], data).unwrap()
}

/// Gradient of the unlearning objective with respect to one parameter
/// tensor, both by the library and by central differences of its value.
pub fn composite_errors<M: Model>(
    model: &M,
    batch: &TrainBatch,
    pool: Option<&Tensor>,
    cfg: &UnlearnConfig,
) -> f64 {
    let k = 0;
    let loss = |g: &Graph, p: Var<'_>| -> Result<f64> {
        let params: Vec<Var<'_>> = model
            .params()
            .iter()
            .enumerate()
            .map(|(i, t)| if i == k { p } else { g.constant(t.clone()) })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = UnlearnBatch {
            forget: batch,
            nonmember: pool,
        };
        Ok(composite_loss(model, g, &params, b, cfg, &mut rng)?
            .0
            .item())
    };
    let x = model.params()[k].clone();
    let g = Graph::new();
    let params: Vec<Var<'_>> = model
        .params()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == k {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = UnlearnBatch {
        forget: batch,
        nonmember: pool,
    };
    let (total, _) = composite_loss(model, &g, &params, b, cfg, &mut rng).unwrap();
    let a = g.grad(total, &[params[k]], false).unwrap()[0]
        .value()
        .into_data();
    let h = 1e-6;
    let n: Vec<f64> = (0..x.numel())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (eval(&loss, &p) - eval(&loss, &m)) / (2.0 * h)
        })
        .collect();
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    a.iter()
        .zip(&n)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

/// Parameter-gradient errors of the unlearning objective for both model
/// kinds, both variants and both penalty forms.
pub fn unlearning_cases() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let x = weights(&[4, 5], 21);
    let pool = weights(&[4, 5], 22).map(|v| 0.7 * v + 0.1);
    let (va, vb) = augment_batch(&x, &AugmentationConfig::default(), 5);
    let contrastive = ContrastiveModel::new(
        MlpSpec::new(vec![5, 6, 4], 1),
        MlpSpec::new(vec![4, 3], 2),
        0.5,
    )
    .unwrap();
    let batch = TrainBatch {
        x: x.clone(),
        labels: vec![0, 1, 2, 0],
        views: Some((va, vb)),
    };
    let classifier =
        ClassifierModel::new(MlpSpec::new(vec![5, 6, 4], 3), MlpSpec::new(vec![4, 3], 4)).unwrap();
    let plain = TrainBatch {
        views: None,
        ..batch.clone()
    };

    for form in [PenaltyForm::TargetOne, PenaltyForm::SquaredNorm] {
        let v2 = UnlearnConfig {
            gamma: 0.0,
            penalty_form: form,
            ..UnlearnConfig::default()
        };
        let v1 = UnlearnConfig {
            gamma: 0.3,
            variant: Variant::InterpolatedV1,
            ..v2
        };
        for (name, err) in [
            (
                "contrastive v2",
                composite_errors(&contrastive, &batch, None, &v2),
            ),
            (
                "contrastive v1",
                composite_errors(&contrastive, &batch, Some(&pool), &v1),
            ),
            (
                "classifier v2",
                composite_errors(&classifier, &plain, None, &v2),
            ),
            (
                "classifier v1",
                composite_errors(&classifier, &plain, Some(&pool), &v1),
            ),
        ] {
            out.push((format!("{name} {form:?}"), err));
        }
    }
    out
}
