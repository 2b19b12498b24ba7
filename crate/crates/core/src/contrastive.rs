//! Training loops that deliberately overfit, and the two encoder probes
//! (weighted k-nearest-neighbour voting and linear evaluation).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, Tensor};
use crate::data::{augment_batch, derive_seed, AugmentationConfig, Dataset};
use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy, ClassifierModel, ContrastiveModel, Embed, Mlp, MlpSpec, Model, TrainBatch,
};

pub const DEFAULT_KNN_K: usize = 5;
pub const DEFAULT_KNN_TEMPERATURE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: u64,
}

/// Shuffled minibatches of `0..n`. A trailing batch with a single sample is
/// folded into the previous one so every batch has at least two rows.
pub fn minibatches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[_]>::to_vec).collect();
    if batches.len() > 1 && batches.last().map(Vec::len) == Some(1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("len > 1").extend(last);
    }
    batches
}

/// One Adam step on `loss_of`; returns the loss value before the step.
pub(crate) fn optimizer_step<M, F>(model: &mut M, state: &mut AdamState, loss_of: F) -> Result<f64>
where
    M: Model + ?Sized,
    F: for<'g> FnOnce(
        &M,
        &'g Graph,
        &[crate::autodiff::Var<'g>],
    ) -> Result<crate::autodiff::Var<'g>>,
{
    let g = Graph::new();
    let params = model.bind(&g, true);
    let loss = loss_of(model, &g, &params)?;
    let value = loss.item();
    if !value.is_finite() {
        return Ok(value);
    }
    let grads: Vec<Tensor> = g
        .grad(loss, &params, false)?
        .into_iter()
        .map(|v| v.value())
        .collect();
    adam_step(model.params_mut(), &grads, state)?;
    Ok(value)
}

fn train_loop<M: Model>(
    model: &mut M,
    data: &Dataset,
    cfg: &TrainConfig,
    make_batch: impl Fn(&[usize], u64) -> TrainBatch,
) -> Result<Vec<f64>> {
    if cfg.batch_size < 2 {
        return Err(Error::Contract(format!(
            "batch size must be at least 2, got {}",
            cfg.batch_size
        )));
    }
    let mut state = AdamState::new(cfg.adam);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        let mut total = 0.0;
        let batches = minibatches(data.len(), cfg.batch_size, epoch_seed);
        for (b, idx) in batches.iter().enumerate() {
            let batch = make_batch(idx, derive_seed(epoch_seed, b as u64 + 1));
            let loss = optimizer_step(model, &mut state, |m, g, p| m.training_loss(g, p, &batch))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss;
        }
        history.push(total / batches.len() as f64);
    }
    Ok(history)
}

/// NT-Xent training on freshly augmented views every epoch. Returns the
/// mean loss of each epoch.
pub fn train_contrastive(
    model: &mut ContrastiveModel,
    members: &Dataset,
    cfg: &TrainConfig,
    aug: &AugmentationConfig,
) -> Result<Vec<f64>> {
    aug.validate()?;
    if model.input_dim() != members.dim() {
        return Err(Error::shape(
            "train_contrastive",
            &[model.input_dim()],
            &[members.dim()],
        ));
    }
    train_loop(model, members, cfg, |idx, seed| {
        let x = members.samples.select_rows(idx);
        let views = augment_batch(&x, aug, seed);
        TrainBatch {
            x,
            labels: idx.iter().map(|&i| members.labels[i]).collect(),
            views: Some(views),
        }
    })
}

/// Cross-entropy training on the raw samples.
pub fn train_supervised(
    model: &mut ClassifierModel,
    members: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if model.input_dim() != members.dim() {
        return Err(Error::shape(
            "train_supervised",
            &[model.input_dim()],
            &[members.dim()],
        ));
    }
    if members.classes > model.classes() {
        return Err(Error::Domain(format!(
            "dataset has {} classes, model head only {}",
            members.classes,
            model.classes()
        )));
    }
    train_loop(model, members, cfg, |idx, _| TrainBatch {
        x: members.samples.select_rows(idx),
        labels: idx.iter().map(|&i| members.labels[i]).collect(),
        views: None,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `ds` whose highest logit is the true label.
pub fn classifier_accuracy<M: Model + ?Sized>(model: &M, ds: &Dataset) -> Result<f64> {
    let logits = model.output(&ds.samples)?;
    Ok(label_accuracy(&logits, &ds.labels))
}

fn label_accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let correct = (0..labels.len())
        .filter(|&i| argmax(logits.row(i)) == labels[i])
        .count();
    correct as f64 / labels.len() as f64
}

fn normalized_rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.to_rows()
        .into_iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                r.into_iter().map(|v| v / n).collect()
            } else {
                r
            }
        })
        .collect()
}

/// Weighted k-nearest-neighbour accuracy.
///
/// Each query takes the `k` reference embeddings with the highest cosine
/// similarity and votes for their labels with weight `exp(sim / temperature)`.
/// A zero embedding has similarity 0 to everything. Ties in similarity go to
/// the lower reference index, ties in votes to the lower class.
pub fn knn_eval<E: Embed + ?Sized>(
    encoder: &E,
    reference: &Dataset,
    queries: &Dataset,
    k: usize,
    temperature: f64,
) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Contract("knn reference set is empty".into()));
    }
    if k == 0 || k > reference.len() {
        return Err(Error::Contract(format!(
            "k must be in 1..={}, got {k}",
            reference.len()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Contract(format!(
            "knn temperature must be positive, got {temperature}"
        )));
    }
    let refs = normalized_rows(&encoder.embed_batch(&reference.samples)?);
    let qs = normalized_rows(&encoder.embed_batch(&queries.samples)?);
    let classes = reference.classes.max(queries.classes);

    let mut correct = 0;
    for (q, &label) in qs.iter().zip(&queries.labels) {
        let mut sims: Vec<(f64, usize)> = refs
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| a * b).sum(), i))
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0.0; classes];
        for &(s, i) in &sims[..k] {
            votes[reference.labels[i]] += (s / temperature).exp();
        }
        if argmax(&votes) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / queries.len() as f64)
}

/// Trains a zero-initialised linear head on frozen embeddings with
/// full-batch Adam for `epochs` steps and returns its test accuracy.
pub fn linear_eval<E: Embed + ?Sized>(
    encoder: &E,
    train: &Dataset,
    test: &Dataset,
    epochs: usize,
    lr: f64,
) -> Result<f64> {
    let train_emb = encoder.embed_batch(&train.samples)?;
    let test_emb = encoder.embed_batch(&test.samples)?;
    let classes = train.classes.max(test.classes);
    let spec = MlpSpec::new(vec![train_emb.cols(), classes], 0);
    let zeros = spec
        .param_shapes()
        .iter()
        .map(|s| Tensor::zeros(s))
        .collect();
    let mut head = Mlp::from_params(spec, zeros)?;
    let mut state = AdamState::new(AdamConfig::with_lr(lr));
    for _ in 0..epochs {
        let g = Graph::new();
        let params = crate::nn::bind(&g, head.params(), true);
        let logits = head.forward_with(&params, g.constant(train_emb.clone()))?;
        let loss = cross_entropy(logits, &train.labels)?;
        let grads: Vec<Tensor> = g
            .grad(loss, &params, false)?
            .into_iter()
            .map(|v| v.value())
            .collect();
        adam_step(head.params_mut(), &grads, &mut state)?;
    }
    Ok(label_accuracy(&head.forward(&test_emb)?, &test.labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::nn::{view, Surface};

    fn identity(x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }

    #[test]
    fn minibatches_cover_everything_once() {
        let b = minibatches(11, 5, 3);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 6]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let ds = gen_synthetic(2, 8, 4, 3.0, 0).unwrap();
        let mut m = ContrastiveModel::new(
            MlpSpec::new(vec![4, 8, 4], 1),
            MlpSpec::new(vec![4, 4], 2),
            0.5,
        )
        .unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 4,
            adam: AdamConfig::default(),
            seed: 0,
        };
        let h = train_contrastive(&mut m, &ds, &cfg, &AugmentationConfig::default()).unwrap();
        assert!(h.is_empty());
        assert_eq!(m, before);

        let mut c =
            ClassifierModel::new(MlpSpec::new(vec![4, 8], 1), MlpSpec::new(vec![8, 2], 2)).unwrap();
        let before = c.clone();
        assert!(train_supervised(&mut c, &ds, &cfg).unwrap().is_empty());
        assert_eq!(c, before);
    }

    #[test]
    fn contrastive_history_has_one_entry_per_epoch_and_decreases() {
        let ds = gen_synthetic(2, 16, 8, 4.0, 0).unwrap();
        let mut m = ContrastiveModel::new(
            MlpSpec::new(vec![8, 32, 16], 1),
            MlpSpec::new(vec![16, 16, 8], 2),
            0.5,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 4,
        };
        let h = train_contrastive(&mut m, &ds, &cfg, &AugmentationConfig::default()).unwrap();
        assert_eq!(h.len(), 30);
        let early: f64 = h[..10].iter().sum::<f64>() / 10.0;
        let late: f64 = h[20..].iter().sum::<f64>() / 10.0;
        assert!(late < early, "{early} -> {late}");
    }

    #[test]
    fn training_is_deterministic() {
        let ds = gen_synthetic(2, 8, 4, 3.0, 0).unwrap();
        let run = || {
            let mut m =
                ClassifierModel::new(MlpSpec::new(vec![4, 8], 1), MlpSpec::new(vec![8, 2], 2))
                    .unwrap();
            let cfg = TrainConfig {
                epochs: 5,
                batch_size: 4,
                adam: AdamConfig::default(),
                seed: 9,
            };
            let h = train_supervised(&mut m, &ds, &cfg).unwrap();
            (m, h)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn batch_size_one_is_rejected() {
        let ds = gen_synthetic(2, 4, 4, 3.0, 0).unwrap();
        let mut c =
            ClassifierModel::new(MlpSpec::new(vec![4, 4], 1), MlpSpec::new(vec![4, 2], 2)).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            adam: AdamConfig::default(),
            seed: 0,
        };
        assert!(matches!(
            train_supervised(&mut c, &ds, &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn knn_self_match_and_degenerate_vote() {
        let ds = gen_synthetic(3, 10, 4, 5.0, 2).unwrap();
        assert_eq!(knn_eval(&identity, &ds, &ds, 1, 0.1).unwrap(), 1.0);

        // Constant embeddings make every similarity 1: the vote over the
        // whole reference set is the majority class.
        let skewed = ds.subset(&(0..25).collect::<Vec<_>>(), "skewed").unwrap();
        let constant = |x: &Tensor| Ok(Tensor::ones(&[x.rows(), 2]));
        let acc = knn_eval(&constant, &skewed, &skewed, skewed.len(), 0.1).unwrap();
        let majority = skewed.labels.iter().filter(|&&l| l == 0).count() as f64 / 25.0;
        assert_eq!(acc, majority);

        let empty_k = knn_eval(&identity, &ds, &ds, 0, 0.1);
        assert!(matches!(empty_k, Err(Error::Contract(_))));
    }

    #[test]
    fn knn_identity_on_separated_blobs() {
        let ds = gen_synthetic(4, 100, 32, 10.0, 7).unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let (reference, queries): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| i % 2 == 0);
        let r = ds.subset(&reference, "r").unwrap();
        let q = ds.subset(&queries, "q").unwrap();
        assert!(knn_eval(&identity, &r, &q, 5, 0.1).unwrap() >= 0.99);
    }

    #[test]
    fn linear_eval_cases() {
        let ds = gen_synthetic(4, 50, 16, 10.0, 3).unwrap();
        let untrained = linear_eval(&identity, &ds, &ds, 0, 0.01).unwrap();
        assert!((untrained - 0.25).abs() <= 0.1);
        let trained = linear_eval(&identity, &ds, &ds, 200, 0.05).unwrap();
        assert!(trained >= 0.99, "{trained}");

        let enc = Mlp::init(MlpSpec::new(vec![16, 32, 16], 5)).unwrap();
        let before = enc.clone();
        let acc = linear_eval(&enc, &ds, &ds, 200, 0.05).unwrap();
        assert!(acc >= 0.9, "{acc}");
        assert_eq!(enc, before);
    }

    #[test]
    fn evaluation_never_mutates_the_model() {
        let ds = gen_synthetic(2, 10, 4, 3.0, 0).unwrap();
        let m = ContrastiveModel::new(
            MlpSpec::new(vec![4, 8, 4], 1),
            MlpSpec::new(vec![4, 4], 2),
            0.5,
        )
        .unwrap();
        let before = m.clone();
        knn_eval(&view(&m, Surface::Encoder), &ds, &ds, 3, 0.1).unwrap();
        linear_eval(&view(&m, Surface::Encoder), &ds, &ds, 10, 0.01).unwrap();
        assert_eq!(m, before);
    }
}
