//! Gradient-penalty unlearning.
//!
//! Two penalties are provided. The interpolated one follows WGAN-GP: each
//! forget sample is mixed with a non-member at a random ratio and the
//! gradient of the summed model output is taken at the mixture. The
//! member-only one takes the same gradient at the forget samples directly
//! and needs no outside data. Either penalty is combined with the model's
//! own training loss on the forget set (to keep accuracy) and, for the
//! interpolated variant, an output-norm term that lowers confidence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Graph, Tensor, Var};
use crate::contrastive::{minibatches, optimizer_step};
use crate::data::{augment_batch, derive_seed, AugmentationConfig, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Model, Surface, TrainBatch};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyForm {
    /// Mean of `(||g|| - 1)^2`.
    #[default]
    TargetOne,
    /// Mean of `||g||^2`.
    SquaredNorm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Penalty at member/non-member interpolates, plus the output-norm term.
    InterpolatedV1,
    /// Penalty at the forget samples themselves; the norm term is dropped.
    #[default]
    MemberOnlyV2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlearnConfig {
    /// Weight of the training loss on the forget set.
    pub alpha: f64,
    /// Weight of the gradient penalty.
    pub beta: f64,
    /// Weight of the output-norm loss (ignored by `member_only_v2`).
    pub gamma: f64,
    pub epochs: usize,
    pub lr: f64,
    pub penalty_form: PenaltyForm,
    pub variant: Variant,
    pub batch_size: usize,
    /// Set by the experiment from its seed table, never read from a file.
    #[serde(skip)]
    pub seed: u64,
    /// Layer the penalty and norm terms act on; `None` uses the model's
    /// attack surface.
    pub surface: Option<Surface>,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
            epochs: 10,
            lr: 0.1,
            penalty_form: PenaltyForm::TargetOne,
            variant: Variant::MemberOnlyV2,
            batch_size: 8,
            seed: 0,
            surface: None,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        let coefs = [self.alpha, self.beta, self.gamma];
        if coefs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Contract(format!(
                "loss weights must be finite and non-negative, got {coefs:?}"
            )));
        }
        if self.alpha + self.beta + self.effective_gamma() <= 0.0 {
            return Err(Error::Contract(
                "at least one loss weight must be positive".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::Contract(format!(
                "unlearning batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Contract(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// The norm weight actually applied: zero for the member-only variant.
    pub fn effective_gamma(&self) -> f64 {
        match self.variant {
            Variant::InterpolatedV1 => self.gamma,
            Variant::MemberOnlyV2 => 0.0,
        }
    }
}

/// Values of the three loss terms for one batch or epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub memtrain: f64,
    pub penalty: f64,
    pub norm: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub components: Components,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnlearnHistory {
    pub records: Vec<EpochRecord>,
}

impl UnlearnHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn penalties(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.components.penalty).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,memtrain,penalty,norm,total\n");
        for r in &self.records {
            let c = r.components;
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?}\n",
                r.epoch, c.memtrain, c.penalty, c.norm, c.total
            ));
        }
        out
    }
}

/// Penalty on the input gradient of `d` at the rows of `z`.
///
/// `g_i` is the gradient of `sum_j d(z)_ij` with respect to row `i`, taken
/// with `create_graph` so the penalty can be differentiated again. A `d`
/// whose output does not depend on anything differentiable has zero input
/// gradients.
pub fn penalty_at<'g, D>(g: &'g Graph, d: D, z: Tensor, form: PenaltyForm) -> Result<Var<'g>>
where
    D: FnOnce(Var<'g>) -> Result<Var<'g>>,
{
    let rows = z.rows();
    let zv = g.param(z);
    let out = d(zv)?;
    if out.shape().first() != Some(&rows) {
        return Err(Error::shape("gradient_penalty", &[rows], &out.shape()));
    }
    let norms = if out.requires_grad() {
        let grads = g.grad(out.sum(), &[zv], true)?[0];
        grads.row_l2_norm()?
    } else {
        g.constant(Tensor::zeros(&[rows]))
    };
    match form {
        PenaltyForm::TargetOne => {
            let gap = norms.sub(g.constant(Tensor::scalar(1.0)))?;
            Ok(gap.mul(gap)?.mean())
        }
        PenaltyForm::SquaredNorm => Ok(norms.mul(norms)?.mean()),
    }
}

/// WGAN-GP style penalty at random interpolates `z_i = a_i n_i + (1 - a_i) m_i`
/// with `a_i ~ U(0, 1)` drawn once per row.
pub fn gradient_penalty_interpolated<'g, D, R>(
    g: &'g Graph,
    d: D,
    member: &Tensor,
    nonmember: &Tensor,
    form: PenaltyForm,
    rng: &mut R,
) -> Result<Var<'g>>
where
    D: FnOnce(Var<'g>) -> Result<Var<'g>>,
    R: Rng + ?Sized,
{
    if member.shape() != nonmember.shape() {
        return Err(Error::shape(
            "gradient_penalty_interpolated",
            member.shape(),
            nonmember.shape(),
        ));
    }
    let cols = member.cols();
    let mut z = member.clone();
    for i in 0..member.rows() {
        let a: f64 = rng.random();
        let n = nonmember.row(i);
        let row = &mut z.data_mut()[i * cols..(i + 1) * cols];
        // m + a (n - m): exactly m when n == m.
        for (zj, nj) in row.iter_mut().zip(n) {
            *zj += a * (nj - *zj);
        }
    }
    penalty_at(g, d, z, form)
}

/// The penalty taken directly at member samples.
pub fn gradient_penalty_member<'g, D>(
    g: &'g Graph,
    d: D,
    member: &Tensor,
    form: PenaltyForm,
) -> Result<Var<'g>>
where
    D: FnOnce(Var<'g>) -> Result<Var<'g>>,
{
    penalty_at(g, d, member.clone(), form)
}

/// Mean L2 norm of the rows of `output`.
pub fn output_norm_loss<'g>(output: Var<'g>) -> Result<Var<'g>> {
    Ok(output.row_l2_norm()?.mean())
}

/// Data for one unlearning step.
pub struct UnlearnBatch<'a> {
    pub forget: &'a TrainBatch,
    pub nonmember: Option<&'a Tensor>,
}

/// `alpha L_train + beta L_penalty + gamma L_norm` on one batch.
///
/// Every component is evaluated and reported; only terms with a non-zero
/// weight enter the total.
pub fn composite_loss<'g, M, R>(
    model: &M,
    g: &'g Graph,
    params: &[Var<'g>],
    batch: UnlearnBatch<'_>,
    cfg: &UnlearnConfig,
    rng: &mut R,
) -> Result<(Var<'g>, Components)>
where
    M: Model + ?Sized,
    R: Rng + ?Sized,
{
    let x = &batch.forget.x;
    let layer = cfg.surface.unwrap_or_else(|| model.attack_surface());
    let surface = |v: Var<'g>| model.surface_with(layer, params, v);
    let penalty = match (cfg.variant, batch.nonmember) {
        (Variant::InterpolatedV1, Some(n)) => {
            gradient_penalty_interpolated(g, surface, x, n, cfg.penalty_form, rng)?
        }
        (Variant::InterpolatedV1, None) => {
            return Err(Error::Contract("variant requires non-member batch".into()))
        }
        (Variant::MemberOnlyV2, None) => gradient_penalty_member(g, surface, x, cfg.penalty_form)?,
        (Variant::MemberOnlyV2, Some(_)) => {
            return Err(Error::Contract(
                "member-only variant does not take a non-member batch".into(),
            ))
        }
    };
    let memtrain = model.training_loss(g, params, batch.forget)?;
    let norm = output_norm_loss(surface(g.constant(x.clone()))?)?;

    let mut total: Option<Var<'g>> = None;
    for (term, weight) in [
        (memtrain, cfg.alpha),
        (penalty, cfg.beta),
        (norm, cfg.effective_gamma()),
    ] {
        if weight == 0.0 {
            continue;
        }
        let weighted = term.scale(weight);
        total = Some(match total {
            Some(t) => t.add(weighted)?,
            None => weighted,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("all loss weights are zero".into()))?;
    let components = Components {
        memtrain: memtrain.item(),
        penalty: penalty.item(),
        norm: norm.item(),
        total: total.item(),
    };
    Ok((total, components))
}

/// Runs `cfg.epochs` epochs of Adam on [`composite_loss`] over minibatches
/// of the forget set.
///
/// The interpolated variant pairs every forget batch with the next
/// same-size slice of non-members, cycling through the pool. Contrastive
/// views and interpolation ratios are drawn afresh for every batch.
pub fn run_unlearning<M: Model + ?Sized>(
    model: &mut M,
    forget: &Dataset,
    nonmember: Option<&Dataset>,
    cfg: &UnlearnConfig,
    aug: &AugmentationConfig,
) -> Result<UnlearnHistory> {
    cfg.validate()?;
    aug.validate()?;
    match (cfg.variant, nonmember) {
        (Variant::InterpolatedV1, None) => {
            return Err(Error::Contract("variant requires non-member batch".into()))
        }
        (Variant::InterpolatedV1, Some(n)) if n.dim() != forget.dim() => {
            return Err(Error::shape(
                "run_unlearning",
                forget.samples.shape(),
                n.samples.shape(),
            ))
        }
        _ => {}
    }
    let nonmember = match cfg.variant {
        Variant::InterpolatedV1 => nonmember,
        Variant::MemberOnlyV2 => None,
    };
    let nonmember_order: Vec<usize> = nonmember
        .map(|n| minibatches(n.len(), n.len(), derive_seed(cfg.seed, u64::MAX)).concat())
        .unwrap_or_default();
    let mut cursor = 0usize;

    let mut state = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut history = UnlearnHistory::default();
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        let batches = minibatches(forget.len(), cfg.batch_size, epoch_seed);
        let mut sums = Components::default();
        for (b, idx) in batches.iter().enumerate() {
            if !model.params().iter().all(Tensor::is_finite) {
                return Err(Error::Divergence { epoch });
            }
            let batch_seed = derive_seed(epoch_seed, b as u64 + 1);
            let x = forget.samples.select_rows(idx);
            let views = model
                .needs_views()
                .then(|| augment_batch(&x, aug, batch_seed));
            let train_batch = TrainBatch {
                x,
                labels: idx.iter().map(|&i| forget.labels[i]).collect(),
                views,
            };
            let paired = nonmember.map(|n| {
                let rows: Vec<usize> = (0..idx.len())
                    .map(|k| nonmember_order[(cursor + k) % nonmember_order.len()])
                    .collect();
                cursor = (cursor + idx.len()) % nonmember_order.len();
                n.samples.select_rows(&rows)
            });
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(batch_seed, 0x6770));
            let mut components = Components::default();
            let loss = optimizer_step(model, &mut state, |m, g, p| {
                let batch = UnlearnBatch {
                    forget: &train_batch,
                    nonmember: paired.as_ref(),
                };
                let (total, c) = composite_loss(m, g, p, batch, cfg, &mut rng)?;
                components = c;
                Ok(total)
            })?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            sums.memtrain += components.memtrain;
            sums.penalty += components.penalty;
            sums.norm += components.norm;
            sums.total += components.total;
        }
        let n = batches.len() as f64;
        history.records.push(EpochRecord {
            epoch,
            components: Components {
                memtrain: sums.memtrain / n,
                penalty: sums.penalty / n,
                norm: sums.norm / n,
                total: sums.total / n,
            },
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::data::gen_synthetic;
    use crate::nn::{ClassifierModel, ContrastiveModel, MlpSpec};

    fn linear_w() -> Tensor {
        Tensor::from_rows(&[[3.0, 0.0], [0.0, 4.0]]).unwrap()
    }

    fn linear_d<'g>(g: &'g Graph) -> impl Fn(Var<'g>) -> Result<Var<'g>> {
        let w = g.constant(linear_w());
        move |x: Var<'g>| x.matmul(w)
    }

    fn batch() -> Tensor {
        Tensor::from_rows(&[[0.1, 0.2], [-1.0, 3.0], [2.0, 0.5]]).unwrap()
    }

    #[test]
    fn linear_map_penalties() {
        let g = Graph::new();
        let p =
            gradient_penalty_member(&g, linear_d(&g), &batch(), PenaltyForm::TargetOne).unwrap();
        assert_eq!(p.item(), 16.0);
        let p =
            gradient_penalty_member(&g, linear_d(&g), &batch(), PenaltyForm::SquaredNorm).unwrap();
        assert_eq!(p.item(), 25.0);
        let other = Tensor::from_rows(&[[5.0, 5.0], [0.0, 0.0], [1.0, -1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = gradient_penalty_interpolated(
            &g,
            linear_d(&g),
            &batch(),
            &other,
            PenaltyForm::TargetOne,
            &mut rng,
        )
        .unwrap();
        assert_eq!(p.item(), 16.0);
    }

    #[test]
    fn member_equals_interpolated_when_pools_coincide() {
        let g = Graph::new();
        let x = batch();
        let w = g.constant(Tensor::from_rows(&[[1.0, -2.0], [0.5, 0.3]]).unwrap());
        for form in [PenaltyForm::TargetOne, PenaltyForm::SquaredNorm] {
            let a = gradient_penalty_member(&g, |v| relu_square(v, w), &x, form).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let d = |v| relu_square(v, w);
            let b = gradient_penalty_interpolated(&g, d, &x, &x, form, &mut rng).unwrap();
            assert_eq!(a.item().to_bits(), b.item().to_bits());
        }
    }

    fn relu_square<'g>(v: Var<'g>, w: Var<'g>) -> Result<Var<'g>> {
        let h = v.matmul(w)?;
        h.relu().mul(h)
    }

    fn two_layer<'g>(z: Var<'g>, w1: Var<'g>, b1: Var<'g>, w2: Var<'g>) -> Result<Var<'g>> {
        z.matmul(w1)?.add(b1)?.relu().matmul(w2)
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random_tensor(&mut rng, &[4, 3]);
        let b1 = random_tensor(&mut rng, &[5]);
        let w2 = random_tensor(&mut rng, &[5, 2]);
        let w1 = random_tensor(&mut rng, &[3, 5]);
        for form in [PenaltyForm::TargetOne, PenaltyForm::SquaredNorm] {
            let err = finite_diff_check(
                |g, w| {
                    let b = g.constant(b1.clone());
                    let w2 = g.constant(w2.clone());
                    gradient_penalty_member(g, |z| two_layer(z, w, b, w2), &x, form)
                },
                &w1,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-3, "{form:?}: {err}");
        }
    }

    #[test]
    fn one_step_lowers_the_composite_loss() {
        let ds = gen_synthetic(2, 4, 4, 3.0, 7).unwrap();
        let mut m = small_classifier();
        let cfg = UnlearnConfig {
            lr: 1e-3,
            ..UnlearnConfig::default()
        };
        let tb = forget_batch(&ds);
        let loss = |m: &ClassifierModel| {
            let g = Graph::new();
            let p = m.bind(&g, true);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let b = UnlearnBatch {
                forget: &tb,
                nonmember: None,
            };
            composite_loss(m, &g, &p, b, &cfg, &mut rng)
                .unwrap()
                .1
                .total
        };
        let before = loss(&m);
        let mut state = AdamState::new(AdamConfig::with_lr(cfg.lr));
        optimizer_step(&mut m, &mut state, |m, g, p| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let b = UnlearnBatch {
                forget: &tb,
                nonmember: None,
            };
            Ok(composite_loss(m, g, p, b, &cfg, &mut rng)?.0)
        })
        .unwrap();
        assert!(loss(&m) < before);
    }

    #[test]
    fn constant_model_penalties() {
        let g = Graph::new();
        let c = g.constant(Tensor::ones(&[3, 2]));
        let p = gradient_penalty_member(&g, |_| Ok(c), &batch(), PenaltyForm::TargetOne).unwrap();
        assert_eq!(p.item(), 1.0);
        let p = gradient_penalty_member(&g, |_| Ok(c), &batch(), PenaltyForm::SquaredNorm).unwrap();
        assert_eq!(p.item(), 0.0);
    }

    #[test]
    fn interpolated_rejects_mismatched_batches() {
        let g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = gradient_penalty_interpolated(
            &g,
            linear_d(&g),
            &batch(),
            &Tensor::zeros(&[2, 2]),
            PenaltyForm::TargetOne,
            &mut rng,
        );
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn output_norm_cases() {
        let g = Graph::new();
        let out = g.constant(Tensor::from_rows(&[[3.0, 4.0], [3.0, 4.0]]).unwrap());
        assert_eq!(output_norm_loss(out).unwrap().item(), 5.0);
        let zero = g.constant(Tensor::zeros(&[4, 3]));
        assert_eq!(output_norm_loss(zero).unwrap().item(), 0.0);
    }

    fn small_classifier() -> ClassifierModel {
        ClassifierModel::new(MlpSpec::new(vec![4, 8, 6], 3), MlpSpec::new(vec![6, 3], 4)).unwrap()
    }

    fn forget_batch(ds: &crate::data::Dataset) -> TrainBatch {
        TrainBatch {
            x: ds.samples.clone(),
            labels: ds.labels.clone(),
            views: None,
        }
    }

    #[test]
    fn composite_reductions() {
        let ds = gen_synthetic(3, 3, 4, 2.0, 1).unwrap();
        let model = small_classifier();
        let tb = forget_batch(&ds);
        let g = Graph::new();
        let params = model.bind(&g, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);

        let only_train = UnlearnConfig {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            ..UnlearnConfig::default()
        };
        let batch = UnlearnBatch {
            forget: &tb,
            nonmember: None,
        };
        let (total, c) = composite_loss(&model, &g, &params, batch, &only_train, &mut rng).unwrap();
        let plain = model.training_loss(&g, &params, &tb).unwrap().item();
        assert_eq!(total.item(), plain);
        assert_eq!(c.memtrain, plain);

        let cfg = UnlearnConfig {
            alpha: 0.7,
            beta: 1.3,
            gamma: 0.2,
            variant: Variant::InterpolatedV1,
            ..UnlearnConfig::default()
        };
        let other = ds.samples.map(|v| v * 0.5);
        let batch = UnlearnBatch {
            forget: &tb,
            nonmember: Some(&other),
        };
        let (total, c) = composite_loss(&model, &g, &params, batch, &cfg, &mut rng).unwrap();
        assert_eq!(
            total.item(),
            0.7 * c.memtrain + 1.3 * c.penalty + 0.2 * c.norm
        );
    }

    #[test]
    fn composite_with_linear_penalty_only() {
        // Encoder W, identity head: the output surface is the linear map W.
        let enc = MlpSpec::new(vec![2, 2], 0);
        let head = MlpSpec::new(vec![2, 2], 0);
        let params = vec![
            linear_w(),
            Tensor::zeros(&[2]),
            Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            Tensor::zeros(&[2]),
        ];
        let model = ClassifierModel::from_params(enc, head, params).unwrap();
        let tb = TrainBatch {
            x: batch(),
            labels: vec![0, 1, 0],
            views: None,
        };
        let cfg = UnlearnConfig {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
            ..UnlearnConfig::default()
        };
        let g = Graph::new();
        let p = model.bind(&g, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = UnlearnBatch {
            forget: &tb,
            nonmember: None,
        };
        let (total, _) = composite_loss(&model, &g, &p, b, &cfg, &mut rng).unwrap();
        assert_eq!(total.item(), 16.0);
    }

    #[test]
    fn variant_data_contract() {
        let ds = gen_synthetic(3, 3, 4, 2.0, 1).unwrap();
        let model = small_classifier();
        let tb = forget_batch(&ds);
        let g = Graph::new();
        let params = model.bind(&g, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v1 = UnlearnConfig {
            variant: Variant::InterpolatedV1,
            ..UnlearnConfig::default()
        };
        let b = UnlearnBatch {
            forget: &tb,
            nonmember: None,
        };
        match composite_loss(&model, &g, &params, b, &v1, &mut rng) {
            Err(Error::Contract(m)) => assert_eq!(m, "variant requires non-member batch"),
            other => panic!("{other:?}"),
        }
        let mut m = small_classifier();
        let err = run_unlearning(&mut m, &ds, None, &v1, &AugmentationConfig::default());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let ds = gen_synthetic(3, 3, 4, 2.0, 1).unwrap();
        let mut m = small_classifier();
        let before = m.clone();
        let cfg = UnlearnConfig {
            epochs: 0,
            ..UnlearnConfig::default()
        };
        let h = run_unlearning(&mut m, &ds, None, &cfg, &AugmentationConfig::default()).unwrap();
        assert!(h.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn run_is_reproducible_and_records_every_epoch() {
        let ds = gen_synthetic(2, 6, 4, 3.0, 2).unwrap();
        let non = gen_synthetic(2, 4, 4, 3.0, 3).unwrap();
        let cfg = UnlearnConfig {
            epochs: 3,
            batch_size: 4,
            variant: Variant::InterpolatedV1,
            seed: 5,
            ..UnlearnConfig::default()
        };
        let run = || {
            let mut m = ContrastiveModel::new(
                MlpSpec::new(vec![4, 8, 6], 1),
                MlpSpec::new(vec![6, 4], 2),
                0.5,
            )
            .unwrap();
            let h = run_unlearning(
                &mut m,
                &ds,
                Some(&non),
                &cfg,
                &AugmentationConfig::default(),
            )
            .unwrap();
            (m, h)
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1.len(), 3);
        assert_eq!(m1, m2);
        assert_eq!(h1.to_csv(), h2.to_csv());
    }

    #[test]
    fn divergence_names_epoch() {
        let ds = gen_synthetic(2, 4, 4, 3.0, 2).unwrap();
        let mut m = small_classifier();
        m.params_mut()[0].data_mut()[0] = f64::NAN;
        let cfg = UnlearnConfig::default();
        match run_unlearning(&mut m, &ds, None, &cfg, &AugmentationConfig::default()) {
            Err(Error::Divergence { epoch }) => assert_eq!(epoch, 0),
            other => panic!("{other:?}"),
        }
    }
}
