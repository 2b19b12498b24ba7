//! Membership-inference attacks and their scoring.
//!
//! Attacks only ever see model outputs through [`Embed`], never parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{derive_seed, format_float, sample_rng, AugmentationConfig};
use crate::error::{Error, Result};
use crate::nn::{cosine_similarity, softmax_rows, Embed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Confidence,
    EncoderMi,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Confidence => "confidence",
            AttackKind::EncoderMi => "encodermi",
        }
    }
}

/// One feature row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackFeatures {
    pub kind: AttackKind,
    pub columns: Vec<String>,
    pub rows: Tensor,
}

impl AttackFeatures {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// CSV with a `kind` column so mixed exports stay self-describing.
    pub fn to_csv(&self) -> String {
        let mut out = format!("kind,{}\n", self.columns.join(","));
        for i in 0..self.len() {
            out.push_str(self.kind.name());
            for v in self.rows.row(i) {
                out.push(',');
                out.push_str(&format_float(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn select(&self, idx: &[usize]) -> AttackFeatures {
        AttackFeatures {
            kind: self.kind,
            columns: self.columns.clone(),
            rows: self.rows.select_rows(idx),
        }
    }
}

/// Shannon entropy in nats; `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

/// The `k` largest entries of `p`, descending.
pub fn top_k(p: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.truncate(k);
    sorted
}

/// Top-3 softmax confidences and entropy of every sample, plus the
/// cross-entropy at the true label when `labels` is given.
pub fn confidence_features<E: Embed + ?Sized>(
    model: &E,
    samples: &Tensor,
    labels: Option<&[usize]>,
) -> Result<AttackFeatures> {
    let logits = model.embed_batch(samples)?;
    let width = logits.cols();
    if width < 3 {
        return Err(Error::shape(
            "confidence_features",
            &[logits.rows(), 3],
            logits.shape(),
        ));
    }
    if let Some(l) = labels {
        if l.len() != samples.rows() {
            return Err(Error::shape(
                "confidence_features",
                samples.shape(),
                &[l.len()],
            ));
        }
        if let Some(&bad) = l.iter().find(|&&c| c >= width) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {width} outputs"
            )));
        }
    }
    let probs = softmax_rows(&logits)?;
    let mut columns: Vec<String> = vec![
        "top1".into(),
        "top2".into(),
        "top3".into(),
        "entropy".into(),
    ];
    if labels.is_some() {
        columns.push("loss".into());
    }
    let mut data = Vec::with_capacity(samples.rows() * columns.len());
    for i in 0..samples.rows() {
        let p = probs.row(i);
        data.extend(top_k(p, 3));
        data.push(entropy(p));
        if let Some(l) = labels {
            data.push(log_sum_exp(logits.row(i)) - logits.row(i)[l[i]]);
        }
    }
    Ok(AttackFeatures {
        kind: AttackKind::Confidence,
        rows: Tensor::new(vec![samples.rows(), columns.len()], data)?,
        columns,
    })
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Pairwise cosine similarities between `n_views` augmentations of each
/// sample, sorted descending. Sample `i` draws its views from stream `i`
/// of `seed`.
pub fn encodermi_features<E: Embed + ?Sized>(
    encoder: &E,
    samples: &Tensor,
    n_views: usize,
    aug: &AugmentationConfig,
    seed: u64,
) -> Result<AttackFeatures> {
    if n_views < 2 {
        return Err(Error::Contract(format!(
            "n_views must be at least 2, got {n_views}"
        )));
    }
    aug.validate()?;
    let (n, d) = (samples.rows(), samples.cols());
    let mut views = Vec::with_capacity(n * n_views * d);
    for i in 0..n {
        let mut rng = sample_rng(seed, i as u64);
        for _ in 0..n_views {
            views.extend(aug.view(samples.row(i), &mut rng));
        }
    }
    let emb = encoder.embed_batch(&Tensor::new(vec![n * n_views, d], views)?)?;
    let pairs = n_views * (n_views - 1) / 2;
    let mut data = Vec::with_capacity(n * pairs);
    for i in 0..n {
        let mut sims = Vec::with_capacity(pairs);
        for a in 0..n_views {
            for b in a + 1..n_views {
                sims.push(cosine_similarity(
                    emb.row(i * n_views + a),
                    emb.row(i * n_views + b),
                )?);
            }
        }
        sims.sort_by(|a, b| b.total_cmp(a));
        data.extend(sims);
    }
    Ok(AttackFeatures {
        kind: AttackKind::EncoderMi,
        columns: (1..=pairs).map(|k| format!("cos{k}")).collect(),
        rows: Tensor::new(vec![n, pairs], data)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Full-batch gradient-descent steps.
    pub steps: usize,
    pub lr: f64,
    /// L2 weight on the coefficients (not the bias).
    pub l2: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            steps: 500,
            lr: 0.5,
            l2: 1e-3,
        }
    }
}

/// Logistic regression on standardized features. Scores are the
/// predicted probability of membership.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackModel {
    pub kind: AttackKind,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Indices `0..n` shuffled under `seed` and cut to `keep`.
fn subsample(n: usize, keep: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if keep < n {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(keep);
        idx.sort_unstable();
    }
    idx
}

/// Subsamples the larger class so both have the size of the smaller one.
pub fn balance(
    member: &AttackFeatures,
    nonmember: &AttackFeatures,
    seed: u64,
) -> (AttackFeatures, AttackFeatures) {
    let n = member.len().min(nonmember.len());
    (
        member.select(&subsample(member.len(), n, derive_seed(seed, 1))),
        nonmember.select(&subsample(nonmember.len(), n, derive_seed(seed, 2))),
    )
}

fn check_pair(member: &AttackFeatures, nonmember: &AttackFeatures) -> Result<()> {
    if member.is_empty() || nonmember.is_empty() {
        return Err(Error::Contract(format!(
            "attack needs both classes, got {} members and {} non-members",
            member.len(),
            nonmember.len()
        )));
    }
    if member.kind != nonmember.kind || member.width() != nonmember.width() {
        return Err(Error::shape(
            "attack features",
            member.rows.shape(),
            nonmember.rows.shape(),
        ));
    }
    Ok(())
}

pub fn train_attack(
    member: &AttackFeatures,
    nonmember: &AttackFeatures,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackModel> {
    check_pair(member, nonmember)?;
    let (m, nm) = balance(member, nonmember, seed);
    let w = m.width();
    let rows: Vec<(&[f64], f64)> = (0..m.len())
        .map(|i| (m.rows.row(i), 1.0))
        .chain((0..nm.len()).map(|i| (nm.rows.row(i), 0.0)))
        .collect();
    let n = rows.len() as f64;

    let mut mean = vec![0.0; w];
    for (x, _) in &rows {
        for (mj, xj) in mean.iter_mut().zip(*x) {
            *mj += xj / n;
        }
    }
    let mut scale = vec![0.0; w];
    for (x, _) in &rows {
        for j in 0..w {
            scale[j] += (x[j] - mean[j]).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let z: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .map(|(x, y)| ((0..w).map(|j| (x[j] - mean[j]) / scale[j]).collect(), *y))
        .collect();

    let mut weights = vec![0.0; w];
    let mut bias = 0.0;
    for _ in 0..cfg.steps {
        let mut gw: Vec<f64> = weights.iter().map(|wj| cfg.l2 * wj).collect();
        let mut gb = 0.0;
        for (x, y) in &z {
            let p = sigmoid(bias + x.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>());
            let r = (p - y) / n;
            for (g, xj) in gw.iter_mut().zip(x) {
                *g += r * xj;
            }
            gb += r;
        }
        for (wj, g) in weights.iter_mut().zip(&gw) {
            *wj -= cfg.lr * g;
        }
        bias -= cfg.lr * gb;
    }
    Ok(AttackModel {
        kind: member.kind,
        mean,
        scale,
        weights,
        bias,
    })
}

impl AttackModel {
    pub fn scores(&self, features: &AttackFeatures) -> Result<Vec<f64>> {
        if features.kind != self.kind || features.width() != self.weights.len() {
            return Err(Error::shape(
                "attack scores",
                &[features.len(), self.weights.len()],
                features.rows.shape(),
            ));
        }
        Ok((0..features.len())
            .map(|i| {
                let x = features.rows.row(i);
                let z = (0..x.len())
                    .map(|j| (x[j] - self.mean[j]) / self.scale[j] * self.weights[j])
                    .sum::<f64>();
                sigmoid(self.bias + z)
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc: f64,
    pub threshold: f64,
    pub n_member: usize,
    pub n_nonmember: usize,
    /// Set when nothing was predicted a member, in which case precision is
    /// reported as 0.
    pub precision_undefined: bool,
}

/// Area under the ROC curve as the probability that a random member
/// outscores a random non-member, ties counting one half.
pub fn auc(member_scores: &[f64], nonmember_scores: &[f64]) -> Result<f64> {
    if member_scores.is_empty() || nonmember_scores.is_empty() {
        return Err(Error::Contract("auc needs scores for both classes".into()));
    }
    if member_scores
        .iter()
        .chain(nonmember_scores)
        .any(|s| s.is_nan())
    {
        return Err(Error::Domain("auc scores contain NaN".into()));
    }
    // Rank-sum form: sort everything once and use mid-ranks for ties.
    let mut all: Vec<(f64, bool)> = member_scores
        .iter()
        .map(|&s| (s, true))
        .chain(nonmember_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (m, n) = (member_scores.len() as f64, nonmember_scores.len() as f64);
    Ok((rank_sum - m * (m + 1.0) / 2.0) / (m * n))
}

/// Confusion-matrix metrics at `threshold` (score ≥ threshold means
/// "member") plus AUC.
pub fn report_from_scores(
    member_scores: &[f64],
    nonmember_scores: &[f64],
    threshold: f64,
) -> Result<AttackReport> {
    let auc = auc(member_scores, nonmember_scores)?;
    let tp = member_scores.iter().filter(|&&s| s >= threshold).count() as f64;
    let fn_ = member_scores.len() as f64 - tp;
    let fp = nonmember_scores.iter().filter(|&&s| s >= threshold).count() as f64;
    let tn = nonmember_scores.len() as f64 - fp;
    let precision_undefined = tp + fp == 0.0;
    Ok(AttackReport {
        accuracy: (tp + tn) / (tp + tn + fp + fn_),
        precision: if precision_undefined {
            0.0
        } else {
            tp / (tp + fp)
        },
        recall: tp / (tp + fn_),
        auc,
        threshold,
        n_member: member_scores.len(),
        n_nonmember: nonmember_scores.len(),
        precision_undefined,
    })
}

/// Scores held-out members and non-members at threshold 0.5.
pub fn evaluate_attack(
    attack: &AttackModel,
    member: &AttackFeatures,
    nonmember: &AttackFeatures,
) -> Result<AttackReport> {
    check_pair(member, nonmember)?;
    report_from_scores(&attack.scores(member)?, &attack.scores(nonmember)?, 0.5)
}

/// Trains on one member/non-member pair and evaluates on another, both
/// balanced, so an attack with no signal lands at accuracy 0.5.
pub fn run_attack(
    train: (&AttackFeatures, &AttackFeatures),
    eval: (&AttackFeatures, &AttackFeatures),
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackReport> {
    let model = train_attack(train.0, train.1, cfg, derive_seed(seed, 10))?;
    check_pair(eval.0, eval.1)?;
    let (m, nm) = balance(eval.0, eval.1, derive_seed(seed, 11));
    evaluate_attack(&model, &m, &nm)
}
