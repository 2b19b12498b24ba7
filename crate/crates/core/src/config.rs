//! Experiment configuration: one TOML document per experiment.
//!
//! Every stage seed is derived from the top-level `seed` unless the
//! optional `[seeds]` table pins it; the resolved table is written to the
//! run summary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrastive::{DEFAULT_KNN_K, DEFAULT_KNN_TEMPERATURE};
use crate::data::{derive_seed, AugmentationConfig, Column, SplitSpec};
use crate::error::{Error, Result};
use crate::mia::AttackConfig;
use crate::nn::MlpSpec;
use crate::unlearn::{UnlearnConfig, Variant};

/// Environment variable that replaces `out_dir` when set.
pub const OUT_DIR_ENV: &str = "UNLEARN_FORGE_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Contrastive,
    Supervised,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
    },
    Csv {
        /// Relative paths are resolved against the config file's directory.
        path: PathBuf,
        label: Column,
        #[serde(default)]
        features: Option<Vec<Column>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// May be 0, in which case the whole training set is forgotten.
    pub member_retain: usize,
    pub member_forget: usize,
    pub nonmember: usize,
    pub test: usize,
    /// Non-members handed to the interpolated variant, taken from the half
    /// of the non-member partition that trains the attack.
    #[serde(default)]
    pub unlearn_pool: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden widths of the encoder; input and embedding widths are implied.
    pub hidden: Vec<usize>,
    pub embedding: usize,
    /// Projector widths after the embedding (contrastive only).
    pub projector: Vec<usize>,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![128],
            embedding: 64,
            projector: vec![32],
            temperature: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 600,
            batch_size: 64,
            lr: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    /// Augmented views per sample for the cosine-similarity attack.
    pub n_views: usize,
    /// Adds the per-sample loss to the confidence attack's features.
    pub with_loss: bool,
    pub steps: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackConfig::default();
        AttackSection {
            n_views: 4,
            with_loss: true,
            steps: a.steps,
            lr: a.lr,
            l2: a.l2,
        }
    }
}

impl AttackSection {
    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            steps: self.steps,
            lr: self.lr,
            l2: self.l2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub knn_k: usize,
    pub knn_temperature: f64,
    /// Batch size giving per-sample contrastive losses their negatives.
    pub loss_batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            knn_k: DEFAULT_KNN_K,
            knn_temperature: DEFAULT_KNN_TEMPERATURE,
            loss_batch_size: 64,
        }
    }
}

/// Optional pins for individual stage seeds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedOverrides {
    pub data: Option<u64>,
    pub split: Option<u64>,
    pub encoder: Option<u64>,
    pub head: Option<u64>,
    pub train: Option<u64>,
    pub unlearn: Option<u64>,
    pub attack: Option<u64>,
    pub review: Option<u64>,
    pub retrain: Option<u64>,
}

/// Every seed the pipeline uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub data: u64,
    pub split: u64,
    pub encoder: u64,
    pub head: u64,
    pub train: u64,
    pub unlearn: u64,
    pub attack: u64,
    pub review: u64,
    pub retrain: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paradigm: Paradigm,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub split: SplitConfig,
    #[serde(default)]
    pub augment: AugmentationConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub unlearn: UnlearnConfig,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub seeds: SeedOverrides,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, resolves a relative CSV path against the file's
    /// directory and applies the out-dir environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let DataConfig::Csv { path: csv, .. } = &mut cfg.data {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.out_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let DataConfig::Synthetic {
            classes,
            per_class,
            dim,
            separation,
        } = self.data
        {
            if classes < 2 || dim < 4 || per_class == 0 || !(separation > 0.0) {
                return bad(format!(
                    "data: need classes >= 2, dim >= 4, per_class > 0, separation > 0 \
                     (got {classes}, {dim}, {per_class}, {separation})"
                ));
            }
        }
        let s = &self.split;
        if s.member_forget == 0 || s.nonmember < 2 || s.test == 0 {
            return bad(
                "split: member_forget and test must be positive, nonmember at least 2".into(),
            );
        }
        if s.unlearn_pool > s.nonmember / 2 {
            return bad(format!(
                "split.unlearn_pool {} exceeds half the non-member partition ({})",
                s.unlearn_pool,
                s.nonmember / 2
            ));
        }
        if self.unlearn.variant == Variant::InterpolatedV1 && s.unlearn_pool == 0 {
            return bad(
                "unlearn.variant = interpolated_v1 requires a non-member pool (split.unlearn_pool > 0)"
                    .into(),
            );
        }
        self.unlearn
            .validate()
            .map_err(|e| Error::Config(format!("unlearn: {e}")))?;
        self.augment
            .validate()
            .map_err(|e| Error::Config(format!("augment: {e}")))?;
        let m = &self.model;
        if m.embedding == 0 || m.hidden.contains(&0) || m.projector.contains(&0) {
            return bad("model: widths must be positive".into());
        }
        if self.paradigm == Paradigm::Contrastive && !(m.temperature > 0.0) {
            return bad(format!(
                "model.temperature must be positive, got {}",
                m.temperature
            ));
        }
        if self.train.batch_size < 2 || !(self.train.lr > 0.0) {
            return bad("train: batch_size >= 2 and lr > 0 required".into());
        }
        if self.paradigm == Paradigm::Contrastive && self.attack.n_views < 2 {
            return bad("attack.n_views must be at least 2".into());
        }
        if self.eval.knn_k == 0 || !(self.eval.knn_temperature > 0.0) {
            return bad("eval: knn_k > 0 and knn_temperature > 0 required".into());
        }
        if self.eval.loss_batch_size < 2 {
            return bad("eval.loss_batch_size must be at least 2".into());
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        let o = &self.seeds;
        let d = |pin: Option<u64>, salt: u64| pin.unwrap_or_else(|| derive_seed(self.seed, salt));
        Seeds {
            root: self.seed,
            data: d(o.data, 1),
            split: d(o.split, 2),
            encoder: d(o.encoder, 3),
            head: d(o.head, 4),
            train: d(o.train, 5),
            unlearn: d(o.unlearn, 6),
            attack: d(o.attack, 7),
            review: d(o.review, 8),
            retrain: d(o.retrain, 9),
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            member_retain: self.split.member_retain,
            member_forget: self.split.member_forget,
            nonmember: self.split.nonmember,
            test: self.split.test,
            seed: self.seeds().split,
        }
    }

    pub fn encoder_spec(&self, input_dim: usize) -> MlpSpec {
        let widths = std::iter::once(input_dim)
            .chain(self.model.hidden.iter().copied())
            .chain(std::iter::once(self.model.embedding))
            .collect();
        MlpSpec::new(widths, self.seeds().encoder)
    }

    /// Projector for contrastive models, linear class head otherwise.
    pub fn head_spec(&self, classes: usize) -> MlpSpec {
        let mut widths = vec![self.model.embedding];
        match self.paradigm {
            Paradigm::Contrastive => widths.extend(&self.model.projector),
            Paradigm::Supervised => widths.push(classes),
        }
        MlpSpec::new(widths, self.seeds().head)
    }

    pub fn unlearn_config(&self) -> UnlearnConfig {
        UnlearnConfig {
            seed: self.seeds().unlearn,
            ..self.unlearn
        }
    }
}
