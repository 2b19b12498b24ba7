//! The experiment pipeline: data, overfit training, membership attacks,
//! unlearning, the retraining baseline and the report.
//!
//! The in-memory functions ([`prepare`], [`train_model`], [`assess`],
//! [`unlearn_model`], [`retrain_model`], [`run_experiment`]) are what the
//! on-disk stages of [`Workspace`] call.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointInfo};
use crate::config::{DataConfig, ExperimentConfig, Paradigm};
use crate::contrastive::{
    classifier_accuracy, knn_eval, train_contrastive, train_supervised, TrainConfig,
};
use crate::data::{
    derive_seed, gen_synthetic, ingest_csv, parse_csv, split, Column, CsvSchema, Dataset,
    Partition, Splits,
};
use crate::error::{Error, Result};
use crate::evalreport::{
    covariance_trace, export_report, feature_triplets, histogram, mean, per_sample_loss,
    topk_confidence, LossTargets, Manifest, ReviewConfig, RunArtifacts, Table, HIST_BIN,
};
use crate::mia::{
    balance, confidence_features, encodermi_features, report_from_scores, run_attack, train_attack,
    AttackFeatures, AttackReport,
};
use crate::nn::{view, AnyModel, ClassifierModel, ContrastiveModel, Model, Surface};
use crate::unlearn::{run_unlearning, UnlearnConfig, UnlearnHistory};

/// The partitions every stage works on.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData {
    pub splits: Splits,
    /// First half of the non-member partition: trains the attack.
    pub attack_nonmember: Dataset,
    /// Second half: evaluates it.
    pub eval_nonmember: Dataset,
    /// Leading rows of `attack_nonmember` given to the interpolated variant.
    pub unlearn_pool: Option<Dataset>,
}

impl ExperimentData {
    pub fn from_splits(splits: Splits, unlearn_pool: usize) -> Result<Self> {
        let nm = &splits.nonmember.data;
        let half = nm.len() / 2;
        let attack_nonmember = nm.head(half, "attack_nonmember")?;
        let rest: Vec<usize> = (half..nm.len()).collect();
        let eval_nonmember = nm.subset(&rest, "eval_nonmember")?;
        let unlearn_pool = (unlearn_pool > 0)
            .then(|| attack_nonmember.head(unlearn_pool, "unlearn_pool"))
            .transpose()?;
        Ok(ExperimentData {
            splits,
            attack_nonmember,
            eval_nonmember,
            unlearn_pool,
        })
    }

    pub fn forget(&self) -> &Dataset {
        &self.splits.member_forget.data
    }

    pub fn retain(&self) -> Option<&Dataset> {
        self.splits.member_retain.as_ref().map(|p| &p.data)
    }

    pub fn members(&self) -> Result<Dataset> {
        self.splits.members()
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataConfig::Synthetic {
            classes,
            per_class,
            dim,
            separation,
        } => gen_synthetic(*classes, *per_class, *dim, *separation, cfg.seeds().data),
        DataConfig::Csv {
            path,
            label,
            features,
        } => ingest_csv(
            path,
            &CsvSchema {
                label: label.clone(),
                features: features.clone(),
            },
        ),
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let ds = load_dataset(cfg)?;
    let splits = split(&ds, &cfg.split_spec())?;
    ExperimentData::from_splits(splits, cfg.split.unlearn_pool)
}

pub fn build_model(cfg: &ExperimentConfig, dim: usize, classes: usize) -> Result<AnyModel> {
    let encoder = cfg.encoder_spec(dim);
    let head = cfg.head_spec(classes);
    Ok(match cfg.paradigm {
        Paradigm::Contrastive => {
            AnyModel::Contrastive(ContrastiveModel::new(encoder, head, cfg.model.temperature)?)
        }
        Paradigm::Supervised => AnyModel::Classifier(ClassifierModel::new(encoder, head)?),
    })
}

/// Trains a fresh model on `train_set`. Returns the model and its per-epoch
/// mean loss.
pub fn train_on(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    classes: usize,
    seed: u64,
) -> Result<(AnyModel, Vec<f64>)> {
    let mut model = build_model(cfg, train_set.dim(), classes)?;
    let tc = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        adam: AdamConfig::with_lr(cfg.train.lr),
        seed,
    };
    let history = match &mut model {
        AnyModel::Contrastive(m) => train_contrastive(m, train_set, &tc, &cfg.augment)?,
        AnyModel::Classifier(m) => train_supervised(m, train_set, &tc)?,
    };
    Ok((model, history))
}

/// The overfit model: trained on retained and forgotten members together.
pub fn train_model(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<(AnyModel, Vec<f64>)> {
    let members = data.members()?;
    train_on(cfg, &members, members.classes, cfg.seeds().train)
}

/// The gold standard: a fresh model that never saw the forget set.
pub fn retrain_model(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<(AnyModel, Vec<f64>)> {
    let retain = data.retain().ok_or_else(|| {
        Error::Contract("retraining needs retained members (split.member_retain > 0)".into())
    })?;
    let classes = data.members()?.classes;
    train_on(cfg, retain, classes, cfg.seeds().retrain)
}

pub fn unlearn_model(
    cfg: &ExperimentConfig,
    model: &AnyModel,
    data: &ExperimentData,
) -> Result<(AnyModel, UnlearnHistory)> {
    unlearn_with(&cfg.unlearn_config(), cfg, model, data)
}

/// Unlearning with an explicit configuration, for ablations and sweeps.
pub fn unlearn_with(
    ucfg: &UnlearnConfig,
    cfg: &ExperimentConfig,
    model: &AnyModel,
    data: &ExperimentData,
) -> Result<(AnyModel, UnlearnHistory)> {
    let mut out = model.clone();
    let pool = match ucfg.variant {
        crate::unlearn::Variant::InterpolatedV1 => data.unlearn_pool.as_ref(),
        crate::unlearn::Variant::MemberOnlyV2 => None,
    };
    let history = run_unlearning(&mut out, data.forget(), pool, ucfg, &cfg.augment)?;
    Ok((out, history))
}

/// Per-group statistics of the unlearning review.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub top1_mean: f64,
    pub loss_mean: f64,
    /// Positive-pair cosine similarity (contrastive only).
    pub cossim_mean: Option<f64>,
    /// Trace of the covariance of the (top1, loss, cossim) rows.
    pub triplet_cov_trace: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMetric {
    /// Weighted kNN accuracy of the encoder (contrastive).
    KnnAccuracy,
    /// Classifier accuracy on the test partition (supervised).
    TestAccuracy,
}

impl UtilityMetric {
    pub fn name(self) -> &'static str {
        match self {
            UtilityMetric::KnnAccuracy => "knn_accuracy",
            UtilityMetric::TestAccuracy => "test_accuracy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub utility_metric: UtilityMetric,
    pub utility: f64,
    pub attack: AttackReport,
    pub forget: GroupStats,
    pub nonmember: GroupStats,
}

impl Assessment {
    /// Member-forget minus non-member mean positive-pair similarity.
    pub fn cossim_gap(&self) -> Option<f64> {
        Some(self.forget.cossim_mean? - self.nonmember.cossim_mean?)
    }
}

const SALT_RETAIN: u64 = 1;
const SALT_ATTACK_NM: u64 = 2;
const SALT_FORGET: u64 = 3;
const SALT_EVAL_NM: u64 = 4;

fn attack_features(
    cfg: &ExperimentConfig,
    model: &AnyModel,
    ds: &Dataset,
    salt: u64,
) -> Result<AttackFeatures> {
    let surface = view(model, model.attack_surface());
    match cfg.paradigm {
        Paradigm::Contrastive => encodermi_features(
            &surface,
            &ds.samples,
            cfg.attack.n_views,
            &cfg.augment,
            derive_seed(cfg.seeds().attack, salt),
        ),
        Paradigm::Supervised => confidence_features(
            &surface,
            &ds.samples,
            cfg.attack.with_loss.then_some(ds.labels.as_slice()),
        ),
    }
}

/// Two-fold cross-fitting on the forget set, used when no retained members
/// exist to train the attack on.
fn cross_fit_attack(
    forget: &AttackFeatures,
    train_nm: &AttackFeatures,
    eval_nm: &AttackFeatures,
    cfg: &ExperimentConfig,
) -> Result<AttackReport> {
    let seed = cfg.seeds().attack;
    let (f, b) = balance(forget, eval_nm, derive_seed(seed, 11));
    if f.len() < 2 {
        return Err(Error::Contract(
            "cross-fitted attack needs at least 2 forget samples".into(),
        ));
    }
    let folds: [Vec<usize>; 2] = [
        (0..f.len()).step_by(2).collect(),
        (1..f.len()).step_by(2).collect(),
    ];
    let (mut ms, mut ns) = (Vec::new(), Vec::new());
    for k in 0..2 {
        let (fit, held) = (&folds[k], &folds[1 - k]);
        let model = train_attack(
            &f.select(fit),
            train_nm,
            &cfg.attack.attack_config(),
            derive_seed(seed, 20 + k as u64),
        )?;
        ms.extend(model.scores(&f.select(held))?);
        ns.extend(model.scores(&b.select(held))?);
    }
    report_from_scores(&ms, &ns, 0.5)
}

/// Attack features of the forget set and the evaluation non-members.
pub struct AttackRun {
    pub report: AttackReport,
    pub forget: AttackFeatures,
    pub nonmember: AttackFeatures,
}

/// Trains the attack on retained members against the first non-member half
/// and scores the forget set against the second half.
pub fn membership_attack(
    cfg: &ExperimentConfig,
    model: &AnyModel,
    data: &ExperimentData,
) -> Result<AttackRun> {
    let forget = attack_features(cfg, model, data.forget(), SALT_FORGET)?;
    let train_nm = attack_features(cfg, model, &data.attack_nonmember, SALT_ATTACK_NM)?;
    let eval_nm = attack_features(cfg, model, &data.eval_nonmember, SALT_EVAL_NM)?;
    let report = match data.retain() {
        Some(r) => {
            let retain = attack_features(cfg, model, r, SALT_RETAIN)?;
            run_attack(
                (&retain, &train_nm),
                (&forget, &eval_nm),
                &cfg.attack.attack_config(),
                cfg.seeds().attack,
            )?
        }
        None => cross_fit_attack(&forget, &train_nm, &eval_nm, cfg)?,
    };
    Ok(AttackRun {
        report,
        forget,
        nonmember: eval_nm,
    })
}

pub fn utility(cfg: &ExperimentConfig, model: &AnyModel, data: &ExperimentData) -> Result<f64> {
    match model {
        AnyModel::Contrastive(_) => knn_eval(
            &view(model, Surface::Encoder),
            &data.members()?,
            &data.splits.test.data,
            cfg.eval.knn_k,
            cfg.eval.knn_temperature,
        ),
        AnyModel::Classifier(_) => classifier_accuracy(model, &data.splits.test.data),
    }
}

/// Review rows for one group: `(top1, loss, cossim)` for contrastive models,
/// `(top1, top2, top3, loss)` for classifiers.
fn review_rows(
    cfg: &ExperimentConfig,
    model: &AnyModel,
    ds: &Dataset,
) -> Result<(GroupStats, Table)> {
    match cfg.paradigm {
        Paradigm::Contrastive => {
            let review = ReviewConfig {
                seed: cfg.seeds().review,
                loss_batch_size: cfg.eval.loss_batch_size,
                cossim_surface: model.attack_surface(),
            };
            let t = feature_triplets(model, &ds.samples, &cfg.augment, &review)?;
            let col = |j: usize| (0..t.rows()).map(|i| t.row(i)[j]).collect::<Vec<_>>();
            let stats = GroupStats {
                count: ds.len(),
                top1_mean: mean(&col(0)),
                loss_mean: mean(&col(1)),
                cossim_mean: Some(mean(&col(2))),
                triplet_cov_trace: Some(covariance_trace(&t)),
            };
            Ok((stats, Table::from_tensor(["top1", "loss", "cossim"], &t)))
        }
        Paradigm::Supervised => {
            let top = topk_confidence(&view(model, Surface::Output), &ds.samples, 3)?;
            let loss = per_sample_loss(model, &ds.samples, LossTargets::Labels(&ds.labels))?;
            let mut table = Table::new(["top1", "top2", "top3", "loss"]);
            for (i, l) in loss.iter().enumerate() {
                let r = top.row(i);
                table.push_floats(&[r[0], r[1], r[2], *l]);
            }
            let top1: Vec<f64> = (0..top.rows()).map(|i| top.row(i)[0]).collect();
            let stats = GroupStats {
                count: ds.len(),
                top1_mean: mean(&top1),
                loss_mean: mean(&loss),
                cossim_mean: None,
                triplet_cov_trace: None,
            };
            Ok((stats, table))
        }
    }
}

fn top1_column(t: &Table) -> Vec<f64> {
    t.rows
        .iter()
        .map(|r| r[0].parse().expect("review tables hold floats"))
        .collect()
}

/// Utility, membership attack and review statistics of one model. The
/// review compares the forget set with the whole non-member partition.
pub fn assess(
    cfg: &ExperimentConfig,
    model: &AnyModel,
    data: &ExperimentData,
) -> Result<(Assessment, BTreeMap<String, Table>)> {
    let attack = membership_attack(cfg, model, data)?;
    let (forget, forget_rows) = review_rows(cfg, model, data.forget())?;
    let (nonmember, nonmember_rows) = review_rows(cfg, model, &data.splits.nonmember.data)?;

    let mut hist = Table::new(["bin_lo", "bin_hi", "forget", "nonmember"]);
    let (hf, hn) = (
        histogram(&top1_column(&forget_rows)),
        histogram(&top1_column(&nonmember_rows)),
    );
    for (b, (f, n)) in hf.iter().zip(&hn).enumerate() {
        hist.push(vec![
            format!("{:.2}", b as f64 * HIST_BIN),
            format!("{:.2}", (b + 1) as f64 * HIST_BIN),
            f.to_string(),
            n.to_string(),
        ]);
    }

    let mut tables = BTreeMap::new();
    tables.insert("attack_forget".into(), features_table(&attack.forget));
    tables.insert("attack_nonmember".into(), features_table(&attack.nonmember));
    tables.insert("review_forget".into(), forget_rows);
    tables.insert("review_nonmember".into(), nonmember_rows);
    tables.insert("top1_histogram".into(), hist);
    let assessment = Assessment {
        utility_metric: match cfg.paradigm {
            Paradigm::Contrastive => UtilityMetric::KnnAccuracy,
            Paradigm::Supervised => UtilityMetric::TestAccuracy,
        },
        utility: utility(cfg, model, data)?,
        attack: attack.report,
        forget,
        nonmember,
    };
    Ok((assessment, tables))
}

fn features_table(f: &AttackFeatures) -> Table {
    let mut header = vec!["kind".to_string()];
    header.extend(f.columns.iter().cloned());
    let mut t = Table::new(header);
    for i in 0..f.len() {
        let mut row = vec![f.kind.name().to_string()];
        row.extend(f.rows.row(i).iter().map(|v| crate::data::format_float(*v)));
        t.push(row);
    }
    t
}

pub fn loss_table(history: &[f64]) -> Table {
    let mut t = Table::new(["epoch", "loss"]);
    for (e, l) in history.iter().enumerate() {
        t.push(vec![e.to_string(), crate::data::format_float(*l)]);
    }
    t
}

pub fn unlearn_table(history: &UnlearnHistory) -> Table {
    let mut t = Table::new(["epoch", "memtrain", "penalty", "norm", "total"]);
    for r in &history.records {
        let c = r.components;
        let mut row = vec![r.epoch.to_string()];
        row.extend([c.memtrain, c.penalty, c.norm, c.total].map(crate::data::format_float));
        t.push(row);
    }
    t
}

/// Everything [`run_experiment`] produces.
pub struct ExperimentRun {
    pub data: ExperimentData,
    pub trained: AnyModel,
    pub train_loss: Vec<f64>,
    pub before: Assessment,
    pub before_tables: BTreeMap<String, Table>,
    pub unlearned: AnyModel,
    pub history: UnlearnHistory,
    pub after: Assessment,
    pub after_tables: BTreeMap<String, Table>,
}

/// gen, train, attack, unlearn, attack again; all in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let data = prepare(cfg)?;
    let (trained, train_loss) = train_model(cfg, &data)?;
    let (before, before_tables) = assess(cfg, &trained, &data)?;
    let (unlearned, history) = unlearn_model(cfg, &trained, &data)?;
    let (after, after_tables) = assess(cfg, &unlearned, &data)?;
    Ok(ExperimentRun {
        data,
        trained,
        train_loss,
        before,
        before_tables,
        unlearned,
        history,
        after,
        after_tables,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Gen,
    Train,
    Attack,
    Unlearn,
    Report,
    All,
    Retrain,
}

impl Stage {
    /// The stages `self` stands for, in execution order.
    pub fn sequence(self) -> Vec<Stage> {
        match self {
            Stage::All => vec![
                Stage::Gen,
                Stage::Train,
                Stage::Attack,
                Stage::Unlearn,
                Stage::Attack,
                Stage::Report,
            ],
            s => vec![s],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Unlearn => "unlearn",
            Stage::Report => "report",
            Stage::All => "all",
            Stage::Retrain => "retrain",
        }
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {}: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Serialize, Deserialize)]
struct DataMeta {
    classes: usize,
    partitions: BTreeMap<String, Vec<usize>>,
}

#[derive(Serialize)]
struct RetrainSummary {
    retrained: Assessment,
    unlearned: Option<Assessment>,
    /// Unlearned minus retrained forget-set attack accuracy.
    mia_difference: Option<f64>,
}

const PARTITIONS: [&str; 4] = ["member_retain", "member_forget", "nonmember", "test"];

/// The on-disk layout of one experiment under `out_dir`:
///
/// ```text
/// data/<partition>.csv, data/meta.json
/// checkpoints/{trained,unlearned,retrained}.ulck
/// stages/*.json, stages/*.csv
/// report/...          (written by the report stage)
/// ```
pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let root = cfg.out_dir.clone();
        Workspace { cfg, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    fn read(&self, rel: &str) -> Result<Vec<u8>> {
        let path = self.path(rel);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Format(format!("{rel}: {e}")))?;
        self.write(rel, text.as_bytes())
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        serde_json::from_slice(&self.read(rel)?).map_err(|e| Error::Format(format!("{rel}: {e}")))
    }

    fn has(&self, rel: &str) -> bool {
        self.path(rel).is_file()
    }

    /// Runs one stage, or every stage in order for [`Stage::All`]. Returns
    /// one progress line per completed stage.
    pub fn run(&self, stage: Stage) -> std::result::Result<Vec<String>, StageError> {
        stage
            .sequence()
            .into_iter()
            .map(|s| self.run_stage(s))
            .collect()
    }

    /// Runs a single stage; [`Stage::All`] is expanded by [`Workspace::run`].
    pub fn run_stage(&self, stage: Stage) -> std::result::Result<String, StageError> {
        let out = match stage {
            Stage::Gen => self.gen(),
            Stage::Train => self.train(),
            Stage::Attack => self.attack(),
            Stage::Unlearn => self.unlearn(),
            Stage::Report => self.report().map(|m| {
                format!(
                    "report: {} files under {}",
                    m.files.len(),
                    self.path("report").display()
                )
            }),
            Stage::Retrain => self.retrain(),
            Stage::All => Err(Error::Contract(
                "stage all runs through Workspace::run".into(),
            )),
        };
        out.map_err(|error| StageError { stage, error })
    }

    pub fn gen(&self) -> Result<String> {
        let data = prepare(&self.cfg)?;
        let s = &data.splits;
        let mut meta = DataMeta {
            classes: data.members()?.classes.max(s.test.data.classes),
            partitions: BTreeMap::new(),
        };
        let parts: [(&str, Option<&Partition>); 4] = [
            ("member_retain", s.member_retain.as_ref()),
            ("member_forget", Some(&s.member_forget)),
            ("nonmember", Some(&s.nonmember)),
            ("test", Some(&s.test)),
        ];
        for (name, p) in parts {
            if let Some(p) = p {
                self.write(&format!("data/{name}.csv"), p.data.to_csv().as_bytes())?;
                meta.partitions.insert(name.into(), p.indices.clone());
            }
        }
        self.write_json("data/meta.json", &meta)?;
        Ok(format!(
            "gen: {} partitions written to {}",
            meta.partitions.len(),
            self.path("data").display()
        ))
    }

    /// Reads the partitions written by the gen stage.
    pub fn load_data(&self) -> Result<ExperimentData> {
        let meta: DataMeta = self.read_json("data/meta.json")?;
        let schema = CsvSchema {
            label: Column::Name("label".into()),
            features: None,
        };
        let mut parts: BTreeMap<&str, Partition> = BTreeMap::new();
        for name in PARTITIONS {
            let Some(indices) = meta.partitions.get(name) else {
                continue;
            };
            let rel = format!("data/{name}.csv");
            let mut ds = parse_csv(&self.read(&rel)?, &schema)
                .map_err(|e| Error::Format(format!("{rel}: {e}")))?;
            ds.classes = meta.classes;
            parts.insert(
                name,
                Partition {
                    indices: indices.clone(),
                    data: ds,
                },
            );
        }
        let mut take = |name: &str| {
            parts
                .remove(name)
                .ok_or_else(|| Error::Format(format!("data/meta.json lists no {name} partition")))
        };
        let splits = Splits {
            member_retain: take("member_retain").ok(),
            member_forget: take("member_forget")?,
            nonmember: take("nonmember")?,
            test: take("test")?,
        };
        ExperimentData::from_splits(splits, self.cfg.split.unlearn_pool)
    }

    fn data(&self) -> Result<ExperimentData> {
        if !self.has("data/meta.json") {
            self.gen()?;
        }
        self.load_data()
    }

    fn save(&self, rel: &str, model: &AnyModel, seed: u64, epochs: usize) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        save_checkpoint(
            model,
            CheckpointInfo {
                seed,
                epochs_completed: epochs,
            },
            &path,
        )
    }

    pub fn load_model(&self, name: &str) -> Result<AnyModel> {
        Ok(load_checkpoint(&self.path(&format!("checkpoints/{name}.ulck")))?.0)
    }

    pub fn train(&self) -> Result<String> {
        let data = self.data()?;
        let (model, loss) = train_model(&self.cfg, &data)?;
        self.save(
            "checkpoints/trained.ulck",
            &model,
            self.cfg.seeds().train,
            loss.len(),
        )?;
        self.write(
            "stages/train_loss.csv",
            loss_table(&loss).to_csv()?.as_bytes(),
        )?;
        Ok(format!(
            "train: {} epochs, final loss {:.4}",
            loss.len(),
            loss.last().copied().unwrap_or(f64::NAN)
        ))
    }

    /// Attacks every checkpoint present: `trained` as "before" and
    /// `unlearned` as "after".
    pub fn attack(&self) -> Result<String> {
        let data = self.data()?;
        let mut lines = Vec::new();
        for (ckpt, label) in [("trained", "before"), ("unlearned", "after")] {
            if !self.has(&format!("checkpoints/{ckpt}.ulck")) {
                continue;
            }
            let model = self.load_model(ckpt)?;
            let (a, _) = assess(&self.cfg, &model, &data)?;
            self.write_json(&format!("stages/attack_{label}.json"), &a)?;
            lines.push(format!(
                "{label}: mia accuracy {:.3}, auc {:.3}, {} {:.3}",
                a.attack.accuracy,
                a.attack.auc,
                a.utility_metric.name(),
                a.utility
            ));
        }
        if lines.is_empty() {
            return Err(Error::Contract(
                "no checkpoint to attack; run the train stage first".into(),
            ));
        }
        Ok(format!("attack: {}", lines.join("; ")))
    }

    pub fn unlearn(&self) -> Result<String> {
        let data = self.data()?;
        let trained = self.load_model("trained")?;
        let (model, history) = unlearn_model(&self.cfg, &trained, &data)?;
        self.save(
            "checkpoints/unlearned.ulck",
            &model,
            self.cfg.seeds().unlearn,
            history.len(),
        )?;
        self.write(
            "stages/unlearn_history.csv",
            unlearn_table(&history).to_csv()?.as_bytes(),
        )?;
        let p = history.penalties();
        Ok(format!(
            "unlearn: {} epochs, penalty {:.4} -> {:.4}",
            history.len(),
            p.first().copied().unwrap_or(f64::NAN),
            p.last().copied().unwrap_or(f64::NAN)
        ))
    }

    pub fn retrain(&self) -> Result<String> {
        let data = self.data()?;
        let (model, loss) = retrain_model(&self.cfg, &data)?;
        self.save(
            "checkpoints/retrained.ulck",
            &model,
            self.cfg.seeds().retrain,
            loss.len(),
        )?;
        let (retrained, _) = assess(&self.cfg, &model, &data)?;
        let unlearned = if self.has("checkpoints/unlearned.ulck") {
            Some(assess(&self.cfg, &self.load_model("unlearned")?, &data)?.0)
        } else {
            None
        };
        let summary = RetrainSummary {
            retrained,
            unlearned,
            mia_difference: unlearned.map(|u| u.attack.accuracy - retrained.attack.accuracy),
        };
        self.write_json("stages/retrain.json", &summary)?;
        let mut line = format!(
            "retrain: {} {:.3}, forget top1 {:.3} vs non-member {:.3}, mia accuracy {:.3}",
            retrained.utility_metric.name(),
            retrained.utility,
            retrained.forget.top1_mean,
            retrained.nonmember.top1_mean,
            retrained.attack.accuracy
        );
        if let Some(u) = unlearned {
            line.push_str(&format!(
                "; unlearned {} {:.3}, forget top1 {:.3}, mia accuracy {:.3}",
                u.utility_metric.name(),
                u.utility,
                u.forget.top1_mean,
                u.attack.accuracy
            ));
        }
        Ok(line)
    }

    /// Recomputes the assessments of every checkpoint present and exports
    /// them, with the stage histories, under `report/`.
    pub fn report(&self) -> Result<Manifest> {
        let data = self.data()?;
        let mut runs = Vec::new();
        let mut summary = serde_json::Map::new();
        summary.insert("config".into(), to_json(&self.cfg)?);
        summary.insert("seeds".into(), to_json(&self.cfg.seeds())?);
        for (ckpt, label) in [
            ("trained", "before"),
            ("unlearned", "after"),
            ("retrained", "retrained"),
        ] {
            if !self.has(&format!("checkpoints/{ckpt}.ulck")) {
                continue;
            }
            let model = self.load_model(ckpt)?;
            let (a, tables) = assess(&self.cfg, &model, &data)?;
            summary.insert(label.into(), to_json(&a)?);
            runs.push(RunArtifacts {
                name: label.into(),
                summary: to_json(&a)?,
                tables,
            });
        }
        let mut histories = BTreeMap::new();
        for (rel, name) in [
            ("stages/train_loss.csv", "train_loss"),
            ("stages/unlearn_history.csv", "unlearn_history"),
        ] {
            if self.has(rel) {
                histories.insert(name.to_string(), read_table(&self.read(rel)?)?);
            }
        }
        runs.push(RunArtifacts {
            name: "experiment".into(),
            summary: serde_json::Value::Object(summary),
            tables: histories,
        });
        export_report(&runs, &self.path("report"))
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Format(e.to_string()))
}

fn read_table(bytes: &[u8]) -> Result<Table> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut t = Table::new(header);
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        t.push(rec.iter().map(str::to_string).collect());
    }
    Ok(t)
}

/// Exit-code class of an error: 2 config, 3 divergence, 4 I/O or a
/// malformed artifact, 1 anything else.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) => 2,
        Error::Divergence { .. } => 3,
        Error::Io { .. } | Error::Format(_) | Error::Parse { .. } => 4,
        _ => 1,
    }
}
