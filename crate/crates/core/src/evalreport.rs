//! Distributional review of forgetting: confidences, positive-pair cosine
//! similarity, per-sample loss, and the file export of a run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Tensor};
use crate::data::{augment_batch, derive_seed, format_float, AugmentationConfig};
use crate::error::{Error, Result};
use crate::mia::top_k;
use crate::nn::{cosine_similarity, softmax_rows, view, Embed, Model, Surface, TrainBatch};

/// Histogram bin width for confidence exports.
pub const HIST_BIN: f64 = 0.05;

/// The `k` largest softmax confidences of each sample, descending.
pub fn topk_confidence<E: Embed + ?Sized>(model: &E, samples: &Tensor, k: usize) -> Result<Tensor> {
    let logits = model.embed_batch(samples)?;
    if k == 0 || k > logits.cols() {
        return Err(Error::shape(
            "topk_confidence",
            &[logits.rows(), k],
            logits.shape(),
        ));
    }
    let probs = softmax_rows(&logits)?;
    let data = (0..probs.rows())
        .flat_map(|i| top_k(probs.row(i), k))
        .collect();
    Tensor::new(vec![probs.rows(), k], data)
}

/// Cosine similarity between the embeddings of two augmentations of each
/// sample; row `i` uses stream `i` of `seed`.
pub fn positive_pair_cossim<E: Embed + ?Sized>(
    encoder: &E,
    samples: &Tensor,
    aug: &AugmentationConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    aug.validate()?;
    let (a, b) = augment_batch(samples, aug, seed);
    let (ea, eb) = (encoder.embed_batch(&a)?, encoder.embed_batch(&b)?);
    (0..samples.rows())
        .map(|i| cosine_similarity(ea.row(i), eb.row(i)))
        .collect()
}

/// Targets for [`per_sample_loss`].
#[derive(Clone, Copy, Debug)]
pub enum LossTargets<'a> {
    /// Supervised: per-sample cross-entropy.
    Labels(&'a [usize]),
    /// Contrastive: samples are processed in consecutive batches of
    /// `batch_size`, each supplying the negatives for its members.
    Views {
        aug: &'a AugmentationConfig,
        seed: u64,
        batch_size: usize,
    },
}

/// Consecutive chunks of `0..n`; a trailing singleton joins the previous
/// chunk.
fn chunks(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let size = size.max(1);
    let mut out: Vec<_> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().map(|r| r.len()) == Some(1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("len > 1").end = last.end;
    }
    out
}

pub fn per_sample_loss<M: Model + ?Sized>(
    model: &M,
    samples: &Tensor,
    targets: LossTargets<'_>,
) -> Result<Vec<f64>> {
    match targets {
        LossTargets::Labels(labels) => {
            let g = Graph::new();
            let params = model.bind(&g, false);
            let batch = TrainBatch {
                x: samples.clone(),
                labels: labels.to_vec(),
                views: None,
            };
            Ok(model
                .sample_losses(&g, &params, &batch)?
                .value()
                .into_data())
        }
        LossTargets::Views {
            aug,
            seed,
            batch_size,
        } => {
            aug.validate()?;
            if batch_size < 2 || samples.rows() < 2 {
                return Err(Error::Contract(
                    "contrastive per-sample loss needs batches of at least 2".into(),
                ));
            }
            let mut out = Vec::with_capacity(samples.rows());
            for (c, range) in chunks(samples.rows(), batch_size).into_iter().enumerate() {
                let idx: Vec<usize> = range.collect();
                let x = samples.select_rows(&idx);
                let views = augment_batch(&x, aug, derive_seed(seed, c as u64));
                let batch = TrainBatch {
                    x,
                    labels: vec![0; idx.len()],
                    views: Some(views),
                };
                let g = Graph::new();
                let params = model.bind(&g, false);
                out.extend(
                    model
                        .sample_losses(&g, &params, &batch)?
                        .value()
                        .into_data(),
                );
            }
            Ok(out)
        }
    }
}

/// Settings shared by the review computations of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReviewConfig {
    pub seed: u64,
    /// Batch size giving contrastive losses their negatives.
    pub loss_batch_size: usize,
    /// Layer whose embeddings the positive-pair similarity reads.
    pub cossim_surface: Surface,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        ReviewConfig {
            seed: 0,
            loss_batch_size: 64,
            cossim_surface: Surface::Encoder,
        }
    }
}

/// Rows of `(top1, loss, cossim)` for a contrastive model, assembled from
/// [`topk_confidence`], [`per_sample_loss`] and [`positive_pair_cossim`].
pub fn feature_triplets<M: Model + ?Sized>(
    model: &M,
    samples: &Tensor,
    aug: &AugmentationConfig,
    cfg: &ReviewConfig,
) -> Result<Tensor> {
    if !model.needs_views() {
        return Err(Error::Contract(
            "feature triplets need a contrastive model".into(),
        ));
    }
    let top1 = topk_confidence(&view(model, Surface::Output), samples, 1)?;
    let loss = per_sample_loss(
        model,
        samples,
        LossTargets::Views {
            aug,
            seed: derive_seed(cfg.seed, 1),
            batch_size: cfg.loss_batch_size,
        },
    )?;
    let cos = positive_pair_cossim(
        &view(model, cfg.cossim_surface),
        samples,
        aug,
        derive_seed(cfg.seed, 2),
    )?;
    let data = (0..samples.rows())
        .flat_map(|i| [top1.row(i)[0], loss[i], cos[i]])
        .collect();
    Tensor::new(vec![samples.rows(), 3], data)
}

/// Trace of the (population) covariance of the rows of `t`.
pub fn covariance_trace(t: &Tensor) -> f64 {
    let (n, d) = (t.rows() as f64, t.cols());
    (0..d)
        .map(|j| {
            let col: Vec<f64> = (0..t.rows()).map(|i| t.row(i)[j]).collect();
            let m = col.iter().sum::<f64>() / n;
            col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .sum()
}

/// Counts per bin of width [`HIST_BIN`] on `[0, 1]`; 1.0 falls in the last
/// bin and values outside the range are clamped.
pub fn histogram(values: &[f64]) -> Vec<usize> {
    let bins = (1.0 / HIST_BIN).round() as usize;
    let mut counts = vec![0; bins];
    for v in values {
        let b = ((v / HIST_BIN).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Euclidean distances between per-class mean embeddings. Classes with no
/// samples get NaN rows.
pub fn centroid_distances(embeddings: &Tensor, labels: &[usize], classes: usize) -> Result<Tensor> {
    if embeddings.rows() != labels.len() {
        return Err(Error::shape(
            "centroid_distances",
            embeddings.shape(),
            &[labels.len()],
        ));
    }
    let d = embeddings.cols();
    let mut sums = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Domain(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(embeddings.row(i)) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    let mut out = Vec::with_capacity(classes * classes);
    for a in &means {
        for b in &means {
            out.push(
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
    }
    Tensor::new(vec![classes, classes], out)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// A CSV table with a header row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    /// A table whose columns are the columns of `t`.
    pub fn from_tensor<S: Into<String>>(header: impl IntoIterator<Item = S>, t: &Tensor) -> Self {
        let mut table = Table::new(header);
        for i in 0..t.rows() {
            table.push_floats(t.row(i));
        }
        table
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn push_floats(&mut self, row: &[f64]) {
        self.rows
            .push(row.iter().map(|v| format_float(*v)).collect());
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Format(format!("csv write: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Format(format!("csv write: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Everything one run contributes to a report: a JSON summary plus named
/// CSV tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunArtifacts {
    pub name: String,
    pub summary: serde_json::Value,
    pub tables: BTreeMap<String, Table>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub created_unix: u64,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn digest_of(&self, path: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|f| f.path == path)
            .map(|f| f.sha256.as_str())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(dir: &Path, rel: &str, bytes: &[u8]) -> Result<ManifestEntry> {
    let path: PathBuf = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(ManifestEntry {
        path: rel.to_string(),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
    })
}

/// Writes each run's tables as `<run>/<table>.csv`, a `summary.json`
/// holding every run summary, and a `manifest.json` listing the files with
/// their digests. Only the manifest carries a timestamp.
pub fn export_report(runs: &[RunArtifacts], out_dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    let mut summaries = serde_json::Map::new();
    for run in runs {
        if run.name.is_empty() || run.name.contains(['/', '\\']) || run.name.starts_with('.') {
            return Err(Error::Contract(format!("invalid run name {:?}", run.name)));
        }
        for (table, content) in &run.tables {
            let rel = format!("{}/{}.csv", run.name, table);
            files.push(write_file(out_dir, &rel, content.to_csv()?.as_bytes())?);
        }
        summaries.insert(run.name.clone(), run.summary.clone());
    }
    let summary = serde_json::json!({ "runs": summaries });
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Format(format!("summary json: {e}")))?;
    files.push(write_file(out_dir, "summary.json", text.as_bytes())?);

    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = Manifest {
        created_unix,
        files,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest json: {e}")))?;
    let path = out_dir.join("manifest.json");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
