//! Datasets, member/non-member splits and vector augmentations.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic {
        seed: u64,
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
    },
    Ingested {
        sha256: String,
    },
    Subset {
        parent: Box<Provenance>,
        name: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        samples: Tensor,
        labels: Vec<usize>,
        classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if samples.rank() != 2 {
            return Err(Error::shape("dataset", samples.shape(), &[0, 0]));
        }
        if samples.rows() != labels.len() {
            return Err(Error::shape("dataset", samples.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            samples,
            labels,
            classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn subset(&self, indices: &[usize], name: &str) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Contract(format!("subset '{name}' would be empty")));
        }
        Ok(Dataset {
            samples: self.samples.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            provenance: Provenance::Subset {
                parent: Box::new(self.provenance.clone()),
                name: name.to_string(),
            },
        })
    }

    /// First `n` rows.
    pub fn head(&self, n: usize, name: &str) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, name)
    }

    pub fn concat(&self, other: &Dataset, name: &str) -> Result<Dataset> {
        if self.dim() != other.dim() {
            return Err(Error::shape(
                "concat",
                self.samples.shape(),
                other.samples.shape(),
            ));
        }
        let mut data = self.samples.data().to_vec();
        data.extend_from_slice(other.samples.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(
            Tensor::new(vec![labels.len(), self.dim()], data)?,
            labels,
            self.classes.max(other.classes),
            Provenance::Subset {
                parent: Box::new(self.provenance.clone()),
                name: name.to_string(),
            },
        )
    }

    /// CSV with a header row, the label first and then `x0..x{d-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for j in 0..self.dim() {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.labels[i].to_string());
            for v in self.samples.row(i) {
                out.push(',');
                out.push_str(&format_float(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Gaussian blobs: class means on a sphere of radius `separation`, unit
/// isotropic noise around each mean. Rows are grouped by class.
pub fn gen_synthetic(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || dim < 4 || !(separation > 0.0) || per_class == 0 {
        return Err(Error::Contract(format!(
            "gen_synthetic needs K >= 2, d >= 4, separation > 0, per_class > 0 \
             (got K={classes}, d={dim}, separation={separation}, per_class={per_class})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = class_means(&mut rng, classes, dim, separation);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for m in mean {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(m + noise);
            }
            labels.push(k);
        }
    }
    Dataset::new(
        Tensor::new(vec![n, dim], data)?,
        labels,
        classes,
        Provenance::Synthetic {
            seed,
            classes,
            per_class,
            dim,
            separation,
        },
    )
}

fn class_means(rng: &mut ChaCha8Rng, classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| {
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.into_iter().map(|v| v * separation / norm).collect()
        })
        .collect()
}

/// Identifies a CSV column by zero-based position or by header name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label: Column,
    /// `None` means every column except the label.
    pub features: Option<Vec<Column>>,
}

/// Reads a numeric CSV. The first row is treated as a header when any of
/// its cells is not a number. The class count is the largest label plus one.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&bytes, schema)
}

pub fn parse_csv(bytes: &[u8], schema: &CsvSchema) -> Result<Dataset> {
    let sha256 = hex::encode(Sha256::digest(bytes));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);

    let mut header: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut rows: Vec<(u64, Vec<f64>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        if let Some(w) = width {
            if record.len() != w {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {w} fields, found {}", record.len()),
                });
            }
        }
        width = Some(record.len());
        let parsed: Vec<Option<f64>> = record.iter().map(|c| c.trim().parse().ok()).collect();
        if i == 0 && parsed.iter().any(Option::is_none) {
            header = Some(record.iter().map(|c| c.trim().to_string()).collect());
            continue;
        }
        let mut values = Vec::with_capacity(parsed.len());
        for (j, p) in parsed.into_iter().enumerate() {
            match p {
                Some(v) => values.push(v),
                None => {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-numeric cell '{}' in column {j}", &record[j]),
                    })
                }
            }
        }
        rows.push((line, values));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }

    let width = width.expect("at least one row");
    let resolve = |c: &Column| -> Result<usize> {
        match c {
            Column::Index(i) if *i < width => Ok(*i),
            Column::Index(i) => Err(Error::Parse {
                line: 1,
                message: format!("column {i} out of range for {width} columns"),
            }),
            Column::Name(name) => header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("no column named '{name}'"),
                }),
        }
    };
    let label_col = resolve(&schema.label)?;
    let feature_cols: Vec<usize> = match &schema.features {
        Some(cols) => cols.iter().map(resolve).collect::<Result<_>>()?,
        None => (0..width).filter(|&j| j != label_col).collect(),
    };
    if feature_cols.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no feature columns".into(),
        });
    }

    let mut data = Vec::with_capacity(rows.len() * feature_cols.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        let l = row[label_col];
        if l < 0.0 || l.fract() != 0.0 || !l.is_finite() {
            return Err(Error::Parse {
                line: *line,
                message: format!("label {l} is not a non-negative integer"),
            });
        }
        labels.push(l as usize);
        data.extend(feature_cols.iter().map(|&j| row[j]));
    }
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(
        Tensor::new(vec![rows.len(), feature_cols.len()], data)?,
        labels,
        classes,
        Provenance::Ingested { sha256 },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub member_retain: usize,
    pub member_forget: usize,
    pub nonmember: usize,
    pub test: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub indices: Vec<usize>,
    pub data: Dataset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    /// `None` when the whole training set is to be forgotten.
    pub member_retain: Option<Partition>,
    pub member_forget: Partition,
    pub nonmember: Partition,
    pub test: Partition,
}

impl Splits {
    /// Retained and forgotten members together: the training set.
    pub fn members(&self) -> Result<Dataset> {
        match &self.member_retain {
            Some(r) => r.data.concat(&self.member_forget.data, "members"),
            None => Ok(self.member_forget.data.clone()),
        }
    }
}

/// Stratified, disjoint partition of `ds`, deterministic in `spec.seed`.
/// Only the retained-member partition may be empty.
///
/// Each partition takes an equal share of every class, with remainders
/// spread round-robin; if a class runs out the shortfall is drawn from the
/// classes with the most samples left.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let counts = [
        ("member_retain", spec.member_retain),
        ("member_forget", spec.member_forget),
        ("nonmember", spec.nonmember),
        ("test", spec.test),
    ];
    let total: usize = counts.iter().map(|c| c.1).sum();
    if total > ds.len() {
        return Err(Error::Contract(format!(
            "split needs {total} samples but the dataset has {}",
            ds.len()
        )));
    }
    if let Some((name, _)) = counts[1..].iter().find(|c| c.1 == 0) {
        return Err(Error::Contract(format!(
            "split partition '{name}' is empty"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = ds.classes;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in ds.labels.iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    let mut parts = Vec::with_capacity(4);
    for (p, (name, count)) in counts.iter().enumerate() {
        let mut quota = vec![count / k; k];
        for r in 0..count % k {
            quota[(p + r) % k] += 1;
        }
        let mut taken = Vec::with_capacity(*count);
        let mut deficit = 0;
        for (class, q) in quota.into_iter().enumerate() {
            let n = q.min(pools[class].len());
            deficit += q - n;
            let at = pools[class].len() - n;
            taken.extend(pools[class].split_off(at));
        }
        while deficit > 0 {
            let richest = (0..k)
                .max_by_key(|&c| (pools[c].len(), std::cmp::Reverse(c)))
                .expect("k >= 1");
            let idx = pools[richest].pop().expect("total checked above");
            taken.push(idx);
            deficit -= 1;
        }
        taken.shuffle(&mut rng);
        if taken.is_empty() {
            parts.push(None);
            continue;
        }
        let data = ds.subset(&taken, name)?;
        parts.push(Some(Partition {
            indices: taken,
            data,
        }));
    }
    let mut it = parts.into_iter();
    let member_retain = it.next().expect("four parts");
    let mut next = || it.next().flatten().expect("non-empty partition");
    Ok(Splits {
        member_retain,
        member_forget: next(),
        nonmember: next(),
        test: next(),
    })
}

/// Vector analogues of image augmentations, applied in order: additive
/// gaussian noise, whole-vector reversal, then zeroing one contiguous block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub noise_std: f64,
    pub mask_fraction: f64,
    pub flip_prob: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            noise_std: 0.5,
            mask_fraction: 0.25,
            flip_prob: 0.0,
        }
    }
}

impl AugmentationConfig {
    pub fn identity() -> Self {
        AugmentationConfig {
            noise_std: 0.0,
            mask_fraction: 0.0,
            flip_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.noise_std >= 0.0
            && (0.0..1.0).contains(&self.mask_fraction)
            && (0.0..=1.0).contains(&self.flip_prob);
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "invalid augmentation config {self:?}"
            )))
        }
    }

    pub fn view<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let d = x.len();
        let mut v: Vec<f64> = if self.noise_std > 0.0 {
            x.iter()
                .map(|&xi| {
                    let z: f64 = StandardNormal.sample(rng);
                    xi + self.noise_std * z
                })
                .collect()
        } else {
            x.to_vec()
        };
        if self.flip_prob > 0.0 && rng.random::<f64>() < self.flip_prob {
            v.reverse();
        }
        let block = (self.mask_fraction * d as f64).floor() as usize;
        if block > 0 {
            let start = rng.random_range(0..=d - block);
            v[start..start + block].iter_mut().for_each(|c| *c = 0.0);
        }
        v
    }
}

/// Generator for the augmentations of sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Two independent views of `x`, deterministic in `(seed, index)`.
pub fn augment_pair(
    x: &[f64],
    cfg: &AugmentationConfig,
    seed: u64,
    index: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = sample_rng(seed, index);
    let a = cfg.view(x, &mut rng);
    let b = cfg.view(x, &mut rng);
    (a, b)
}

/// Augments every row of `x` twice; row `i` uses stream `i` of `seed`.
pub fn augment_batch(x: &Tensor, cfg: &AugmentationConfig, seed: u64) -> (Tensor, Tensor) {
    let (n, d) = (x.rows(), x.cols());
    let mut a = Vec::with_capacity(n * d);
    let mut b = Vec::with_capacity(n * d);
    for i in 0..n {
        let (va, vb) = augment_pair(x.row(i), cfg, seed, i as u64);
        a.extend(va);
        b.extend(vb);
    }
    (
        Tensor::from_parts(vec![n, d], a),
        Tensor::from_parts(vec![n, d], b),
    )
}

/// Derives an independent seed for a named sub-task.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn synthetic_size_and_determinism() {
        let a = gen_synthetic(3, 5, 4, 2.0, 9).unwrap();
        assert_eq!(a.len(), 15);
        assert_eq!(a.classes, 3);
        let b = gen_synthetic(3, 5, 4, 2.0, 9).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = gen_synthetic(3, 5, 4, 2.0, 10).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn synthetic_rejects_bad_params() {
        assert!(gen_synthetic(1, 5, 4, 1.0, 0).is_err());
        assert!(gen_synthetic(2, 5, 3, 1.0, 0).is_err());
        assert!(gen_synthetic(2, 5, 4, 0.0, 0).is_err());
    }

    #[test]
    fn synthetic_class_means_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let means = class_means(&mut rng, 64, 8, 5.0);
        for (i, a) in means.iter().enumerate() {
            let r = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - 5.0).abs() < 1e-12);
            for b in &means[i + 1..] {
                let dist = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
                assert!(dist > 1e-6);
            }
        }
    }

    #[test]
    fn csv_parsing() {
        let schema = CsvSchema {
            label: Column::Index(0),
            features: None,
        };
        let ds = parse_csv(b"y,a,b\n0,1.0,2.0\n2,3.5,-1\n1,0,0\n", &schema).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.classes, 3);
        assert!(matches!(ds.provenance, Provenance::Ingested { .. }));

        let by_name = CsvSchema {
            label: Column::Name("y".into()),
            features: Some(vec![Column::Name("b".into())]),
        };
        let ds = parse_csv(b"a,y,b\n1,0,2\n3,1,4\n", &by_name).unwrap();
        assert_eq!(ds.samples.data(), &[2.0, 4.0]);
        assert_eq!(ds.labels, vec![0, 1]);

        let headerless = parse_csv(b"0,1,2\n1,3,4\n", &schema).unwrap();
        assert_eq!(headerless.len(), 2);
    }

    #[test]
    fn csv_errors() {
        let schema = CsvSchema {
            label: Column::Index(0),
            features: None,
        };
        match parse_csv(b"y,a,b\n", &schema) {
            Err(Error::Parse { message, .. }) => assert_eq!(message, "no data rows"),
            other => panic!("{other:?}"),
        }
        match parse_csv(b"y,a,b\n0,1,2\n1,2\n", &schema) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_csv(b"y,a\n0,1\n1,oops\n", &schema) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_is_disjoint_balanced_and_reproducible() {
        let ds = gen_synthetic(4, 100, 4, 1.0, 1).unwrap();
        let spec = SplitSpec {
            member_retain: 100,
            member_forget: 100,
            nonmember: 100,
            test: 100,
            seed: 5,
        };
        let s = split(&ds, &spec).unwrap();
        let retain = s.member_retain.as_ref().unwrap();
        let all: Vec<usize> = [retain, &s.member_forget, &s.nonmember, &s.test]
            .iter()
            .flat_map(|p| p.indices.clone())
            .collect();
        assert_eq!(all.len(), 400);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 400);
        for p in [retain, &s.member_forget, &s.nonmember, &s.test] {
            assert_eq!(p.data.len(), 100);
            for c in 0..4 {
                assert_eq!(p.data.labels.iter().filter(|&&l| l == c).count(), 25);
            }
        }
        assert_eq!(split(&ds, &spec).unwrap(), s);
    }

    #[test]
    fn split_rejects_infeasible_counts() {
        let ds = gen_synthetic(2, 10, 4, 1.0, 1).unwrap();
        let spec = SplitSpec {
            member_retain: 10,
            member_forget: 5,
            nonmember: 5,
            test: 1,
            seed: 0,
        };
        assert!(matches!(split(&ds, &spec), Err(Error::Contract(_))));
        let spec = SplitSpec {
            member_forget: 0,
            member_retain: 5,
            ..spec
        };
        assert!(matches!(split(&ds, &spec), Err(Error::Contract(_))));
    }

    #[test]
    fn whole_training_set_can_be_forgotten() {
        let ds = gen_synthetic(2, 10, 4, 1.0, 1).unwrap();
        let spec = SplitSpec {
            member_retain: 0,
            member_forget: 8,
            nonmember: 6,
            test: 4,
            seed: 0,
        };
        let s = split(&ds, &spec).unwrap();
        assert!(s.member_retain.is_none());
        assert_eq!(s.members().unwrap(), s.member_forget.data);
    }

    #[test]
    fn identity_augmentation_is_identity() {
        let x = [1.0, -2.0, 3.5, 0.25];
        let (a, b) = augment_pair(&x, &AugmentationConfig::identity(), 3, 7);
        assert_eq!(a, x);
        assert_eq!(b, x);
    }

    #[test]
    fn mask_zeroes_exact_block() {
        let x = [1.0; 8];
        let cfg = AugmentationConfig {
            noise_std: 0.0,
            mask_fraction: 0.25,
            flip_prob: 0.0,
        };
        for idx in 0..20 {
            let (a, b) = augment_pair(&x, &cfg, 11, idx);
            for v in [a, b] {
                let zeros: Vec<usize> = (0..8).filter(|&i| v[i] == 0.0).collect();
                assert_eq!(zeros.len(), 2);
                assert_eq!(zeros[1], zeros[0] + 1);
            }
        }
    }

    #[test]
    fn flip_reverses() {
        let cfg = AugmentationConfig {
            noise_std: 0.0,
            mask_fraction: 0.0,
            flip_prob: 1.0,
        };
        let (a, _) = augment_pair(&[1.0, 2.0, 3.0, 4.0], &cfg, 0, 0);
        assert_eq!(a, vec![4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn augmentation_is_deterministic_per_index() {
        let cfg = AugmentationConfig::default();
        let x = [0.5; 16];
        assert_eq!(augment_pair(&x, &cfg, 1, 2), augment_pair(&x, &cfg, 1, 2));
        assert_ne!(augment_pair(&x, &cfg, 1, 2), augment_pair(&x, &cfg, 1, 3));
        let (a, b) = augment_pair(&x, &cfg, 1, 2);
        assert_ne!(a, b);
    }

    #[test]
    fn noise_energy_matches_variance() {
        // Monte Carlo: E||view - x||^2 = sigma^2 d.
        let cfg = AugmentationConfig {
            noise_std: 0.1,
            mask_fraction: 0.0,
            flip_prob: 0.0,
        };
        let d = 8;
        let x = vec![0.3; d];
        let draws = 10_000;
        let mut total = 0.0;
        for i in 0..draws {
            let (a, _) = augment_pair(&x, &cfg, 42, i);
            total += a.iter().zip(&x).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        }
        let mean = total / draws as f64;
        let expected = 0.01 * d as f64;
        assert!((mean - expected).abs() < 0.1 * expected, "{mean}");
    }
}
