//! Sample/domain schema and manifest loading.
//!
//! A manifest binds file roles. Anchor row `i`, class name `i` and label id
//! `i` all refer to the same class. Target labels, when present, are kept
//! behind [`EvalLabels`], which counts every read so tests can prove that
//! training never looks at them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_embeddings, read_index_csv, read_json};
use crate::numeric::Matrix;
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// One sample: row `index` of its domain's feature and caption matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub index: usize,
    pub domain: Domain,
    /// Present for every source sample, never for target samples.
    pub label: Option<usize>,
}

/// Per-domain vectors; row `i` of both matrices belongs to sample `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainData<T> {
    pub features: Matrix<T>,
    pub captions: Matrix<T>,
}

/// Target ground truth, readable only through a counted accessor.
#[derive(Debug)]
pub struct EvalLabels {
    labels: Vec<usize>,
    reads: AtomicUsize,
}

impl EvalLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self {
            labels,
            reads: AtomicUsize::new(0),
        }
    }

    /// Ground-truth labels indexed by target sample index.
    pub fn reveal(&self) -> &[usize] {
        self.reads.fetch_add(1, Ordering::SeqCst);
        &self.labels
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub class_names: Vec<String>,
    /// Language anchors, one row per class.
    pub reference_anchors: Matrix<T>,
    pub source: DomainData<T>,
    pub target: DomainData<T>,
    pub source_samples: Vec<Sample>,
    pub target_samples: Vec<Sample>,
    target_eval: Option<Arc<EvalLabels>>,
}

impl<T: Scalar> Dataset<T> {
    /// Assembles and validates a dataset from in-memory parts.
    pub fn new(
        class_names: Vec<String>,
        reference_anchors: Matrix<T>,
        source: DomainData<T>,
        source_labels: Vec<usize>,
        target: DomainData<T>,
        target_eval_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n_classes = class_names.len();
        if n_classes < 2 {
            return Err(Error::ClassCountMismatch(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        if reference_anchors.rows() != n_classes {
            return Err(Error::ClassCountMismatch(format!(
                "{} anchor rows for {n_classes} classes",
                reference_anchors.rows()
            )));
        }
        for (name, d) in [("source", &source), ("target", &target)] {
            if d.features.rows() != d.captions.rows() {
                return Err(Error::DimMismatch(format!(
                    "{name}: {} feature rows vs {} caption rows",
                    d.features.rows(),
                    d.captions.rows()
                )));
            }
        }
        if target.features.rows() > 0 && target.features.cols() != source.features.cols() {
            return Err(Error::DimMismatch(format!(
                "feature dims differ: source {} vs target {}",
                source.features.cols(),
                target.features.cols()
            )));
        }
        if target.captions.rows() > 0 && target.captions.cols() != source.captions.cols() {
            return Err(Error::DimMismatch(format!(
                "caption dims differ: source {} vs target {}",
                source.captions.cols(),
                target.captions.cols()
            )));
        }
        if source_labels.len() != source.features.rows() {
            return Err(Error::MissingSourceLabels(format!(
                "{} labels for {} source samples",
                source_labels.len(),
                source.features.rows()
            )));
        }
        check_label_range(&source_labels, n_classes)?;
        if let Some(t) = &target_eval_labels {
            if t.len() != target.features.rows() {
                return Err(Error::DimMismatch(format!(
                    "{} target labels for {} target samples",
                    t.len(),
                    target.features.rows()
                )));
            }
            check_label_range(t, n_classes)?;
        }
        let source_samples = source_labels
            .iter()
            .enumerate()
            .map(|(index, &l)| Sample {
                index,
                domain: Domain::Source,
                label: Some(l),
            })
            .collect();
        let target_samples = (0..target.features.rows())
            .map(|index| Sample {
                index,
                domain: Domain::Target,
                label: None,
            })
            .collect();
        Ok(Self {
            class_names,
            reference_anchors,
            source,
            target,
            source_samples,
            target_samples,
            target_eval: target_eval_labels.map(|l| Arc::new(EvalLabels::new(l))),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Merged size `N_s + N_t` over the active samples.
    pub fn merged_size(&self) -> usize {
        self.source_samples.len() + self.target_samples.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.source.features.cols()
    }

    pub fn caption_dim(&self) -> usize {
        self.source.captions.cols()
    }

    pub fn domain(&self, d: Domain) -> &DomainData<T> {
        match d {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    pub fn samples(&self, d: Domain) -> &[Sample] {
        match d {
            Domain::Source => &self.source_samples,
            Domain::Target => &self.target_samples,
        }
    }

    pub fn has_target_eval_labels(&self) -> bool {
        self.target_eval.is_some()
    }

    /// Evaluation-only access to target ground truth.
    pub fn target_eval_labels(&self) -> Option<&[usize]> {
        self.target_eval.as_deref().map(EvalLabels::reveal)
    }

    /// How many times target ground truth has been read.
    pub fn target_label_reads(&self) -> usize {
        self.target_eval.as_deref().map_or(0, EvalLabels::reads)
    }

    /// Copy without target ground truth.
    pub fn without_target_labels(&self) -> Self {
        let mut d = self.clone();
        d.target_eval = None;
        d
    }

    /// Ground-truth labels of the active samples of `split`, in sample order.
    pub fn split_labels(&self, split: Domain) -> Result<Vec<usize>> {
        match split {
            Domain::Source => Ok(self
                .source_samples
                .iter()
                .map(|s| s.label.expect("source samples carry labels"))
                .collect()),
            Domain::Target => {
                let all = self
                    .target_eval_labels()
                    .ok_or(Error::NoLabelsForSplit("target"))?;
                Ok(self.target_samples.iter().map(|s| all[s.index]).collect())
            }
        }
    }
}

fn check_label_range(labels: &[usize], n_classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::ClassCountMismatch(format!(
            "label {bad} with only {n_classes} classes"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub features: PathBuf,
    pub captions: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domains {
    pub source: DomainEntry,
    pub target: DomainEntry,
}

/// On-disk manifest. Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub anchors: PathBuf,
    pub domains: Domains,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::DanglingReference(format!(
                "manifest {} does not exist",
                path.display()
            )));
        }
        read_json(path)
    }

    /// Every file this manifest references, resolved, in a fixed order.
    pub fn referenced_files(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let d = &self.domains;
        let mut out = vec![
            resolve(base, &self.anchors),
            resolve(base, &d.source.features),
            resolve(base, &d.source.captions),
        ];
        out.extend(d.source.labels.as_ref().map(|p| resolve(base, p)));
        out.push(resolve(base, &d.target.features));
        out.push(resolve(base, &d.target.captions));
        out.extend(d.target.labels.as_ref().map(|p| resolve(base, p)));
        out
    }
}

fn existing(base: &Path, p: &Path, role: &str) -> Result<PathBuf> {
    let full = resolve(base, p);
    if !full.is_file() {
        return Err(Error::DanglingReference(format!(
            "{role} file {} not found",
            full.display()
        )));
    }
    Ok(full)
}

/// Turns `index,label_id` rows into a dense vector covering `0..n`.
fn dense_labels(rows: Vec<(usize, usize)>, n: usize, role: &str) -> Result<Vec<Option<usize>>> {
    let mut out = vec![None; n];
    let mut seen = BTreeMap::new();
    for (i, l) in rows {
        if i >= n {
            return Err(Error::DimMismatch(format!(
                "{role} label index {i} beyond {n} samples"
            )));
        }
        if seen.insert(i, l).is_some() {
            return Err(Error::Malformed(format!("{role} label index {i} repeated")));
        }
        out[i] = Some(l);
    }
    Ok(out)
}

/// Loads and validates the dataset a manifest describes.
pub fn load_manifest<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let manifest = Manifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let d = &manifest.domains;

    let anchors = load_embeddings::<T>(&existing(base, &manifest.anchors, "anchors")?)?.vectors;
    let load_pair = |e: &DomainEntry, role: &str| -> Result<DomainData<T>> {
        Ok(DomainData {
            features: load_embeddings(&existing(base, &e.features, role)?)?.vectors,
            captions: load_embeddings(&existing(base, &e.captions, role)?)?.vectors,
        })
    };
    let source = load_pair(&d.source, "source")?;
    let target = load_pair(&d.target, "target")?;

    let src_label_path = match &d.source.labels {
        None => {
            return Err(Error::MissingSourceLabels(
                "manifest has no domains.source.labels".into(),
            ))
        }
        Some(p) => {
            let full = resolve(base, p);
            if !full.is_file() {
                return Err(Error::MissingSourceLabels(format!(
                    "{} not found",
                    full.display()
                )));
            }
            full
        }
    };
    let n_s = source.features.rows();
    let source_labels = dense_labels(read_index_csv(&src_label_path)?, n_s, "source")?
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::MissingSourceLabels(format!("source sample {i} unlabeled"))))
        .collect::<Result<Vec<_>>>()?;

    let target_labels = match &d.target.labels {
        None => None,
        Some(p) => {
            let full = existing(base, p, "target labels")?;
            let n_t = target.features.rows();
            let dense = dense_labels(read_index_csv(&full)?, n_t, "target")?;
            // eval labels must cover the whole split to be scorable
            Some(
                dense
                    .into_iter()
                    .enumerate()
                    .map(|(i, l)| {
                        l.ok_or_else(|| Error::DimMismatch(format!("target sample {i} has no eval label")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        }
    };

    Dataset::new(
        manifest.classes.clone(),
        anchors,
        source,
        source_labels,
        target,
        target_labels,
    )
}

/// Deterministic subsample of the target split; the source split is untouched.
///
/// Samples are taken as a prefix of one seeded permutation, so a larger
/// ratio always keeps a superset of a smaller one. Target labels are never
/// consulted, so classes are represented proportionally only in expectation.
pub fn subsample_target<T: Scalar>(d: &Dataset<T>, ratio: f64, seed: u64) -> Result<Dataset<T>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::RatioOutOfRange(ratio));
    }
    if ratio == 1.0 {
        return Ok(d.clone());
    }
    let n = d.target_samples.len();
    let keep = ((ratio * n as f64).round() as usize).clamp(usize::from(n > 0), n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Stream::TargetSubsample));
    let mut chosen: Vec<usize> = order[..keep].to_vec();
    chosen.sort_unstable();
    let mut out = d.clone();
    out.target_samples = chosen.into_iter().map(|i| d.target_samples[i]).collect();
    Ok(out)
}
