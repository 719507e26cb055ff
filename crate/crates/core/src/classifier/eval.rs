use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TargetStructure;
use super::model::ClassifierModel;
use crate::data::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::io::{fmt_sig9, write_bytes};
use crate::numeric::Matrix;
use crate::relative::{argmax, reference_affinities, relative_matrix, AnchorSet};
use crate::scalar::Scalar;
use crate::supervisor::PseudoLabelTable;

/// Accuracy summary. `per_class[c]` is the recall of class `c`, `None` without support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_per_class_accuracy: f64,
    pub per_class: Vec<Option<f64>>,
}

/// Scores predictions against ground truth.
pub fn score(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Evaluation> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    let mut hits = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if t >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: t,
                classes: n_classes,
            });
        }
        support[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = hits
        .iter()
        .zip(&support)
        .map(|(&h, &s)| (s > 0).then(|| h as f64 / s as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let total_hits: usize = hits.iter().sum();
    Ok(Evaluation {
        accuracy: total_hits as f64 / truth.len().max(1) as f64,
        mean_per_class_accuracy: present.iter().sum::<f64>() / present.len().max(1) as f64,
        per_class,
    })
}

/// Argmax of the logits for every active sample of `split`.
pub fn predict<T: Scalar>(model: &ClassifierModel<T>, d: &Dataset<T>, split: Domain) -> Result<Vec<usize>> {
    let rows: Vec<usize> = d.samples(split).iter().map(|s| s.index).collect();
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let out = model.forward(&d.domain(split).features.select_rows(&rows), split)?;
    Ok(out.logits.iter_rows().map(argmax).collect())
}

pub fn evaluate_split<T: Scalar>(model: &ClassifierModel<T>, d: &Dataset<T>, split: Domain) -> Result<Evaluation> {
    let truth = d.split_labels(split)?;
    if truth.is_empty() {
        return Err(Error::NoLabelsForSplit(split.as_str()));
    }
    score(&predict(model, d, split)?, &truth, d.n_classes())
}

/// Scores the target split against its evaluation-only labels.
pub fn evaluate<T: Scalar>(model: &ClassifierModel<T>, d: &Dataset<T>) -> Result<Evaluation> {
    evaluate_split(model, d, Domain::Target)
}

/// Mean `|rel(g, A_t) − r_target|` over the target samples covered by `table`.
pub fn structure_gap<T: Scalar>(
    model: &ClassifierModel<T>,
    d: &Dataset<T>,
    table: &PseudoLabelTable<T>,
    reference: &AnchorSet<T>,
    mode: TargetStructure,
) -> Result<f64> {
    let rows: Vec<usize> = d.target_samples.iter().map(|s| s.index).collect();
    if rows.is_empty() {
        return Ok(0.0);
    }
    let out = model.forward(&d.target.features.select_rows(&rows), Domain::Target)?;
    let r = out
        .r
        .ok_or_else(|| Error::InvalidConfig("model has no learnable anchors".into()))?;
    let aff = reference_affinities(reference)?;
    let mut total = 0.0;
    for (k, &i) in rows.iter().enumerate() {
        let p = table.get(i).ok_or(Error::MissingPseudoLabels(i))?;
        let want = match mode {
            TargetStructure::Caption => p.r.values(),
            TargetStructure::PseudoAnchor => aff.row(p.label),
        };
        let row: f64 = r
            .row(k)
            .iter()
            .zip(want)
            .map(|(&a, &b)| (a - b).abs().to_f64_lossy())
            .sum();
        total += row / want.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

/// Cross-domain class-centroid distance divided by the RMS spread of all
/// points, in absolute `g` space and in relative-encoding space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub absolute: f64,
    pub relative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub rows: usize,
    pub separation: Separation,
}

/// Normalized mean distance between source and target centroids of each
/// class present in both domains.
pub fn separation(points: &Matrix<f64>, domains: &[Domain], labels: &[usize], n_classes: usize) -> f64 {
    let dim = points.cols();
    let n = points.rows();
    if n == 0 {
        return 0.0;
    }
    let mut sums = vec![vec![0.0; dim]; 2 * n_classes];
    let mut counts = vec![0usize; 2 * n_classes];
    let mut mean = vec![0.0; dim];
    for (i, x) in points.iter_rows().enumerate() {
        let slot = labels[i] * 2 + usize::from(domains[i] == Domain::Target);
        counts[slot] += 1;
        for j in 0..dim {
            sums[slot][j] += x[j];
            mean[j] += x[j] / n as f64;
        }
    }
    let spread = (points
        .iter_rows()
        .map(|x| x.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let mut dist = Vec::new();
    for c in 0..n_classes {
        let (s, t) = (2 * c, 2 * c + 1);
        if counts[s] == 0 || counts[t] == 0 {
            continue;
        }
        let d2: f64 = (0..dim)
            .map(|j| {
                let diff = sums[s][j] / counts[s] as f64 - sums[t][j] / counts[t] as f64;
                diff * diff
            })
            .sum();
        dist.push(d2.sqrt());
    }
    if dist.is_empty() || spread == 0.0 {
        return 0.0;
    }
    dist.iter().sum::<f64>() / dist.len() as f64 / spread
}

/// Writes one CSV row per active sample: `index,domain,label,g…,r…`.
///
/// Source rows carry the true label, target rows the pseudo-label (or the
/// model's prediction when no table is given). `r` is taken against the
/// sample's own learnable anchors, or against the reference anchors for
/// models without learnable anchors.
pub fn export_embeddings<T: Scalar>(
    model: &ClassifierModel<T>,
    d: &Dataset<T>,
    table: Option<&PseudoLabelTable<T>>,
    reference: &AnchorSet<T>,
    out: &Path,
) -> Result<ExportSummary> {
    let dv = model.latent_dim();
    let n_c = model.n_classes();
    let mut text = String::from("index,domain,label");
    for j in 0..dv {
        text.push_str(&format!(",g{j}"));
    }
    for j in 0..n_c {
        text.push_str(&format!(",r{j}"));
    }
    text.push('\n');

    let mut g_all: Vec<f64> = Vec::new();
    let mut r_all: Vec<f64> = Vec::new();
    let mut domains = Vec::new();
    let mut labels = Vec::new();
    for split in [Domain::Source, Domain::Target] {
        let rows: Vec<usize> = d.samples(split).iter().map(|s| s.index).collect();
        if rows.is_empty() {
            continue;
        }
        let f = model.forward(&d.domain(split).features.select_rows(&rows), split)?;
        let r = match f.r {
            Some(r) => r,
            None => relative_matrix(&f.g, reference.matrix())?,
        };
        for (k, s) in d.samples(split).iter().enumerate() {
            let label = match split {
                Domain::Source => s.label.expect("source samples carry labels"),
                Domain::Target => match table {
                    Some(t) => t.get(s.index).ok_or(Error::MissingPseudoLabels(s.index))?.label,
                    None => argmax(f.logits.row(k)),
                },
            };
            text.push_str(&format!("{},{},{label}", s.index, split.as_str()));
            for &v in f.g.row(k) {
                text.push(',');
                text.push_str(&fmt_sig9(v.to_f64_lossy()));
                g_all.push(v.to_f64_lossy());
            }
            for &v in r.row(k) {
                let v = v.to_f64_lossy().clamp(-1.0, 1.0);
                text.push(',');
                text.push_str(&fmt_sig9(v));
                r_all.push(v);
            }
            text.push('\n');
            domains.push(split);
            labels.push(label);
        }
    }
    write_bytes(out, text.as_bytes())?;
    let rows = labels.len();
    let g = Matrix::new(rows, dv, g_all)?;
    let r = Matrix::new(rows, n_c, r_all)?;
    Ok(ExportSummary {
        rows,
        separation: Separation {
            absolute: separation(&g, &domains, &labels, n_c),
            relative: separation(&r, &domains, &labels, n_c),
        },
    })
}
