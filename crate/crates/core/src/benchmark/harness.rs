use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate, train_classifier, AblationPreset, TrainConfig};
use crate::data::{load_manifest, Dataset, Domain};
use crate::error::{Error, Result};
use crate::relative::AnchorSet;
use crate::supervisor::{pseudo_label, train_supervisor, PseudoLabelTable, SupervisorConfig};

/// Everything a harness run trains with. Seeds inside are overridden per run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub supervisor: SupervisorConfig,
    pub classifier: TrainConfig,
}

impl HarnessConfig {
    /// Default hyperparameters with both learning rates raised to 3e-3; at
    /// 1e-4 the small models do not converge within the default epochs.
    pub fn desk() -> Self {
        let mut h = Self::default();
        h.supervisor.lr = DESK_LR;
        h.classifier.lr = DESK_LR;
        h
    }
}

pub const DESK_LR: f64 = 3e-3;

/// Supervisor and pseudo-labels for one seed, shared by every preset.
struct Labeled {
    table: PseudoLabelTable<f64>,
    pseudo_label_accuracy: f64,
}

fn label_target(d: &Dataset<f64>, reference: &AnchorSet<f64>, cfg: &SupervisorConfig, seed: u64) -> Result<Labeled> {
    let cfg = SupervisorConfig { seed, ..cfg.clone() };
    let blind = d.without_target_labels();
    let sup = train_supervisor(&blind, reference, &cfg)?;
    let table = pseudo_label(&sup.model, &blind, reference)?;
    let pseudo_label_accuracy = match d.target_eval_labels() {
        Some(truth) => {
            let hits = table.rows().iter().filter(|p| truth[p.index] == p.label).count();
            hits as f64 / table.len().max(1) as f64
        }
        None => f64::NAN,
    };
    Ok(Labeled {
        table,
        pseudo_label_accuracy,
    })
}

/// Trains one classifier on label-blind data and scores it on the target split.
fn train_and_score(
    d: &Dataset<f64>,
    reference: &AnchorSet<f64>,
    table: &PseudoLabelTable<f64>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let bundle = train_classifier(&d.without_target_labels(), reference, table, cfg)?;
    Ok(100.0 * evaluate(&bundle.model, d)?.accuracy)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn require_target_labels(d: &Dataset<f64>) -> Result<()> {
    if d.has_target_eval_labels() {
        Ok(())
    } else {
        Err(Error::NoLabelsForSplit(Domain::Target.as_str()))
    }
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: AblationPreset,
    pub description: String,
    /// Target accuracy in percent, one entry per seed.
    pub accuracies: Vec<f64>,
    pub median: f64,
    /// Median minus the previous row's median.
    pub rel_improvement: Option<f64>,
    /// Median minus the s1 median.
    pub abs_improvement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    /// Pseudo-label accuracy in percent per seed.
    pub pseudo_label_accuracy: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, preset: AblationPreset) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.preset == preset)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Setting | Description | Median Acc. | Rel. Imp. | Abs. Imp. |\n|---|---|---|---|---|\n");
        let signed = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:+.2}"));
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {} | {:.2} | {} | {} |\n",
                r.preset,
                r.description,
                r.median,
                signed(r.rel_improvement),
                signed(r.abs_improvement)
            ));
        }
        s.push_str(&format!(
            "\nSeeds: {:?}. Median pseudo-label accuracy: {:.2}.\n",
            self.seeds,
            median(&self.pseudo_label_accuracy)
        ));
        s
    }
}

/// Trains every preset under every seed and tabulates median target accuracy.
///
/// One supervisor is trained per seed and its pseudo-labels are shared by all
/// presets of that seed. Runs execute in parallel; results are ordered by
/// preset then seed regardless of scheduling.
pub fn ablation_on(
    d: &Dataset<f64>,
    presets: &[AblationPreset],
    seeds: &[u64],
    base: &HarnessConfig,
) -> Result<AblationReport> {
    check_seeds(seeds)?;
    require_target_labels(d)?;
    if presets.is_empty() {
        return Err(Error::InvalidConfig("at least one preset is required".into()));
    }
    let reference = AnchorSet::reference(d.reference_anchors.clone())?;
    let labeled: Vec<Labeled> = seeds
        .par_iter()
        .map(|&s| label_target(d, &reference, &base.supervisor, s))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..presets.len())
        .flat_map(|p| (0..seeds.len()).map(move |s| (p, s)))
        .collect();
    let accs: Vec<f64> = jobs
        .par_iter()
        .map(|&(p, s)| {
            let cfg = TrainConfig {
                seed: seeds[s],
                ..base.classifier.clone()
            }
            .with_preset(presets[p]);
            train_and_score(d, &reference, &labeled[s].table, &cfg)
        })
        .collect::<Result<_>>()?;

    let medians: Vec<f64> = accs.chunks(seeds.len()).map(median).collect();
    let s1 = presets.iter().position(|&p| p == AblationPreset::S1).map(|i| medians[i]);
    let rows = presets
        .iter()
        .enumerate()
        .map(|(i, &preset)| AblationRow {
            preset,
            description: preset.description().to_string(),
            accuracies: accs[i * seeds.len()..(i + 1) * seeds.len()].to_vec(),
            median: medians[i],
            rel_improvement: (i > 0).then(|| medians[i] - medians[i - 1]),
            abs_improvement: s1.filter(|_| preset != AblationPreset::S1).map(|b| medians[i] - b),
        })
        .collect();
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        pseudo_label_accuracy: labeled.iter().map(|l| 100.0 * l.pseudo_label_accuracy).collect(),
        rows,
    })
}

pub fn run_ablation(
    manifest: &Path,
    presets: &[AblationPreset],
    seeds: &[u64],
    base: &HarnessConfig,
) -> Result<AblationReport> {
    ablation_on(&load_manifest(manifest)?, presets, seeds, base)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub ratio: f64,
    pub accuracies: Vec<f64>,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<RatioRow>,
}

impl RatioReport {
    /// Whether medians never drop by more than `tolerance` points as the ratio grows.
    pub fn non_decreasing(&self, tolerance: f64) -> bool {
        let mut rows: Vec<&RatioRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
        rows.windows(2).all(|w| w[1].median >= w[0].median - tolerance)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Target ratio | Median Acc. |\n|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!("| {:.0}% | {:.2} |\n", 100.0 * r.ratio, r.median));
        }
        s.push_str(&format!("\nSeeds: {:?}.\n", self.seeds));
        s
    }
}

/// Trains `cfg` at each target ratio under each seed. Pseudo-labels are
/// computed once per seed over the whole target split; the classifier then
/// sees only its subsample.
pub fn ratio_sweep_on(d: &Dataset<f64>, ratios: &[f64], seeds: &[u64], base: &HarnessConfig) -> Result<RatioReport> {
    check_seeds(seeds)?;
    require_target_labels(d)?;
    if let Some(&bad) = ratios.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::RatioOutOfRange(bad));
    }
    let reference = AnchorSet::reference(d.reference_anchors.clone())?;
    let labeled: Vec<Labeled> = seeds
        .par_iter()
        .map(|&s| label_target(d, &reference, &base.supervisor, s))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..ratios.len())
        .flat_map(|r| (0..seeds.len()).map(move |s| (r, s)))
        .collect();
    let accs: Vec<f64> = jobs
        .par_iter()
        .map(|&(r, s)| {
            let cfg = TrainConfig {
                seed: seeds[s],
                target_ratio: ratios[r],
                ..base.classifier.clone()
            };
            train_and_score(d, &reference, &labeled[s].table, &cfg)
        })
        .collect::<Result<_>>()?;
    let rows = ratios
        .iter()
        .zip(accs.chunks(seeds.len()))
        .map(|(&ratio, a)| RatioRow {
            ratio,
            accuracies: a.to_vec(),
            median: median(a),
        })
        .collect();
    Ok(RatioReport {
        seeds: seeds.to_vec(),
        rows,
    })
}

pub fn run_ratio_sweep(manifest: &Path, ratios: &[f64], seeds: &[u64], base: &HarnessConfig) -> Result<RatioReport> {
    ratio_sweep_on(&load_manifest(manifest)?, ratios, seeds, base)
}
