use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Switches, TargetStructure, TrainConfig};
use super::model::{AttentionHead, BoundModel, ClassifierModel, LearnableAnchors};
use crate::checkpoint::{self, Descriptor};
use crate::data::{subsample_target, Dataset, Domain};
use crate::error::{Error, Result};
use crate::io::{fmt_sig9, write_bytes};
use crate::losses::{cross_entropy_sum, structure_loss_sum, volume_regularizer_var, LossWeights};
use crate::nn::{batches_per_epoch, round_to_f32, shuffled_batches, TwoLayer};
use crate::numeric::{cholesky_logdet, AdamW, AdamWConfig, JitterPolicy, Matrix, Parameter, Tape, Var};
use crate::relative::{init_learnable_anchors, reference_affinities, AnchorRole, AnchorSet, COSINE_EPS};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;
use crate::supervisor::PseudoLabelTable;

pub const CHECKPOINT_KIND: &str = "classifier";

/// Per-step training record. Loss components are batch means before weighting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub ce: f64,
    /// Structure loss plus absolute alignment, whichever are active.
    pub ls: f64,
    pub reg: f64,
    pub total: f64,
    /// `log det` of the source (or shared) anchor Gram before the update.
    pub logdet_source: Option<f64>,
    pub logdet_target: Option<f64>,
}

/// Constants shared by every training step.
#[derive(Clone, Debug)]
pub struct TrainContext<T> {
    pub reference: Matrix<T>,
    /// `rel(A[i], A)` rows.
    pub affinities: Matrix<T>,
    pub logdet_ref: T,
    pub policy: JitterPolicy,
    pub switches: Switches,
    pub weights: LossWeights,
    pub train_anchors: bool,
}

impl<T: Scalar> TrainContext<T> {
    pub fn new(reference: &AnchorSet<T>, cfg: &TrainConfig) -> Result<Self> {
        let policy = JitterPolicy::escalating();
        Ok(Self {
            reference: reference.matrix().clone(),
            affinities: reference_affinities(reference)?,
            logdet_ref: reference.gram_logdet(&policy)?,
            policy,
            switches: cfg.switches,
            weights: cfg.weights,
            train_anchors: !cfg.freeze_anchors,
        })
    }
}

/// Rows of one batch, split by domain. `*_r` holds structure targets.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchData<T> {
    pub source_x: Matrix<T>,
    pub source_y: Vec<usize>,
    pub source_r: Matrix<T>,
    pub target_x: Matrix<T>,
    pub target_y: Vec<usize>,
    pub target_r: Matrix<T>,
}

impl<T: Scalar> BatchData<T> {
    pub fn len(&self) -> usize {
        self.source_y.len() + self.target_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Recorded loss terms; `ce` and `ls` are already divided by the batch size.
#[derive(Clone, Copy, Debug)]
pub struct BatchTerms<'t, T> {
    pub ce: Var<'t, T>,
    pub ls: Option<Var<'t, T>>,
    pub reg: Option<Var<'t, T>>,
    pub total: Var<'t, T>,
}

fn add_opt<'t, T: Scalar>(a: Option<Var<'t, T>>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    match a {
        None => Ok(b),
        Some(a) => a.add(b),
    }
}

/// `1 − cos(g, a)`.
pub fn absolute_alignment_loss<T: Scalar>(g: &[T], anchor: &[T]) -> Result<T> {
    if g.len() != anchor.len() {
        return Err(Error::DimMismatch(format!("vector dim {} vs anchor dim {}", g.len(), anchor.len())));
    }
    let dot: T = g.iter().zip(anchor).map(|(&a, &b)| a * b).sum();
    let ng = g.iter().map(|&v| v * v).sum::<T>().sqrt();
    let na = anchor.iter().map(|&v| v * v).sum::<T>().sqrt();
    let eps = T::of(COSINE_EPS);
    Ok(T::one() - dot / (ng.max(eps) * na.max(eps)))
}

/// `Σ_rows (1 − cos(g_i, a_i))` with `anchors` a constant row-aligned matrix.
fn absolute_alignment_sum<'t, T: Scalar>(g: Var<'t, T>, anchors: Var<'t, T>) -> Result<Var<'t, T>> {
    let rows = g.shape().0;
    if g.shape() != anchors.shape() {
        return Err(Error::DimMismatch(format!(
            "absolute alignment needs latent dim = anchor dim, got {:?} vs {:?}",
            g.shape(),
            anchors.shape()
        )));
    }
    let eps = T::of(COSINE_EPS);
    let cos = g.l2_normalize_rows(eps)?.mul(anchors.l2_normalize_rows(eps)?)?.sum()?;
    cos.scale(-T::one())?.offset(T::of(rows as f64))
}

/// Builds `λ₁·CE + λ₂·(L_S + L_abs) + λ₃·L_Reg` for one batch.
pub fn batch_terms<'t, T: Scalar>(
    bound: &BoundModel<'t, T>,
    ctx: &TrainContext<T>,
    batch: &BatchData<T>,
) -> Result<BatchTerms<'t, T>> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let tape = bound.encoder.w1.tape();
    let inv_b = T::one() / T::of(batch.len() as f64);
    let sw = ctx.switches;
    let mut ce: Option<Var<'t, T>> = None;
    let mut ls: Option<Var<'t, T>> = None;
    let parts = [
        (Domain::Source, &batch.source_x, &batch.source_y, &batch.source_r),
        (Domain::Target, &batch.target_x, &batch.target_y, &batch.target_r),
    ];
    for (domain, x, y, r_target) in parts {
        if y.is_empty() {
            continue;
        }
        let out = bound.forward(tape.constant(x.clone()), domain)?;
        ce = Some(add_opt(ce, cross_entropy_sum(out.logits, y)?)?);
        if sw.structure() {
            let r = out
                .r
                .ok_or_else(|| Error::InvalidConfig("structure loss needs learnable anchors".into()))?;
            ls = Some(add_opt(ls, structure_loss_sum(r, tape.constant(r_target.clone()))?)?);
        }
        if sw.absolute() {
            let a = tape.constant(ctx.reference.select_rows(y));
            ls = Some(add_opt(ls, absolute_alignment_sum(out.g, a)?)?);
        }
    }
    let ce = ce.expect("non-empty batch").scale(inv_b)?;
    let ls = ls.map(|v| v.scale(inv_b)).transpose()?;
    let reg = match (sw.reg(), bound.anchor_source, bound.anchor_target) {
        (true, Some(s), Some(t)) => {
            let gs = s.matmul(s.transpose()?)?;
            let gt = t.matmul(t.transpose()?)?;
            Some(volume_regularizer_var(gs, gt, ctx.logdet_ref, &ctx.policy)?)
        }
        _ => None,
    };
    let w = &ctx.weights;
    let mut total = ce.scale(T::of(w.lambda1))?;
    if let Some(v) = ls {
        total = total.add(v.scale(T::of(w.lambda2))?)?;
    }
    if let Some(v) = reg {
        total = total.add(v.scale(T::of(w.lambda3))?)?;
    }
    Ok(BatchTerms { ce, ls, reg, total })
}

#[derive(Clone, Copy, Debug)]
struct Item {
    domain: Domain,
    row: usize,
    label: usize,
}

/// A trained classifier with its configuration and training log.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierBundle<T> {
    pub model: ClassifierModel<T>,
    pub config: TrainConfig,
    pub log: Vec<StepLog>,
    pub logdet_ref: f64,
}

fn gram_logdet<T: Scalar>(a: &Matrix<T>, policy: &JitterPolicy) -> Option<f64> {
    let g = a.matmul(&a.transpose()).ok()?;
    cholesky_logdet(&g, policy).ok().map(|l| l.value.to_f64_lossy())
}

impl<T: Scalar> ClassifierBundle<T> {
    /// Current `log det` of the source and target anchor Grams.
    pub fn anchor_logdets(&self) -> Option<(f64, f64)> {
        let a = self.model.anchors.as_ref()?;
        let p = JitterPolicy::escalating();
        Some((gram_logdet(a.source_matrix(), &p)?, gram_logdet(a.target_matrix(), &p)?))
    }

    pub fn checksum(&self) -> String {
        self.model.checksum()
    }

    /// Writes the parameters and a descriptor carrying the config and dims.
    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        let m = &self.model;
        let meta = serde_json::json!({
            "config": self.config,
            "config_hash": self.config.hash(),
            "feature_dim": m.feature_dim(),
            "latent_dim": m.latent_dim(),
            "n_classes": m.n_classes(),
            "attention_heads": m.attention.len(),
            "anchors": m.anchors.as_ref().map(|a| if a.is_shared() { "shared" } else { "per-domain" }),
            "logdet_ref": self.logdet_ref,
            "provenance": extra,
        });
        checkpoint::save(dir, CHECKPOINT_KIND, &m.parameters(), meta)
    }

    pub fn load(dir: &Path) -> Result<(Self, Descriptor)> {
        let (mut params, d) = checkpoint::load::<T>(dir, CHECKPOINT_KIND)?;
        let config: TrainConfig = serde_json::from_value(d.meta["config"].clone())
            .map_err(|e| Error::Malformed(format!("classifier config: {e}")))?;
        let heads = d.meta["attention_heads"].as_u64().unwrap_or(0) as usize;
        let logdet_ref = d.meta["logdet_ref"].as_f64().unwrap_or(0.0);
        let mut take = |n: &str| checkpoint::take(&mut params, n).map(|p| p.value);
        let encoder = TwoLayer::from_parts("enc", take("enc.w1")?, take("enc.b1")?, take("enc.w2")?, take("enc.b2")?);
        let head = TwoLayer::from_parts("head", take("head.w1")?, take("head.b1")?, take("head.w2")?, take("head.b2")?);
        let mut attention = Vec::with_capacity(heads);
        for h in 0..heads {
            attention.push(AttentionHead {
                query: Parameter::new(format!("attn{h}.q"), take(&format!("attn{h}.q"))?),
                key: Parameter::new(format!("attn{h}.k"), take(&format!("attn{h}.k"))?),
                value: Parameter::new(format!("attn{h}.v"), take(&format!("attn{h}.v"))?),
            });
        }
        let anchors = match d.meta["anchors"].as_str() {
            None => None,
            Some(kind) => Some(LearnableAnchors {
                source: Parameter::new("anchors.source", take("anchors.source")?),
                target: if kind == "shared" {
                    None
                } else {
                    Some(Parameter::new("anchors.target", take("anchors.target")?))
                },
            }),
        };
        let model = ClassifierModel {
            encoder,
            head,
            attention,
            anchors,
        };
        Ok((
            Self {
                model,
                config,
                log: Vec::new(),
                logdet_ref,
            },
            d,
        ))
    }

    /// `step,ce,ls,reg,total` rows.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,ce,ls,reg,total\n");
        for l in &self.log {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                l.step,
                fmt_sig9(l.ce),
                fmt_sig9(l.ls),
                fmt_sig9(l.reg),
                fmt_sig9(l.total)
            ));
        }
        s
    }

    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.loss_csv().as_bytes())
    }
}

/// Trains the classifier on source labels plus target pseudo-labels.
///
/// Target ground truth is never consulted; batches shuffle the merged
/// source and target sets and each row's loss terms follow its domain.
pub fn train_classifier<T: Scalar>(
    d: &Dataset<T>,
    reference: &AnchorSet<T>,
    table: &PseudoLabelTable<T>,
    cfg: &TrainConfig,
) -> Result<ClassifierBundle<T>> {
    cfg.validate()?;
    let n_c = d.n_classes();
    if reference.n_classes() != n_c {
        return Err(Error::ClassCountMismatch(format!(
            "{} reference anchors for {n_c} classes",
            reference.n_classes()
        )));
    }
    let d = subsample_target(d, cfg.target_ratio, cfg.seed)?;
    let sw = cfg.switches;
    let dv = cfg.latent_dim.unwrap_or(reference.dim());
    if sw.absolute() && dv != reference.dim() {
        return Err(Error::DimMismatch(format!(
            "absolute alignment needs latent dim {dv} = anchor dim {}",
            reference.dim()
        )));
    }
    let ctx = TrainContext::new(reference, cfg)?;

    let anchors = if sw.learnable_anchors() {
        let source = init_learnable_anchors(n_c, dv, reference, AnchorRole::Source, cfg.seed)?;
        let target = if sw.anchors_shared_across_domains {
            None
        } else {
            Some(init_learnable_anchors(n_c, dv, reference, AnchorRole::Target, cfg.seed)?)
        };
        Some(LearnableAnchors {
            source: Parameter::new("anchors.source", round_to_f32(source.matrix())),
            target: target.map(|t| Parameter::new("anchors.target", round_to_f32(t.matrix()))),
        })
    } else {
        None
    };
    let heads = if sw.attention() { cfg.attention_heads } else { 0 };
    let mut model = ClassifierModel::init(
        d.feature_dim(),
        dv,
        n_c,
        cfg.encoder_hidden.unwrap_or((2 * dv).max(2 * n_c)),
        cfg.head_hidden.unwrap_or(dv.max(2 * n_c)),
        heads,
        anchors,
        &mut stream(cfg.seed, Stream::ClassifierInit),
    );

    let mut items: Vec<Item> = Vec::with_capacity(d.merged_size());
    let mut targets: Vec<T> = Vec::with_capacity(d.merged_size() * n_c);
    for s in &d.source_samples {
        let label = s.label.ok_or_else(|| Error::MissingSourceLabels(format!("source sample {}", s.index)))?;
        items.push(Item {
            domain: Domain::Source,
            row: s.index,
            label,
        });
        targets.extend_from_slice(ctx.affinities.row(label));
    }
    for s in &d.target_samples {
        let p = table.get(s.index).ok_or(Error::MissingPseudoLabels(s.index))?;
        items.push(Item {
            domain: Domain::Target,
            row: s.index,
            label: p.label,
        });
        match cfg.target_structure {
            TargetStructure::Caption => targets.extend_from_slice(p.r.values()),
            TargetStructure::PseudoAnchor => targets.extend_from_slice(ctx.affinities.row(p.label)),
        }
    }
    if items.is_empty() {
        return Err(Error::MissingSourceLabels("no training samples".into()));
    }
    let targets = Matrix::new(items.len(), n_c, targets)?;

    let steps = batches_per_epoch(items.len(), cfg.batch_size);
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        total_steps: (cfg.epochs * steps) as u64,
        ..AdamWConfig::default()
    });
    let mut shuffle = stream(cfg.seed, Stream::ClassifierShuffle);
    let mut log = Vec::with_capacity(cfg.epochs * steps);
    let policy = JitterPolicy::escalating();

    for _ in 0..cfg.epochs {
        for batch in shuffled_batches(items.len(), cfg.batch_size, &mut shuffle) {
            let data = assemble(&d, &items, &targets, &batch);
            let (logdet_source, logdet_target) = match &model.anchors {
                Some(a) => (gram_logdet(a.source_matrix(), &policy), gram_logdet(a.target_matrix(), &policy)),
                None => (None, None),
            };
            let tape = Tape::new();
            let bound = model.bind(&tape, ctx.train_anchors);
            let terms = batch_terms(&bound, &ctx, &data)?;
            let grads = tape.backward(terms.total)?;
            log.push(StepLog {
                step: opt.steps_taken(),
                ce: terms.ce.item().to_f64_lossy(),
                ls: terms.ls.map_or(0.0, |v| v.item().to_f64_lossy()),
                reg: terms.reg.map_or(0.0, |v| v.item().to_f64_lossy()),
                total: terms.total.item().to_f64_lossy(),
                logdet_source,
                logdet_target,
            });
            model.accumulate(&grads, &bound);
            opt.step(&mut model.parameters_mut(ctx.train_anchors))?;
        }
    }
    for p in model.parameters_mut(true) {
        p.value = round_to_f32(&p.value);
    }
    Ok(ClassifierBundle {
        model,
        config: cfg.clone(),
        log,
        logdet_ref: ctx.logdet_ref.to_f64_lossy(),
    })
}

fn assemble<T: Scalar>(d: &Dataset<T>, items: &[Item], targets: &Matrix<T>, batch: &[usize]) -> BatchData<T> {
    let (mut s, mut t): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
    for &k in batch {
        match items[k].domain {
            Domain::Source => s.push(k),
            Domain::Target => t.push(k),
        }
    }
    let rows = |ks: &[usize]| ks.iter().map(|&k| items[k].row).collect::<Vec<_>>();
    let labels = |ks: &[usize]| ks.iter().map(|&k| items[k].label).collect::<Vec<_>>();
    BatchData {
        source_x: d.source.features.select_rows(&rows(&s)),
        source_y: labels(&s),
        source_r: targets.select_rows(&s),
        target_x: d.target.features.select_rows(&rows(&t)),
        target_y: labels(&t),
        target_r: targets.select_rows(&t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absolute_alignment_examples() {
        assert_eq!(absolute_alignment_loss(&[2.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(absolute_alignment_loss(&[0.0, 3.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(absolute_alignment_loss(&[-1.0, 0.0], &[4.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(
            absolute_alignment_loss(&[1.0], &[1.0, 0.0]),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn batched_absolute_alignment_matches_rows() {
        let tape = Tape::<f64>::new();
        let g = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3]]).unwrap();
        let a = Matrix::from_rows(&[vec![0.3, 1.0], vec![1.0, 1.0]]).unwrap();
        let v = absolute_alignment_sum(tape.leaf(g.clone()), tape.constant(a.clone())).unwrap().item();
        let want = absolute_alignment_loss(g.row(0), a.row(0)).unwrap() + absolute_alignment_loss(g.row(1), a.row(1)).unwrap();
        assert!((v - want).abs() < 1e-14);
    }
}
