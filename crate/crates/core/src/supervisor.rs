//! Language supervisor: maps caption embeddings into the anchor space,
//! trained on labeled source captions, then used to pseudo-label targets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::io::{load_embeddings, read_index_csv, sha256_hex, write_embeddings, write_index_csv};
use crate::losses::{cross_entropy_sum, structure_loss_sum, weighted_total, LossWeights};
use crate::nn::{batches_per_epoch, round_to_f32, shuffled_batches, TwoLayer};
use crate::numeric::{AdamW, AdamWConfig, Matrix, Parameter, Tape};
use crate::relative::{argmax, reference_affinities, relative_matrix, relative_var, AnchorSet, RelativeEncoding};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;

pub const CHECKPOINT_KIND: &str = "supervisor";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisorConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Softmax temperature applied to relative encodings before cross-entropy.
    pub temperature: f64,
    /// Hidden width; `None` means `max(D_l, 2·N_c)`.
    pub hidden: Option<usize>,
    pub seed: u64,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            epochs: 5,
            batch_size: 64,
            lr: 1e-4,
            weight_decay: AdamWConfig::default().weight_decay,
            temperature: 1.0,
            hidden: None,
            seed: 0,
        }
    }
}

impl SupervisorConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("lr and weight decay must be >= 0".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(self.temperature));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Two affine layers with a tanh between: caption dim → hidden → anchor dim.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisorModel<T> {
    net: TwoLayer<T>,
    temperature: f64,
}

impl<T: Scalar> SupervisorModel<T> {
    /// Builds a model from explicit weights, checking that it lands in the anchor space.
    pub fn from_parts(net: TwoLayer<T>, temperature: f64, anchor_dim: usize) -> Result<Self> {
        if net.output_dim() != anchor_dim {
            return Err(Error::DimMismatch(format!(
                "supervisor output dim {} vs anchor dim {anchor_dim}",
                net.output_dim()
            )));
        }
        if !(temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(temperature));
        }
        Ok(Self { net, temperature })
    }

    pub fn network(&self) -> &TwoLayer<T> {
        &self.net
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn caption_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// `z = G(caption)` for every row.
    pub fn embed(&self, captions: &Matrix<T>) -> Result<Matrix<T>> {
        if captions.cols() != self.caption_dim() {
            return Err(Error::DimMismatch(format!(
                "caption dim {} vs supervisor input {}",
                captions.cols(),
                self.caption_dim()
            )));
        }
        self.net.forward(captions)
    }

    pub fn parameters(&self) -> [&Parameter<T>; 4] {
        self.net.params()
    }

    /// Digest of all parameter values.
    pub fn checksum(&self) -> String {
        checkpoint::parameter_digest(&self.parameters())
    }

    pub fn save(&self, dir: &Path, meta: serde_json::Value) -> Result<()> {
        let mut meta = meta;
        meta["temperature"] = serde_json::json!(self.temperature);
        checkpoint::save(dir, CHECKPOINT_KIND, &self.parameters(), meta)
    }

    pub fn load(dir: &Path) -> Result<(Self, checkpoint::Descriptor)> {
        let (mut params, d) = checkpoint::load::<T>(dir, CHECKPOINT_KIND)?;
        let mut take = |n: &str| checkpoint::take(&mut params, n).map(|p| p.value);
        let net = TwoLayer::from_parts("sup", take("sup.w1")?, take("sup.b1")?, take("sup.w2")?, take("sup.b2")?);
        let temperature = d.meta["temperature"]
            .as_f64()
            .ok_or_else(|| Error::Malformed("supervisor checkpoint lacks temperature".into()))?;
        let out = net.output_dim();
        Ok((Self::from_parts(net, temperature, out)?, d))
    }
}

/// A trained supervisor with its per-epoch mean training loss.
#[derive(Clone, Debug)]
pub struct SupervisorRun<T> {
    pub model: SupervisorModel<T>,
    pub epoch_losses: Vec<f64>,
}

/// Fits the supervisor on source captions with cross-entropy over
/// `softmax(rel(z, A)/τ)` plus the structure loss against `rel(A[y], A)`.
pub fn train_supervisor<T: Scalar>(
    d: &Dataset<T>,
    reference: &AnchorSet<T>,
    cfg: &SupervisorConfig,
) -> Result<SupervisorRun<T>> {
    cfg.validate()?;
    if reference.n_classes() != d.n_classes() {
        return Err(Error::ClassCountMismatch(format!(
            "{} reference anchors for {} classes",
            reference.n_classes(),
            d.n_classes()
        )));
    }
    let labels = d.split_labels(Domain::Source)?;
    if labels.is_empty() {
        return Err(Error::MissingSourceLabels("no source samples".into()));
    }
    let rows: Vec<usize> = d.source_samples.iter().map(|s| s.index).collect();
    let n_c = d.n_classes();
    let d_l = reference.dim();
    let hidden = cfg.hidden.unwrap_or(d_l.max(2 * n_c));
    let net = TwoLayer::init("sup", d.caption_dim(), hidden, d_l, &mut stream(cfg.seed, Stream::SupervisorInit));
    let mut model = SupervisorModel::from_parts(net, cfg.temperature, d_l)?;

    let affinities = reference_affinities(reference)?;
    let inv_temp = T::of(1.0 / cfg.temperature);
    let steps = batches_per_epoch(labels.len(), cfg.batch_size);
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        total_steps: (cfg.epochs * steps) as u64,
        ..AdamWConfig::default()
    });
    let mut shuffle = stream(cfg.seed, Stream::SupervisorShuffle);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        let batches = shuffled_batches(labels.len(), cfg.batch_size, &mut shuffle);
        for batch in &batches {
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let caps = d.source.captions.select_rows(&batch.iter().map(|&i| rows[i]).collect::<Vec<_>>());
            let inv_b = T::of(1.0 / batch.len() as f64);

            let tape = Tape::new();
            let bound = model.net.bind(&tape);
            let z = bound.forward(tape.constant(caps))?;
            let r = relative_var(z, tape.constant(reference.matrix().clone()))?;
            let ce = cross_entropy_sum(r.scale(inv_temp)?, &y)?.scale(inv_b)?;
            let ls = structure_loss_sum(r, tape.constant(affinities.select_rows(&y)))?.scale(inv_b)?;
            let loss = weighted_total(&[(cfg.weights.lambda1, Some(ce)), (cfg.weights.lambda2, Some(ls))])?
                .expect("two terms");
            total += loss.item().to_f64_lossy();
            let grads = tape.backward(loss)?;
            model.net.accumulate(&grads, &bound);
            opt.step(&mut model.net.params_mut())?;
        }
        epoch_losses.push(total / batches.len() as f64);
    }
    for p in model.net.params_mut() {
        p.value = round_to_f32(&p.value);
    }
    Ok(SupervisorRun { model, epoch_losses })
}

/// One pseudo-labeled target sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel<T> {
    pub index: usize,
    pub label: usize,
    /// Supervisor output, rounded to binary32 so a saved table reloads exactly.
    pub z: Vec<T>,
    pub r: RelativeEncoding<T>,
}

/// Pseudo-labels for target samples, ordered by sample index.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelTable<T> {
    rows: Vec<PseudoLabel<T>>,
}

impl<T: Scalar> PseudoLabelTable<T> {
    /// Builds a table from `(index, z)` pairs; labels are the argmax of `rel(z, A)`.
    pub fn from_embeddings(indices: &[usize], z: &Matrix<T>, reference: &AnchorSet<T>) -> Result<Self> {
        if indices.len() != z.rows() {
            return Err(Error::LengthMismatch(indices.len(), z.rows()));
        }
        if z.rows() == 0 {
            return Ok(Self { rows: Vec::new() });
        }
        let z = round_to_f32(z);
        crate::relative::check_rows_nonzero(&z)?;
        let r = relative_matrix(&z, reference.matrix())?;
        let mut rows: Vec<PseudoLabel<T>> = indices
            .iter()
            .enumerate()
            .map(|(k, &index)| {
                let enc = RelativeEncoding::new(r.row(k).to_vec())?;
                Ok(PseudoLabel {
                    index,
                    label: argmax(enc.values()),
                    z: z.row(k).to_vec(),
                    r: enc,
                })
            })
            .collect::<Result<_>>()?;
        rows.sort_by_key(|p| p.index);
        if rows.windows(2).any(|w| w[0].index == w[1].index) {
            return Err(Error::Malformed("pseudo-label table repeats a sample index".into()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[PseudoLabel<T>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&PseudoLabel<T>> {
        self.rows
            .binary_search_by_key(&index, |p| p.index)
            .ok()
            .map(|k| &self.rows[k])
    }

    pub fn labels(&self) -> Vec<(usize, usize)> {
        self.rows.iter().map(|p| (p.index, p.label)).collect()
    }

    /// Writes `index,pseudo_label` rows and the `z` vectors in the same order.
    pub fn save(&self, csv: &Path, z_file: &Path) -> Result<()> {
        write_index_csv(csv, "pseudo_label", &self.labels())?;
        let dim = self.rows.first().map_or(0, |p| p.z.len());
        let z = Matrix::new(self.rows.len(), dim, self.rows.iter().flat_map(|p| p.z.clone()).collect())?;
        write_embeddings(z_file, &z)
    }

    /// Reloads a saved table, recomputing encodings against `reference` and
    /// checking that stored labels agree with them.
    pub fn load(csv: &Path, z_file: &Path, reference: &AnchorSet<T>) -> Result<Self> {
        let labels = read_index_csv(csv)?;
        let z = load_embeddings::<T>(z_file)?.vectors;
        let indices: Vec<usize> = labels.iter().map(|&(i, _)| i).collect();
        let table = Self::from_embeddings(&indices, &z, reference)?;
        let mut sorted = labels;
        sorted.sort_by_key(|&(i, _)| i);
        if table.labels() != sorted {
            return Err(Error::Malformed(format!(
                "{}: stored pseudo-labels disagree with argmax of stored z",
                csv.display()
            )));
        }
        Ok(table)
    }
}

/// Runs the supervisor over every active target sample.
pub fn pseudo_label<T: Scalar>(
    model: &SupervisorModel<T>,
    d: &Dataset<T>,
    reference: &AnchorSet<T>,
) -> Result<PseudoLabelTable<T>> {
    let indices: Vec<usize> = d.target_samples.iter().map(|s| s.index).collect();
    if indices.is_empty() {
        return PseudoLabelTable::from_embeddings(&[], &Matrix::zeros(0, model.output_dim()), reference);
    }
    let z = model.embed(&d.target.captions.select_rows(&indices))?;
    PseudoLabelTable::from_embeddings(&indices, &z, reference)
}

/// Argmax class of `rel(G(caption), A)` for the active samples of `split`.
pub fn supervisor_predictions<T: Scalar>(
    model: &SupervisorModel<T>,
    d: &Dataset<T>,
    reference: &AnchorSet<T>,
    split: Domain,
) -> Result<Vec<usize>> {
    let rows: Vec<usize> = d.samples(split).iter().map(|s| s.index).collect();
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let z = model.embed(&d.domain(split).captions.select_rows(&rows))?;
    let r = relative_matrix(&z, reference.matrix())?;
    Ok(r.iter_rows().map(argmax).collect())
}

/// Fraction of samples of `split` whose supervisor prediction matches the label.
pub fn supervisor_accuracy<T: Scalar>(
    model: &SupervisorModel<T>,
    d: &Dataset<T>,
    reference: &AnchorSet<T>,
    split: Domain,
) -> Result<f64> {
    let labels = d.split_labels(split)?;
    if labels.is_empty() {
        return Err(Error::NoLabelsForSplit(split.as_str()));
    }
    let pred = supervisor_predictions(model, d, reference, split)?;
    Ok(accuracy(&pred, &labels))
}

pub(crate) fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}
