use rand::Rng;

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::nn::{BoundTwoLayer, TwoLayer};
use crate::numeric::{Gradients, Matrix, Parameter, Tape, Var};
use crate::relative::{relative_var, AnchorSet};
use crate::scalar::Scalar;

/// Query, key and value projections of one attention head (row convention: `x·W`).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead<T> {
    pub query: Parameter<T>,
    pub key: Parameter<T>,
    pub value: Parameter<T>,
}

impl<T: Scalar> AttentionHead<T> {
    /// Identity projections.
    pub fn identity(dim: usize, head: usize) -> Self {
        Self {
            query: Parameter::new(format!("attn{head}.q"), Matrix::identity(dim)),
            key: Parameter::new(format!("attn{head}.k"), Matrix::identity(dim)),
            value: Parameter::new(format!("attn{head}.v"), Matrix::identity(dim)),
        }
    }
}

/// Source and target anchors; `target` is `None` when both domains share one set.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnableAnchors<T> {
    pub source: Parameter<T>,
    pub target: Option<Parameter<T>>,
}

impl<T: Scalar> LearnableAnchors<T> {
    pub fn source_matrix(&self) -> &Matrix<T> {
        &self.source.value
    }

    pub fn target_matrix(&self) -> &Matrix<T> {
        self.target.as_ref().map_or(&self.source.value, |p| &p.value)
    }

    pub fn is_shared(&self) -> bool {
        self.target.is_none()
    }
}

/// Encoder, optional anchors and attention, and the classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel<T> {
    pub encoder: TwoLayer<T>,
    pub head: TwoLayer<T>,
    pub attention: Vec<AttentionHead<T>>,
    pub anchors: Option<LearnableAnchors<T>>,
}

/// Outputs of one forward pass over a batch of rows from a single domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward<T> {
    pub g: Matrix<T>,
    /// `rel(g, own-domain anchors)`, when the model has anchors.
    pub r: Option<Matrix<T>>,
    pub logits: Matrix<T>,
}

/// A model whose parameters live on one tape. Both domain branches read the
/// same handles, so every shared parameter has a single storage location.
#[derive(Clone, Debug)]
pub struct BoundModel<'t, T> {
    pub encoder: BoundTwoLayer<'t, T>,
    pub head: BoundTwoLayer<'t, T>,
    pub attention: Vec<[Var<'t, T>; 3]>,
    pub anchor_source: Option<Var<'t, T>>,
    pub anchor_target: Option<Var<'t, T>>,
}

#[derive(Clone, Copy, Debug)]
pub struct PartOutput<'t, T> {
    pub g: Var<'t, T>,
    pub r: Option<Var<'t, T>>,
    pub logits: Var<'t, T>,
}

impl<T: Scalar> ClassifierModel<T> {
    /// Xavier encoder and head, `heads` identity attention heads (0 for none).
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        feature_dim: usize,
        latent_dim: usize,
        n_classes: usize,
        encoder_hidden: usize,
        head_hidden: usize,
        heads: usize,
        anchors: Option<LearnableAnchors<T>>,
        rng: &mut R,
    ) -> Self {
        let encoder = TwoLayer::init("enc", feature_dim, encoder_hidden, latent_dim, rng);
        let head = TwoLayer::init("head", latent_dim, head_hidden, n_classes, rng);
        let attention = (0..heads).map(|h| AttentionHead::identity(latent_dim, h)).collect();
        Self {
            encoder,
            head,
            attention,
            anchors,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Every parameter, in a fixed order.
    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = self.encoder.params().into_iter().collect();
        out.extend(self.head.params());
        for h in &self.attention {
            out.extend([&h.query, &h.key, &h.value]);
        }
        if let Some(a) = &self.anchors {
            out.push(&a.source);
            out.extend(a.target.as_ref());
        }
        out
    }

    /// Mutable parameters in [`parameters`](Self::parameters) order, optionally without anchors.
    pub fn parameters_mut(&mut self, include_anchors: bool) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = self.encoder.params_mut().into_iter().collect();
        out.extend(self.head.params_mut());
        for h in &mut self.attention {
            out.extend([&mut h.query, &mut h.key, &mut h.value]);
        }
        if include_anchors {
            if let Some(a) = &mut self.anchors {
                out.push(&mut a.source);
                out.extend(a.target.as_mut());
            }
        }
        out
    }

    /// Binds parameters as leaves; anchors become constants when `train_anchors` is false.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, train_anchors: bool) -> BoundModel<'t, T> {
        let anchor = |m: &Matrix<T>| {
            if train_anchors {
                tape.leaf(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let anchor_source = self.anchors.as_ref().map(|a| anchor(&a.source.value));
        let anchor_target = self.anchors.as_ref().map(|a| match &a.target {
            Some(t) => anchor(&t.value),
            None => anchor_source.expect("source anchors bound"),
        });
        BoundModel {
            encoder: self.encoder.bind(tape),
            head: self.head.bind(tape),
            attention: self
                .attention
                .iter()
                .map(|h| {
                    [
                        tape.leaf(h.query.value.clone()),
                        tape.leaf(h.key.value.clone()),
                        tape.leaf(h.value.value.clone()),
                    ]
                })
                .collect(),
            anchor_source,
            anchor_target,
        }
    }

    /// Adds the gradients recorded for `bound` into the parameters.
    pub fn accumulate(&mut self, grads: &Gradients<T>, bound: &BoundModel<'_, T>) {
        self.encoder.accumulate(grads, &bound.encoder);
        self.head.accumulate(grads, &bound.head);
        for (h, vars) in self.attention.iter_mut().zip(&bound.attention) {
            h.query.accumulate(grads, vars[0]);
            h.key.accumulate(grads, vars[1]);
            h.value.accumulate(grads, vars[2]);
        }
        if let Some(a) = &mut self.anchors {
            if let Some(v) = bound.anchor_source {
                a.source.accumulate(grads, v);
            }
            if let (Some(t), Some(v)) = (&mut a.target, bound.anchor_target) {
                t.accumulate(grads, v);
            }
        }
    }

    /// Inference forward pass over feature rows of one domain.
    pub fn forward(&self, features: &Matrix<T>, domain: Domain) -> Result<Forward<T>> {
        if features.cols() != self.feature_dim() {
            return Err(Error::DimMismatch(format!(
                "feature dim {} vs encoder input {}",
                features.cols(),
                self.feature_dim()
            )));
        }
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let out = bound.forward(tape.constant(features.clone()), domain)?;
        Ok(Forward {
            g: out.g.value(),
            r: out.r.map(|r| r.value()),
            logits: out.logits.value(),
        })
    }

    /// Digest of all parameter values.
    pub fn checksum(&self) -> String {
        crate::checkpoint::parameter_digest(&self.parameters())
    }
}

impl<'t, T: Scalar> BoundModel<'t, T> {
    fn own_anchors(&self, domain: Domain) -> Option<Var<'t, T>> {
        match domain {
            Domain::Source => self.anchor_source,
            Domain::Target => self.anchor_target,
        }
    }

    /// `g = V(x)`, `r = rel(g, own anchors)`, attention per domain rule, then the head.
    /// Attention runs whenever the model has heads and anchors.
    pub fn forward(&self, x: Var<'t, T>, domain: Domain) -> Result<PartOutput<'t, T>> {
        let g = self.encoder.forward(x)?;
        let own = self.own_anchors(domain);
        let r = own.map(|a| relative_var(g, a)).transpose()?;
        let f = match (own, self.anchor_source) {
            (Some(keys), Some(values)) if !self.attention.is_empty() => {
                cross_domain_attend_var(g, keys, values, &self.attention)?
            }
            _ => g,
        };
        let logits = self.head.forward(f)?;
        Ok(PartOutput { g, r, logits })
    }
}

/// `mean_h softmax((g·W_q)(K·W_k)ᵀ/√D)·(V·W_v) + g`.
pub fn cross_domain_attend_var<'t, T: Scalar>(
    g: Var<'t, T>,
    keys: Var<'t, T>,
    values: Var<'t, T>,
    heads: &[[Var<'t, T>; 3]],
) -> Result<Var<'t, T>> {
    let dim = g.shape().1;
    if keys.shape().1 != dim || values.shape().1 != dim || keys.shape().0 != values.shape().0 {
        return Err(Error::DimMismatch(format!(
            "attention query {:?}, keys {:?}, values {:?}",
            g.shape(),
            keys.shape(),
            values.shape()
        )));
    }
    let scale = T::one() / T::of(dim as f64).sqrt();
    let mut acc: Option<Var<'t, T>> = None;
    for [wq, wk, wv] in heads {
        let q = g.matmul(*wq)?;
        let k = keys.matmul(*wk)?;
        let v = values.matmul(*wv)?;
        let weights = q.matmul(k.transpose()?)?.scale(scale)?.softmax_rows(T::one())?;
        let out = weights.matmul(v)?;
        acc = Some(match acc {
            None => out,
            Some(a) => a.add(out)?,
        });
    }
    let attended = acc.ok_or_else(|| Error::InvalidConfig("attention needs at least one head".into()))?;
    attended.scale(T::one() / T::of(heads.len() as f64))?.add(g)
}

/// Value form of [`cross_domain_attend_var`] for one query vector.
pub fn cross_domain_attend<T: Scalar>(
    g: &[T],
    keys: &AnchorSet<T>,
    values: &AnchorSet<T>,
    heads: &[AttentionHead<T>],
) -> Result<Vec<T>> {
    if g.len() != keys.dim() {
        return Err(Error::DimMismatch(format!("query dim {} vs key dim {}", g.len(), keys.dim())));
    }
    let tape = Tape::new();
    let bound: Vec<[Var<'_, T>; 3]> = heads
        .iter()
        .map(|h| {
            [
                tape.constant(h.query.value.clone()),
                tape.constant(h.key.value.clone()),
                tape.constant(h.value.value.clone()),
            ]
        })
        .collect();
    let out = cross_domain_attend_var(
        tape.constant(Matrix::new(1, g.len(), g.to_vec())?),
        tape.constant(keys.matrix().clone()),
        tape.constant(values.matrix().clone()),
        &bound,
    )?;
    Ok(out.value().into_vec())
}
