//! Training objectives.
//!
//! Each loss has a plain-value form for inspection and tests and a
//! differentiable form that records onto a [`Tape`](crate::numeric::Tape).
//! The batched differentiable forms return sums over rows; callers divide
//! by the batch size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{cholesky_logdet, log_softmax_rows, JitterPolicy, Matrix, Var};
use crate::relative::RelativeEncoding;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Classification.
    pub lambda1: f64,
    /// Structure preservation.
    pub lambda2: f64,
    /// Gram-volume regularization.
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Reference, source and target anchor Gram matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct GramTriple<T> {
    pub gamma_ref: Matrix<T>,
    pub gamma_s: Matrix<T>,
    pub gamma_t: Matrix<T>,
}

impl<T: Scalar> GramTriple<T> {
    pub fn new(gamma_ref: Matrix<T>, gamma_s: Matrix<T>, gamma_t: Matrix<T>) -> Result<Self> {
        gamma_ref.same_shape(&gamma_s, "GramTriple")?;
        gamma_ref.same_shape(&gamma_t, "GramTriple")?;
        Ok(Self {
            gamma_ref,
            gamma_s,
            gamma_t,
        })
    }

    /// Grams `A Aᵀ` of three anchor matrices.
    pub fn from_anchors(reference: &Matrix<T>, source: &Matrix<T>, target: &Matrix<T>) -> Result<Self> {
        let g = |a: &Matrix<T>| a.matmul(&a.transpose());
        Self::new(g(reference)?, g(source)?, g(target)?)
    }
}

/// Mean absolute difference between two relative encodings.
pub fn structure_loss<T: Scalar>(pred: &RelativeEncoding<T>, target: &RelativeEncoding<T>) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Ok(T::zero());
    }
    let total: T = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&a, &b)| (a - b).abs())
        .sum();
    Ok(total / T::of(pred.len() as f64))
}

/// `Σ_rows mean_cols |pred − target|`; `target` should be a constant.
pub fn structure_loss_sum<'t, T: Scalar>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    let (_, cols) = pred.shape();
    pred.sub(target)?.abs()?.sum()?.scale(T::one() / T::of(cols as f64))
}

/// `−log softmax(logits)[label]` in log-sum-exp form.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<T> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let row = Matrix::new(1, logits.len(), logits.to_vec())?;
    Ok(-log_softmax_rows(&row).get(0, label))
}

/// Summed cross-entropy of each logit row against its label.
pub fn cross_entropy_sum<'t, T: Scalar>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    logits.log_softmax_rows()?.gather(labels)?.sum()?.scale(-T::one())
}

/// `|logdet γ_t − logdet γ| + |logdet γ_s − logdet γ|`.
pub fn volume_regularizer<T: Scalar>(g: &GramTriple<T>, policy: &JitterPolicy) -> Result<T> {
    let r = cholesky_logdet(&g.gamma_ref, policy)?.value;
    let s = cholesky_logdet(&g.gamma_s, policy)?.value;
    let t = cholesky_logdet(&g.gamma_t, policy)?.value;
    Ok((t - r).abs() + (s - r).abs())
}

/// Differentiable regularizer over learnable Grams; the reference log-det is a constant.
pub fn volume_regularizer_var<'t, T: Scalar>(
    gamma_s: Var<'t, T>,
    gamma_t: Var<'t, T>,
    logdet_ref: T,
    policy: &JitterPolicy,
) -> Result<Var<'t, T>> {
    let s = gamma_s.logdet(policy)?.offset(-logdet_ref)?.abs()?;
    let t = gamma_t.logdet(policy)?.offset(-logdet_ref)?.abs()?;
    t.add(s)
}

/// Stage-two objective for one sample:
/// `λ₁·CE(softmax(r/τ), y) + λ₂·L_S(r, r_anchor)`. There is no λ₃ term here.
pub fn supervisor_objective<T: Scalar>(
    r_pred: &RelativeEncoding<T>,
    label: usize,
    r_anchor: &RelativeEncoding<T>,
    temperature: T,
    w: &LossWeights,
) -> Result<T> {
    if !(temperature > T::zero()) {
        return Err(Error::NonPositiveTemperature(temperature.to_f64_lossy()));
    }
    let logits: Vec<T> = r_pred.values().iter().map(|&v| v / temperature).collect();
    let ce = cross_entropy(&logits, label)?;
    let ls = structure_loss(r_pred, r_anchor)?;
    Ok(T::of(w.lambda1) * ce + T::of(w.lambda2) * ls)
}

/// `λ₁·L_CE + λ₂·L_S + λ₃·L_Reg`.
pub fn classifier_objective<T: Scalar>(ce: T, ls: T, reg: T, w: &LossWeights) -> T {
    T::of(w.lambda1) * ce + T::of(w.lambda2) * ls + T::of(w.lambda3) * reg
}

/// Differentiable weighted sum of already-recorded components; absent terms are skipped.
pub fn weighted_total<'t, T: Scalar>(terms: &[(f64, Option<Var<'t, T>>)]) -> Result<Option<Var<'t, T>>> {
    let mut acc: Option<Var<'t, T>> = None;
    for &(w, term) in terms {
        let Some(v) = term else { continue };
        let scaled = v.scale(T::of(w))?;
        acc = Some(match acc {
            None => scaled,
            Some(a) => a.add(scaled)?,
        });
    }
    Ok(acc)
}
