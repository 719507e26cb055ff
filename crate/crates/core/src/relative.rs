//! Anchor sets and relative encodings.
//!
//! The relative encoding of a vector is its cosine similarity to every
//! anchor of a set, so it describes the vector by angles to a class
//! skeleton instead of by absolute coordinates.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{cholesky_logdet, softmax_rows, JitterPolicy, Matrix, Var};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;

/// Denominator floor for cosine similarity and minimum admissible vector norm.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorRole {
    Reference,
    Source,
    Target,
}

/// `N_c` anchor rows of a common dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet<T> {
    anchors: Matrix<T>,
    learnable: bool,
    role: AnchorRole,
}

impl<T: Scalar> AnchorSet<T> {
    /// Immutable language anchors, used exactly as given (no normalization).
    pub fn reference(anchors: Matrix<T>) -> Result<Self> {
        Self::build(anchors, false, AnchorRole::Reference)
    }

    pub fn learnable(anchors: Matrix<T>, role: AnchorRole) -> Result<Self> {
        Self::build(anchors, true, role)
    }

    fn build(anchors: Matrix<T>, learnable: bool, role: AnchorRole) -> Result<Self> {
        if anchors.rows() == 0 || anchors.cols() == 0 {
            return Err(Error::DimMismatch("anchor set must be non-empty".into()));
        }
        check_rows_nonzero(&anchors)?;
        Ok(Self {
            anchors,
            learnable,
            role,
        })
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.anchors
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.anchors
    }

    pub fn n_classes(&self) -> usize {
        self.anchors.rows()
    }

    pub fn dim(&self) -> usize {
        self.anchors.cols()
    }

    pub fn is_learnable(&self) -> bool {
        self.learnable
    }

    pub fn role(&self) -> AnchorRole {
        self.role
    }

    pub fn row(&self, class: usize) -> &[T] {
        self.anchors.row(class)
    }

    /// `A Aᵀ`.
    pub fn gram(&self) -> Matrix<T> {
        self.anchors
            .matmul(&self.anchors.transpose())
            .expect("anchor set is non-empty")
    }

    /// `log det(A Aᵀ)` under the given jitter policy.
    pub fn gram_logdet(&self, policy: &JitterPolicy) -> Result<T> {
        Ok(cholesky_logdet(&self.gram(), policy)?.value)
    }
}

/// Fails with [`Error::ZeroVector`] if any row has norm below [`COSINE_EPS`].
pub fn check_rows_nonzero<T: Scalar>(m: &Matrix<T>) -> Result<()> {
    let eps = T::of(COSINE_EPS);
    for r in m.iter_rows() {
        if r.iter().map(|&v| v * v).sum::<T>().sqrt() < eps {
            return Err(Error::ZeroVector);
        }
    }
    Ok(())
}

/// Cosine similarities of one vector to every anchor; each entry lies in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeEncoding<T> {
    values: Vec<T>,
}

impl<T: Scalar> RelativeEncoding<T> {
    /// Wraps raw cosines, clamping rounding overshoot into [-1, 1].
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RelativeEncoding"));
        }
        let one = T::one();
        Ok(Self {
            values: values.into_iter().map(|v| v.max(-one).min(one)).collect(),
        })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_row(&self) -> Matrix<T> {
        Matrix::from_raw(1, self.values.len(), self.values.clone())
    }
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// `rel(v, A)`: cosine of `v` with every anchor.
pub fn rel<T: Scalar>(v: &[T], anchors: &AnchorSet<T>) -> Result<RelativeEncoding<T>> {
    if v.len() != anchors.dim() {
        return Err(Error::DimMismatch(format!(
            "vector dim {} vs anchor dim {}",
            v.len(),
            anchors.dim()
        )));
    }
    let eps = T::of(COSINE_EPS);
    let vn = norm(v);
    if vn < eps {
        return Err(Error::ZeroVector);
    }
    let m = Matrix::from_raw(1, v.len(), v.to_vec());
    let r = relative_matrix(&m, anchors.matrix())?;
    RelativeEncoding::new(r.into_vec())
}

/// Row-wise relative encodings of `queries` against `anchors` (cosine matrix).
pub fn relative_matrix<T: Scalar>(queries: &Matrix<T>, anchors: &Matrix<T>) -> Result<Matrix<T>> {
    if queries.cols() != anchors.cols() {
        return Err(Error::DimMismatch(format!(
            "query dim {} vs anchor dim {}",
            queries.cols(),
            anchors.cols()
        )));
    }
    let eps = T::of(COSINE_EPS);
    let (q, _) = crate::numeric::l2_normalize_rows(queries, eps);
    let (a, _) = crate::numeric::l2_normalize_rows(anchors, eps);
    q.matmul(&a.transpose())
}

/// Differentiable relative encodings: `normalize(queries) · normalize(anchors)ᵀ`.
pub fn relative_var<'t, T: Scalar>(queries: Var<'t, T>, anchors: Var<'t, T>) -> Result<Var<'t, T>> {
    let eps = T::of(COSINE_EPS);
    let q = queries.l2_normalize_rows(eps)?;
    let a = anchors.l2_normalize_rows(eps)?;
    q.matmul(a.transpose()?)
}

/// `N_c x N_c` matrix whose row `i` is `rel(A[i], A)`; the diagonal is exactly 1.
pub fn reference_affinities<T: Scalar>(anchors: &AnchorSet<T>) -> Result<Matrix<T>> {
    let mut r = relative_matrix(anchors.matrix(), anchors.matrix())?;
    let one = T::one();
    for i in 0..r.rows() {
        for j in 0..r.cols() {
            let v = if i == j { one } else { r.get(i, j).max(-one).min(one) };
            r.set(i, j, v);
        }
    }
    Ok(r)
}

/// Seeded Gaussian anchors, rescaled so `log det(Gram)` equals the reference's.
///
/// For a global scale `c`, `log det(c² G) = log det(G) + 2·N_c·log c`, so
/// `c = exp((ld_ref − ld_raw) / (2·N_c))` matches the two volumes.
pub fn init_learnable_anchors<T: Scalar>(
    n_classes: usize,
    dim: usize,
    reference: &AnchorSet<T>,
    role: AnchorRole,
    seed: u64,
) -> Result<AnchorSet<T>> {
    if dim < n_classes {
        return Err(Error::DimTooSmall {
            dim,
            classes: n_classes,
        });
    }
    if reference.n_classes() != n_classes {
        return Err(Error::ClassCountMismatch(format!(
            "reference has {} anchors, requested {n_classes}",
            reference.n_classes()
        )));
    }
    let policy = JitterPolicy::escalating();
    let target = reference.gram_logdet(&policy)?;
    // both domains start from the same draw and diverge through training
    let mut rng = stream(seed, Stream::AnchorInit);
    let raw: Matrix<T> = Matrix::from_fn(n_classes, dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::of(z)
    });
    let raw_ld = AnchorSet::learnable(raw.clone(), role)?.gram_logdet(&policy)?;
    let c = ((target - raw_ld) / T::of(2.0 * n_classes as f64)).exp();
    AnchorSet::learnable(raw.scale(c), role)
}

/// Softmax of `r / temperature` and its argmax (lowest index wins ties).
pub fn classify_by_relative<T: Scalar>(
    r: &RelativeEncoding<T>,
    temperature: T,
) -> Result<(Vec<T>, usize)> {
    let p = softmax_rows(&r.to_row(), temperature)?.into_vec();
    Ok((p, argmax(r.values())))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
