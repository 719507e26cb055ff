//! Dense linear algebra, reverse-mode differentiation and optimization.

pub mod linalg;
mod matrix;
pub mod optim;
pub mod tape;

pub use linalg::{cholesky_logdet, JitterPolicy, LogDet};
pub use matrix::Matrix;
pub use optim::{AdamW, AdamWConfig, Parameter};
pub use tape::{l2_normalize_rows, log_softmax_rows, softmax_rows, Gradients, Tape, Var};
