#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod error;
pub mod io;
pub mod losses;
pub mod nn;
pub mod numeric;
pub mod relative;
pub mod rng;
pub mod scalar;
pub mod supervisor;

pub use error::{Error, Result};
pub use numeric::{Matrix, Tape, Var};
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Tape64 = Tape<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type AnchorSet64 = relative::AnchorSet<f64>;
