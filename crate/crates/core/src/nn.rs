//! Small trainable building blocks.

use rand::Rng;

use crate::numeric::{Gradients, Matrix, Parameter, Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Glorot-uniform matrix, rounded to binary32 so checkpoints hold the exact values.
pub fn xavier<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| {
        T::of(rng.random_range(-bound..bound) as f32 as f64)
    })
}

/// Rounds every entry to the nearest binary32 value.
pub fn round_to_f32<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    m.map(|v| T::of(v.to_f32_lossy() as f64))
}

/// Index batches over one shuffled pass of `0..n`; the last batch may be short.
pub fn shuffled_batches<R: Rng>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Optimizer steps in one epoch over `n` items.
pub fn batches_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch.max(1))
}

/// `tanh(x·W₁ + b₁)·W₂ + b₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayer<T> {
    pub w1: Parameter<T>,
    pub b1: Parameter<T>,
    pub w2: Parameter<T>,
    pub b2: Parameter<T>,
}

/// A [`TwoLayer`] whose parameters are leaves on one tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundTwoLayer<'t, T> {
    pub w1: Var<'t, T>,
    pub b1: Var<'t, T>,
    pub w2: Var<'t, T>,
    pub b2: Var<'t, T>,
}

impl<T: Scalar> TwoLayer<T> {
    pub fn init<R: Rng>(prefix: &str, input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w1: Parameter::new(format!("{prefix}.w1"), xavier(input, hidden, rng)),
            b1: Parameter::new(format!("{prefix}.b1"), Matrix::zeros(1, hidden)),
            w2: Parameter::new(format!("{prefix}.w2"), xavier(hidden, output, rng)),
            b2: Parameter::new(format!("{prefix}.b2"), Matrix::zeros(1, output)),
        }
    }

    pub fn from_parts(prefix: &str, w1: Matrix<T>, b1: Matrix<T>, w2: Matrix<T>, b2: Matrix<T>) -> Self {
        Self {
            w1: Parameter::new(format!("{prefix}.w1"), w1),
            b1: Parameter::new(format!("{prefix}.b1"), b1),
            w2: Parameter::new(format!("{prefix}.w2"), w2),
            b2: Parameter::new(format!("{prefix}.b2"), b2),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.value.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.value.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.value.cols()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let tape = Tape::new();
        let out = self.bind_constant(&tape).forward(tape.constant(x.clone()))?;
        Ok(out.value())
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundTwoLayer<'t, T> {
        BoundTwoLayer {
            w1: tape.leaf(self.w1.value.clone()),
            b1: tape.leaf(self.b1.value.clone()),
            w2: tape.leaf(self.w2.value.clone()),
            b2: tape.leaf(self.b2.value.clone()),
        }
    }

    fn bind_constant<'t>(&self, tape: &'t Tape<T>) -> BoundTwoLayer<'t, T> {
        BoundTwoLayer {
            w1: tape.constant(self.w1.value.clone()),
            b1: tape.constant(self.b1.value.clone()),
            w2: tape.constant(self.w2.value.clone()),
            b2: tape.constant(self.b2.value.clone()),
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients<T>, bound: &BoundTwoLayer<'_, T>) {
        self.w1.accumulate(grads, bound.w1);
        self.b1.accumulate(grads, bound.b1);
        self.w2.accumulate(grads, bound.w2);
        self.b2.accumulate(grads, bound.b2);
    }

    pub fn params(&self) -> [&Parameter<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl<'t, T: Scalar> BoundTwoLayer<'t, T> {
    pub fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(self.w1)?
            .add_row(self.b1)?
            .tanh()?
            .matmul(self.w2)?
            .add_row(self.b2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn forward_matches_manual_chain() {
        let mut rng = stream(3, Stream::SupervisorInit);
        let net = TwoLayer::<f64>::init("n", 3, 4, 2, &mut rng);
        let x = Matrix::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
        let h = x.matmul(&net.w1.value).unwrap().add(&net.b1.value).unwrap().map(f64::tanh);
        let want = h.matmul(&net.w2.value).unwrap().add(&net.b2.value).unwrap();
        assert_eq!(net.forward(&x).unwrap(), want);
        assert_eq!(round_to_f32(&net.w1.value), net.w1.value);
    }
}
