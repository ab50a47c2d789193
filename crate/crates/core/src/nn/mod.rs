//! Small neural backbones with hand-written backpropagation.
//!
//! Everything here runs in f64 on the CPU. A network exposes its parameters
//! through [`Params`] as named flat slices (visited in a fixed order), which
//! is all the optimizer and the checkpoint code need. Gradients are returned
//! as a value of the network's own type.

mod adam;
pub mod checkpoint;
mod mha;
mod mlp;
mod train;

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::Uniform;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mha::{Mha, MhaConfig};
pub use mlp::{Mlp, MlpConfig};
pub use train::{
    predict_logits, predict_proba, train, EarlyStopping, EpochRecord, History, LabeledSplit,
    StopReason, TrainConfig,
};

use crate::transform::{BatchTransform, EmbeddingBatch, RowBatch, T2tTransform, TransformError};
use crate::t2v::ProjectionPair;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Named parameter tensors, visited in a fixed order.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    /// Copies every parameter into one flat vector.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }
}

/// Inputs that can be sliced along their leading (row) axis.
pub trait Rows: Clone {
    fn n_rows(&self) -> usize;
    fn select_rows(&self, idx: &[usize]) -> Self;
}

impl Rows for Array2<f64> {
    fn n_rows(&self) -> usize {
        self.nrows()
    }

    fn select_rows(&self, idx: &[usize]) -> Self {
        self.select(Axis(0), idx)
    }
}

impl Rows for Array3<f64> {
    fn n_rows(&self) -> usize {
        self.dim().0
    }

    fn select_rows(&self, idx: &[usize]) -> Self {
        self.select(Axis(0), idx)
    }
}

/// A two-class classifier trained with mean softmax cross-entropy.
pub trait Network: Params + Clone {
    type Input: Rows;

    /// `n x 2` logits.
    fn forward(&self, x: &Self::Input) -> Result<Array2<f64>, NnError>;

    /// Mean loss over the batch and its gradient for every parameter.
    fn loss_and_grad(&self, x: &Self::Input, y: &[u8]) -> Result<(f64, Self), NnError>;

    fn loss(&self, x: &Self::Input, y: &[u8]) -> Result<f64, NnError> {
        Ok(softmax_cross_entropy(&self.forward(x)?, y)?.0)
    }
}

/// Mean cross-entropy over rows and the gradient with respect to the logits.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    y: &[u8],
) -> Result<(f64, Array2<f64>), NnError> {
    let (n, c) = logits.dim();
    if n != y.len() {
        return Err(NnError::Shape(format!("{n} rows but {} labels", y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&l| l as usize >= c) {
        return Err(NnError::Shape(format!("label {bad} with {c} classes")));
    }
    let mut grad = Array2::zeros((n, c));
    let mut total = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y[i] as usize];
        for j in 0..c {
            let p = (row[j] - lse).exp();
            grad[[i, j]] = (p - if j == y[i] as usize { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Probability of class 1 from two-class logits.
pub fn positive_probability(logits: &Array2<f64>) -> Vec<f64> {
    logits
        .rows()
        .into_iter()
        .map(|r| crate::gbt::sigmoid(r[1] - r[0]))
        .collect()
}

/// Class predictions (argmax; ties go to class 0).
pub fn predict_classes(logits: &Array2<f64>) -> Vec<u8> {
    logits
        .rows()
        .into_iter()
        .map(|r| u8::from(r[1] > r[0]))
        .collect()
}

/// Affine map `x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    /// Weights and biases uniform in `+-1/sqrt(fan_in)`.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Dense {
            w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.sample(dist)),
            b: Array1::from_shape_fn(fan_out, |_| rng.sample(dist)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Dense {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `d x`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &x.t().dot(&dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(
            &format!("{prefix}.weight"),
            self.w.shape(),
            self.w.as_slice().expect("standard layout"),
        );
        f(
            &format!("{prefix}.bias"),
            self.b.shape(),
            self.b.as_slice().expect("standard layout"),
        );
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(
            &format!("{prefix}.weight"),
            self.w.as_slice_mut().expect("standard layout"),
        );
        f(
            &format!("{prefix}.bias"),
            self.b.as_slice_mut().expect("standard layout"),
        );
    }
}

pub(crate) fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes `grad` where the pre-activation was not positive.
pub(crate) fn relu_backward(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    ndarray::Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

pub(crate) fn check_finite(x: &Array2<f64>, layer: usize) -> Result<(), NnError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite { layer })
    }
}

/// Maps raw rows to a network's input. Implemented by the fixed tree embedders.
pub trait Embed<Out>: Send + Sync {
    fn embed(&self, x: &Array2<f64>) -> Result<Out, NnError>;
}

impl Embed<Array2<f64>> for ProjectionPair {
    fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        let batch = RowBatch::new(x.clone())?;
        match self.transform(&batch)? {
            EmbeddingBatch::T2v(a) => Ok(a),
            EmbeddingBatch::T2t(_) => unreachable!("projection yields flat vectors"),
        }
    }
}

impl Embed<Array3<f64>> for T2tTransform {
    fn embed(&self, x: &Array2<f64>) -> Result<Array3<f64>, NnError> {
        let batch = RowBatch::new(x.clone())?;
        match self.apply(&batch)? {
            EmbeddingBatch::T2t(a) => Ok(a),
            EmbeddingBatch::T2v(_) => unreachable!("token transform yields tokens"),
        }
    }
}

/// A network fed through a fixed embedder on every batch, so the embedded
/// dataset is never materialized. Only the network's parameters train.
pub struct Embedded<E, M> {
    pub embedder: Arc<E>,
    pub net: M,
}

impl<E, M: Clone> Clone for Embedded<E, M> {
    fn clone(&self) -> Self {
        Embedded {
            embedder: Arc::clone(&self.embedder),
            net: self.net.clone(),
        }
    }
}

impl<E, M: Params> Params for Embedded<E, M> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.net.visit(f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.net.visit_mut(f)
    }
}

impl<E, M> Network for Embedded<E, M>
where
    E: Embed<M::Input>,
    M: Network,
{
    type Input = Array2<f64>;

    fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        self.net.forward(&self.embedder.embed(x)?)
    }

    fn loss_and_grad(&self, x: &Array2<f64>, y: &[u8]) -> Result<(f64, Self), NnError> {
        let (loss, net) = self.net.loss_and_grad(&self.embedder.embed(x)?, y)?;
        Ok((
            loss,
            Embedded {
                embedder: Arc::clone(&self.embedder),
                net,
            },
        ))
    }
}
