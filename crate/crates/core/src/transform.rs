//! Row batch -> embedding batch transforms.
//!
//! All binarization uses one rule: a comparison emits 1 iff `x > threshold`,
//! so equality lands on the 0 side. The pairwise form walks the threshold map
//! entry by entry and is the reference; the projection form evaluates
//! `step(X U - V)` with `X U` taken as a column gather, since every column of
//! `U` has exactly one nonzero.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use crate::t2t::{SlotSpec, T2tConfig, TokenLayout};
use crate::t2v::{ProjectionPair, ThresholdMap};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TransformError {
    #[error("batch has {got} columns, transform expects {expected}")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("batch {batch}: {source}")]
pub struct StreamError {
    pub batch: usize,
    #[source]
    pub source: TransformError,
}

/// Dense `n x m` block of finite inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RowBatch {
    data: Array2<f64>,
}

impl RowBatch {
    pub fn new(data: Array2<f64>) -> Result<Self, TransformError> {
        if let Some(((row, col), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(TransformError::NonFinite { row, col });
        }
        Ok(RowBatch { data })
    }

    pub fn from_view(view: ArrayView2<f64>) -> Result<Self, TransformError> {
        Self::new(view.to_owned())
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMode {
    T2v,
    T2t,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingBatch {
    /// `n x k` bits.
    T2v(Array2<f64>),
    /// `n x d x k` tokens.
    T2t(Array3<f64>),
}

impl EmbeddingBatch {
    pub fn mode(&self) -> EmbedMode {
        match self {
            EmbeddingBatch::T2v(_) => EmbedMode::T2v,
            EmbeddingBatch::T2t(_) => EmbedMode::T2t,
        }
    }

    pub fn n_rows(&self) -> usize {
        match self {
            EmbeddingBatch::T2v(a) => a.nrows(),
            EmbeddingBatch::T2t(a) => a.dim().0,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            EmbeddingBatch::T2v(a) => a.shape().to_vec(),
            EmbeddingBatch::T2t(a) => a.shape().to_vec(),
        }
    }

    /// Row-major payload.
    pub fn as_slice(&self) -> &[f64] {
        match self {
            EmbeddingBatch::T2v(a) => a.as_slice().expect("standard layout"),
            EmbeddingBatch::T2t(a) => a.as_slice().expect("standard layout"),
        }
    }

    pub fn into_t2v(self) -> Option<Array2<f64>> {
        match self {
            EmbeddingBatch::T2v(a) => Some(a),
            EmbeddingBatch::T2t(_) => None,
        }
    }

    pub fn into_t2t(self) -> Option<Array3<f64>> {
        match self {
            EmbeddingBatch::T2t(a) => Some(a),
            EmbeddingBatch::T2v(_) => None,
        }
    }
}

#[inline]
pub fn binarize(x: f64, threshold: f64) -> f64 {
    if x > threshold {
        1.0
    } else {
        0.0
    }
}

fn check_width(batch: &RowBatch, expected: usize) -> Result<(), TransformError> {
    if batch.n_cols() == expected {
        Ok(())
    } else {
        Err(TransformError::ColumnMismatch {
            expected,
            got: batch.n_cols(),
        })
    }
}

/// Reference T2V: one comparison per (row, map entry).
pub fn transform_t2v_naive(
    batch: &RowBatch,
    map: &ThresholdMap,
) -> Result<EmbeddingBatch, TransformError> {
    check_width(batch, map.num_features())?;
    let entries = map.entries();
    let mut out = Array2::zeros((batch.n_rows(), entries.len()));
    for (i, row) in batch.data.rows().into_iter().enumerate() {
        for (j, &(feature, threshold)) in entries.iter().enumerate() {
            out[[i, j]] = binarize(row[feature], threshold);
        }
    }
    Ok(EmbeddingBatch::T2v(out))
}

/// `step(X U - V)` with the product evaluated as a gather of `X`'s columns.
pub fn transform_t2v_matrix(
    batch: &RowBatch,
    proj: &ProjectionPair,
) -> Result<EmbeddingBatch, TransformError> {
    check_width(batch, proj.num_features())?;
    let k = proj.embed_dim();
    let cols = proj.column_features();
    let v = proj.v().as_slice().expect("contiguous");
    let mut out = Array2::zeros((batch.n_rows(), k));
    for (x, mut o) in batch.data.rows().into_iter().zip(out.rows_mut()) {
        let o = o.as_slice_mut().expect("contiguous row");
        for j in 0..k {
            o[j] = if x[cols[j]] - v[j] > 0.0 { 1.0 } else { 0.0 };
        }
    }
    Ok(EmbeddingBatch::T2v(out))
}

/// `step(X U - V)` with a dense matrix product. Slower than the gather; kept
/// as a second route for cross-checking and benchmarking.
pub fn transform_t2v_dense(
    batch: &RowBatch,
    proj: &ProjectionPair,
) -> Result<EmbeddingBatch, TransformError> {
    check_width(batch, proj.num_features())?;
    let mut xu = batch.data.dot(proj.u());
    for mut row in xu.rows_mut() {
        for (o, &t) in row.iter_mut().zip(proj.v()) {
            *o = if *o - t > 0.0 { 1.0 } else { 0.0 };
        }
    }
    Ok(EmbeddingBatch::T2v(xu))
}

/// Precompiled T2T plan: one constant template per row plus the list of
/// comparison slots to overwrite.
#[derive(Debug, Clone, PartialEq)]
pub struct T2tTransform {
    d: usize,
    k: usize,
    num_features: usize,
    template: Vec<f64>,
    compares: Vec<(usize, usize, f64)>,
}

impl T2tTransform {
    pub fn new(layout: &TokenLayout, cfg: &T2tConfig) -> Self {
        let (d, k) = (layout.d(), layout.k());
        let mut template = Vec::with_capacity(d * k);
        let mut compares = Vec::new();
        for slots in layout.tokens() {
            for slot in slots {
                let flat = template.len();
                template.push(match *slot {
                    SlotSpec::Compare { feature, threshold } => {
                        compares.push((flat, feature, threshold));
                        0.0
                    }
                    SlotSpec::Pseudo => cfg.tau,
                    SlotSpec::Pad => cfg.eta,
                });
            }
        }
        T2tTransform {
            d,
            k,
            num_features: layout.num_features(),
            template,
            compares,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d, self.k)
    }
}

pub fn transform_t2t(
    batch: &RowBatch,
    layout: &TokenLayout,
    cfg: &T2tConfig,
) -> Result<EmbeddingBatch, TransformError> {
    T2tTransform::new(layout, cfg).apply(batch)
}

impl T2tTransform {
    pub fn apply(&self, batch: &RowBatch) -> Result<EmbeddingBatch, TransformError> {
        check_width(batch, self.num_features)?;
        let n = batch.n_rows();
        let width = self.d * self.k;
        let mut flat = Vec::with_capacity(n * width);
        for x in batch.data.rows() {
            let start = flat.len();
            flat.extend_from_slice(&self.template);
            let token = &mut flat[start..];
            for &(slot, feature, threshold) in &self.compares {
                token[slot] = binarize(x[feature], threshold);
            }
        }
        let out = Array3::from_shape_vec((n, self.d, self.k), flat).expect("shape matches");
        Ok(EmbeddingBatch::T2t(out))
    }
}

/// A fixed, read-only batch transform.
pub trait BatchTransform {
    fn input_width(&self) -> usize;
    /// Per-row output dims: `[k]` or `[d, k]`.
    fn row_shape(&self) -> Vec<usize>;
    fn transform(&self, batch: &RowBatch) -> Result<EmbeddingBatch, TransformError>;
}

impl BatchTransform for ThresholdMap {
    fn input_width(&self) -> usize {
        self.num_features()
    }

    fn row_shape(&self) -> Vec<usize> {
        vec![self.len()]
    }

    fn transform(&self, batch: &RowBatch) -> Result<EmbeddingBatch, TransformError> {
        transform_t2v_naive(batch, self)
    }
}

impl BatchTransform for ProjectionPair {
    fn input_width(&self) -> usize {
        self.num_features()
    }

    fn row_shape(&self) -> Vec<usize> {
        vec![self.embed_dim()]
    }

    fn transform(&self, batch: &RowBatch) -> Result<EmbeddingBatch, TransformError> {
        transform_t2v_matrix(batch, self)
    }
}

impl BatchTransform for T2tTransform {
    fn input_width(&self) -> usize {
        self.num_features
    }

    fn row_shape(&self) -> Vec<usize> {
        vec![self.d, self.k]
    }

    fn transform(&self, batch: &RowBatch) -> Result<EmbeddingBatch, TransformError> {
        self.apply(batch)
    }
}

/// Lazily transforms each incoming batch; holds at most one output batch.
pub struct StreamTransform<'a, I, T: ?Sized> {
    source: I,
    xf: &'a T,
    index: usize,
}

impl<I, T> Iterator for StreamTransform<'_, I, T>
where
    I: Iterator<Item = RowBatch>,
    T: BatchTransform + ?Sized,
{
    type Item = Result<EmbeddingBatch, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        let batch = self.source.next()?;
        let batch_index = self.index;
        self.index += 1;
        Some(self.xf.transform(&batch).map_err(|source| StreamError {
            batch: batch_index,
            source,
        }))
    }
}

pub fn stream_transform<I, T>(source: I, xf: &T) -> StreamTransform<'_, I::IntoIter, T>
where
    I: IntoIterator<Item = RowBatch>,
    T: BatchTransform + ?Sized,
{
    StreamTransform {
        source: source.into_iter(),
        xf,
        index: 0,
    }
}

/// Splits a materialized matrix into row batches of at most `batch_size` rows.
/// Values are assumed finite (checked when each batch is built).
pub fn row_chunks(
    x: ArrayView2<'_, f64>,
    batch_size: usize,
) -> impl Iterator<Item = Result<RowBatch, TransformError>> + '_ {
    assert!(batch_size > 0, "batch_size must be positive");
    let n = x.nrows();
    (0..n).step_by(batch_size).map(move |start| {
        let end = (start + batch_size).min(n);
        RowBatch::from_view(x.slice(s![start..end, ..])).map_err(|e| match e {
            TransformError::NonFinite { row, col } => TransformError::NonFinite {
                row: row + start,
                col,
            },
            other => other,
        })
    })
}

/// Stacks embedding batches of one mode along rows.
pub fn concat(batches: &[EmbeddingBatch]) -> Option<EmbeddingBatch> {
    let first = batches.first()?;
    match first {
        EmbeddingBatch::T2v(_) => {
            let views: Vec<_> = batches
                .iter()
                .map(|b| match b {
                    EmbeddingBatch::T2v(a) => a.view(),
                    EmbeddingBatch::T2t(_) => panic!("mixed embedding modes"),
                })
                .collect();
            ndarray::concatenate(Axis(0), &views)
                .ok()
                .map(EmbeddingBatch::T2v)
        }
        EmbeddingBatch::T2t(_) => {
            let views: Vec<_> = batches
                .iter()
                .map(|b| match b {
                    EmbeddingBatch::T2t(a) => a.view(),
                    EmbeddingBatch::T2v(_) => panic!("mixed embedding modes"),
                })
                .collect();
            ndarray::concatenate(Axis(0), &views)
                .ok()
                .map(EmbeddingBatch::T2t)
        }
    }
}
