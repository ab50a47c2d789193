//! Tree-regularized embeddings for tabular data.
//!
//! A gradient-boosted tree ensemble is turned into a fixed binary featurizer:
//!
//! * **T2V** flattens every distinct `(feature, threshold)` split of the
//!   ensemble into one 0/1 vector per row ([`t2v`], [`transform`]).
//! * **T2T** emits one token per tree, laid out over the tree's completed
//!   level-order positions ([`t2t`], [`transform`]).
//!
//! The embeddings feed the small networks in [`nn`]. The crate also carries a
//! Newton GBT trainer ([`gbt`]), model-dump parsing ([`ensemble`]), CSV
//! ingestion, the `TRTE` tensor format, metrics, the spherical-cap synthetic
//! benchmark and a latency harness.

pub mod ensemble;
pub mod gbt;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod t2t;
pub mod t2v;
pub mod tensor;
pub mod timing;
pub mod transform;

pub use ensemble::{Ensemble, ModelError, Node, NodeKind, Split, Tree, TreeStats};
pub use gbt::{GbtConfig, TrainError};
pub use ingest::{Dataset, DatasetFile, Encoders, IngestError, LabelColumn};
pub use metrics::{accuracy, auc, MetricError};
pub use t2t::{SlotSpec, T2tConfig, TokenLayout};
pub use t2v::{ProjectionPair, T2vConfig, ThresholdMap};
pub use tensor::{DType, Tensor, TensorError};
pub use transform::{BatchTransform, EmbedMode, EmbeddingBatch, RowBatch, T2tTransform, TransformError};
