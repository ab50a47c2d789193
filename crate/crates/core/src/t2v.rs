//! Flat tree-to-vector embedding: the deduplicated set of
//! `(feature, rounded threshold)` comparisons an ensemble makes, and the
//! indicator/threshold pair that turns binarization of a batch into one
//! gather-subtract-step.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T2vConfig {
    /// Decimal digits kept when rounding thresholds.
    pub epsilon: u32,
}

impl Default for T2vConfig {
    fn default() -> Self {
        T2vConfig { epsilon: 4 }
    }
}

/// Rounds half away from zero to `digits` decimals. Values too large to scale
/// are returned unchanged; `-0.0` is normalized to `0.0` so it cannot form a
/// separate entry.
pub fn round_threshold(value: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    let scaled = value * scale;
    let rounded = if scaled.is_finite() {
        scaled.round() / scale
    } else {
        value
    };
    if rounded == 0.0 {
        0.0
    } else {
        rounded
    }
}

/// Sorted, duplicate-free `(feature, threshold)` entries over `m` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMap {
    #[serde(rename = "m")]
    num_features: usize,
    entries: Vec<(usize, f64)>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MapError {
    #[error("entry {index}: feature {feature} out of range for {num_features} features")]
    FeatureOutOfRange {
        index: usize,
        feature: usize,
        num_features: usize,
    },
    #[error("entry {0}: non-finite threshold")]
    NonFinite(usize),
    #[error("entry {0}: entries must be strictly increasing by (feature, threshold)")]
    Order(usize),
    #[error("malformed map JSON: {0}")]
    Json(String),
}

impl ThresholdMap {
    /// Checks the canonical-order, range and uniqueness invariants.
    pub fn from_entries(num_features: usize, entries: Vec<(usize, f64)>) -> Result<Self, MapError> {
        for (index, &(feature, threshold)) in entries.iter().enumerate() {
            if feature >= num_features {
                return Err(MapError::FeatureOutOfRange {
                    index,
                    feature,
                    num_features,
                });
            }
            if !threshold.is_finite() {
                return Err(MapError::NonFinite(index));
            }
            if index > 0 {
                let (pf, pt) = entries[index - 1];
                if !(pf < feature || (pf == feature && pt < threshold)) {
                    return Err(MapError::Order(index));
                }
            }
        }
        Ok(ThresholdMap {
            num_features,
            entries,
        })
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    /// Embedding width `k`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("map serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let raw: ThresholdMap =
            serde_json::from_str(text).map_err(|e| MapError::Json(e.to_string()))?;
        Self::from_entries(raw.num_features, raw.entries)
    }
}

/// Embedding width of a map.
pub fn embed_dim(map: &ThresholdMap) -> usize {
    map.len()
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    feature: usize,
    // Order-preserving integer image of a finite f64.
    bits: i64,
}

impl Key {
    fn new(feature: usize, threshold: f64) -> Self {
        let raw = threshold.to_bits() as i64;
        let bits = raw ^ (((raw >> 63) as u64) >> 1) as i64;
        Key { feature, bits }
    }
}

/// Collects every split of every tree, rounds its threshold, and keeps the
/// distinct `(feature, threshold)` pairs in ascending order.
pub fn build_threshold_map(ens: &Ensemble, cfg: &T2vConfig) -> ThresholdMap {
    let mut seen: BTreeSet<(Key, u64)> = BTreeSet::new();
    for tree in ens.trees() {
        for (_, split) in tree.splits() {
            let t = round_threshold(split.threshold, cfg.epsilon);
            seen.insert((Key::new(split.feature, t), t.to_bits()));
        }
    }
    let entries = seen
        .into_iter()
        .map(|(key, bits)| (key.feature, f64::from_bits(bits)))
        .collect();
    ThresholdMap {
        num_features: ens.num_features(),
        entries,
    }
}

/// `U` (m x k one-hot columns) and `V` (k thresholds). Column `j` of both
/// refers to `entries[j]` of the source map.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    u: Array2<f64>,
    v: Array1<f64>,
    /// Row index of the single 1 in each column of `u`.
    column_feature: Vec<usize>,
}

impl ProjectionPair {
    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn v(&self) -> &Array1<f64> {
        &self.v
    }

    pub fn column_features(&self) -> &[usize] {
        &self.column_feature
    }

    pub fn num_features(&self) -> usize {
        self.u.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.v.len()
    }
}

pub fn build_projection(map: &ThresholdMap) -> ProjectionPair {
    let k = map.len();
    let mut u = Array2::zeros((map.num_features, k));
    let mut v = Array1::zeros(k);
    for (j, &(feature, threshold)) in map.entries.iter().enumerate() {
        u[[feature, j]] = 1.0;
        v[j] = threshold;
    }
    let column_feature = u
        .columns()
        .into_iter()
        .map(|col| col.iter().position(|&x| x == 1.0).expect("one-hot column"))
        .collect();
    ProjectionPair {
        u,
        v,
        column_feature,
    }
}
