//! Tree-to-tokens layout.
//!
//! Each tree is completed to a full binary tree of depth `D_t` (its deepest
//! split) and read in level order: position `p` (1-based) has children `2p`
//! and `2p + 1`. A position holding a split becomes a comparison slot; any
//! other position inside the completed tree (absent, or a leaf) is a pseudo
//! slot filled with `tau`. Tokens are then padded with `eta` to the longest
//! completed tree, `k`.

use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, NodeKind, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T2tConfig {
    /// Fill for non-splitting positions.
    pub tau: f64,
    /// Tail padding.
    pub eta: f64,
}

impl Default for T2tConfig {
    fn default() -> Self {
        T2tConfig {
            tau: 0.5,
            eta: -1.0,
        }
    }
}

impl T2tConfig {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let distinct = self.tau.is_finite()
            && self.eta.is_finite()
            && self.tau != 0.0
            && self.tau != 1.0
            && self.eta != 0.0
            && self.eta != 1.0
            && self.eta != self.tau;
        if distinct {
            Ok(())
        } else {
            Err(LayoutError::Config {
                tau: self.tau,
                eta: self.eta,
            })
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LayoutError {
    #[error("token layout needs at least one tree")]
    EmptyEnsemble,
    #[error("tau={tau} and eta={eta} must be finite and distinct from each other and from 0 and 1")]
    Config { tau: f64, eta: f64 },
    #[error("tree {tree} has split depth {depth}; completed layouts are limited to depth {max}")]
    TooDeep { tree: usize, depth: u32, max: u32 },
}

/// Deepest split depth we are willing to complete (2^23 - 1 slots per token).
pub const MAX_COMPLETION_DEPTH: u32 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SlotSpec {
    #[serde(rename = "cmp")]
    Compare { feature: usize, threshold: f64 },
    #[serde(rename = "psd")]
    Pseudo,
    #[serde(rename = "pad")]
    Pad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLayout {
    d: usize,
    k: usize,
    num_features: usize,
    trees: Vec<Vec<SlotSpec>>,
}

impl TokenLayout {
    /// Number of tokens (trees).
    pub fn d(&self) -> usize {
        self.d
    }

    /// Token length.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn slots(&self, tree: usize) -> &[SlotSpec] {
        &self.trees[tree]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[SlotSpec]> {
        self.trees.iter().map(Vec::as_slice)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("layout serialization cannot fail")
    }
}

pub fn token_dims(layout: &TokenLayout) -> (usize, usize) {
    (layout.d, layout.k)
}

/// Level-order slots of one tree's completion, without tail padding.
pub fn completed_slots(tree_index: usize, tree: &Tree) -> Result<Vec<SlotSpec>, LayoutError> {
    let depth = tree.stats().max_split_depth;
    if depth < 0 {
        return Ok(Vec::new());
    }
    let depth = depth as u32;
    if depth > MAX_COMPLETION_DEPTH {
        return Err(LayoutError::TooDeep {
            tree: tree_index,
            depth,
            max: MAX_COMPLETION_DEPTH,
        });
    }
    let len = (1usize << (depth + 1)) - 1;
    let mut slots = vec![SlotSpec::Pseudo; len];
    let mut stack = vec![(tree.root_id(), 1usize)];
    while let Some((id, pos)) = stack.pop() {
        let node = tree.node(id).expect("validated tree");
        if let NodeKind::Split(s) = node.kind {
            slots[pos - 1] = SlotSpec::Compare {
                feature: s.feature,
                threshold: s.threshold,
            };
            stack.push((s.left, 2 * pos));
            stack.push((s.right, 2 * pos + 1));
        }
    }
    Ok(slots)
}

pub fn build_token_layout(ens: &Ensemble, cfg: &T2tConfig) -> Result<TokenLayout, LayoutError> {
    cfg.validate()?;
    if ens.is_empty() {
        return Err(LayoutError::EmptyEnsemble);
    }
    let mut trees = ens
        .trees()
        .iter()
        .enumerate()
        .map(|(i, t)| completed_slots(i, t))
        .collect::<Result<Vec<_>, _>>()?;
    let k = trees.iter().map(Vec::len).max().unwrap_or(0);
    for slots in &mut trees {
        slots.resize(k, SlotSpec::Pad);
    }
    Ok(TokenLayout {
        d: trees.len(),
        k,
        num_features: ens.num_features(),
        trees,
    })
}
