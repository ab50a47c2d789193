//! Decision-tree ensembles: the node/tree/ensemble model, structural
//! validation, and the two JSON encodings we read and write.
//!
//! The *booster dump* is the nested array-of-trees layout produced by the
//! common gradient-boosting libraries (`nodeid`, `split`, `split_condition`,
//! `yes`, `no`, `missing`, `children`, `leaf`). The *internal* format is a flat
//! per-tree node list:
//!
//! ```json
//! {"num_features": 3, "trees": [{"nodes": [
//!     {"id": 0, "feature": 2, "threshold": 0.75, "left": 1, "right": 2},
//!     {"id": 1, "leaf": -0.1},
//!     {"id": 2, "leaf": 0.1}]}]}
//! ```
//!
//! Thresholds are carried bit-exactly in both directions; rounding is the
//! concern of the threshold map, never of parsing.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tree {tree}: node object without an integer `nodeid`")]
    MissingId { tree: usize },
    #[error("tree {tree}, node {node}: {reason}")]
    Schema {
        tree: usize,
        node: u32,
        reason: String,
    },
    #[error("tree {tree}, node {node}: unknown feature name {name:?}")]
    FeatureName { tree: usize, node: u32, name: String },
    #[error("tree {tree}, node {node}: child {child} does not exist")]
    DanglingChild { tree: usize, node: u32, child: u32 },
    #[error("tree {tree}, node {node}: non-finite threshold {value}")]
    NonFiniteThreshold { tree: usize, node: u32, value: f64 },
    #[error("tree {tree}: duplicate node id {node}")]
    DuplicateId { tree: usize, node: u32 },
    #[error("tree {tree}: node {node} has more than one parent")]
    MultipleParents { tree: usize, node: u32 },
    #[error("tree {tree}: expected exactly one root, found {found}")]
    Root { tree: usize, found: usize },
    #[error("tree {tree}: node {node} is not reachable from the root")]
    Unreachable { tree: usize, node: u32 },
    #[error("tree {tree}: no nodes")]
    EmptyTree { tree: usize },
    #[error(
        "tree {tree}, node {node}: feature index {feature} out of range for {num_features} features"
    )]
    FeatureOutOfRange {
        tree: usize,
        node: u32,
        feature: usize,
        num_features: usize,
    },
    #[error("num_features must be at least 1")]
    NoFeatures,
}

/// A split test: rows with `x[feature] < threshold` go to `left`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Split(Split),
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: u32,
    /// Root is depth 0.
    pub depth: u32,
    pub kind: NodeKind,
}

impl Node {
    pub fn as_split(&self) -> Option<&Split> {
        match &self.kind {
            NodeKind::Split(s) => Some(s),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeStats {
    pub node_count: usize,
    pub split_count: usize,
    /// Deepest split node, or -1 for a leaf-only tree.
    pub max_split_depth: i32,
}

/// A validated binary decision tree. Nodes keep the order they were given in.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    root_id: u32,
    index: HashMap<u32, usize>,
}

impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        self.root_id == other.root_id && self.nodes == other.nodes
    }
}

impl Tree {
    /// Validates the node set and computes depths. `tree` is only used to
    /// label errors.
    pub fn from_kinds(
        tree: usize,
        nodes: Vec<(u32, NodeKind)>,
        root_id: u32,
    ) -> Result<Self, ModelError> {
        if nodes.is_empty() {
            return Err(ModelError::EmptyTree { tree });
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (pos, (id, _)) in nodes.iter().enumerate() {
            if index.insert(*id, pos).is_some() {
                return Err(ModelError::DuplicateId { tree, node: *id });
            }
        }
        if !index.contains_key(&root_id) {
            return Err(ModelError::Root { tree, found: 0 });
        }

        let mut parent_seen = HashSet::new();
        for (id, kind) in &nodes {
            if let NodeKind::Split(s) = kind {
                if !s.threshold.is_finite() {
                    return Err(ModelError::NonFiniteThreshold {
                        tree,
                        node: *id,
                        value: s.threshold,
                    });
                }
                if s.left == s.right {
                    return Err(ModelError::Schema {
                        tree,
                        node: *id,
                        reason: format!("both children are node {}", s.left),
                    });
                }
                for child in [s.left, s.right] {
                    if !index.contains_key(&child) {
                        return Err(ModelError::DanglingChild {
                            tree,
                            node: *id,
                            child,
                        });
                    }
                    if child == root_id || !parent_seen.insert(child) {
                        return Err(ModelError::MultipleParents { tree, node: child });
                    }
                }
            }
        }

        // Every non-root node has exactly one parent and the root has none, so
        // a BFS from the root visits a tree; anything left over hangs off a cycle.
        let mut depth = vec![u32::MAX; nodes.len()];
        let mut queue = VecDeque::from([(root_id, 0u32)]);
        while let Some((id, d)) = queue.pop_front() {
            let pos = index[&id];
            depth[pos] = d;
            if let NodeKind::Split(s) = &nodes[pos].1 {
                queue.push_back((s.left, d + 1));
                queue.push_back((s.right, d + 1));
            }
        }
        if let Some(pos) = depth.iter().position(|&d| d == u32::MAX) {
            return Err(ModelError::Unreachable {
                tree,
                node: nodes[pos].0,
            });
        }

        let nodes = nodes
            .into_iter()
            .zip(depth)
            .map(|((id, kind), depth)| Node { id, depth, kind })
            .collect();
        Ok(Tree {
            nodes,
            root_id,
            index,
        })
    }

    /// A tree consisting of one leaf.
    pub fn leaf(value: f64) -> Self {
        Self::from_kinds(0, vec![(0, NodeKind::Leaf { value })], 0).expect("single leaf is valid")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root_id(&self) -> u32 {
        self.root_id
    }

    pub fn root(&self) -> &Node {
        &self.nodes[self.index[&self.root_id]]
    }

    pub fn node(&self, id: u32) -> Option<&Node> {
        self.index.get(&id).map(|&pos| &self.nodes[pos])
    }

    pub fn splits(&self) -> impl Iterator<Item = (&Node, &Split)> {
        self.nodes
            .iter()
            .filter_map(|n| n.as_split().map(|s| (n, s)))
    }

    pub fn stats(&self) -> TreeStats {
        let mut split_count = 0;
        let mut max_split_depth = -1i32;
        for (node, _) in self.splits() {
            split_count += 1;
            max_split_depth = max_split_depth.max(node.depth as i32);
        }
        TreeStats {
            node_count: self.nodes.len(),
            split_count,
            max_split_depth,
        }
    }

    /// Leaf value reached by `row`; ties (`x == threshold`) route right.
    pub fn leaf_value(&self, row: &[f64]) -> f64 {
        let mut node = self.root();
        loop {
            match &node.kind {
                NodeKind::Leaf { value } => return *value,
                NodeKind::Split(s) => {
                    let next = if row[s.feature] < s.threshold {
                        s.left
                    } else {
                        s.right
                    };
                    node = &self.nodes[self.index[&next]];
                }
            }
        }
    }

    fn max_feature(&self) -> Option<usize> {
        self.splits().map(|(_, s)| s.feature).max()
    }
}

/// Tree statistics as a free function, mirroring [`Tree::stats`].
pub fn tree_stats(tree: &Tree) -> TreeStats {
    tree.stats()
}

/// An ordered forest over `num_features` input columns. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    trees: Vec<Tree>,
    num_features: usize,
}

impl Ensemble {
    pub fn new(trees: Vec<Tree>, num_features: usize) -> Result<Self, ModelError> {
        if num_features == 0 {
            return Err(ModelError::NoFeatures);
        }
        for (t, tree) in trees.iter().enumerate() {
            for (node, s) in tree.splits() {
                if s.feature >= num_features {
                    return Err(ModelError::FeatureOutOfRange {
                        tree: t,
                        node: node.id,
                        feature: s.feature,
                        num_features,
                    });
                }
            }
        }
        Ok(Ensemble {
            trees,
            num_features,
        })
    }

    /// Uses `1 + max feature index` (at least 1) unless `num_features` is given.
    pub fn with_inferred_features(
        trees: Vec<Tree>,
        num_features: Option<usize>,
    ) -> Result<Self, ModelError> {
        let inferred = trees
            .iter()
            .filter_map(Tree::max_feature)
            .max()
            .map_or(1, |f| f + 1);
        Self::new(trees, num_features.unwrap_or(inferred))
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// First `n` trees (all of them if `n >= len`).
    pub fn truncated(&self, n: usize) -> Ensemble {
        Ensemble {
            trees: self.trees[..n.min(self.trees.len())].to_vec(),
            num_features: self.num_features,
        }
    }

    /// Sum of leaf values over all trees.
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.leaf_value(row)).sum()
    }

    pub fn split_count(&self) -> usize {
        self.trees.iter().map(|t| t.stats().split_count).sum()
    }
}

// ---------------------------------------------------------------------------
// Booster dump

/// Parses a booster JSON dump. `num_features` overrides the inferred width.
pub fn parse_booster_dump(text: &str, num_features: Option<usize>) -> Result<Ensemble, ModelError> {
    let value: Value = serde_json::from_str(text)?;
    let Value::Array(items) = value else {
        return Err(ModelError::Schema {
            tree: 0,
            node: 0,
            reason: "booster dump must be a JSON array of trees".into(),
        });
    };
    let mut trees = Vec::with_capacity(items.len());
    for (t, item) in items.iter().enumerate() {
        let mut kinds = Vec::new();
        let root = collect_dump_node(t, item, None, &mut kinds)?;
        trees.push(Tree::from_kinds(t, kinds, root)?);
    }
    Ensemble::with_inferred_features(trees, num_features)
}

fn collect_dump_node(
    tree: usize,
    value: &Value,
    expected_depth: Option<u64>,
    out: &mut Vec<(u32, NodeKind)>,
) -> Result<u32, ModelError> {
    let obj = value.as_object().ok_or(ModelError::MissingId { tree })?;
    let id = obj
        .get("nodeid")
        .and_then(Value::as_u64)
        .and_then(|v| u32::try_from(v).ok())
        .ok_or(ModelError::MissingId { tree })?;
    let schema = |reason: String| ModelError::Schema {
        tree,
        node: id,
        reason,
    };
    let depth = expected_depth.unwrap_or(0);
    if let Some(d) = obj.get("depth").and_then(Value::as_u64) {
        if d != depth {
            return Err(schema(format!("declared depth {d}, actual depth {depth}")));
        }
    }

    if let Some(leaf) = obj.get("leaf") {
        let value = leaf
            .as_f64()
            .ok_or_else(|| schema("`leaf` is not a number".into()))?;
        out.push((id, NodeKind::Leaf { value }));
        return Ok(id);
    }

    let split = obj
        .get("split")
        .ok_or_else(|| schema("node has neither `leaf` nor `split`".into()))?;
    let feature = parse_feature_name(split).ok_or_else(|| ModelError::FeatureName {
        tree,
        node: id,
        name: split.to_string(),
    })?;
    let threshold = obj
        .get("split_condition")
        .and_then(Value::as_f64)
        .ok_or_else(|| schema("missing numeric `split_condition`".into()))?;
    let child_id = |key: &str| {
        obj.get(key)
            .and_then(Value::as_u64)
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| schema(format!("missing `{key}`")))
    };
    let left = child_id("yes")?;
    let right = child_id("no")?;
    // `missing` is accepted and ignored: inputs are imputed before they reach a model.
    out.push((
        id,
        NodeKind::Split(Split {
            feature,
            threshold,
            left,
            right,
        }),
    ));

    let mut seen = Vec::new();
    if let Some(children) = obj.get("children") {
        let children = children
            .as_array()
            .ok_or_else(|| schema("`children` is not an array".into()))?;
        for child in children {
            seen.push(collect_dump_node(tree, child, Some(depth + 1), out)?);
        }
    }
    for child in [left, right] {
        if !seen.contains(&child) {
            return Err(ModelError::DanglingChild {
                tree,
                node: id,
                child,
            });
        }
    }
    Ok(id)
}

/// Accepts `"f12"`, `"12"` or the bare number `12`.
fn parse_feature_name(value: &Value) -> Option<usize> {
    match value {
        Value::Number(n) => n.as_u64().map(|v| v as usize),
        Value::String(s) => {
            let digits = s.strip_prefix('f').unwrap_or(s);
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            digits.parse().ok()
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Internal format

#[derive(Serialize, Deserialize)]
struct InternalModel {
    num_features: usize,
    trees: Vec<InternalTree>,
}

#[derive(Serialize, Deserialize)]
struct InternalTree {
    nodes: Vec<InternalNode>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InternalNode {
    Split {
        id: u32,
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        id: u32,
        leaf: f64,
    },
}

pub fn parse_internal(text: &str) -> Result<Ensemble, ModelError> {
    let model: InternalModel = serde_json::from_str(text)?;
    let mut trees = Vec::with_capacity(model.trees.len());
    for (t, tree) in model.trees.into_iter().enumerate() {
        let kinds: Vec<(u32, NodeKind)> = tree
            .nodes
            .into_iter()
            .map(|n| match n {
                InternalNode::Split {
                    id,
                    feature,
                    threshold,
                    left,
                    right,
                } => (
                    id,
                    NodeKind::Split(Split {
                        feature,
                        threshold,
                        left,
                        right,
                    }),
                ),
                InternalNode::Leaf { id, leaf } => (id, NodeKind::Leaf { value: leaf }),
            })
            .collect();
        let root = find_root(t, &kinds)?;
        trees.push(Tree::from_kinds(t, kinds, root)?);
    }
    Ensemble::new(trees, model.num_features)
}

/// The root is the unique node no split refers to.
fn find_root(tree: usize, kinds: &[(u32, NodeKind)]) -> Result<u32, ModelError> {
    if kinds.is_empty() {
        return Err(ModelError::EmptyTree { tree });
    }
    let children: HashSet<u32> = kinds
        .iter()
        .filter_map(|(_, k)| match k {
            NodeKind::Split(s) => Some([s.left, s.right]),
            NodeKind::Leaf { .. } => None,
        })
        .flatten()
        .collect();
    let roots: Vec<u32> = kinds
        .iter()
        .map(|(id, _)| *id)
        .filter(|id| !children.contains(id))
        .collect();
    match roots.as_slice() {
        [root] => Ok(*root),
        _ => Err(ModelError::Root {
            tree,
            found: roots.len(),
        }),
    }
}

pub fn serialize_internal(ensemble: &Ensemble) -> String {
    let model = InternalModel {
        num_features: ensemble.num_features,
        trees: ensemble
            .trees
            .iter()
            .map(|tree| InternalTree {
                nodes: tree
                    .nodes
                    .iter()
                    .map(|n| match n.kind {
                        NodeKind::Split(s) => InternalNode::Split {
                            id: n.id,
                            feature: s.feature,
                            threshold: s.threshold,
                            left: s.left,
                            right: s.right,
                        },
                        NodeKind::Leaf { value } => InternalNode::Leaf {
                            id: n.id,
                            leaf: value,
                        },
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string(&model).expect("model serialization cannot fail")
}

/// Parses either format: a top-level array is a booster dump, an object is
/// the internal format.
pub fn parse_any(text: &str, num_features: Option<usize>) -> Result<Ensemble, ModelError> {
    if text.trim_start().starts_with('[') {
        parse_booster_dump(text, num_features)
    } else {
        let ens = parse_internal(text)?;
        match num_features {
            Some(m) if m != ens.num_features => Ensemble::new(ens.trees, m),
            _ => Ok(ens),
        }
    }
}
