//! Small exact-greedy gradient-boosted tree trainer for binary logistic loss.
//!
//! Trees are grown level by level with Newton statistics (`g = p - y`,
//! `h = p(1 - p)`). Each feature is presorted once; a level is processed with
//! one pass over every feature's sorted order, so a tree costs
//! `O(max_depth * n * m)` after the initial sort.

use ndarray::ArrayView2;

use crate::ensemble::{Ensemble, NodeKind, Split, Tree};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("label at row {row} is {value}, expected 0 or 1")]
    NonBinaryLabel { row: usize, value: u8 },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("input has {got} columns, model expects {expected}")]
pub struct ColumnMismatch {
    pub expected: usize,
    pub got: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub min_child_weight: f64,
    /// Carried for reproducibility bookkeeping; the exact-greedy trainer draws
    /// no random numbers.
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_trees: 50,
            max_depth: 3,
            learning_rate: 0.3,
            lambda: 1.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if self.n_trees < 1 {
            return bad("n_trees must be >= 1");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if !(self.min_child_weight >= 0.0) {
            return bad("min_child_weight must be >= 0");
        }
        Ok(())
    }
}

/// A trained ensemble plus the mean training log-loss after each round.
#[derive(Debug, Clone)]
pub struct GbtFit {
    pub ensemble: Ensemble,
    pub train_loss: Vec<f64>,
}

pub fn train_gbt(x: ArrayView2<f64>, y: &[u8], cfg: &GbtConfig) -> Result<Ensemble, TrainError> {
    fit_gbt(x, y, cfg).map(|fit| fit.ensemble)
}

pub fn fit_gbt(x: ArrayView2<f64>, y: &[u8], cfg: &GbtConfig) -> Result<GbtFit, TrainError> {
    cfg.validate()?;
    let (n, m) = x.dim();
    if n < 2 {
        return Err(TrainError::TooFewRows(n));
    }
    if y.len() != n {
        return Err(TrainError::LabelCount {
            rows: n,
            labels: y.len(),
        });
    }
    if let Some((row, &value)) = y.iter().enumerate().find(|(_, &v)| v > 1) {
        return Err(TrainError::NonBinaryLabel { row, value });
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == n {
        return Err(TrainError::SingleClass);
    }
    if let Some(((row, col), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(TrainError::NonFinite { row, col });
    }

    let order = presort(x);
    let mut margin = vec![0.0f64; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut train_loss = Vec::with_capacity(cfg.n_trees);

    for t in 0..cfg.n_trees {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = p - f64::from(y[i]);
            hess[i] = p * (1.0 - p);
        }
        let (tree, row_values) = grow_tree(t, x, &order, &grad, &hess, cfg);
        for (mg, v) in margin.iter_mut().zip(&row_values) {
            *mg += v;
        }
        trees.push(tree);
        train_loss.push(mean_log_loss(&margin, y));
    }

    let ensemble = Ensemble::new(trees, m).expect("trainer only emits in-range features");
    Ok(GbtFit {
        ensemble,
        train_loss,
    })
}

/// Probability of class 1 for each row.
pub fn predict_proba(ens: &Ensemble, x: ArrayView2<f64>) -> Result<Vec<f64>, ColumnMismatch> {
    if x.ncols() != ens.num_features() {
        return Err(ColumnMismatch {
            expected: ens.num_features(),
            got: x.ncols(),
        });
    }
    Ok(x.rows()
        .into_iter()
        .map(|row| match row.as_slice() {
            Some(r) => sigmoid(ens.margin(r)),
            None => sigmoid(ens.margin(&row.to_vec())),
        })
        .collect())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary log-loss of raw margins.
pub fn mean_log_loss(margin: &[f64], y: &[u8]) -> f64 {
    // log(1 + e^z) - y z, evaluated stably.
    let total: f64 = margin
        .iter()
        .zip(y)
        .map(|(&z, &label)| {
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - f64::from(label) * z
        })
        .sum();
    total / margin.len() as f64
}

fn presort(x: ArrayView2<f64>) -> Vec<Vec<u32>> {
    let n = x.nrows();
    (0..x.ncols())
        .map(|f| {
            let col = x.column(f);
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            idx
        })
        .collect()
}

struct Building {
    depth: usize,
    grad: f64,
    hess: f64,
    split: Option<(Split, [usize; 2])>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Scan {
    grad: f64,
    hess: f64,
    last: Option<f64>,
    best: Option<Candidate>,
}

/// Marks a row whose node stopped splitting.
const FINAL: u32 = 1 << 31;

/// Grows one tree and returns it with each row's (scaled) leaf value.
fn grow_tree(
    tree_index: usize,
    x: ArrayView2<f64>,
    order: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    cfg: &GbtConfig,
) -> (Tree, Vec<f64>) {
    let n = x.nrows();
    let lambda = cfg.lambda;
    let mut nodes = vec![Building {
        depth: 0,
        grad: grad.iter().sum(),
        hess: hess.iter().sum(),
        split: None,
    }];
    let mut node_of = vec![0u32; n];
    let mut level: Vec<usize> = vec![0];

    for _depth in 0..cfg.max_depth {
        if level.is_empty() {
            break;
        }
        // slot -> position in this level's scan table
        let mut level_pos = vec![usize::MAX; nodes.len()];
        for (i, &slot) in level.iter().enumerate() {
            level_pos[slot] = i;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; level.len()];

        for (feature, sorted) in order.iter().enumerate() {
            let mut scans: Vec<Scan> = level
                .iter()
                .map(|_| Scan {
                    grad: 0.0,
                    hess: 0.0,
                    last: None,
                    best: None,
                })
                .collect();
            for &row in sorted {
                let slot = node_of[row as usize];
                if slot & FINAL != 0 {
                    continue;
                }
                let pos = level_pos[slot as usize];
                let v = x[[row as usize, feature]];
                let parent = &nodes[slot as usize];
                let scan = &mut scans[pos];
                if let Some(prev) = scan.last {
                    if v > prev {
                        let (gl, hl) = (scan.grad, scan.hess);
                        let (gr, hr) = (parent.grad - gl, parent.hess - hl);
                        if hl >= cfg.min_child_weight && hr >= cfg.min_child_weight {
                            let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda)
                                - parent.grad * parent.grad / (parent.hess + lambda);
                            if scan.best.is_none_or(|b| gain > b.gain) {
                                scan.best = Some(Candidate {
                                    gain,
                                    feature,
                                    threshold: midpoint(prev, v),
                                });
                            }
                        }
                    }
                }
                scan.grad += grad[row as usize];
                scan.hess += hess[row as usize];
                scan.last = Some(v);
            }
            // Features are visited in ascending order and thresholds ascending
            // within a feature, so strict `>` keeps the lowest (feature, threshold).
            for (b, scan) in best.iter_mut().zip(scans) {
                if let Some(c) = scan.best {
                    if b.is_none_or(|cur| c.gain > cur.gain) {
                        *b = Some(c);
                    }
                }
            }
        }

        let mut next_level = Vec::new();
        let mut split_of = vec![None; nodes.len()];
        for (pos, &slot) in level.iter().enumerate() {
            // Zero-gain splits are kept: a balanced XOR has no first-level gain.
            let Some(c) = best[pos].filter(|c| c.gain >= 0.0) else {
                continue;
            };
            let depth = nodes[slot].depth + 1;
            let left = nodes.len();
            let right = left + 1;
            for _ in 0..2 {
                nodes.push(Building {
                    depth,
                    grad: 0.0,
                    hess: 0.0,
                    split: None,
                });
            }
            nodes[slot].split = Some((
                Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: left as u32,
                    right: right as u32,
                },
                [left, right],
            ));
            split_of.resize(nodes.len(), None);
            split_of[slot] = Some((c.feature, c.threshold, left, right));
            next_level.push(left);
            next_level.push(right);
        }

        for row in 0..n {
            let slot = node_of[row];
            if slot & FINAL != 0 {
                continue;
            }
            match split_of[slot as usize] {
                Some((feature, threshold, left, right)) => {
                    let child = if x[[row, feature]] < threshold {
                        left
                    } else {
                        right
                    };
                    node_of[row] = child as u32;
                    nodes[child].grad += grad[row];
                    nodes[child].hess += hess[row];
                }
                None => node_of[row] = slot | FINAL,
            }
        }
        level = next_level;
    }

    let weight = |b: &Building| {
        let denom = b.hess + lambda;
        if denom > 0.0 {
            -b.grad / denom * cfg.learning_rate
        } else {
            0.0
        }
    };
    let row_values = node_of
        .iter()
        .map(|&slot| weight(&nodes[(slot & !FINAL) as usize]))
        .collect();

    let kinds = nodes
        .iter()
        .enumerate()
        .map(|(id, b)| {
            let kind = match b.split {
                Some((s, _)) => NodeKind::Split(s),
                None => NodeKind::Leaf { value: weight(b) },
            };
            (id as u32, kind)
        })
        .collect();
    let tree = Tree::from_kinds(tree_index, kinds, 0).expect("grown tree is well formed");
    (tree, row_values)
}

/// Midpoint of two adjacent distinct sorted values, nudged so `lo` routes left
/// and `hi` routes right under the `x < threshold` rule.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mut mid = 0.5 * (lo + hi);
    if !mid.is_finite() {
        mid = 0.5 * lo + 0.5 * hi;
    }
    if mid <= lo || mid > hi {
        hi
    } else {
        mid
    }
}
