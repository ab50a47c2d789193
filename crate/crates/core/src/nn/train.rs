use std::time::{Duration, Instant};

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, positive_probability, AdamConfig, AdamState, Network, NnError, Rows};
use crate::metrics::auc;

/// Rows used for evaluation are pushed through the model in chunks this big.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Epochs without a strict improvement in validation loss before stopping.
    pub patience: usize,
    pub timeout_secs: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 64,
            patience: 10,
            timeout_secs: 600.0,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: &str| Err(NnError::Config(msg.to_string()));
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.timeout_secs >= 0.0) {
            return bad("timeout must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LabeledSplit<I> {
    pub x: I,
    pub y: Vec<u8>,
}

impl<I: Rows> LabeledSplit<I> {
    pub fn new(x: I, y: Vec<u8>) -> Result<Self, NnError> {
        if x.n_rows() != y.len() {
            return Err(NnError::Shape(format!(
                "{} rows but {} labels",
                x.n_rows(),
                y.len()
            )));
        }
        Ok(LabeledSplit { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Tracks the best validation loss seen so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    /// Records the loss of `epoch`; returns true if it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// `None` when the validation split holds a single class.
    pub val_auc: Option<f64>,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    Timeout,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub test_loss: Option<f64>,
    pub test_auc: Option<f64>,
}

fn evaluate<M: Network>(model: &M, split: &LabeledSplit<M::Input>) -> Result<(f64, Option<f64>), NnError> {
    let logits = predict_logits(model, &split.x)?;
    let (loss, _) = super::softmax_cross_entropy(&logits, &split.y)?;
    let score = auc(&positive_probability(&logits), &split.y).ok();
    Ok((loss, score))
}

/// Mini-batch Adam on mean cross-entropy with early stopping on validation
/// loss. Returns the parameters from the best validation epoch.
pub fn train<M: Network>(
    mut model: M,
    train_split: &LabeledSplit<M::Input>,
    val: &LabeledSplit<M::Input>,
    test: Option<&LabeledSplit<M::Input>>,
    cfg: &TrainConfig,
) -> Result<(M, History), NnError> {
    cfg.validate()?;
    if train_split.is_empty() {
        return Err(NnError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(NnError::EmptySplit("validation"));
    }
    if test.is_some_and(|t| t.is_empty()) {
        return Err(NnError::EmptySplit("test"));
    }

    let start = Instant::now();
    let timeout = Duration::from_secs_f64(cfg.timeout_secs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new();
    let mut order: Vec<usize> = (0..train_split.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let xb = train_split.x.select_rows(idx);
            let yb: Vec<u8> = idx.iter().map(|&i| train_split.y[i]).collect();
            let (loss, grad) = model.loss_and_grad(&xb, &yb)?;
            loss_sum += loss * idx.len() as f64;
            adam_step(&mut model, &grad, &mut state, &cfg.adam);
        }
        let (val_loss, val_auc) = evaluate(&model, val)?;
        let elapsed = start.elapsed();
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_split.len() as f64,
            val_loss,
            val_auc,
            elapsed_secs: elapsed.as_secs_f64(),
        });
        log::debug!("epoch {epoch}: val loss {val_loss:.6}");
        if stopper.observe(epoch, val_loss) {
            best = model.clone();
        }
        if stopper.should_stop() {
            stop_reason = StopReason::Patience;
            break;
        }
        if elapsed >= timeout {
            stop_reason = StopReason::Timeout;
            break;
        }
    }

    let (test_loss, test_auc) = match test {
        Some(t) => {
            let (l, a) = evaluate(&best, t)?;
            (Some(l), a)
        }
        None => (None, None),
    };
    let history = History {
        epochs,
        // a non-finite first validation loss never counts as an improvement
        best_epoch: stopper.best_epoch().unwrap_or(0),
        stop_reason,
        test_loss,
        test_auc,
    };
    Ok((best, history))
}

/// Logits for every row, computed chunk by chunk.
pub fn predict_logits<M: Network>(model: &M, x: &M::Input) -> Result<Array2<f64>, NnError> {
    let n = x.n_rows();
    if n <= EVAL_CHUNK {
        return model.forward(x);
    }
    let mut parts = Vec::with_capacity(n.div_ceil(EVAL_CHUNK));
    for lo in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (lo..(lo + EVAL_CHUNK).min(n)).collect();
        parts.push(model.forward(&x.select_rows(&idx))?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("chunks share a width"))
}

/// Probability of class 1 for every row.
pub fn predict_proba<M: Network>(model: &M, x: &M::Input) -> Result<Vec<f64>, NnError> {
    Ok(positive_probability(&predict_logits(model, x)?))
}
