//! Antipodal spherical-cap classification data and the MLP-vs-GBT sweep.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gbt::{self, GbtConfig, TrainError};
use crate::metrics::accuracy;
use crate::nn::{self, LabeledSplit, Mlp, MlpConfig, NnError, TrainConfig};

/// Proposals allowed per [`sample_cap`] call before giving up.
pub const MAX_PROPOSALS: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub beta: f64,
    pub n_samples: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub n_trials: usize,
    pub seed: u64,
    /// Draw `c0` uniformly on the sphere instead of using `e1`.
    pub rotate: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 100,
            beta: 1.85,
            n_samples: 10_000,
            train_frac: 0.6,
            val_frac: 0.2,
            n_trials: 5,
            seed: 0,
            rotate: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.dim < 1 {
            return bad("dim must be >= 1");
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad("beta must be positive and finite");
        }
        if self.n_samples < 10 || !self.n_samples.is_multiple_of(2) {
            return bad("n_samples must be even and >= 10");
        }
        let (t, v) = (self.train_frac, self.val_frac);
        if !(t > 0.0 && v > 0.0 && t + v < 1.0) {
            return bad("split fractions must be positive and leave room for a test split");
        }
        if self.n_trials < 1 {
            return bad("n_trials must be >= 1");
        }
        Ok(())
    }

    /// The sweep grid 1.85, 1.90, ..., 2.20.
    pub fn beta_grid() -> Vec<f64> {
        (0..8).map(|i| (185 + 5 * i) as f64 / 100.0).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(
        "cap sampling gave up after {proposals} proposals with {accepted} accepted \
         (estimated acceptance rate {rate:.3e})"
    )]
    AcceptanceTooLow {
        proposals: u64,
        accepted: usize,
        rate: f64,
    },
    #[error("gbt: {0}")]
    Gbt(#[from] TrainError),
    #[error("mlp: {0}")]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone)]
pub struct CapSample {
    pub points: Array2<f64>,
    pub proposals: u64,
}

impl CapSample {
    pub fn acceptance_rate(&self) -> f64 {
        self.points.nrows() as f64 / self.proposals as f64
    }
}

/// A uniform point on the unit sphere in `dim` dimensions.
pub fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let g = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = g.dot(&g).sqrt();
        if norm > 0.0 {
            return g / norm;
        }
    }
}

pub fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `count` points uniform on the sphere restricted to `||x - center|| <= beta`.
pub fn sample_cap<R: Rng>(
    center: ArrayView1<f64>,
    beta: f64,
    count: usize,
    rng: &mut R,
) -> Result<CapSample, SynthError> {
    if !(beta > 0.0) {
        return Err(SynthError::Config("beta must be positive".into()));
    }
    let dim = center.len();
    let whole_sphere = beta >= 2.0;
    let mut points = Array2::zeros((count, dim));
    let mut accepted = 0;
    let mut proposals = 0u64;
    while accepted < count {
        if proposals >= MAX_PROPOSALS {
            return Err(SynthError::AcceptanceTooLow {
                proposals,
                accepted,
                rate: accepted as f64 / proposals as f64,
            });
        }
        proposals += 1;
        let x = random_unit(dim, rng);
        if whole_sphere || distance(x.view(), center) <= beta {
            points.row_mut(accepted).assign(&x);
            accepted += 1;
        }
    }
    Ok(CapSample { points, proposals })
}

/// `(c0, c1)` with `c1 = -c0`.
pub fn centers<R: Rng>(dim: usize, rotate: bool, rng: &mut R) -> (Array1<f64>, Array1<f64>) {
    let c0 = if rotate {
        random_unit(dim, rng)
    } else {
        let mut e = Array1::zeros(dim);
        e[0] = 1.0;
        e
    };
    let c1 = -&c0;
    (c0, c1)
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: LabeledSplit<Array2<f64>>,
    pub val: LabeledSplit<Array2<f64>>,
    pub test: LabeledSplit<Array2<f64>>,
    pub c0: Array1<f64>,
}

fn split_sizes(n: usize, cfg: &SynthConfig) -> [usize; 3] {
    let train = (n as f64 * cfg.train_frac).floor() as usize;
    let val = (n as f64 * cfg.val_frac).floor() as usize;
    [train, val, n - train - val]
}

/// Balanced labelled points: each label's points are drawn from that label's
/// cap, so in overlapping regions the generating label is kept. Every split
/// is stratified by class.
pub fn make_dataset(cfg: &SynthConfig) -> Result<SynthData, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (c0, c1) = centers(cfg.dim, cfg.rotate, &mut rng);
    let per_class = cfg.n_samples / 2;
    let sizes = split_sizes(per_class, cfg);

    let mut parts: [Vec<(usize, u8)>; 3] = Default::default();
    let mut pools = Vec::with_capacity(2);
    for (label, c) in [(0u8, &c0), (1u8, &c1)] {
        let pts = sample_cap(c.view(), cfg.beta, per_class, &mut rng)?.points;
        let mut idx: Vec<usize> = (0..per_class).collect();
        idx.shuffle(&mut rng);
        let mut cursor = 0;
        for (s, &len) in sizes.iter().enumerate() {
            parts[s].extend(idx[cursor..cursor + len].iter().map(|&i| (i, label)));
            cursor += len;
        }
        pools.push(pts);
    }

    let mut build = |mut items: Vec<(usize, u8)>| {
        items.shuffle(&mut rng);
        let mut x = Array2::zeros((items.len(), cfg.dim));
        let y: Vec<u8> = items.iter().map(|&(_, l)| l).collect();
        for (r, &(i, l)) in items.iter().enumerate() {
            x.row_mut(r).assign(&pools[l as usize].row(i));
        }
        LabeledSplit { x, y }
    };
    let [a, b, c] = parts;
    Ok(SynthData {
        train: build(a),
        val: build(b),
        test: build(c),
        c0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mlp,
    Gbt,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mlp => "mlp",
            Method::Gbt => "gbt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub beta: f64,
    pub method: Method,
    pub trial: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaSummary {
    pub beta: f64,
    pub mlp_mean: f64,
    pub gbt_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthReport {
    pub trials: Vec<TrialResult>,
    pub summary: Vec<BetaSummary>,
}

impl SynthReport {
    /// `beta,method,trial,accuracy`; per-trial rows first, then one row per
    /// (beta, method) with `trial` set to `mean`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["beta", "method", "trial", "accuracy"])?;
        for t in &self.trials {
            out.write_record([
                format!("{:.2}", t.beta),
                t.method.as_str().to_string(),
                t.trial.to_string(),
                format!("{:.6}", t.accuracy),
            ])?;
        }
        for s in &self.summary {
            for (m, v) in [(Method::Mlp, s.mlp_mean), (Method::Gbt, s.gbt_mean)] {
                out.write_record([
                    format!("{:.2}", s.beta),
                    m.as_str().to_string(),
                    "mean".to_string(),
                    format!("{v:.6}"),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Options for the two arms of the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: SynthConfig,
    pub mlp_hidden: Vec<usize>,
    pub train: TrainConfig,
    pub gbt: GbtConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: SynthConfig::default(),
            mlp_hidden: vec![100],
            train: TrainConfig::default(),
            gbt: GbtConfig::default(),
        }
    }
}

fn trial_seed(master: u64, beta_index: usize, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((beta_index as u64) << 32) | trial as u64);
    rng.random()
}

/// Test accuracies of both methods on one generated dataset.
pub fn run_trial(data: &SynthData, cfg: &ExperimentConfig, seed: u64) -> Result<(f64, f64), SynthError> {
    let dim = data.train.x.ncols();
    let mut dims = vec![dim];
    dims.extend(&cfg.mlp_hidden);
    dims.push(2);
    let model = Mlp::new(&MlpConfig::new(dims, seed))?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (best, _) = nn::train(model, &data.train, &data.val, None, &train_cfg)?;
    let preds = nn::predict_classes(&nn::predict_logits(&best, &data.test.x)?);
    let mlp_acc = accuracy(&preds, &data.test.y).expect("equal lengths");

    let ens = gbt::train_gbt(data.train.x.view(), &data.train.y, &cfg.gbt)?;
    let p = gbt::predict_proba(&ens, data.test.x.view()).expect("same width");
    let gbt_preds: Vec<u8> = p.iter().map(|&v| u8::from(v > 0.5)).collect();
    let gbt_acc = accuracy(&gbt_preds, &data.test.y).expect("equal lengths");
    Ok((mlp_acc, gbt_acc))
}

/// Trains both methods on identical splits for every `(beta, trial)`.
/// Trials run in parallel, each with its own seed derived from the master.
pub fn run_synth_experiment(betas: &[f64], cfg: &ExperimentConfig) -> Result<SynthReport, SynthError> {
    let jobs: Vec<(usize, usize)> = (0..betas.len())
        .flat_map(|b| (0..cfg.data.n_trials).map(move |t| (b, t)))
        .collect();
    let results: Result<Vec<_>, SynthError> = jobs
        .par_iter()
        .map(|&(b, t)| {
            let seed = trial_seed(cfg.data.seed, b, t);
            let data_cfg = SynthConfig {
                beta: betas[b],
                seed,
                ..cfg.data.clone()
            };
            let data = make_dataset(&data_cfg)?;
            let (mlp, gbt) = run_trial(&data, cfg, seed)?;
            log::info!("beta {:.2} trial {t}: mlp {mlp:.4} gbt {gbt:.4}", betas[b]);
            Ok((b, t, mlp, gbt))
        })
        .collect();
    let results = results?;

    let mut trials = Vec::with_capacity(results.len() * 2);
    for method in [Method::Mlp, Method::Gbt] {
        for &(b, t, mlp, gbt) in &results {
            trials.push(TrialResult {
                beta: betas[b],
                method,
                trial: t,
                accuracy: if method == Method::Mlp { mlp } else { gbt },
            });
        }
    }
    trials.sort_by(|a, b| {
        a.beta
            .total_cmp(&b.beta)
            .then((a.method as u8).cmp(&(b.method as u8)))
            .then(a.trial.cmp(&b.trial))
    });
    let summary = betas
        .iter()
        .enumerate()
        .map(|(b, &beta)| {
            let rows: Vec<_> = results.iter().filter(|r| r.0 == b).collect();
            let n = rows.len() as f64;
            BetaSummary {
                beta,
                mlp_mean: rows.iter().map(|r| r.2).sum::<f64>() / n,
                gbt_mean: rows.iter().map(|r| r.3).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(SynthReport { trials, summary })
}

/// Raw points with their labels, for plotting low-dimensional datasets.
pub fn write_points_csv<W: Write>(w: W, split: &LabeledSplit<Array2<f64>>) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..split.x.ncols()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    out.write_record(&header)?;
    for (row, &y) in split.x.axis_iter(Axis(0)).zip(&split.y) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
