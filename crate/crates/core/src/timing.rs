//! Forward-pass latency of a T2V-fed MLP against a plain MLP.

use std::io::Write;
use std::time::Instant;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::gbt::{train_gbt, GbtConfig};
use crate::nn::{Mlp, MlpConfig, Network};
use crate::synth::{make_dataset, SynthConfig, SynthError};
use crate::t2v::{build_projection, build_threshold_map, T2vConfig};
use crate::transform::{transform_t2v_matrix, RowBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub tree_counts: Vec<usize>,
    /// Timed repetitions per cell; each repetition averages `inner` calls.
    pub reps: usize,
    pub inner: usize,
    pub warmup: usize,
    pub hidden: Vec<usize>,
    pub data: SynthConfig,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch_sizes: vec![64, 128, 256, 512],
            tree_counts: vec![10, 25, 50, 100],
            reps: 10,
            inner: 5,
            warmup: 3,
            hidden: vec![256, 128],
            data: SynthConfig {
                beta: 1.9,
                n_samples: 4000,
                ..SynthConfig::default()
            },
            max_depth: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    VanillaMlp,
    T2vMlp,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::VanillaMlp => "vanilla_mlp",
            BenchMode::T2vMlp => "t2v_mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch_size: usize,
    pub n_trees: usize,
    pub mode: BenchMode,
    /// Embedding width fed to the MLP.
    pub input_dim: usize,
    pub mean_secs: f64,
    pub std_secs: f64,
    pub median_of_means_secs: f64,
    pub n_reps: usize,
    /// This row's mean over the vanilla mean of the same cell.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `ys` on `xs`. A perfect fit of constant `ys`
/// reports `r2 = 1`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    LinearFit {
        slope,
        intercept,
        r2,
    }
}

struct Stats {
    mean: f64,
    std: f64,
    median: f64,
}

fn stats(samples: &[f64]) -> Stats {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    Stats {
        mean,
        std: var.sqrt(),
        median,
    }
}

/// Per-repetition mean seconds of `f`, after `warmup` untimed calls.
fn time_reps<F: FnMut()>(mut f: F, warmup: usize, reps: usize, inner: usize) -> Vec<f64> {
    for _ in 0..warmup {
        f();
    }
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..inner {
                f();
            }
            start.elapsed().as_secs_f64() / inner as f64
        })
        .collect()
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, SynthError> {
    if cfg.reps < 10 || cfg.inner == 0 {
        return Err(SynthError::Config("need reps >= 10 and inner >= 1".into()));
    }
    let max_batch = *cfg.batch_sizes.iter().max().unwrap_or(&1);
    let max_trees = *cfg.tree_counts.iter().max().unwrap_or(&1);
    let data = make_dataset(&SynthConfig {
        seed: cfg.seed,
        ..cfg.data.clone()
    })?;
    let pool = if data.test.len() >= max_batch {
        data.test.x.clone()
    } else {
        data.train.x.clone()
    };
    if pool.nrows() < max_batch {
        return Err(SynthError::Config(format!(
            "need at least {max_batch} rows for the largest batch"
        )));
    }
    let ens = train_gbt(
        data.train.x.view(),
        &data.train.y,
        &GbtConfig {
            n_trees: max_trees,
            max_depth: cfg.max_depth,
            seed: cfg.seed,
            ..GbtConfig::default()
        },
    )?;

    let dims = |input: usize| {
        let mut d = vec![input];
        d.extend(&cfg.hidden);
        d.push(2);
        d
    };
    let vanilla = Mlp::new(&MlpConfig::new(dims(pool.ncols()), cfg.seed))?;

    let mut rows = Vec::new();
    for &n_trees in &cfg.tree_counts {
        let sub = ens.truncated(n_trees);
        let proj = build_projection(&build_threshold_map(&sub, &T2vConfig::default()));
        let t2v = Mlp::new(&MlpConfig::new(dims(proj.embed_dim()), cfg.seed))?;
        for &bs in &cfg.batch_sizes {
            let batch: Array2<f64> = pool.slice(s![..bs, ..]).to_owned();
            let rows_in = RowBatch::new(batch.clone()).expect("finite synthetic rows");
            let v = stats(&time_reps(
                || {
                    std::hint::black_box(vanilla.forward(&batch).unwrap());
                },
                cfg.warmup,
                cfg.reps,
                cfg.inner,
            ));
            let t = stats(&time_reps(
                || {
                    let e = transform_t2v_matrix(&rows_in, &proj).unwrap().into_t2v().unwrap();
                    std::hint::black_box(t2v.forward(&e).unwrap());
                },
                cfg.warmup,
                cfg.reps,
                cfg.inner,
            ));
            for (mode, st, width) in [
                (BenchMode::VanillaMlp, &v, pool.ncols()),
                (BenchMode::T2vMlp, &t, proj.embed_dim()),
            ] {
                rows.push(BenchRow {
                    batch_size: bs,
                    n_trees,
                    mode,
                    input_dim: width,
                    mean_secs: st.mean,
                    std_secs: st.std,
                    median_of_means_secs: st.median,
                    n_reps: cfg.reps,
                    ratio: st.mean / v.mean,
                });
            }
            log::info!(
                "batch {bs} trees {n_trees}: vanilla {:.1}us t2v {:.1}us",
                v.mean * 1e6,
                t.mean * 1e6
            );
        }
    }
    Ok(BenchReport { rows })
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "batch_size",
            "n_trees",
            "mode",
            "input_dim",
            "mean_secs",
            "std_secs",
            "median_of_means_secs",
            "n_reps",
            "ratio",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.batch_size.to_string(),
                r.n_trees.to_string(),
                r.mode.as_str().to_string(),
                r.input_dim.to_string(),
                format!("{:.9}", r.mean_secs),
                format!("{:.9}", r.std_secs),
                format!("{:.9}", r.median_of_means_secs),
                r.n_reps.to_string(),
                format!("{:.4}", r.ratio),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `(n_trees, mean_secs)` of the T2V rows at one batch size.
    pub fn t2v_series(&self, batch_size: usize) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.batch_size == batch_size && r.mode == BenchMode::T2vMlp)
            .map(|r| (r.n_trees as f64, r.mean_secs))
            .collect()
    }
}
