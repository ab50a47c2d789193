//! `treg`: train tree ensembles, embed tables with them, train and evaluate
//! small networks on the embeddings.

mod net;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use treg_core::ensemble::{parse_any, serialize_internal};
use treg_core::gbt::{self, GbtConfig};
use treg_core::ingest::{ingest_csv, ingest_csv_with};
use treg_core::synth::{self, ExperimentConfig, SynthConfig};
use treg_core::t2t::build_token_layout;
use treg_core::t2v::{build_projection, build_threshold_map};
use treg_core::tensor::TensorWriter;
use treg_core::timing::{run_bench, BenchConfig};
use treg_core::transform::{row_chunks, BatchTransform, T2tTransform};
use treg_core::{Dataset, DatasetFile, DType, Encoders, Ensemble, LabelColumn, T2tConfig, T2vConfig};

#[derive(Parser)]
#[command(name = "treg", version, about = "Tree-regularized embeddings for tabular data")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, env = "TREG_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a gradient-boosted ensemble on a labelled CSV.
    TrainTrees(TrainTreesArgs),
    /// Embed a CSV with a tree model into a TRTE tensor file.
    Transform(TransformArgs),
    /// Generate spherical-cap data, or run the MLP vs GBT sweep.
    Synth(SynthArgs),
    /// Train a network, optionally on tree embeddings, and write a checkpoint.
    TrainNn(TrainNnArgs),
    /// Report test AUC of a tree model or a network checkpoint.
    Eval(EvalArgs),
    /// Time T2V + MLP against a plain MLP.
    Bench(BenchArgs),
    /// Print the T2V map, the T2T layout or a model summary.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct CsvArgs {
    /// Label column, by header name or 0-based index.
    #[arg(long)]
    label: Option<LabelColumn>,
    /// The file has no header row.
    #[arg(long)]
    no_header: bool,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Encoders fitted on training data (JSON), applied instead of refitting.
    #[arg(long)]
    encoders: Option<PathBuf>,
}

#[derive(Args)]
struct TrainTreesArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
    /// Where to write the model JSON.
    #[arg(long)]
    output: PathBuf,
    /// Also write the fitted column encoders here.
    #[arg(long)]
    encoders_out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n_trees: usize,
    #[arg(long, default_value_t = 3)]
    max_depth: usize,
    #[arg(long, default_value_t = 0.3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    min_child_weight: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    T2v,
    T2t,
}

#[derive(Clone, Copy, ValueEnum)]
enum DTypeArg {
    F32,
    F64,
}

impl From<DTypeArg> for DType {
    fn from(d: DTypeArg) -> DType {
        match d {
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        }
    }
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Tree model: internal JSON or a booster dump.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
    /// Labels of the input as an `[n]` tensor (needs --label).
    #[arg(long)]
    labels_out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, value_enum, default_value = "f32")]
    dtype: DTypeArg,
    /// Decimal digits kept when deduplicating T2V thresholds.
    #[arg(long, default_value_t = 4)]
    epsilon: u32,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for train.csv, val.csv and test.csv.
    #[arg(long, required_unless_present = "report")]
    out_dir: Option<PathBuf>,
    /// Run the sweep over --betas and write the accuracy report here.
    #[arg(long, conflicts_with = "out_dir")]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    dim: usize,
    #[arg(long, default_value_t = 1.85)]
    beta: f64,
    /// Sweep grid; defaults to 1.85, 1.90, ..., 2.20.
    #[arg(long, value_delimiter = ',')]
    betas: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    n_samples: usize,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Keep the first center on e1 instead of a random direction.
    #[arg(long)]
    no_rotate: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backbone {
    Mlp,
    Mha,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Embed {
    None,
    T2v,
    T2t,
}

#[derive(Args)]
struct TrainNnArgs {
    #[arg(long, value_enum, default_value = "mlp")]
    backbone: Backbone,
    #[arg(long, value_enum, default_value = "none")]
    embed: Embed,
    /// Tree model, required for --embed t2v|t2t.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Evaluated once at the end and recorded in the checkpoint.
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    csv: CsvArgs,
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// MLP hidden widths.
    #[arg(long, value_delimiter = ',', default_value = "256,128")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 600.0)]
    timeout_secs: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Tree model to evaluate directly.
    #[arg(long, required_unless_present = "checkpoint", conflicts_with = "checkpoint")]
    model: Option<PathBuf>,
    /// Network checkpoint written by train-nn.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    batch_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10,25,50,100")]
    tree_counts: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 5)]
    inner: usize,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InspectTarget {
    /// Model whose deduplicated threshold map to print.
    #[arg(long)]
    t2v_map: Option<PathBuf>,
    /// Model whose token layout to print.
    #[arg(long)]
    t2t_layout: Option<PathBuf>,
    /// Model to summarize.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    target: InspectTarget,
    /// Feature count, when a booster dump does not reveal it.
    #[arg(long)]
    num_features: Option<usize>,
    #[arg(long, default_value_t = 4)]
    epsilon: u32,
}

impl CsvArgs {
    fn file(&self, path: &Path) -> Result<DatasetFile> {
        if !self.delimiter.is_ascii() {
            bail!("delimiter must be a single ASCII character");
        }
        let mut f = DatasetFile::new(path);
        f.has_header = !self.no_header;
        f.delimiter = self.delimiter as u8;
        f.label = self.label.clone();
        Ok(f)
    }

    fn fitted(&self) -> Result<Option<Encoders>> {
        self.encoders
            .as_deref()
            .map(|p| -> Result<Encoders> {
                let text = read(p)?;
                serde_json::from_str(&text).with_context(|| format!("{}", p.display()))
            })
            .transpose()
    }

    /// Reads `path`, with the given encoders or freshly fitted ones.
    fn load(&self, path: &Path, encoders: Option<&Encoders>) -> Result<Dataset> {
        let file = self.file(path)?;
        let ds = match encoders {
            Some(enc) => ingest_csv_with(&file, enc),
            None => ingest_csv(&file),
        };
        ds.with_context(|| format!("{}", path.display()))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn load_model(path: &Path, num_features: Option<usize>) -> Result<Ensemble> {
    parse_any(&read(path)?, num_features).with_context(|| format!("{}", path.display()))
}

fn labels(ds: &Dataset) -> Result<&[u8]> {
    ds.y.as_deref().context("a label column is required (--label)")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
}

fn train_trees(args: &TrainTreesArgs, seed: u64) -> Result<()> {
    let ds = args.csv.load(&args.input, args.csv.fitted()?.as_ref())?;
    let cfg = GbtConfig {
        n_trees: args.n_trees,
        max_depth: args.max_depth,
        learning_rate: args.learning_rate,
        lambda: args.lambda,
        min_child_weight: args.min_child_weight,
        seed,
    };
    let ens = gbt::train_gbt(ds.x.view(), labels(&ds)?, &cfg)?;
    fs::write(&args.output, serialize_internal(&ens))
        .with_context(|| format!("cannot write {}", args.output.display()))?;
    if let Some(p) = &args.encoders_out {
        fs::write(p, serde_json::to_string_pretty(&ds.encoders)?)
            .with_context(|| format!("cannot write {}", p.display()))?;
    }
    log::info!("{} trees, {} splits", ens.len(), ens.split_count());
    Ok(())
}

fn write_stream<T: BatchTransform>(
    xf: &T,
    ds: &Dataset,
    batch_size: usize,
    dtype: DType,
    out: &Path,
) -> Result<u64> {
    let dims: Vec<u64> = xf.row_shape().iter().map(|&d| d as u64).collect();
    let file = File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut w = TensorWriter::new(BufWriter::new(file), dtype, &dims)?;
    for chunk in row_chunks(ds.x.view(), batch_size) {
        let batch = xf.transform(&chunk?)?;
        w.append_rows(batch.as_slice(), batch.n_rows())?;
    }
    let rows = w.rows();
    w.finish()?.flush()?;
    Ok(rows)
}

fn transform(args: &TransformArgs) -> Result<()> {
    if args.batch_size == 0 {
        bail!("--batch-size must be positive");
    }
    let ds = args.csv.load(&args.input, args.csv.fitted()?.as_ref())?;
    let ens = load_model(&args.model, Some(ds.x.ncols()))?;
    let dtype = args.dtype.into();
    let rows = match args.mode {
        Mode::T2v => {
            let map = build_threshold_map(&ens, &T2vConfig { epsilon: args.epsilon });
            write_stream(&build_projection(&map), &ds, args.batch_size, dtype, &args.output)?
        }
        Mode::T2t => {
            let cfg = T2tConfig::default();
            let xf = T2tTransform::new(&build_token_layout(&ens, &cfg)?, &cfg);
            write_stream(&xf, &ds, args.batch_size, dtype, &args.output)?
        }
    };
    if let Some(p) = &args.labels_out {
        let y: Vec<f64> = labels(&ds)?.iter().map(|&v| f64::from(v)).collect();
        let mut w = create(p)?;
        treg_core::tensor::write_tensor(&mut w, dtype, &[y.len() as u64], &y)?;
        w.flush()?;
    }
    log::info!("wrote {rows} rows to {}", args.output.display());
    Ok(())
}

fn synth_cmd(args: &SynthArgs, seed: u64) -> Result<()> {
    let data = SynthConfig {
        dim: args.dim,
        beta: args.beta,
        n_samples: args.n_samples,
        n_trials: args.trials,
        seed,
        rotate: !args.no_rotate,
        ..SynthConfig::default()
    };
    if let Some(report) = &args.report {
        let betas = if args.betas.is_empty() {
            SynthConfig::beta_grid()
        } else {
            args.betas.clone()
        };
        let cfg = ExperimentConfig {
            data,
            ..ExperimentConfig::default()
        };
        let rep = synth::run_synth_experiment(&betas, &cfg)?;
        rep.write_csv(create(report)?)?;
        for s in &rep.summary {
            println!(
                "beta {:.3}: mlp {:.2}% gbt {:.2}%",
                s.beta,
                100.0 * s.mlp_mean,
                100.0 * s.gbt_mean
            );
        }
        return Ok(());
    }
    let dir = args.out_dir.as_ref().expect("clap enforces out_dir or report");
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let ds = synth::make_dataset(&data)?;
    for (name, split) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        synth::write_points_csv(create(&dir.join(format!("{name}.csv")))?, split)?;
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (scores, y) = match (&args.model, &args.checkpoint) {
        (Some(model), _) => {
            let ds = args.csv.load(&args.input, args.csv.fitted()?.as_ref())?;
            let ens = load_model(model, Some(ds.x.ncols()))?;
            (gbt::predict_proba(&ens, ds.x.view())?, labels(&ds)?.to_vec())
        }
        (None, Some(dir)) => net::predict_checkpoint(dir, &args.input, &args.csv)?,
        (None, None) => bail!("one of --model or --checkpoint is required"),
    };
    let auc = treg_core::auc(&scores, &y)?;
    println!("AUC {:.2}%", 100.0 * auc);
    Ok(())
}

fn bench(args: &BenchArgs, seed: u64) -> Result<()> {
    let cfg = BenchConfig {
        batch_sizes: args.batch_sizes.clone(),
        tree_counts: args.tree_counts.clone(),
        reps: args.reps,
        inner: args.inner,
        seed,
        ..BenchConfig::default()
    };
    let report = run_bench(&cfg)?;
    report.write_csv(create(&args.out)?)?;
    Ok(())
}

fn inspect(args: &InspectArgs) -> Result<()> {
    let t = &args.target;
    if let Some(p) = &t.t2v_map {
        let map = build_threshold_map(&load_model(p, args.num_features)?, &T2vConfig { epsilon: args.epsilon });
        println!("{}", map.to_json());
        eprintln!("k={}", map.len());
    } else if let Some(p) = &t.t2t_layout {
        let layout = build_token_layout(&load_model(p, args.num_features)?, &T2tConfig::default())?;
        println!("{}", layout.to_json());
        eprintln!("d={} k={}", layout.d(), layout.k());
    } else if let Some(p) = &t.model {
        let ens = load_model(p, args.num_features)?;
        let depth = ens
            .trees()
            .iter()
            .map(|t| t.stats().max_split_depth)
            .max()
            .unwrap_or(-1);
        let summary = serde_json::json!({
            "trees": ens.len(),
            "features": ens.num_features(),
            "splits": ens.split_count(),
            "max_split_depth": depth,
        });
        println!("{summary}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::TrainTrees(a) => train_trees(a, seed),
        Command::Transform(a) => transform(a),
        Command::Synth(a) => synth_cmd(a, seed),
        Command::TrainNn(a) => net::train_nn(a, seed),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a, seed),
        Command::Inspect(a) => inspect(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
