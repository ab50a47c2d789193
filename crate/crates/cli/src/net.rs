//! `train-nn` and checkpoint evaluation.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use ndarray::{Array2, Array3, Axis};
use serde_json::json;

use treg_core::ensemble::serialize_internal;
use treg_core::nn::checkpoint::{self, LoadedModel, ModelSpec};
use treg_core::nn::{
    self, AdamConfig, Embed as EmbedRows, Embedded, History, LabeledSplit, Mha, MhaConfig, Mlp,
    MlpConfig, Network, NnError, TrainConfig,
};
use treg_core::t2t::build_token_layout;
use treg_core::t2v::{build_projection, build_threshold_map};
use treg_core::{Dataset, Encoders, Ensemble, T2tConfig, T2tTransform, T2vConfig};

use crate::{labels, load_model, Backbone, CsvArgs, Embed, TrainNnArgs};

const TREES_FILE: &str = "trees.json";
const ENCODERS_FILE: &str = "encoders.json";

/// Raw features, unchanged.
struct Raw;

impl EmbedRows<Array2<f64>> for Raw {
    fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(x.clone())
    }
}

/// Each raw feature as a length-1 token.
struct FeatureTokens;

impl EmbedRows<Array3<f64>> for FeatureTokens {
    fn embed(&self, x: &Array2<f64>) -> Result<Array3<f64>, NnError> {
        Ok(x.clone().insert_axis(Axis(2)))
    }
}

/// T2T tokens concatenated into one vector per row.
struct FlatTokens(T2tTransform);

impl EmbedRows<Array2<f64>> for FlatTokens {
    fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        let t = self.0.embed(x)?;
        let (n, d, k) = t.dim();
        Ok(t.into_shape_with_order((n, d * k)).expect("standard layout"))
    }
}

impl Embed {
    fn as_str(self) -> &'static str {
        match self {
            Embed::None => "none",
            Embed::T2v => "t2v",
            Embed::T2t => "t2t",
        }
    }

    fn parse(s: &str) -> Result<Embed> {
        Ok(match s {
            "none" => Embed::None,
            "t2v" => Embed::T2v,
            "t2t" => Embed::T2t,
            other => bail!("checkpoint has unknown embedding {other:?}"),
        })
    }
}

fn t2t(ens: &Ensemble) -> Result<T2tTransform> {
    let cfg = T2tConfig::default();
    Ok(T2tTransform::new(&build_token_layout(ens, &cfg)?, &cfg))
}

fn t2v(ens: &Ensemble) -> treg_core::ProjectionPair {
    build_projection(&build_threshold_map(ens, &T2vConfig::default()))
}

fn split(ds: &Dataset) -> Result<LabeledSplit<Array2<f64>>> {
    Ok(LabeledSplit::new(ds.x.clone(), labels(ds)?.to_vec())?)
}

struct Splits {
    train: LabeledSplit<Array2<f64>>,
    val: LabeledSplit<Array2<f64>>,
    test: Option<LabeledSplit<Array2<f64>>>,
}

fn fit<E, M>(model: Embedded<E, M>, splits: &Splits, cfg: &TrainConfig) -> Result<(M, History)>
where
    E: EmbedRows<M::Input>,
    M: Network,
{
    let (best, history) = nn::train(model, &splits.train, &splits.val, splits.test.as_ref(), cfg)?;
    Ok((best.net, history))
}

fn mlp_dims(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut d = vec![input];
    d.extend(hidden);
    d.push(2);
    d
}

pub fn train_nn(args: &TrainNnArgs, seed: u64) -> Result<()> {
    let train_ds = args.csv.load(&args.train, args.csv.fitted()?.as_ref())?;
    let enc = train_ds.encoders.clone();
    let m = train_ds.x.ncols();
    let splits = Splits {
        train: split(&train_ds)?,
        val: split(&args.csv.load(&args.val, Some(&enc))?)?,
        test: args
            .test
            .as_deref()
            .map(|p| args.csv.load(p, Some(&enc)).and_then(|ds| split(&ds)))
            .transpose()?,
    };
    let ens = match (args.embed, &args.model) {
        (Embed::None, _) => None,
        (_, Some(p)) => Some(load_model(p, Some(m))?),
        (_, None) => bail!("--embed {} needs --model", args.embed.as_str()),
    };
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: args.lr,
            ..AdamConfig::default()
        },
        batch_size: args.batch_size,
        patience: args.patience,
        timeout_secs: args.timeout_secs,
        max_epochs: args.max_epochs,
        seed,
    };

    let dir = &args.checkpoint;
    let history = match (args.backbone, ens.as_ref()) {
        (Backbone::Mlp, None) => {
            let spec = MlpConfig::new(mlp_dims(m, &args.hidden), seed);
            let net = Mlp::new(&spec)?;
            let (net, h) = fit(Embedded { embedder: Arc::new(Raw), net }, &splits, &cfg)?;
            save(dir, &ModelSpec::Mlp(spec), &net, args.embed, &h)?;
            h
        }
        (Backbone::Mlp, Some(e)) if args.embed == Embed::T2v => {
            let proj = t2v(e);
            let spec = MlpConfig::new(mlp_dims(proj.embed_dim(), &args.hidden), seed);
            let net = Mlp::new(&spec)?;
            let (net, h) = fit(Embedded { embedder: Arc::new(proj), net }, &splits, &cfg)?;
            save(dir, &ModelSpec::Mlp(spec), &net, args.embed, &h)?;
            h
        }
        (Backbone::Mlp, Some(e)) => {
            let xf = t2t(e)?;
            let (d, k) = xf.dims();
            let spec = MlpConfig::new(mlp_dims(d * k, &args.hidden), seed);
            let net = Mlp::new(&spec)?;
            let (net, h) = fit(Embedded { embedder: Arc::new(FlatTokens(xf)), net }, &splits, &cfg)?;
            save(dir, &ModelSpec::Mlp(spec), &net, args.embed, &h)?;
            h
        }
        (Backbone::Mha, None) => {
            let spec = MhaConfig::new(m, 1, seed);
            let net = Mha::new(&spec)?;
            let (net, h) = fit(Embedded { embedder: Arc::new(FeatureTokens), net }, &splits, &cfg)?;
            save(dir, &ModelSpec::Mha(spec), &net, args.embed, &h)?;
            h
        }
        (Backbone::Mha, Some(e)) if args.embed == Embed::T2t => {
            let xf = t2t(e)?;
            let (d, k) = xf.dims();
            let spec = MhaConfig::new(d, k, seed);
            let net = Mha::new(&spec)?;
            let (net, h) = fit(Embedded { embedder: Arc::new(xf), net }, &splits, &cfg)?;
            save(dir, &ModelSpec::Mha(spec), &net, args.embed, &h)?;
            h
        }
        (Backbone::Mha, Some(_)) => bail!("the mha backbone takes --embed t2t or none"),
    };
    if let Some(e) = &ens {
        fs::write(dir.join(TREES_FILE), serialize_internal(e)).context("cannot write tree model")?;
    }
    fs::write(dir.join(ENCODERS_FILE), serde_json::to_string_pretty(&enc)?)
        .context("cannot write encoders")?;

    let last = history.epochs.last();
    eprintln!(
        "{} epochs ({:?}), best epoch {}, val loss {:.4}",
        history.epochs.len(),
        history.stop_reason,
        history.best_epoch,
        last.map_or(f64::NAN, |r| r.val_loss)
    );
    if let Some(a) = history.test_auc {
        println!("AUC {:.2}%", 100.0 * a);
    }
    Ok(())
}

fn save<M: nn::Params>(dir: &Path, spec: &ModelSpec, net: &M, embed: Embed, h: &History) -> Result<()> {
    let meta = json!({ "embed": embed.as_str(), "history": h });
    checkpoint::save(dir, spec, net, meta).with_context(|| format!("{}", dir.display()))
}

/// Positive-class probabilities of a checkpoint on `input`, with its labels.
pub fn predict_checkpoint(dir: &Path, input: &Path, csv: &CsvArgs) -> Result<(Vec<f64>, Vec<u8>)> {
    let (model, manifest) = checkpoint::load(dir).with_context(|| format!("{}", dir.display()))?;
    let embed = Embed::parse(manifest.meta["embed"].as_str().unwrap_or("none"))?;
    let enc: Encoders = match csv.fitted()? {
        Some(e) => e,
        None => serde_json::from_str(&crate::read(&dir.join(ENCODERS_FILE))?)?,
    };
    let ds = csv.load(input, Some(&enc))?;
    let y = labels(&ds)?.to_vec();
    let ens = match embed {
        Embed::None => None,
        _ => Some(load_model(&dir.join(TREES_FILE), Some(ds.x.ncols()))?),
    };
    let x = &ds.x;
    let p = match (model, ens.as_ref()) {
        (LoadedModel::Mlp(net), None) => nn::predict_proba(&Embedded { embedder: Arc::new(Raw), net }, x)?,
        (LoadedModel::Mlp(net), Some(e)) if embed == Embed::T2v => {
            nn::predict_proba(&Embedded { embedder: Arc::new(t2v(e)), net }, x)?
        }
        (LoadedModel::Mlp(net), Some(e)) => {
            nn::predict_proba(&Embedded { embedder: Arc::new(FlatTokens(t2t(e)?)), net }, x)?
        }
        (LoadedModel::Mha(net), None) => {
            nn::predict_proba(&Embedded { embedder: Arc::new(FeatureTokens), net }, x)?
        }
        (LoadedModel::Mha(net), Some(e)) => nn::predict_proba(&Embedded { embedder: Arc::new(t2t(e)?), net }, x)?,
    };
    Ok((p, y))
}
