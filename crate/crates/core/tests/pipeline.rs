use std::f64::consts::{PI, SQRT_2};
use std::io::Cursor;
use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use treg_core::ensemble::{parse_any, parse_booster_dump, parse_internal, serialize_internal};
use treg_core::gbt::{self, GbtConfig};
use treg_core::ingest::{ingest_csv, ingest_csv_with, UNSEEN_CODE};
use treg_core::nn::checkpoint::{self, LoadedModel, ModelSpec};
use treg_core::nn::{self, Embedded, LabeledSplit, Mlp, MlpConfig, TrainConfig};
use treg_core::synth::sample_cap;
use treg_core::t2t::build_token_layout;
use treg_core::t2v::{build_projection, build_threshold_map};
use treg_core::tensor::{read_tensor, write_tensor, TensorWriter};
use treg_core::transform::{row_chunks, BatchTransform};
use treg_core::{DType, DatasetFile, LabelColumn, SlotSpec, T2tConfig, T2tTransform, T2vConfig};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn booster_dump_to_both_embeddings() {
    let text = std::fs::read_to_string(fixture("booster_dump.json")).unwrap();
    let ens = parse_booster_dump(&text, None).unwrap();
    assert_eq!((ens.len(), ens.num_features()), (2, 3));

    let map = build_threshold_map(&ens, &T2vConfig::default());
    assert_eq!(map.entries(), &[(0, 0.5), (1, 3.0), (2, -1.25)]);

    let layout = build_token_layout(&ens, &T2tConfig::default()).unwrap();
    assert_eq!((layout.d(), layout.k()), (2, 3));
    assert_eq!(
        layout.slots(0),
        &[
            SlotSpec::Compare { feature: 0, threshold: 0.50003 },
            SlotSpec::Compare { feature: 2, threshold: -1.25 },
            SlotSpec::Pseudo,
        ]
    );
    assert_eq!(layout.slots(1)[1], SlotSpec::Pseudo);

    let back = parse_internal(&serialize_internal(&ens)).unwrap();
    assert_eq!(back, ens);
    assert_eq!(parse_any(&text, Some(5)).unwrap().num_features(), 5);
}

#[test]
fn csv_encoders_carry_over_to_test_file() {
    let file = DatasetFile::new(fixture("mixed_train.csv")).with_label(LabelColumn::Name("label".into()));
    let train = ingest_csv(&file).unwrap();
    assert_eq!(train.x.dim(), (6, 3));
    assert_eq!(train.x.column(0).to_vec(), vec![34.0, 0.0, 51.0, 28.0, 47.0, 39.0]);
    assert_eq!(train.x.column(1).to_vec(), vec![0.0, 1.0, 0.0, 2.0, 0.0, 1.0]);
    assert_eq!(train.x[[2, 2]], 0.0);
    assert_eq!(train.y.as_deref(), Some(&[0u8, 1, 0, 1, 0, 1][..]));

    let test_file = DatasetFile::new(fixture("mixed_test.csv")).with_label(LabelColumn::Index(3));
    let test = ingest_csv_with(&test_file, &train.encoders).unwrap();
    assert_eq!(test.x, array![[40.0, UNSEEN_CODE, 2.0], [33.0, 2.0, 0.0]]);
    assert_eq!(test.y, Some(vec![0, 1]));

    let json = serde_json::to_string(&train.encoders).unwrap();
    assert_eq!(serde_json::from_str::<treg_core::Encoders>(&json).unwrap(), train.encoders);
}

fn tensor_file<T: BatchTransform>(xf: &T, x: &Array2<f64>, batch: usize) -> Vec<u8> {
    let dims: Vec<u64> = xf.row_shape().iter().map(|&d| d as u64).collect();
    let mut w = TensorWriter::new(Cursor::new(Vec::new()), DType::F32, &dims).unwrap();
    for chunk in row_chunks(x.view(), batch) {
        let out = xf.transform(&chunk.unwrap()).unwrap();
        w.append_rows(out.as_slice(), out.n_rows()).unwrap();
    }
    w.finish().unwrap().into_inner()
}

#[test]
fn ingest_then_streamed_transform_matches_one_shot() {
    let file = DatasetFile::new(fixture("mixed_train.csv")).with_label(LabelColumn::Name("label".into()));
    let ds = ingest_csv(&file).unwrap();
    let ens = gbt::train_gbt(
        ds.x.view(),
        ds.y.as_deref().unwrap(),
        &GbtConfig {
            n_trees: 5,
            max_depth: 2,
            min_child_weight: 0.0,
            ..GbtConfig::default()
        },
    )
    .unwrap();
    let proj = build_projection(&build_threshold_map(&ens, &T2vConfig::default()));
    let cfg = T2tConfig::default();
    let t2t = T2tTransform::new(&build_token_layout(&ens, &cfg).unwrap(), &cfg);

    let whole = treg_core::RowBatch::new(ds.x.clone()).unwrap();
    let one_shot = proj.transform(&whole).unwrap();
    let mut reference = Vec::new();
    write_tensor(&mut reference, DType::F32, &[6, proj.embed_dim() as u64], one_shot.as_slice()).unwrap();
    for bs in [1, 2, 4, 6, 64] {
        assert_eq!(tensor_file(&proj, &ds.x, bs), reference, "t2v batch {bs}");
        assert_eq!(tensor_file(&t2t, &ds.x, bs), tensor_file(&t2t, &ds.x, 6), "t2t batch {bs}");
    }
    let back = read_tensor(&mut Cursor::new(reference)).unwrap();
    assert_eq!(back.dims, vec![6, proj.embed_dim() as u64]);
}

#[test]
fn t2v_network_survives_a_checkpoint() {
    let mut x = Array2::zeros((400, 3));
    let mut y = Vec::new();
    for i in 0..400 {
        let a = (i as f64 * 0.37).sin();
        let b = (i as f64 * 0.11).cos();
        x[[i, 0]] = a;
        x[[i, 1]] = b;
        x[[i, 2]] = a * b;
        y.push(u8::from(a + b > 0.2));
    }
    let train = LabeledSplit::new(x.clone(), y.clone()).unwrap();
    let ens = gbt::train_gbt(x.view(), &y, &GbtConfig { n_trees: 10, ..GbtConfig::default() }).unwrap();
    let proj = Arc::new(build_projection(&build_threshold_map(&ens, &T2vConfig::default())));
    let spec = MlpConfig::new(vec![proj.embed_dim(), 16, 2], 4);
    let model = Embedded {
        embedder: Arc::clone(&proj),
        net: Mlp::new(&spec).unwrap(),
    };
    let cfg = TrainConfig {
        max_epochs: 15,
        ..TrainConfig::default()
    };
    let (best, _) = nn::train(model, &train, &train, None, &cfg).unwrap();
    let before = nn::predict_proba(&best, &x).unwrap();

    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(dir.path(), &ModelSpec::Mlp(spec), &best, serde_json::json!({"embed": "t2v"})).unwrap();
    let (loaded, manifest) = checkpoint::load(dir.path()).unwrap();
    assert_eq!(manifest.meta["embed"], "t2v");
    let LoadedModel::Mlp(net) = loaded else {
        panic!("expected an mlp checkpoint")
    };
    let restored = Embedded { embedder: proj, net };
    assert_eq!(nn::predict_proba(&restored, &x).unwrap(), before);
    assert!(treg_core::auc(&before, &y).unwrap() > 0.9);
}

/// Share of the unit circle within `beta` of a point, by the midpoint rule.
fn circle_fraction(beta: f64) -> f64 {
    let n = 1_000_000;
    let inside = (0..n)
        .filter(|&i| {
            let t = 2.0 * PI * (i as f64 + 0.5) / n as f64;
            let (dx, dy) = (t.cos() - 1.0, t.sin());
            (dx * dx + dy * dy).sqrt() <= beta
        })
        .count();
    inside as f64 / n as f64
}

#[test]
fn circle_acceptance_rate_at_sqrt_two() {
    let p = circle_fraction(SQRT_2);
    assert!((p - 0.5).abs() < 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let center = array![1.0, 0.0];
    let got = sample_cap(center.view(), SQRT_2, 20_000, &mut rng).unwrap();
    let sigma = (p * (1.0 - p) / got.proposals as f64).sqrt();
    assert!(
        (got.acceptance_rate() - p).abs() <= 3.0 * sigma,
        "rate {} vs {p} (sigma {sigma})",
        got.acceptance_rate()
    );
}
