//! Shared fixtures for the criterion benches.

use ndarray::{s, Array2};
use treg_core::gbt::{train_gbt, GbtConfig};
use treg_core::synth::{make_dataset, SynthConfig};
use treg_core::t2t::build_token_layout;
use treg_core::t2v::{build_projection, build_threshold_map};
use treg_core::{Ensemble, ProjectionPair, RowBatch, T2tConfig, T2tTransform, T2vConfig, ThresholdMap};

/// Synthetic cap data (dim 100) and a depth-3 ensemble trained on it once.
pub struct Workload {
    pub ensemble: Ensemble,
    pub pool: Array2<f64>,
}

impl Workload {
    pub fn new(max_trees: usize) -> Self {
        let data = make_dataset(&SynthConfig {
            beta: 1.9,
            n_samples: 4000,
            ..SynthConfig::default()
        })
        .expect("synthetic data");
        let ensemble = train_gbt(
            data.train.x.view(),
            &data.train.y,
            &GbtConfig {
                n_trees: max_trees,
                ..GbtConfig::default()
            },
        )
        .expect("gbt");
        Workload {
            ensemble,
            pool: data.test.x,
        }
    }

    pub fn batch(&self, n: usize) -> RowBatch {
        RowBatch::new(self.pool.slice(s![..n, ..]).to_owned()).expect("finite rows")
    }

    pub fn embedders(&self, n_trees: usize) -> Embedders {
        let ens = self.ensemble.truncated(n_trees);
        let map = build_threshold_map(&ens, &T2vConfig::default());
        let proj = build_projection(&map);
        let cfg = T2tConfig::default();
        let t2t = T2tTransform::new(&build_token_layout(&ens, &cfg).expect("layout"), &cfg);
        Embedders { map, proj, t2t }
    }
}

pub struct Embedders {
    pub map: ThresholdMap,
    pub proj: ProjectionPair,
    pub t2t: T2tTransform,
}
