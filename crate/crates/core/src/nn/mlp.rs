use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, relu_backward, relu_inplace, softmax_cross_entropy, Dense, Network, NnError,
    Params,
};

/// Fully connected stack with ReLU between hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Widths from input to output, e.g. `[m, 256, 128, 2]`.
    pub layer_dims: Vec<usize>,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(layer_dims: Vec<usize>, seed: u64) -> Self {
        MlpConfig { layer_dims, seed }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layer_dims.len() < 2 {
            return Err(NnError::Config("an MLP needs at least 2 layer widths".into()));
        }
        if self.layer_dims.last() != Some(&2) {
            return Err(NnError::Config("the output width must be 2".into()));
        }
        if self.layer_dims[1..].contains(&0) {
            return Err(NnError::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub(crate) layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(cfg: &MlpConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let layers = cfg
            .layer_dims
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], &mut rng))
            .collect();
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.b.len()));
        dims
    }

    /// Direct access for fixtures: `(weight, bias)` of layer `i`.
    pub fn layer_mut(&mut self, i: usize) -> (&mut Array2<f64>, &mut ndarray::Array1<f64>) {
        let l = &mut self.layers[i];
        (&mut l.w, &mut l.b)
    }

    fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::Shape(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer (the last one is the logits).
    fn activations(&self, x: &Array2<f64>) -> Result<Vec<Array2<f64>>, NnError> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(h.view());
            check_finite(&z, i)?;
            h = z.clone();
            if i + 1 < self.layers.len() {
                relu_inplace(&mut h);
            }
            pre.push(z);
        }
        Ok(pre)
    }
}

impl Params for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("layers.{i}"), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("layers.{i}"), f);
        }
    }
}

impl Network for Mlp {
    type Input = Array2<f64>;

    fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.activations(x)?.pop().expect("at least one layer"))
    }

    fn loss_and_grad(&self, x: &Array2<f64>, y: &[u8]) -> Result<(f64, Self), NnError> {
        let pre = self.activations(x)?;
        let (loss, mut delta) = softmax_cross_entropy(pre.last().unwrap(), y)?;
        let mut grad = self.zeros_like();
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 {
                x.clone()
            } else {
                pre[i - 1].mapv(|v| v.max(0.0))
            };
            let mut dx = self.layers[i].backward(input.view(), delta.view(), &mut grad.layers[i]);
            if i > 0 {
                relu_backward(&mut dx, &pre[i - 1]);
            }
            delta = dx;
        }
        Ok((loss, grad))
    }
}

impl Mlp {
    /// Mean over rows of the logits; handy for quick sanity checks.
    pub fn mean_logits(&self, x: &Array2<f64>) -> Result<ndarray::Array1<f64>, NnError> {
        Ok(self.forward(x)?.mean_axis(Axis(0)).expect("non-empty batch"))
    }
}
