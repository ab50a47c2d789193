use ndarray::{s, Array1, Array2, Array3, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, relu_backward, relu_inplace, softmax_cross_entropy, Dense, Network, NnError,
    Params,
};

const LN_EPS: f64 = 1e-5;

/// Post-norm transformer encoder over `d` tokens of length `k`, followed by a
/// one-hidden-layer classifier on the concatenated token outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhaConfig {
    pub n_tokens: usize,
    pub token_len: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub ff_dim: usize,
    pub classifier_hidden: usize,
    /// Adds a learned bias per token position after the input projection.
    pub positional: bool,
    pub seed: u64,
}

impl MhaConfig {
    pub fn new(n_tokens: usize, token_len: usize, seed: u64) -> Self {
        MhaConfig {
            n_tokens,
            token_len,
            embed_dim: 8,
            n_heads: 4,
            n_blocks: 2,
            ff_dim: 16,
            classifier_hidden: 128,
            positional: true,
            seed,
        }
    }

    pub fn with_positional(mut self, positional: bool) -> Self {
        self.positional = positional;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let sizes = [
            ("n_tokens", self.n_tokens),
            ("token_len", self.token_len),
            ("embed_dim", self.embed_dim),
            ("n_heads", self.n_heads),
            ("ff_dim", self.ff_dim),
            ("classifier_hidden", self.classifier_hidden),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(NnError::Config(format!("{name} must be positive")));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(NnError::Config(format!(
                "embed_dim {} is not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerNorm {
    gamma: Array1<f64>,
    beta: Array1<f64>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    fn zeros_like(&self) -> Self {
        LayerNorm {
            gamma: Array1::zeros(self.gamma.raw_dim()),
            beta: Array1::zeros(self.beta.raw_dim()),
        }
    }

    /// Returns the output, the normalized input and the per-row `1/sigma`.
    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let mut xhat = x.clone();
        let mut inv = Array1::zeros(x.nrows());
        for (mut row, s) in xhat.rows_mut().into_iter().zip(inv.iter_mut()) {
            let mu = row.mean().unwrap();
            row -= mu;
            let var = row.mapv(|v| v * v).mean().unwrap();
            *s = 1.0 / (var + LN_EPS).sqrt();
            row *= *s;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, xhat, inv)
    }

    fn backward(
        &self,
        dy: &Array2<f64>,
        xhat: &Array2<f64>,
        inv: &Array1<f64>,
        grad: &mut LayerNorm,
    ) -> Array2<f64> {
        grad.gamma += &(dy * xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let mut dx = dy * &self.gamma;
        for ((mut row, xh), &s) in dx.rows_mut().into_iter().zip(xhat.rows()).zip(inv) {
            let mean_d = row.mean().unwrap();
            let mean_dx = (&row * &xh).mean().unwrap();
            Zip::from(&mut row)
                .and(&xh)
                .for_each(|d, &h| *d = s * (*d - mean_d - h * mean_dx));
        }
        dx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&format!("{prefix}.gamma"), self.gamma.shape(), self.gamma.as_slice().unwrap());
        f(&format!("{prefix}.beta"), self.beta.shape(), self.beta.as_slice().unwrap());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.gamma"), self.gamma.as_slice_mut().unwrap());
        f(&format!("{prefix}.beta"), self.beta.as_slice_mut().unwrap());
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    ln1: LayerNorm,
    ff1: Dense,
    ff2: Dense,
    ln2: LayerNorm,
}

struct BlockCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    heads: Array2<f64>,
    xhat1: Array2<f64>,
    inv1: Array1<f64>,
    h1: Array2<f64>,
    ff_pre: Array2<f64>,
    xhat2: Array2<f64>,
    inv2: Array1<f64>,
}

impl Block {
    fn init(cfg: &MhaConfig, rng: &mut ChaCha8Rng) -> Self {
        let e = cfg.embed_dim;
        Block {
            q: Dense::init(e, e, rng),
            k: Dense::init(e, e, rng),
            v: Dense::init(e, e, rng),
            o: Dense::init(e, e, rng),
            ln1: LayerNorm::new(e),
            ff1: Dense::init(e, cfg.ff_dim, rng),
            ff2: Dense::init(cfg.ff_dim, e, rng),
            ln2: LayerNorm::new(e),
        }
    }

    fn zeros_like(&self) -> Self {
        Block {
            q: self.q.zeros_like(),
            k: self.k.zeros_like(),
            v: self.v.zeros_like(),
            o: self.o.zeros_like(),
            ln1: self.ln1.zeros_like(),
            ff1: self.ff1.zeros_like(),
            ff2: self.ff2.zeros_like(),
            ln2: self.ln2.zeros_like(),
        }
    }

    fn forward(&self, x: Array2<f64>, d: usize, n_heads: usize) -> (Array2<f64>, BlockCache) {
        let q = self.q.forward(x.view());
        let k = self.k.forward(x.view());
        let v = self.v.forward(x.view());
        let (heads, attn) = self_attention(&q, &k, &v, d, n_heads);
        let r1 = &x + &self.o.forward(heads.view());
        let (h1, xhat1, inv1) = self.ln1.forward(&r1);
        let ff_pre = self.ff1.forward(h1.view());
        let mut act = ff_pre.clone();
        relu_inplace(&mut act);
        let r2 = &h1 + &self.ff2.forward(act.view());
        let (out, xhat2, inv2) = self.ln2.forward(&r2);
        let cache = BlockCache {
            input: x,
            q,
            k,
            v,
            attn,
            heads,
            xhat1,
            inv1,
            h1,
            ff_pre,
            xhat2,
            inv2,
        };
        (out, cache)
    }

    fn backward(
        &self,
        dout: &Array2<f64>,
        c: &BlockCache,
        d: usize,
        n_heads: usize,
        g: &mut Block,
    ) -> Array2<f64> {
        let dr2 = self.ln2.backward(dout, &c.xhat2, &c.inv2, &mut g.ln2);
        let act = c.ff_pre.mapv(|v| v.max(0.0));
        let mut dact = self.ff2.backward(act.view(), dr2.view(), &mut g.ff2);
        relu_backward(&mut dact, &c.ff_pre);
        let dh1 = &dr2 + &self.ff1.backward(c.h1.view(), dact.view(), &mut g.ff1);

        let dr1 = self.ln1.backward(&dh1, &c.xhat1, &c.inv1, &mut g.ln1);
        let dheads = self.o.backward(c.heads.view(), dr1.view(), &mut g.o);
        let (dq, dk, dv) = self_attention_backward(&dheads, c, d, n_heads);
        let mut dx = dr1;
        dx += &self.q.backward(c.input.view(), dq.view(), &mut g.q);
        dx += &self.k.backward(c.input.view(), dk.view(), &mut g.k);
        dx += &self.v.backward(c.input.view(), dv.view(), &mut g.v);
        dx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.q.visit(&format!("{prefix}.q"), f);
        self.k.visit(&format!("{prefix}.k"), f);
        self.v.visit(&format!("{prefix}.v"), f);
        self.o.visit(&format!("{prefix}.o"), f);
        self.ln1.visit(&format!("{prefix}.ln1"), f);
        self.ff1.visit(&format!("{prefix}.ff1"), f);
        self.ff2.visit(&format!("{prefix}.ff2"), f);
        self.ln2.visit(&format!("{prefix}.ln2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.q.visit_mut(&format!("{prefix}.q"), f);
        self.k.visit_mut(&format!("{prefix}.k"), f);
        self.v.visit_mut(&format!("{prefix}.v"), f);
        self.o.visit_mut(&format!("{prefix}.o"), f);
        self.ln1.visit_mut(&format!("{prefix}.ln1"), f);
        self.ff1.visit_mut(&format!("{prefix}.ff1"), f);
        self.ff2.visit_mut(&format!("{prefix}.ff2"), f);
        self.ln2.visit_mut(&format!("{prefix}.ln2"), f);
    }
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Scaled dot-product attention within each sample. `q`, `k`, `v` hold
/// `n * d` token rows; heads are contiguous column blocks. Returns the
/// concatenated head outputs and the attention matrices, indexed
/// `sample * n_heads + head`.
fn self_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    d: usize,
    n_heads: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (rows, e) = q.dim();
    let hd = e / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = Array2::zeros((rows, e));
    let mut attn = Vec::with_capacity(rows / d * n_heads);
    for i in 0..rows / d {
        let r = i * d..(i + 1) * d;
        for h in 0..n_heads {
            let c = h * hd..(h + 1) * hd;
            let qs = q.slice(s![r.clone(), c.clone()]);
            let ks = k.slice(s![r.clone(), c.clone()]);
            let vs = v.slice(s![r.clone(), c.clone()]);
            let mut a = qs.dot(&ks.t()) * scale;
            softmax_rows(&mut a);
            out.slice_mut(s![r.clone(), c]).assign(&a.dot(&vs));
            attn.push(a);
        }
    }
    (out, attn)
}

fn self_attention_backward(
    dheads: &Array2<f64>,
    c: &BlockCache,
    d: usize,
    n_heads: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (rows, e) = dheads.dim();
    let hd = e / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = Array2::zeros((rows, e));
    let mut dk = Array2::zeros((rows, e));
    let mut dv = Array2::zeros((rows, e));
    for i in 0..rows / d {
        let r = i * d..(i + 1) * d;
        for h in 0..n_heads {
            let cols = h * hd..(h + 1) * hd;
            let a = &c.attn[i * n_heads + h];
            let dout = dheads.slice(s![r.clone(), cols.clone()]);
            let qs = c.q.slice(s![r.clone(), cols.clone()]);
            let ks = c.k.slice(s![r.clone(), cols.clone()]);
            let vs = c.v.slice(s![r.clone(), cols.clone()]);
            let da = dout.dot(&vs.t());
            dv.slice_mut(s![r.clone(), cols.clone()]).assign(&a.t().dot(&dout));
            let mut ds = a * &da;
            for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                let total = row.sum();
                Zip::from(&mut row).and(&arow).for_each(|x, &p| *x -= p * total);
            }
            ds *= scale;
            dq.slice_mut(s![r.clone(), cols.clone()]).assign(&ds.dot(&ks));
            dk.slice_mut(s![r.clone(), cols]).assign(&ds.t().dot(&qs));
        }
    }
    (dq, dk, dv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mha {
    cfg: MhaConfig,
    proj: Dense,
    pos: Option<Array2<f64>>,
    blocks: Vec<Block>,
    head1: Dense,
    head2: Dense,
}

struct Trace {
    tokens: Array2<f64>,
    blocks: Vec<BlockCache>,
    flat: Array2<f64>,
    hidden_pre: Array2<f64>,
    logits: Array2<f64>,
}

impl Mha {
    pub fn new(cfg: &MhaConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let proj = Dense::init(cfg.token_len, cfg.embed_dim, &mut rng);
        let blocks = (0..cfg.n_blocks).map(|_| Block::init(cfg, &mut rng)).collect();
        let flat = cfg.n_tokens * cfg.embed_dim;
        let head1 = Dense::init(flat, cfg.classifier_hidden, &mut rng);
        let head2 = Dense::init(cfg.classifier_hidden, 2, &mut rng);
        Ok(Mha {
            cfg: cfg.clone(),
            proj,
            pos: cfg
                .positional
                .then(|| Array2::zeros((cfg.n_tokens, cfg.embed_dim))),
            blocks,
            head1,
            head2,
        })
    }

    pub fn config(&self) -> &MhaConfig {
        &self.cfg
    }

    fn zeros_like(&self) -> Self {
        Mha {
            cfg: self.cfg.clone(),
            proj: self.proj.zeros_like(),
            pos: self.pos.as_ref().map(|p| Array2::zeros(p.raw_dim())),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            head1: self.head1.zeros_like(),
            head2: self.head2.zeros_like(),
        }
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<(), NnError> {
        let (_, d, k) = x.dim();
        if d != self.cfg.n_tokens || k != self.cfg.token_len {
            return Err(NnError::Shape(format!(
                "tokens are {d} x {k}, encoder expects {} x {}",
                self.cfg.n_tokens, self.cfg.token_len
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Array3<f64>) -> Result<Trace, NnError> {
        self.check_input(x)?;
        let (n, d, k) = x.dim();
        let e = self.cfg.embed_dim;
        let flat_in = x.to_shape((n * d, k)).expect("contiguous tokens");
        let tokens = flat_in.to_owned();
        let mut h = self.proj.forward(tokens.view());
        if let Some(pos) = &self.pos {
            let mut h3 = h.into_shape_with_order((n, d, e)).unwrap();
            h3 += pos;
            h = h3.into_shape_with_order((n * d, e)).unwrap();
        }
        check_finite(&h, 0)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let (out, cache) = block.forward(h, d, self.cfg.n_heads);
            check_finite(&out, b + 1)?;
            caches.push(cache);
            h = out;
        }
        let flat = h.into_shape_with_order((n, d * e)).unwrap();
        let hidden_pre = self.head1.forward(flat.view());
        check_finite(&hidden_pre, self.blocks.len() + 1)?;
        let mut hidden = hidden_pre.clone();
        relu_inplace(&mut hidden);
        let logits = self.head2.forward(hidden.view());
        check_finite(&logits, self.blocks.len() + 2)?;
        Ok(Trace {
            tokens,
            blocks: caches,
            flat,
            hidden_pre,
            logits,
        })
    }

    /// Per-token encoder outputs, `n x d x embed_dim`, before concatenation.
    pub fn encode(&self, x: &Array3<f64>) -> Result<Array3<f64>, NnError> {
        let (n, d, _) = x.dim();
        let flat = self.run(x)?.flat;
        Ok(flat
            .into_shape_with_order((n, d, self.cfg.embed_dim))
            .unwrap())
    }
}

impl Params for Mha {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.proj.visit("proj", f);
        if let Some(p) = &self.pos {
            f("pos", p.shape(), p.as_slice().unwrap());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("blocks.{i}"), f);
        }
        self.head1.visit("head.0", f);
        self.head2.visit("head.1", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.proj.visit_mut("proj", f);
        if let Some(p) = &mut self.pos {
            f("pos", p.as_slice_mut().unwrap());
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("blocks.{i}"), f);
        }
        self.head1.visit_mut("head.0", f);
        self.head2.visit_mut("head.1", f);
    }
}

impl Network for Mha {
    type Input = Array3<f64>;

    fn forward(&self, x: &Array3<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.run(x)?.logits)
    }

    fn loss_and_grad(&self, x: &Array3<f64>, y: &[u8]) -> Result<(f64, Self), NnError> {
        let t = self.run(x)?;
        let (n, d, _) = x.dim();
        let e = self.cfg.embed_dim;
        let (loss, dlogits) = softmax_cross_entropy(&t.logits, y)?;
        let mut g = self.zeros_like();

        let hidden = t.hidden_pre.mapv(|v| v.max(0.0));
        let mut dhidden = self.head2.backward(hidden.view(), dlogits.view(), &mut g.head2);
        relu_backward(&mut dhidden, &t.hidden_pre);
        let dflat = self.head1.backward(t.flat.view(), dhidden.view(), &mut g.head1);

        let mut dh = dflat.into_shape_with_order((n * d, e)).unwrap();
        for b in (0..self.blocks.len()).rev() {
            dh = self.blocks[b].backward(&dh, &t.blocks[b], d, self.cfg.n_heads, &mut g.blocks[b]);
        }
        if let Some(gp) = &mut g.pos {
            let dh3 = dh.view().into_shape_with_order((n, d, e)).unwrap();
            *gp += &dh3.sum_axis(Axis(0));
        }
        self.proj.backward(t.tokens.view(), dh.view(), &mut g.proj);
        Ok((loss, g))
    }
}

#[cfg(test)]
/// Attention weights of the first head of block `block` for sample 0;
/// used by tests.
pub(crate) fn first_head_attention(model: &Mha, x: &Array3<f64>, block: usize) -> Array2<f64> {
    let t = model.run(x).expect("valid input");
    t.blocks[block].attn[0].clone()
}
