//! Pre-LN transformer encoder classifier over per-second handover tokens.
//!
//! tokens (T x 2) -> MLP embed (2 -> e -> d) + sinusoidal positions -> L
//! encoder layers -> final layer norm -> mean pool -> linear head (d -> 4).
//! Forward and backward are written out by hand over `ndarray` in f64.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Action, PolicyError, SegmentState};
use crate::rtc::SEGMENT_SECONDS;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub embed_hidden: usize,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: SEGMENT_SECONDS,
            d_model: 64,
            heads: 4,
            layers: 6,
            ff_dim: 256,
            embed_hidden: 64,
            positional_encoding: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::InvalidConfig(m));
        if self.seq_len == 0 || self.d_model == 0 || self.layers == 0 || self.ff_dim == 0 || self.embed_hidden == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All trainable parameters. Matrices are stored `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyWeights {
    pub config: ModelConfig,
    pub embed_w1: Array2<f64>,
    pub embed_b1: Array1<f64>,
    pub embed_w2: Array2<f64>,
    pub embed_b2: Array1<f64>,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

/// A named parameter tensor: matrices are weight-decayed, vectors are not.
pub struct Tensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

impl TensorMut<'_> {
    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }
}

macro_rules! for_each_param {
    ($w:expr, $f:ident, $iter:ident, $as_slice:ident) => {{
        $f("embed.w1".to_string(), $w.embed_w1.shape().to_vec(), $w.embed_w1.$as_slice().expect("standard layout"));
        $f("embed.b1".to_string(), $w.embed_b1.shape().to_vec(), $w.embed_b1.$as_slice().expect("standard layout"));
        $f("embed.w2".to_string(), $w.embed_w2.shape().to_vec(), $w.embed_w2.$as_slice().expect("standard layout"));
        $f("embed.b2".to_string(), $w.embed_b2.shape().to_vec(), $w.embed_b2.$as_slice().expect("standard layout"));
        for (i, l) in $w.layers.$iter().enumerate() {
            macro_rules! p {
                ($field:ident) => {
                    $f(
                        format!("layer{i}.{}", stringify!($field)),
                        l.$field.shape().to_vec(),
                        l.$field.$as_slice().expect("standard layout"),
                    )
                };
            }
            p!(ln1_g);
            p!(ln1_b);
            p!(wq);
            p!(bq);
            p!(wk);
            p!(bk);
            p!(wv);
            p!(bv);
            p!(wo);
            p!(bo);
            p!(ln2_g);
            p!(ln2_b);
            p!(w1);
            p!(b1);
            p!(w2);
            p!(b2);
        }
        $f("final_ln.g".to_string(), $w.lnf_g.shape().to_vec(), $w.lnf_g.$as_slice().expect("standard layout"));
        $f("final_ln.b".to_string(), $w.lnf_b.shape().to_vec(), $w.lnf_b.$as_slice().expect("standard layout"));
        $f("head.w".to_string(), $w.head_w.shape().to_vec(), $w.head_w.$as_slice().expect("standard layout"));
        $f("head.b".to_string(), $w.head_b.shape().to_vec(), $w.head_b.$as_slice().expect("standard layout"));
    }};
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

impl PolicyWeights {
    /// Glorot-uniform matrices, zero biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, e, f) = (config.d_model, config.embed_hidden, config.ff_dim);
        let zeros = |n| Array1::zeros(n);
        let ones = |n| Array1::ones(n);
        let embed_w1 = glorot(&mut rng, 2, e);
        let embed_w2 = glorot(&mut rng, e, d);
        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                ln1_g: ones(d),
                ln1_b: zeros(d),
                wq: glorot(&mut rng, d, d),
                bq: zeros(d),
                wk: glorot(&mut rng, d, d),
                bk: zeros(d),
                wv: glorot(&mut rng, d, d),
                bv: zeros(d),
                wo: glorot(&mut rng, d, d),
                bo: zeros(d),
                ln2_g: ones(d),
                ln2_b: zeros(d),
                w1: glorot(&mut rng, d, f),
                b1: zeros(f),
                w2: glorot(&mut rng, f, d),
                b2: zeros(d),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            embed_w1,
            embed_b1: zeros(e),
            embed_w2,
            embed_b2: zeros(d),
            layers,
            lnf_g: ones(d),
            lnf_b: zeros(d),
            head_w: glorot(&mut rng, d, Action::COUNT),
            head_b: zeros(Action::COUNT),
        })
    }

    /// Same shapes, every entry zero; the gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|t| t.data.fill(0.0));
        z
    }

    pub fn for_each(&self, mut f: impl FnMut(Tensor<'_>)) {
        let mut g = |name, shape, data| f(Tensor { name, shape, data });
        for_each_param!(self, g, iter, as_slice);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(TensorMut<'_>)) {
        let mut g = |name, shape, data| f(TensorMut { name, shape, data });
        for_each_param!(self, g, iter_mut, as_slice_mut);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|t| n += t.data.len());
        n
    }

    /// Shape of every named tensor in a freshly built model with this config.
    pub fn expected_shapes(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>, PolicyError> {
        let mut out = Vec::new();
        Self::init(config, 0)?.for_each(|t| out.push((t.name, t.shape)));
        Ok(out)
    }

    /// Checks shapes against the config and that every value is finite.
    pub fn validate(&self) -> Result<(), PolicyError> {
        let expected = Self::expected_shapes(&self.config)?;
        let mut actual = Vec::new();
        let mut finite = true;
        self.for_each(|t| {
            finite &= t.data.iter().all(|v| v.is_finite());
            actual.push((t.name, t.shape));
        });
        if actual != expected {
            return Err(PolicyError::ShapeMismatch("weights do not match model config".into()));
        }
        if !finite {
            return Err(PolicyError::ShapeMismatch("non-finite weight".into()));
        }
        Ok(())
    }
}

/// Sinusoidal position table, `seq_len x d`.
pub fn positional_table(seq_len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((seq_len, d), |(pos, i)| {
        let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * freq;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Accumulates `dW += x^T dy`, `db += sum dy` and returns `dx = dy W^T`.
fn linear_back(x: &Array2<f64>, w: &Array2<f64>, dy: &Array2<f64>, dw: &mut Array2<f64>, db: &mut Array1<f64>) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * &rstd.view().insert_axis(Axis(1));
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_back(c: &LnCache, g: &Array1<f64>, dy: &Array2<f64>, dg: &mut Array1<f64>, db: &mut Array1<f64>) -> Array2<f64> {
    *dg += &(dy * &c.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let d = dxhat.ncols() as f64;
    let m1 = dxhat.sum_axis(Axis(1)) / d;
    let m2 = (&dxhat * &c.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &m1.view().insert_axis(Axis(1)) - &(&c.xhat * &m2.view().insert_axis(Axis(1)));
    dx *= &c.rstd.view().insert_axis(Axis(1));
    dx
}

/// Dropout state: `None` at inference.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    /// Inverted-dropout scale mask.
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        Some(Array2::from_shape_fn((rows, cols), |_| {
            if self.rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        }))
    }
}

struct LayerCache {
    x_in: Array2<f64>,
    ln1: LnCache,
    n1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Post-softmax attention per (sample, head), before dropout.
    probs: Vec<Array2<f64>>,
    prob_masks: Vec<Option<Array2<f64>>>,
    attn: Array2<f64>,
    x_mid: Array2<f64>,
    ln2: LnCache,
    n2: Array2<f64>,
    f1: Array2<f64>,
    ff_mask: Option<Array2<f64>>,
    g: Array2<f64>,
}

/// Activations of one batch forward pass, kept for the backward pass.
pub struct ForwardCache {
    batch: usize,
    tokens: Array2<f64>,
    a1: Array2<f64>,
    h1: Array2<f64>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    pooled: Array2<f64>,
    pub logits: Array2<f64>,
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

/// Forward pass over a batch. `tokens` stacks `batch` sequences of
/// `seq_len` rows with two features each.
pub fn forward_batch(w: &PolicyWeights, tokens: ArrayView2<'_, f64>, mut dropout: Option<Dropout<'_>>) -> ForwardCache {
    let c = &w.config;
    let (t_len, d, heads, dh) = (c.seq_len, c.d_model, c.heads, c.head_dim());
    let batch = tokens.nrows() / t_len;
    let tokens = tokens.to_owned();
    let a1 = linear(&tokens, &w.embed_w1, &w.embed_b1);
    let h1 = a1.mapv(gelu);
    let mut x = linear(&h1, &w.embed_w2, &w.embed_b2);
    if c.positional_encoding {
        let pe = positional_table(t_len, d);
        for b in 0..batch {
            let mut xs = x.slice_mut(s![b * t_len..(b + 1) * t_len, ..]);
            xs += &pe;
        }
    }
    let scale = 1.0 / (dh as f64).sqrt();
    let mut layers = Vec::with_capacity(c.layers);
    for l in &w.layers {
        let x_in = x;
        let (n1, ln1) = layer_norm(&x_in, &l.ln1_g, &l.ln1_b);
        let q = linear(&n1, &l.wq, &l.bq);
        let k = linear(&n1, &l.wk, &l.bk);
        let v = linear(&n1, &l.wv, &l.bv);
        let mut attn = Array2::zeros((batch * t_len, d));
        let mut probs = Vec::with_capacity(batch * heads);
        let mut prob_masks = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let rows = b * t_len..(b + 1) * t_len;
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let mut p = qh.dot(&kh.t()) * scale;
                softmax_rows(&mut p);
                let mask = dropout.as_mut().and_then(|dr| dr.mask(t_len, t_len));
                let out = match &mask {
                    Some(m) => (&p * m).dot(&vh),
                    None => p.dot(&vh),
                };
                attn.slice_mut(s![rows.clone(), cols]).assign(&out);
                probs.push(p);
                prob_masks.push(mask);
            }
        }
        let x_mid = &x_in + &linear(&attn, &l.wo, &l.bo);
        let (n2, ln2) = layer_norm(&x_mid, &l.ln2_g, &l.ln2_b);
        let f1 = linear(&n2, &l.w1, &l.b1);
        let mut g = f1.mapv(gelu);
        let ff_mask = dropout.as_mut().and_then(|dr| dr.mask(g.nrows(), g.ncols()));
        if let Some(m) = &ff_mask {
            g *= m;
        }
        x = &x_mid + &linear(&g, &l.w2, &l.b2);
        layers.push(LayerCache {
            x_in,
            ln1,
            n1,
            q,
            k,
            v,
            probs,
            prob_masks,
            attn,
            x_mid,
            ln2,
            n2,
            f1,
            ff_mask,
            g,
        });
    }
    let (nf, lnf) = layer_norm(&x, &w.lnf_g, &w.lnf_b);
    let pooled = Array2::from_shape_fn((batch, d), |(b, j)| {
        nf.slice(s![b * t_len..(b + 1) * t_len, j]).sum() / t_len as f64
    });
    let logits = linear(&pooled, &w.head_w, &w.head_b);
    ForwardCache {
        batch,
        tokens,
        a1,
        h1,
        layers,
        lnf,
        pooled,
        logits,
    }
}

/// Row-wise softmax of logits.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    softmax_rows(&mut p);
    p
}

/// Mean cross-entropy of the batch and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = labels.len() as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.mapv(|v| (v - m).exp()).sum().ln();
        loss += lse - row[y];
        grad[[i, y]] -= 1.0;
    }
    (loss / n, grad / n)
}

/// Backward pass; adds parameter gradients of `dlogits` into `grads`.
pub fn backward_batch(w: &PolicyWeights, cache: &ForwardCache, dlogits: &Array2<f64>, grads: &mut PolicyWeights) {
    let c = &w.config;
    let (t_len, d, heads, dh) = (c.seq_len, c.d_model, c.heads, c.head_dim());
    let batch = cache.batch;
    let dpooled = linear_back(&cache.pooled, &w.head_w, dlogits, &mut grads.head_w, &mut grads.head_b);
    let mut dnf = Array2::zeros((batch * t_len, d));
    for b in 0..batch {
        let row = dpooled.row(b).mapv(|v| v / t_len as f64);
        dnf.slice_mut(s![b * t_len..(b + 1) * t_len, ..]).assign(&row.broadcast((t_len, d)).expect("broadcast"));
    }
    let mut dx = layer_norm_back(&cache.lnf, &w.lnf_g, &dnf, &mut grads.lnf_g, &mut grads.lnf_b);
    let scale = 1.0 / (dh as f64).sqrt();
    for ((l, lc), gl) in w.layers.iter().zip(&cache.layers).zip(grads.layers.iter_mut()).rev() {
        // feed-forward residual
        let mut dg = linear_back(&lc.g, &l.w2, &dx, &mut gl.w2, &mut gl.b2);
        if let Some(m) = &lc.ff_mask {
            dg *= m;
        }
        let df1 = dg * &lc.f1.mapv(gelu_grad);
        let dn2 = linear_back(&lc.n2, &l.w1, &df1, &mut gl.w1, &mut gl.b1);
        dx += &layer_norm_back(&lc.ln2, &l.ln2_g, &dn2, &mut gl.ln2_g, &mut gl.ln2_b);
        // attention residual
        let dattn = linear_back(&lc.attn, &l.wo, &dx, &mut gl.wo, &mut gl.bo);
        let mut dq = Array2::zeros((batch * t_len, d));
        let mut dk = Array2::zeros((batch * t_len, d));
        let mut dv = Array2::zeros((batch * t_len, d));
        for b in 0..batch {
            let rows = b * t_len..(b + 1) * t_len;
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let idx = b * heads + h;
                let p = &lc.probs[idx];
                let pd = match &lc.prob_masks[idx] {
                    Some(m) => p * m,
                    None => p.clone(),
                };
                let dout = dattn.slice(s![rows.clone(), cols.clone()]);
                let vh = lc.v.slice(s![rows.clone(), cols.clone()]);
                let qh = lc.q.slice(s![rows.clone(), cols.clone()]);
                let kh = lc.k.slice(s![rows.clone(), cols.clone()]);
                dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&pd.t().dot(&dout));
                let mut dp = dout.dot(&vh.t());
                if let Some(m) = &lc.prob_masks[idx] {
                    dp *= m;
                }
                let rowdot = (&dp * p).sum_axis(Axis(1));
                let ds = (dp - &rowdot.insert_axis(Axis(1))) * p * scale;
                dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kh));
                dk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qh));
            }
        }
        let mut dn1 = linear_back(&lc.n1, &l.wq, &dq, &mut gl.wq, &mut gl.bq);
        dn1 += &linear_back(&lc.n1, &l.wk, &dk, &mut gl.wk, &mut gl.bk);
        dn1 += &linear_back(&lc.n1, &l.wv, &dv, &mut gl.wv, &mut gl.bv);
        let dres = layer_norm_back(&lc.ln1, &l.ln1_g, &dn1, &mut gl.ln1_g, &mut gl.ln1_b);
        dx += &dres;
        debug_assert_eq!(lc.x_in.dim(), dx.dim());
        let _ = &lc.x_mid;
    }
    // positional table is constant; embedding MLP
    let dh1 = linear_back(&cache.h1, &w.embed_w2, &dx, &mut grads.embed_w2, &mut grads.embed_b2);
    let da1 = dh1 * &cache.a1.mapv(gelu_grad);
    linear_back(&cache.tokens, &w.embed_w1, &da1, &mut grads.embed_w1, &mut grads.embed_b1);
}

/// Stacks the token rows of several states.
pub fn tokens_of<'a>(states: impl Iterator<Item = &'a SegmentState>) -> Array2<f64> {
    let rows: Vec<[f64; 2]> = states.flat_map(|s| s.tokens().collect::<Vec<_>>()).collect();
    Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j])
}

/// Logits for one state at inference.
pub fn forward(w: &PolicyWeights, state: &SegmentState) -> Result<[f64; Action::COUNT], PolicyError> {
    w.validate()?;
    if w.config.seq_len != state.h.len() {
        return Err(PolicyError::ShapeMismatch(format!(
            "model expects {} steps, state has {}",
            w.config.seq_len,
            state.h.len()
        )));
    }
    let cache = forward_batch(w, tokens_of(std::iter::once(state)).view(), None);
    Ok(std::array::from_fn(|i| cache.logits[[0, i]]))
}

/// Index of the largest logit; ties go to the lower index (smaller limit).
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn infer(w: &PolicyWeights, state: &SegmentState) -> Result<Action, PolicyError> {
    let logits = forward(w, state)?;
    Ok(Action::from_index(argmax(&logits)).expect("four logits"))
}
