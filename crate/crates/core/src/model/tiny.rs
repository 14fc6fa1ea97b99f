//! A small post-LayerNorm transformer encoder with a mean-pooled linear
//! classification head, implemented with explicit backward passes in f64.
//!
//! Single-threaded and seeded, so training is bit-reproducible on one machine.

use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tokenizer::EncodedInput;

const LN_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub max_positions: usize,
    pub type_vocab: usize,
    pub num_labels: usize,
}

impl TinyConfig {
    /// 2 layers, 4 heads, 64 hidden units, 128-unit feed-forward blocks.
    pub fn standard(vocab_size: usize, max_positions: usize, num_labels: usize) -> Self {
        Self { vocab_size, hidden: 64, heads: 4, layers: 2, ffn: 128, max_positions, type_vocab: 3, num_labels }
    }
}

/// A trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    /// Subject to decoupled weight decay (weights, not biases or norms).
    pub decay: bool,
}

impl Param {
    fn normal(name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, INIT_STD).expect("valid std");
        let value = Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng));
        Self { name: name.to_string(), grad: Array2::zeros((rows, cols)), value, decay: true }
    }

    fn constant(name: &str, cols: usize, fill: f64) -> Self {
        Self {
            name: name.to_string(),
            value: Array2::from_elem((1, cols), fill),
            grad: Array2::zeros((1, cols)),
            decay: false,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Clone, Debug)]
struct Block {
    wq: Param,
    bq: Param,
    wk: Param,
    bk: Param,
    wv: Param,
    bv: Param,
    wo: Param,
    bo: Param,
    ln1_g: Param,
    ln1_b: Param,
    w1: Param,
    b1: Param,
    w2: Param,
    b2: Param,
    ln2_g: Param,
    ln2_b: Param,
}

impl Block {
    fn new(i: usize, cfg: &TinyConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = cfg.hidden;
        let n = |s: &str| format!("layer{i}.{s}");
        Self {
            wq: Param::normal(&n("wq"), h, h, rng),
            bq: Param::constant(&n("bq"), h, 0.0),
            wk: Param::normal(&n("wk"), h, h, rng),
            bk: Param::constant(&n("bk"), h, 0.0),
            wv: Param::normal(&n("wv"), h, h, rng),
            bv: Param::constant(&n("bv"), h, 0.0),
            wo: Param::normal(&n("wo"), h, h, rng),
            bo: Param::constant(&n("bo"), h, 0.0),
            ln1_g: Param::constant(&n("ln1_g"), h, 1.0),
            ln1_b: Param::constant(&n("ln1_b"), h, 0.0),
            w1: Param::normal(&n("w1"), h, cfg.ffn, rng),
            b1: Param::constant(&n("b1"), cfg.ffn, 0.0),
            w2: Param::normal(&n("w2"), cfg.ffn, h, rng),
            b2: Param::constant(&n("b2"), h, 0.0),
            ln2_g: Param::constant(&n("ln2_g"), h, 1.0),
            ln2_b: Param::constant(&n("ln2_b"), h, 0.0),
        }
    }

    fn params(&self) -> [&Param; 16] {
        [
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln1_g,
            &self.ln1_b,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln2_g,
            &self.ln2_b,
        ]
    }

    fn params_mut(&mut self) -> [&mut Param; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_g,
            &mut self.ln2_b,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct TinyEncoder {
    config: TinyConfig,
    tok_emb: Param,
    pos_emb: Param,
    type_emb: Param,
    emb_ln_g: Param,
    emb_ln_b: Param,
    blocks: Vec<Block>,
    head_w: Param,
    head_b: Param,
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct BlockCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ln1: LnCache,
    h1: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
    ln2: LnCache,
}

struct ForwardCache {
    ids: Vec<usize>,
    segments: Vec<usize>,
    emb_ln: LnCache,
    emb_mask: Option<Array2<f64>>,
    blocks: Vec<BlockCache>,
    seq_len: usize,
    pooled: Array2<f64>,
    pool_mask: Option<Array2<f64>>,
}

/// Dropout probability plus the generator drawing the masks.
pub struct DropoutState<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn dropout_mask(shape: (usize, usize), dropout: &mut Option<DropoutState<'_>>) -> Option<Array2<f64>> {
    let state = dropout.as_mut().filter(|d| d.rate > 0.0)?;
    let keep = 1.0 - state.rate;
    let scale = 1.0 / keep;
    Some(Array2::from_shape_simple_fn(shape, || if state.rng.gen::<f64>() < keep { scale } else { 0.0 }))
}

fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

fn layer_norm(x: &Array2<f64>, gamma: &Param, beta: &Param) -> (Array2<f64>, LnCache) {
    let cols = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / cols;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * *inv);
    }
    let y = &xhat * &gamma.value + &beta.value;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(dy: &Array2<f64>, cache: &LnCache, gamma: &mut Param, beta: &mut Param) -> Array2<f64> {
    gamma.grad += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * &gamma.value;
    let cols = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for r in 0..dy.nrows() {
        let g = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let mean_g = g.sum() / cols;
        let mean_gx = (&g * &xh).sum() / cols;
        let inv = cache.inv_std[r];
        dx.row_mut(r).assign(&((&g - mean_g - &(&xh * mean_gx)) * inv));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn linear(x: &Array2<f64>, w: &Param, b: &Param) -> Array2<f64> {
    x.dot(&w.value) + &b.value
}

fn linear_backward(x: ArrayView2<f64>, dy: &Array2<f64>, w: &mut Param, b: &mut Param) -> Array2<f64> {
    w.grad += &x.t().dot(dy);
    b.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&w.value.t())
}

fn softmax_rows(mut x: Array2<f64>) -> Array2<f64> {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    x
}

/// Probabilities from logits, numerically stabilised.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl TinyEncoder {
    pub fn new(config: TinyConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = config.hidden;
        assert!(h.is_multiple_of(config.heads), "hidden size must divide evenly across heads");
        let blocks = (0..config.layers).map(|i| Block::new(i, &config, rng)).collect();
        Self {
            tok_emb: Param::normal("tok_emb", config.vocab_size, h, rng),
            pos_emb: Param::normal("pos_emb", config.max_positions, h, rng),
            type_emb: Param::normal("type_emb", config.type_vocab, h, rng),
            emb_ln_g: Param::constant("emb_ln_g", h, 1.0),
            emb_ln_b: Param::constant("emb_ln_b", h, 0.0),
            blocks,
            head_w: Param::normal("head_w", h, config.num_labels, rng),
            head_b: Param::constant("head_b", config.num_labels, 0.0),
            config,
        }
    }

    pub fn config(&self) -> &TinyConfig {
        &self.config
    }

    /// Appends token-embedding rows initialised to the mean of the existing rows.
    pub fn resize_token_embeddings(&mut self, new_vocab_size: usize) {
        let old = self.config.vocab_size;
        if new_vocab_size <= old {
            return;
        }
        let mean = self.tok_emb.value.mean_axis(Axis(0)).expect("non-empty embedding table");
        let mut value = Array2::zeros((new_vocab_size, self.config.hidden));
        value.slice_mut(s![..old, ..]).assign(&self.tok_emb.value);
        for mut row in value.slice_mut(s![old.., ..]).rows_mut() {
            row.assign(&mean);
        }
        self.tok_emb.grad = Array2::zeros(value.raw_dim());
        self.tok_emb.value = value;
        self.config.vocab_size = new_vocab_size;
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.tok_emb, &self.pos_emb, &self.type_emb, &self.emb_ln_g, &self.emb_ln_b];
        for block in &self.blocks {
            out.extend(block.params());
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> =
            vec![&mut self.tok_emb, &mut self.pos_emb, &mut self.type_emb, &mut self.emb_ln_g, &mut self.emb_ln_b];
        for block in &mut self.blocks {
            out.extend(block.params_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Classification-head weight (`hidden x labels`) and bias (`1 x labels`).
    pub fn head_mut(&mut self) -> (&mut Param, &mut Param) {
        (&mut self.head_w, &mut self.head_b)
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    fn forward(&self, input: &EncodedInput, mut dropout: Option<DropoutState<'_>>) -> (Array1<f64>, ForwardCache) {
        let cfg = &self.config;
        let seq_len = input.ids.len().min(cfg.max_positions);
        let ids: Vec<usize> = input.ids[..seq_len].iter().map(|&i| i as usize).collect();
        let segments: Vec<usize> =
            input.segment_ids[..seq_len].iter().map(|&s| (s as usize).min(cfg.type_vocab - 1)).collect();

        let mut x = Array2::zeros((seq_len, cfg.hidden));
        for (p, mut row) in x.rows_mut().into_iter().enumerate() {
            row += &self.tok_emb.value.row(ids[p]);
            row += &self.pos_emb.value.row(p);
            row += &self.type_emb.value.row(segments[p]);
        }
        let (h, emb_ln) = layer_norm(&x, &self.emb_ln_g, &self.emb_ln_b);
        let emb_mask = dropout_mask(h.dim(), &mut dropout);
        let mut h = apply_mask(h, &emb_mask);

        let head_dim = cfg.hidden / cfg.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let q = linear(&h, &block.wq, &block.bq);
            let k = linear(&h, &block.wk, &block.bk);
            let v = linear(&h, &block.wv, &block.bv);
            let mut ctx = Array2::zeros((seq_len, cfg.hidden));
            let mut probs = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let cols = s![.., head * head_dim..(head + 1) * head_dim];
                let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                let p = softmax_rows(scores);
                ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
                probs.push(p);
            }
            let attn_out = linear(&ctx, &block.wo, &block.bo);
            let attn_mask = dropout_mask(attn_out.dim(), &mut dropout);
            let r1 = &h + &apply_mask(attn_out, &attn_mask);
            let (h1, ln1) = layer_norm(&r1, &block.ln1_g, &block.ln1_b);

            let pre_act = linear(&h1, &block.w1, &block.b1);
            let act = pre_act.mapv(gelu);
            let ffn_out = linear(&act, &block.w2, &block.b2);
            let ffn_mask = dropout_mask(ffn_out.dim(), &mut dropout);
            let r2 = &h1 + &apply_mask(ffn_out, &ffn_mask);
            let (h2, ln2) = layer_norm(&r2, &block.ln2_g, &block.ln2_b);

            block_caches.push(BlockCache {
                input: h,
                q,
                k,
                v,
                probs,
                ctx,
                attn_mask,
                ln1,
                h1,
                pre_act,
                act,
                ffn_mask,
                ln2,
            });
            h = h2;
        }

        let pooled = h.mean_axis(Axis(0)).expect("non-empty sequence").insert_axis(Axis(0));
        let pool_mask = dropout_mask((1, cfg.hidden), &mut dropout);
        let pooled = apply_mask(pooled, &pool_mask);
        let logits = linear(&pooled, &self.head_w, &self.head_b).remove_axis(Axis(0));
        let cache = ForwardCache { ids, segments, emb_ln, emb_mask, blocks: block_caches, seq_len, pooled, pool_mask };
        (logits, cache)
    }

    fn backward(&mut self, cache: ForwardCache, dlogits: &Array1<f64>) {
        let cfg = self.config.clone();
        let dlogits = dlogits.view().insert_axis(Axis(0)).to_owned();
        let dpooled = linear_backward(cache.pooled.view(), &dlogits, &mut self.head_w, &mut self.head_b);
        let dpooled = apply_mask(dpooled, &cache.pool_mask);
        let mut dh = Array2::zeros((cache.seq_len, cfg.hidden));
        let inv_len = 1.0 / cache.seq_len as f64;
        for mut row in dh.rows_mut() {
            row.assign(&(&dpooled.row(0) * inv_len));
        }

        let head_dim = cfg.hidden / cfg.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        for (block, bc) in self.blocks.iter_mut().zip(cache.blocks).rev() {
            let dr2 = layer_norm_backward(&dh, &bc.ln2, &mut block.ln2_g, &mut block.ln2_b);
            let dffn = apply_mask(dr2.clone(), &bc.ffn_mask);
            let dact = linear_backward(bc.act.view(), &dffn, &mut block.w2, &mut block.b2);
            let dpre = dact * &bc.pre_act.mapv(gelu_grad);
            let dh1 = dr2 + linear_backward(bc.h1.view(), &dpre, &mut block.w1, &mut block.b1);

            let dr1 = layer_norm_backward(&dh1, &bc.ln1, &mut block.ln1_g, &mut block.ln1_b);
            let dattn = apply_mask(dr1.clone(), &bc.attn_mask);
            let dctx = linear_backward(bc.ctx.view(), &dattn, &mut block.wo, &mut block.bo);

            let mut dq = Array2::zeros(bc.q.raw_dim());
            let mut dk = Array2::zeros(bc.k.raw_dim());
            let mut dv = Array2::zeros(bc.v.raw_dim());
            for (head, p) in bc.probs.iter().enumerate() {
                let cols = s![.., head * head_dim..(head + 1) * head_dim];
                let dctx_h = dctx.slice(cols);
                let dp = dctx_h.dot(&bc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
                let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = (p * &(dp - &row_dot)) * scale;
                dq.slice_mut(cols).assign(&ds.dot(&bc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&bc.q.slice(cols)));
            }
            let mut dinput = dr1;
            dinput += &linear_backward(bc.input.view(), &dq, &mut block.wq, &mut block.bq);
            dinput += &linear_backward(bc.input.view(), &dk, &mut block.wk, &mut block.bk);
            dinput += &linear_backward(bc.input.view(), &dv, &mut block.wv, &mut block.bv);
            dh = dinput;
        }

        let dh = apply_mask(dh, &cache.emb_mask);
        let dx = layer_norm_backward(&dh, &cache.emb_ln, &mut self.emb_ln_g, &mut self.emb_ln_b);
        for (p, row) in dx.rows().into_iter().enumerate() {
            let mut tok = self.tok_emb.grad.row_mut(cache.ids[p]);
            tok += &row;
            let mut pos = self.pos_emb.grad.row_mut(p);
            pos += &row;
            let mut ty = self.type_emb.grad.row_mut(cache.segments[p]);
            ty += &row;
        }
    }

    /// Inference-mode logits.
    pub fn logits(&self, input: &EncodedInput) -> Vec<f64> {
        self.forward(input, None).0.to_vec()
    }

    pub fn probabilities(&self, input: &EncodedInput) -> Vec<f64> {
        softmax(&self.logits(input))
    }

    /// Mean cross-entropy over the batch in inference mode.
    pub fn loss(&self, batch: &[(&EncodedInput, usize)]) -> f64 {
        batch.iter().map(|(input, label)| cross_entropy(&self.forward(input, None).0, *label).0).sum::<f64>()
            / batch.len() as f64
    }

    /// Mean cross-entropy over the batch; accumulates its gradient into every
    /// parameter. Dropout is active when `dropout` is given.
    pub fn loss_and_backward(
        &mut self,
        batch: &[(&EncodedInput, usize)],
        mut dropout: Option<DropoutState<'_>>,
    ) -> f64 {
        let inv_batch = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (input, label) in batch {
            let state = dropout.as_mut().map(|d| DropoutState { rate: d.rate, rng: &mut *d.rng });
            let (logits, cache) = self.forward(input, state);
            let (loss, dlogits) = cross_entropy(&logits, *label);
            total += loss;
            self.backward(cache, &(dlogits * inv_batch));
        }
        total * inv_batch
    }

    pub fn write_weights(&self, mut out: impl Write) -> std::io::Result<()> {
        for p in self.params() {
            for v in p.value.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()
    }

    pub fn read_weights(&mut self, mut input: impl Read) -> std::io::Result<()> {
        let mut buf = [0u8; 8];
        for p in self.params_mut() {
            for v in p.value.iter_mut() {
                input.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        if input.read(&mut buf)? != 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "trailing bytes in weight blob"));
        }
        Ok(())
    }
}

/// Loss and gradient with respect to the logits.
fn cross_entropy(logits: &Array1<f64>, label: usize) -> (f64, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let log_sum = logits.mapv(|v| (v - max).exp()).sum().ln() + max;
    // Non-finite logits stay non-finite here so training can abort on them.
    let loss = log_sum - logits[label];
    let probs = Array1::from(softmax(logits.as_slice().expect("contiguous logits")));
    let mut grad = probs;
    grad[label] -= 1.0;
    (loss, grad)
}
