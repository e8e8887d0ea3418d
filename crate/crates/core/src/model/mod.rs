//! Shared transformer encoder, autoregressive decoder and region selector.

mod checkpoint;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::featurize::{EmbeddingTables, TokenId, Vocabulary};

pub use checkpoint::{Checkpoint, TaskFlags, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::content_hash;

/// Encoder output, one row per input position.
pub type HiddenStates = Array2<f64>;

const MASKED: f64 = -1e30;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub feedforward_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub roi_dim: usize,
    pub bos_id: TokenId,
    pub eos_id: TokenId,
}

impl ModelConfig {
    /// Two layers, 64 hidden units, four heads.
    pub fn tiny(vocab: &Vocabulary, roi_dim: usize) -> Self {
        ModelConfig {
            hidden_dim: 64,
            n_layers: 2,
            n_heads: 4,
            feedforward_dim: 256,
            dropout: 0.0,
            vocab_size: vocab.len(),
            max_positions: 576,
            roi_dim,
            bos_id: vocab.specials().bos,
            eos_id: vocab.specials().eos,
        }
    }

    /// Twelve layers, 768 hidden units, twelve heads.
    pub fn base(vocab: &Vocabulary, roi_dim: usize) -> Self {
        ModelConfig {
            hidden_dim: 768,
            n_layers: 12,
            n_heads: 12,
            feedforward_dim: 3072,
            dropout: 0.1,
            ..Self::tiny(vocab, roi_dim)
        }
    }

    pub fn profile(name: &str, vocab: &Vocabulary, roi_dim: usize) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny(vocab, roi_dim)),
            "base" => Ok(Self::base(vocab, roi_dim)),
            other => Err(Error::InvalidArgument(format!("unknown model profile {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.hidden_dim == 0 || self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "hidden_dim {} is not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if self.n_layers == 0 || self.feedforward_dim == 0 || self.max_positions == 0 {
            return bad("n_layers, feedforward_dim and max_positions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if (self.bos_id as usize) >= self.vocab_size || (self.eos_id as usize) >= self.vocab_size {
            return bad("bos/eos ids outside the vocabulary".into());
        }
        Ok(())
    }
}

/// Random state for dropout. `None` everywhere means evaluation mode.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    ff: FeedForward,
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    ln1: Norm,
    self_attn: Attention,
    ln2: Norm,
    cross_attn: Attention,
    ln3: Norm,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
struct Layout {
    tables: EmbeddingTables,
    enc_pos: ParamId,
    enc_layers: Vec<EncoderLayer>,
    enc_ln: Norm,
    dec_pos: ParamId,
    dec_layers: Vec<DecoderLayer>,
    dec_ln: Norm,
    lm_head: ParamId,
    sel_w: ParamId,
    sel_b: ParamId,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Builder<'_> {
    fn normal(&mut self, name: String, r: usize, c: usize) -> ParamId {
        let m = Mat::from_shape_fn((r, c), |_| self.normal.sample(&mut self.rng));
        self.store.add(name, m)
    }

    fn zeros(&mut self, name: String, r: usize, c: usize) -> ParamId {
        self.store.add(name, Mat::zeros((r, c)))
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            g: self.store.add(format!("{prefix}.g"), Mat::ones((1, d))),
            b: self.zeros(format!("{prefix}.b"), 1, d),
        }
    }

    fn attention(&mut self, prefix: &str, d: usize) -> Attention {
        Attention {
            wq: self.normal(format!("{prefix}.wq"), d, d),
            bq: self.zeros(format!("{prefix}.bq"), 1, d),
            wk: self.normal(format!("{prefix}.wk"), d, d),
            bk: self.zeros(format!("{prefix}.bk"), 1, d),
            wv: self.normal(format!("{prefix}.wv"), d, d),
            bv: self.zeros(format!("{prefix}.bv"), 1, d),
            wo: self.normal(format!("{prefix}.wo"), d, d),
            bo: self.zeros(format!("{prefix}.bo"), 1, d),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, ff: usize) -> FeedForward {
        FeedForward {
            w1: self.normal(format!("{prefix}.w1"), d, ff),
            b1: self.zeros(format!("{prefix}.b1"), 1, ff),
            w2: self.normal(format!("{prefix}.w2"), ff, d),
            b2: self.zeros(format!("{prefix}.b2"), 1, d),
        }
    }
}

/// Model parameters plus the handles used to run them.
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
    encoder_passes: AtomicU64,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            params: self.params.clone(),
            layout: self.layout.clone(),
            encoder_passes: AtomicU64::new(0),
        }
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("n_params", &self.params.n_scalars())
            .finish()
    }
}

impl Model {
    /// Seeded normal(0, 0.02) initialization, rounded to `f32`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        };
        let d = config.hidden_dim;
        let tables = {
            let rng = &mut b.rng;
            let normal = b.normal;
            EmbeddingTables::register(b.store, config.vocab_size, d, config.roi_dim, |r, c| {
                Mat::from_shape_fn((r, c), |_| normal.sample(rng))
            })
        };
        let enc_pos = b.normal("enc.pos".into(), config.max_positions, d);
        let enc_layers = (0..config.n_layers)
            .map(|i| EncoderLayer {
                ln1: b.norm(&format!("enc.{i}.ln1"), d),
                attn: b.attention(&format!("enc.{i}.attn"), d),
                ln2: b.norm(&format!("enc.{i}.ln2"), d),
                ff: b.ff(&format!("enc.{i}.ff"), d, config.feedforward_dim),
            })
            .collect();
        let enc_ln = b.norm("enc.ln", d);
        let dec_pos = b.normal("dec.pos".into(), config.max_positions, d);
        let dec_layers = (0..config.n_layers)
            .map(|i| DecoderLayer {
                ln1: b.norm(&format!("dec.{i}.ln1"), d),
                self_attn: b.attention(&format!("dec.{i}.self"), d),
                ln2: b.norm(&format!("dec.{i}.ln2"), d),
                cross_attn: b.attention(&format!("dec.{i}.cross"), d),
                ln3: b.norm(&format!("dec.{i}.ln3"), d),
                ff: b.ff(&format!("dec.{i}.ff"), d, config.feedforward_dim),
            })
            .collect();
        let dec_ln = b.norm("dec.ln", d);
        let lm_head = b.normal("lm_head".into(), d, config.vocab_size);
        let sel_w = b.normal("selector.w".into(), d, 1);
        let sel_b = b.zeros("selector.b".into(), 1, 1);
        params.round_to_f32();
        Ok(Model {
            config,
            params,
            layout: Layout {
                tables,
                enc_pos,
                enc_layers,
                enc_ln,
                dec_pos,
                dec_layers,
                dec_ln,
                lm_head,
                sel_w,
                sel_b,
            },
            encoder_passes: AtomicU64::new(0),
        })
    }

    pub fn tables(&self) -> &EmbeddingTables {
        &self.layout.tables
    }

    /// Region-selector weight and bias.
    pub fn selector_params(&self) -> (ParamId, ParamId) {
        (self.layout.sel_w, self.layout.sel_b)
    }

    /// Number of encoder forward passes run so far.
    pub fn encoder_passes(&self) -> u64 {
        self.encoder_passes.load(Ordering::Relaxed)
    }

    pub fn tape(&self) -> Tape<'_> {
        Tape::new(&self.params)
    }

    fn check_tape(&self, t: &Tape) {
        debug_assert!(std::ptr::eq(t.store(), &self.params), "tape built over another parameter store");
    }

    fn dropout(&self, t: &mut Tape, x: Var, rng: &mut DropoutRng) -> Var {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let (r, c) = t.shape(x);
                let mask = Mat::from_shape_fn((r, c), |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
                t.mul_const(x, mask)
            }
            _ => x,
        }
    }

    fn layer_norm(&self, t: &mut Tape, x: Var, n: Norm) -> Var {
        let g = t.param(n.g);
        let b = t.param(n.b);
        t.layer_norm(x, g, b)
    }

    fn linear(&self, t: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = t.param(w);
        let b = t.param(b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }

    /// Multi-head attention with an additive `Lq × Lk` mask.
    fn attention(&self, t: &mut Tape, a: &Attention, xq: Var, xkv: Var, mask: &Mat) -> Var {
        let q = self.linear(t, xq, a.wq, a.bq);
        let k = self.linear(t, xkv, a.wk, a.bk);
        let v = self.linear(t, xkv, a.wv, a.bv);
        let h = self.config.n_heads;
        let dh = self.config.hidden_dim / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(h);
        for i in 0..h {
            let qi = t.slice_cols(q, i * dh, dh);
            let ki = t.slice_cols(k, i * dh, dh);
            let vi = t.slice_cols(v, i * dh, dh);
            let s = t.matmul_bt(qi, ki);
            let s = t.scale(s, scale);
            let s = t.add_const(s, mask);
            let p = t.softmax_rows(s);
            heads.push(t.matmul(p, vi));
        }
        let cat = t.concat_cols(&heads);
        self.linear(t, cat, a.wo, a.bo)
    }

    fn feed_forward(&self, t: &mut Tape, f: &FeedForward, x: Var) -> Var {
        let h = self.linear(t, x, f.w1, f.b1);
        let h = t.gelu(h);
        self.linear(t, h, f.w2, f.b2)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::Shape("empty input sequence".into()));
        }
        if len > self.config.max_positions {
            return Err(Error::Shape(format!(
                "sequence of {len} exceeds max_positions {}",
                self.config.max_positions
            )));
        }
        Ok(())
    }

    /// Runs the encoder over an embedding matrix. `mask[i]` is false for
    /// padding rows, which are never attended to.
    pub fn encode(&self, t: &mut Tape, emb: Var, mask: &[bool], mut rng: DropoutRng) -> Result<Var> {
        self.check_tape(t);
        let (len, d) = t.shape(emb);
        self.check_len(len)?;
        if d != self.config.hidden_dim {
            return Err(Error::Shape(format!("embedding width {d}, model expects {}", self.config.hidden_dim)));
        }
        if mask.len() != len {
            return Err(Error::Shape(format!("mask of {} for {len} rows", mask.len())));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Shape("attention mask hides every row".into()));
        }
        if t.value(emb).iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite value in encoder input".into()));
        }
        self.encoder_passes.fetch_add(1, Ordering::Relaxed);
        let key_mask = Mat::from_shape_fn((len, len), |(_, j)| if mask[j] { 0.0 } else { MASKED });
        let positions: Vec<usize> = (0..len).collect();
        let pos = t.gather(self.layout.enc_pos, &positions);
        let x = t.add(emb, pos);
        let mut x = self.dropout(t, x, &mut rng);
        for layer in &self.layout.enc_layers {
            let h = self.layer_norm(t, x, layer.ln1);
            let h = self.attention(t, &layer.attn, h, h, &key_mask);
            let h = self.dropout(t, h, &mut rng);
            x = t.add(x, h);
            let h = self.layer_norm(t, x, layer.ln2);
            let h = self.feed_forward(t, &layer.ff, h);
            let h = self.dropout(t, h, &mut rng);
            x = t.add(x, h);
        }
        Ok(self.layer_norm(t, x, self.layout.enc_ln))
    }

    /// Decoder logits (`len(inputs) × vocab_size`) under teacher forcing.
    pub fn decode_logits(&self, t: &mut Tape, h: Var, inputs: &[TokenId], mut rng: DropoutRng) -> Result<Var> {
        self.check_tape(t);
        let len = inputs.len();
        self.check_len(len)?;
        if let Some(&bad) = inputs.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!("decoder input id {bad} outside vocabulary")));
        }
        let enc_len = t.shape(h).0;
        let causal = Mat::from_shape_fn((len, len), |(i, j)| if j <= i { 0.0 } else { MASKED });
        let cross = Mat::zeros((len, enc_len));
        let ids: Vec<usize> = inputs.iter().map(|&i| i as usize).collect();
        let tok = t.gather(self.layout.tables.token, &ids);
        let positions: Vec<usize> = (0..len).collect();
        let pos = t.gather(self.layout.dec_pos, &positions);
        let x = t.add(tok, pos);
        let mut x = self.dropout(t, x, &mut rng);
        for layer in &self.layout.dec_layers {
            let y = self.layer_norm(t, x, layer.ln1);
            let y = self.attention(t, &layer.self_attn, y, y, &causal);
            let y = self.dropout(t, y, &mut rng);
            x = t.add(x, y);
            let y = self.layer_norm(t, x, layer.ln2);
            let y = self.attention(t, &layer.cross_attn, y, h, &cross);
            let y = self.dropout(t, y, &mut rng);
            x = t.add(x, y);
            let y = self.layer_norm(t, x, layer.ln3);
            let y = self.feed_forward(t, &layer.ff, y);
            let y = self.dropout(t, y, &mut rng);
            x = t.add(x, y);
        }
        let x = self.layer_norm(t, x, self.layout.dec_ln);
        let w = t.param(self.layout.lm_head);
        Ok(t.matmul(x, w))
    }

    /// Teacher-forced negative log-likelihood of `answer` followed by the
    /// end marker, averaged over target positions.
    pub fn decode_loss(&self, t: &mut Tape, h: Var, answer: &[TokenId], rng: DropoutRng) -> Result<Var> {
        let (inputs, targets) = self.teacher_forcing(answer)?;
        let logits = self.decode_logits(t, h, &inputs, rng)?;
        t.cross_entropy(logits, &targets)
    }

    /// Decoder inputs (`<s>` + answer) and targets (answer + `</s>`),
    /// truncated to `max_positions`.
    pub fn teacher_forcing(&self, answer: &[TokenId]) -> Result<(Vec<TokenId>, Vec<usize>)> {
        let keep = answer.len().min(self.config.max_positions - 1);
        let answer = &answer[..keep];
        let mut inputs = Vec::with_capacity(keep + 1);
        inputs.push(self.config.bos_id);
        inputs.extend_from_slice(answer);
        let targets: Vec<usize> = answer
            .iter()
            .chain(std::iter::once(&self.config.eos_id))
            .map(|&i| i as usize)
            .collect();
        if let Some(&bad) = targets.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!("target id {bad} outside vocabulary")));
        }
        Ok((inputs, targets))
    }

    /// Greedy decoding. Stops after emitting the end marker or `max_len`
    /// tokens; the returned ids include the end marker when one was emitted.
    pub fn generate(&self, h: &HiddenStates, max_len: usize) -> Result<Vec<TokenId>> {
        let max_len = max_len.min(self.config.max_positions);
        let mut inputs = vec![self.config.bos_id];
        let mut out = Vec::new();
        while out.len() < max_len {
            let mut t = self.tape();
            let hv = t.constant(h.clone());
            let logits = self.decode_logits(&mut t, hv, &inputs, None)?;
            let lv = t.value(logits);
            let last = lv.row(lv.nrows() - 1);
            let mut best = 0usize;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            let id = best as TokenId;
            out.push(id);
            if id == self.config.eos_id {
                break;
            }
            inputs.push(id);
        }
        Ok(out)
    }

    /// Per-region probabilities (`n × 1`) read at the marker rows of `h`.
    pub fn region_select(&self, t: &mut Tape, h: Var, markers: &[usize]) -> Result<Var> {
        self.check_tape(t);
        let len = t.shape(h).0;
        if let Some(&bad) = markers.iter().find(|&&m| m >= len) {
            return Err(Error::Shape(format!("marker position {bad} outside {len} hidden rows")));
        }
        let rows = t.select_rows(h, markers);
        let logits = self.linear(t, rows, self.layout.sel_w, self.layout.sel_b);
        Ok(t.sigmoid(logits))
    }

    /// Evaluation-mode encoder pass over an embedding matrix.
    pub fn encode_values(&self, emb: &Mat, mask: &[bool]) -> Result<HiddenStates> {
        let mut t = self.tape();
        let e = t.constant(emb.clone());
        let h = self.encode(&mut t, e, mask, None)?;
        Ok(t.value(h).clone())
    }

    /// Evaluation-mode region probabilities.
    pub fn region_probabilities(&self, h: &HiddenStates, markers: &[usize]) -> Result<Vec<f64>> {
        if markers.is_empty() {
            return Ok(Vec::new());
        }
        let mut t = self.tape();
        let hv = t.constant(h.clone());
        let p = self.region_select(&mut t, hv, markers)?;
        Ok(t.value(p).column(0).to_vec())
    }

    /// Sets a parameter by name, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Mat) -> Result<()> {
        let id = self.params.id(name).ok_or_else(|| Error::NotFound {
            kind: "parameter",
            name: name.to_string(),
        })?;
        let cur = self.params.value_mut(id);
        if cur.dim() != value.dim() {
            return Err(Error::Shape(format!(
                "parameter {name} has shape {:?}, got {:?}",
                cur.dim(),
                value.dim()
            )));
        }
        *cur = value;
        Ok(())
    }
}
