//! Pre-norm transformer with a language-model or multilabel head, optional
//! additive conditioning, hand-written backward pass and incremental decoding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{HeadKind, ModelConfig};
use crate::error::NnError;
use crate::linalg::{add_col_sums, add_row, gemm, matmul, View, ViewMut};
use crate::ops::{
    attend_one, attention, attention_backward, gelu, gelu_grad, layer_norm, layer_norm_backward,
    positional_encoding, AttnCache, AttnShape, LayerNormCache,
};
use crate::params::{Gradients, ParamId, ParamStore};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    tok_emb: ParamId,
    cond: Option<(ParamId, ParamId)>,
    layers: Vec<LayerIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

fn layout(c: &ModelConfig) -> (ParamStore, Ids) {
    let mut p = ParamStore::default();
    let (d, f) = (c.d_model, c.d_ff);
    let tok_emb = p.add("tok_emb", vec![c.vocab_size, d]);
    let cond = (c.cond_dim > 0).then(|| (p.add("cond.w", vec![c.cond_dim, d]), p.add("cond.b", vec![d])));
    let layers = (0..c.n_layers)
        .map(|l| {
            let mut add = |name: &str, shape: Vec<usize>| p.add(format!("layers.{l}.{name}"), shape);
            LayerIds {
                ln1_g: add("ln1.g", vec![d]),
                ln1_b: add("ln1.b", vec![d]),
                wq: add("attn.wq", vec![d, d]),
                bq: add("attn.bq", vec![d]),
                wk: add("attn.wk", vec![d, d]),
                bk: add("attn.bk", vec![d]),
                wv: add("attn.wv", vec![d, d]),
                bv: add("attn.bv", vec![d]),
                wo: add("attn.wo", vec![d, d]),
                bo: add("attn.bo", vec![d]),
                ln2_g: add("ln2.g", vec![d]),
                ln2_b: add("ln2.b", vec![d]),
                w1: add("ff.w1", vec![d, f]),
                b1: add("ff.b1", vec![f]),
                w2: add("ff.w2", vec![f, d]),
                b2: add("ff.b2", vec![d]),
            }
        })
        .collect();
    let lnf_g = p.add("ln_f.g", vec![d]);
    let lnf_b = p.add("ln_f.b", vec![d]);
    let head_w = p.add("head.w", vec![d, c.output_dim()]);
    let head_b = p.add("head.b", vec![c.output_dim()]);
    (p, Ids { tok_emb, cond, layers, lnf_g, lnf_b, head_w, head_b })
}

/// Row-major `rows x cols` output scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

struct LayerCache {
    ln1: LayerNormCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: AttnCache,
    att: Vec<f64>,
    drop_attn: Option<Vec<f64>>,
    ln2: LayerNormCache,
    h2: Vec<f64>,
    f_pre: Vec<f64>,
    f_act: Vec<f64>,
    drop_ff: Option<Vec<f64>>,
}

pub(crate) struct Cache {
    tokens: Vec<u32>,
    cond: Option<Vec<f64>>,
    key_valid: Vec<bool>,
    drop_emb: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    lnf: LayerNormCache,
    hf: Vec<f64>,
    pooled: Vec<f64>,
    pool_count: usize,
}

/// Keys and values of the positions decoded so far.
#[derive(Debug, Clone)]
pub struct DecodeState {
    cond_bias: Option<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    key_valid: Vec<bool>,
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.key_valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key_valid.is_empty()
    }
}

fn dropout_mask(rng: Option<&mut ChaCha8Rng>, rate: f64, len: usize) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some((0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect())
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

#[derive(Debug, Clone)]
pub struct Transformer {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
    pe: Vec<f64>,
}

impl Transformer {
    /// Scaled-normal initialization; layer-norm gains start at one, biases
    /// and the conditioning projection at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        use rand::SeedableRng;
        config.validate()?;
        let (mut params, ids) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut randomized = vec![ids.tok_emb, ids.head_w];
        for l in &ids.layers {
            randomized.extend([l.wq, l.wk, l.wv, l.wo, l.w1, l.w2]);
            params.get_mut(l.ln1_g).fill(1.0);
            params.get_mut(l.ln2_g).fill(1.0);
        }
        params.get_mut(ids.lnf_g).fill(1.0);
        for id in randomized {
            params.get_mut(id).iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        }
        params.snap_all();
        let pe = positional_encoding(config.max_seq_len, config.d_model);
        Ok(Transformer { config, params, ids, pe })
    }

    /// Rebuilds a model from named tensors, which must match the layout of
    /// `config` exactly.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, NnError> {
        config.validate()?;
        let (mut expected, ids) = layout(&config);
        if params.tensors.len() != expected.tensors.len() {
            return Err(NnError::MalformedCheckpoint(format!(
                "expected {} tensors, found {}",
                expected.tensors.len(),
                params.tensors.len()
            )));
        }
        for slot in &mut expected.tensors {
            let t = params
                .tensors
                .iter()
                .find(|t| t.name == slot.name)
                .ok_or_else(|| NnError::MalformedCheckpoint(format!("missing tensor {}", slot.name)))?;
            if t.shape != slot.shape {
                return Err(NnError::MalformedCheckpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    t.name, t.shape, slot.shape
                )));
            }
            slot.data.clone_from(&t.data);
        }
        let pe = positional_encoding(config.max_seq_len, config.d_model);
        Ok(Transformer { config, params: expected, ids, pe })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Conditioning projection weight and bias, when the model has one.
    pub fn cond_projection(&self) -> Option<(ParamId, ParamId)> {
        self.ids.cond
    }

    fn check_input(&self, tokens: &[u32], cond: Option<&[f64]>) -> Result<(), NnError> {
        let c = &self.config;
        if tokens.len() > c.max_seq_len {
            return Err(NnError::SequenceTooLong { len: tokens.len(), max: c.max_seq_len });
        }
        if let Some(&token) = tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
            return Err(NnError::TokenOutOfRange { token, vocab_size: c.vocab_size });
        }
        match (cond, c.cond_dim) {
            (Some(v), dim) if v.len() != dim => Err(NnError::ConditioningDimMismatch { expected: dim, found: v.len() }),
            (None, dim) if dim > 0 => Err(NnError::ConditioningDimMismatch { expected: dim, found: 0 }),
            _ => Ok(()),
        }
    }

    fn cond_bias(&self, cond: Option<&[f64]>) -> Option<Vec<f64>> {
        let (w, b) = self.ids.cond?;
        let mut c = matmul(cond?, self.params.get(w), 1, self.config.cond_dim, self.config.d_model);
        add_row(&mut c, self.params.get(b));
        Some(c)
    }

    fn linear(&self, x: &[f64], rows: usize, w: ParamId, b: ParamId, n_in: usize, n_out: usize) -> Vec<f64> {
        let mut y = matmul(x, self.params.get(w), rows, n_in, n_out);
        add_row(&mut y, self.params.get(b));
        y
    }

    /// Logits for every position (language-model head) or a single row of
    /// label logits (multilabel head). `cond` is required exactly when the
    /// model has a conditioning projection.
    pub fn forward(&self, tokens: &[u32], cond: Option<&[f64]>) -> Result<Logits, NnError> {
        Ok(self.forward_cached(tokens, cond, None)?.0)
    }

    pub(crate) fn forward_cached(
        &self,
        tokens: &[u32],
        cond: Option<&[f64]>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Logits, Cache), NnError> {
        self.check_input(tokens, cond)?;
        let c = &self.config;
        let (l, d, f) = (tokens.len(), c.d_model, c.d_ff);
        let p = &self.params;
        let emb = p.get(self.ids.tok_emb);
        let mut x = vec![0.0; l * d];
        for (i, &t) in tokens.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            let e = &emb[t as usize * d..(t as usize + 1) * d];
            for j in 0..d {
                row[j] = e[j] + self.pe[i * d + j];
            }
        }
        if let Some(bias) = self.cond_bias(cond) {
            add_row(&mut x, &bias);
        }
        let drop_emb = dropout_mask(rng.as_deref_mut(), c.dropout_rate, l * d);
        apply_mask(&mut x, &drop_emb);
        let key_valid: Vec<bool> = tokens.iter().map(|&t| t != c.pad_id).collect();
        let shape = AttnShape { kind: c.attention, len: l, d, n_heads: c.n_heads, causal: c.causal, key_valid: &key_valid };

        let mut layers = Vec::with_capacity(c.n_layers);
        for ids in &self.ids.layers {
            let (h1, ln1) = layer_norm(&x, p.get(ids.ln1_g), p.get(ids.ln1_b));
            let q = self.linear(&h1, l, ids.wq, ids.bq, d, d);
            let k = self.linear(&h1, l, ids.wk, ids.bk, d, d);
            let v = self.linear(&h1, l, ids.wv, ids.bv, d, d);
            let (att, attn) = attention(shape, &q, &k, &v);
            let mut o = self.linear(&att, l, ids.wo, ids.bo, d, d);
            let drop_attn = dropout_mask(rng.as_deref_mut(), c.dropout_rate, l * d);
            apply_mask(&mut o, &drop_attn);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);

            let (h2, ln2) = layer_norm(&x, p.get(ids.ln2_g), p.get(ids.ln2_b));
            let f_pre = self.linear(&h2, l, ids.w1, ids.b1, d, f);
            let f_act: Vec<f64> = f_pre.iter().map(|&v| gelu(v)).collect();
            let mut g = self.linear(&f_act, l, ids.w2, ids.b2, f, d);
            let drop_ff = dropout_mask(rng.as_deref_mut(), c.dropout_rate, l * d);
            apply_mask(&mut g, &drop_ff);
            x.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            layers.push(LayerCache { ln1, h1, q, k, v, attn, att, drop_attn, ln2, h2, f_pre, f_act, drop_ff });
        }
        let (hf, lnf) = layer_norm(&x, p.get(self.ids.lnf_g), p.get(self.ids.lnf_b));
        let n_out = c.output_dim();
        let (logits, pooled, pool_count) = match c.head {
            HeadKind::LanguageModel => {
                let data = self.linear(&hf, l, self.ids.head_w, self.ids.head_b, d, n_out);
                (Logits { rows: l, cols: n_out, data }, Vec::new(), 0)
            }
            HeadKind::Multilabel { .. } => {
                let mut pooled = vec![0.0; d];
                let count = key_valid.iter().filter(|&&v| v).count();
                for (i, _) in key_valid.iter().enumerate().filter(|(_, &v)| v) {
                    pooled.iter_mut().zip(&hf[i * d..(i + 1) * d]).for_each(|(a, b)| *a += b);
                }
                if count > 0 {
                    pooled.iter_mut().for_each(|v| *v /= count as f64);
                }
                let data = self.linear(&pooled, 1, self.ids.head_w, self.ids.head_b, d, n_out);
                (Logits { rows: 1, cols: n_out, data }, pooled, count)
            }
        };
        let cache = Cache {
            tokens: tokens.to_vec(),
            cond: cond.map(<[f64]>::to_vec),
            key_valid,
            drop_emb,
            layers,
            lnf,
            hf,
            pooled,
            pool_count,
        };
        Ok((logits, cache))
    }

    /// Accumulates `dw += x^T dy`, `db += colsum(dy)` and returns `dy w^T`.
    #[allow(clippy::too_many_arguments)]
    fn linear_backward(
        &self,
        grads: &mut Gradients,
        x: &[f64],
        dy: &[f64],
        rows: usize,
        w: ParamId,
        b: ParamId,
        n_in: usize,
        n_out: usize,
    ) -> Vec<f64> {
        gemm(1.0, View::new(x, rows, n_in).t(), View::new(dy, rows, n_out), 1.0, ViewMut::new(grads.get_mut(w), n_in, n_out));
        add_col_sums(dy, grads.get_mut(b));
        let mut dx = vec![0.0; rows * n_in];
        gemm(1.0, View::new(dy, rows, n_out), View::new(self.params.get(w), n_in, n_out).t(), 0.0, ViewMut::new(&mut dx, rows, n_in));
        dx
    }

    /// Gradients of all parameters given the gradient of the loss with
    /// respect to the logits of `forward_cached`.
    pub(crate) fn backward(&self, cache: &Cache, d_logits: &[f64]) -> Gradients {
        let c = &self.config;
        let (l, d, f) = (cache.tokens.len(), c.d_model, c.d_ff);
        let n_out = c.output_dim();
        let p = &self.params;
        let mut grads = p.zero_grads();

        let dhf = match c.head {
            HeadKind::LanguageModel => {
                self.linear_backward(&mut grads, &cache.hf, d_logits, l, self.ids.head_w, self.ids.head_b, d, n_out)
            }
            HeadKind::Multilabel { .. } => {
                let dpooled =
                    self.linear_backward(&mut grads, &cache.pooled, d_logits, 1, self.ids.head_w, self.ids.head_b, d, n_out);
                let mut dhf = vec![0.0; l * d];
                if cache.pool_count > 0 {
                    let scale = 1.0 / cache.pool_count as f64;
                    for (i, _) in cache.key_valid.iter().enumerate().filter(|(_, &v)| v) {
                        dhf[i * d..(i + 1) * d].iter_mut().zip(&dpooled).for_each(|(a, b)| *a = b * scale);
                    }
                }
                dhf
            }
        };
        let (dg, db) = two_mut(&mut grads, self.ids.lnf_g, self.ids.lnf_b);
        let mut dx = layer_norm_backward(&dhf, &cache.lnf, p.get(self.ids.lnf_g), dg, db);

        let shape = AttnShape {
            kind: c.attention,
            len: l,
            d,
            n_heads: c.n_heads,
            causal: c.causal,
            key_valid: &cache.key_valid,
        };
        for (ids, lc) in self.ids.layers.iter().zip(&cache.layers).rev() {
            let mut dg_ff = dx.clone();
            apply_mask(&mut dg_ff, &lc.drop_ff);
            let mut df = self.linear_backward(&mut grads, &lc.f_act, &dg_ff, l, ids.w2, ids.b2, f, d);
            df.iter_mut().zip(&lc.f_pre).for_each(|(g, &x)| *g *= gelu_grad(x));
            let dh2 = self.linear_backward(&mut grads, &lc.h2, &df, l, ids.w1, ids.b1, d, f);
            let (gg, gb) = two_mut(&mut grads, ids.ln2_g, ids.ln2_b);
            let dx_ln2 = layer_norm_backward(&dh2, &lc.ln2, p.get(ids.ln2_g), gg, gb);
            dx.iter_mut().zip(&dx_ln2).for_each(|(a, b)| *a += b);

            let mut d_o = dx.clone();
            apply_mask(&mut d_o, &lc.drop_attn);
            let datt = self.linear_backward(&mut grads, &lc.att, &d_o, l, ids.wo, ids.bo, d, d);
            let (dq, dk, dv) = attention_backward(shape, &lc.attn, &lc.q, &lc.k, &lc.v, &datt);
            let mut dh1 = self.linear_backward(&mut grads, &lc.h1, &dq, l, ids.wq, ids.bq, d, d);
            for (dy, w, b) in [(&dk, ids.wk, ids.bk), (&dv, ids.wv, ids.bv)] {
                let part = self.linear_backward(&mut grads, &lc.h1, dy, l, w, b, d, d);
                dh1.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
            }
            let (gg, gb) = two_mut(&mut grads, ids.ln1_g, ids.ln1_b);
            let dx_ln1 = layer_norm_backward(&dh1, &lc.ln1, p.get(ids.ln1_g), gg, gb);
            dx.iter_mut().zip(&dx_ln1).for_each(|(a, b)| *a += b);
        }
        apply_mask(&mut dx, &cache.drop_emb);
        let demb = grads.get_mut(self.ids.tok_emb);
        for (i, &t) in cache.tokens.iter().enumerate() {
            let row = &mut demb[t as usize * d..(t as usize + 1) * d];
            row.iter_mut().zip(&dx[i * d..(i + 1) * d]).for_each(|(a, b)| *a += b);
        }
        if let (Some((w, b)), Some(cond)) = (self.ids.cond, &cache.cond) {
            let mut dc = vec![0.0; d];
            add_col_sums(&dx, &mut dc);
            gemm(1.0, View::new(cond, 1, c.cond_dim).t(), View::new(&dc, 1, d), 1.0, ViewMut::new(grads.get_mut(w), c.cond_dim, d));
            grads.get_mut(b).iter_mut().zip(&dc).for_each(|(a, g)| *a += g);
        }
        grads
    }

    /// Starts incremental decoding for a causal language model.
    pub fn begin_decode(&self, cond: Option<&[f64]>) -> Result<DecodeState, NnError> {
        if !self.config.causal || self.config.head != HeadKind::LanguageModel {
            return Err(NnError::InvalidConfig("incremental decoding needs a causal language model".into()));
        }
        self.check_input(&[], cond)?;
        let n = self.config.n_layers;
        Ok(DecodeState { cond_bias: self.cond_bias(cond), keys: vec![Vec::new(); n], values: vec![Vec::new(); n], key_valid: Vec::new() })
    }

    /// Appends `token` and returns the next-token logits at its position.
    pub fn decode_step(&self, state: &mut DecodeState, token: u32) -> Result<Vec<f64>, NnError> {
        let c = &self.config;
        let pos = state.len();
        if pos >= c.max_seq_len {
            return Err(NnError::SequenceTooLong { len: pos + 1, max: c.max_seq_len });
        }
        if token as usize >= c.vocab_size {
            return Err(NnError::TokenOutOfRange { token, vocab_size: c.vocab_size });
        }
        let (d, f) = (c.d_model, c.d_ff);
        let p = &self.params;
        let t = token as usize;
        let mut x: Vec<f64> =
            p.get(self.ids.tok_emb)[t * d..(t + 1) * d].iter().zip(&self.pe[pos * d..(pos + 1) * d]).map(|(a, b)| a + b).collect();
        if let Some(bias) = &state.cond_bias {
            add_row(&mut x, bias);
        }
        state.key_valid.push(token != c.pad_id);
        for (li, ids) in self.ids.layers.iter().enumerate() {
            let (h1, _) = layer_norm(&x, p.get(ids.ln1_g), p.get(ids.ln1_b));
            let q = self.linear(&h1, 1, ids.wq, ids.bq, d, d);
            state.keys[li].extend(self.linear(&h1, 1, ids.wk, ids.bk, d, d));
            state.values[li].extend(self.linear(&h1, 1, ids.wv, ids.bv, d, d));
            let att = attend_one(c.attention, c.n_heads, &q, &state.keys[li], &state.values[li], &state.key_valid);
            let o = self.linear(&att, 1, ids.wo, ids.bo, d, d);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let (h2, _) = layer_norm(&x, p.get(ids.ln2_g), p.get(ids.ln2_b));
            let act: Vec<f64> = self.linear(&h2, 1, ids.w1, ids.b1, d, f).into_iter().map(gelu).collect();
            let g = self.linear(&act, 1, ids.w2, ids.b2, f, d);
            x.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let (hf, _) = layer_norm(&x, p.get(self.ids.lnf_g), p.get(self.ids.lnf_b));
        Ok(self.linear(&hf, 1, self.ids.head_w, self.ids.head_b, d, c.vocab_size))
    }
}

fn two_mut(grads: &mut Gradients, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
    assert!(a < b);
    let (lo, hi) = grads.data.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}
