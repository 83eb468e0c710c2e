//! Decoder-only causal transformer inference and the KPTW weight format.
//!
//! # File layout (little-endian)
//!
//! ```text
//! "KPTW" | version u8 (=1)
//! vocab_size u32 | dim u32 | layers u32 | heads u32 | max_ctx u32
//! adapter_rank u32 (0 = none) | adapter_alpha f32
//! tensor records until end of file:
//!   name_len u16 | name (utf-8) | rank u8 | dims u32 x rank | data f32 x prod(dims)
//! ```
//!
//! Matrices are row-major `[out, in]`; a linear layer computes `y = W x`.
//!
//! | name                         | shape            |          |
//! |------------------------------|------------------|----------|
//! | `tok_emb`                    | `[vocab, dim]`   |          |
//! | `pos_emb`                    | `[max_ctx, dim]` |          |
//! | `blocks.{i}.ln1.weight/bias` | `[dim]`          |          |
//! | `blocks.{i}.attn.wq/wk/wv/wo`| `[dim, dim]`     |          |
//! | `blocks.{i}.ln2.weight/bias` | `[dim]`          |          |
//! | `blocks.{i}.mlp.w1`          | `[hidden, dim]`  |          |
//! | `blocks.{i}.mlp.b1`          | `[hidden]`       |          |
//! | `blocks.{i}.mlp.w2`          | `[dim, hidden]`  |          |
//! | `blocks.{i}.mlp.b2`          | `[dim]`          |          |
//! | `ln_f.weight/bias`           | `[dim]`          |          |
//! | `lm_head`                    | `[vocab, dim]`   | optional, tied to `tok_emb` when absent |
//! | `<linear>.lora_a`            | `[r, in]`        | optional, needs `adapter_rank > 0` |
//! | `<linear>.lora_b`            | `[out, r]`       | paired with `lora_a` |
//!
//! `<linear>` is any of the six `attn.w*` / `mlp.w*` matrices of a block.
//! Adapters are merged once at load time as `W + (alpha / r) * B * A`.
//!
//! Blocks are pre-norm: `x += attn(ln1(x))`, `x += mlp(ln2(x))`, with a
//! tanh-approximated GELU and layer-norm epsilon `1e-5`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cdf::QuantizedCdf;
use super::ModelSession;
use crate::error::{Error, Result};

pub const KPTW_MAGIC: &[u8; 4] = b"KPTW";
pub const KPTW_VERSION: u8 = 1;
const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub vocab_size: u32,
    pub dim: u32,
    pub layers: u32,
    pub heads: u32,
    pub max_ctx: u32,
    pub adapter_rank: u32,
    pub adapter_alpha: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().map(|&d| d as usize).product::<usize>(), data.len());
        Tensor { dims, data }
    }
}

/// Raw contents of a KPTW file.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerWeights {
    pub config: TransformerConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

const LINEARS: [&str; 6] = ["attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.w1", "mlp.w2"];

impl TransformerWeights {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != KPTW_MAGIC {
            return Err(Error::load("not a KPTW file (bad magic)"));
        }
        let version = r.u8()?;
        if version != KPTW_VERSION {
            return Err(Error::load(format!("unsupported KPTW version {version}")));
        }
        let config = TransformerConfig {
            vocab_size: r.u32()?,
            dim: r.u32()?,
            layers: r.u32()?,
            heads: r.u32()?,
            max_ctx: r.u32()?,
            adapter_rank: r.u32()?,
            adapter_alpha: f32::from_le_bytes(r.take(4)?.try_into().unwrap()),
        };
        let mut tensors = BTreeMap::new();
        while r.pos < bytes.len() {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::load("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .filter(|&c| c <= (bytes.len() - r.pos) / 4)
                .ok_or_else(|| Error::load(format!("tensor `{name}` is truncated")))?;
            let data = r
                .take(count * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors.insert(name.clone(), Tensor { dims, data }).is_some() {
                return Err(Error::load(format!("duplicate tensor `{name}`")));
            }
        }
        Ok(TransformerWeights { config, tensors })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(KPTW_MAGIC);
        out.push(KPTW_VERSION);
        for v in [c.vocab_size, c.dim, c.layers, c.heads, c.max_ctx, c.adapter_rank] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&c.adapter_alpha.to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dims.len() as u8);
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::load(format!("cannot read weights {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Small random initialization, used for tests and demos. With
    /// `adapter_rank > 0` every block linear also gets an adapter pair.
    pub fn random(config: TransformerConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d, h) = (config.vocab_size, config.dim, 4 * config.dim);
        let mut tensors = BTreeMap::new();
        let mut rand = |dims: Vec<u32>, scale: f32| {
            let n = dims.iter().map(|&x| x as usize).product();
            let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
            Tensor::new(dims, data)
        };
        tensors.insert("tok_emb".into(), rand(vec![v, d], 0.5));
        tensors.insert("pos_emb".into(), rand(vec![config.max_ctx, d], 0.1));
        let ws = 1.0 / (d as f32).sqrt();
        for i in 0..config.layers {
            let p = format!("blocks.{i}.");
            for ln in ["ln1", "ln2"] {
                tensors.insert(format!("{p}{ln}.weight"), Tensor::new(vec![d], vec![1.0; d as usize]));
                tensors.insert(format!("{p}{ln}.bias"), Tensor::new(vec![d], vec![0.0; d as usize]));
            }
            for w in ["wq", "wk", "wv", "wo"] {
                tensors.insert(format!("{p}attn.{w}"), rand(vec![d, d], ws));
            }
            tensors.insert(format!("{p}mlp.w1"), rand(vec![h, d], ws));
            tensors.insert(format!("{p}mlp.b1"), rand(vec![h], 0.02));
            tensors.insert(format!("{p}mlp.w2"), rand(vec![d, h], 1.0 / (h as f32).sqrt()));
            tensors.insert(format!("{p}mlp.b2"), rand(vec![d], 0.02));
            if config.adapter_rank > 0 {
                let r = config.adapter_rank;
                for lin in LINEARS {
                    let (out, inp) = match lin {
                        "mlp.w1" => (h, d),
                        "mlp.w2" => (d, h),
                        _ => (d, d),
                    };
                    tensors.insert(format!("{p}{lin}.lora_a"), rand(vec![r, inp], 0.05));
                    tensors.insert(format!("{p}{lin}.lora_b"), rand(vec![out, r], 0.05));
                }
            }
        }
        tensors.insert("ln_f.weight".into(), Tensor::new(vec![d], vec![1.0; d as usize]));
        tensors.insert("ln_f.bias".into(), Tensor::new(vec![d], vec![0.0; d as usize]));
        TransformerWeights { config, tensors }
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| Error::load("weights file is truncated"))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[derive(Debug, Clone)]
struct Linear {
    rows: usize,
    cols: usize,
    w: Vec<f32>,
}

impl Linear {
    fn apply(&self, x: &[f32], out: &mut Vec<f32>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0f32;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone)]
struct Norm {
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Norm {
    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let n = x.len() as f32;
        let mean = x.iter().sum::<f32>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        x.iter()
            .zip(&self.weight)
            .zip(&self.bias)
            .map(|((v, w), b)| (v - mean) * inv * w + b)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: Norm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln2: Norm,
    w1: Linear,
    b1: Vec<f32>,
    w2: Linear,
    b2: Vec<f32>,
}

/// Loaded, immutable model; share it across sessions with an `Arc`.
#[derive(Debug, Clone)]
pub struct TinyTransformer {
    config: TransformerConfig,
    tok_emb: Vec<f32>,
    pos_emb: Vec<f32>,
    blocks: Vec<Block>,
    ln_f: Norm,
    lm_head: Option<Linear>,
}

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (0.797_884_6 * (x + 0.044_715 * x * x * x)).tanh())
}

impl TinyTransformer {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weights(TransformerWeights::load(path)?)
    }

    pub fn from_weights(mut w: TransformerWeights) -> Result<Self> {
        let c = w.config;
        if c.vocab_size < 2 || c.dim == 0 || c.heads == 0 || c.max_ctx == 0 {
            return Err(Error::load("degenerate transformer header"));
        }
        if !c.dim.is_multiple_of(c.heads) {
            return Err(Error::load(format!("dim {} not divisible by {} heads", c.dim, c.heads)));
        }
        if c.adapter_rank > 0 && !(c.adapter_alpha.is_finite()) {
            return Err(Error::load("adapter alpha is not finite"));
        }
        let (v, d) = (c.vocab_size as usize, c.dim as usize);
        let head = w.tensors.remove("lm_head");

        let mut take = |name: &str, shape: &[Option<usize>]| -> Result<Tensor> {
            let t = w
                .tensors
                .remove(name)
                .ok_or_else(|| Error::load(format!("missing tensor `{name}`")))?;
            let ok = t.dims.len() == shape.len()
                && t.dims
                    .iter()
                    .zip(shape)
                    .all(|(&a, b)| b.is_none_or(|b| a as usize == b));
            if !ok {
                return Err(Error::load(format!("tensor `{name}` has shape {:?}", t.dims)));
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::load(format!("tensor `{name}` has non-finite values")));
            }
            Ok(t)
        };

        let tok_emb = take("tok_emb", &[Some(v), Some(d)])?.data;
        let pos_emb = take("pos_emb", &[Some(c.max_ctx as usize), Some(d)])?.data;
        let mut blocks = Vec::with_capacity(c.layers as usize);
        for i in 0..c.layers {
            let p = format!("blocks.{i}.");
            let norm = |take: &mut dyn FnMut(&str, &[Option<usize>]) -> Result<Tensor>, n: &str| -> Result<Norm> {
                Ok(Norm {
                    weight: take(&format!("{p}{n}.weight"), &[Some(d)])?.data,
                    bias: take(&format!("{p}{n}.bias"), &[Some(d)])?.data,
                })
            };
            let ln1 = norm(&mut take, "ln1")?;
            let ln2 = norm(&mut take, "ln2")?;
            let w1 = take(&format!("{p}mlp.w1"), &[None, Some(d)])?;
            let hidden = w1.dims[0] as usize;
            let mut lin = |name: &str, t: Option<Tensor>, rows: usize, cols: usize| -> Result<Linear> {
                let t = match t {
                    Some(t) => t,
                    None => take(&format!("{p}{name}"), &[Some(rows), Some(cols)])?,
                };
                let mut weight = Linear { rows, cols, w: t.data };
                let a = take(&format!("{p}{name}.lora_a"), &[None, Some(cols)]);
                let b = take(&format!("{p}{name}.lora_b"), &[Some(rows), None]);
                match (a, b) {
                    (Ok(a), Ok(b)) => {
                        let r = c.adapter_rank as usize;
                        if r == 0 || a.dims[0] as usize != r || b.dims[1] as usize != r {
                            return Err(Error::load(format!(
                                "adapter on `{name}` does not match adapter_rank {r}"
                            )));
                        }
                        merge_adapter(&mut weight, &a.data, &b.data, r, c.adapter_alpha);
                    }
                    (Err(_), Err(_)) => {}
                    _ => return Err(Error::load(format!("adapter on `{p}{name}` is missing a half"))),
                }
                Ok(weight)
            };
            let wq = lin("attn.wq", None, d, d)?;
            let wk = lin("attn.wk", None, d, d)?;
            let wv = lin("attn.wv", None, d, d)?;
            let wo = lin("attn.wo", None, d, d)?;
            let w1 = lin("mlp.w1", Some(w1), hidden, d)?;
            let w2 = lin("mlp.w2", None, d, hidden)?;
            blocks.push(Block {
                ln1,
                wq,
                wk,
                wv,
                wo,
                ln2,
                w1,
                b1: take(&format!("{p}mlp.b1"), &[Some(hidden)])?.data,
                w2,
                b2: take(&format!("{p}mlp.b2"), &[Some(d)])?.data,
            });
        }
        let ln_f = Norm {
            weight: take("ln_f.weight", &[Some(d)])?.data,
            bias: take("ln_f.bias", &[Some(d)])?.data,
        };
        let lm_head = match head {
            Some(t) if t.dims == [v as u32, d as u32] && t.data.iter().all(|x| x.is_finite()) => Some(Linear {
                rows: v,
                cols: d,
                w: t.data,
            }),
            Some(t) => return Err(Error::load(format!("tensor `lm_head` has shape {:?}", t.dims))),
            None => None,
        };
        if let Some(name) = w.tensors.keys().next() {
            return Err(Error::load(format!("unexpected tensor `{name}`")));
        }
        Ok(TinyTransformer {
            config: c,
            tok_emb,
            pos_emb,
            blocks,
            ln_f,
            lm_head,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    fn embed(&self, token: u32, pos: usize) -> Vec<f32> {
        let d = self.config.dim as usize;
        let t = &self.tok_emb[token as usize * d..(token as usize + 1) * d];
        let p = &self.pos_emb[pos * d..(pos + 1) * d];
        t.iter().zip(p).map(|(a, b)| a + b).collect()
    }

    /// Runs one position through every block, appending its keys/values
    /// to `cache`, and returns the final hidden state.
    fn step(&self, token: u32, pos: usize, cache: &mut [LayerCache]) -> Vec<f32> {
        let d = self.config.dim as usize;
        let heads = self.config.heads as usize;
        let hd = d / heads;
        let scale = 1.0 / (hd as f32).sqrt();
        let mut x = self.embed(token, pos);
        let mut q = Vec::with_capacity(d);
        let mut k = Vec::with_capacity(d);
        let mut v = Vec::with_capacity(d);
        let mut tmp = Vec::with_capacity(d);
        for (block, lc) in self.blocks.iter().zip(cache.iter_mut()) {
            let h = block.ln1.apply(&x);
            block.wq.apply(&h, &mut q);
            block.wk.apply(&h, &mut k);
            block.wv.apply(&h, &mut v);
            lc.keys.extend_from_slice(&k);
            lc.values.extend_from_slice(&v);
            let n = lc.keys.len() / d;
            let mut attn = vec![0f32; d];
            let mut scores = vec![0f32; n];
            for head in 0..heads {
                let qs = &q[head * hd..(head + 1) * hd];
                let mut max = f32::NEG_INFINITY;
                for (j, s) in scores.iter_mut().enumerate() {
                    let ks = &lc.keys[j * d + head * hd..j * d + (head + 1) * hd];
                    let mut dot = 0f32;
                    for (a, b) in qs.iter().zip(ks) {
                        dot += a * b;
                    }
                    *s = dot * scale;
                    max = max.max(*s);
                }
                let mut sum = 0f32;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let out = &mut attn[head * hd..(head + 1) * hd];
                for (j, s) in scores.iter().enumerate() {
                    let w = s / sum;
                    let vs = &lc.values[j * d + head * hd..j * d + (head + 1) * hd];
                    for (o, val) in out.iter_mut().zip(vs) {
                        *o += w * val;
                    }
                }
            }
            block.wo.apply(&attn, &mut tmp);
            for (xi, t) in x.iter_mut().zip(&tmp) {
                *xi += t;
            }
            let h = block.ln2.apply(&x);
            let mut mid = Vec::new();
            block.w1.apply(&h, &mut mid);
            for (m, b) in mid.iter_mut().zip(&block.b1) {
                *m = gelu(*m + b);
            }
            block.w2.apply(&mid, &mut tmp);
            for ((xi, t), b) in x.iter_mut().zip(&tmp).zip(&block.b2) {
                *xi += t + b;
            }
        }
        x
    }

    fn logits(&self, hidden: &[f32]) -> Vec<f32> {
        let h = self.ln_f.apply(hidden);
        let mut out = Vec::new();
        match &self.lm_head {
            Some(head) => head.apply(&h, &mut out),
            None => {
                let d = self.config.dim as usize;
                let tied = Linear {
                    rows: self.config.vocab_size as usize,
                    cols: d,
                    w: Vec::new(),
                };
                for r in 0..tied.rows {
                    let row = &self.tok_emb[r * d..(r + 1) * d];
                    let mut acc = 0f32;
                    for (a, b) in row.iter().zip(&h) {
                        acc += a * b;
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    /// Next-token logits for a full context, computed from scratch.
    pub fn forward(&self, context: &[u32]) -> Vec<f32> {
        let mut cache = vec![LayerCache::default(); self.blocks.len()];
        let mut hidden = vec![0f32; self.config.dim as usize];
        for (pos, &t) in context.iter().enumerate() {
            hidden = self.step(t, pos, &mut cache);
        }
        self.logits(&hidden)
    }
}

fn merge_adapter(w: &mut Linear, a: &[f32], b: &[f32], r: usize, alpha: f32) {
    let scale = alpha / r as f32;
    for row in 0..w.rows {
        for col in 0..w.cols {
            let mut acc = 0f32;
            for k in 0..r {
                acc += b[row * r + k] * a[k * w.cols + col];
            }
            w.w[row * w.cols + col] += scale * acc;
        }
    }
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    keys: Vec<f32>,
    values: Vec<f32>,
}

/// Softmax in f64 over f32 logits.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Sliding-window session with an incremental key/value cache. When the
/// window is full the oldest token is dropped and the cache is rebuilt, so
/// the result always equals a fresh session fed only the window contents.
#[derive(Debug, Clone)]
pub struct TransformerSession {
    model: Arc<TinyTransformer>,
    window: usize,
    context: Vec<u32>,
    cache: Vec<LayerCache>,
    hidden: Option<Vec<f32>>,
}

impl TransformerSession {
    pub fn new(model: Arc<TinyTransformer>, window: usize) -> Self {
        let window = window.clamp(1, model.config.max_ctx as usize);
        let layers = model.blocks.len();
        TransformerSession {
            model,
            window,
            context: Vec::new(),
            cache: vec![LayerCache::default(); layers],
            hidden: None,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn rebuild(&mut self) {
        self.cache = vec![LayerCache::default(); self.model.blocks.len()];
        self.hidden = None;
        for pos in 0..self.context.len() {
            self.hidden = Some(self.model.step(self.context[pos], pos, &mut self.cache));
        }
    }
}

impl ModelSession for TransformerSession {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size as usize
    }

    fn reset(&mut self) -> Result<()> {
        self.context.clear();
        self.cache = vec![LayerCache::default(); self.model.blocks.len()];
        self.hidden = None;
        Ok(())
    }

    fn next_cdf(&mut self) -> Result<QuantizedCdf> {
        match &self.hidden {
            None => Ok(QuantizedCdf::uniform(self.vocab_size())),
            Some(h) => Ok(QuantizedCdf::from_probs(&softmax(&self.model.logits(h)))),
        }
    }

    fn push_token(&mut self, t: u32) -> Result<()> {
        if t as usize >= self.vocab_size() {
            return Err(Error::domain(format!(
                "token {t} outside vocabulary of {}",
                self.vocab_size()
            )));
        }
        if self.context.len() == self.window {
            self.context.remove(0);
            self.context.push(t);
            self.rebuild();
        } else {
            let pos = self.context.len();
            self.context.push(t);
            self.hidden = Some(self.model.step(t, pos, &mut self.cache));
        }
        Ok(())
    }
}
