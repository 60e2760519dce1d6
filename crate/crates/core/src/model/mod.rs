//! The network: a segment-recurrent decoder, an LSTM relation encoder,
//! attention over encoded triples, and the gate that fuses the two before
//! the tied-embedding softmax.

mod decode;
mod fusion;
mod relation;
mod txl;

pub use decode::{Decoder, DecoderStep};
pub use fusion::{attend_memory, gate_fuse, predict_logits, predict_next};
pub use relation::{encode_relations, serialize_triple, TripleFields};
pub use txl::{rel_bucket, txl_forward, Dropout, SegmentCache, TxlOutput};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Longest serialised triple, in tokens.
pub const MAX_TRIPLE_TOKENS: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Hidden size `d`.
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Segment length `N`.
    pub seg_len: usize,
    /// Extended-context length `M`.
    pub mem_len: usize,
    /// Relational memory capacity `P`.
    pub mem_capacity: usize,
    /// Entities retrieved per segment.
    pub top_k: usize,
    pub vocab_size: usize,
    pub ffn_mult: usize,
    pub rel_buckets: usize,
    pub max_triple_tokens: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            seg_len: 32,
            mem_len: 32,
            mem_capacity: 8,
            top_k: 2,
            vocab_size: 512,
            ffn_mult: 4,
            rel_buckets: 16,
            max_triple_tokens: MAX_TRIPLE_TOKENS,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("seg_len", self.seg_len),
            ("mem_capacity", self.mem_capacity),
            ("top_k", self.top_k),
            ("vocab_size", self.vocab_size),
            ("ffn_mult", self.ffn_mult),
            ("rel_buckets", self.rel_buckets),
            ("max_triple_tokens", self.max_triple_tokens),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ff(&self) -> usize {
        self.d_model * self.ffn_mult
    }
}

/// Parameter indices for one decoder layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub rel_bias: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Where each parameter group lives in [`Parameters::tensors`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    /// `W_e`, shared by the input lookup, the output softmax and the
    /// relation encoder.
    pub embed: usize,
    pub layers: Vec<LayerLayout>,
    pub lnf_gain: usize,
    pub lnf_bias: usize,
    /// LSTM input weights, `[d, 4d]`, gate order i, f, g, o.
    pub lstm_wx: usize,
    pub lstm_wh: usize,
    pub lstm_b: usize,
    /// Fusion gate, stored as `[2d, d]` so `g = sigma([h, m] W)`.
    pub gate: usize,
}

/// Every learned array, in a fixed order with stable names.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    layout: Layout,
}

struct Init {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl Init {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    fn uniform(&mut self, name: String, shape: &[usize], std: f64) -> usize {
        let a = libm::sqrt(3.0) * std;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-a..a)).collect();
        self.push(name, Tensor::new(shape, data))
    }

    fn filled(&mut self, name: String, shape: &[usize], v: f64) -> usize {
        self.push(name, Tensor::filled(shape, v))
    }
}

impl Parameters {
    /// Seeded initialisation.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let ff = cfg.d_ff();
        let inv = |n: usize| 1.0 / libm::sqrt(n as f64);
        let mut it = Init {
            names: Vec::new(),
            tensors: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        let embed = it.uniform("embed".into(), &[cfg.vocab_size, d], inv(d));
        let resid = inv(d) / libm::sqrt(2.0 * cfg.n_layers as f64);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerLayout {
                ln1_gain: it.filled(p("ln1.gain"), &[d], 1.0),
                ln1_bias: it.filled(p("ln1.bias"), &[d], 0.0),
                wq: it.uniform(p("attn.wq"), &[d, d], inv(d)),
                wk: it.uniform(p("attn.wk"), &[d, d], inv(d)),
                wv: it.uniform(p("attn.wv"), &[d, d], inv(d)),
                wo: it.uniform(p("attn.wo"), &[d, d], resid),
                rel_bias: it.filled(p("attn.rel_bias"), &[cfg.n_heads, cfg.rel_buckets], 0.0),
                ln2_gain: it.filled(p("ln2.gain"), &[d], 1.0),
                ln2_bias: it.filled(p("ln2.bias"), &[d], 0.0),
                w1: it.uniform(p("ffn.w1"), &[d, ff], inv(d)),
                b1: it.filled(p("ffn.b1"), &[ff], 0.0),
                w2: it.uniform(p("ffn.w2"), &[ff, d], inv(ff) / libm::sqrt(2.0 * cfg.n_layers as f64)),
                b2: it.filled(p("ffn.b2"), &[d], 0.0),
            });
        }
        let lnf_gain = it.filled("final_ln.gain".into(), &[d], 1.0);
        let lnf_bias = it.filled("final_ln.bias".into(), &[d], 0.0);
        // Inputs are embedding rows with standard deviation 1/sqrt(d).
        let lstm_wx = it.uniform("relenc.wx".into(), &[d, 4 * d], 1.0);
        let lstm_wh = it.uniform("relenc.wh".into(), &[d, 4 * d], inv(d));
        let mut bias = alloc::vec![0.0; 4 * d];
        bias[d..2 * d].iter_mut().for_each(|b| *b = 1.0);
        let lstm_b = it.push("relenc.b".into(), Tensor::new(&[4 * d], bias));
        let gate = it.uniform("gate".into(), &[2 * d, d], inv(2 * d));
        Ok(Parameters {
            names: it.names,
            tensors: it.tensors,
            layout: Layout {
                embed,
                layers,
                lnf_gain,
                lnf_bias,
                lstm_wx,
                lstm_wh,
                lstm_b,
                gate,
            },
        })
    }

    /// Rebuilds parameters from named arrays (e.g. a checkpoint); names and
    /// shapes must match what `cfg` would initialise.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut p = Parameters::init(cfg)?;
        if named.len() != p.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} arrays, found {}",
                p.names.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != p.names[i] || t.shape() != p.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "array {i}: expected {} {:?}, found {name} {:?}",
                    p.names[i],
                    p.tensors[i].shape(),
                    t.shape()
                )));
            }
            p.tensors[i] = t;
        }
        Ok(p)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Places every parameter on `tape` as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
            layout: self.layout.clone(),
        }
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn fingerprint(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            h.update(n.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Parameters bound to tape variables for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
    pub layout: Layout,
}

impl Bound {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn embed(&self) -> Var {
        self.vars[self.layout.embed]
    }
}

/// What the fusion layer sees for one segment.
#[derive(Clone, Debug)]
pub enum MemoryInput<'a> {
    /// No resident triples: the gate is bypassed and `z = h`.
    Empty,
    /// Serialised triples, encoded on this tape.
    Sequences(&'a [Vec<usize>]),
    /// Pre-computed encodings `[P, d]` treated as constants.
    Encoded(&'a Tensor),
}

/// Result of [`forward_segment`].
#[derive(Debug)]
pub struct SegmentOutput {
    pub logits: Var,
    pub hidden: Var,
    /// Gate activations `[T, d]`; `None` when fusion was bypassed.
    pub gate: Option<Var>,
    pub encodings: Option<Var>,
    pub new_cache: Vec<Var>,
}

/// Decoder + memory fusion + tied softmax for one segment.
pub fn forward_segment(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    inputs: &[usize],
    cache: &[Var],
    memory: MemoryInput<'_>,
    dropout: Option<&mut Dropout>,
) -> Result<SegmentOutput> {
    let txl = txl_forward(tape, p, cfg, inputs, cache, dropout)?;
    let encodings = match memory {
        MemoryInput::Empty => None,
        MemoryInput::Sequences([]) => None,
        MemoryInput::Sequences(seqs) => Some(encode_relations(tape, p, seqs)?),
        MemoryInput::Encoded(t) => Some(tape.constant(t.clone())),
    };
    let (z, gate) = match encodings {
        None => (txl.hidden, None),
        Some(r) => {
            let (m, _) = attend_memory(tape, txl.hidden, r)?;
            let (z, g) = gate_fuse(tape, txl.hidden, m, p.var(p.layout.gate))?;
            (z, Some(g))
        }
    };
    let logits = predict_logits(tape, z, p.embed());
    Ok(SegmentOutput {
        logits,
        hidden: txl.hidden,
        gate,
        encodings,
        new_cache: txl.new_cache,
    })
}
