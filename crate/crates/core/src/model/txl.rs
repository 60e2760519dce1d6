//! Segment-recurrent decoder. Queries come from the current segment; keys
//! and values come from the detached states of the previous segment followed
//! by the current one. Layers are pre-norm with a learned per-head bias over
//! log-spaced distance buckets.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Bound, ModelConfig};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Bucket of a query-key distance: exact below `buckets / 2`, log-spaced up
/// to `max_dist`, clamped to the last bucket beyond it.
pub fn rel_bucket(dist: usize, max_dist: usize, buckets: usize) -> usize {
    let exact = (buckets / 2).max(1);
    if dist < exact || buckets <= exact {
        return dist.min(buckets - 1);
    }
    let max_dist = max_dist.max(exact + 1) as f64;
    let ratio = libm::log(dist as f64 / exact as f64) / libm::log(max_dist / exact as f64);
    let b = exact + (ratio * (buckets - exact) as f64) as usize;
    b.min(buckets - 1)
}

/// Inverted dropout with its own seeded stream.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - self.rate);
        let n = tape.value(x).len();
        let mask = (0..n)
            .map(|_| if self.rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        tape.mul_const(x, mask)
    }
}

/// Per-layer detached input states of the most recent positions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentCache {
    layers: Vec<Tensor>,
}

impl SegmentCache {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_layers(layers: Vec<Tensor>) -> Self {
        SegmentCache { layers }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Cached positions (identical for every layer).
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |t| t.dims2().0)
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn clear(&mut self) {
        self.layers.clear();
    }

    /// Places the cached states on `tape` behind a stop-gradient.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.layers
            .iter()
            .map(|t| {
                let c = tape.constant(t.clone());
                tape.stop_gradient(c)
            })
            .collect()
    }

    /// Reads the values of `vars` (as returned in [`TxlOutput::new_cache`]).
    pub fn from_tape(tape: &Tape, vars: &[Var]) -> Self {
        SegmentCache {
            layers: vars.iter().map(|&v| tape.value(v).clone()).collect(),
        }
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.layers {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

#[derive(Debug)]
pub struct TxlOutput {
    /// Final-layer states `h^L`, `[T, d]`.
    pub hidden: Var,
    /// Stop-gradient states to carry into the next segment.
    pub new_cache: Vec<Var>,
}

/// Runs the decoder stack over one segment.
///
/// `cache` is either empty or one `[S, d]` variable per layer. The new cache
/// holds the last `mem_len` positions of cache followed by segment, per
/// layer, behind a stop-gradient.
pub fn txl_forward(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    inputs: &[usize],
    cache: &[Var],
    mut dropout: Option<&mut Dropout>,
) -> Result<TxlOutput> {
    let t = inputs.len();
    if t > cfg.seg_len {
        return Err(Error::SegmentTooLong { len: t, max: cfg.seg_len });
    }
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    assert!(cache.is_empty() || cache.len() == cfg.n_layers, "cache must cover every layer");
    let d = cfg.d_model;
    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let s_c = cache.first().map_or(0, |&c| tape.value(c).dims2().0);
    let s = s_c + t;
    let max_dist = cfg.mem_len + cfg.seg_len;

    let mut mask = Vec::with_capacity(t * s);
    let mut buckets = Vec::with_capacity(t * s);
    for i in 0..t {
        for j in 0..s {
            let visible = j <= s_c + i;
            mask.push(visible);
            buckets.push(if visible { rel_bucket(s_c + i - j, max_dist, cfg.rel_buckets) } else { 0 });
        }
    }

    let mut x = tape.embed(p.embed(), inputs);
    let mut new_cache = Vec::with_capacity(cfg.n_layers);
    for (l, lay) in p.layout.layers.iter().enumerate() {
        let full = if s_c > 0 { tape.concat_rows(&[cache[l], x]) } else { x };
        if cfg.mem_len > 0 {
            let keep = s.min(cfg.mem_len);
            let tail = tape.slice_rows(full, s - keep, keep);
            new_cache.push(tape.stop_gradient(tail));
        }

        let a_full = tape.layer_norm(full, p.var(lay.ln1_gain), p.var(lay.ln1_bias));
        let a_q = if s_c > 0 { tape.slice_rows(a_full, s_c, t) } else { a_full };
        let q = tape.matmul(a_q, p.var(lay.wq));
        let k = tape.matmul(a_full, p.var(lay.wk));
        let v = tape.matmul(a_full, p.var(lay.wv));
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let idx = buckets.iter().map(|&b| h * cfg.rel_buckets + b).collect();
            let bias = tape.gather(p.var(lay.rel_bias), idx, &[t, s]);
            let scores = tape.add(scores, bias);
            let att = tape.scaled_masked_softmax(scores, Some(&mask), 1.0)?;
            outs.push(tape.matmul(att, vh));
        }
        let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let mut o = tape.matmul(cat, p.var(lay.wo));
        if let Some(dr) = dropout.as_deref_mut() {
            o = dr.apply(tape, o);
        }
        x = tape.add(x, o);

        let a2 = tape.layer_norm(x, p.var(lay.ln2_gain), p.var(lay.ln2_bias));
        let f = tape.matmul(a2, p.var(lay.w1));
        let f = tape.add_row(f, p.var(lay.b1));
        let f = tape.gelu(f);
        let f = tape.matmul(f, p.var(lay.w2));
        let mut f = tape.add_row(f, p.var(lay.b2));
        if let Some(dr) = dropout.as_deref_mut() {
            f = dr.apply(tape, f);
        }
        x = tape.add(x, f);
    }
    debug_assert_eq!(tape.value(x).dims2(), (t, d));
    let hidden = tape.layer_norm(x, p.var(p.layout.lnf_gain), p.var(p.layout.lnf_bias));
    Ok(TxlOutput { hidden, new_cache })
}
