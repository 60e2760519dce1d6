//! Token-at-a-time inference with per-layer key/value caches. Produces the
//! same values as [`super::forward_segment`] on the equivalent segment
//! prefix; segment boundaries (and the cache roll-over) happen every
//! `seg_len` tokens.

use alloc::vec;
use alloc::vec::Vec;

use super::{rel_bucket, ModelConfig, Parameters, SegmentCache};
use crate::tensor::{self, Tensor};

fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (rows, cols) = w.dims2();
    debug_assert_eq!(x.len(), rows);
    let mut out = vec![0.0; cols];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wv;
        }
    }
    out
}

fn layer_norm(x: &[f64], gain: &Tensor, bias: &Tensor) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let s = 1.0 / libm::sqrt(var + 1e-5);
    x.iter()
        .zip(gain.data().iter().zip(bias.data()))
        .map(|(v, (g, b))| (v - mean) * s * g + b)
        .collect()
}

#[derive(Clone, Debug, Default)]
struct LayerState {
    inputs: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

/// Output of one [`Decoder::step`].
#[derive(Clone, Debug)]
pub struct DecoderStep {
    pub hidden: Vec<f64>,
    /// Gate activations; `None` when the memory is empty.
    pub gate: Option<Vec<f64>>,
    pub probs: Vec<f64>,
}

/// Incremental decoder over fixed parameters and a fixed set of relation
/// encodings.
#[derive(Clone, Debug)]
pub struct Decoder<'a> {
    params: &'a Parameters,
    cfg: &'a ModelConfig,
    layers: Vec<LayerState>,
    seg_pos: usize,
    memory: Option<Tensor>,
}

impl<'a> Decoder<'a> {
    /// Starts from `cache` (the states carried out of the previous segment)
    /// with `memory` encodings `[P, d]`, or `None` for an empty memory.
    pub fn new(params: &'a Parameters, cfg: &'a ModelConfig, cache: &SegmentCache, memory: Option<Tensor>) -> Self {
        let mut dec = Decoder {
            params,
            cfg,
            layers: vec![LayerState::default(); cfg.n_layers],
            seg_pos: 0,
            memory,
        };
        for (l, t) in cache.layers().iter().enumerate() {
            let (rows, _) = t.dims2();
            for r in 0..rows {
                dec.push_position(l, t.row(r).to_vec());
            }
        }
        dec
    }

    pub fn set_memory(&mut self, memory: Option<Tensor>) {
        self.memory = memory;
    }

    fn push_position(&mut self, l: usize, x: Vec<f64>) {
        let lay = &self.params.layout().layers[l];
        let p = self.params;
        let a = layer_norm(&x, p.get(lay.ln1_gain), p.get(lay.ln1_bias));
        let st = &mut self.layers[l];
        st.keys.push(vec_mat(&a, p.get(lay.wk)));
        st.values.push(vec_mat(&a, p.get(lay.wv)));
        st.inputs.push(x);
    }

    fn roll_over(&mut self) {
        let keep = self.cfg.mem_len;
        for st in &mut self.layers {
            let n = st.inputs.len();
            let drop = n - n.min(keep);
            st.inputs.drain(..drop);
            st.keys.drain(..drop);
            st.values.drain(..drop);
        }
        self.seg_pos = 0;
    }

    /// Feeds one input token and returns the prediction for the next one.
    pub fn step(&mut self, token: usize) -> DecoderStep {
        if self.seg_pos == self.cfg.seg_len {
            self.roll_over();
        }
        let p = self.params;
        let cfg = self.cfg;
        let (dh, heads) = (cfg.head_dim(), cfg.n_heads);
        let max_dist = cfg.mem_len + cfg.seg_len;
        let mut x = p.get(p.layout().embed).row(token).to_vec();
        for l in 0..cfg.n_layers {
            let lay = &p.layout().layers[l];
            self.push_position(l, x.clone());
            let a = layer_norm(&x, p.get(lay.ln1_gain), p.get(lay.ln1_bias));
            let q = vec_mat(&a, p.get(lay.wq));
            let st = &self.layers[l];
            let s = st.keys.len();
            let bias = p.get(lay.rel_bias);
            let mut cat = vec![0.0; cfg.d_model];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let scores: Vec<f64> = (0..s)
                    .map(|j| {
                        let dot: f64 = q[cols.clone()].iter().zip(&st.keys[j][cols.clone()]).map(|(a, b)| a * b).sum();
                        dot / libm::sqrt(dh as f64)
                            + bias.data()[h * cfg.rel_buckets + rel_bucket(s - 1 - j, max_dist, cfg.rel_buckets)]
                    })
                    .collect();
                let w = tensor::softmax(&scores);
                for (j, wj) in w.iter().enumerate() {
                    for (c, vv) in cat[cols.clone()].iter_mut().zip(&st.values[j][cols.clone()]) {
                        *c += wj * vv;
                    }
                }
            }
            let o = vec_mat(&cat, p.get(lay.wo));
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let a2 = layer_norm(&x, p.get(lay.ln2_gain), p.get(lay.ln2_bias));
            let mut f = vec_mat(&a2, p.get(lay.w1));
            f.iter_mut()
                .zip(p.get(lay.b1).data())
                .for_each(|(v, b)| *v = tensor::gelu_scalar(*v + b));
            let f = vec_mat(&f, p.get(lay.w2));
            x.iter_mut()
                .zip(f.iter().zip(p.get(lay.b2).data()))
                .for_each(|(a, (fv, b))| *a += fv + b);
        }
        self.seg_pos += 1;
        let hidden = layer_norm(&x, p.get(p.layout().lnf_gain), p.get(p.layout().lnf_bias));
        let (z, gate) = match &self.memory {
            None => (hidden.clone(), None),
            Some(r) => {
                let (n, d) = r.dims2();
                let scores: Vec<f64> = (0..n)
                    .map(|i| r.row(i).iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() / libm::sqrt(d as f64))
                    .collect();
                let w = tensor::softmax(&scores);
                let mut m = vec![0.0; d];
                for (i, wi) in w.iter().enumerate() {
                    m.iter_mut().zip(r.row(i)).for_each(|(a, b)| *a += wi * b);
                }
                let mut cat = hidden.clone();
                cat.extend_from_slice(&m);
                let g: Vec<f64> = vec_mat(&cat, p.get(p.layout().gate))
                    .into_iter()
                    .map(tensor::sigmoid_scalar)
                    .collect();
                let z = (0..d).map(|i| m[i] + g[i] * (hidden[i] - m[i])).collect();
                (z, Some(g))
            }
        };
        let probs = super::predict_next(&z, p.get(p.layout().embed));
        DecoderStep { hidden, gate, probs }
    }
}
