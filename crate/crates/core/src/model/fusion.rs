use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor;

/// Scaled dot-product read of the memory: every row of `h` (`[T, d]`)
/// attends over the encodings `r` (`[P, d]`) with scale `1/sqrt(d)`.
/// Returns `m` (`[T, d]`) and the attention weights (`[T, P]`).
pub fn attend_memory(tape: &mut Tape, h: Var, r: Var) -> Result<(Var, Var)> {
    let (_, d) = tape.value(h).dims2();
    let (p, dr) = tape.value(r).dims2();
    if tape.value(r).is_empty() || p == 0 {
        return Err(Error::EmptyMemory);
    }
    if d != dr {
        return Err(Error::ShapeMismatch(format!("query width {d} vs encoding width {dr}")));
    }
    let scores = tape.matmul_nt(h, r);
    let w = tape.scaled_masked_softmax(scores, None, 1.0 / libm::sqrt(d as f64))?;
    let m = tape.matmul(w, r);
    Ok((m, w))
}

/// `g = sigma([h, m] W)`, `z = g * h + (1 - g) * m`. Returns `(z, g)`.
pub fn gate_fuse(tape: &mut Tape, h: Var, m: Var, w_gate: Var) -> Result<(Var, Var)> {
    let hd = tape.value(h).dims2();
    let md = tape.value(m).dims2();
    let (wi, wo) = tape.value(w_gate).dims2();
    if hd != md || wi != 2 * hd.1 || wo != hd.1 {
        return Err(Error::ShapeMismatch(format!(
            "h {hd:?}, m {md:?}, gate [{wi}, {wo}]"
        )));
    }
    let cat = tape.concat_cols(&[h, m]);
    let pre = tape.matmul(cat, w_gate);
    let g = tape.sigmoid(pre);
    let diff = tape.sub(h, m);
    let gd = tape.mul(g, diff);
    let z = tape.add(m, gd);
    Ok((z, g))
}

/// Tied-embedding logits `z W_e^T`, `[T, V]`.
pub fn predict_logits(tape: &mut Tape, z: Var, embed: Var) -> Var {
    tape.matmul_nt(z, embed)
}

/// Next-token distribution for a single fused state.
pub fn predict_next(z: &[f64], embed: &tensor::Tensor) -> Vec<f64> {
    let (v, d) = embed.dims2();
    assert_eq!(z.len(), d);
    let logits: Vec<f64> = (0..v)
        .map(|i| embed.row(i).iter().zip(z).map(|(a, b)| a * b).sum())
        .collect();
    tensor::softmax(&logits)
}
