use alloc::format;
use alloc::vec::Vec;

use super::Bound;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::kgraph::Triple;
use crate::tape::{Tape, Var};

/// Which triple fields are serialised for the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripleFields {
    /// `head, relation, tail`
    Full,
    /// `head, tail`
    HeadTail,
    /// `head`
    HeadOnly,
}

/// Token ids of `"head, relation, tail"` (or the reduced form), cut to
/// `max_tokens`.
pub fn serialize_triple(
    triple: &Triple,
    vocab: &Vocabulary,
    fields: TripleFields,
    max_tokens: usize,
) -> Result<Vec<usize>> {
    let text = match fields {
        TripleFields::Full => format!("{}, {}, {}", triple.head, triple.relation, triple.tail),
        TripleFields::HeadTail => format!("{}, {}", triple.head, triple.tail),
        TripleFields::HeadOnly => triple.head.clone(),
    };
    let mut ids = vocab.tokenize(&text);
    ids.truncate(max_tokens);
    if ids.iter().all(|&i| i == Vocabulary::UNK) {
        return Err(Error::UnencodableTriple(text));
    }
    Ok(ids)
}

/// Runs the LSTM over each sequence (embedded with `W_e`) and stacks the
/// final hidden states into `[P, d]`.
///
/// All sequences advance together; once a sequence is exhausted its row
/// keeps its last state.
pub fn encode_relations(tape: &mut Tape, p: &Bound, seqs: &[Vec<usize>]) -> Result<Var> {
    if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
        return Err(Error::EmptySequence);
    }
    let d = tape.value(p.embed()).dims2().1;
    let rows = seqs.len();
    let longest = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let wx = p.var(p.layout.lstm_wx);
    let wh = p.var(p.layout.lstm_wh);
    let b = p.var(p.layout.lstm_b);

    let zeros = crate::tensor::Tensor::zeros(&[rows, d]);
    let mut h = tape.constant(zeros.clone());
    let mut c = tape.constant(zeros);
    for step in 0..longest {
        let live: Vec<bool> = seqs.iter().map(|s| step < s.len()).collect();
        let ids: Vec<usize> = seqs
            .iter()
            .map(|s| s.get(step).copied().unwrap_or(Vocabulary::PAD))
            .collect();
        let x = tape.embed(p.embed(), &ids);
        let zx = tape.matmul(x, wx);
        let zh = tape.matmul(h, wh);
        let z = tape.add(zx, zh);
        let z = tape.add_row(z, b);
        let zi = tape.slice_cols(z, 0, d);
        let zf = tape.slice_cols(z, d, d);
        let zg = tape.slice_cols(z, 2 * d, d);
        let zo = tape.slice_cols(z, 3 * d, d);
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_new = tape.add(fc, ig);
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc);
        if live.iter().all(|&l| l) {
            h = h_new;
            c = c_new;
        } else {
            h = tape.select_rows(live.clone(), h_new, h);
            c = tape.select_rows(live, c_new, c);
        }
    }
    Ok(h)
}
