//! Perplexity family, knowledge F1, gate statistics and the memory
//! intervention probe.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::harness::{Context, DecodeMode, RunConfig, Session, TokenRecord};
use crate::kgraph::{Gazetteer, Provenance, RelationTriple, Triple, TripleStore};
use crate::model::{serialize_triple, Parameters, TripleFields};
use crate::retrieval::tag_entities;

fn mean_nll<'a>(records: impl Iterator<Item = &'a TokenRecord>, what: &'static str) -> Result<f64> {
    let (sum, n) = records.fold((0.0, 0usize), |(s, n), r| (s + r.nll, n + 1));
    if n == 0 {
        return Err(Error::NoRecords(what));
    }
    Ok(sum / n as f64)
}

pub fn perplexity(records: &[TokenRecord]) -> Result<f64> {
    Ok(libm::exp(mean_nll(records.iter(), "tokens")?))
}

pub fn bits_per_token(records: &[TokenRecord]) -> Result<f64> {
    Ok(mean_nll(records.iter(), "tokens")? / core::f64::consts::LN_2)
}

/// Perplexity over tokens inside entity mentions.
pub fn knowledge_perplexity(records: &[TokenRecord]) -> Result<f64> {
    Ok(libm::exp(mean_nll(records.iter().filter(|r| r.entity), "entity tokens")?))
}

pub fn non_entity_perplexity(records: &[TokenRecord]) -> Result<f64> {
    Ok(libm::exp(mean_nll(records.iter().filter(|r| !r.entity), "non-entity tokens")?))
}

/// F1 of two entity sets; `0.0` when both are empty.
pub fn set_f1(generated: &BTreeSet<String>, reference: &BTreeSet<String>) -> f64 {
    let hit = generated.intersection(reference).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let p = hit / generated.len() as f64;
    let r = hit / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Canonical names of the gazetteer entities mentioned in `text`.
pub fn entity_set(text: &str, gaz: &Gazetteer) -> BTreeSet<String> {
    tag_entities(text, gaz).into_iter().map(|m| m.entity).collect()
}

/// How per-sample scores become one score per context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum F1Reduction {
    Mean,
    Max,
    /// F1 of the union of all sampled entity sets.
    Pooled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct F1Settings {
    pub n_samples: usize,
    pub gen_len: usize,
    pub temperature: f64,
    pub reduction: F1Reduction,
}

impl Default for F1Settings {
    fn default() -> Self {
        F1Settings {
            n_samples: 20,
            gen_len: 32,
            temperature: 1.0,
            reduction: F1Reduction::Mean,
        }
    }
}

/// Samples continuations of `context` and scores their entity sets against
/// the entities of `reference`.
#[allow(clippy::too_many_arguments)]
pub fn knowledge_f1<R: Rng + ?Sized>(
    params: &Parameters,
    ctx: Context<'_>,
    store: &TripleStore,
    cfg: &RunConfig,
    context: &[usize],
    reference: &str,
    settings: &F1Settings,
    rng: &mut R,
) -> Result<f64> {
    if settings.n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be positive".into()));
    }
    let want = entity_set(reference, ctx.gazetteer);
    let mut primed = Session::new(params, ctx, store, cfg);
    primed.prime(context)?;
    let mode = DecodeMode::Sample {
        temperature: settings.temperature,
    };
    let mut scores = Vec::with_capacity(settings.n_samples);
    let mut pooled = BTreeSet::new();
    for _ in 0..settings.n_samples {
        let mut s = primed.clone();
        let out = s.generate(settings.gen_len, mode, rng)?;
        let got = entity_set(&ctx.vocab.detokenize(&out), ctx.gazetteer);
        scores.push(set_f1(&got, &want));
        pooled.extend(got);
    }
    Ok(match settings.reduction {
        F1Reduction::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        F1Reduction::Max => scores.iter().copied().fold(0.0, f64::max),
        F1Reduction::Pooled => set_f1(&pooled, &want),
    })
}

pub const GATE_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct GateStats {
    /// `None` when no fused entity token exists.
    pub entity_mean: Option<f64>,
    pub non_entity_mean: Option<f64>,
    /// Counts over `[k/20, (k+1)/20)`, the last bin closed.
    pub histogram: [usize; GATE_BINS],
    pub bypassed: usize,
}

/// Gate means by token class and the histogram, over fused positions only.
pub fn gate_stats(records: &[TokenRecord]) -> Result<GateStats> {
    if records.is_empty() {
        return Err(Error::NoRecords("tokens"));
    }
    let mut sums = [(0.0, 0usize); 2];
    let mut histogram = [0usize; GATE_BINS];
    let mut bypassed = 0;
    for r in records {
        if r.bypass {
            bypassed += 1;
            continue;
        }
        let s = &mut sums[usize::from(r.entity)];
        s.0 += r.gate;
        s.1 += 1;
        let bin = ((r.gate * GATE_BINS as f64) as usize).min(GATE_BINS - 1);
        histogram[bin] += 1;
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    Ok(GateStats {
        entity_mean: mean(sums[1]),
        non_entity_mean: mean(sums[0]),
        histogram,
        bypassed,
    })
}

/// A prompt, the memory it is read with, and edits to try.
#[derive(Clone, Debug, PartialEq)]
pub struct InterventionProbe {
    pub prompt: Vec<usize>,
    pub memory: Vec<Triple>,
    /// `(slot, replacement)` pairs, each applied to the original memory.
    pub edits: Vec<(usize, Triple)>,
    pub gen_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditOutcome {
    pub edit: Triple,
    pub continuation: Vec<usize>,
    /// Rank (0 = most likely) of the first token of the edited tail in the
    /// distribution right after the prompt.
    pub tail_rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterventionReport {
    pub before: Vec<usize>,
    pub edits: Vec<EditOutcome>,
}

fn as_memory(triples: &[Triple]) -> Vec<RelationTriple> {
    triples
        .iter()
        .enumerate()
        .map(|(i, t)| RelationTriple {
            triple: t.clone(),
            provenance: Provenance::File,
            ordinal: i,
        })
        .collect()
}

/// Greedy continuation of the prompt with `memory` loaded and frozen.
fn continue_with(
    params: &Parameters,
    ctx: Context<'_>,
    store: &TripleStore,
    cfg: &RunConfig,
    prompt: &[usize],
    memory: &[Triple],
    gen_len: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut s = Session::new(params, ctx, store, cfg);
    s.override_memory(as_memory(memory))?;
    s.prime(prompt)?;
    let first = s.next_distribution().to_vec();
    let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let out = s.generate(gen_len, DecodeMode::Greedy, &mut unused)?;
    Ok((out, first))
}

/// Decodes before and after each memory edit. Parameters and the store are
/// only read.
pub fn causal_intervene(
    probe: &InterventionProbe,
    params: &Parameters,
    ctx: Context<'_>,
    store: &TripleStore,
    cfg: &RunConfig,
) -> Result<InterventionReport> {
    let fields = cfg.ablation.fields().unwrap_or(TripleFields::Full);
    for (slot, t) in &probe.edits {
        if *slot >= probe.memory.len() {
            return Err(Error::InvalidConfig(alloc::format!("edit slot {slot} outside memory")));
        }
        serialize_triple(t, ctx.vocab, fields, cfg.model.max_triple_tokens)?;
    }
    let (before, _) = continue_with(params, ctx, store, cfg, &probe.prompt, &probe.memory, probe.gen_len)?;
    let mut edits = Vec::with_capacity(probe.edits.len());
    for (slot, t) in &probe.edits {
        let mut memory = probe.memory.clone();
        memory[*slot] = t.clone();
        let (continuation, first) = continue_with(params, ctx, store, cfg, &probe.prompt, &memory, probe.gen_len)?;
        let tail_tok = ctx.vocab.tokenize(&t.tail).first().copied().unwrap_or(Vocabulary::UNK);
        let p = first[tail_tok];
        let tail_rank = first.iter().filter(|&&q| q > p).count();
        edits.push(EditOutcome {
            edit: t.clone(),
            continuation,
            tail_rank,
        });
    }
    Ok(InterventionReport { before, edits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(nll: f64, entity: bool, gate: f64) -> TokenRecord {
        TokenRecord {
            article: 0,
            position: 0,
            token: 3,
            nll,
            entity,
            gate,
            bypass: false,
        }
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| String::from(*s)).collect()
    }

    #[test]
    fn perplexity_cases() {
        let uniform: Vec<_> = (0..5).map(|_| rec(libm::log(26.0), false, 1.0)).collect();
        assert!((perplexity(&uniform).unwrap() - 26.0).abs() < 1e-12);
        assert!((bits_per_token(&uniform).unwrap() - 4.7004397181).abs() < 1e-9);
        assert_eq!(perplexity(&[rec(0.0, false, 1.0)]).unwrap(), 1.0);
        let three = [rec(0.5, false, 1.0), rec(1.0, false, 1.0), rec(3.0, false, 1.0)];
        assert!((perplexity(&three).unwrap() - libm::exp(1.5)).abs() < 1e-12);
        assert_eq!(perplexity(&[]).unwrap_err(), Error::NoRecords("tokens"));
    }

    #[test]
    fn entity_split() {
        let l4 = libm::log(4.0);
        let recs = [rec(l4, true, 1.0), rec(l4, true, 1.0), rec(libm::log(2.0), false, 1.0)];
        assert!((knowledge_perplexity(&recs).unwrap() - 4.0).abs() < 1e-12);
        assert!((non_entity_perplexity(&recs).unwrap() - 2.0).abs() < 1e-12);
        let all: Vec<_> = recs.iter().map(|r| TokenRecord { entity: true, ..r.clone() }).collect();
        assert!((knowledge_perplexity(&all).unwrap() - perplexity(&all).unwrap()).abs() < 1e-12);
        assert!(non_entity_perplexity(&all).is_err());
    }

    #[test]
    fn f1_cases() {
        assert_eq!(set_f1(&set(&["A", "B"]), &set(&["A", "B"])), 1.0);
        assert_eq!(set_f1(&set(&["A"]), &set(&["B"])), 0.0);
        assert_eq!(set_f1(&set(&["A", "B"]), &set(&["B", "C"])), 0.5);
        assert_eq!(set_f1(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn gate_cases() {
        let same: Vec<_> = (0..6).map(|i| rec(1.0, i % 2 == 0, 0.9)).collect();
        let s = gate_stats(&same).unwrap();
        assert!((s.entity_mean.unwrap() - 0.9).abs() < 1e-15);
        assert!((s.non_entity_mean.unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(s.histogram.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(s.histogram[18], 6);

        let mut four = vec![rec(1.0, true, 0.2), rec(1.0, true, 0.6), rec(1.0, false, 1.0), rec(1.0, false, 0.5)];
        four.push(TokenRecord { bypass: true, ..rec(1.0, true, 1.0) });
        let s = gate_stats(&four).unwrap();
        assert!((s.entity_mean.unwrap() - 0.4).abs() < 1e-15);
        assert!((s.non_entity_mean.unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(s.histogram.iter().sum::<usize>(), 4);
        assert_eq!(s.histogram[19], 1);
        assert_eq!(s.bypassed, 1);
        assert!(gate_stats(&[]).is_err());
    }
}
