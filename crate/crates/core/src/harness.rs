//! The article loop: memory reset per article, one forward (and, when
//! training, one optimiser step) per segment, then retrieval and the memory
//! update. Evaluation additionally extracts triples from each segment after
//! it has been scored.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenizedArticle, Vocabulary};
use crate::error::{Error, Result};
use crate::kgraph::{self, Gazetteer, RelationTriple, TripleKey, TripleStore};
use crate::model::{
    self, encode_relations, forward_segment, serialize_triple, Decoder, DecoderStep, Dropout, MemoryInput,
    ModelConfig, Parameters, SegmentCache, TripleFields,
};
use crate::optim::{adam_step, clip_global_norm, lr_schedule, AdamState};
use crate::retrieval::{mention_byte_spans, retrieve, select_top_k, tag_entities, EntityScoring, RelationalMemory, TfIdfIndex};
use crate::tape::Tape;
use crate::tensor::{self, Tensor};

/// Which parts of each triple reach the encoder, or no memory at all.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    NoRelation,
    NoRelationTail,
    EmptyMemory,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoRelation,
        Ablation::NoRelationTail,
        Ablation::EmptyMemory,
    ];

    pub fn fields(self) -> Option<TripleFields> {
        match self {
            Ablation::Full => Some(TripleFields::Full),
            Ablation::NoRelation => Some(TripleFields::HeadTail),
            Ablation::NoRelationTail => Some(TripleFields::HeadOnly),
            Ablation::EmptyMemory => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoRelation => "no-relation",
            Ablation::NoRelationTail => "no-relation-tail",
            Ablation::EmptyMemory => "empty-memory",
        }
    }
}

/// Text that term frequencies are counted over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TfScope {
    Segment,
    /// The segment plus the previous segment of the same article.
    SegmentAndContext,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub warmup: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 3e-3,
            warmup: 100,
            epochs: 4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub dynamic_extraction: bool,
    pub ablation: Ablation,
    pub scoring: EntityScoring,
    pub tf_scope: TfScope,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            batch_size: 4,
            dynamic_extraction: true,
            ablation: Ablation::Full,
            scoring: EntityScoring::TfIdf,
            tf_scope: TfScope::Segment,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.optim.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if self.optim.lr < 0.0 {
            return Err(Error::InvalidConfig("lr must be non-negative".into()));
        }
        Ok(())
    }
}

/// Read-only context shared by every phase.
#[derive(Clone, Copy, Debug)]
pub struct Context<'a> {
    pub vocab: &'a Vocabulary,
    pub gazetteer: &'a Gazetteer,
    pub index: &'a TfIdfIndex,
}

/// One segment's place in a batch lane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentRef {
    pub article: usize,
    pub index: usize,
    pub start: usize,
    pub len: usize,
}

/// Articles dealt round-robin to `lanes` streams, each expanded into its
/// segments in order.
pub fn batch_segments(articles: &[TokenizedArticle], order: &[usize], lanes: usize, seg_len: usize) -> Vec<Vec<SegmentRef>> {
    assert!(lanes >= 1 && seg_len >= 1);
    let mut out = vec![Vec::new(); lanes];
    for (k, &a) in order.iter().enumerate() {
        let n = articles[a].tokens.len();
        let lane = &mut out[k % lanes];
        for (index, start) in (0..n).step_by(seg_len).enumerate() {
            lane.push(SegmentRef {
                article: a,
                index,
                start,
                len: seg_len.min(n - start),
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Instrumentation hooks, called in protocol order.
#[derive(Debug)]
pub enum Event<'a> {
    /// Before the segment is processed; `memory` is what it is conditioned on.
    SegmentStart {
        phase: Phase,
        lane: usize,
        serial: usize,
        seg: SegmentRef,
        memory: &'a RelationalMemory,
        store_len: usize,
    },
    /// After the loss/nll of the segment has been computed.
    SegmentScored {
        phase: Phase,
        lane: usize,
        serial: usize,
        memory: &'a RelationalMemory,
        nll: f64,
    },
    /// Dynamic extraction output for an evaluated segment.
    Extracted { lane: usize, serial: usize, ordinals: &'a [usize] },
    /// After the memory update that follows the segment.
    MemoryUpdated {
        phase: Phase,
        lane: usize,
        serial: usize,
        memory: &'a RelationalMemory,
    },
}

pub trait Observer {
    fn event(&mut self, _ev: &Event<'_>) {}
}

/// An observer that ignores everything.
pub struct NoObserver;

impl Observer for NoObserver {}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub log: Vec<LogEntry>,
    pub warnings: Vec<String>,
}

struct Lane {
    cache: SegmentCache,
    memory: RelationalMemory,
    /// Unfinished trailing sentence awaiting dynamic extraction.
    carry: String,
    prev_text: String,
    rngs: ArticleRngs,
}

impl Lane {
    fn new(capacity: usize) -> Self {
        Lane {
            cache: SegmentCache::empty(),
            memory: RelationalMemory::new(capacity),
            carry: String::new(),
            prev_text: String::new(),
            rngs: ArticleRngs::new(0, 0),
        }
    }

    fn reset(&mut self, rngs: ArticleRngs) {
        self.cache.clear();
        self.memory.reset();
        self.carry.clear();
        self.prev_text.clear();
        self.rngs = rngs;
    }
}

fn segment_io(article: &TokenizedArticle, seg: SegmentRef) -> (Vec<usize>, Vec<usize>) {
    let targets = article.tokens[seg.start..seg.start + seg.len].to_vec();
    let mut inputs = Vec::with_capacity(seg.len);
    inputs.push(if seg.start == 0 {
        Vocabulary::START
    } else {
        article.tokens[seg.start - 1]
    });
    inputs.extend_from_slice(&targets[..seg.len - 1]);
    (inputs, targets)
}

/// Tag, score, select, retrieve and update `memory` from a finished segment.
#[allow(clippy::too_many_arguments)]
pub fn update_memory_from_text<R: Rng + ?Sized>(
    memory: &mut RelationalMemory,
    segment_text: &str,
    context_text: &str,
    ctx: &Context<'_>,
    store: &TripleStore,
    cfg: &RunConfig,
    mem_rng: &mut R,
    score_rng: &mut R,
) {
    let tf_text;
    let text = match cfg.tf_scope {
        TfScope::Segment => segment_text,
        TfScope::SegmentAndContext => {
            tf_text = format!("{context_text} {segment_text}");
            &tf_text
        }
    };
    let mentions = tag_entities(text, ctx.gazetteer);
    if mentions.is_empty() {
        return;
    }
    let scores = cfg.scoring.score_all(&mentions, ctx.index, score_rng);
    let top = select_top_k(&mentions, &scores, cfg.model.top_k);
    let candidates = retrieve(&top, store);
    if !candidates.is_empty() {
        memory.update(candidates, mem_rng);
    }
}

fn memory_sequences(memory: &RelationalMemory, vocab: &Vocabulary, fields: TripleFields, max_tokens: usize) -> Vec<Vec<usize>> {
    memory
        .iter()
        .filter_map(|t| serialize_triple(&t.triple, vocab, fields, max_tokens).ok())
        .collect()
}

/// Memory-drop and scoring streams for one article, so results do not
/// depend on which lane or step the article lands on.
#[derive(Clone)]
struct ArticleRngs {
    memory: ChaCha8Rng,
    scoring: ChaCha8Rng,
}

impl ArticleRngs {
    fn new(seed: u64, key: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(2 * key + k);
            r
        };
        ArticleRngs {
            memory: stream(0),
            scoring: stream(1),
        }
    }
}

fn order_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(u64::MAX);
    r
}

/// Trains from freshly initialised parameters.
pub fn train(
    articles: &[TokenizedArticle],
    ctx: &Context<'_>,
    store: &TripleStore,
    cfg: &RunConfig,
    observer: &mut dyn Observer,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = Parameters::init(&cfg.model)?;
    let mut warnings = Vec::new();
    if store.is_empty() && cfg.ablation != Ablation::EmptyMemory {
        warnings.push(String::from("triple store is empty: every segment will bypass the memory"));
    }
    let mcfg = &cfg.model;
    let mut order_rng = order_rng(mcfg.seed);
    let mut dropout = Dropout::new(mcfg.dropout, mcfg.seed ^ 0x5eed_d20b);
    let mut adam = AdamState::with_betas(params.tensors(), cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps);

    let mut order: Vec<usize> = (0..articles.len()).filter(|&i| !articles[i].tokens.is_empty()).collect();
    let schedules: Vec<Vec<Vec<SegmentRef>>> = (0..cfg.optim.epochs)
        .map(|_| {
            order.shuffle(&mut order_rng);
            batch_segments(articles, &order, cfg.batch_size, mcfg.seg_len)
        })
        .collect();
    let total: usize = schedules
        .iter()
        .map(|lanes| lanes.iter().map(Vec::len).max().unwrap_or(0))
        .sum();
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    let warmup = cfg.optim.warmup.clamp(1, total.saturating_sub(1).max(1));
    let total_sched = total.max(warmup + 1);

    let fields = cfg.ablation.fields();
    let mut log = Vec::with_capacity(total);
    let mut serial = 0;
    let mut step = 0;
    for (epoch, lanes_sched) in schedules.iter().enumerate() {
        let steps_per_epoch = lanes_sched.iter().map(Vec::len).max().unwrap_or(0);
        let mut lanes: Vec<Lane> = (0..cfg.batch_size).map(|_| Lane::new(mcfg.mem_capacity)).collect();
        for s in 0..steps_per_epoch {
            let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut total_tokens = 0usize;
            let mut total_nll = 0.0;
            let active: Vec<usize> = (0..lanes.len()).filter(|&b| s < lanes_sched[b].len()).collect();
            let step_tokens: usize = active.iter().map(|&b| lanes_sched[b][s].len).sum();
            for &b in &active {
                let seg = lanes_sched[b][s];
                let lane = &mut lanes[b];
                if seg.index == 0 {
                    let key = (epoch * articles.len() + seg.article) as u64;
                    lane.reset(ArticleRngs::new(mcfg.seed, key));
                }
                observer.event(&Event::SegmentStart {
                    phase: Phase::Train,
                    lane: b,
                    serial,
                    seg,
                    memory: &lane.memory,
                    store_len: store.len(),
                });
                let art = &articles[seg.article];
                let (inputs, targets) = segment_io(art, seg);
                let seqs = match fields {
                    Some(f) if !lane.memory.is_empty() => memory_sequences(&lane.memory, ctx.vocab, f, mcfg.max_triple_tokens),
                    _ => Vec::new(),
                };
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape);
                let cache_vars = lane.cache.bind(&mut tape);
                let out = forward_segment(
                    &mut tape,
                    &bound,
                    mcfg,
                    &inputs,
                    &cache_vars,
                    MemoryInput::Sequences(&seqs),
                    Some(&mut dropout),
                )?;
                let loss = tape.cross_entropy(out.logits, &targets);
                let lane_loss = tape.value(loss).item();
                let g = tape.backward(loss)?;
                let w = seg.len as f64 / step_tokens as f64;
                for (acc, &v) in grads.iter_mut().zip(&bound.vars) {
                    if let Some(gv) = g.get(v) {
                        for (a, x) in acc.data_mut().iter_mut().zip(gv.data()) {
                            *a += w * x;
                        }
                    }
                }
                total_nll += lane_loss * seg.len as f64;
                total_tokens += seg.len;
                lane.cache = SegmentCache::from_tape(&tape, &out.new_cache);
                observer.event(&Event::SegmentScored {
                    phase: Phase::Train,
                    lane: b,
                    serial,
                    memory: &lane.memory,
                    nll: lane_loss * seg.len as f64,
                });

                if fields.is_some() {
                    let text = ctx.vocab.detokenize(&targets);
                    update_memory_from_text(
                        &mut lane.memory,
                        &text,
                        &lane.prev_text,
                        ctx,
                        store,
                        cfg,
                        &mut lane.rngs.memory,
                        &mut lane.rngs.scoring,
                    );
                    lane.prev_text = text;
                }
                observer.event(&Event::MemoryUpdated {
                    phase: Phase::Train,
                    lane: b,
                    serial,
                    memory: &lane.memory,
                });
                serial += 1;
            }
            let lr = lr_schedule(step + 1, warmup, total_sched, cfg.optim.lr)?;
            if cfg.optim.clip > 0.0 {
                clip_global_norm(&mut grads, cfg.optim.clip);
            }
            adam_step(params.tensors_mut(), &grads, &mut adam, lr)?;
            step += 1;
            log.push(LogEntry {
                step,
                lr,
                loss: total_nll / total_tokens as f64,
            });
        }
    }
    Ok(TrainOutcome { params, log, warnings })
}

/// Per-token evaluation record.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenRecord {
    pub article: usize,
    pub position: usize,
    pub token: usize,
    /// Negative log-likelihood in nats.
    pub nll: f64,
    /// Inside a gazetteer mention.
    pub entity: bool,
    /// Mean gate over the hidden dimensions for the prediction of this
    /// token; `1.0` when fusion was bypassed.
    pub gate: f64,
    pub bypass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<TokenRecord>,
    pub total_nll: f64,
    pub tokens: usize,
}

impl EvalReport {
    pub fn perplexity(&self) -> f64 {
        libm::exp(self.total_nll / self.tokens as f64)
    }

    pub fn bits_per_token(&self) -> f64 {
        self.total_nll / self.tokens as f64 / core::f64::consts::LN_2
    }
}

/// Entity flag for every token of an article.
pub fn entity_flags(tokens: &[usize], vocab: &Vocabulary, gaz: &Gazetteer) -> Vec<bool> {
    let (text, spans) = vocab.detokenize_with_offsets(tokens);
    let mentions = mention_byte_spans(&text, gaz);
    spans
        .iter()
        .map(|&(s, e)| mentions.iter().any(|&(ms, me)| s < me && ms < e))
        .collect()
}

/// Encodings of memory triples, cached per triple for one evaluation pass.
#[derive(Clone)]
pub struct EncodingCache<'p> {
    params: &'p Parameters,
    fields: TripleFields,
    max_tokens: usize,
    rows: BTreeMap<TripleKey, Option<Vec<f64>>>,
}

impl<'p> EncodingCache<'p> {
    pub fn new(params: &'p Parameters, fields: TripleFields, max_tokens: usize) -> Self {
        EncodingCache {
            params,
            fields,
            max_tokens,
            rows: BTreeMap::new(),
        }
    }

    fn row(&mut self, t: &RelationTriple, vocab: &Vocabulary) -> Result<Option<Vec<f64>>> {
        let key = t.triple.key();
        if let Some(r) = self.rows.get(&key) {
            return Ok(r.clone());
        }
        let row = match serialize_triple(&t.triple, vocab, self.fields, self.max_tokens) {
            Ok(seq) => {
                let mut tape = Tape::new();
                let bound = self.params.bind_frozen(&mut tape);
                let h = encode_relations(&mut tape, &bound, &[seq])?;
                Some(tape.value(h).data().to_vec())
            }
            Err(Error::UnencodableTriple(_)) => None,
            Err(e) => return Err(e),
        };
        self.rows.insert(key, row.clone());
        Ok(row)
    }

    /// `[P, d]` encodings of the resident triples, or `None` when nothing
    /// is encodable.
    pub fn encode(&mut self, memory: &RelationalMemory, vocab: &Vocabulary) -> Result<Option<Tensor>> {
        let mut rows = Vec::new();
        for t in memory.iter() {
            if let Some(r) = self.row(t, vocab)? {
                rows.push(r);
            }
        }
        Ok(if rows.is_empty() { None } else { Some(Tensor::from_rows(&rows)) })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn log_softmax_at(row: &[f64], target: usize) -> f64 {
    row[target] - tensor::log_sum_exp(row)
}

/// Scores every article with fixed parameters.
///
/// Per segment the order is: score, extract (when dynamic extraction is on),
/// retrieve, update the memory. `store` only grows.
pub fn evaluate(
    articles: &[TokenizedArticle],
    ctx: &Context<'_>,
    store: &mut TripleStore,
    params: &Parameters,
    cfg: &RunConfig,
    observer: &mut dyn Observer,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mcfg = &cfg.model;
    let order: Vec<usize> = (0..articles.len()).filter(|&i| !articles[i].tokens.is_empty()).collect();
    let sched = batch_segments(articles, &order, cfg.batch_size, mcfg.seg_len);
    let steps = sched.iter().map(Vec::len).max().unwrap_or(0);
    let fields = cfg.ablation.fields();
    let mut enc = EncodingCache::new(params, fields.unwrap_or(TripleFields::Full), mcfg.max_triple_tokens);
    let flags: Vec<Vec<bool>> = articles
        .iter()
        .map(|a| entity_flags(&a.tokens, ctx.vocab, ctx.gazetteer))
        .collect();

    let mut lanes: Vec<Lane> = (0..cfg.batch_size).map(|_| Lane::new(mcfg.mem_capacity)).collect();
    let mut per_lane: Vec<Vec<TokenRecord>> = vec![Vec::new(); cfg.batch_size];
    let mut serial = 0;
    for s in 0..steps {
        for b in 0..lanes.len() {
            let Some(&seg) = sched[b].get(s) else { continue };
            let lane = &mut lanes[b];
            if seg.index == 0 {
                lane.reset(ArticleRngs::new(mcfg.seed.wrapping_add(1), seg.article as u64));
            }
            observer.event(&Event::SegmentStart {
                phase: Phase::Eval,
                lane: b,
                serial,
                seg,
                memory: &lane.memory,
                store_len: store.len(),
            });
            let art = &articles[seg.article];
            let (inputs, targets) = segment_io(art, seg);
            let encoded = match fields {
                Some(_) if !lane.memory.is_empty() => enc.encode(&lane.memory, ctx.vocab)?,
                _ => None,
            };
            let memory_in = encoded.as_ref().map_or(MemoryInput::Empty, MemoryInput::Encoded);
            let mut tape = Tape::new();
            let bound = params.bind_frozen(&mut tape);
            let cache_vars = lane.cache.bind(&mut tape);
            let out = forward_segment(&mut tape, &bound, mcfg, &inputs, &cache_vars, memory_in, None)?;
            let logits = tape.value(out.logits);
            let gate = out.gate.map(|g| tape.value(g));
            let mut seg_nll = 0.0;
            for (i, &tok) in targets.iter().enumerate() {
                let nll = -log_softmax_at(logits.row(i), tok);
                seg_nll += nll;
                let (g, bypass) = match gate {
                    Some(gt) => {
                        let r = gt.row(i);
                        (r.iter().sum::<f64>() / r.len() as f64, false)
                    }
                    None => (1.0, true),
                };
                per_lane[b].push(TokenRecord {
                    article: seg.article,
                    position: seg.start + i,
                    token: tok,
                    nll,
                    entity: flags[seg.article][seg.start + i],
                    gate: g,
                    bypass,
                });
            }
            lane.cache = SegmentCache::from_tape(&tape, &out.new_cache);
            observer.event(&Event::SegmentScored {
                phase: Phase::Eval,
                lane: b,
                serial,
                memory: &lane.memory,
                nll: seg_nll,
            });

            let text = ctx.vocab.detokenize(&targets);
            if cfg.dynamic_extraction {
                let pending = if lane.carry.is_empty() {
                    text.clone()
                } else {
                    format!("{} {}", lane.carry, text)
                };
                let (complete, rest) = split_complete_sentences(&pending);
                let found = kgraph::extract_from_text(complete, ctx.gazetteer);
                let ordinals = store.add_dynamic(found);
                lane.carry = String::from(rest);
                observer.event(&Event::Extracted {
                    lane: b,
                    serial,
                    ordinals: &ordinals,
                });
            }
            if fields.is_some() {
                update_memory_from_text(
                    &mut lane.memory,
                    &text,
                    &lane.prev_text,
                    ctx,
                    store,
                    cfg,
                    &mut lane.rngs.memory,
                    &mut lane.rngs.scoring,
                );
            }
            lane.prev_text = text;
            observer.event(&Event::MemoryUpdated {
                phase: Phase::Eval,
                lane: b,
                serial,
                memory: &lane.memory,
            });
            serial += 1;

            let last = seg.start + seg.len == art.tokens.len();
            if last && cfg.dynamic_extraction && !lane.carry.is_empty() {
                let found = kgraph::extract_from_text(&lane.carry, ctx.gazetteer);
                let ordinals = store.add_dynamic(found);
                lane.carry.clear();
                observer.event(&Event::Extracted {
                    lane: b,
                    serial: serial - 1,
                    ordinals: &ordinals,
                });
            }
        }
    }
    let mut records: Vec<TokenRecord> = per_lane.into_iter().flatten().collect();
    records.sort_by_key(|r| (r.article, r.position));
    let total_nll = records.iter().map(|r| r.nll).sum();
    let tokens = records.len();
    Ok(EvalReport {
        records,
        total_nll,
        tokens,
    })
}

/// Splits `text` after its last sentence terminator.
fn split_complete_sentences(text: &str) -> (&str, &str) {
    match text.rfind(['.', '!', '?']) {
        Some(i) => (&text[..=i], text[i + 1..].trim_start()),
        None => ("", text),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64 },
}

/// Picks the next token from a distribution.
pub fn choose<R: Rng + ?Sized>(probs: &[f64], mode: DecodeMode, rng: &mut R) -> usize {
    let greedy = || {
        probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    };
    match mode {
        DecodeMode::Greedy => greedy(),
        DecodeMode::Sample { temperature } if temperature <= 1e-12 => greedy(),
        DecodeMode::Sample { temperature } => {
            let logits: Vec<f64> = probs.iter().map(|&p| libm::log(p.max(1e-300)) / temperature).collect();
            let w = tensor::softmax(&logits);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in w.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            w.len() - 1
        }
    }
}

/// Incremental reader over one article-like token stream, following the
/// same memory protocol as evaluation: the memory is updated at every
/// segment boundary unless frozen.
#[derive(Clone)]
pub struct Session<'a> {
    ctx: Context<'a>,
    store: &'a TripleStore,
    cfg: &'a RunConfig,
    decoder: Decoder<'a>,
    enc: EncodingCache<'a>,
    memory: RelationalMemory,
    frozen: bool,
    segment: Vec<usize>,
    prev_text: String,
    rngs: ArticleRngs,
    last: Option<DecoderStep>,
}

impl<'a> Session<'a> {
    pub fn new(params: &'a Parameters, ctx: Context<'a>, store: &'a TripleStore, cfg: &'a RunConfig) -> Self {
        let fields = cfg.ablation.fields().unwrap_or(TripleFields::Full);
        Session {
            ctx,
            store,
            cfg,
            decoder: Decoder::new(params, &cfg.model, &SegmentCache::empty(), None),
            enc: EncodingCache::new(params, fields, cfg.model.max_triple_tokens),
            memory: RelationalMemory::new(cfg.model.mem_capacity),
            frozen: false,
            segment: Vec::new(),
            prev_text: String::new(),
            rngs: ArticleRngs::new(cfg.model.seed.wrapping_add(2), 0),
            last: None,
        }
    }

    /// Replaces the memory and stops further updates.
    pub fn override_memory(&mut self, triples: Vec<RelationTriple>) -> Result<()> {
        self.memory.load(triples);
        self.frozen = true;
        self.refresh_encodings()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn memory(&self) -> &RelationalMemory {
        &self.memory
    }

    fn refresh_encodings(&mut self) -> Result<()> {
        let enc = if self.cfg.ablation == Ablation::EmptyMemory || self.memory.is_empty() {
            None
        } else {
            self.enc.encode(&self.memory, self.ctx.vocab)?
        };
        self.decoder.set_memory(enc);
        Ok(())
    }

    /// Appends `token` to the stream: it is the target of the current
    /// prediction and the input of the next. A completed segment triggers
    /// the memory update before the next segment starts.
    pub fn feed(&mut self, token: usize) -> Result<&DecoderStep> {
        if self.last.is_none() {
            self.last = Some(self.decoder.step(Vocabulary::START));
        }
        self.segment.push(token);
        if self.segment.len() == self.cfg.model.seg_len {
            if !self.frozen && self.cfg.ablation != Ablation::EmptyMemory {
                let text = self.ctx.vocab.detokenize(&self.segment);
                update_memory_from_text(
                    &mut self.memory,
                    &text,
                    &self.prev_text,
                    &self.ctx,
                    self.store,
                    self.cfg,
                    &mut self.rngs.memory,
                    &mut self.rngs.scoring,
                );
                self.prev_text = text;
                self.refresh_encodings()?;
            }
            self.segment.clear();
        }
        self.last = Some(self.decoder.step(token));
        Ok(self.last.as_ref().unwrap())
    }

    /// Starts a fresh stream and feeds `prompt`.
    pub fn prime(&mut self, prompt: &[usize]) -> Result<()> {
        if self.last.is_none() {
            self.last = Some(self.decoder.step(Vocabulary::START));
        }
        for &t in prompt {
            self.feed(t)?;
        }
        Ok(())
    }

    /// Prediction for the token after everything fed so far.
    pub fn next_distribution(&self) -> &[f64] {
        &self.last.as_ref().expect("session not primed").probs
    }

    pub fn last_step(&self) -> Option<&DecoderStep> {
        self.last.as_ref()
    }

    /// Continues the stream for `length` tokens with the memory frozen.
    pub fn generate<R: Rng + ?Sized>(&mut self, length: usize, mode: DecodeMode, rng: &mut R) -> Result<Vec<usize>> {
        self.frozen = true;
        let mut out = Vec::with_capacity(length);
        for _ in 0..length {
            let next = choose(self.next_distribution(), mode, rng);
            out.push(next);
            self.feed(next)?;
        }
        Ok(out)
    }
}

/// Serialised memory contents, for inspection.
pub fn memory_texts(memory: &RelationalMemory) -> Vec<String> {
    memory
        .iter()
        .map(|t| format!("{}, {}, {}", t.triple.head, t.triple.relation, t.triple.tail))
        .collect()
}

pub use model::Bound;

/// Everything derived from raw articles that a run needs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub gazetteer: Gazetteer,
    pub index: TfIdfIndex,
    /// Triples extracted from the training split.
    pub store: TripleStore,
    pub train: Vec<TokenizedArticle>,
    pub eval: Vec<TokenizedArticle>,
}

impl Prepared {
    /// The vocabulary covers both splits; the index and store come from the
    /// training split only.
    pub fn new(
        train: &[crate::corpus::Article],
        eval: &[crate::corpus::Article],
        gazetteer: Gazetteer,
        mode: crate::corpus::TokenMode,
    ) -> Result<Self> {
        let all: Vec<crate::corpus::Article> = train.iter().chain(eval).cloned().collect();
        let vocab = crate::corpus::build_vocab(&all, mode)?;
        let index = TfIdfIndex::build(train.iter().map(|a| a.text.as_str()), &gazetteer);
        let store = kgraph::extract_from_training_set(train, &gazetteer);
        Ok(Prepared {
            train: crate::corpus::tokenize_articles(train, &vocab),
            eval: crate::corpus::tokenize_articles(eval, &vocab),
            vocab,
            gazetteer,
            index,
            store,
        })
    }

    pub fn context(&self) -> Context<'_> {
        Context {
            vocab: &self.vocab,
            gazetteer: &self.gazetteer,
            index: &self.index,
        }
    }
}
