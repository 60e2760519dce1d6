//! Command-line surface. Every command writes `manifest.tsv` into its
//! output directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relmem_core::corpus::{build_vocab, tokenize_articles, Article, Vocabulary};
use relmem_core::harness::{self, Ablation, Context, DecodeMode, EvalReport, NoObserver, Session};
use relmem_core::kgraph::{extract_from_training_set, Gazetteer, Provenance, RelationTriple, TripleStore};
use relmem_core::metrics::{self, GateStats, InterventionProbe};
use relmem_core::model::Parameters;
use relmem_core::retrieval::TfIdfIndex;
use relmem_core::synth::{World, WorldConfig};

use crate::checkpoint;
use crate::config::{parse_ablation, Settings};
use crate::formats::{self, read_corpus, write_text};
use crate::manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "relmem", version, about = "Relational-memory language model toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic world: corpora, gazetteer and ground-truth triples.
    Synth(SynthArgs),
    /// Extract triples from a training corpus.
    Extract(ExtractArgs),
    /// Count entity document frequencies over a training corpus.
    BuildIndex(ExtractArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a corpus with a trained model.
    Eval(EvalArgs),
    /// Continue a prompt.
    Generate(GenerateArgs),
    /// Decode a prompt before and after memory edits.
    Intervene(InterveneArgs),
    /// Gate statistics and histogram from a per-token table.
    Gates(GatesArgs),
    /// Train and evaluate every ablation and compare them.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = WorldConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = WorldConfig::default().train_persons)]
    pub train_persons: usize,
    #[arg(long, default_value_t = WorldConfig::default().held_out_persons)]
    pub held_out_persons: usize,
    #[arg(long, default_value_t = WorldConfig::default().dynamic_persons)]
    pub dynamic_persons: usize,
    #[arg(long, default_value_t = WorldConfig::default().bios_per_person)]
    pub bios_per_person: usize,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Corpus directory or delimited corpus file.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub gazetteer: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub gazetteer: PathBuf,
    #[arg(long)]
    pub triples: PathBuf,
    /// Further corpora whose tokens join the vocabulary.
    #[arg(long = "vocab-corpus")]
    pub vocab_corpus: Vec<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelInputs {
    /// Output directory of `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub gazetteer: PathBuf,
    #[arg(long)]
    pub triples: PathBuf,
    /// Settings applied over the model's training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Split name written to the metrics table.
    #[arg(long, default_value = "eval")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long)]
    pub prompt: String,
    #[arg(long, default_value_t = 32)]
    pub length: usize,
    /// Sampling temperature; greedy decoding when absent.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Triples file loaded as the memory instead of retrieval.
    #[arg(long)]
    pub memory: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InterveneArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long)]
    pub prompt: String,
    /// Triples file holding the memory to edit.
    #[arg(long)]
    pub memory: PathBuf,
    /// `slot<TAB>head<TAB>relation<TAB>tail` lines.
    #[arg(long)]
    pub edits: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub length: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GatesArgs {
    /// `tokens.tsv` written by `eval`.
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub eval_corpus: PathBuf,
    #[arg(long)]
    pub gazetteer: PathBuf,
    #[arg(long)]
    pub triples: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of the grid.
    #[arg(long, default_value = "full,no-relation,no-relation-tail,empty-memory")]
    pub ablations: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Extract(a) => extract(&a),
        Command::BuildIndex(a) => build_index(&a),
        Command::Train(a) => train(&a).map(|_| ()),
        Command::Eval(a) => eval(&a).map(|_| ()),
        Command::Generate(a) => generate(&a),
        Command::Intervene(a) => intervene(&a),
        Command::Gates(a) => gates(&a),
        Command::Ablate(a) => ablate(&a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {what}: {}", path.display());
    }
    Ok(())
}

fn out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn read_settings(base: Settings, path: Option<&Path>, seed: Option<u64>) -> Result<Settings> {
    let mut s = base;
    if let Some(p) = path {
        require(p, "config file")?;
        let text = formats::read_text(p)?;
        s.apply(&text).with_context(|| format!("in {}", p.display()))?;
    }
    if let Some(seed) = seed {
        s.run.model.seed = seed;
    }
    Ok(s)
}

fn load_corpus(path: &Path, what: &str) -> Result<Vec<Article>> {
    require(path, what)?;
    Ok(read_corpus(path)?)
}

fn load_gazetteer(path: &Path) -> Result<Gazetteer> {
    require(path, "gazetteer")?;
    Ok(formats::read_gazetteer(path)?)
}

fn load_store(path: &Path) -> Result<TripleStore> {
    require(path, "triples file")?;
    Ok(formats::load_triples(path)?)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = WorldConfig {
        seed: a.seed,
        train_persons: a.train_persons,
        held_out_persons: a.held_out_persons,
        dynamic_persons: a.dynamic_persons,
        bios_per_person: a.bios_per_person,
        ..WorldConfig::default()
    };
    let world = World::generate(&cfg)?;
    out_dir(&a.out)?;
    let mut truth = world.training_triples();
    truth.sort();
    let files = [
        ("train", "train.txt", formats::render_corpus(&world.train)),
        ("eval", "eval.txt", formats::render_corpus(&world.eval)),
        ("gazetteer", "gazetteer.txt", formats::render_gazetteer(&world.gazetteer_names())),
        ("truth", "truth.tsv", formats::render_triples(&truth)),
    ];
    let mut m = Manifest::new("synth");
    m.set("seed", a.seed);
    m.set("train_persons", a.train_persons);
    m.set("held_out_persons", a.held_out_persons);
    m.set("dynamic_persons", a.dynamic_persons);
    m.set("bios_per_person", a.bios_per_person);
    for (name, file, body) in files {
        let p = a.out.join(file);
        write_text(&p, &body)?;
        m.output(name, &p)?;
    }
    m.write(&a.out)?;
    Ok(())
}

fn extract(a: &ExtractArgs) -> Result<()> {
    let articles = load_corpus(&a.corpus, "corpus")?;
    let gaz = load_gazetteer(&a.gazetteer)?;
    let store = extract_from_training_set(&articles, &gaz);
    out_dir(&a.out)?;
    let tsv = a.out.join("triples.tsv");
    write_text(&tsv, &formats::render_triples(store.triples().iter().map(|t| &t.triple)))?;
    let report = a.out.join("report.txt");
    write_text(&report, &format!("{}\n", store.report()))?;
    let mut m = Manifest::new("extract");
    m.input("corpus", &a.corpus)?;
    m.input("gazetteer", &a.gazetteer)?;
    m.output("triples", &tsv)?;
    m.output("report", &report)?;
    m.write(&a.out)?;
    println!("{}", store.report());
    Ok(())
}

fn build_index(a: &ExtractArgs) -> Result<()> {
    let articles = load_corpus(&a.corpus, "corpus")?;
    let gaz = load_gazetteer(&a.gazetteer)?;
    let index = TfIdfIndex::build(articles.iter().map(|x| x.text.as_str()), &gaz);
    out_dir(&a.out)?;
    let p = a.out.join("index.tsv");
    write_text(&p, &formats::render_index(&index))?;
    let mut m = Manifest::new("build-index");
    m.input("corpus", &a.corpus)?;
    m.input("gazetteer", &a.gazetteer)?;
    m.output("index", &p)?;
    m.write(&a.out)?;
    Ok(())
}

fn render_log(log: &[harness::LogEntry]) -> String {
    log.iter().map(|e| format!("{}\t{}\t{}\n", e.step, e.lr, e.loss)).collect()
}

/// Trains with `settings` and writes the model directory.
fn train_with(a: &TrainArgs, settings: Settings) -> Result<()> {
    let articles = load_corpus(&a.corpus, "training corpus")?;
    let gaz = load_gazetteer(&a.gazetteer)?;
    let store = load_store(&a.triples)?;
    let mut all = articles.clone();
    for p in &a.vocab_corpus {
        all.extend(load_corpus(p, "vocabulary corpus")?);
    }
    let vocab = build_vocab(&all, settings.token_mode)?;
    let index = TfIdfIndex::build(articles.iter().map(|x| x.text.as_str()), &gaz);
    let mut settings = settings;
    settings.run.model.vocab_size = vocab.len();
    let ctx = Context {
        vocab: &vocab,
        gazetteer: &gaz,
        index: &index,
    };
    let tokenized = tokenize_articles(&articles, &vocab);
    let outcome = harness::train(&tokenized, &ctx, &store, &settings.run, &mut NoObserver)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    out_dir(&a.out)?;
    let paths = [
        ("checkpoint", a.out.join("model.ckpt")),
        ("vocab", a.out.join("vocab.tsv")),
        ("index", a.out.join("index.tsv")),
        ("config", a.out.join("config.txt")),
        ("log", a.out.join("train.log")),
    ];
    checkpoint::save(&paths[0].1, &settings, &outcome.params)?;
    write_text(&paths[1].1, &formats::render_vocab(&vocab))?;
    write_text(&paths[2].1, &formats::render_index(&index))?;
    write_text(&paths[3].1, &settings.render())?;
    write_text(&paths[4].1, &render_log(&outcome.log))?;
    let mut m = Manifest::new("train");
    m.set("seed", settings.run.model.seed);
    m.config(&settings.render());
    m.input("corpus", &a.corpus)?;
    for (i, p) in a.vocab_corpus.iter().enumerate() {
        m.input(&format!("vocab_corpus{i}"), p)?;
    }
    m.input("gazetteer", &a.gazetteer)?;
    m.input("triples", &a.triples)?;
    for (name, p) in &paths {
        m.output(name, p)?;
    }
    m.write(&a.out)?;
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let settings = read_settings(Settings::default(), a.config.as_deref(), a.seed)?;
    train_with(a, settings)
}

/// A trained model directory plus the run inputs around it.
struct Loaded {
    settings: Settings,
    params: Parameters,
    vocab: Vocabulary,
    index: TfIdfIndex,
    gazetteer: Gazetteer,
    store: TripleStore,
}

impl Loaded {
    fn open(inp: &ModelInputs) -> Result<Loaded> {
        let ckpt = inp.model.join("model.ckpt");
        require(&ckpt, "checkpoint")?;
        let (trained, params) = checkpoint::load(&ckpt)?;
        let vocab_path = inp.model.join("vocab.tsv");
        require(&vocab_path, "vocabulary")?;
        let vocab = formats::read_vocab(&vocab_path, trained.token_mode)?;
        ensure!(
            vocab.len() == trained.run.model.vocab_size,
            "vocabulary has {} tokens, checkpoint expects {}",
            vocab.len(),
            trained.run.model.vocab_size
        );
        let index_path = inp.model.join("index.tsv");
        require(&index_path, "index")?;
        let index = formats::read_index(&index_path)?;
        let settings = read_settings(trained.clone(), inp.config.as_deref(), inp.seed)?;
        let mut shape = settings.run.model.clone();
        shape.dropout = trained.run.model.dropout;
        shape.seed = trained.run.model.seed;
        ensure!(shape == trained.run.model, "config changes the model shape of the checkpoint");
        if settings.token_mode != trained.token_mode {
            bail!("config changes the token mode of the checkpoint");
        }
        Ok(Loaded {
            settings,
            params,
            vocab,
            index,
            gazetteer: load_gazetteer(&inp.gazetteer)?,
            store: load_store(&inp.triples)?,
        })
    }

    fn context(&self) -> Context<'_> {
        Context {
            vocab: &self.vocab,
            gazetteer: &self.gazetteer,
            index: &self.index,
        }
    }

    fn manifest(&self, command: &str, inp: &ModelInputs) -> Result<Manifest> {
        let mut m = Manifest::new(command);
        m.set("seed", self.settings.run.model.seed);
        m.config(&self.settings.render());
        m.input("checkpoint", &inp.model.join("model.ckpt"))?;
        m.input("vocab", &inp.model.join("vocab.tsv"))?;
        m.input("index", &inp.model.join("index.tsv"))?;
        m.input("gazetteer", &inp.gazetteer)?;
        m.input("triples", &inp.triples)?;
        Ok(m)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| v.to_string())
}

/// Headline numbers of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub perplexity: f64,
    pub bits_per_token: f64,
    pub knowledge_perplexity: Option<f64>,
    pub non_entity_perplexity: Option<f64>,
    pub gates: GateStats,
}

fn summarize(report: &EvalReport) -> Result<Summary> {
    Ok(Summary {
        perplexity: report.perplexity(),
        bits_per_token: report.bits_per_token(),
        knowledge_perplexity: metrics::knowledge_perplexity(&report.records).ok(),
        non_entity_perplexity: metrics::non_entity_perplexity(&report.records).ok(),
        gates: metrics::gate_stats(&report.records)?,
    })
}

fn eval(a: &EvalArgs) -> Result<Summary> {
    let l = Loaded::open(&a.inputs)?;
    let articles = load_corpus(&a.corpus, "evaluation corpus")?;
    let tokenized = tokenize_articles(&articles, &l.vocab);
    ensure!(tokenized.iter().any(|t| !t.tokens.is_empty()), "evaluation corpus has no tokens");
    let mut store = l.store.clone();
    let before = store.len();
    let report = harness::evaluate(&tokenized, &l.context(), &mut store, &l.params, &l.settings.run, &mut NoObserver)?;
    let s = summarize(&report)?;
    out_dir(&a.out)?;
    let ids: Vec<String> = tokenized.iter().map(|t| t.id.clone()).collect();
    let text = format!(
        "split: {}\narticles: {}\ntokens: {}\ntotal_nll: {}\nperplexity: {}\nbits_per_token: {}\n\
         knowledge_perplexity: {}\nnon_entity_perplexity: {}\ngate_entity_mean: {}\ngate_non_entity_mean: {}\n\
         bypassed_tokens: {}\nstore_before: {}\nstore_after: {}\n",
        a.split,
        articles.len(),
        report.tokens,
        report.total_nll,
        s.perplexity,
        s.bits_per_token,
        fmt_opt(s.knowledge_perplexity),
        fmt_opt(s.non_entity_perplexity),
        fmt_opt(s.gates.entity_mean),
        fmt_opt(s.gates.non_entity_mean),
        s.gates.bypassed,
        before,
        store.len()
    );
    let rows = [
        ("perplexity", Some(s.perplexity)),
        ("bits_per_token", Some(s.bits_per_token)),
        ("knowledge_perplexity", s.knowledge_perplexity),
        ("non_entity_perplexity", s.non_entity_perplexity),
        ("gate_entity_mean", s.gates.entity_mean),
        ("gate_non_entity_mean", s.gates.non_entity_mean),
    ];
    let dynamic: Vec<_> = store
        .triples()
        .iter()
        .filter(|t| t.provenance == Provenance::Dynamic)
        .map(|t| &t.triple)
        .collect();
    let outputs = [
        ("report", a.out.join("report.txt"), text),
        ("tokens", a.out.join("tokens.tsv"), formats::render_tokens(&report.records, &ids, &l.vocab)),
        ("metrics", a.out.join("metrics.tsv"), formats::render_metrics(&a.split, &rows)),
        ("dynamic", a.out.join("dynamic.tsv"), formats::render_triples(dynamic)),
    ];
    let mut m = l.manifest("eval", &a.inputs)?;
    m.input("corpus", &a.corpus)?;
    for (name, p, body) in &outputs {
        write_text(p, body)?;
        m.output(name, p)?;
    }
    m.write(&a.out)?;
    Ok(s)
}

fn file_memory(path: &Path) -> Result<Vec<RelationTriple>> {
    require(path, "memory file")?;
    Ok(formats::read_triples(path)?
        .into_iter()
        .enumerate()
        .map(|(ordinal, triple)| RelationTriple {
            triple,
            provenance: Provenance::File,
            ordinal,
        })
        .collect())
}

fn generate(a: &GenerateArgs) -> Result<()> {
    ensure!(a.length >= 1, "length must be at least 1");
    let l = Loaded::open(&a.inputs)?;
    let prompt = l.vocab.tokenize(&a.prompt);
    let mut session = Session::new(&l.params, l.context(), &l.store, &l.settings.run);
    if let Some(p) = &a.memory {
        let mem = file_memory(p)?;
        ensure!(
            mem.len() <= l.settings.run.model.mem_capacity,
            "memory file holds {} triples, capacity is {}",
            mem.len(),
            l.settings.run.model.mem_capacity
        );
        session.override_memory(mem)?;
    }
    session.prime(&prompt)?;
    let mode = match a.temperature {
        Some(temperature) => DecodeMode::Sample { temperature },
        None => DecodeMode::Greedy,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(l.settings.run.model.seed);
    let memory = formats::render_memory(session.memory().iter());
    let out = session.generate(a.length, mode, &mut rng)?;
    let text = l.vocab.detokenize(&out);
    out_dir(&a.out)?;
    let gen_path = a.out.join("generation.txt");
    let mem_path = a.out.join("memory.tsv");
    write_text(&gen_path, &format!("{text}\n"))?;
    write_text(&mem_path, &memory)?;
    let mut m = l.manifest("generate", &a.inputs)?;
    m.set("prompt", &a.prompt);
    m.set("length", a.length);
    m.set("mode", a.temperature.map_or("greedy".into(), |t| format!("sample {t}")));
    if let Some(p) = &a.memory {
        m.input("memory", p)?;
    }
    m.output("generation", &gen_path)?;
    m.output("memory", &mem_path)?;
    m.write(&a.out)?;
    println!("{text}");
    Ok(())
}

fn intervene(a: &InterveneArgs) -> Result<()> {
    let l = Loaded::open(&a.inputs)?;
    let memory: Vec<_> = file_memory(&a.memory)?.into_iter().map(|r| r.triple).collect();
    require(&a.edits, "edits file")?;
    let edits = formats::read_edits(&a.edits)?;
    let probe = InterventionProbe {
        prompt: l.vocab.tokenize(&a.prompt),
        memory,
        edits,
        gen_len: a.length,
    };
    let params_before = l.params.fingerprint();
    let store_before = l.store.fingerprint();
    let rep = metrics::causal_intervene(&probe, &l.params, l.context(), &l.store, &l.settings.run)?;
    ensure!(params_before == l.params.fingerprint() && store_before == l.store.fingerprint());
    let before = l.vocab.detokenize(&rep.before);
    let mut text = format!("prompt: {}\nbefore: {before}\n", a.prompt);
    for (i, e) in rep.edits.iter().enumerate() {
        let after = l.vocab.detokenize(&e.continuation);
        text.push_str(&format!(
            "edit {i}: slot {} -> {} | {} | {}\nafter: {after}\ntail_rank: {}\nchanged: {}\n",
            probe.edits[i].0,
            e.edit.head,
            e.edit.relation,
            e.edit.tail,
            e.tail_rank,
            if e.continuation == rep.before { "no" } else { "yes" }
        ));
    }
    out_dir(&a.out)?;
    let p = a.out.join("intervention.txt");
    write_text(&p, &text)?;
    let mut m = l.manifest("intervene", &a.inputs)?;
    m.set("prompt", &a.prompt);
    m.set("length", a.length);
    m.input("memory", &a.memory)?;
    m.input("edits", &a.edits)?;
    m.output("intervention", &p)?;
    m.write(&a.out)?;
    print!("{text}");
    Ok(())
}

fn gates(a: &GatesArgs) -> Result<()> {
    require(&a.tokens, "token table")?;
    let records = formats::read_tokens(&a.tokens)?;
    let g = metrics::gate_stats(&records)?;
    out_dir(&a.out)?;
    let stats = a.out.join("gates.txt");
    let hist = a.out.join("histogram.tsv");
    write_text(
        &stats,
        &format!(
            "entity_mean: {}\nnon_entity_mean: {}\nbypassed: {}\n",
            fmt_opt(g.entity_mean),
            fmt_opt(g.non_entity_mean),
            g.bypassed
        ),
    )?;
    write_text(&hist, &formats::render_histogram(&g.histogram))?;
    let mut m = Manifest::new("gates");
    m.input("tokens", &a.tokens)?;
    m.output("gates", &stats)?;
    m.output("histogram", &hist)?;
    m.write(&a.out)?;
    Ok(())
}

pub const ABLATION_HEADER: &str =
    "ablation\tperplexity\tknowledge_perplexity\tnon_entity_perplexity\tgate_entity_mean\tgate_non_entity_mean";

pub fn ablation_row(ablation: Ablation, s: &Summary) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\n",
        ablation.as_str(),
        s.perplexity,
        fmt_opt(s.knowledge_perplexity),
        fmt_opt(s.non_entity_perplexity),
        fmt_opt(s.gates.entity_mean),
        fmt_opt(s.gates.non_entity_mean)
    )
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let base = read_settings(Settings::default(), a.config.as_deref(), a.seed)?;
    let grid = a
        .ablations
        .split(',')
        .map(|s| parse_ablation(s.trim()).map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    out_dir(&a.out)?;
    let mut table = format!("{ABLATION_HEADER}\n");
    for abl in grid {
        let dir = a.out.join(abl.as_str());
        let mut s = base.clone();
        s.run.ablation = abl;
        let t = TrainArgs {
            config: None,
            corpus: a.corpus.clone(),
            gazetteer: a.gazetteer.clone(),
            triples: a.triples.clone(),
            vocab_corpus: vec![a.eval_corpus.clone()],
            seed: None,
            out: dir.join("model"),
        };
        train_with(&t, s)?;
        let e = EvalArgs {
            inputs: ModelInputs {
                model: t.out.clone(),
                gazetteer: a.gazetteer.clone(),
                triples: a.triples.clone(),
                config: None,
                seed: None,
            },
            corpus: a.eval_corpus.clone(),
            split: "eval".into(),
            out: dir.join("eval"),
        };
        let summary = eval(&e)?;
        table.push_str(&ablation_row(abl, &summary));
    }
    let p = a.out.join("ablation.tsv");
    write_text(&p, &table)?;
    let mut m = Manifest::new("ablate");
    m.set("seed", base.run.model.seed);
    m.config(&base.render());
    m.set("ablations", &a.ablations);
    m.input("corpus", &a.corpus)?;
    m.input("eval_corpus", &a.eval_corpus)?;
    m.input("gazetteer", &a.gazetteer)?;
    m.input("triples", &a.triples)?;
    m.output("ablation", &p)?;
    m.write(&a.out)?;
    print!("{table}");
    Ok(())
}
