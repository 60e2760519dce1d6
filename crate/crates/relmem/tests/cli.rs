use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use relmem::cli::{run_from, ABLATION_HEADER};
use relmem::formats;
use tempfile::TempDir;

const TINY: &str = "\
d_model = 8
n_layers = 1
n_heads = 2
seg_len = 8
mem_len = 8
mem_capacity = 4
ffn_mult = 2
rel_buckets = 4
dropout = 0
lr = 0.01
warmup = 5
epochs = 1
batch_size = 2
";

fn run(args: &[&str]) -> anyhow::Result<()> {
    run_from(std::iter::once("relmem").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

struct World {
    _dir: TempDir,
    root: PathBuf,
}

impl World {
    fn new() -> World {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let w = root.join("world");
        run(&[
            "synth",
            "--out",
            s(&w),
            "--train-persons",
            "10",
            "--held-out-persons",
            "3",
            "--dynamic-persons",
            "2",
            "--bios-per-person",
            "1",
        ])
        .unwrap();
        fs::write(root.join("tiny.cfg"), TINY).unwrap();
        World { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn extract(&self) -> PathBuf {
        let out = self.p("ex");
        if !out.join("triples.tsv").exists() {
            run(&[
                "extract",
                "--corpus",
                s(&self.p("world/train.txt")),
                "--gazetteer",
                s(&self.p("world/gazetteer.txt")),
                "--out",
                s(&out),
            ])
            .unwrap();
        }
        out.join("triples.tsv")
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let triples = self.extract();
        let out = self.p(out);
        let mut args = vec![
            "train",
            "--config",
            s(&self.root.join("tiny.cfg")),
            "--corpus",
            s(&self.root.join("world/train.txt")),
            "--vocab-corpus",
            s(&self.root.join("world/eval.txt")),
            "--gazetteer",
            s(&self.root.join("world/gazetteer.txt")),
            "--triples",
            s(&triples),
            "--out",
            s(&out),
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        args.extend(extra.iter().map(|x| x.to_string()));
        run(&args.iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
        out
    }

    fn model_args(&self, model: &Path) -> Vec<String> {
        vec![
            "--model".into(),
            s(model).into(),
            "--gazetteer".into(),
            s(&self.p("world/gazetteer.txt")).into(),
            "--triples".into(),
            s(&self.extract()).into(),
        ]
    }

    fn eval(&self, model: &Path, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.p(out);
        let mut args: Vec<String> = vec!["eval".into()];
        args.extend(self.model_args(model));
        args.extend(["--corpus".into(), s(&self.p("world/eval.txt")).into(), "--out".into(), s(&out).into()]);
        args.extend(extra.iter().map(|x| x.to_string()));
        run(&args.iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
        out
    }
}

#[test]
fn extraction_matches_generator_truth_and_is_deterministic() {
    let w = World::new();
    let tsv = w.extract();
    let mut got: Vec<String> = read(&tsv).lines().map(String::from).collect();
    got.sort();
    let want: Vec<String> = read(&w.p("world/truth.tsv")).lines().map(String::from).collect();
    assert_eq!(got, want);
    assert!(read(&w.p("ex/report.txt")).contains("triples/entity"));

    let again = w.p("ex2");
    run(&["extract", "--corpus", s(&w.p("world/train.txt")), "--gazetteer", s(&w.p("world/gazetteer.txt")), "--out", s(&again)])
        .unwrap();
    assert_eq!(fs::read(&tsv).unwrap(), fs::read(again.join("triples.tsv")).unwrap());
    let m = read(&again.join("manifest.tsv"));
    assert!(m.contains("command\textract") && m.contains("input.corpus.sha256\t"));
}

#[test]
fn empty_corpus_extracts_nothing() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("empty.txt");
    let gaz = dir.path().join("g.txt");
    fs::write(&corpus, "").unwrap();
    fs::write(&gaz, "Ada\n").unwrap();
    let out = dir.path().join("out");
    run(&["extract", "--corpus", s(&corpus), "--gazetteer", s(&gaz), "--out", s(&out)]).unwrap();
    assert_eq!(read(&out.join("triples.tsv")), "");
    assert!(read(&out.join("report.txt")).contains("triples: 0"));
}

#[test]
fn corpus_directory_and_delimited_file_agree() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().join("docs");
    fs::create_dir(&d).unwrap();
    fs::write(d.join("a.txt"), "First article.\n").unwrap();
    fs::write(d.join("b.txt"), "Second one.\nTwo lines.\n").unwrap();
    fs::write(d.join(".hidden"), "skip me").unwrap();
    let f = dir.path().join("docs.txt");
    fs::write(&f, "First article.\n<|article|>\nSecond one.\nTwo lines.\n<|article|>\n").unwrap();
    let a = formats::read_corpus(&d).unwrap();
    let b = formats::read_corpus(&f).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!(a.iter().map(|x| &x.text).collect::<Vec<_>>(), b.iter().map(|x| &x.text).collect::<Vec<_>>());
    assert_eq!(a[0].id, "a");
    assert_eq!(b[1].id, "docs-1");
    assert_eq!(formats::read_corpus(&dir.path().join("again.txt")).ok(), None);
    fs::write(dir.path().join("again.txt"), formats::render_corpus(&b)).unwrap();
    assert_eq!(formats::read_corpus(&dir.path().join("again.txt")).unwrap(), {
        let mut b = b.clone();
        b.iter_mut().for_each(|x| x.id = x.id.replace("docs", "again"));
        b
    });
}

#[test]
fn triple_files_report_line_numbers() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("t.tsv");
    fs::write(&p, "a\tr\tb\nc\td\te\na\tr\tb\n").unwrap();
    assert_eq!(formats::load_triples(&p).unwrap().len(), 2);
    fs::write(&p, "a\tr\tb\n\na\tb\n").unwrap();
    let e = formats::read_triples(&p).unwrap_err().to_string();
    assert!(e.contains(":3:"), "{e}");
    fs::write(&p, "a\t \tb\n").unwrap();
    assert!(formats::read_triples(&p).unwrap_err().to_string().contains(":1:"));
}

#[test]
fn missing_prerequisites_are_named() {
    let w = World::new();
    let triples = w.extract();
    let err = run(&[
        "train",
        "--corpus",
        s(&w.p("world/train.txt")),
        "--gazetteer",
        s(&w.p("world/gazetteer.txt")),
        "--triples",
        s(&w.p("nope.tsv")),
        "--out",
        s(&w.p("m")),
    ])
    .unwrap_err();
    assert!(err.to_string().contains("missing triples file"), "{err}");

    let err = run(&[
        "eval",
        "--model",
        s(&w.p("no-model")),
        "--gazetteer",
        s(&w.p("world/gazetteer.txt")),
        "--triples",
        s(&triples),
        "--corpus",
        s(&w.p("world/eval.txt")),
        "--out",
        s(&w.p("e")),
    ])
    .unwrap_err();
    assert!(err.to_string().contains("missing checkpoint"), "{err}");

    let bad = w.p("bad.cfg");
    fs::write(&bad, "d_model = 8\nlearning_rate = 1\n").unwrap();
    let err = run(&[
        "train",
        "--config",
        s(&bad),
        "--corpus",
        s(&w.p("world/train.txt")),
        "--gazetteer",
        s(&w.p("world/gazetteer.txt")),
        "--triples",
        s(&triples),
        "--out",
        s(&w.p("m")),
    ])
    .unwrap_err();
    assert!(format!("{err:#}").contains("unknown key \"learning_rate\""), "{err:#}");
}

#[test]
fn binary_exits_nonzero_with_message() {
    let out = Command::new(env!("CARGO_BIN_EXE_relmem"))
        .args(["gates", "--tokens", "/definitely/not/here.tsv", "--out", "/tmp/unused-relmem"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing token table"));
}

#[test]
fn train_eval_round_trip_is_byte_identical() {
    let w = World::new();
    let m1 = w.train("m1", &[]);
    let m2 = w.train("m2", &[]);
    for f in ["model.ckpt", "vocab.tsv", "index.tsv", "config.txt", "train.log"] {
        assert_eq!(fs::read(m1.join(f)).unwrap(), fs::read(m2.join(f)).unwrap(), "{f}");
    }
    let log = read(&m1.join("train.log"));
    assert!(log.lines().all(|l| l.split('\t').count() == 3));

    let off = w.p("off.cfg");
    fs::write(&off, "dynamic_extraction = false\n").unwrap();
    let e1 = w.eval(&m1, "e1", &["--config", s(&off)]);
    let e2 = w.eval(&m1, "e2", &["--config", s(&off)]);
    for f in ["report.txt", "tokens.tsv", "metrics.tsv", "dynamic.tsv"] {
        assert_eq!(fs::read(e1.join(f)).unwrap(), fs::read(e2.join(f)).unwrap(), "{f}");
    }
    let report = read(&e1.join("report.txt"));
    let before = report.lines().find_map(|l| l.strip_prefix("store_before: ")).unwrap();
    let after = report.lines().find_map(|l| l.strip_prefix("store_after: ")).unwrap();
    assert_eq!(before, after);
    assert_eq!(read(&e1.join("dynamic.tsv")), "");

    let on = w.eval(&m1, "e3", &[]);
    assert!(!read(&on.join("dynamic.tsv")).is_empty());

    let g = w.p("g");
    run(&["gates", "--tokens", s(&on.join("tokens.tsv")), "--out", s(&g)]).unwrap();
    let records = formats::read_tokens(&on.join("tokens.tsv")).unwrap();
    let non_bypass = records.iter().filter(|r| !r.bypass).count();
    let hist: usize = read(&g.join("histogram.tsv"))
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(hist, non_bypass);

    let shape = w.p("shape.cfg");
    fs::write(&shape, "d_model = 16\n").unwrap();
    let mut args: Vec<String> = vec!["eval".into()];
    args.extend(w.model_args(&m1));
    args.extend(["--config", s(&shape), "--corpus", s(&w.p("world/eval.txt")), "--out", s(&w.p("e4"))].map(String::from));
    let err = run(&args.iter().map(String::as_str).collect::<Vec<_>>()).unwrap_err();
    assert!(err.to_string().contains("model shape"));
}

#[test]
fn generation_and_intervention() {
    let w = World::new();
    let m = w.train("m", &[]);
    let mem = w.p("mem.tsv");
    fs::write(&mem, "Ada Lovelace\twas born in\tLondon\nAda Lovelace\tworks for\tEngine Co\n").unwrap();

    let gen = |out: &str, extra: &[&str]| {
        let mut args: Vec<String> = vec!["generate".into()];
        args.extend(w.model_args(&m));
        args.extend(["--prompt", "The registry lists", "--length", "6", "--out", s(&w.p(out))].map(String::from));
        args.extend(extra.iter().map(|x| x.to_string()));
        run(&args.iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
        read(&w.p(out).join("generation.txt"))
    };
    assert_eq!(gen("g1", &[]), gen("g2", &[]));
    assert_eq!(gen("g3", &["--temperature", "0"]), gen("g1", &[]));
    gen("g4", &["--memory", s(&mem)]);
    assert_eq!(read(&w.p("g4/memory.tsv")).lines().count(), 3);

    let edits = w.p("edits.tsv");
    fs::write(&edits, "0\tAda Lovelace\twas born in\tLondon\n").unwrap();
    let mut args: Vec<String> = vec!["intervene".into()];
    args.extend(w.model_args(&m));
    args.extend(
        ["--prompt", "The registry lists", "--memory", s(&mem), "--edits", s(&edits), "--out", s(&w.p("iv"))]
            .map(String::from),
    );
    run(&args.iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
    let text = read(&w.p("iv/intervention.txt"));
    assert!(text.contains("changed: no"), "{text}");
    let before = text.lines().find_map(|l| l.strip_prefix("before: ")).unwrap();
    let after = text.lines().find_map(|l| l.strip_prefix("after: ")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn ablate_grid_matches_individual_runs() {
    let w = World::new();
    let triples = w.extract();
    let out = w.p("grid");
    run(&[
        "ablate",
        "--config",
        s(&w.p("tiny.cfg")),
        "--corpus",
        s(&w.p("world/train.txt")),
        "--eval-corpus",
        s(&w.p("world/eval.txt")),
        "--gazetteer",
        s(&w.p("world/gazetteer.txt")),
        "--triples",
        s(&triples),
        "--ablations",
        "full,no-relation,empty-memory",
        "--out",
        s(&out),
    ])
    .unwrap();
    let table = read(&out.join("ablation.tsv"));
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some(ABLATION_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);

    for (row, name) in rows.iter().zip(["full", "no-relation", "empty-memory"]) {
        let cfg = w.p(&format!("{name}.cfg"));
        fs::write(&cfg, format!("{TINY}ablation = {name}\n")).unwrap();
        let model = w.p(&format!("single-{name}"));
        run(&[
            "train",
            "--config",
            s(&cfg),
            "--corpus",
            s(&w.p("world/train.txt")),
            "--vocab-corpus",
            s(&w.p("world/eval.txt")),
            "--gazetteer",
            s(&w.p("world/gazetteer.txt")),
            "--triples",
            s(&triples),
            "--out",
            s(&model),
        ])
        .unwrap();
        let e = w.eval(&model, &format!("single-eval-{name}"), &[]);
        let metrics = read(&e.join("metrics.tsv"));
        let ppl = metrics.lines().find_map(|l| l.strip_prefix("perplexity\teval\t")).unwrap();
        let fields: Vec<&str> = row.split('\t').collect();
        assert_eq!(fields[0], name);
        assert_eq!(fields[1], ppl);
        assert_eq!(
            fs::read(model.join("model.ckpt")).unwrap(),
            fs::read(out.join(name).join("model/model.ckpt")).unwrap()
        );
    }
    assert!(rows[2].ends_with("n/a\tn/a"));
}
