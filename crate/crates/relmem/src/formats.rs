//! Line-oriented text formats for corpora, vocabularies, triples, indices
//! and evaluation records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use relmem_core::corpus::{Article, TokenMode, Vocabulary};
use relmem_core::harness::TokenRecord;
use relmem_core::kgraph::{Gazetteer, Provenance, RelationTriple, Triple, TripleStore};
use relmem_core::metrics::GATE_BINS;
use relmem_core::retrieval::TfIdfIndex;

/// Line separating articles in a single-file corpus.
pub const ARTICLE_DELIMITER: &str = "<|article|>";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn invalid(path: &Path, message: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Files of a corpus directory in name order, hidden files skipped.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads a corpus directory (one article per file, id = file stem) or a
/// single file of articles separated by [`ARTICLE_DELIMITER`] lines (id =
/// `stem-k`). Blank articles in a delimited file are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<Article>> {
    let mut out = Vec::new();
    if path.is_dir() {
        for file in corpus_files(path)? {
            let text = read_text(&file)?;
            let id = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let body = text.trim_end_matches(['\n', '\r']);
            out.push(Article::new(id, body).map_err(|e| invalid(&file, e.to_string()))?);
        }
    } else {
        let text = read_text(path)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let mut chunk: Vec<&str> = Vec::new();
        let flush = |chunk: &mut Vec<&str>, out: &mut Vec<Article>| -> Result<()> {
            let body = chunk.join("\n");
            chunk.clear();
            if !body.trim().is_empty() {
                let id = format!("{stem}-{}", out.len());
                out.push(Article::new(id, body.trim_matches(['\n', '\r'])).map_err(|e| invalid(path, e.to_string()))?);
            }
            Ok(())
        };
        for line in text.lines() {
            if line.trim_end() == ARTICLE_DELIMITER {
                flush(&mut chunk, &mut out)?;
            } else {
                chunk.push(line);
            }
        }
        flush(&mut chunk, &mut out)?;
    }
    relmem_core::corpus::check_unique_ids(&out).map_err(|e| invalid(path, e.to_string()))?;
    Ok(out)
}

pub fn render_corpus(articles: &[Article]) -> String {
    let mut out = String::new();
    for (i, a) in articles.iter().enumerate() {
        if i > 0 {
            out.push_str(ARTICLE_DELIMITER);
            out.push('\n');
        }
        out.push_str(&a.text);
        out.push('\n');
    }
    out
}

/// One name per line; blank lines and `#` comments are skipped.
pub fn read_gazetteer(path: &Path) -> Result<Gazetteer> {
    let text = read_text(path)?;
    let names: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    Gazetteer::new(names).map_err(|e| invalid(path, e.to_string()))
}

pub fn render_gazetteer(names: &[String]) -> String {
    names.iter().map(|n| format!("{n}\n")).collect()
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next()? {
            '\\' => '\\',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}

/// `token<TAB>id` lines in id order; tabs, newlines and backslashes in
/// tokens are backslash-escaped.
pub fn render_vocab(vocab: &Vocabulary) -> String {
    vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}\t{i}\n", escape(t)))
        .collect()
}

pub fn read_vocab(path: &Path, mode: TokenMode) -> Result<Vocabulary> {
    let text = read_text(path)?;
    let mut tokens = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let (tok, id) = line
            .rsplit_once('\t')
            .ok_or_else(|| parse_err(path, n + 1, "expected token<TAB>id"))?;
        let id: usize = id.parse().map_err(|_| parse_err(path, n + 1, format!("bad id {id:?}")))?;
        if id != tokens.len() {
            return Err(parse_err(path, n + 1, format!("id {id} out of order, expected {}", tokens.len())));
        }
        tokens.push(unescape(tok).ok_or_else(|| parse_err(path, n + 1, "bad escape"))?);
    }
    Vocabulary::from_tokens(mode, tokens).map_err(|e| invalid(path, e.to_string()))
}

fn parse_triple_fields(path: &Path, line: usize, fields: &[&str]) -> Result<Triple> {
    if fields.iter().any(|f| f.trim().is_empty()) {
        return Err(parse_err(path, line, "empty field"));
    }
    Ok(Triple::new(fields[0].trim(), fields[1].trim(), fields[2].trim()))
}

/// `head<TAB>relation<TAB>tail` lines. Blank lines are skipped; any other
/// line must have exactly three non-empty fields.
pub fn read_triples(path: &Path) -> Result<Vec<Triple>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(path, n + 1, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        out.push(parse_triple_fields(path, n + 1, &fields)?);
    }
    Ok(out)
}

/// Loads a triples file into a fresh store; duplicates collapse.
pub fn load_triples(path: &Path) -> Result<TripleStore> {
    let mut store = TripleStore::new();
    for t in read_triples(path)? {
        store.insert(t, Provenance::File);
    }
    Ok(store)
}

pub fn render_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> String {
    triples
        .into_iter()
        .map(|t| format!("{}\t{}\t{}\n", t.head, t.relation, t.tail))
        .collect()
}

/// Resident triples with their store ordinals, oldest first.
pub fn render_memory<'a>(entries: impl IntoIterator<Item = &'a RelationTriple>) -> String {
    let mut out = String::from("ordinal\tprovenance\thead\trelation\ttail\n");
    for r in entries {
        let t = &r.triple;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.ordinal,
            r.provenance.as_str(),
            t.head,
            t.relation,
            t.tail
        ));
    }
    out
}

/// `slot<TAB>head<TAB>relation<TAB>tail` lines.
pub fn read_edits(path: &Path) -> Result<Vec<(usize, Triple)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(path, n + 1, format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let slot = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, n + 1, format!("bad slot {:?}", fields[0])))?;
        out.push((slot, parse_triple_fields(path, n + 1, &fields[1..])?));
    }
    Ok(out)
}

/// `articles<TAB>A` followed by `entity<TAB>df` lines in name order.
pub fn render_index(index: &TfIdfIndex) -> String {
    let mut out = format!("articles\t{}\n", index.article_count());
    for (e, df) in index.counts() {
        out.push_str(&format!("{e}\t{df}\n"));
    }
    out
}

pub fn read_index(path: &Path) -> Result<TfIdfIndex> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let articles = match lines.next() {
        Some((_, l)) => l
            .strip_prefix("articles\t")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(path, 1, "expected articles<TAB>count"))?,
        None => return Err(parse_err(path, 1, "empty index file")),
    };
    let mut df = BTreeMap::new();
    for (n, line) in lines {
        let (e, c) = line
            .rsplit_once('\t')
            .ok_or_else(|| parse_err(path, n + 1, "expected entity<TAB>df"))?;
        let c: usize = c.parse().map_err(|_| parse_err(path, n + 1, format!("bad count {c:?}")))?;
        if c > articles {
            return Err(parse_err(path, n + 1, format!("df {c} exceeds article count {articles}")));
        }
        df.insert(e.to_string(), c);
    }
    Ok(TfIdfIndex::from_counts(articles, df))
}

pub const TOKENS_HEADER: &str = "article\tposition\ttoken_id\ttoken\tnll\tentity\tgate\tbypass";

/// Per-token records with the article id and token text alongside.
pub fn render_tokens(records: &[TokenRecord], article_ids: &[String], vocab: &Vocabulary) -> String {
    let mut out = String::from(TOKENS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            article_ids[r.article],
            r.position,
            r.token,
            escape(vocab.token(r.token)),
            r.nll,
            u8::from(r.entity),
            r.gate,
            u8::from(r.bypass)
        ));
    }
    out
}

/// Reads the records back. Article ids become indices in order of first
/// appearance.
pub fn read_tokens(path: &Path) -> Result<Vec<TokenRecord>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TOKENS_HEADER => {}
        _ => return Err(parse_err(path, 1, "missing token table header")),
    }
    let mut articles: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(parse_err(path, n + 1, format!("expected 8 fields, found {}", f.len())));
        }
        let bad = |what: &str| parse_err(path, n + 1, format!("bad {what}"));
        let article = match articles.iter().position(|a| a == f[0]) {
            Some(i) => i,
            None => {
                articles.push(f[0].to_string());
                articles.len() - 1
            }
        };
        let flag = |s: &str, what: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(what)),
        };
        out.push(TokenRecord {
            article,
            position: f[1].parse().map_err(|_| bad("position"))?,
            token: f[2].parse().map_err(|_| bad("token id"))?,
            nll: f[4].parse().map_err(|_| bad("nll"))?,
            entity: flag(f[5], "entity flag")?,
            gate: f[6].parse().map_err(|_| bad("gate"))?,
            bypass: flag(f[7], "bypass flag")?,
        });
    }
    Ok(out)
}

/// `metric<TAB>split<TAB>value` rows.
pub fn render_metrics(split: &str, rows: &[(&str, Option<f64>)]) -> String {
    let mut out = String::from("metric\tsplit\tvalue\n");
    for (m, v) in rows {
        let v = v.map_or_else(|| "nan".to_string(), |v| v.to_string());
        out.push_str(&format!("{m}\t{split}\t{v}\n"));
    }
    out
}

/// `bin_low<TAB>count` lines.
pub fn render_histogram(histogram: &[usize; GATE_BINS]) -> String {
    let mut out = String::from("bin_low\tcount\n");
    for (i, c) in histogram.iter().enumerate() {
        out.push_str(&format!("{}\t{c}\n", i as f64 / GATE_BINS as f64));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_round_trip() {
        for s in ["a\tb", "\\", "\n", "plain", "\\t"] {
            assert_eq!(unescape(&escape(s)).as_deref(), Some(s));
        }
        assert_eq!(unescape("\\x"), None);
    }
}
