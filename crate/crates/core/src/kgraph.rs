//! Relation triples: pattern-based extraction, the entity-indexed store and
//! the gazetteer that anchors both.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::corpus::{word_pieces, Article, WordPiece};
use crate::error::{Error, Result};

/// Longest connecting span (in word tokens) the pair pattern accepts.
pub const MAX_RELATION_SPAN: usize = 8;
const MAX_COPULA_COMPLEMENT: usize = 6;

const TRIM_WORDS: &[&str] = &["a", "an", "the", "and", "or", "but", "then", "also", "too"];
const VERB_WORDS: &[&str] = &[
    "is", "was", "are", "were", "be", "been", "being", "has", "had", "have", "born", "won", "led",
    "made", "wrote", "became", "began", "built", "took", "met", "left", "grew", "ran", "sang",
    "taught", "bought", "sold", "held", "joined", "leads", "owns", "heads",
];

fn is_punct(tok: &str) -> bool {
    tok.chars().all(|c| !c.is_alphanumeric())
}

fn is_verb_like(tok: &str) -> bool {
    let lower = tok.to_lowercase();
    if VERB_WORDS.contains(&lower.as_str()) {
        return true;
    }
    if !lower.chars().all(|c| c.is_ascii_lowercase()) || tok.chars().next().is_some_and(char::is_uppercase) {
        return false;
    }
    lower.ends_with("ed")
        || lower.ends_with("ing")
        || (lower.len() >= 4 && lower.ends_with('s') && !lower.ends_with("ss"))
}

fn fold(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Head, relation and tail surface strings.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }

    /// Case-folded, whitespace-collapsed identity used for deduplication.
    pub fn key(&self) -> TripleKey {
        TripleKey(fold(&self.head), fold(&self.relation), fold(&self.tail))
    }

    fn is_valid(&self) -> bool {
        [&self.head, &self.relation, &self.tail]
            .iter()
            .all(|s| !s.trim().is_empty())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripleKey(pub String, pub String, pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    TrainingSet,
    Dynamic,
    File,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::TrainingSet => "training",
            Provenance::Dynamic => "dynamic",
            Provenance::File => "file",
        }
    }
}

/// A triple as held by a [`TripleStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationTriple {
    pub triple: Triple,
    pub provenance: Provenance,
    pub ordinal: usize,
}

/// Entity names with canonical casing.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Gazetteer {
    entries: Vec<String>,
    /// First folded token -> (folded token sequence, entry index).
    by_first: BTreeMap<String, Vec<(Vec<String>, usize)>>,
}

/// One gazetteer hit in a list of word pieces, `[start, end)` in piece
/// indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Match {
    pub entry: usize,
    pub start: usize,
    pub end: usize,
}

impl Gazetteer {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut g = Gazetteer::default();
        let mut seen = BTreeMap::new();
        for name in names {
            let name = name.as_ref().trim();
            if name.is_empty() {
                return Err(Error::InvalidConfig("empty gazetteer entry".into()));
            }
            let toks: Vec<String> = word_pieces(name).iter().map(|p| p.text.to_lowercase()).collect();
            if seen.insert(toks.clone(), ()).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate gazetteer entry {name:?}")));
            }
            let idx = g.entries.len();
            g.entries.push(name.to_string());
            g.by_first.entry(toks[0].clone()).or_default().push((toks, idx));
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn name(&self, entry: usize) -> &str {
        &self.entries[entry]
    }

    /// Non-overlapping, case-insensitive matches. Among overlapping
    /// candidates the longer wins, then the earlier. Output is ordered by
    /// position.
    pub fn find(&self, pieces: &[WordPiece<'_>]) -> Vec<Match> {
        let folded: Vec<String> = pieces.iter().map(|p| p.text.to_lowercase()).collect();
        let mut cands = Vec::new();
        for start in 0..folded.len() {
            if let Some(list) = self.by_first.get(&folded[start]) {
                for (toks, entry) in list {
                    let end = start + toks.len();
                    if end <= folded.len() && folded[start..end] == toks[..] {
                        cands.push(Match { entry: *entry, start, end });
                    }
                }
            }
        }
        cands.sort_by(|a, b| (b.end - b.start).cmp(&(a.end - a.start)).then(a.start.cmp(&b.start)));
        let mut taken = alloc::vec![false; folded.len()];
        let mut out = Vec::new();
        for m in cands {
            if taken[m.start..m.end].iter().any(|&t| t) {
                continue;
            }
            taken[m.start..m.end].iter_mut().for_each(|t| *t = true);
            out.push(m);
        }
        out.sort_by_key(|m| m.start);
        out
    }
}

fn join(pieces: &[WordPiece<'_>]) -> String {
    pieces.iter().map(|p| p.text).collect::<Vec<_>>().join(" ")
}

fn trim_span<'a, 'b>(mut span: &'b [WordPiece<'a>]) -> &'b [WordPiece<'a>] {
    while let Some(first) = span.first() {
        if TRIM_WORDS.contains(&first.text.to_lowercase().as_str()) {
            span = &span[1..];
        } else {
            break;
        }
    }
    while let Some(last) = span.last() {
        if TRIM_WORDS.contains(&last.text.to_lowercase().as_str()) {
            span = &span[..span.len() - 1];
        } else {
            break;
        }
    }
    span
}

/// Sentences of `text` as word-piece lists, split after `.`, `!` and `?`.
pub fn sentences(text: &str) -> Vec<Vec<WordPiece<'_>>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for p in word_pieces(text) {
        let end = matches!(p.text, "." | "!" | "?");
        cur.push(p);
        if end {
            out.push(core::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Pattern-based triple extraction from one sentence.
///
/// Pair rule: consecutive gazetteer mentions `A ... B` whose connecting span
/// is at most [`MAX_RELATION_SPAN`] tokens, contains no punctuation and a
/// verb-like token, give `(A, span, B)` with determiners and conjunctions
/// trimmed from both ends. Copular rule: `A is|was a|an|the X` with no
/// mention inside `X` gives `(A, "is", X)`.
pub fn extract_triples(sentence: &[WordPiece<'_>], gaz: &Gazetteer) -> Vec<Triple> {
    let mentions = gaz.find(sentence);
    let mut out = Vec::new();
    for pair in mentions.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let span = &sentence[a.end..b.start];
        if span.is_empty() || span.len() > MAX_RELATION_SPAN || span.iter().any(|p| is_punct(p.text)) {
            continue;
        }
        if !span.iter().any(|p| is_verb_like(p.text)) {
            continue;
        }
        let rel = trim_span(span);
        if rel.is_empty() {
            continue;
        }
        out.push(Triple::new(gaz.name(a.entry), fold(&join(rel)), gaz.name(b.entry)));
    }
    for (i, a) in mentions.iter().enumerate() {
        let rest = &sentence[a.end..];
        if rest.len() < 3 {
            continue;
        }
        let verb = rest[0].text.to_lowercase();
        let det = rest[1].text.to_lowercase();
        if !matches!(verb.as_str(), "is" | "was") || !matches!(det.as_str(), "a" | "an" | "the") {
            continue;
        }
        let comp_len = rest[2..]
            .iter()
            .take_while(|p| !is_punct(p.text))
            .count()
            .min(MAX_COPULA_COMPLEMENT);
        if comp_len == 0 {
            continue;
        }
        let comp_end = a.end + 2 + comp_len;
        if mentions[i + 1..].iter().any(|m| m.start < comp_end) {
            continue;
        }
        out.push(Triple::new(gaz.name(a.entry), "is", join(&rest[2..2 + comp_len])));
    }
    out
}

/// Extraction over every sentence of `text`.
pub fn extract_from_text(text: &str, gaz: &Gazetteer) -> Vec<Triple> {
    sentences(text)
        .iter()
        .flat_map(|s| extract_triples(s, gaz))
        .collect()
}

/// Append-only, deduplicated triple set indexed by head and tail entity.
#[derive(Clone, Debug, Default)]
pub struct TripleStore {
    triples: Vec<RelationTriple>,
    keys: BTreeMap<TripleKey, usize>,
    index: BTreeMap<String, Vec<usize>>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[RelationTriple] {
        &self.triples
    }

    pub fn get(&self, ordinal: usize) -> &RelationTriple {
        &self.triples[ordinal]
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.keys.contains_key(&t.key())
    }

    /// Inserts `t` unless an equal triple exists; returns its new ordinal.
    pub fn insert(&mut self, t: Triple, provenance: Provenance) -> Option<usize> {
        if !t.is_valid() {
            return None;
        }
        let key = t.key();
        if self.keys.contains_key(&key) {
            return None;
        }
        let ordinal = self.triples.len();
        let head = key.0.clone();
        let tail = key.2.clone();
        self.keys.insert(key, ordinal);
        self.index.entry(head.clone()).or_default().push(ordinal);
        if tail != head {
            self.index.entry(tail).or_default().push(ordinal);
        }
        self.triples.push(RelationTriple {
            triple: t,
            provenance,
            ordinal,
        });
        Some(ordinal)
    }

    /// Ordinals of every triple with `entity` as head or tail, oldest first.
    pub fn lookup_ordinals(&self, entity: &str) -> &[usize] {
        self.index.get(&fold(entity)).map_or(&[], Vec::as_slice)
    }

    /// The one-hop subgraph around `entity`, in insertion order.
    pub fn lookup(&self, entity: &str) -> Vec<&RelationTriple> {
        self.lookup_ordinals(entity).iter().map(|&o| &self.triples[o]).collect()
    }

    /// Adds triples found in already-scored evaluation text.
    pub fn add_dynamic(&mut self, triples: impl IntoIterator<Item = Triple>) -> Vec<usize> {
        triples
            .into_iter()
            .filter_map(|t| self.insert(t, Provenance::Dynamic))
            .collect()
    }

    pub fn entity_count(&self) -> usize {
        self.index.len()
    }

    /// Triples per distinct entity (`0` for an empty store).
    pub fn triples_per_entity(&self) -> f64 {
        if self.index.is_empty() {
            0.0
        } else {
            self.triples.len() as f64 / self.index.len() as f64
        }
    }

    /// `entities: n, triples: m, triples/entity: x`
    pub fn report(&self) -> String {
        format!(
            "entities: {}, triples: {}, triples/entity: {:.2}",
            self.entity_count(),
            self.len(),
            self.triples_per_entity()
        )
    }

    /// SHA-256 over the ordered triple contents and provenances.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.triples {
            for field in [&t.triple.head, &t.triple.relation, &t.triple.tail] {
                h.update(field.as_bytes());
                h.update([0u8]);
            }
            h.update(t.provenance.as_str().as_bytes());
            h.update([1u8]);
        }
        h.finalize().into()
    }
}

/// Runs extraction over every article of the training split.
pub fn extract_from_training_set(articles: &[Article], gaz: &Gazetteer) -> TripleStore {
    let mut store = TripleStore::new();
    for a in articles {
        for t in extract_from_text(&a.text, gaz) {
            store.insert(t, Provenance::TrainingSet);
        }
    }
    store
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn gaz(names: &[&str]) -> Gazetteer {
        Gazetteer::new(names.iter().copied()).unwrap()
    }

    fn one(sentence: &str, g: &Gazetteer) -> Vec<Triple> {
        extract_triples(&word_pieces(sentence), g)
    }

    #[test]
    fn born_in_example() {
        let g = gaz(&["Obama", "Hawaii"]);
        assert_eq!(
            one("Obama was born in Hawaii", &g),
            vec![Triple::new("Obama", "was born in", "Hawaii")]
        );
    }

    #[test]
    fn single_mention_without_copula_gives_nothing() {
        let g = gaz(&["Obama", "Hawaii"]);
        assert!(one("Obama spoke at length", &g).is_empty());
        assert!(one("Nothing here at all", &g).is_empty());
    }

    #[test]
    fn copular_rule() {
        let g = gaz(&["Obama"]);
        assert_eq!(
            one("Obama was a senator from Illinois.", &g),
            vec![Triple::new("Obama", "is", "senator from Illinois")]
        );
    }

    #[test]
    fn copula_with_entity_complement_uses_pair_rule() {
        let g = gaz(&["Ulm", "the Danube city"]);
        let got = one("Ulm is the Danube city", &g);
        assert!(got.iter().all(|t| t.relation != "is" || t.tail != "Danube city"));
    }

    #[test]
    fn spans_need_a_verb_and_no_punctuation() {
        let g = gaz(&["Ann", "Bo"]);
        assert!(one("Ann and Bo", &g).is_empty());
        assert!(one("Ann , visited Bo", &g).is_empty());
        assert_eq!(one("Ann then visited the Bo", &g), vec![Triple::new("Ann", "visited", "Bo")]);
        assert!(one("Ann a b c d e f g h visited Bo", &g).is_empty());
    }

    #[test]
    fn gazetteer_rejects_case_duplicates_and_empty() {
        assert!(Gazetteer::new(["Obama", "obama"]).is_err());
        assert!(Gazetteer::new(["  "]).is_err());
    }

    #[test]
    fn store_dedups_case_insensitively_and_indexes_tails() {
        let mut s = TripleStore::new();
        assert_eq!(s.insert(Triple::new("a", "r", "b"), Provenance::File), Some(0));
        assert_eq!(s.insert(Triple::new("A", "R", "B"), Provenance::File), None);
        assert_eq!(s.len(), 1);
        assert_eq!(s.lookup("b").len(), 1);
        assert_eq!(s.lookup("B")[0].triple, Triple::new("a", "r", "b"));
        assert!(s.lookup("zzz").is_empty());
    }

    #[test]
    fn dynamic_additions_are_visible_and_idempotent() {
        let mut s = TripleStore::new();
        s.insert(Triple::new("x", "r", "y"), Provenance::TrainingSet);
        let before = s.fingerprint();
        assert!(s.add_dynamic([Triple::new("x", "r", "y")]).is_empty());
        assert_eq!(s.fingerprint(), before);
        let added = s.add_dynamic([Triple::new("x", "likes", "z")]);
        assert_eq!(added, vec![1]);
        assert_eq!(s.lookup("z")[0].provenance, Provenance::Dynamic);
        assert_eq!(s.get(0).provenance, Provenance::TrainingSet);
    }

    #[test]
    fn empty_training_set_gives_empty_store() {
        let s = extract_from_training_set(&[], &gaz(&["a"]));
        assert!(s.is_empty());
        assert_eq!(s.report(), "entities: 0, triples: 0, triples/entity: 0.00");
    }

    proptest! {
        #[test]
        fn lookup_matches_linear_scan(
            raw in proptest::collection::vec((0usize..30, 0usize..4, 0usize..30), 1..500)
        ) {
            let mut s = TripleStore::new();
            for (h, r, t) in &raw {
                s.insert(Triple::new(format!("e{h}"), format!("r{r}"), format!("e{t}")), Provenance::File);
            }
            for e in 0..32 {
                let name = format!("e{e}");
                let scan: Vec<usize> = s.triples().iter()
                    .filter(|t| t.triple.head == name || t.triple.tail == name)
                    .map(|t| t.ordinal).collect();
                let got: Vec<usize> = s.lookup(&name).iter().map(|t| t.ordinal).collect();
                prop_assert_eq!(got, scan);
            }
        }
    }
}
