//! Articles, tokenisation and fixed-length segmentation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const START_TOKEN: &str = "<s>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Punctuation split off as standalone tokens in word mode.
const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '(', ')', '"'];
const NO_SPACE_BEFORE: &[&str] = &[".", ",", "!", "?", ";", ":", ")"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Article {
    pub id: String,
    pub text: String,
}

impl Article {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let (id, text) = (id.into(), text.into());
        if text.is_empty() {
            return Err(Error::InvalidConfig(format!("article {id} has empty text")));
        }
        Ok(Article { id, text })
    }
}

/// Checks that article ids are unique.
pub fn check_unique_ids(articles: &[Article]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for a in articles {
        if !seen.insert(a.id.as_str()) {
            return Err(Error::InvalidConfig(format!("duplicate article id {}", a.id)));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenMode {
    Char,
    Word,
}

impl TokenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenMode::Char => "char",
            TokenMode::Word => "word",
        }
    }
}

/// A word-mode token and its byte range in the source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WordPiece<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Whitespace split with punctuation broken out into separate pieces.
pub fn word_pieces(text: &str) -> Vec<WordPiece<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() || PUNCT.contains(&ch) {
            if let Some(s) = start.take() {
                out.push(WordPiece { text: &text[s..i], start: s, end: i });
            }
            if !ch.is_whitespace() {
                let e = i + ch.len_utf8();
                out.push(WordPiece { text: &text[i..e], start: i, end: e });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(WordPiece { text: &text[s..], start: s, end: text.len() });
    }
    out
}

fn split_tokens(text: &str, mode: TokenMode) -> Vec<String> {
    match mode {
        TokenMode::Char => text.chars().map(|c| c.to_string()).collect(),
        TokenMode::Word => word_pieces(text).into_iter().map(|p| p.text.to_string()).collect(),
    }
}

/// Token/id bijection with the three specials at ids 0, 1 and 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    mode: TokenMode,
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub const START: usize = 0;
    pub const UNK: usize = 1;
    pub const PAD: usize = 2;

    /// Builds from an explicit token list whose first three entries must be
    /// the specials.
    pub fn from_tokens(mode: TokenMode, tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3
            || tokens[0] != START_TOKEN
            || tokens[1] != UNK_TOKEN
            || tokens[2] != PAD_TOKEN
        {
            return Err(Error::InvalidConfig("vocabulary must start with <s>, <unk>, <pad>".into()));
        }
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { mode, tokens, ids })
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        split_tokens(text, self.mode)
            .iter()
            .map(|t| self.id(t).unwrap_or(Self::UNK))
            .collect()
    }

    /// Inverse of [`tokenize`](Self::tokenize) for canonically spaced text.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        self.detokenize_with_offsets(ids).0
    }

    /// Detokenised text plus the byte range each token occupies in it.
    pub fn detokenize_with_offsets(&self, ids: &[usize]) -> (String, Vec<(usize, usize)>) {
        let mut text = String::new();
        let mut spans = Vec::with_capacity(ids.len());
        let mut prev: Option<&str> = None;
        for &id in ids {
            let tok = self.token(id);
            if self.mode == TokenMode::Word {
                let glue = NO_SPACE_BEFORE.contains(&tok) || prev == Some("(");
                if prev.is_some() && !glue {
                    text.push(' ');
                }
            }
            let s = text.len();
            text.push_str(tok);
            spans.push((s, text.len()));
            prev = Some(tok);
        }
        (text, spans)
    }
}

/// Deterministic vocabulary: specials first, then tokens by descending
/// frequency with lexicographic tie-break.
pub fn build_vocab(articles: &[Article], mode: TokenMode) -> Result<Vocabulary> {
    if articles.iter().all(|a| a.text.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for a in articles {
        for t in split_tokens(&a.text, mode) {
            *freq.entry(t).or_default() += 1;
        }
    }
    for s in [START_TOKEN, UNK_TOKEN, PAD_TOKEN] {
        freq.remove(s);
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = [START_TOKEN, UNK_TOKEN, PAD_TOKEN].iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().map(|(t, _)| t));
    Vocabulary::from_tokens(mode, tokens)
}

/// A fixed-length slice of one article's token stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub tokens: Vec<usize>,
    pub article: String,
    pub index: usize,
}

/// Cuts `tokens` into consecutive segments of length `n` (the last may be
/// shorter).
pub fn segment_stream(article: &str, tokens: &[usize], n: usize) -> Vec<Segment> {
    assert!(n >= 1, "segment length must be positive");
    tokens
        .chunks(n)
        .enumerate()
        .map(|(index, c)| Segment {
            tokens: c.to_vec(),
            article: article.to_string(),
            index,
        })
        .collect()
}

/// An article after tokenisation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedArticle {
    pub id: String,
    pub tokens: Vec<usize>,
}

pub fn tokenize_articles(articles: &[Article], vocab: &Vocabulary) -> Vec<TokenizedArticle> {
    articles
        .iter()
        .map(|a| TokenizedArticle {
            id: a.id.clone(),
            tokens: vocab.tokenize(&a.text),
        })
        .collect()
}
