//! Strict `key = value` run configuration.
//!
//! Keys (all optional, defaults in brackets):
//!
//! | key | meaning |
//! |-----|---------|
//! | `token_mode` | `word` or `char` [word] |
//! | `d_model`, `n_layers`, `n_heads` | decoder size [64, 2, 4] |
//! | `seg_len`, `mem_len` | segment length N and cached context M [32, 32] |
//! | `mem_capacity`, `top_k` | memory capacity P and entities per segment K [8, 2] |
//! | `ffn_mult`, `rel_buckets`, `max_triple_tokens` | [4, 16, 32] |
//! | `dropout` | [0.1] |
//! | `seed` | run seed [0] |
//! | `lr`, `warmup`, `epochs` | peak learning rate, warmup steps, passes over the corpus [0.003, 100, 4] |
//! | `beta1`, `beta2`, `eps`, `clip` | Adam and clipping [0.9, 0.999, 1e-8, 1.0] |
//! | `batch_size` | parallel article streams [4] |
//! | `dynamic_extraction` | `true` or `false` [true] |
//! | `ablation` | `full`, `no-relation`, `no-relation-tail`, `empty-memory` [full] |
//! | `scoring` | `tfidf`, `frequency`, `random` [tfidf] |
//! | `tf_scope` | `segment` or `segment+context` [segment] |
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys,
//! repeated keys and unparsable values are errors.

use std::collections::BTreeSet;
use std::str::FromStr;

use relmem_core::corpus::TokenMode;
use relmem_core::harness::{Ablation, RunConfig, TfScope};
use relmem_core::retrieval::EntityScoring;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub run: RunConfig,
    pub token_mode: TokenMode,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            run: RunConfig::default(),
            token_mode: TokenMode::Word,
        }
    }
}

pub const KEYS: &[&str] = &[
    "token_mode",
    "d_model",
    "n_layers",
    "n_heads",
    "seg_len",
    "mem_len",
    "mem_capacity",
    "top_k",
    "ffn_mult",
    "rel_buckets",
    "max_triple_tokens",
    "dropout",
    "seed",
    "lr",
    "warmup",
    "epochs",
    "beta1",
    "beta2",
    "eps",
    "clip",
    "batch_size",
    "dynamic_extraction",
    "ablation",
    "scoring",
    "tf_scope",
];

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

pub fn parse_ablation(v: &str) -> Result<Ablation, String> {
    Ablation::ALL
        .into_iter()
        .find(|a| a.as_str() == v)
        .ok_or_else(|| format!("unknown ablation {v:?}"))
}

fn parse_scoring(v: &str) -> Result<EntityScoring, String> {
    [EntityScoring::TfIdf, EntityScoring::Frequency, EntityScoring::Random]
        .into_iter()
        .find(|s| s.as_str() == v)
        .ok_or_else(|| format!("unknown scoring {v:?}"))
}

fn tf_scope_str(s: TfScope) -> &'static str {
    match s {
        TfScope::Segment => "segment",
        TfScope::SegmentAndContext => "segment+context",
    }
}

impl Settings {
    /// Sets one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let m = &mut self.run.model;
        let o = &mut self.run.optim;
        match key {
            "token_mode" => {
                self.token_mode = match value {
                    "word" => TokenMode::Word,
                    "char" => TokenMode::Char,
                    _ => return Err(format!("unknown token mode {value:?}")),
                }
            }
            "d_model" => m.d_model = num(value)?,
            "n_layers" => m.n_layers = num(value)?,
            "n_heads" => m.n_heads = num(value)?,
            "seg_len" => m.seg_len = num(value)?,
            "mem_len" => m.mem_len = num(value)?,
            "mem_capacity" => m.mem_capacity = num(value)?,
            "top_k" => m.top_k = num(value)?,
            "ffn_mult" => m.ffn_mult = num(value)?,
            "rel_buckets" => m.rel_buckets = num(value)?,
            "max_triple_tokens" => m.max_triple_tokens = num(value)?,
            "dropout" => m.dropout = num(value)?,
            "seed" => m.seed = num(value)?,
            "lr" => o.lr = num(value)?,
            "warmup" => o.warmup = num(value)?,
            "epochs" => o.epochs = num(value)?,
            "beta1" => o.beta1 = num(value)?,
            "beta2" => o.beta2 = num(value)?,
            "eps" => o.eps = num(value)?,
            "clip" => o.clip = num(value)?,
            "batch_size" => self.run.batch_size = num(value)?,
            "dynamic_extraction" => self.run.dynamic_extraction = num(value)?,
            "ablation" => self.run.ablation = parse_ablation(value)?,
            "scoring" => self.run.scoring = parse_scoring(value)?,
            "tf_scope" => {
                self.run.tf_scope = match value {
                    "segment" => TfScope::Segment,
                    "segment+context" => TfScope::SegmentAndContext,
                    _ => return Err(format!("unknown tf scope {value:?}")),
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError { line: n + 1, message };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(err(format!("key {k:?} given twice")));
            }
            self.set(k, v).map_err(err)?;
        }
        self.run
            .validate()
            .map_err(|e| ConfigError { line: 0, message: e.to_string() })
    }

    pub fn parse(text: &str) -> Result<Settings, ConfigError> {
        let mut s = Settings::default();
        s.apply(text)?;
        Ok(s)
    }

    /// Every key in [`KEYS`] order; parses back to an equal value.
    pub fn render(&self) -> String {
        let m = &self.run.model;
        let o = &self.run.optim;
        let values: Vec<String> = vec![
            self.token_mode.as_str().into(),
            m.d_model.to_string(),
            m.n_layers.to_string(),
            m.n_heads.to_string(),
            m.seg_len.to_string(),
            m.mem_len.to_string(),
            m.mem_capacity.to_string(),
            m.top_k.to_string(),
            m.ffn_mult.to_string(),
            m.rel_buckets.to_string(),
            m.max_triple_tokens.to_string(),
            m.dropout.to_string(),
            m.seed.to_string(),
            o.lr.to_string(),
            o.warmup.to_string(),
            o.epochs.to_string(),
            o.beta1.to_string(),
            o.beta2.to_string(),
            o.eps.to_string(),
            o.clip.to_string(),
            self.run.batch_size.to_string(),
            self.run.dynamic_extraction.to_string(),
            self.run.ablation.as_str().into(),
            self.run.scoring.as_str().into(),
            tf_scope_str(self.run.tf_scope).into(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut s = Settings::default();
        s.apply("lr = 0.01\nablation = no-relation\ntoken_mode = char\ntf_scope = segment+context\neps = 1e-9")
            .unwrap();
        assert_eq!(Settings::parse(&s.render()).unwrap(), s);
        assert_eq!(Settings::parse(&Settings::default().render()).unwrap(), Settings::default());
    }

    #[test]
    fn strictness() {
        assert_eq!(Settings::parse("bogus = 1").unwrap_err().line, 1);
        assert_eq!(Settings::parse("# c\n\nlr = 1\nlr = 2").unwrap_err().line, 4);
        assert!(Settings::parse("lr 1").is_err());
        assert!(Settings::parse("dynamic_extraction = yes").is_err());
        assert!(Settings::parse("n_heads = 3").is_err());
        assert!(Settings::parse("").is_ok());
    }
}
