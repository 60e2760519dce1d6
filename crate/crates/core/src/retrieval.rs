//! From an observed segment to a relational-memory update: tag entities,
//! score them, keep the top K, fetch their one-hop triples and push them
//! through the capacity-bounded FIFO memory.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::corpus::word_pieces;
use crate::kgraph::{Gazetteer, RelationTriple, TripleKey, TripleStore};

/// All mentions of one entity inside a piece of text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityMention {
    pub entity: String,
    pub count: usize,
    /// Word-token spans `[start, end)`, in order of appearance.
    pub spans: Vec<(usize, usize)>,
}

impl EntityMention {
    pub fn first_position(&self) -> usize {
        self.spans[0].0
    }
}

/// Gazetteer tagging of `text`, one record per entity ordered by first
/// appearance.
pub fn tag_entities(text: &str, gaz: &Gazetteer) -> Vec<EntityMention> {
    let pieces = word_pieces(text);
    let mut out: Vec<EntityMention> = Vec::new();
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    for m in gaz.find(&pieces) {
        match slot.get(&m.entry) {
            Some(&i) => {
                out[i].count += 1;
                out[i].spans.push((m.start, m.end));
            }
            None => {
                slot.insert(m.entry, out.len());
                out.push(EntityMention {
                    entity: gaz.name(m.entry).into(),
                    count: 1,
                    spans: alloc::vec![(m.start, m.end)],
                });
            }
        }
    }
    out
}

/// Byte ranges in `text` covered by gazetteer mentions.
pub fn mention_byte_spans(text: &str, gaz: &Gazetteer) -> Vec<(usize, usize)> {
    let pieces = word_pieces(text);
    gaz.find(&pieces)
        .into_iter()
        .map(|m| (pieces[m.start].start, pieces[m.end - 1].end))
        .collect()
}

/// Document frequencies of gazetteer entities over the training articles.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TfIdfIndex {
    articles: usize,
    df: BTreeMap<String, usize>,
}

impl TfIdfIndex {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, gaz: &Gazetteer) -> Self {
        let mut idx = TfIdfIndex::default();
        for text in texts {
            idx.articles += 1;
            let seen: BTreeSet<String> = tag_entities(text, gaz).into_iter().map(|m| m.entity).collect();
            for e in seen {
                *idx.df.entry(e).or_default() += 1;
            }
        }
        idx
    }

    /// Rebuilds an index from stored counts.
    pub fn from_counts(articles: usize, df: BTreeMap<String, usize>) -> Self {
        TfIdfIndex { articles, df }
    }

    pub fn article_count(&self) -> usize {
        self.articles
    }

    pub fn df(&self, entity: &str) -> usize {
        self.df.get(entity).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<String, usize> {
        &self.df
    }

    /// Smoothed inverse document frequency `ln((1 + A) / (1 + df))`.
    pub fn idf(&self, entity: &str) -> f64 {
        libm::log((1.0 + self.articles as f64) / (1.0 + self.df(entity) as f64))
    }
}

pub fn tfidf_score(mention: &EntityMention, index: &TfIdfIndex) -> f64 {
    mention.count as f64 * index.idf(&mention.entity)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntityScoring {
    TfIdf,
    Frequency,
    Random,
}

impl EntityScoring {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityScoring::TfIdf => "tfidf",
            EntityScoring::Frequency => "frequency",
            EntityScoring::Random => "random",
        }
    }

    pub fn score_all<R: Rng + ?Sized>(
        self,
        mentions: &[EntityMention],
        index: &TfIdfIndex,
        rng: &mut R,
    ) -> Vec<f64> {
        mentions
            .iter()
            .map(|m| match self {
                EntityScoring::TfIdf => tfidf_score(m, index),
                EntityScoring::Frequency => m.count as f64,
                EntityScoring::Random => rng.random::<f64>(),
            })
            .collect()
    }
}

/// The `k` best-scoring entities. Ties go to the earlier first mention, then
/// to the lexicographically smaller name.
pub fn select_top_k(mentions: &[EntityMention], scores: &[f64], k: usize) -> Vec<String> {
    assert_eq!(mentions.len(), scores.len());
    assert!(k >= 1, "top-k needs k >= 1");
    let mut order: Vec<usize> = (0..mentions.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(mentions[a].first_position().cmp(&mentions[b].first_position()))
            .then(mentions[a].entity.cmp(&mentions[b].entity))
    });
    order
        .into_iter()
        .take(k)
        .map(|i| mentions[i].entity.clone())
        .collect()
}

/// Concatenated one-hop subgraphs of `entities`, first occurrence kept.
pub fn retrieve(entities: &[String], store: &TripleStore) -> Vec<RelationTriple> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for e in entities {
        for &o in store.lookup_ordinals(e) {
            if seen.insert(o) {
                out.push(store.get(o).clone());
            }
        }
    }
    out
}

/// Capacity-bounded FIFO of retrieved triples, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationalMemory {
    capacity: usize,
    queue: VecDeque<RelationTriple>,
}

impl RelationalMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "memory capacity must be positive");
        RelationalMemory {
            capacity,
            queue: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationTriple> {
        self.queue.iter()
    }

    pub fn entries(&self) -> Vec<RelationTriple> {
        self.queue.iter().cloned().collect()
    }

    fn position(&self, key: &TripleKey) -> Option<usize> {
        self.queue.iter().position(|t| &t.triple.key() == key)
    }

    /// Inserts newly retrieved triples.
    ///
    /// More candidates than capacity: a uniform random subset of exactly
    /// `capacity` replaces the queue (kept in retrieval order). Otherwise
    /// candidates are appended, a resident triple moves to the newest slot
    /// instead of being duplicated, and the oldest entries are evicted.
    pub fn update<R: Rng + ?Sized>(&mut self, candidates: Vec<RelationTriple>, rng: &mut R) {
        let mut uniq: Vec<RelationTriple> = Vec::with_capacity(candidates.len());
        let mut keys = BTreeSet::new();
        for c in candidates {
            if keys.insert(c.triple.key()) {
                uniq.push(c);
            }
        }
        if uniq.len() > self.capacity {
            let mut picked = rand::seq::index::sample(rng, uniq.len(), self.capacity).into_vec();
            picked.sort_unstable();
            let mut slots: Vec<Option<RelationTriple>> = uniq.into_iter().map(Some).collect();
            self.queue = picked.into_iter().filter_map(|i| slots[i].take()).collect();
            return;
        }
        for c in uniq {
            if let Some(i) = self.position(&c.triple.key()) {
                self.queue.remove(i);
            }
            self.queue.push_back(c);
            while self.queue.len() > self.capacity {
                self.queue.pop_front();
            }
        }
    }

    /// Replaces the contents outright (used for interventions).
    pub fn load(&mut self, triples: Vec<RelationTriple>) {
        self.queue = triples.into_iter().take(self.capacity).collect();
    }

    /// Replaces the triple at `slot` in place.
    pub fn replace(&mut self, slot: usize, triple: RelationTriple) {
        self.queue[slot] = triple;
    }

    pub fn reset(&mut self) {
        self.queue.clear();
    }

    /// SHA-256 over the ordered contents.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.queue {
            let k = t.triple.key();
            for f in [&k.0, &k.1, &k.2] {
                h.update(f.as_bytes());
                h.update([0u8]);
            }
            h.update((t.ordinal as u64).to_le_bytes());
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgraph::{Provenance, Triple};
    use alloc::format;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rt(i: usize) -> RelationTriple {
        RelationTriple {
            triple: Triple::new(format!("h{i}"), "r", format!("t{i}")),
            provenance: Provenance::File,
            ordinal: i,
        }
    }

    #[test]
    fn longest_match_wins() {
        let g = Gazetteer::new(["Barack Obama", "Obama"]).unwrap();
        let m = tag_entities("Barack Obama met Obama", &g);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].entity.as_str(), m[0].count, m[0].spans.clone()), ("Barack Obama", 1, vec![(0, 2)]));
        assert_eq!((m[1].entity.as_str(), m[1].count, m[1].spans.clone()), ("Obama", 1, vec![(3, 4)]));
        assert!(tag_entities("nobody here", &g).is_empty());
    }

    #[test]
    fn case_insensitive_counts_aggregate() {
        let g = Gazetteer::new(["Ulm"]).unwrap();
        let m = tag_entities("ULM and ulm and Ulm.", &g);
        assert_eq!(m[0].count, 3);
        assert_eq!(m[0].entity, "Ulm");
        let spans = mention_byte_spans("x Ulm.", &g);
        assert_eq!(spans, vec![(2, 5)]);
    }

    #[test]
    fn tfidf_examples() {
        let g = Gazetteer::new(["A", "B"]).unwrap();
        let idx = TfIdfIndex::build(["A x", "A B", "A"], &g);
        assert_eq!(idx.article_count(), 3);
        let a = EntityMention { entity: "A".into(), count: 4, spans: vec![(0, 1)] };
        assert_eq!(tfidf_score(&a, &idx), 0.0);

        let idx = TfIdfIndex::from_counts(9, BTreeMap::new());
        let z = EntityMention { entity: "Z".into(), count: 2, spans: vec![(0, 1)] };
        assert!((tfidf_score(&z, &idx) - 4.605_170_186).abs() < 1e-8);
        let z2 = EntityMention { count: 4, ..z.clone() };
        assert_eq!(tfidf_score(&z2, &idx), 2.0 * tfidf_score(&z, &idx));
    }

    #[test]
    fn top_k_ties_and_short_lists() {
        let ms: Vec<EntityMention> = ["c", "a", "b"]
            .iter()
            .enumerate()
            .map(|(i, e)| EntityMention { entity: (*e).into(), count: 1, spans: vec![(i, i + 1)] })
            .collect();
        assert_eq!(select_top_k(&ms, &[1.0, 1.0, 1.0], 5), ["c", "a", "b"]);
        assert_eq!(select_top_k(&ms, &[1.0, 2.0, 1.0], 2), ["a", "c"]);
    }

    #[test]
    fn retrieve_dedups_across_entities() {
        let mut s = TripleStore::new();
        s.insert(Triple::new("x", "r", "y"), Provenance::File);
        s.insert(Triple::new("z", "r", "w"), Provenance::File);
        let got = retrieve(&["x".into(), "y".into(), "z".into()], &s);
        assert_eq!(got.iter().map(|t| t.ordinal).collect::<Vec<_>>(), [0, 1]);
    }

    #[test]
    fn memory_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = RelationalMemory::new(8);
        m.update((0..3).map(rt).collect(), &mut rng);
        assert_eq!(m.entries().iter().map(|t| t.ordinal).collect::<Vec<_>>(), [0, 1, 2]);

        let mut a = RelationalMemory::new(8);
        let mut b = RelationalMemory::new(8);
        a.update((0..12).map(rt).collect(), &mut ChaCha8Rng::seed_from_u64(3));
        b.update((0..12).map(rt).collect(), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);

        let mut full = RelationalMemory::new(8);
        full.update((1..=8).map(rt).collect(), &mut rng);
        full.update(vec![rt(100), rt(101)], &mut rng);
        assert_eq!(
            full.entries().iter().map(|t| t.ordinal).collect::<Vec<_>>(),
            [3, 4, 5, 6, 7, 8, 100, 101]
        );

        full.reset();
        assert!(full.is_empty());
        full.reset();
        assert_eq!(full.len(), 0);
    }

    #[test]
    fn resident_triples_are_refreshed() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = RelationalMemory::new(3);
        m.update(vec![rt(1), rt(2), rt(3)], &mut rng);
        m.update(vec![rt(1)], &mut rng);
        assert_eq!(m.entries().iter().map(|t| t.ordinal).collect::<Vec<_>>(), [2, 3, 1]);
    }
}
