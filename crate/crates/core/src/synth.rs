//! A small fictional world for end-to-end experiments.
//!
//! Every person has four facts. Training biographies state a person's facts
//! after an introduction that only names them; held-out people have their
//! facts stated once, in registry articles of the training split, and get
//! one biography in the evaluation split. A third group appears only in
//! evaluation articles that state the facts, talk about something else for
//! a segment, and then state the facts again.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{word_pieces, Article};
use crate::error::Result;
use crate::kgraph::Triple;

const FIRST: &[&str] = &[
    "Aldric", "Brisa", "Corvin", "Dalia", "Emeric", "Fenna", "Galen", "Hesper", "Ivo", "Jorun", "Kestrel",
    "Liora", "Marek", "Nerys", "Osric", "Perrin", "Quilla", "Rowan", "Sabine", "Tavish", "Ulric", "Vesna",
    "Wystan", "Xanthe", "Yorick", "Zelda", "Anselm", "Bettany", "Caius", "Delphine", "Eamon", "Florian",
    "Gisela", "Hamish", "Isolde", "Jasper", "Kaia", "Leander", "Maren", "Niall",
];
const LAST: &[&str] = &[
    "Ashgrove", "Blackwood", "Coldwater", "Dunmore", "Everhart", "Fairclough", "Greaves", "Holloway",
    "Ironside", "Jessop", "Kettering", "Larkspur", "Merriweather", "Northcott", "Oakhurst", "Pemberton",
    "Quenby", "Ravensworth", "Stroud", "Thornbury", "Underhill", "Vance", "Whitlock", "Yardley", "Ainsley",
    "Brackenridge", "Cheswick", "Darrow", "Ellery", "Foxley", "Gatewood", "Hartigan", "Inglewood",
    "Kingsley", "Lockhart", "Marlowe", "Netherby", "Ormsby", "Penhallow", "Radcliffe",
];
const CITIES: &[&str] = &[
    "Valdora", "Brennick", "Castamere", "Dunhollow", "Eskerby", "Fallowmere", "Glenrith", "Harrowgate",
    "Istervale", "Joran", "Kelmarsh", "Lunmoor",
];
const COMPANIES: &[&str] = &[
    "Quorvex", "Altimara", "Brightloom", "Corundel", "Dravix", "Ellsworth", "Fennico", "Gravitas",
    "Helion", "Ismara",
];
const INSTRUMENTS: &[&str] = &["Zithara", "Bellowine", "Crumhorn", "Dulcet", "Echolyre", "Fifebrand", "Gembal", "Harpsin"];

/// Intro sentences; `{}` is the person's name, mentioned exactly once.
const INTROS: &[&str] = &[
    "{} grew up near the old harbor .",
    "Many people know {} from the radio .",
    "{} spent most summers at a farm .",
    "Friends describe {} as calm and patient .",
    "{} enjoys long walks before dawn .",
    "Local papers often wrote about {} .",
    "{} keeps a small garden at home .",
    "Neighbors remember {} as a kind soul .",
    "{} once traveled across the northern hills .",
    "Few stories about {} are widely told .",
    "{} rarely speaks about the past .",
    "A quiet morning suits {} best .",
];

/// Sentences that mention nobody.
const FILLERS: &[&str] = &[
    "It was late .",
    "Rain fell again .",
    "Days grew short .",
    "The market was busy .",
    "Winter came early again .",
    "Nobody expected the snow .",
    "The river rose after storms .",
    "Old roads wind through valleys .",
    "Lanterns glowed along the quiet lane .",
    "Children played near the stone bridge .",
    "The bakery opened before the sun rose .",
    "Travelers rested by the fire at night .",
    "The harvest that year was larger than usual .",
    "Long letters arrived from distant towns every spring .",
    "The old mill turned slowly in the cold wind .",
    "Farmers gathered at the square to trade fresh goods .",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Relation {
    BornIn,
    LivesIn,
    WorksFor,
    Plays,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::BornIn, Relation::LivesIn, Relation::WorksFor, Relation::Plays];

    /// Relation string as the extractor produces it.
    pub fn label(self) -> &'static str {
        match self {
            Relation::BornIn => "was born in",
            Relation::LivesIn => "lives in",
            Relation::WorksFor => "works for",
            Relation::Plays => "plays",
        }
    }

    /// Words between the person and the tail in running text.
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::BornIn => "was born in",
            Relation::LivesIn => "lives in",
            Relation::WorksFor => "works for",
            Relation::Plays => "plays the",
        }
    }

    /// Entities that can fill the tail slot.
    pub fn pool(self) -> &'static [&'static str] {
        match self {
            Relation::BornIn | Relation::LivesIn => CITIES,
            Relation::WorksFor => COMPANIES,
            Relation::Plays => INSTRUMENTS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    /// Biographies in the training split.
    Train,
    /// Facts only in training registries; one biography in evaluation.
    HeldOut,
    /// Only in evaluation articles.
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Person {
    pub name: String,
    pub group: Group,
    /// Tails in [`Relation::ALL`] order.
    pub tails: [String; 4],
}

impl Person {
    pub fn tail(&self, r: Relation) -> &str {
        &self.tails[r as usize]
    }

    pub fn triple(&self, r: Relation) -> Triple {
        Triple::new(self.name.clone(), r.label(), self.tail(r))
    }

    pub fn triples(&self) -> Vec<Triple> {
        Relation::ALL.iter().map(|&r| self.triple(r)).collect()
    }

    pub fn first_name(&self) -> &str {
        self.name.split(' ').next().unwrap_or(&self.name)
    }

    pub fn fact_sentence(&self, r: Relation) -> String {
        format!("{} {} {}.", self.name, r.phrase(), self.tail(r))
    }

    /// The fact with only the first name, which the tagger does not know.
    pub fn short_fact_sentence(&self, r: Relation) -> String {
        format!("{} {} {}.", self.first_name(), r.phrase(), self.tail(r))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    pub train_persons: usize,
    pub held_out_persons: usize,
    pub dynamic_persons: usize,
    pub bios_per_person: usize,
    pub persons_per_registry: usize,
    /// Block length in tokens; biographies are built from blocks of exactly
    /// this many word tokens.
    pub block: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 2024,
            train_persons: 1200,
            held_out_persons: 40,
            dynamic_persons: 20,
            bios_per_person: 1,
            persons_per_registry: 4,
            block: 32,
        }
    }
}

/// One evaluation biography split at its block boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeldOutBio {
    pub person: usize,
    pub intro: String,
    pub facts: String,
}

#[derive(Clone, Debug)]
pub struct World {
    pub persons: Vec<Person>,
    pub train: Vec<Article>,
    pub eval: Vec<Article>,
    pub held_out_bios: Vec<HeldOutBio>,
}

fn count(text: &str) -> usize {
    word_pieces(text).len()
}

fn pick_exact<'a, R: Rng>(len: usize, rng: &mut R) -> &'a str {
    let fits: Vec<&str> = FILLERS.iter().copied().filter(|s| count(s) == len).collect();
    fits.choose(rng).copied().expect("filler of every length 4..=10")
}

/// Pads `required` sentences with fillers to exactly `target` tokens and
/// shuffles the result.
fn block<R: Rng>(mut required: Vec<String>, target: usize, rng: &mut R) -> String {
    let mut need = target - required.iter().map(|s| count(s)).sum::<usize>();
    while need > 0 {
        assert!(need >= 4, "block cannot be padded");
        if need <= 10 {
            required.push(pick_exact(need, rng).to_string());
            break;
        }
        let fits: Vec<&str> = FILLERS
            .iter()
            .copied()
            .filter(|s| count(s) + 4 <= need)
            .collect();
        let s = fits.choose(rng).unwrap();
        need -= count(s);
        required.push(s.to_string());
    }
    required.shuffle(rng);
    canonical(&required.join(" "))
}

fn canonical(text: &str) -> String {
    text.replace(" .", ".")
}

fn intro_block<R: Rng>(p: &Person, target: usize, rng: &mut R) -> String {
    let picks: Vec<String> = INTROS
        .choose_multiple(rng, 2)
        .map(|t| t.replacen("{}", &p.name, 1))
        .collect();
    block(picks, target, rng)
}

fn facts_block<R: Rng>(p: &Person, short: bool, target: usize, rng: &mut R) -> String {
    let facts = Relation::ALL
        .iter()
        .map(|&r| if short { p.short_fact_sentence(r) } else { p.fact_sentence(r) })
        .collect();
    block(facts, target, rng)
}

impl World {
    pub fn generate(cfg: &WorldConfig) -> Result<World> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let total = cfg.train_persons + cfg.held_out_persons + cfg.dynamic_persons;
        let mut names: Vec<String> = FIRST
            .iter()
            .flat_map(|f| LAST.iter().map(move |l| format!("{f} {l}")))
            .collect();
        names.shuffle(&mut rng);
        assert!(total <= names.len(), "not enough names");
        let persons: Vec<Person> = names
            .into_iter()
            .take(total)
            .enumerate()
            .map(|(i, name)| {
                let group = if i < cfg.train_persons {
                    Group::Train
                } else if i < cfg.train_persons + cfg.held_out_persons {
                    Group::HeldOut
                } else {
                    Group::Dynamic
                };
                let born = *CITIES.choose(&mut rng).unwrap();
                let lives = loop {
                    let c = *CITIES.choose(&mut rng).unwrap();
                    if c != born {
                        break c;
                    }
                };
                let works = *COMPANIES.choose(&mut rng).unwrap();
                let plays = *INSTRUMENTS.choose(&mut rng).unwrap();
                Person {
                    name,
                    group,
                    tails: [born.into(), lives.into(), works.into(), plays.into()],
                }
            })
            .collect();

        let b = cfg.block;
        let mut train = Vec::new();
        for (i, p) in persons.iter().enumerate().filter(|(_, p)| p.group == Group::Train) {
            for k in 0..cfg.bios_per_person {
                let text = format!("{} {}", intro_block(p, b, &mut rng), facts_block(p, true, b, &mut rng));
                train.push(Article::new(format!("bio-{i}-{k}"), text)?);
            }
        }
        let mut listed: Vec<usize> = (0..persons.len()).filter(|&i| persons[i].group != Group::Dynamic).collect();
        listed.shuffle(&mut rng);
        for (k, chunk) in listed.chunks(cfg.persons_per_registry.max(1)).enumerate() {
            let mut text = String::from("The registry lists the following records.");
            for &i in chunk {
                let mut rels = Relation::ALL;
                rels.shuffle(&mut rng);
                for r in rels {
                    text.push(' ');
                    text.push_str(&persons[i].fact_sentence(r));
                }
            }
            train.push(Article::new(format!("registry-{k}"), text)?);
        }
        train.shuffle(&mut rng);

        let mut eval = Vec::new();
        let mut held_out_bios = Vec::new();
        for (i, p) in persons.iter().enumerate() {
            match p.group {
                Group::Train => {}
                Group::HeldOut => {
                    let intro = intro_block(p, b, &mut rng);
                    let facts = facts_block(p, true, b, &mut rng);
                    eval.push(Article::new(format!("heldout-{i}"), format!("{intro} {facts}"))?);
                    held_out_bios.push(HeldOutBio { person: i, intro, facts });
                }
                Group::Dynamic => {
                    let first = facts_block(p, false, b, &mut rng);
                    let middle = intro_block(p, b, &mut rng);
                    let again = facts_block(p, true, b, &mut rng);
                    eval.push(Article::new(format!("dynamic-{i}"), format!("{first} {middle} {again}"))?);
                }
            }
        }
        Ok(World {
            persons,
            train,
            eval,
            held_out_bios,
        })
    }

    /// Every name the tagger should know.
    pub fn gazetteer_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.persons.iter().map(|p| p.name.clone()).collect();
        for pool in [CITIES, COMPANIES, INSTRUMENTS] {
            out.extend(pool.iter().map(|s| s.to_string()));
        }
        out
    }

    /// Triples stated in the training split.
    pub fn training_triples(&self) -> Vec<Triple> {
        self.persons
            .iter()
            .filter(|p| p.group != Group::Dynamic)
            .flat_map(Person::triples)
            .collect()
    }

    pub fn group(&self, g: Group) -> Vec<usize> {
        (0..self.persons.len()).filter(|&i| self.persons[i].group == g).collect()
    }

    /// Another entity of the same type as the tail of `(person, r)`,
    /// avoiding every tail the person already has.
    pub fn alternative_tail<R: Rng>(&self, person: usize, r: Relation, rng: &mut R) -> String {
        let p = &self.persons[person];
        let options: Vec<&str> = r
            .pool()
            .iter()
            .copied()
            .filter(|c| !p.tails.iter().any(|t| t == c))
            .collect();
        options.choose(rng).unwrap().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgraph::{extract_from_training_set, Gazetteer};
    use alloc::collections::BTreeSet;

    #[test]
    fn fillers_cover_every_pad_length() {
        for len in 4..=10 {
            assert!(FILLERS.iter().any(|s| count(s) == len), "no filler of length {len}");
        }
    }

    #[test]
    fn biographies_are_block_aligned() {
        let w = World::generate(&WorldConfig::default()).unwrap();
        for a in w.train.iter().filter(|a| a.id.starts_with("bio")) {
            assert_eq!(count(&a.text), 64, "{}", a.text);
        }
        for bio in &w.held_out_bios {
            assert_eq!(count(&bio.intro), 32);
            assert_eq!(count(&bio.facts), 32);
        }
        for a in w.eval.iter().filter(|a| a.id.starts_with("dynamic")) {
            assert_eq!(count(&a.text), 96);
        }
    }

    #[test]
    fn extraction_recovers_exactly_the_stated_facts() {
        let w = World::generate(&WorldConfig::default()).unwrap();
        let gaz = Gazetteer::new(w.gazetteer_names()).unwrap();
        let store = extract_from_training_set(&w.train, &gaz);
        let got: BTreeSet<_> = store.triples().iter().map(|t| t.triple.key()).collect();
        let want: BTreeSet<_> = w.training_triples().iter().map(Triple::key).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn intro_blocks_name_only_the_person() {
        let w = World::generate(&WorldConfig::default()).unwrap();
        let gaz = Gazetteer::new(w.gazetteer_names()).unwrap();
        for bio in &w.held_out_bios {
            let pieces = word_pieces(&bio.intro);
            let found = gaz.find(&pieces);
            assert_eq!(found.len(), 2);
            assert!(found.iter().all(|m| gaz.name(m.entry) == w.persons[bio.person].name));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = World::generate(&WorldConfig::default()).unwrap();
        let b = World::generate(&WorldConfig::default()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.eval, b.eval);
        let c = World::generate(&WorldConfig { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a.train, c.train);
    }
}
