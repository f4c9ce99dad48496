//! Synthetic sessions with planted Markov structure.
//!
//! Items of a locale are split into categories. Each item has
//! `ceil(transition_concentration)` preferred successors inside its category;
//! a walk follows a preferred successor with probability `follow_prob` and
//! otherwise jumps to a uniform category mate. Walk starts are Zipf-popular.

use std::collections::BTreeMap;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{ItemId, Locale, Product, ProductCatalog, SessionRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SynthLocale {
    pub locale: Locale,
    pub n_sessions: usize,
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub locales: Vec<SynthLocale>,
    /// Items per locale.
    pub n_items: usize,
    pub transition_concentration: f64,
    pub category_size: usize,
    pub follow_prob: f64,
    pub popularity_exponent: f64,
    /// Use one transition structure (and catalog text) for every locale.
    pub shared_structure: bool,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(locales: Vec<SynthLocale>, n_items: usize, seed: u64) -> Self {
        SynthConfig {
            locales,
            n_items,
            transition_concentration: 1.0,
            category_size: 20,
            follow_prob: 0.8,
            popularity_exponent: 1.0,
            shared_structure: false,
            seed,
        }
    }
}

/// Generated corpus plus the planted structure, for oracle checks.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub sessions: Vec<SessionRecord>,
    pub catalog: ProductCatalog,
    /// Preferred successors per item.
    pub successors: BTreeMap<ItemId, Vec<ItemId>>,
    /// Category mates per item, excluding the item itself.
    pub category_mates: BTreeMap<ItemId, Vec<ItemId>>,
}

/// `n_sessions` sessions and `n_items` products per locale, each locale
/// with its own transition structure.
pub fn synth_corpus(
    n_sessions: usize,
    n_items: usize,
    locales: &[Locale],
    transition_concentration: f64,
    seed: u64,
) -> Result<(Vec<SessionRecord>, ProductCatalog)> {
    let mut cfg = SynthConfig::new(
        locales
            .iter()
            .map(|l| SynthLocale {
                locale: l.clone(),
                n_sessions,
            })
            .collect(),
        n_items,
        seed,
    );
    cfg.transition_concentration = transition_concentration;
    let c = synth_corpus_with(&cfg)?;
    Ok((c.sessions, c.catalog))
}

struct Structure {
    category_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    successors: Vec<Vec<usize>>,
    start: WeightedIndex<f64>,
    category_words: Vec<String>,
    brands: Vec<Option<String>>,
    item_words: Vec<String>,
    prices: Vec<f64>,
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "ze", "po", "da", "fu", "gi", "ha", "ju", "ko", "la", "mo", "ni",
    "pe", "qu", "ri", "su", "te", "wa", "xo", "yu", "bo", "ce", "di",
];

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())])
        .collect()
}

fn draw_structure(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Structure> {
    let n = cfg.n_items;
    let n_cat = (n / cfg.category_size.max(2)).max(1);
    let category_of: Vec<usize> = (0..n).map(|i| i % n_cat).collect();
    let mut members = vec![Vec::new(); n_cat];
    for (i, &c) in category_of.iter().enumerate() {
        members[c].push(i);
    }
    let n_succ = cfg.transition_concentration.ceil() as usize;
    let successors = (0..n)
        .map(|i| {
            let mut mates: Vec<usize> = members[category_of[i]].iter().copied().filter(|&j| j != i).collect();
            mates.shuffle(rng);
            mates.truncate(n_succ);
            mates
        })
        .collect();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    let weights: Vec<f64> = ranks
        .iter()
        .map(|&r| 1.0 / ((r + 1) as f64).powf(cfg.popularity_exponent))
        .collect();
    let start = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
    let category_words = (0..n_cat).map(|_| word(rng, 3)).collect();
    let brands = (0..n_cat).map(|_| rng.gen_bool(0.5).then(|| word(rng, 2))).collect();
    let item_words = (0..n).map(|_| word(rng, 4)).collect();
    let prices = (0..n).map(|_| (rng.gen_range(500..10_000) as f64) / 100.0).collect();
    Ok(Structure {
        category_of,
        members,
        successors,
        start,
        category_words,
        brands,
        item_words,
        prices,
    })
}

fn walk(st: &Structure, follow_prob: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let len = rng.gen_range(3..=12);
    let mut cur = st.start.sample(rng);
    let mut out = Vec::with_capacity(len);
    out.push(cur);
    while out.len() < len {
        let succ = &st.successors[cur];
        let mates = &st.members[st.category_of[cur]];
        cur = if !succ.is_empty() && rng.gen_bool(follow_prob) {
            succ[rng.gen_range(0..succ.len())]
        } else if mates.len() > 1 {
            loop {
                let j = mates[rng.gen_range(0..mates.len())];
                if j != cur {
                    break j;
                }
            }
        } else {
            cur
        };
        out.push(cur);
    }
    out
}

pub fn synth_corpus_with(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.n_items < 10 {
        return Err(Error::invalid("synthetic corpus needs at least 10 items"));
    }
    if cfg.transition_concentration.is_nan() || cfg.transition_concentration <= 0.0 {
        return Err(Error::invalid("transition_concentration must be > 0"));
    }
    if !(0.0..=1.0).contains(&cfg.follow_prob) {
        return Err(Error::invalid("follow_prob must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shared = if cfg.shared_structure {
        Some(draw_structure(cfg, &mut rng)?)
    } else {
        None
    };

    let mut catalog = ProductCatalog::new();
    let mut successors = BTreeMap::new();
    let mut category_mates = BTreeMap::new();
    let mut sessions: Vec<(Locale, Vec<usize>)> = Vec::new();
    let raw = |i: usize| format!("P{i:05}");

    for sl in &cfg.locales {
        let own;
        let st = match &shared {
            Some(s) => s,
            None => {
                own = draw_structure(cfg, &mut rng)?;
                &own
            }
        };
        let loc = &sl.locale;
        let id = |i: usize| ItemId::new(loc.clone(), &raw(i));
        for i in 0..cfg.n_items {
            let c = st.category_of[i];
            catalog.insert(Product {
                id: id(i)?,
                title: format!("{}: {}", st.category_words[c], st.item_words[i]),
                brand: st.brands[c].clone(),
                price: Some(st.prices[i]),
                extra: Vec::new(),
            })?;
            successors.insert(
                id(i)?,
                st.successors[i].iter().map(|&j| id(j)).collect::<Result<Vec<_>>>()?,
            );
            category_mates.insert(
                id(i)?,
                st.members[c]
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| id(j))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        for _ in 0..sl.n_sessions {
            sessions.push((loc.clone(), walk(st, cfg.follow_prob, &mut rng)));
        }
    }

    sessions.shuffle(&mut rng);
    let sessions = sessions
        .into_iter()
        .enumerate()
        .map(|(sid, (loc, w))| {
            let q = |i: usize| ItemId::new(loc.clone(), &raw(i));
            let (last, prev) = w.split_last().expect("walks have length >= 3");
            Ok(SessionRecord {
                session_id: sid as u64,
                locale: loc.clone(),
                prev_items: prev.iter().map(|&i| q(i)).collect::<Result<_>>()?,
                next_item: Some(q(*last)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthCorpus {
        sessions,
        catalog,
        successors,
        category_mates,
    })
}
