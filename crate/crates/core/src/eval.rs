//! Ranking, MRR@K and model ensembling.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::candgen::CandidateSource;
use crate::corpus::{ItemId, ItemIdx, Locale, Session, Vocab};
use crate::covis::ItemStats;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredItem {
    pub item: ItemId,
    pub prob: f64,
    pub source: CandidateSource,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedList {
    pub session_id: u64,
    pub items: Vec<ItemId>,
}

impl RankedList {
    /// 1-based position of `item`, if listed.
    pub fn rank_of(&self, item: &ItemId) -> Option<usize> {
        self.items.iter().position(|i| i == item).map(|p| p + 1)
    }
}

fn order(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.prob
        .total_cmp(&a.prob)
        .then(a.source.cmp(&b.source))
        .then_with(|| a.item.cmp(&b.item))
}

/// Descending probability, then source priority, then ascending id; top `k`.
pub fn rank(session_id: u64, mut scored: Vec<ScoredItem>, k: usize) -> Result<RankedList> {
    let mut seen = HashSet::with_capacity(scored.len());
    for s in &scored {
        if !seen.insert(&s.item) {
            return Err(Error::invalid(format!("session {session_id}: {} scored twice", s.item)));
        }
    }
    scored.sort_by(order);
    scored.truncate(k);
    Ok(RankedList {
        session_id,
        items: scored.into_iter().map(|s| s.item).collect(),
    })
}

/// Mean probability per item over models, absent counting as 0.
pub fn ensemble(session_id: u64, models: &[HashMap<ItemId, f64>], k: usize) -> Result<RankedList> {
    if models.is_empty() {
        return Err(Error::invalid("ensemble needs at least one model"));
    }
    let mut sum: BTreeMap<&ItemId, f64> = BTreeMap::new();
    for m in models {
        for (item, p) in m {
            *sum.entry(item).or_default() += p;
        }
    }
    let n = models.len() as f64;
    let scored = sum
        .into_iter()
        .map(|(item, s)| ScoredItem {
            item: item.clone(),
            prob: s / n,
            source: CandidateSource::Covis,
        })
        .collect();
    rank(session_id, scored, k)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocaleReport {
    pub mrr: f64,
    pub hit_rate: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub hit_rate: f64,
    pub n: usize,
    pub per_locale: BTreeMap<String, LocaleReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Box<EvalReport>>,
}

/// Reciprocal rank of the true item within the top `k`, averaged over
/// sessions; an item outside the top `k` scores 0.
pub fn mrr_at_k(predictions: &[RankedList], truth: &HashMap<u64, ItemId>, k: usize) -> Result<EvalReport> {
    #[derive(Default)]
    struct Acc {
        rr: f64,
        hits: usize,
        n: usize,
    }
    let mut all = Acc::default();
    let mut by_locale: BTreeMap<String, Acc> = BTreeMap::new();
    for p in predictions {
        let t = truth.get(&p.session_id).ok_or(Error::MissingTruth(p.session_id))?;
        let rr = match p.items.iter().take(k).position(|i| i == t) {
            Some(pos) => 1.0 / (pos + 1) as f64,
            None => 0.0,
        };
        let hit = usize::from(rr > 0.0);
        for acc in [&mut all, by_locale.entry(t.locale().to_string()).or_default()] {
            acc.rr += rr;
            acc.hits += hit;
            acc.n += 1;
        }
    }
    let finish = |a: &Acc| {
        let n = a.n.max(1) as f64;
        LocaleReport {
            mrr: a.rr / n,
            hit_rate: a.hits as f64 / n,
            n: a.n,
        }
    };
    let total = finish(&all);
    Ok(EvalReport {
        mrr: total.mrr,
        hit_rate: total.hit_rate,
        n: total.n,
        per_locale: by_locale.iter().map(|(l, a)| (l.clone(), finish(a))).collect(),
        baseline: None,
    })
}

/// Ranks every session's locale catalog by next_count (ties by id).
pub fn popularity_baseline(sessions: &[Session], stats: &ItemStats, vocab: &Vocab, k: usize) -> Vec<RankedList> {
    let mut per_locale: HashMap<&Locale, Vec<ItemId>> = HashMap::new();
    for s in sessions {
        per_locale.entry(&s.locale).or_insert_with(|| {
            let mut items: Vec<(u32, u32)> = vocab
                .locale_range(&s.locale)
                .map(|i| (stats.next_count(ItemIdx(i)), i))
                .collect();
            items.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            items
                .into_iter()
                .take(k)
                .map(|(_, i)| vocab.item(ItemIdx(i)).clone())
                .collect()
        });
    }
    sessions
        .iter()
        .map(|s| RankedList {
            session_id: s.id,
            items: per_locale[&s.locale].clone(),
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    session_id: u64,
    predictions: Vec<String>,
}

/// One JSON object per line with raw (unqualified) item ids.
pub fn write_predictions<W: Write>(mut w: W, lists: &[RankedList]) -> Result<()> {
    for l in lists {
        let line = PredictionLine {
            session_id: l.session_id,
            predictions: l.items.iter().map(|i| i.raw().to_string()).collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads predictions back, qualifying raw ids with each session's locale.
pub fn read_predictions<R: BufRead>(r: R, locale_of: &HashMap<u64, Locale>) -> Result<Vec<RankedList>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        let locale = locale_of
            .get(&p.session_id)
            .ok_or_else(|| Error::parse(i + 1, format!("unknown session {}", p.session_id)))?;
        let items = p
            .predictions
            .iter()
            .map(|raw| ItemId::new(locale.clone(), raw))
            .collect::<Result<_>>()?;
        out.push(RankedList {
            session_id: p.session_id,
            items,
        });
    }
    Ok(out)
}
