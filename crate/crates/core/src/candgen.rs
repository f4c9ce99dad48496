//! Candidate generation: every item co-visited with (or following) a session
//! item, padded to `k` with embedding neighbours of the last item.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use fnv::FnvHashMap;
use serde::Serialize;

use crate::corpus::{ItemIdx, Session, Vocab};
use crate::covis::{CovisStore, NextStore};
use crate::embed::AlignedTable;
use crate::error::{Error, Result};

/// Where a candidate came from. The derived order is the fill priority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CandidateSource {
    Covis,
    Item2VecFill,
    TextFill,
}

impl CandidateSource {
    pub fn name(self) -> &'static str {
        match self {
            CandidateSource::Covis => "COVIS",
            CandidateSource::Item2VecFill => "ITEM2VEC_FILL",
            CandidateSource::TextFill => "TEXT_FILL",
        }
    }
}

impl fmt::Display for CandidateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CandidateSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            CandidateSource::Covis,
            CandidateSource::Item2VecFill,
            CandidateSource::TextFill,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| Error::invalid(format!("unknown candidate source {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSet {
    pub session_id: u64,
    pub entries: Vec<(ItemIdx, CandidateSource)>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, item: ItemIdx) -> bool {
        self.entries.iter().any(|e| e.0 == item)
    }

    pub fn items(&self) -> impl Iterator<Item = ItemIdx> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

/// Items `b` with `cs(a, b) > 0` or `yab(a, b) > 0` for some prev item `a`,
/// ordered by `sum over prev positions of cs(a, b) + yab(a, b)` descending,
/// then by item, truncated to `k`. Items already in the session are kept.
pub fn generate_candidates(session: &Session, covis: &CovisStore, next: &NextStore, k: usize) -> CandidateSet {
    let mut score: FnvHashMap<ItemIdx, u64> = FnvHashMap::default();
    for &a in &session.prev {
        for (b, c) in covis.cs.row(a).chain(next.yab.row(a)) {
            *score.entry(b).or_default() += c as u64;
        }
    }
    let mut ranked: Vec<(ItemIdx, u64)> = score.into_iter().collect();
    ranked.sort_unstable_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    ranked.truncate(k);
    CandidateSet {
        session_id: session.id,
        entries: ranked.into_iter().map(|(b, _)| (b, CandidateSource::Covis)).collect(),
    }
}

/// Pads `cands` to `k`: first with item2vec neighbours of the last prev item,
/// then with text neighbours. Fills skip current candidates and prev items.
pub fn backfill(
    mut cands: CandidateSet,
    session: &Session,
    item2vec: Option<&AlignedTable<'_>>,
    text: Option<&AlignedTable<'_>>,
    k: usize,
) -> CandidateSet {
    let last = session.last();
    let mut taken: HashSet<ItemIdx> = cands.items().chain(session.prev.iter().copied()).collect();
    for (table, source) in [
        (item2vec, CandidateSource::Item2VecFill),
        (text, CandidateSource::TextFill),
    ] {
        let need = k.saturating_sub(cands.len());
        if need == 0 {
            break;
        }
        let Some(table) = table else { continue };
        for (b, _) in table.top_similar(last, need, |i| taken.contains(&i)) {
            taken.insert(b);
            cands.entries.push((b, source));
        }
    }
    cands
}

#[derive(Serialize)]
struct CandidateLine<'a> {
    session_id: u64,
    candidates: Vec<(String, &'a str)>,
}

/// JSONL `{"session_id": n, "candidates": [["locale:raw", "COVIS"], ...]}`.
pub fn write_candidates<W: Write>(mut w: W, sets: &[CandidateSet], vocab: &Vocab) -> Result<()> {
    for set in sets {
        let line = CandidateLine {
            session_id: set.session_id,
            candidates: set
                .entries
                .iter()
                .map(|(i, s)| (vocab.item(*i).to_string(), s.name()))
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
