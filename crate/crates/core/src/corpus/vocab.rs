use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use super::{ItemId, Locale, ProductCatalog, SessionRecord};
use crate::error::{Error, Result};

/// Dense handle into a [`Vocab`]. Handles sort exactly like the ItemIds they
/// stand for, so tie-breaking "by ascending ItemId" can compare handles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemIdx(pub u32);

impl ItemIdx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Sorted item interner. Items of one locale occupy a contiguous index range.
#[derive(Clone, Debug, Default)]
pub struct Vocab {
    items: Vec<ItemId>,
    index: HashMap<ItemId, ItemIdx>,
    locales: BTreeMap<Locale, Range<u32>>,
}

impl Vocab {
    pub fn new(items: impl IntoIterator<Item = ItemId>) -> Self {
        let mut items: Vec<ItemId> = items.into_iter().collect();
        items.sort();
        items.dedup();
        let index = items
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), ItemIdx(i as u32)))
            .collect();
        let mut locales: BTreeMap<Locale, Range<u32>> = BTreeMap::new();
        for (i, id) in items.iter().enumerate() {
            let i = i as u32;
            locales
                .entry(id.locale().clone())
                .and_modify(|r| r.end = i + 1)
                .or_insert(i..i + 1);
        }
        Vocab { items, index, locales }
    }

    /// Every item mentioned by the sessions or the catalog.
    pub fn from_corpus<'a>(
        sessions: impl IntoIterator<Item = &'a SessionRecord>,
        catalog: Option<&ProductCatalog>,
    ) -> Self {
        let mut ids = Vec::new();
        for s in sessions {
            ids.extend(s.prev_items.iter().cloned());
            ids.extend(s.next_item.iter().cloned());
        }
        if let Some(c) = catalog {
            ids.extend(c.iter().map(|p| p.id.clone()));
        }
        Vocab::new(ids)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &ItemId) -> Option<ItemIdx> {
        self.index.get(id).copied()
    }

    pub fn item(&self, idx: ItemIdx) -> &ItemId {
        &self.items[idx.index()]
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn locale_range(&self, locale: &Locale) -> Range<u32> {
        self.locales.get(locale).cloned().unwrap_or(0..0)
    }

    pub fn locales(&self) -> impl Iterator<Item = &Locale> {
        self.locales.keys()
    }

    pub fn encode(&self, s: &SessionRecord) -> Result<Session> {
        let lookup = |id: &ItemId| {
            self.get(id)
                .ok_or_else(|| Error::invalid(format!("item {id} missing from vocabulary")))
        };
        Ok(Session {
            id: s.session_id,
            locale: s.locale.clone(),
            prev: s.prev_items.iter().map(lookup).collect::<Result<_>>()?,
            next: s.next_item.as_ref().map(lookup).transpose()?,
        })
    }

    pub fn encode_all(&self, sessions: &[SessionRecord]) -> Result<Vec<Session>> {
        sessions.iter().map(|s| self.encode(s)).collect()
    }
}

/// A session with items resolved against a [`Vocab`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub id: u64,
    pub locale: Locale,
    pub prev: Vec<ItemIdx>,
    pub next: Option<ItemIdx>,
}

impl Session {
    pub fn last(&self) -> ItemIdx {
        *self.prev.last().expect("sessions have at least two prev items")
    }

    /// The p-th item from the end, 1-based (`p = 1` is the last item).
    pub fn from_end(&self, p: usize) -> Option<ItemIdx> {
        if p == 0 || p > self.prev.len() {
            None
        } else {
            Some(self.prev[self.prev.len() - p])
        }
    }
}
