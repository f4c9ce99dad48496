//! Sessions, products and the item vocabulary.
//!
//! Items are always locale-qualified: the same raw product id in two locales
//! is two different items. Everything downstream of parsing works on the
//! dense [`ItemIdx`] handles handed out by a [`Vocab`].

mod folds;
mod io;
mod synth;
mod vocab;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use folds::{assign_folds, FoldAssignment};
pub use io::{parse_products, parse_sessions, write_products, write_sessions};
pub use synth::{synth_corpus, synth_corpus_with, SynthConfig, SynthLocale};
pub use vocab::{ItemIdx, Session, Vocab};

/// Market tag. The set of locales is open; any non-empty tag without `:` or
/// whitespace is accepted.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Locale(Arc<str>);

impl Locale {
    pub fn new(code: &str) -> Result<Self> {
        if code.is_empty() {
            return Err(Error::invalid("empty locale"));
        }
        if code.contains(':') || code.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "locale {code:?} may not contain ':' or whitespace"
            )));
        }
        Ok(Locale(Arc::from(code)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Locale {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Locale::new(&s)
    }
}

impl From<Locale> for String {
    fn from(l: Locale) -> String {
        l.0.to_string()
    }
}

impl fmt::Display for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A locale-qualified item. Ordering is by locale, then raw id.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId {
    locale: Locale,
    raw: Arc<str>,
}

impl ItemId {
    pub fn new(locale: Locale, raw: &str) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("empty item id"));
        }
        if raw.contains(['\t', '\n', '\r']) {
            return Err(Error::invalid(format!("item id {raw:?} contains a tab or line break")));
        }
        Ok(ItemId {
            locale,
            raw: Arc::from(raw),
        })
    }

    pub fn locale(&self) -> &Locale {
        &self.locale
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Parses the `locale:raw` form used by the dump formats.
    pub fn parse_qualified(s: &str) -> Result<Self> {
        let (loc, raw) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("item {s:?} is not of the form locale:raw")))?;
        ItemId::new(Locale::new(loc)?, raw)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.locale, self.raw)
    }
}

impl fmt::Debug for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// One browsing session. Training sessions carry the held-out `next_item`.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionRecord {
    pub session_id: u64,
    pub locale: Locale,
    pub prev_items: Vec<ItemId>,
    pub next_item: Option<ItemId>,
}

impl SessionRecord {
    /// Builds a record from raw ids, qualifying them with `locale`.
    pub fn new(session_id: u64, locale: &str, prev: &[&str], next: Option<&str>) -> Result<Self> {
        let locale = Locale::new(locale)?;
        if prev.len() < 2 {
            return Err(Error::invalid("prev_items length < 2"));
        }
        let prev_items = prev
            .iter()
            .map(|r| ItemId::new(locale.clone(), r))
            .collect::<Result<Vec<_>>>()?;
        let next_item = next.map(|r| ItemId::new(locale.clone(), r)).transpose()?;
        Ok(SessionRecord {
            session_id,
            locale,
            prev_items,
            next_item,
        })
    }

    pub fn last_item(&self) -> &ItemId {
        self.prev_items.last().expect("prev_items has at least two entries")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Product {
    pub id: ItemId,
    pub title: String,
    pub brand: Option<String>,
    pub price: Option<f64>,
    pub extra: Vec<(String, String)>,
}

impl Product {
    /// Attribute values joined with `:`, the text fed to a sentence encoder.
    pub fn attribute_string(&self) -> String {
        let mut parts: Vec<String> = vec![self.title.clone()];
        if let Some(b) = &self.brand {
            parts.push(b.clone());
        }
        if let Some(p) = self.price {
            parts.push(p.to_string());
        }
        parts.extend(self.extra.iter().map(|(_, v)| v.clone()));
        parts.join(":")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProductCatalog {
    products: BTreeMap<ItemId, Product>,
}

impl ProductCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, product: Product) -> Result<()> {
        if self.products.contains_key(&product.id) {
            return Err(Error::invalid(format!("duplicate product {}", product.id)));
        }
        self.products.insert(product.id.clone(), product);
        Ok(())
    }

    pub fn get(&self, id: &ItemId) -> Option<&Product> {
        self.products.get(id)
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    /// Products in ItemId order.
    pub fn iter(&self) -> impl Iterator<Item = &Product> {
        self.products.values()
    }
}
