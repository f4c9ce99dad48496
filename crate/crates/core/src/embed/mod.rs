//! Item vectors: text embeddings loaded from disk (or hashed), and skip-gram
//! item embeddings trained per locale.

mod hash;
mod item2vec;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::ops::Range;

use crate::corpus::{ItemId, ItemIdx, Locale, Vocab};
use crate::error::{Error, Result};

pub use hash::hash_embed;
pub use item2vec::{train_item2vec, train_item2vec_sentences, Item2VecParams, SkipGram};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    /// Similarity is cosine.
    Item2Vec,
    /// Similarity is the raw inner product.
    Text,
}

impl EmbeddingKind {
    fn header(self) -> &'static str {
        match self {
            EmbeddingKind::Item2Vec => "ITEM2VEC",
            EmbeddingKind::Text => "TEXT",
        }
    }
}

/// Fixed-width vectors keyed by item, stored row-major in ItemId order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dims: usize,
    kind: EmbeddingKind,
    ids: Vec<ItemId>,
    index: HashMap<ItemId, u32>,
    data: Vec<f32>,
    norms: Vec<f32>,
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl EmbeddingTable {
    pub fn new(
        kind: EmbeddingKind,
        dims: usize,
        vectors: impl IntoIterator<Item = (ItemId, Vec<f32>)>,
    ) -> Result<Self> {
        if dims == 0 {
            return Err(Error::invalid("embedding dims must be positive"));
        }
        let mut sorted = BTreeMap::new();
        for (id, v) in vectors {
            if v.len() != dims {
                return Err(Error::invalid(format!(
                    "vector for {id} has {} entries, expected {dims}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("vector for {id} has a non-finite entry")));
            }
            if sorted.insert(id.clone(), v).is_some() {
                return Err(Error::invalid(format!("duplicate vector for {id}")));
            }
        }
        let mut ids = Vec::with_capacity(sorted.len());
        let mut data = Vec::with_capacity(sorted.len() * dims);
        let mut norms = Vec::with_capacity(sorted.len());
        for (id, v) in sorted {
            norms.push(dot(&v, &v).sqrt());
            data.extend_from_slice(&v);
            ids.push(id);
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i as u32)).collect();
        Ok(EmbeddingTable {
            dims,
            kind,
            ids,
            index,
            data,
            norms,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn get(&self, id: &ItemId) -> Option<&[f32]> {
        self.index.get(id).map(|&r| self.row(r))
    }

    #[inline]
    fn row(&self, r: u32) -> &[f32] {
        let r = r as usize;
        &self.data[r * self.dims..(r + 1) * self.dims]
    }

    #[inline]
    fn score_rows(&self, a: u32, b: u32) -> f32 {
        let d = dot(self.row(a), self.row(b));
        match self.kind {
            EmbeddingKind::Text => d,
            EmbeddingKind::Item2Vec => {
                let n = self.norms[a as usize] * self.norms[b as usize];
                if n > 0.0 {
                    (d / n).clamp(-1.0, 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// Inner product for text tables, cosine for item2vec tables; `None`
    /// when either item has no vector.
    pub fn similarity(&self, a: &ItemId, b: &ItemId) -> Option<f32> {
        let (ra, rb) = (*self.index.get(a)?, *self.index.get(b)?);
        Some(self.score_rows(ra, rb))
    }

    fn locale_rows(&self, locale: &Locale) -> Range<u32> {
        let lo = self.ids.partition_point(|id| id.locale() < locale);
        let hi = self.ids.partition_point(|id| id.locale() <= locale);
        lo as u32..hi as u32
    }

    /// Highest-scoring rows of the query's locale, query itself excluded,
    /// ties broken by ascending ItemId.
    fn top_rows(&self, query: u32, m: usize, mut skip: impl FnMut(u32) -> bool) -> Vec<(u32, f32)> {
        if m == 0 {
            return Vec::new();
        }
        let locale = self.ids[query as usize].locale();
        let mut scored: Vec<(u32, f32)> = self
            .locale_rows(locale)
            .filter(|&r| r != query && !skip(r))
            .map(|r| (r, self.score_rows(query, r)))
            .collect();
        let by_score = |a: &(u32, f32), b: &(u32, f32)| -> Ordering { b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)) };
        if scored.len() > m {
            scored.select_nth_unstable_by(m - 1, by_score);
            scored.truncate(m);
        }
        scored.sort_unstable_by(by_score);
        scored
    }

    /// The `m` most similar same-locale items to `query`, excluding the query
    /// and `exclude`. Empty when the query has no vector.
    pub fn top_similar(&self, query: &ItemId, m: usize, exclude: &HashSet<ItemId>) -> Vec<(ItemId, f32)> {
        let Some(&q) = self.index.get(query) else {
            return Vec::new();
        };
        self.top_rows(q, m, |r| exclude.contains(&self.ids[r as usize]))
            .into_iter()
            .map(|(r, s)| (self.ids[r as usize].clone(), s))
            .collect()
    }

    /// Index this table by vocabulary handles for hot loops.
    pub fn align<'a>(&'a self, vocab: &Vocab) -> AlignedTable<'a> {
        let mut row_of = vec![u32::MAX; vocab.len()];
        let mut idx_of_row = vec![None; self.ids.len()];
        for (r, id) in self.ids.iter().enumerate() {
            if let Some(i) = vocab.get(id) {
                row_of[i.index()] = r as u32;
                idx_of_row[r] = Some(i);
            }
        }
        AlignedTable {
            table: self,
            row_of,
            idx_of_row,
        }
    }

    /// Reads `dims=<n>`, an optional `kind=TEXT|ITEM2VEC` line, then one
    /// `locale:raw<TAB>f1 f2 ... fn` line per item.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate().peekable();
        let dims = match lines.next() {
            Some((_, l)) => {
                let l = l?;
                l.strip_prefix("dims=")
                    .and_then(|d| d.trim().parse::<usize>().ok())
                    .filter(|&d| d > 0)
                    .ok_or_else(|| Error::parse(1, "expected header dims=<n>"))?
            }
            None => return Err(Error::parse(1, "empty embedding file")),
        };
        let mut kind = EmbeddingKind::Text;
        let mut vectors: Vec<(ItemId, Vec<f32>)> = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if i == 1 {
                if let Some(k) = line.strip_prefix("kind=") {
                    kind = match k.trim() {
                        "TEXT" => EmbeddingKind::Text,
                        "ITEM2VEC" => EmbeddingKind::Item2Vec,
                        other => return Err(Error::parse(lineno, format!("unknown kind {other:?}"))),
                    };
                    continue;
                }
            }
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(lineno, "expected locale:raw<TAB>values"))?;
            let id = ItemId::parse_qualified(id).map_err(|e| Error::parse(lineno, e.to_string()))?;
            let v = rest
                .split_ascii_whitespace()
                .map(|x| x.parse::<f32>())
                .collect::<std::result::Result<Vec<f32>, _>>()
                .map_err(|e| Error::parse(lineno, format!("bad float ({e})")))?;
            if v.len() != dims {
                return Err(Error::parse(
                    lineno,
                    format!("dimension mismatch: {} values, expected {dims}", v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse(lineno, "non-finite value"));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::parse(lineno, format!("duplicate item {id}")));
            }
            vectors.push((id, v));
        }
        EmbeddingTable::new(kind, dims, vectors)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "dims={}", self.dims)?;
        writeln!(w, "kind={}", self.kind.header())?;
        for (r, id) in self.ids.iter().enumerate() {
            write!(w, "{id}\t")?;
            for (j, x) in self.row(r as u32).iter().enumerate() {
                if j > 0 {
                    w.write_all(b" ")?;
                }
                write!(w, "{x}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reads a text-embedding file (see [`EmbeddingTable::read`]).
pub fn load_text_embeddings<R: BufRead>(reader: R) -> Result<EmbeddingTable> {
    EmbeddingTable::read(reader)
}

/// Similarity between two items; `None` if either lacks a vector.
pub fn similarity(table: &EmbeddingTable, a: &ItemId, b: &ItemId) -> Option<f32> {
    table.similarity(a, b)
}

pub fn top_similar(table: &EmbeddingTable, query: &ItemId, m: usize, exclude: &HashSet<ItemId>) -> Vec<(ItemId, f32)> {
    table.top_similar(query, m, exclude)
}

/// An [`EmbeddingTable`] addressed by vocabulary handles.
pub struct AlignedTable<'a> {
    table: &'a EmbeddingTable,
    row_of: Vec<u32>,
    idx_of_row: Vec<Option<ItemIdx>>,
}

impl AlignedTable<'_> {
    #[inline]
    fn row_of(&self, i: ItemIdx) -> Option<u32> {
        match self.row_of.get(i.index()) {
            Some(&r) if r != u32::MAX => Some(r),
            _ => None,
        }
    }

    pub fn contains(&self, i: ItemIdx) -> bool {
        self.row_of(i).is_some()
    }

    #[inline]
    pub fn similarity(&self, a: ItemIdx, b: ItemIdx) -> Option<f32> {
        Some(self.table.score_rows(self.row_of(a)?, self.row_of(b)?))
    }

    pub fn top_similar(
        &self,
        query: ItemIdx,
        m: usize,
        mut exclude: impl FnMut(ItemIdx) -> bool,
    ) -> Vec<(ItemIdx, f32)> {
        let Some(q) = self.row_of(query) else {
            return Vec::new();
        };
        self.table
            .top_rows(q, m, |r| match self.idx_of_row[r as usize] {
                Some(i) => exclude(i),
                None => true,
            })
            .into_iter()
            .map(|(r, s)| (self.idx_of_row[r as usize].expect("filtered above"), s))
            .collect()
    }
}
