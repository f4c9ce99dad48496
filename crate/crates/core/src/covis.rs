//! Co-visitation counters and per-item occurrence counts.
//!
//! Every counter is a sparse `(a, b) -> count` table. Tables are built by
//! emitting one key per increment, sorting, and run-length counting, so the
//! result is independent of session order and two tables built on disjoint
//! session sets merge into the table of the union.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::corpus::{FoldAssignment, ItemId, ItemIdx, Session, Vocab};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CounterKind {
    /// A and B co-occur in prev_items (multiplicity product, symmetric).
    Cs,
    /// B appears somewhere after A in prev_items.
    Caxb,
    /// B immediately follows A.
    Cab,
    /// B immediately precedes A.
    Cba,
    /// A in prev_items, B is the next_item (once per occurrence of A).
    Yaxb,
    /// A is the last prev item, B is the next_item.
    Yab,
}

impl CounterKind {
    pub const ALL: [CounterKind; 6] = [
        CounterKind::Cs,
        CounterKind::Caxb,
        CounterKind::Cab,
        CounterKind::Cba,
        CounterKind::Yaxb,
        CounterKind::Yab,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CounterKind::Cs => "CS",
            CounterKind::Caxb => "CAXB",
            CounterKind::Cab => "CAB",
            CounterKind::Cba => "CBA",
            CounterKind::Yaxb => "YAXB",
            CounterKind::Yab => "YAB",
        }
    }
}

impl fmt::Display for CounterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CounterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CounterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown counter kind {s:?}")))
    }
}

#[inline]
fn key(a: ItemIdx, b: ItemIdx) -> u64 {
    ((a.0 as u64) << 32) | b.0 as u64
}

/// Compressed sparse rows over item handles. Absent pairs count 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairTable {
    offsets: Vec<usize>,
    cols: Vec<ItemIdx>,
    counts: Vec<u32>,
}

impl PairTable {
    /// One increment per key. Keys need not be sorted.
    fn from_keys(mut keys: Vec<u64>, what: &'static str) -> Result<Self> {
        keys.sort_unstable();
        let n_rows = keys.last().map_or(0, |&k| (k >> 32) as usize + 1);
        let mut offsets = vec![0usize; n_rows + 1];
        let mut cols = Vec::new();
        let mut counts: Vec<u32> = Vec::new();
        let mut i = 0;
        while i < keys.len() {
            let k = keys[i];
            let mut j = i + 1;
            while j < keys.len() && keys[j] == k {
                j += 1;
            }
            let run = u32::try_from(j - i).map_err(|_| Error::Overflow(what))?;
            offsets[(k >> 32) as usize + 1] += 1;
            cols.push(ItemIdx(k as u32));
            counts.push(run);
            i = j;
        }
        for r in 0..n_rows {
            offsets[r + 1] += offsets[r];
        }
        Ok(PairTable { offsets, cols, counts })
    }

    fn from_triples(triples: impl IntoIterator<Item = (ItemIdx, ItemIdx, u32)>) -> Self {
        let mut t: Vec<(ItemIdx, ItemIdx, u32)> = triples.into_iter().filter(|x| x.2 > 0).collect();
        t.sort_unstable();
        let n_rows = t.last().map_or(0, |x| x.0.index() + 1);
        let mut offsets = vec![0usize; n_rows + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut counts = Vec::with_capacity(t.len());
        for (a, b, c) in t {
            offsets[a.index() + 1] += 1;
            cols.push(b);
            counts.push(c);
        }
        for r in 0..n_rows {
            offsets[r + 1] += offsets[r];
        }
        PairTable { offsets, cols, counts }
    }

    #[inline]
    pub fn get(&self, a: ItemIdx, b: ItemIdx) -> u32 {
        let (cols, counts) = self.row_slices(a);
        match cols.binary_search(&b) {
            Ok(i) => counts[i],
            Err(_) => 0,
        }
    }

    #[inline]
    fn row_slices(&self, a: ItemIdx) -> (&[ItemIdx], &[u32]) {
        let r = a.index();
        if r + 1 >= self.offsets.len() {
            return (&[], &[]);
        }
        let (lo, hi) = (self.offsets[r], self.offsets[r + 1]);
        (&self.cols[lo..hi], &self.counts[lo..hi])
    }

    /// Nonzero `(b, count)` entries of row `a`, ascending in `b`.
    pub fn row(&self, a: ItemIdx) -> impl Iterator<Item = (ItemIdx, u32)> + '_ {
        let (cols, counts) = self.row_slices(a);
        cols.iter().copied().zip(counts.iter().copied())
    }

    /// All nonzero entries in `(a, b)` order.
    pub fn iter(&self) -> impl Iterator<Item = (ItemIdx, ItemIdx, u32)> + '_ {
        (0..self.offsets.len().saturating_sub(1)).flat_map(move |r| {
            let a = ItemIdx(r as u32);
            self.row(a).map(move |(b, c)| (a, b, c))
        })
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Entry-wise sum.
    pub fn merge(&self, other: &PairTable) -> Result<PairTable> {
        let n_rows = self.offsets.len().max(other.offsets.len()).saturating_sub(1);
        let mut offsets = Vec::with_capacity(n_rows + 1);
        offsets.push(0);
        let mut cols = Vec::with_capacity(self.nnz() + other.nnz());
        let mut counts = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..n_rows {
            let a = ItemIdx(r as u32);
            let (ca, na) = self.row_slices(a);
            let (cb, nb) = other.row_slices(a);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                if j == cb.len() || (i < ca.len() && ca[i] < cb[j]) {
                    cols.push(ca[i]);
                    counts.push(na[i]);
                    i += 1;
                } else if i == ca.len() || cb[j] < ca[i] {
                    cols.push(cb[j]);
                    counts.push(nb[j]);
                    j += 1;
                } else {
                    cols.push(ca[i]);
                    counts.push(na[i].checked_add(nb[j]).ok_or(Error::Overflow("merge"))?);
                    i += 1;
                    j += 1;
                }
            }
            offsets.push(cols.len());
        }
        Ok(PairTable { offsets, cols, counts })
    }
}

/// The four prev-item counters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CovisStore {
    pub cs: PairTable,
    pub caxb: PairTable,
    pub cab: PairTable,
    pub cba: PairTable,
}

/// The two next-item counters, optionally built with one fold held out.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NextStore {
    pub yaxb: PairTable,
    pub yab: PairTable,
    pub fold_version: Option<usize>,
}

/// Read access by counter kind, shared by both store families.
pub trait CounterStore {
    fn table(&self, kind: CounterKind) -> Option<&PairTable>;

    fn lookup(&self, kind: CounterKind, a: ItemIdx, b: ItemIdx) -> Result<u32> {
        self.table(kind)
            .map(|t| t.get(a, b))
            .ok_or(Error::KindMismatch { kind })
    }

    /// Lookup by ItemId; items unknown to the vocabulary count 0.
    fn lookup_id(&self, vocab: &Vocab, kind: CounterKind, a: &ItemId, b: &ItemId) -> Result<u32> {
        let t = self.table(kind).ok_or(Error::KindMismatch { kind })?;
        Ok(match (vocab.get(a), vocab.get(b)) {
            (Some(a), Some(b)) => t.get(a, b),
            _ => 0,
        })
    }
}

impl CounterStore for CovisStore {
    fn table(&self, kind: CounterKind) -> Option<&PairTable> {
        match kind {
            CounterKind::Cs => Some(&self.cs),
            CounterKind::Caxb => Some(&self.caxb),
            CounterKind::Cab => Some(&self.cab),
            CounterKind::Cba => Some(&self.cba),
            _ => None,
        }
    }
}

impl CounterStore for NextStore {
    fn table(&self, kind: CounterKind) -> Option<&PairTable> {
        match kind {
            CounterKind::Yaxb => Some(&self.yaxb),
            CounterKind::Yab => Some(&self.yab),
            _ => None,
        }
    }
}

/// Counts prev-item pairs over every index pair `i < j` of each session.
/// Pairs of an item with itself are skipped.
pub fn build_covis(sessions: &[Session]) -> Result<CovisStore> {
    let mut cs = Vec::new();
    let mut caxb = Vec::new();
    let mut cab = Vec::new();
    let mut cba = Vec::new();
    for s in sessions {
        let p = &s.prev;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                let (a, b) = (p[i], p[j]);
                if a == b {
                    continue;
                }
                caxb.push(key(a, b));
                cs.push(key(a, b));
                cs.push(key(b, a));
                if j == i + 1 {
                    cab.push(key(a, b));
                    cba.push(key(b, a));
                }
            }
        }
    }
    Ok(CovisStore {
        cs: PairTable::from_keys(cs, "CS")?,
        caxb: PairTable::from_keys(caxb, "CAXB")?,
        cab: PairTable::from_keys(cab, "CAB")?,
        cba: PairTable::from_keys(cba, "CBA")?,
    })
}

fn excluded(s: &Session, exclude_fold: Option<usize>, folds: Option<&FoldAssignment>) -> Result<bool> {
    match exclude_fold {
        None => Ok(false),
        Some(f) => {
            let folds = folds.ok_or_else(|| Error::invalid("fold exclusion requires a fold assignment"))?;
            let fs = folds
                .fold_of(s.id)
                .ok_or_else(|| Error::invalid(format!("session {} has no fold", s.id)))?;
            Ok(fs == f)
        }
    }
}

/// Counts prev-item/next-item pairs over sessions outside `exclude_fold`.
pub fn build_next(
    sessions: &[Session],
    exclude_fold: Option<usize>,
    folds: Option<&FoldAssignment>,
) -> Result<NextStore> {
    let mut yaxb = Vec::new();
    let mut yab = Vec::new();
    for s in sessions {
        if excluded(s, exclude_fold, folds)? {
            continue;
        }
        let next = s
            .next
            .ok_or_else(|| Error::invalid(format!("session {} has no next_item", s.id)))?;
        for &a in &s.prev {
            yaxb.push(key(a, next));
        }
        yab.push(key(s.last(), next));
    }
    Ok(NextStore {
        yaxb: PairTable::from_keys(yaxb, "YAXB")?,
        yab: PairTable::from_keys(yab, "YAB")?,
        fold_version: exclude_fold,
    })
}

/// Per-item occurrence counts. `next_count` honours the fold exclusion,
/// `prev_count` always covers every session.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemStats {
    prev_count: Vec<u32>,
    next_count: Vec<u32>,
    pub fold_version: Option<usize>,
}

fn bump(v: &mut Vec<u32>, i: ItemIdx, what: &'static str) -> Result<()> {
    if v.len() <= i.index() {
        v.resize(i.index() + 1, 0);
    }
    v[i.index()] = v[i.index()].checked_add(1).ok_or(Error::Overflow(what))?;
    Ok(())
}

pub fn build_item_stats(
    sessions: &[Session],
    exclude_fold: Option<usize>,
    folds: Option<&FoldAssignment>,
) -> Result<ItemStats> {
    let mut st = ItemStats {
        fold_version: exclude_fold,
        ..Default::default()
    };
    for s in sessions {
        for &a in &s.prev {
            bump(&mut st.prev_count, a, "prev_count")?;
        }
        if let Some(n) = s.next {
            if !excluded(s, exclude_fold, folds)? {
                bump(&mut st.next_count, n, "next_count")?;
            }
        }
    }
    Ok(st)
}

impl ItemStats {
    #[inline]
    pub fn prev_count(&self, i: ItemIdx) -> u32 {
        self.prev_count.get(i.index()).copied().unwrap_or(0)
    }

    #[inline]
    pub fn next_count(&self, i: ItemIdx) -> u32 {
        self.next_count.get(i.index()).copied().unwrap_or(0)
    }

    /// Items with a nonzero next count.
    pub fn next_counts(&self) -> impl Iterator<Item = (ItemIdx, u32)> + '_ {
        self.next_count
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (ItemIdx(i as u32), c))
    }

    pub fn write_tsv<W: Write>(&self, vocab: &Vocab, mut w: W) -> Result<()> {
        let mut lines = Vec::new();
        for (name, v) in [("PREV", &self.prev_count), ("NEXT", &self.next_count)] {
            for (i, &c) in v.iter().enumerate() {
                if c > 0 {
                    lines.push(format!("{name}\t{}\t{c}", vocab.item(ItemIdx(i as u32))));
                }
            }
        }
        lines.sort();
        for l in lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    }
}

fn dump_tables<W: Write>(tables: &[(CounterKind, &PairTable)], vocab: &Vocab, mut w: W) -> Result<()> {
    let mut lines = Vec::new();
    for (kind, t) in tables {
        for (a, b, c) in t.iter() {
            lines.push(format!("{kind}\t{}\t{}\t{c}", vocab.item(a), vocab.item(b)));
        }
    }
    lines.sort();
    for l in lines {
        writeln!(w, "{l}")?;
    }
    Ok(())
}

fn parse_dump<R: BufRead>(r: R, vocab: &Vocab) -> Result<Vec<(CounterKind, ItemIdx, ItemIdx, u32)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::parse(lineno, "expected 4 tab-separated fields"));
        }
        let kind: CounterKind = f[0].parse().map_err(|e: Error| Error::parse(lineno, e.to_string()))?;
        let item = |s: &str| -> Result<ItemIdx> {
            let id = ItemId::parse_qualified(s).map_err(|e| Error::parse(lineno, e.to_string()))?;
            vocab
                .get(&id)
                .ok_or_else(|| Error::parse(lineno, format!("unknown item {id}")))
        };
        let count: u32 = f[3]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad count {:?}", f[3])))?;
        out.push((kind, item(f[1])?, item(f[2])?, count));
    }
    Ok(out)
}

fn split_kind(entries: &[(CounterKind, ItemIdx, ItemIdx, u32)], kind: CounterKind) -> PairTable {
    PairTable::from_triples(entries.iter().filter(|e| e.0 == kind).map(|&(_, a, b, c)| (a, b, c)))
}

impl CovisStore {
    /// TSV `kind<TAB>locale:rawA<TAB>locale:rawB<TAB>count`, lines sorted.
    pub fn write_tsv<W: Write>(&self, vocab: &Vocab, w: W) -> Result<()> {
        dump_tables(
            &[
                (CounterKind::Cs, &self.cs),
                (CounterKind::Caxb, &self.caxb),
                (CounterKind::Cab, &self.cab),
                (CounterKind::Cba, &self.cba),
            ],
            vocab,
            w,
        )
    }

    pub fn read_tsv<R: BufRead>(r: R, vocab: &Vocab) -> Result<Self> {
        let e = parse_dump(r, vocab)?;
        if let Some(x) = e.iter().find(|x| CovisStore::default().table(x.0).is_none()) {
            return Err(Error::KindMismatch { kind: x.0 });
        }
        Ok(CovisStore {
            cs: split_kind(&e, CounterKind::Cs),
            caxb: split_kind(&e, CounterKind::Caxb),
            cab: split_kind(&e, CounterKind::Cab),
            cba: split_kind(&e, CounterKind::Cba),
        })
    }

    pub fn merge(&self, other: &CovisStore) -> Result<CovisStore> {
        Ok(CovisStore {
            cs: self.cs.merge(&other.cs)?,
            caxb: self.caxb.merge(&other.caxb)?,
            cab: self.cab.merge(&other.cab)?,
            cba: self.cba.merge(&other.cba)?,
        })
    }
}

impl NextStore {
    pub fn write_tsv<W: Write>(&self, vocab: &Vocab, w: W) -> Result<()> {
        dump_tables(
            &[(CounterKind::Yaxb, &self.yaxb), (CounterKind::Yab, &self.yab)],
            vocab,
            w,
        )
    }

    pub fn read_tsv<R: BufRead>(r: R, vocab: &Vocab, fold_version: Option<usize>) -> Result<Self> {
        let e = parse_dump(r, vocab)?;
        if let Some(x) = e.iter().find(|x| NextStore::default().table(x.0).is_none()) {
            return Err(Error::KindMismatch { kind: x.0 });
        }
        Ok(NextStore {
            yaxb: split_kind(&e, CounterKind::Yaxb),
            yab: split_kind(&e, CounterKind::Yab),
            fold_version,
        })
    }

    pub fn merge(&self, other: &NextStore) -> Result<NextStore> {
        Ok(NextStore {
            yaxb: self.yaxb.merge(&other.yaxb)?,
            yab: self.yab.merge(&other.yab)?,
            fold_version: self.fold_version,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SessionRecord;

    fn corpus(rows: &[(&[&str], Option<&str>)]) -> (Vocab, Vec<Session>) {
        let recs: Vec<SessionRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (p, n))| SessionRecord::new(i as u64, "UK", p, *n).unwrap())
            .collect();
        let vocab = Vocab::from_corpus(&recs, None);
        let enc = vocab.encode_all(&recs).unwrap();
        (vocab, enc)
    }

    fn id(s: &str) -> ItemId {
        ItemId::parse_qualified(&format!("UK:{s}")).unwrap()
    }

    #[test]
    fn worked_example_prev_counters() {
        let (v, s) = corpus(&[(&["A", "B", "A", "C"], Some("D"))]);
        let st = build_covis(&s).unwrap();
        let l = |k, a, b| st.lookup_id(&v, k, &id(a), &id(b)).unwrap();
        assert_eq!(l(CounterKind::Cs, "A", "B"), 2);
        assert_eq!(l(CounterKind::Caxb, "A", "B"), 1);
        assert_eq!(l(CounterKind::Cab, "A", "B"), 1);
        assert_eq!(l(CounterKind::Cba, "B", "A"), 1);
        assert_eq!(l(CounterKind::Caxb, "A", "C"), 2);
        assert_eq!(l(CounterKind::Cs, "A", "C"), 2);
        assert_eq!(l(CounterKind::Cs, "A", "A"), 0);
        assert_eq!(l(CounterKind::Cs, "B", "A"), 2);
    }

    #[test]
    fn worked_example_next_counters() {
        let (v, s) = corpus(&[(&["A", "B", "A", "C"], Some("D"))]);
        let st = build_next(&s, None, None).unwrap();
        let l = |k, a, b| st.lookup_id(&v, k, &id(a), &id(b)).unwrap();
        assert_eq!(l(CounterKind::Yaxb, "A", "D"), 2);
        assert_eq!(l(CounterKind::Yaxb, "C", "D"), 1);
        assert_eq!(l(CounterKind::Yaxb, "B", "D"), 1);
        assert_eq!(l(CounterKind::Yab, "C", "D"), 1);
        assert_eq!(l(CounterKind::Yab, "A", "D"), 0);
    }

    #[test]
    fn excluding_the_only_fold_empties_the_store() {
        let (_, s) = corpus(&[(&["A", "B"], Some("C")), (&["B", "C"], Some("A"))]);
        let folds = FoldAssignment::from_ids(s.iter().map(|x| x.id), 2).unwrap();
        let st = build_next(&s[..1], Some(0), Some(&folds)).unwrap();
        assert_eq!(st.yaxb.nnz() + st.yab.nnz(), 0);
        assert_eq!(st.fold_version, Some(0));
        assert!(build_next(&s, Some(0), None).is_err());
    }

    #[test]
    fn item_stats_hand_count() {
        let (v, s) = corpus(&[(&["A", "B", "A", "C"], Some("D")), (&["B", "C"], Some("A"))]);
        let st = build_item_stats(&s, None, None).unwrap();
        let g = |x: &str| v.get(&id(x)).unwrap();
        assert_eq!(["A", "B", "C", "D"].map(|x| st.prev_count(g(x))), [2, 2, 2, 0]);
        assert_eq!(["A", "B", "C", "D"].map(|x| st.next_count(g(x))), [1, 0, 0, 1]);
        assert_eq!(st.prev_count(ItemIdx(999)), 0);
        let empty = build_item_stats(&[], None, None).unwrap();
        assert_eq!(empty.prev_count(ItemIdx(0)), 0);
        assert_eq!(empty.next_counts().count(), 0);
    }

    #[test]
    fn fold_exclusion_touches_only_next_count() {
        let (v, s) = corpus(&[(&["A", "B"], Some("C")), (&["A", "C"], Some("B"))]);
        let folds = FoldAssignment::from_ids(s.iter().map(|x| x.id), 2).unwrap();
        let st = build_item_stats(&s, Some(0), Some(&folds)).unwrap();
        let g = |x: &str| v.get(&id(x)).unwrap();
        assert_eq!(st.prev_count(g("A")), 2);
        assert_eq!(st.next_count(g("C")), 0);
        assert_eq!(st.next_count(g("B")), 1);
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let (_, s) = corpus(&[(&["A", "B"], Some("C"))]);
        let covis = build_covis(&s).unwrap();
        assert!(matches!(
            covis.lookup(CounterKind::Yab, ItemIdx(0), ItemIdx(1)),
            Err(Error::KindMismatch { .. })
        ));
        let next = build_next(&s, None, None).unwrap();
        assert!(next.lookup(CounterKind::Cs, ItemIdx(0), ItemIdx(1)).is_err());
        assert_eq!(covis.lookup(CounterKind::Cs, ItemIdx(7), ItemIdx(9)).unwrap(), 0);
    }

    #[test]
    fn dump_is_sorted_and_reloads() {
        let (v, s) = corpus(&[(&["A", "B", "A", "C"], Some("D")), (&["C", "B"], Some("A"))]);
        let covis = build_covis(&s).unwrap();
        let mut buf = Vec::new();
        covis.write_tsv(&v, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
        assert!(lines.contains(&"CS\tUK:A\tUK:B\t2"));
        assert_eq!(CovisStore::read_tsv(&buf[..], &v).unwrap(), covis);

        let next = build_next(&s, None, None).unwrap();
        let mut buf = Vec::new();
        next.write_tsv(&v, &mut buf).unwrap();
        assert_eq!(NextStore::read_tsv(&buf[..], &v, None).unwrap(), next);
        assert!(CovisStore::read_tsv(&buf[..], &v).is_err());
    }
}
