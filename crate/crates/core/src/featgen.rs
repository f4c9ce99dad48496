//! Feature rows for (session, candidate) pairs.
//!
//! Anything derived from next_item (the y-counters, next counts and the
//! item2vec model) comes in k+1 versions: one per fold, built without that
//! fold's sessions, and one over all training sessions. A training row always
//! reads the version that excludes its own fold; test rows read the full one.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::candgen::{backfill, generate_candidates, CandidateSet, CandidateSource};
use crate::corpus::{FoldAssignment, ItemId, ItemIdx, Locale, Session, Vocab};
use crate::covis::{build_item_stats, build_next, CovisStore, ItemStats, NextStore};
use crate::embed::{train_item2vec_sentences, AlignedTable, EmbeddingTable, Item2VecParams};
use crate::error::{Error, Result};

/// Positions from the end of prev_items that get their own columns.
pub const N_LAST: usize = 10;
/// Candidates outside the last item's top-M item2vec neighbours get a null
/// item2vec feature.
pub const ITEM2VEC_TOP_M: usize = 300;

const PAIR_FEATURES: [&str; 6] = ["cs", "caxb", "cab", "cba", "yaxb", "yab"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl FeatureSchema {
    /// The 94-column schema used by the pipeline.
    pub fn standard() -> Self {
        let mut names = Vec::with_capacity(94);
        for p in 1..=N_LAST {
            for f in PAIR_FEATURES {
                names.push(format!("{f}_{p}"));
            }
        }
        names.push("cand_prev_count".into());
        names.push("cand_next_count".into());
        for p in 1..=N_LAST {
            names.push(format!("last{p}_prev_count"));
            names.push(format!("last{p}_next_count"));
        }
        for p in 1..=N_LAST {
            names.push(format!("use_sim_{p}"));
        }
        names.push("item2vec_similarity".into());
        names.push("session_length".into());
        FeatureSchema { names }
    }

    pub fn custom(names: impl IntoIterator<Item = impl Into<String>>) -> Self {
        FeatureSchema {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// SHA-256 over the ordered column names.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub session_id: u64,
    pub candidate: ItemId,
    pub source: CandidateSource,
    pub values: Vec<Option<f32>>,
    pub label: Option<u8>,
}

/// Leak-prone artifacts built with one fold (or nothing) held out.
#[derive(Clone, Debug)]
pub struct BundleVersion {
    pub exclude_fold: Option<usize>,
    pub next: NextStore,
    pub stats: ItemStats,
    pub item2vec: BTreeMap<Locale, EmbeddingTable>,
}

#[derive(Clone, Debug)]
pub struct LeakSafeBundle {
    pub folds: FoldAssignment,
    /// Index f holds the version built without fold f.
    pub versions: Vec<BundleVersion>,
    pub full: BundleVersion,
}

/// Builds k fold-excluded versions plus the full version.
///
/// `sessions` are the training sessions (all with next_item) followed by any
/// unlabeled sessions whose prev_items should count towards `prev_count`.
pub fn build_bundle(
    sessions: &[Session],
    vocab: &Vocab,
    folds: &FoldAssignment,
    item2vec_params: &dyn Fn(&Locale) -> Item2VecParams,
) -> Result<LeakSafeBundle> {
    let labeled: Vec<Session> = sessions.iter().filter(|s| s.next.is_some()).cloned().collect();
    if labeled.is_empty() {
        return Err(Error::invalid("bundle needs sessions with next_item"));
    }
    let build = |exclude: Option<usize>| -> Result<BundleVersion> {
        let kept: Vec<&Session> = labeled
            .iter()
            .filter(|s| exclude.is_none() || folds.fold_of(s.id) != exclude)
            .collect();
        if kept.is_empty() {
            return Err(Error::invalid(format!(
                "no training sessions remain outside fold {}",
                exclude.unwrap_or_default()
            )));
        }
        let next = build_next(&labeled, exclude, Some(folds))?;
        let stats = build_item_stats(sessions, exclude, Some(folds))?;
        let mut by_locale: BTreeMap<Locale, Vec<Vec<ItemId>>> = BTreeMap::new();
        for s in &kept {
            by_locale.entry(s.locale.clone()).or_default().push(
                s.prev
                    .iter()
                    .chain(s.next.iter())
                    .map(|&i| vocab.item(i).clone())
                    .collect(),
            );
        }
        let mut item2vec = BTreeMap::new();
        for (locale, sentences) in by_locale {
            let params = item2vec_params(&locale);
            params.validate()?;
            // A locale too sparse to survive min_count simply gets no model.
            match train_item2vec_sentences(&sentences, &params) {
                Ok(t) => {
                    item2vec.insert(locale, t);
                }
                Err(Error::InvalidInput(msg)) => {
                    log::warn!("no item2vec model for {locale} (fold {exclude:?}): {msg}");
                }
                Err(e) => return Err(e),
            }
        }
        Ok(BundleVersion {
            exclude_fold: exclude,
            next,
            stats,
            item2vec,
        })
    };
    let versions = (0..folds.k()).map(|f| build(Some(f))).collect::<Result<Vec<_>>>()?;
    let full = build(None)?;
    Ok(LeakSafeBundle {
        folds: folds.clone(),
        versions,
        full,
    })
}

/// Whether a session reads a fold-excluded version or the full one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

struct VersionView<'a> {
    version: &'a BundleVersion,
    item2vec: BTreeMap<Locale, AlignedTable<'a>>,
}

/// Everything needed to produce candidates and rows, aligned to one
/// vocabulary up front.
pub struct FeatureContext<'a> {
    vocab: &'a Vocab,
    covis: &'a CovisStore,
    bundle: &'a LeakSafeBundle,
    text: Option<AlignedTable<'a>>,
    folds: Vec<VersionView<'a>>,
    full: VersionView<'a>,
    schema: FeatureSchema,
}

impl<'a> FeatureContext<'a> {
    pub fn new(
        vocab: &'a Vocab,
        covis: &'a CovisStore,
        bundle: &'a LeakSafeBundle,
        text: Option<&'a EmbeddingTable>,
    ) -> Self {
        let view = |v: &'a BundleVersion| VersionView {
            version: v,
            item2vec: v.item2vec.iter().map(|(l, t)| (l.clone(), t.align(vocab))).collect(),
        };
        FeatureContext {
            vocab,
            covis,
            bundle,
            text: text.map(|t| t.align(vocab)),
            folds: bundle.versions.iter().map(view).collect(),
            full: view(&bundle.full),
            schema: FeatureSchema::standard(),
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn view(&self, session: &Session, role: Role) -> Result<&VersionView<'a>> {
        match role {
            Role::Test => Ok(&self.full),
            Role::Train => {
                let f = self
                    .bundle
                    .folds
                    .fold_of(session.id)
                    .ok_or_else(|| Error::invalid(format!("training session {} has no fold", session.id)))?;
                Ok(&self.folds[f])
            }
        }
    }

    /// Co-visitation candidates padded to `k` with embedding neighbours.
    pub fn candidates(&self, session: &Session, role: Role, k: usize) -> Result<CandidateSet> {
        let view = self.view(session, role)?;
        let cands = generate_candidates(session, self.covis, &view.version.next, k);
        Ok(backfill(
            cands,
            session,
            view.item2vec.get(&session.locale),
            self.text.as_ref(),
            k,
        ))
    }

    /// One row per candidate, in candidate order.
    pub fn build_rows(&self, session: &Session, role: Role, cands: &CandidateSet) -> Result<Vec<FeatureRow>> {
        let view = self.view(session, role)?;
        let v = view.version;
        let lasts: Vec<Option<ItemIdx>> = (1..=N_LAST).map(|p| session.from_end(p)).collect();
        let i2v_top: HashMap<ItemIdx, f32> = view
            .item2vec
            .get(&session.locale)
            .map(|t| {
                t.top_similar(session.last(), ITEM2VEC_TOP_M, |_| false)
                    .into_iter()
                    .collect()
            })
            .unwrap_or_default();
        let count = |c: u32| Some(c as f32);

        let mut rows = Vec::with_capacity(cands.len());
        for &(b, source) in &cands.entries {
            let mut values: Vec<Option<f32>> = Vec::with_capacity(self.schema.len());
            for last in &lasts {
                match *last {
                    Some(a) => {
                        values.push(count(self.covis.cs.get(a, b)));
                        values.push(count(self.covis.caxb.get(a, b)));
                        values.push(count(self.covis.cab.get(a, b)));
                        values.push(count(self.covis.cba.get(a, b)));
                        values.push(count(v.next.yaxb.get(a, b)));
                        values.push(count(v.next.yab.get(a, b)));
                    }
                    None => values.extend([None; 6]),
                }
            }
            values.push(count(v.stats.prev_count(b)));
            values.push(count(v.stats.next_count(b)));
            for last in &lasts {
                match *last {
                    Some(a) => {
                        values.push(count(v.stats.prev_count(a)));
                        values.push(count(v.stats.next_count(a)));
                    }
                    None => values.extend([None; 2]),
                }
            }
            for last in &lasts {
                values.push(match (last, &self.text) {
                    (Some(a), Some(t)) => t.similarity(*a, b),
                    _ => None,
                });
            }
            values.push(i2v_top.get(&b).copied());
            values.push(Some(session.prev.len() as f32));
            debug_assert_eq!(values.len(), self.schema.len());

            rows.push(FeatureRow {
                session_id: session.id,
                candidate: self.vocab.item(b).clone(),
                source,
                values,
                label: session.next.map(|n| u8::from(n == b)),
            });
        }
        Ok(rows)
    }
}

/// Keeps the positive candidate (if any) and at most `max_negatives` other
/// candidates drawn uniformly, preserving candidate order. Deterministic in
/// `(seed, session_id)`.
pub fn sample_training_candidates(
    cands: &CandidateSet,
    next: Option<ItemIdx>,
    max_negatives: Option<usize>,
    seed: u64,
) -> CandidateSet {
    let Some(cap) = max_negatives else {
        return cands.clone();
    };
    let neg: Vec<usize> = (0..cands.len()).filter(|&i| Some(cands.entries[i].0) != next).collect();
    if neg.len() <= cap {
        return cands.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ cands.session_id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut keep: Vec<usize> = neg.choose_multiple(&mut rng, cap).copied().collect();
    keep.extend((0..cands.len()).filter(|&i| Some(cands.entries[i].0) == next));
    keep.sort_unstable();
    CandidateSet {
        session_id: cands.session_id,
        entries: keep.into_iter().map(|i| cands.entries[i]).collect(),
    }
}

const ID_COLUMNS: [&str; 3] = ["session_id", "candidate", "source"];

/// CSV with header `session_id,candidate,source,<schema...>,label`. Nulls and
/// missing labels are empty fields.
pub fn export_rows<W: Write>(w: W, rows: &[FeatureRow], schema: &FeatureSchema) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<&str> = ID_COLUMNS
        .iter()
        .copied()
        .chain(schema.names().iter().map(String::as_str))
        .chain(["label"])
        .collect();
    out.write_record(&header)?;
    let mut buf = String::new();
    for r in rows {
        if r.values.len() != schema.len() {
            return Err(Error::Schema(format!(
                "row has {} values, schema has {}",
                r.values.len(),
                schema.len()
            )));
        }
        out.write_field(r.session_id.to_string())?;
        out.write_field(r.candidate.to_string())?;
        out.write_field(r.source.name())?;
        for v in &r.values {
            buf.clear();
            if let Some(x) = v {
                use std::fmt::Write as _;
                write!(buf, "{x}").expect("writing to a String");
            }
            out.write_field(&buf)?;
        }
        out.write_field(r.label.map(|l| l.to_string()).unwrap_or_default())?;
        out.write_record(None::<&[u8]>)?;
    }
    out.flush()?;
    Ok(())
}

pub fn import_rows<R: Read>(r: R, schema: &FeatureSchema) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.clone();
    let expected = ID_COLUMNS.len() + schema.len() + 1;
    if header.len() != expected {
        return Err(Error::Schema(format!(
            "feature file has {} columns, expected {expected}",
            header.len()
        )));
    }
    let names_ok = header.iter().take(ID_COLUMNS.len()).eq(ID_COLUMNS)
        && header
            .iter()
            .skip(ID_COLUMNS.len())
            .take(schema.len())
            .eq(schema.names().iter().map(String::as_str))
        && header.get(expected - 1) == Some("label");
    if !names_ok {
        return Err(Error::Schema("feature file header does not match the schema".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let lineno = i + 2;
        if rec.len() != expected {
            return Err(Error::Schema(format!("line {lineno} has {} columns", rec.len())));
        }
        let bad = |what: &str| Error::parse(lineno, what.to_string());
        let session_id = rec[0].parse().map_err(|_| bad("bad session_id"))?;
        let candidate = ItemId::parse_qualified(&rec[1]).map_err(|e| bad(&e.to_string()))?;
        let source = rec[2].parse().map_err(|e: Error| bad(&e.to_string()))?;
        let values = (0..schema.len())
            .map(|j| {
                let f = &rec[ID_COLUMNS.len() + j];
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f32>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .map(Some)
                        .ok_or_else(|| bad(&format!("bad value {f:?}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let label = match &rec[expected - 1] {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => return Err(bad(&format!("bad label {other:?}"))),
        };
        rows.push(FeatureRow {
            session_id,
            candidate,
            source,
            values,
            label,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SessionRecord;
    use crate::covis::build_covis;
    use proptest::prelude::*;

    #[test]
    fn standard_schema_layout() {
        let s = FeatureSchema::standard();
        assert_eq!(s.len(), 94);
        assert_eq!(
            &s.names()[..7],
            ["cs_1", "caxb_1", "cab_1", "cba_1", "yaxb_1", "yab_1", "cs_2"]
        );
        assert_eq!(s.index_of("cand_prev_count"), Some(60));
        assert_eq!(s.index_of("last1_prev_count"), Some(62));
        assert_eq!(s.index_of("use_sim_1"), Some(82));
        assert_eq!(s.names()[92], "item2vec_similarity");
        assert_eq!(s.names()[93], "session_length");
        assert_eq!(s.fingerprint(), FeatureSchema::standard().fingerprint());
        assert_ne!(s.fingerprint(), FeatureSchema::custom(["x"]).fingerprint());
    }

    fn small_params(_: &Locale) -> Item2VecParams {
        Item2VecParams {
            dims: 8,
            min_count: 1,
            epochs: 1,
            ..Default::default()
        }
    }

    fn worked_example() -> (Vocab, Vec<Session>) {
        let recs = vec![
            SessionRecord::new(0, "UK", &["A", "B", "A", "C"], Some("D")).unwrap(),
            SessionRecord::new(1, "UK", &["A", "B", "A", "C"], Some("D")).unwrap(),
        ];
        let vocab = Vocab::from_corpus(&recs, None);
        let s = vocab.encode_all(&recs).unwrap();
        (vocab, s)
    }

    #[test]
    fn worked_example_row_values() {
        let (vocab, train) = worked_example();
        // Only session 0 feeds the counters; fold 1's version then sees it.
        let covis = build_covis(&train[..1]).unwrap();
        let folds = FoldAssignment::from_ids([0, 1], 2).unwrap();
        let bundle = build_bundle(&train, &vocab, &folds, &small_params).unwrap();
        let ctx = FeatureContext::new(&vocab, &covis, &bundle, None);
        let q = &train[1];
        let b = vocab.get(&ItemId::parse_qualified("UK:B").unwrap()).unwrap();
        let cands = CandidateSet {
            session_id: 1,
            entries: vec![(b, CandidateSource::Covis)],
        };
        let rows = ctx.build_rows(q, Role::Train, &cands).unwrap();
        let s = ctx.schema();
        let get = |n: &str| rows[0].values[s.index_of(n).unwrap()];
        assert_eq!(get("cs_1"), Some(1.0)); // cs(C, B)
        assert_eq!(get("cs_2"), Some(2.0)); // cs(A, B)
        assert_eq!(get("yaxb_2"), Some(0.0)); // yaxb(A, B): B was never a next item
        assert_eq!(get("cab_3"), Some(0.0)); // cab(B, B) is a self pair
        assert_eq!(get("session_length"), Some(4.0));
        for p in 5..=10 {
            assert_eq!(get(&format!("cs_{p}")), None);
            assert_eq!(get(&format!("last{p}_prev_count")), None);
        }
        assert_eq!(get("use_sim_1"), None);
        assert_eq!(rows[0].label, Some(0));
    }

    #[test]
    fn short_session_padding_and_labels() {
        let recs = vec![
            SessionRecord::new(0, "UK", &["A", "B", "C"], Some("D")).unwrap(),
            SessionRecord::new(1, "UK", &["D", "B", "C"], Some("A")).unwrap(),
            SessionRecord::new(2, "UK", &["A", "B", "D"], Some("C")).unwrap(),
        ];
        let vocab = Vocab::from_corpus(&recs, None);
        let train = vocab.encode_all(&recs).unwrap();
        let covis = build_covis(&train).unwrap();
        let folds = FoldAssignment::from_ids([0, 1, 2], 3).unwrap();
        let bundle = build_bundle(&train, &vocab, &folds, &small_params).unwrap();
        let ctx = FeatureContext::new(&vocab, &covis, &bundle, None);
        let s = &train[0];
        let cands = ctx.candidates(s, Role::Train, 100).unwrap();
        let rows = ctx.build_rows(s, Role::Train, &cands).unwrap();
        assert_eq!(rows.len(), cands.len());
        let schema = ctx.schema();
        for r in &rows {
            assert_eq!(r.values.len(), 94);
            for p in 4..=N_LAST {
                for f in PAIR_FEATURES {
                    assert_eq!(r.values[schema.index_of(&format!("{f}_{p}")).unwrap()], None);
                }
            }
            let want = u8::from(r.candidate.raw() == "D");
            assert_eq!(r.label, Some(want));
        }
        let positives: u32 = rows.iter().map(|r| r.label.unwrap() as u32).sum();
        assert!(positives <= 1);
    }

    #[test]
    fn bundle_has_one_version_per_fold_plus_full() {
        let recs: Vec<SessionRecord> = (0..10)
            .map(|i| SessionRecord::new(i, "UK", &["A", "B"], Some(if i == 4 { "D" } else { "C" })).unwrap())
            .collect();
        let vocab = Vocab::from_corpus(&recs, None);
        let train = vocab.encode_all(&recs).unwrap();
        let folds = FoldAssignment::from_ids(0..10, 5).unwrap();
        let bundle = build_bundle(&train, &vocab, &folds, &small_params).unwrap();
        assert_eq!(bundle.versions.len(), 5);
        let d = vocab.get(&ItemId::parse_qualified("UK:D").unwrap()).unwrap();
        // Session 4 sits in fold 2 and is the only one ending in D.
        assert!(bundle.versions[2].next.yaxb.iter().all(|(_, b, _)| b != d));
        assert!(bundle.versions[1].next.yaxb.iter().any(|(_, b, _)| b == d));
        assert_eq!(bundle.full.next, build_next(&train, None, None).unwrap());
        assert_eq!(bundle.versions[2].stats.next_count(d), 0);
        assert_eq!(bundle.full.stats.next_count(d), 1);
    }

    #[test]
    fn negative_cap_keeps_positive() {
        let cands = CandidateSet {
            session_id: 3,
            entries: (0..50).map(|i| (ItemIdx(i), CandidateSource::Covis)).collect(),
        };
        let s = sample_training_candidates(&cands, Some(ItemIdx(37)), Some(5), 1);
        assert_eq!(s.len(), 6);
        assert!(s.contains(ItemIdx(37)));
        assert!(s.entries.windows(2).all(|w| w[0].0 < w[1].0));
        assert_eq!(s, sample_training_candidates(&cands, Some(ItemIdx(37)), Some(5), 1));
        assert_eq!(sample_training_candidates(&cands, None, None, 1), cands);
    }

    #[test]
    fn export_rejects_wrong_width_and_import_checks_header() {
        let schema = FeatureSchema::standard();
        let row = FeatureRow {
            session_id: 0,
            candidate: ItemId::parse_qualified("UK:a").unwrap(),
            source: CandidateSource::Covis,
            values: vec![Some(0.0); 93],
            label: None,
        };
        assert!(matches!(
            export_rows(Vec::new(), std::slice::from_ref(&row), &schema),
            Err(Error::Schema(_))
        ));
        let narrow = FeatureSchema::custom(schema.names()[..93].to_vec());
        let mut buf = Vec::new();
        export_rows(&mut buf, &[row], &narrow).unwrap();
        assert!(matches!(import_rows(&buf[..], &schema), Err(Error::Schema(_))));
    }

    #[test]
    fn null_and_zero_stay_distinct() {
        let schema = FeatureSchema::custom(["a", "b"]);
        let row = FeatureRow {
            session_id: 7,
            candidate: ItemId::parse_qualified("DE:x,y").unwrap(),
            source: CandidateSource::TextFill,
            values: vec![None, Some(0.0)],
            label: Some(1),
        };
        let mut buf = Vec::new();
        export_rows(&mut buf, std::slice::from_ref(&row), &schema).unwrap();
        assert_eq!(import_rows(&buf[..], &schema).unwrap(), vec![row]);
    }

    fn arb_row(width: usize) -> impl Strategy<Value = FeatureRow> {
        (
            any::<u32>(),
            "[a-z0-9,\" ]{1,8}",
            prop::collection::vec(
                prop::option::of(any::<f32>().prop_filter("finite", |x| x.is_finite())),
                width,
            ),
            prop::option::of(0u8..=1),
            0usize..3,
        )
            .prop_map(|(sid, raw, values, label, src)| FeatureRow {
                session_id: sid as u64,
                candidate: ItemId::new(Locale::new("FR").unwrap(), &raw).unwrap(),
                source: [
                    CandidateSource::Covis,
                    CandidateSource::Item2VecFill,
                    CandidateSource::TextFill,
                ][src],
                values,
                label,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn csv_round_trip_is_bit_exact(rows in prop::collection::vec(arb_row(94), 1..80)) {
            let schema = FeatureSchema::standard();
            let mut buf = Vec::new();
            export_rows(&mut buf, &rows, &schema).unwrap();
            let back = import_rows(&buf[..], &schema).unwrap();
            prop_assert_eq!(back.len(), rows.len());
            for (a, b) in back.iter().zip(&rows) {
                prop_assert_eq!(&a.candidate, &b.candidate);
                prop_assert_eq!(a.label, b.label);
                prop_assert_eq!(a.source, b.source);
                let bits = |r: &FeatureRow| r.values.iter().map(|v| v.map(f32::to_bits)).collect::<Vec<_>>();
                prop_assert_eq!(bits(a), bits(b));
            }
        }
    }
}
