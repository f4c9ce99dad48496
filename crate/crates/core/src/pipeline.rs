//! End-to-end orchestration: configuration, in-memory stages and the
//! file-based commands behind the CLI.
//!
//! Training sessions are split into folds and feed the counters, the
//! fold-excluded bundle and the GBDT. Test sessions share the co-visitation
//! counters (their prev_items are public) but never contribute a next_item.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::candgen::{write_candidates, CandidateSet};
use crate::corpus::{
    assign_folds, parse_products, parse_sessions, synth_corpus_with, write_products, write_sessions, FoldAssignment,
    ItemId, Locale, ProductCatalog, Session, SessionRecord, SynthConfig, SynthLocale, Vocab,
};
use crate::covis::{build_covis, build_item_stats, CovisStore};
use crate::embed::{hash_embed, load_text_embeddings, EmbeddingKind, EmbeddingTable, Item2VecParams};
use crate::error::{Error, Result};
use crate::eval::{
    mrr_at_k, popularity_baseline, rank, read_predictions, write_predictions, EvalReport, RankedList, ScoredItem,
};
use crate::featgen::{
    build_bundle, export_rows, import_rows, sample_training_candidates, FeatureContext, FeatureRow, FeatureSchema,
    LeakSafeBundle, Role,
};
use crate::gbdt::{self, Dataset, GbdtModel, GbdtParams, ImportanceMode};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Labeled training sessions.
    pub sessions: PathBuf,
    /// Held-out sessions; next_item, when present, is the evaluation truth.
    #[serde(default)]
    pub test_sessions: Option<PathBuf>,
    #[serde(default)]
    pub products: Option<PathBuf>,
    /// Text embedding file. Without one, products are hash-embedded.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthLocaleSpec {
    pub locale: String,
    pub n_sessions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub locales: Vec<SynthLocaleSpec>,
    pub n_items: usize,
    pub transition_concentration: f64,
    pub shared_structure: bool,
    /// Fraction of each test locale's sessions held out.
    pub test_fraction: f64,
    /// Locales that get a held-out split; empty means all.
    pub test_locales: Vec<String>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            locales: Vec::new(),
            n_items: 400,
            transition_concentration: 1.0,
            shared_structure: true,
            test_fraction: 0.2,
            test_locales: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub k_folds: usize,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    /// Per-locale item2vec overrides merged over the built-in defaults; the
    /// key `*` applies to every locale.
    pub item2vec: BTreeMap<String, Value>,
    pub gbdt: GbdtParams,
    /// Empty means every locale.
    pub train_locales: Vec<String>,
    pub eval_locales: Vec<String>,
    pub seed: Option<u64>,
    /// Negatives kept per training session; `None` keeps all.
    pub max_negatives_per_session: Option<usize>,
    /// Dimensions of hashed product embeddings.
    pub text_dims: usize,
    pub synth: Option<SynthSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            k_folds: 5,
            k: 100,
            item2vec: BTreeMap::new(),
            gbdt: GbdtParams::default(),
            train_locales: Vec::new(),
            eval_locales: Vec::new(),
            seed: None,
            max_negatives_per_session: None,
            text_dims: 128,
            synth: None,
        }
    }
}

fn locale_set(codes: &[String]) -> Result<Option<BTreeSet<Locale>>> {
    if codes.is_empty() {
        return Ok(None);
    }
    codes.iter().map(|c| Locale::new(c)).collect::<Result<_>>().map(Some)
}

fn allowed(set: &Option<BTreeSet<Locale>>, l: &Locale) -> bool {
    set.as_ref().is_none_or(|s| s.contains(l))
}

fn merge_json(base: &mut Value, over: &Value) {
    if let (Value::Object(b), Value::Object(o)) = (&mut *base, over) {
        for (k, v) in o {
            b.insert(k.clone(), v.clone());
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if self.k_folds < 2 {
            return Err(Error::invalid("k_folds must be at least 2"));
        }
        if self.paths.sessions.as_os_str().is_empty() || self.paths.workdir.as_os_str().is_empty() {
            return Err(Error::invalid("paths.sessions and paths.workdir are required"));
        }
        let p = &self.paths;
        let all: Vec<&PathBuf> = [
            Some(&p.sessions),
            p.test_sessions.as_ref(),
            p.products.as_ref(),
            p.embeddings.as_ref(),
            Some(&p.workdir),
        ]
        .into_iter()
        .flatten()
        .collect();
        let distinct: BTreeSet<&PathBuf> = all.iter().copied().collect();
        if distinct.len() != all.len() {
            return Err(Error::invalid("configured paths must be distinct"));
        }
        for (key, v) in &self.item2vec {
            if key != "*" {
                Locale::new(key)?;
            }
            if !v.is_object() {
                return Err(Error::invalid(format!("item2vec.{key} must be an object")));
            }
        }
        locale_set(&self.train_locales)?;
        locale_set(&self.eval_locales)?;
        self.gbdt.validate()?;
        Ok(())
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Built-in parameters for `locale`, then the `*` override, then the
    /// locale's own override. The run seed applies unless overridden.
    pub fn item2vec_params(&self, locale: &Locale) -> Result<Item2VecParams> {
        let mut base = Item2VecParams::for_locale(locale.as_str());
        base.seed = self.seed_or_default();
        let mut v = serde_json::to_value(base)?;
        for key in ["*", locale.as_str()] {
            if let Some(o) = self.item2vec.get(key) {
                merge_json(&mut v, o);
            }
        }
        let p: Item2VecParams =
            serde_json::from_value(v).map_err(|e| Error::invalid(format!("item2vec.{locale}: {e}")))?;
        p.validate()?;
        Ok(p)
    }
}

/// Generates a synthetic corpus and splits off held-out sessions. Both
/// halves are renumbered from 0 in file order.
pub fn synth_split(spec: &SynthSpec, seed: u64) -> Result<(Vec<SessionRecord>, Vec<SessionRecord>, ProductCatalog)> {
    if !(0.0..1.0).contains(&spec.test_fraction) {
        return Err(Error::invalid("test_fraction must lie in [0, 1)"));
    }
    let locales = spec
        .locales
        .iter()
        .map(|l| {
            Ok(SynthLocale {
                locale: Locale::new(&l.locale)?,
                n_sessions: l.n_sessions,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = SynthConfig::new(locales.clone(), spec.n_items, seed);
    cfg.transition_concentration = spec.transition_concentration;
    cfg.shared_structure = spec.shared_structure;
    let corpus = synth_corpus_with(&cfg)?;
    let test_locales = locale_set(&spec.test_locales)?;
    let mut held: HashMap<Locale, usize> = HashMap::new();
    for l in &locales {
        if allowed(&test_locales, &l.locale) {
            held.insert(
                l.locale.clone(),
                (l.n_sessions as f64 * spec.test_fraction).round() as usize,
            );
        }
    }
    let mut seen: HashMap<Locale, usize> = HashMap::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for s in corpus.sessions {
        let n = seen.entry(s.locale.clone()).or_default();
        *n += 1;
        let total = locales
            .iter()
            .find(|l| l.locale == s.locale)
            .map_or(0, |l| l.n_sessions);
        // The last `held` sessions of each locale (in shuffled order) are test.
        let is_test = held.get(&s.locale).is_some_and(|&h| *n > total - h);
        if is_test {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    for (i, s) in train.iter_mut().enumerate() {
        s.session_id = i as u64;
    }
    for (i, s) in test.iter_mut().enumerate() {
        s.session_id = i as u64;
    }
    Ok((train, test, corpus.catalog))
}

/// Raw inputs before encoding.
#[derive(Clone, Debug, Default)]
pub struct Inputs {
    pub train: Vec<SessionRecord>,
    pub test: Vec<SessionRecord>,
    pub catalog: Option<ProductCatalog>,
    pub text: Option<EmbeddingTable>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::file(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::file(path, e))
}

/// Hashed text embeddings for every product.
pub fn embed_catalog(catalog: &ProductCatalog, dims: usize) -> Result<EmbeddingTable> {
    let dims = dims.max(8);
    EmbeddingTable::new(
        EmbeddingKind::Text,
        dims,
        catalog.iter().map(|p| (p.id.clone(), hash_embed(p, dims, 0))),
    )
}

impl Inputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let p = &cfg.paths;
        let train = parse_sessions(open(&p.sessions)?)?;
        let test = match &p.test_sessions {
            Some(path) => parse_sessions(open(path)?)?,
            None => Vec::new(),
        };
        let catalog = match &p.products {
            Some(path) => Some(parse_products(open(path)?)?),
            None => None,
        };
        let text = match (&p.embeddings, &catalog) {
            (Some(path), _) => Some(load_text_embeddings(open(path)?)?),
            (None, Some(c)) if !c.is_empty() => Some(embed_catalog(c, cfg.text_dims)?),
            _ => None,
        };
        Ok(Inputs {
            train,
            test,
            catalog,
            text,
        })
    }
}

/// Feature rows of the test sessions, grouped by session.
#[derive(Clone, Debug, Default)]
pub struct TestRows {
    pub rows: Vec<FeatureRow>,
    pub sessions: Vec<(u64, Range<usize>)>,
}

impl TestRows {
    fn from_rows(rows: Vec<FeatureRow>) -> Self {
        let mut sessions: Vec<(u64, Range<usize>)> = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            match sessions.last_mut() {
                Some((sid, range)) if *sid == r.session_id => range.end = i + 1,
                _ => sessions.push((r.session_id, i..i + 1)),
            }
        }
        TestRows { rows, sessions }
    }
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub vocab: Vocab,
    pub train: Vec<Session>,
    /// Test sessions with next_item removed.
    pub test: Vec<Session>,
    pub truth: HashMap<u64, ItemId>,
    pub folds: FoldAssignment,
    pub covis: CovisStore,
    pub bundle: LeakSafeBundle,
    pub text: Option<EmbeddingTable>,
}

impl Pipeline {
    pub fn build(inputs: &Inputs, cfg: &PipelineConfig) -> Result<Self> {
        if let Some(s) = inputs.train.iter().find(|s| s.next_item.is_none()) {
            return Err(Error::invalid(format!(
                "training session {} has no next_item",
                s.session_id
            )));
        }
        let mut truth = HashMap::new();
        let stripped: Vec<SessionRecord> = inputs
            .test
            .iter()
            .map(|s| {
                if let Some(t) = &s.next_item {
                    truth.insert(s.session_id, t.clone());
                }
                SessionRecord {
                    next_item: None,
                    ..s.clone()
                }
            })
            .collect();
        let vocab = Vocab::from_corpus(inputs.train.iter().chain(&stripped), inputs.catalog.as_ref());
        let train = vocab.encode_all(&inputs.train)?;
        let test = vocab.encode_all(&stripped)?;
        let folds = assign_folds(&inputs.train, cfg.k_folds).map_err(|e| e.in_stage("folds"))?;

        let mut all: Vec<Session> = train.clone();
        all.extend(test.iter().cloned());
        let covis = build_covis(&all).map_err(|e| e.in_stage("covis"))?;

        let locales: BTreeSet<&Locale> = train.iter().map(|s| &s.locale).collect();
        let params: BTreeMap<Locale, Item2VecParams> = locales
            .into_iter()
            .map(|l| Ok((l.clone(), cfg.item2vec_params(l)?)))
            .collect::<Result<_>>()?;
        let bundle = build_bundle(&all, &vocab, &folds, &|l| {
            params
                .get(l)
                .cloned()
                .unwrap_or_else(|| Item2VecParams::for_locale(l.as_str()))
        })
        .map_err(|e| e.in_stage("bundle"))?;

        Ok(Pipeline {
            cfg: cfg.clone(),
            vocab,
            train,
            test,
            truth,
            folds,
            covis,
            bundle,
            text: inputs.text.clone(),
        })
    }

    pub fn context(&self) -> FeatureContext<'_> {
        FeatureContext::new(&self.vocab, &self.covis, &self.bundle, self.text.as_ref())
    }

    /// Visits every training session with its full candidate set and the
    /// rows kept after negative sampling.
    pub fn for_each_training_session(
        &self,
        ctx: &FeatureContext<'_>,
        mut f: impl FnMut(&Session, &CandidateSet, Vec<FeatureRow>) -> Result<()>,
    ) -> Result<()> {
        let seed = self.cfg.seed_or_default();
        for s in &self.train {
            let cands = ctx.candidates(s, Role::Train, self.cfg.k)?;
            let kept = sample_training_candidates(&cands, s.next, self.cfg.max_negatives_per_session, seed);
            let rows = ctx.build_rows(s, Role::Train, &kept)?;
            f(s, &cands, rows)?;
        }
        Ok(())
    }

    /// Sampled training rows per session locale.
    pub fn training_data(&self) -> Result<BTreeMap<Locale, Dataset>> {
        let ctx = self.context();
        let schema = ctx.schema().clone();
        let mut out: BTreeMap<Locale, Dataset> = BTreeMap::new();
        self.for_each_training_session(&ctx, |s, _, rows| {
            let d = out
                .entry(s.locale.clone())
                .or_insert_with(|| Dataset::new(schema.clone()));
            for r in &rows {
                d.push(&r.values, r.label)?;
            }
            Ok(())
        })
        .map_err(|e| e.in_stage("features"))?;
        Ok(out)
    }

    /// Rows for every candidate of every test session in `locales`.
    pub fn test_rows(&self, locales: &[String]) -> Result<(TestRows, Vec<CandidateSet>)> {
        let filter = locale_set(locales)?;
        let ctx = self.context();
        let mut rows = Vec::new();
        let mut sets = Vec::new();
        for s in self.test.iter().filter(|s| allowed(&filter, &s.locale)) {
            let cands = ctx.candidates(s, Role::Test, self.cfg.k)?;
            rows.extend(ctx.build_rows(s, Role::Test, &cands)?);
            sets.push(cands);
        }
        Ok((TestRows::from_rows(rows), sets))
    }

    pub fn evaluate(&self, lists: &[RankedList]) -> Result<EvalReport> {
        let mut report = mrr_at_k(lists, &self.truth, self.cfg.k)?;
        let ids: BTreeSet<u64> = lists.iter().map(|l| l.session_id).collect();
        let sessions: Vec<Session> = self.test.iter().filter(|s| ids.contains(&s.id)).cloned().collect();
        let base = popularity_baseline(&sessions, &self.bundle.full.stats, &self.vocab, self.cfg.k);
        report.baseline = Some(Box::new(mrr_at_k(&base, &self.truth, self.cfg.k)?));
        Ok(report)
    }
}

/// Concatenates the datasets of the selected locales (empty = all).
pub fn select_training(data: &BTreeMap<Locale, Dataset>, locales: &[String]) -> Result<Dataset> {
    let filter = locale_set(locales)?;
    let mut out: Option<Dataset> = None;
    for (l, d) in data {
        if !allowed(&filter, l) {
            continue;
        }
        match &mut out {
            None => out = Some(d.clone()),
            Some(o) => o.extend(d)?,
        }
    }
    out.ok_or_else(|| Error::invalid("no training rows for the selected locales"))
}

/// Scores test rows and ranks each session's candidates.
pub fn predict_lists(model: &GbdtModel, test: &TestRows, schema: &FeatureSchema, k: usize) -> Result<Vec<RankedList>> {
    test.sessions
        .iter()
        .map(|(sid, range)| {
            let rows = &test.rows[range.clone()];
            let scored = rows
                .iter()
                .map(|r| {
                    Ok(ScoredItem {
                        item: r.candidate.clone(),
                        prob: model.predict_values(&r.values, schema)?,
                        source: r.source,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rank(*sid, scored, k)
        })
        .collect()
}

/// Artifact locations inside the work directory.
pub struct Workdir(pub PathBuf);

impl Workdir {
    pub fn covis(&self) -> PathBuf {
        self.0.join("covis.tsv")
    }
    pub fn next_store(&self, fold: Option<usize>) -> PathBuf {
        self.0.join(match fold {
            Some(f) => format!("next_fold{f}.tsv"),
            None => "next_full.tsv".into(),
        })
    }
    pub fn item_stats(&self, fold: Option<usize>) -> PathBuf {
        self.0.join(match fold {
            Some(f) => format!("item_stats_fold{f}.tsv"),
            None => "item_stats_full.tsv".into(),
        })
    }
    pub fn item2vec(&self, fold: Option<usize>, locale: &Locale) -> PathBuf {
        self.0.join(match fold {
            Some(f) => format!("item2vec_fold{f}_{locale}.txt"),
            None => format!("item2vec_full_{locale}.txt"),
        })
    }
    pub fn text_embeddings(&self) -> PathBuf {
        self.0.join("text_embeddings.txt")
    }
    pub fn candidates(&self, test: bool) -> PathBuf {
        self.0.join(if test {
            "candidates_test.jsonl"
        } else {
            "candidates_train.jsonl"
        })
    }
    pub fn features(&self, test: bool) -> PathBuf {
        self.0.join(if test {
            "features_test.csv"
        } else {
            "features_train.csv"
        })
    }
    pub fn model(&self) -> PathBuf {
        self.0.join("model.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.0.join("predictions.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.0.join("report.json")
    }
    pub fn importance(&self) -> PathBuf {
        self.0.join("importance.tsv")
    }
}

fn require_seed(cfg: &PipelineConfig, cmd: &str) -> Result<u64> {
    cfg.seed
        .ok_or_else(|| Error::invalid(format!("{cmd} requires a seed (--seed or config \"seed\")")))
}

/// Writes the synthetic train/test sessions and catalog to the configured
/// paths.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<()> {
    let seed = require_seed(cfg, "synth")?;
    let spec = cfg
        .synth
        .as_ref()
        .ok_or_else(|| Error::invalid("synth requires a \"synth\" section in the config"))?;
    let (train, test, catalog) = synth_split(spec, seed).map_err(|e| e.in_stage("synth"))?;
    let p = &cfg.paths;
    let mut w = create(&p.sessions)?;
    write_sessions(&mut w, &train)?;
    w.flush()?;
    if let Some(path) = &p.test_sessions {
        let mut w = create(path)?;
        write_sessions(&mut w, &test)?;
        w.flush()?;
    }
    if let Some(path) = &p.products {
        let mut w = create(path)?;
        write_products(&mut w, &catalog)?;
        w.flush()?;
    }
    log::info!(
        "synth: {} train, {} test sessions, {} products",
        train.len(),
        test.len(),
        catalog.len()
    );
    Ok(())
}

fn write_with(path: PathBuf, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(&path)?;
    f(&mut w)?;
    w.flush().map_err(|e| Error::file(path, e))
}

/// Builds every artifact up to and including the feature files.
pub fn cmd_build(cfg: &PipelineConfig) -> Result<()> {
    let inputs = Inputs::load(cfg).map_err(|e| e.in_stage("load"))?;
    let pipe = Pipeline::build(&inputs, cfg)?;
    let wd = Workdir(cfg.paths.workdir.clone());
    fs::create_dir_all(&wd.0).map_err(|e| Error::file(&wd.0, e))?;

    write_with(wd.covis(), |w| pipe.covis.write_tsv(&pipe.vocab, w))?;
    let versions = pipe
        .bundle
        .versions
        .iter()
        .map(|v| (v.exclude_fold, v))
        .chain([(None, &pipe.bundle.full)]);
    for (fold, v) in versions {
        write_with(wd.next_store(fold), |w| v.next.write_tsv(&pipe.vocab, w))?;
        write_with(wd.item_stats(fold), |w| v.stats.write_tsv(&pipe.vocab, w))?;
        for (locale, t) in &v.item2vec {
            write_with(wd.item2vec(fold, locale), |w| t.write(w))?;
        }
    }
    if let Some(t) = &pipe.text {
        write_with(wd.text_embeddings(), |w| t.write(w))?;
    }

    let ctx = pipe.context();
    let schema = ctx.schema().clone();
    let mut train_sets = Vec::with_capacity(pipe.train.len());
    let mut train_rows = Vec::new();
    pipe.for_each_training_session(&ctx, |_, cands, rows| {
        train_sets.push(cands.clone());
        train_rows.extend(rows);
        Ok(())
    })
    .map_err(|e| e.in_stage("features"))?;
    write_with(wd.candidates(false), |w| write_candidates(w, &train_sets, &pipe.vocab))?;
    write_with(wd.features(false), |w| export_rows(w, &train_rows, &schema))?;
    drop(train_rows);

    let (test, test_sets) = pipe.test_rows(&[]).map_err(|e| e.in_stage("features"))?;
    write_with(wd.candidates(true), |w| write_candidates(w, &test_sets, &pipe.vocab))?;
    write_with(wd.features(true), |w| export_rows(w, &test.rows, &schema))?;
    log::info!(
        "build: {} train sessions, {} test sessions",
        pipe.train.len(),
        pipe.test.len()
    );
    Ok(())
}

fn read_rows(path: &Path, schema: &FeatureSchema) -> Result<Vec<FeatureRow>> {
    import_rows(open(path)?, schema)
}

/// Trains on the training feature file restricted to `train_locales`.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    let seed = require_seed(cfg, "train")?;
    let wd = Workdir(cfg.paths.workdir.clone());
    let schema = FeatureSchema::standard();
    let filter = locale_set(&cfg.train_locales)?;
    let mut data = Dataset::new(schema.clone());
    for r in read_rows(&wd.features(false), &schema).map_err(|e| e.in_stage("train"))? {
        if allowed(&filter, r.candidate.locale()) {
            data.push(&r.values, r.label)?;
        }
    }
    let params = GbdtParams {
        seed,
        ..cfg.gbdt.clone()
    };
    let model = gbdt::train(&data, &params).map_err(|e| e.in_stage("train"))?;
    write_with(wd.model(), |w| model.save(w))?;
    log::info!("train: {} rows, {} trees", data.n_rows(), model.trees.len());
    Ok(())
}

fn load_model(path: &Path) -> Result<GbdtModel> {
    GbdtModel::load(open(path)?)
}

/// Ranks the test candidates of `eval_locales` with the saved model.
pub fn cmd_predict(cfg: &PipelineConfig) -> Result<()> {
    let wd = Workdir(cfg.paths.workdir.clone());
    let model = load_model(&wd.model()).map_err(|e| e.in_stage("predict"))?;
    let schema = FeatureSchema::standard();
    model.check_schema(&schema).map_err(|e| e.in_stage("predict"))?;
    let filter = locale_set(&cfg.eval_locales)?;
    let rows: Vec<FeatureRow> = read_rows(&wd.features(true), &schema)
        .map_err(|e| e.in_stage("predict"))?
        .into_iter()
        .filter(|r| allowed(&filter, r.candidate.locale()))
        .collect();
    let lists = predict_lists(&model, &TestRows::from_rows(rows), &schema, cfg.k)?;
    write_with(wd.predictions(), |w| write_predictions(w, &lists))?;
    log::info!("predict: {} sessions", lists.len());
    Ok(())
}

/// Scores predictions.jsonl against the test truth, with the popularity
/// baseline alongside.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    let wd = Workdir(cfg.paths.workdir.clone());
    let test_path = cfg
        .paths
        .test_sessions
        .as_ref()
        .ok_or_else(|| Error::invalid("eval requires paths.test_sessions"))?;
    let train = parse_sessions(open(&cfg.paths.sessions)?)?;
    let test = parse_sessions(open(test_path)?)?;
    let locale_of: HashMap<u64, Locale> = test.iter().map(|s| (s.session_id, s.locale.clone())).collect();
    let lists = read_predictions(open(&wd.predictions())?, &locale_of).map_err(|e| e.in_stage("eval"))?;
    let truth: HashMap<u64, ItemId> = test
        .iter()
        .filter_map(|s| s.next_item.clone().map(|t| (s.session_id, t)))
        .collect();
    let mut report = mrr_at_k(&lists, &truth, cfg.k).map_err(|e| e.in_stage("eval"))?;

    let predicted: BTreeSet<u64> = lists.iter().map(|l| l.session_id).collect();
    let stripped: Vec<SessionRecord> = test
        .iter()
        .filter(|s| predicted.contains(&s.session_id))
        .map(|s| SessionRecord {
            next_item: None,
            ..s.clone()
        })
        .collect();
    let vocab = Vocab::from_corpus(train.iter().chain(&stripped), None);
    let stats = build_item_stats(&vocab.encode_all(&train)?, None, None)?;
    let base = popularity_baseline(&vocab.encode_all(&stripped)?, &stats, &vocab, cfg.k);
    report.baseline = Some(Box::new(mrr_at_k(&base, &truth, cfg.k)?));
    write_with(wd.report(), |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(report)
}

/// Top-20 features by gain, written to importance.tsv and returned.
pub fn cmd_importance(cfg: &PipelineConfig) -> Result<String> {
    let wd = Workdir(cfg.paths.workdir.clone());
    let model = load_model(&wd.model()).map_err(|e| e.in_stage("importance"))?;
    let mut buf = Vec::new();
    model.write_importance_tsv(&mut buf, ImportanceMode::Gain, 20)?;
    fs::write(wd.importance(), &buf).map_err(|e| Error::file(wd.importance(), e))?;
    Ok(String::from_utf8(buf).expect("tsv is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_json(extra: &str) -> String {
        format!(r#"{{"paths": {{"sessions": "s.jsonl", "workdir": "w"}}{extra}}}"#)
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = PipelineConfig::from_json(&cfg_json("")).unwrap();
        assert_eq!((c.k, c.k_folds), (100, 5));
        assert!(PipelineConfig::from_json(&cfg_json(r#", "K": 0"#)).is_err());
        assert!(PipelineConfig::from_json(&cfg_json(r#", "k_folds": 1"#)).is_err());
        assert!(PipelineConfig::from_json(&cfg_json(r#", "bogus": 1"#)).is_err());
        assert!(PipelineConfig::from_json(r#"{"paths": {"sessions": "a", "workdir": "a"}}"#).is_err());
        assert!(PipelineConfig::from_json(&cfg_json(r#", "gbdt": {"max_leaves": 1}"#)).is_err());
    }

    #[test]
    fn item2vec_overrides_layer_over_defaults() {
        let c = PipelineConfig::from_json(&cfg_json(
            r#", "seed": 4, "item2vec": {"*": {"epochs": 2}, "FR": {"dims": 10}}"#,
        ))
        .unwrap();
        let fr = c.item2vec_params(&Locale::new("FR").unwrap()).unwrap();
        assert_eq!((fr.dims, fr.epochs, fr.seed, fr.subsample_threshold), (10, 2, 4, 1e-3));
        let jp = c.item2vec_params(&Locale::new("JP").unwrap()).unwrap();
        assert_eq!((jp.dims, jp.epochs, jp.subsample_threshold), (100, 2, 1e-4));
        let bad = PipelineConfig::from_json(&cfg_json(r#", "item2vec": {"*": {"dimz": 2}}"#)).unwrap();
        assert!(bad.item2vec_params(&Locale::new("JP").unwrap()).is_err());
    }

    #[test]
    fn synth_split_holds_out_test_locales_only() {
        let spec = SynthSpec {
            locales: vec![
                SynthLocaleSpec {
                    locale: "DE".into(),
                    n_sessions: 100,
                },
                SynthLocaleSpec {
                    locale: "ES".into(),
                    n_sessions: 50,
                },
            ],
            n_items: 60,
            test_locales: vec!["ES".into()],
            ..Default::default()
        };
        let (train, test, catalog) = synth_split(&spec, 1).unwrap();
        assert_eq!(test.len(), 10);
        assert!(test.iter().all(|s| s.locale.as_str() == "ES"));
        assert_eq!(train.len(), 140);
        assert!(train.iter().enumerate().all(|(i, s)| s.session_id == i as u64));
        assert_eq!(catalog.len(), 120);
    }

    #[test]
    fn test_rows_group_by_session() {
        let row = |sid| FeatureRow {
            session_id: sid,
            candidate: ItemId::parse_qualified("UK:x").unwrap(),
            source: crate::candgen::CandidateSource::Covis,
            values: vec![],
            label: None,
        };
        let t = TestRows::from_rows(vec![row(4), row(4), row(1), row(7), row(7)]);
        assert_eq!(t.sessions, vec![(4, 0..2), (1, 2..3), (7, 3..5)]);
    }
}
