//! Gradient-boosted trees for binary classification.
//!
//! Second-order boosting on logistic loss with histogram splits. Features are
//! quantile-binned once, nulls get a bin of their own, and each split learns
//! which side nulls go to. Trees grow best-first up to a leaf budget.

mod data;
mod grow;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featgen::{FeatureRow, FeatureSchema};

pub use data::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub num_rounds: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_gain: f64,
    pub max_bins: usize,
    pub lambda_l2: f64,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            num_rounds: 100,
            learning_rate: 0.1,
            max_leaves: 31,
            max_depth: 6,
            min_samples_leaf: 20,
            min_gain: 0.0,
            max_bins: 255,
            lambda_l2: 1.0,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_rounds == 0 {
            return Err(Error::invalid("num_rounds must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid("learning_rate must lie in (0, 1]"));
        }
        if self.max_leaves < 2 {
            return Err(Error::invalid("max_leaves must be at least 2"));
        }
        if !(2..=255).contains(&self.max_bins) {
            return Err(Error::invalid("max_bins must lie in [2, 255]"));
        }
        if self.lambda_l2.is_nan() || self.lambda_l2 < 0.0 || self.min_gain.is_nan() || self.min_gain < 0.0 {
            return Err(Error::invalid("lambda_l2 and min_gain must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    /// Rows with `x < threshold` go left; nulls follow `missing_goes_left`.
    Internal {
        feature: usize,
        #[serde(with = "float_or_inf")]
        threshold: f32,
        missing_goes_left: bool,
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn eval(&self, row: &dyn Fn(usize) -> Option<f32>) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Internal {
                    feature,
                    threshold,
                    missing_goes_left,
                    left,
                    right,
                    ..
                } => {
                    let go_left = match row(*feature) {
                        None => *missing_goes_left,
                        Some(x) => x < *threshold,
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    fn visit_splits(&self, f: &mut impl FnMut(usize, f64)) {
        if let TreeNode::Internal {
            feature,
            gain,
            left,
            right,
            ..
        } = self
        {
            f(*feature, *gain);
            left.visit_splits(f);
            right.visit_splits(f);
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

mod float_or_inf {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f32, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f32(*x)
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f32),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f32, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) if s == "inf" => Ok(f32::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f32::NEG_INFINITY),
            Repr::Str(s) => Err(de::Error::custom(format!("bad threshold {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base_score: f64,
    pub schema_fingerprint: String,
    pub feature_names: Vec<String>,
    pub trees: Vec<TreeNode>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImportanceMode {
    Gain,
    SplitCount,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean logistic loss of raw scores.
fn log_loss(scores: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| s.max(0.0) + (-s.abs()).exp().ln_1p() - y * s)
        .sum();
    total / scores.len() as f64
}

const PRIOR_CLAMP: f64 = 1e-6;

/// Trains a model and returns it with the training loss before the first
/// round and after each round.
pub fn train_with_history(data: &Dataset, params: &GbdtParams) -> Result<(GbdtModel, Vec<f64>)> {
    params.validate()?;
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::invalid("gbdt training needs at least 2 rows"));
    }
    let labels: Vec<f64> = data
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.map(f64::from)
                .ok_or_else(|| Error::invalid(format!("training row {i} has no label")))
        })
        .collect::<Result<_>>()?;
    let prior = (labels.iter().sum::<f64>() / n as f64).clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    let base_score = (prior / (1.0 - prior)).ln();

    let binned = data::BinnedData::new(data, params.max_bins);
    let grower = grow::Grower::new(&binned, params);
    let mut scores = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut history = vec![log_loss(&scores, &labels)];
    let mut trees = Vec::with_capacity(params.num_rounds);
    for round in 0..params.num_rounds {
        for i in 0..n {
            let p = sigmoid(scores[i]);
            grad[i] = p - labels[i];
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        trees.push(grower.grow(&grad, &hess, &mut scores));
        history.push(log_loss(&scores, &labels));
        log::debug!("round {round}: loss {:.6}", history[round + 1]);
    }
    let schema = data.schema();
    Ok((
        GbdtModel {
            base_score,
            schema_fingerprint: schema.fingerprint(),
            feature_names: schema.names().to_vec(),
            trees,
        },
        history,
    ))
}

pub fn train(data: &Dataset, params: &GbdtParams) -> Result<GbdtModel> {
    Ok(train_with_history(data, params)?.0)
}

impl GbdtModel {
    /// A model with no trees; predicts `sigmoid(base_score)` everywhere.
    pub fn constant(base_score: f64, schema: &FeatureSchema) -> Self {
        GbdtModel {
            base_score,
            schema_fingerprint: schema.fingerprint(),
            feature_names: schema.names().to_vec(),
            trees: Vec::new(),
        }
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if schema.fingerprint() != self.schema_fingerprint {
            return Err(Error::Schema(format!(
                "model schema {} does not match row schema {}",
                &self.schema_fingerprint[..12.min(self.schema_fingerprint.len())],
                &schema.fingerprint()[..12]
            )));
        }
        Ok(())
    }

    fn raw(&self, row: &dyn Fn(usize) -> Option<f32>) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.eval(row)).sum::<f64>()
    }

    /// Probability for one row of values laid out per `schema`.
    pub fn predict_values(&self, values: &[Option<f32>], schema: &FeatureSchema) -> Result<f64> {
        self.check_schema(schema)?;
        if values.len() != schema.len() {
            return Err(Error::Schema(format!(
                "row has {} values, schema has {}",
                values.len(),
                schema.len()
            )));
        }
        Ok(sigmoid(self.raw(&|f| values[f])))
    }

    pub fn predict_rows(&self, rows: &[FeatureRow], schema: &FeatureSchema) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict_values(&r.values, schema)).collect()
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_schema(data.schema())?;
        Ok((0..data.n_rows())
            .map(|i| {
                sigmoid(self.raw(&|f| {
                    let x = data.column(f)[i];
                    Some(x).filter(|x| !x.is_nan())
                }))
            })
            .collect())
    }

    /// Per-feature total gain or split count, descending, zero scores
    /// dropped. Ties keep schema order.
    pub fn feature_importance(&self, mode: ImportanceMode) -> Vec<(String, f64)> {
        let mut score = vec![0.0; self.feature_names.len()];
        for t in &self.trees {
            t.visit_splits(&mut |f, gain| {
                score[f] += match mode {
                    ImportanceMode::Gain => gain,
                    ImportanceMode::SplitCount => 1.0,
                }
            });
        }
        let mut out: Vec<(String, f64)> = self
            .feature_names
            .iter()
            .cloned()
            .zip(score)
            .filter(|(_, s)| *s > 0.0)
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    /// `rank<TAB>feature<TAB>score` for the top `n` features.
    pub fn write_importance_tsv<W: Write>(&self, mut w: W, mode: ImportanceMode, n: usize) -> Result<()> {
        for (rank, (name, s)) in self.feature_importance(mode).into_iter().take(n).enumerate() {
            writeln!(w, "{}\t{name}\t{s}", rank + 1)?;
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let m: GbdtModel = serde_json::from_reader(r)?;
        let n = m.feature_names.len();
        for t in &m.trees {
            let mut bad = None;
            t.visit_splits(&mut |f, _| {
                if f >= n {
                    bad = Some(f);
                }
            });
            if let Some(f) = bad {
                return Err(Error::invalid(format!("model references feature {f} of {n}")));
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dataset(cols: usize, rows: &[(Vec<Option<f32>>, u8)]) -> Dataset {
        let mut d = Dataset::new(FeatureSchema::custom((0..cols).map(|i| format!("f{i}"))));
        for (v, y) in rows {
            d.push(v, Some(*y)).unwrap();
        }
        d
    }

    fn stump() -> GbdtParams {
        GbdtParams {
            num_rounds: 1,
            max_depth: 1,
            max_leaves: 2,
            min_samples_leaf: 1,
            learning_rate: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_trees_predict_one_half() {
        let s = FeatureSchema::custom(["a"]);
        let m = GbdtModel::constant(0.0, &s);
        assert_eq!(m.predict_values(&[None], &s).unwrap(), 0.5);
    }

    #[test]
    fn all_positive_labels_saturate() {
        let rows: Vec<_> = (0..50).map(|i| (vec![Some(i as f32)], 1)).collect();
        let m = train(&dataset(1, &rows), &GbdtParams::default()).unwrap();
        for x in [-5.0, 0.0, 20.0, 1e6] {
            assert!(m.predict_values(&[Some(x)], &FeatureSchema::custom(["f0"])).unwrap() >= 0.99);
        }
        assert!(m.predict_values(&[None], &FeatureSchema::custom(["f0"])).unwrap() >= 0.99);
    }

    #[test]
    fn one_dimensional_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f32> = (0..100).map(|_| rng.gen_range(0.0..6.0)).collect();
        let rows: Vec<_> = xs.iter().map(|&x| (vec![Some(x)], u8::from(x > 3.0))).collect();
        let d = dataset(1, &rows);
        let m = train(&d, &stump()).unwrap();
        let TreeNode::Internal { threshold, .. } = &m.trees[0] else {
            panic!("expected a split")
        };
        let lo = xs.iter().copied().filter(|&x| x <= 3.0).fold(f32::MIN, f32::max);
        let hi = xs.iter().copied().filter(|&x| x > 3.0).fold(f32::MAX, f32::min);
        assert!(lo < *threshold && *threshold <= hi, "{lo} {threshold} {hi}");
        let p = m.predict(&d).unwrap();
        let correct = p.iter().zip(&rows).filter(|(p, r)| (**p > 0.5) == (r.1 == 1)).count();
        assert_eq!(correct, 100);
    }

    #[test]
    fn null_routes_to_the_positive_side() {
        let mut rows = Vec::new();
        for i in 0..60 {
            rows.push((vec![None], 1));
            rows.push((vec![Some(i as f32)], u8::from(i % 3 == 0)));
        }
        let m = train(&dataset(1, &rows), &stump()).unwrap();
        let TreeNode::Internal {
            missing_goes_left,
            left,
            right,
            ..
        } = &m.trees[0]
        else {
            panic!("expected a split")
        };
        let (TreeNode::Leaf { value: l }, TreeNode::Leaf { value: r }) = (&**left, &**right) else {
            panic!("expected leaves")
        };
        assert_eq!(*missing_goes_left, l > r);
    }

    #[test]
    fn respects_leaf_and_depth_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<_> = (0..2000)
            .map(|_| {
                let v: Vec<Option<f32>> = (0..4).map(|_| Some(rng.gen::<f32>())).collect();
                let y = u8::from(v[0].unwrap() + v[1].unwrap() * v[2].unwrap() > 0.7);
                (v, y)
            })
            .collect();
        let params = GbdtParams {
            num_rounds: 5,
            max_leaves: 7,
            max_depth: 3,
            ..Default::default()
        };
        let m = train(&dataset(4, &rows), &params).unwrap();
        for t in &m.trees {
            assert!(t.n_leaves() <= 7);
            assert!(t.depth() <= 3);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(train(&dataset(1, &[(vec![Some(1.0)], 1)]), &GbdtParams::default()).is_err());
        let bad = GbdtParams {
            max_leaves: 1,
            ..Default::default()
        };
        let rows = vec![(vec![Some(1.0)], 1), (vec![Some(2.0)], 0)];
        assert!(train(&dataset(1, &rows), &bad).is_err());
        let m = train(&dataset(1, &rows), &stump()).unwrap();
        assert!(matches!(
            m.predict_values(&[Some(1.0)], &FeatureSchema::custom(["g"])),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn importance_of_single_feature_model() {
        let rows: Vec<_> = (0..100)
            .map(|i| (vec![Some(i as f32), Some(1.0)], u8::from(i >= 50)))
            .collect();
        let m = train(&dataset(2, &rows), &GbdtParams::default()).unwrap();
        let imp = m.feature_importance(ImportanceMode::Gain);
        assert_eq!(imp.len(), 1);
        assert_eq!(imp[0].0, "f0");
        let mut buf = Vec::new();
        m.write_importance_tsv(&mut buf, ImportanceMode::SplitCount, 20)
            .unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("1\tf0\t"));
    }

    #[test]
    fn save_load_round_trip_and_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<_> = (0..300)
            .map(|_| {
                let a = rng.gen::<f32>();
                let b = if rng.gen_bool(0.3) {
                    None
                } else {
                    Some(rng.gen::<f32>())
                };
                (vec![Some(a), b], u8::from(a > 0.4 && b.is_none()))
            })
            .collect();
        let d = dataset(2, &rows);
        let m = train(&d, &GbdtParams::default()).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = GbdtModel::load(&buf[..]).unwrap();
        assert_eq!(m.predict(&d).unwrap(), back.predict(&d).unwrap());
        assert!(GbdtModel::load(&buf[..buf.len() / 2]).is_err());
        let mut again = Vec::new();
        train(&d, &GbdtParams::default()).unwrap().save(&mut again).unwrap();
        assert_eq!(buf, again);
    }
}
