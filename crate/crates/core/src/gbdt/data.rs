use crate::error::{Error, Result};
use crate::featgen::{FeatureRow, FeatureSchema};

/// Column-major feature matrix. Nulls are stored as NaN.
#[derive(Clone, Debug)]
pub struct Dataset {
    schema: FeatureSchema,
    columns: Vec<Vec<f32>>,
    labels: Vec<Option<u8>>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema) -> Self {
        Dataset {
            columns: vec![Vec::new(); schema.len()],
            schema,
            labels: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[FeatureRow], schema: &FeatureSchema) -> Result<Self> {
        let mut d = Dataset::new(schema.clone());
        for r in rows {
            d.push(&r.values, r.label)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, values: &[Option<f32>], label: Option<u8>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::Schema(format!(
                "row has {} values, schema has {}",
                values.len(),
                self.columns.len()
            )));
        }
        if let Some(l) = label {
            if l > 1 {
                return Err(Error::invalid(format!("label {l} is not 0 or 1")));
            }
        }
        for (col, v) in self.columns.iter_mut().zip(values) {
            col.push(v.unwrap_or(f32::NAN));
        }
        self.labels.push(label);
        Ok(())
    }

    /// Appends every row of `other`; schemas must agree.
    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.schema != self.schema {
            return Err(Error::Schema(
                "cannot concatenate datasets with different schemas".into(),
            ));
        }
        for (a, b) in self.columns.iter_mut().zip(&other.columns) {
            a.extend_from_slice(b);
        }
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, f: usize) -> &[f32] {
        &self.columns[f]
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    /// Row `i` with nulls restored.
    pub fn row(&self, i: usize) -> Vec<Option<f32>> {
        self.columns
            .iter()
            .map(|c| Some(c[i]).filter(|x| !x.is_nan()))
            .collect()
    }

    /// Applies `f` to every non-null value of column `col`.
    pub fn map_column(&mut self, col: usize, f: impl Fn(f32) -> f32) {
        for x in &mut self.columns[col] {
            if !x.is_nan() {
                *x = f(*x);
            }
        }
    }
}

/// Quantile bins for one feature. Bin 0 holds nulls; value bin `j` (1-based)
/// holds values in `[lower[j-1], lower[j])`.
#[derive(Clone, Debug)]
pub(crate) struct BinMapper {
    pub lower: Vec<f32>,
}

impl BinMapper {
    pub fn fit(column: &[f32], max_bins: usize) -> Self {
        let mut vals: Vec<f32> = column.iter().copied().filter(|x| !x.is_nan()).collect();
        vals.sort_unstable_by(f32::total_cmp);
        let mut distinct = vals.clone();
        distinct.dedup();
        let lower = if distinct.len() <= max_bins {
            distinct
        } else {
            let n = vals.len();
            let mut lower: Vec<f32> = (0..max_bins).map(|b| vals[b * n / max_bins]).collect();
            lower.dedup();
            lower
        };
        BinMapper { lower }
    }

    pub fn n_value_bins(&self) -> usize {
        self.lower.len()
    }

    #[inline]
    pub fn bin(&self, x: f32) -> u8 {
        if x.is_nan() {
            0
        } else {
            // Training values never fall below lower[0], so this is >= 1.
            self.lower.partition_point(|&e| e <= x).max(1) as u8
        }
    }
}

/// Binned copy of a dataset used during training.
pub(crate) struct BinnedData {
    pub mappers: Vec<BinMapper>,
    pub bins: Vec<Vec<u8>>,
}

impl BinnedData {
    pub fn new(data: &Dataset, max_bins: usize) -> Self {
        let mappers: Vec<BinMapper> = data.columns.iter().map(|c| BinMapper::fit(c, max_bins)).collect();
        let bins = data
            .columns
            .iter()
            .zip(&mappers)
            .map(|(c, m)| c.iter().map(|&x| m.bin(x)).collect())
            .collect();
        BinnedData { mappers, bins }
    }
}
