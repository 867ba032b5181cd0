//! Data preparation: boxplot outlier flagging, min-max scaling, missing-rate
//! column exclusion, K-NN imputation and balanced train/test splitting.
//!
//! Matrices are row-major `Vec<Vec<Option<f64>>>`; `None` marks a missing
//! cell. Flagged outliers are turned into missing cells and imputed, so no
//! patient row is ever discarded.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::{ColumnKind, Dataset, Label};
use crate::error::{Result, TpisError};
use crate::rng;

pub type SparseMatrix = Vec<Vec<Option<f64>>>;

pub const DEFAULT_MISSING_THRESHOLD: f64 = 0.30;
pub const DEFAULT_IMPUTE_K: usize = 5;

/// Per-feature training range for min-max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerState {
    pub fn width(&self) -> usize {
        self.min.len()
    }

    pub fn is_constant(&self, col: usize) -> bool {
        self.max[col] <= self.min[col]
    }

    /// Scales one cell of column `col`; out-of-range values clamp to [0, 1].
    pub fn scale(&self, col: usize, x: f64) -> f64 {
        if self.is_constant(col) {
            return 0.0;
        }
        ((x - self.min[col]) / (self.max[col] - self.min[col])).clamp(0.0, 1.0)
    }
}

/// Learns per-column (min, max) over non-missing cells. A column with no
/// observed value is recorded as constant.
pub fn fit_scaler(rows: &[Vec<Option<f64>>]) -> Result<ScalerState> {
    let width = rows.first().map(Vec::len).ok_or(TpisError::EmptyDataset)?;
    let mut min = vec![f64::INFINITY; width];
    let mut max = vec![f64::NEG_INFINITY; width];
    for row in rows {
        if row.len() != width {
            return Err(TpisError::ShapeError { expected: width, got: row.len() });
        }
        for (c, v) in row.iter().enumerate() {
            if let Some(v) = *v {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
    }
    for c in 0..width {
        if min[c] > max[c] {
            min[c] = 0.0;
            max[c] = 0.0;
        }
    }
    Ok(ScalerState { min, max })
}

pub fn apply_scaler(state: &ScalerState, row: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    if row.len() != state.width() {
        return Err(TpisError::ShapeError { expected: state.width(), got: row.len() });
    }
    Ok(row
        .iter()
        .enumerate()
        .map(|(c, v)| v.map(|x| state.scale(c, x)))
        .collect())
}

/// Quantile by linear interpolation between order statistics of `sorted`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Boxplot whiskers `(Q1 - 1.5 IQR, Q3 + 1.5 IQR)` over the observed values.
pub fn whiskers(column: &[Option<f64>]) -> Result<(f64, f64)> {
    let mut values: Vec<f64> = column.iter().flatten().copied().collect();
    if values.len() < 4 {
        return Err(TpisError::InsufficientData { needed: 4, got: values.len() });
    }
    values.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&values, 0.25);
    let q3 = quantile_sorted(&values, 0.75);
    let iqr = q3 - q1;
    Ok((q1 - 1.5 * iqr, q3 + 1.5 * iqr))
}

/// Row indices whose value lies strictly outside the boxplot whiskers.
pub fn flag_outliers_boxplot(column: &[Option<f64>]) -> Result<Vec<usize>> {
    let (lower, upper) = whiskers(column)?;
    Ok(column
        .iter()
        .enumerate()
        .filter_map(|(i, v)| match v {
            Some(x) if *x < lower || *x > upper => Some(i),
            _ => None,
        })
        .collect())
}

/// Columns whose missing fraction does not exceed `threshold`.
pub fn drop_high_missing(rows: &[Vec<Option<f64>>], threshold: f64) -> Result<Vec<usize>> {
    let width = rows.first().map(Vec::len).ok_or(TpisError::EmptyDataset)?;
    let n = rows.len() as f64;
    Ok((0..width)
        .filter(|&c| {
            let missing = rows.iter().filter(|r| r[c].is_none()).count() as f64;
            missing / n <= threshold
        })
        .collect())
}

/// Distance over the dimensions observed in both rows, scaled by the number
/// of shared dimensions. `None` when the rows share no observed dimension.
fn partial_distance(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let mut shared = 0usize;
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            shared += 1;
            sum += (x - y) * (x - y);
        }
    }
    (shared > 0).then(|| (sum / shared as f64).sqrt())
}

/// Fills `row`'s missing cells from the `k` nearest `donors` that observe the
/// column. Numeric cells take the neighbour mean; binary cells the neighbour
/// majority (ties and empty neighbourhoods fall back to 0). Numeric cells with
/// no usable donor take `fallback[col]`.
fn fill_row(
    row: &[Option<f64>],
    donors: &[(usize, &[Option<f64>])],
    kinds: &[ColumnKind],
    k: usize,
    fallback: &[f64],
) -> Vec<f64> {
    let mut distances: Vec<(f64, usize, &[Option<f64>])> = donors
        .iter()
        .filter_map(|(idx, d)| partial_distance(row, d).map(|dist| (dist, *idx, *d)))
        .collect();
    distances.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    row.iter()
        .enumerate()
        .map(|(c, v)| {
            if let Some(v) = v {
                return *v;
            }
            let neighbours: Vec<f64> = distances
                .iter()
                .filter_map(|(_, _, d)| d[c])
                .take(k)
                .collect();
            match kinds[c] {
                ColumnKind::Numeric if neighbours.is_empty() => fallback[c],
                ColumnKind::Numeric => neighbours.iter().sum::<f64>() / neighbours.len() as f64,
                ColumnKind::Binary => {
                    let ones = neighbours.iter().filter(|&&x| x >= 0.5).count();
                    if 2 * ones > neighbours.len() {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect()
}

fn column_means(rows: &[Vec<Option<f64>>], width: usize) -> Result<Vec<f64>> {
    (0..width)
        .map(|c| {
            let observed: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
            if observed.is_empty() {
                Err(TpisError::UnimputableColumn(c))
            } else {
                Ok(observed.iter().sum::<f64>() / observed.len() as f64)
            }
        })
        .collect()
}

/// K-NN imputation of every missing cell, with neighbours drawn from the
/// other rows of the same matrix. Observed cells are returned unchanged.
pub fn impute_knn(rows: &[Vec<Option<f64>>], kinds: &[ColumnKind], k: usize) -> Result<Vec<Vec<f64>>> {
    let width = rows.first().map(Vec::len).ok_or(TpisError::EmptyDataset)?;
    if kinds.len() != width {
        return Err(TpisError::ShapeError { expected: width, got: kinds.len() });
    }
    if k == 0 {
        return Err(TpisError::InvalidHyperparameter("imputation k must be >= 1".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(TpisError::ShapeError { expected: width, got: row.len() });
        }
        if row.iter().all(Option::is_none) {
            return Err(TpisError::EmptyRow(i));
        }
    }
    let fallback = column_means(rows, width)?;
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.iter().all(Option::is_some) {
                return row.iter().map(|v| v.unwrap()).collect();
            }
            let donors: Vec<(usize, &[Option<f64>])> = rows
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, r)| (j, r.as_slice()))
                .collect();
            fill_row(row, &donors, kinds, k, &fallback)
        })
        .collect())
}

/// Equal-size stratified training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub seed: u64,
}

/// Draws `train_per_class` records of each class without replacement; the
/// remaining records form the test set. Both partitions keep dataset order.
/// Unlabeled records always land in the test set.
pub fn balanced_split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let mut rng = rng::seeded(spec.seed);
    let mut in_train = vec![false; dataset.len()];
    for label in [Label::Pneumonia, Label::Tb] {
        let mut idx: Vec<usize> = dataset
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == Some(label))
            .map(|(i, _)| i)
            .collect();
        if idx.len() < spec.train_per_class {
            return Err(TpisError::InsufficientClassSize {
                label: label.code(),
                available: idx.len(),
                requested: spec.train_per_class,
            });
        }
        idx.shuffle(&mut rng);
        for &i in &idx[..spec.train_per_class] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| in_train[i]);
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// Options for [`BlockPreprocessor::fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessOptions {
    pub missing_threshold: f64,
    pub impute_k: usize,
    pub remove_outliers: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            missing_threshold: DEFAULT_MISSING_THRESHOLD,
            impute_k: DEFAULT_IMPUTE_K,
            remove_outliers: true,
        }
    }
}

/// Fitted preparation for one feature block (step-1 or step-2 columns).
///
/// Fitting runs, in order: column exclusion by missing rate, outlier
/// flagging on numeric columns, min-max scaling, and in-matrix K-NN
/// imputation. The imputed training rows are kept as donors for filling
/// gaps in records seen later. Outlier flagging applies to training data
/// only; later records rely on the scaler's clamping instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPreprocessor {
    pub width: usize,
    pub retained: Vec<usize>,
    pub binary: Vec<bool>,
    pub scaler: ScalerState,
    pub impute_k: usize,
    pub donors: Vec<Vec<f64>>,
}

impl BlockPreprocessor {
    /// Returns the fitted state and the prepared training matrix.
    pub fn fit(
        rows: &[Vec<Option<f64>>],
        kinds: &[ColumnKind],
        options: &PreprocessOptions,
    ) -> Result<(Self, Vec<Vec<f64>>)> {
        let width = rows.first().map(Vec::len).ok_or(TpisError::EmptyDataset)?;
        if kinds.len() != width {
            return Err(TpisError::ShapeError { expected: width, got: kinds.len() });
        }
        let retained = drop_high_missing(rows, options.missing_threshold)?;
        if retained.is_empty() {
            return Err(TpisError::EmptyDataset);
        }
        let kept_kinds: Vec<ColumnKind> = retained.iter().map(|&c| kinds[c]).collect();
        let mut kept: SparseMatrix = rows
            .iter()
            .map(|r| retained.iter().map(|&c| r[c]).collect())
            .collect();

        if options.remove_outliers {
            for (c, kind) in kept_kinds.iter().enumerate() {
                if *kind != ColumnKind::Numeric {
                    continue;
                }
                let column: Vec<Option<f64>> = kept.iter().map(|r| r[c]).collect();
                match flag_outliers_boxplot(&column) {
                    Ok(flagged) => {
                        for i in flagged {
                            kept[i][c] = None;
                        }
                    }
                    Err(TpisError::InsufficientData { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }

        let scaler = fit_scaler(&kept)?;
        let scaled: SparseMatrix = kept
            .iter()
            .map(|r| apply_scaler(&scaler, r))
            .collect::<Result<_>>()?;
        let prepared = impute_knn(&scaled, &kept_kinds, options.impute_k)?;
        let state = Self {
            width,
            retained,
            binary: kept_kinds.iter().map(|k| *k == ColumnKind::Binary).collect(),
            scaler,
            impute_k: options.impute_k,
            donors: prepared.clone(),
        };
        Ok((state, prepared))
    }

    pub fn output_width(&self) -> usize {
        self.retained.len()
    }

    /// Prepares one raw row (block width) for inference.
    pub fn transform(&self, row: &[Option<f64>]) -> Result<Vec<f64>> {
        if row.len() != self.width {
            return Err(TpisError::ShapeError { expected: self.width, got: row.len() });
        }
        let kept: Vec<Option<f64>> = self.retained.iter().map(|&c| row[c]).collect();
        let scaled = apply_scaler(&self.scaler, &kept)?;
        if scaled.iter().all(Option::is_some) {
            return Ok(scaled.into_iter().flatten().collect());
        }
        let kinds: Vec<ColumnKind> = self
            .binary
            .iter()
            .map(|&b| if b { ColumnKind::Binary } else { ColumnKind::Numeric })
            .collect();
        let donors: Vec<Vec<Option<f64>>> = self
            .donors
            .iter()
            .map(|d| d.iter().copied().map(Some).collect())
            .collect();
        let refs: Vec<(usize, &[Option<f64>])> =
            donors.iter().enumerate().map(|(i, d)| (i, d.as_slice())).collect();
        let fallback = self.donor_means();
        Ok(fill_row(&scaled, &refs, &kinds, self.impute_k, &fallback))
    }

    fn donor_means(&self) -> Vec<f64> {
        let n = self.donors.len().max(1) as f64;
        (0..self.output_width())
            .map(|c| self.donors.iter().map(|d| d[c]).sum::<f64>() / n)
            .collect()
    }
}
