//! Missing-value imputation: column-mean placeholders, chained-equation
//! imputation (MICE) and iterative random-forest imputation (missForest).
//!
//! All three leave observed cells untouched and are deterministic for a
//! given configuration. Columns are visited in ascending order of their
//! original missing count, ties by column position.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::matrix::FeatureMatrix;
use crate::panel::{self, IndicatorSpec, PanelDataset, PanelError, ValueFormat};
use crate::regressors::{self, BoostConfig, ForestConfig, RegressorError};
use crate::rng::Stream;
use crate::scalar::Scalar;

pub use crate::matrix::RowKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImputationError {
    #[error("column `{0}` has no observed values")]
    AllMissingColumn(String),
    #[error("least-squares design for column `{0}` is rank deficient")]
    SingularDesign(String),
    #[error("regressor failed on column `{column}`: {source}")]
    Regressor { column: String, source: RegressorError },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLearner {
    /// Ordinary least squares with intercept.
    Linear,
    Boost(BoostConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiceConfig {
    pub base_learner: BaseLearner,
    pub n_cycles: usize,
    pub seed: u64,
    /// Retry a rank-deficient least-squares fit with a small ridge instead
    /// of failing.
    pub ridge_fallback: bool,
}

impl Default for MiceConfig {
    fn default() -> Self {
        MiceConfig { base_learner: BaseLearner::Linear, n_cycles: 10, seed: 0, ridge_fallback: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestImputeConfig {
    pub forest: ForestConfig,
    pub max_iter: usize,
    /// Stop as soon as the normalized change grows and return the previous
    /// iterate.
    pub stop_on_increase: bool,
}

impl Default for ForestImputeConfig {
    fn default() -> Self {
        ForestImputeConfig { forest: ForestConfig::default(), max_iter: 10, stop_on_increase: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct ImputationResult<T> {
    pub completed: FeatureMatrix<T>,
    pub iterations_run: usize,
    /// Normalized change per iteration over the originally missing cells:
    /// `sum((x_t - x_{t-1})^2) / sum(x_t^2)`.
    pub changes: Vec<T>,
    /// Number of least-squares fits that needed the ridge fallback.
    pub ridge_activations: usize,
}

/// Dense working copy plus the original mask.
struct Workspace<T> {
    values: Array2<T>,
    originally_missing: Array2<bool>,
    order: Vec<usize>,
}

fn prepare<T: Scalar>(matrix: &FeatureMatrix<T>) -> Result<Workspace<T>, ImputationError> {
    let (n, p) = (matrix.nrows(), matrix.ncols());
    let mut values = matrix.values().to_owned();
    let mask = matrix.missing_mask().to_owned();
    let mut order: Vec<(usize, usize)> = Vec::new();
    for c in 0..p {
        let missing = matrix.column_missing_count(c);
        if missing == 0 {
            continue;
        }
        if missing == n {
            return Err(ImputationError::AllMissingColumn(matrix.column_keys()[c].clone()));
        }
        let observed = matrix.observed_column(c);
        let mean = observed.iter().copied().sum::<T>() / T::from_usize_lossy(observed.len());
        for r in 0..n {
            if mask[[r, c]] {
                values[[r, c]] = mean;
            }
        }
        order.push((missing, c));
    }
    order.sort();
    Ok(Workspace { values, originally_missing: mask, order: order.into_iter().map(|(_, c)| c).collect() })
}

fn finish<T: Scalar>(matrix: &FeatureMatrix<T>, values: Array2<T>) -> FeatureMatrix<T> {
    let mask = Array2::from_elem(values.dim(), false);
    matrix.with_values(values, mask)
}

fn normalized_change<T: Scalar>(before: &Array2<T>, after: &Array2<T>, mask: &Array2<bool>) -> T {
    let mut num = T::zero();
    let mut den = T::zero();
    for ((idx, &m), (&a, &b)) in mask.indexed_iter().zip(after.iter().zip(before.iter())) {
        let _ = idx;
        if m {
            num += (a - b) * (a - b);
            den += a * a;
        }
    }
    if den > T::zero() {
        num / den
    } else if num == T::zero() {
        T::zero()
    } else {
        T::infinity()
    }
}

fn rows_where(mask: &Array2<bool>, col: usize, missing: bool) -> Vec<usize> {
    (0..mask.nrows()).filter(|&r| mask[[r, col]] == missing).collect()
}

fn design<T: Scalar>(values: &Array2<T>, rows: &[usize], target: usize) -> Array2<T> {
    let p = values.ncols();
    let mut d = Array2::zeros((rows.len(), p - 1));
    for (i, &r) in rows.iter().enumerate() {
        let mut k = 0;
        for c in 0..p {
            if c != target {
                d[[i, k]] = values[[r, c]];
                k += 1;
            }
        }
    }
    d
}

/// Replaces every missing cell with its column's observed mean.
pub fn mean_impute<T: Scalar>(matrix: &FeatureMatrix<T>) -> Result<ImputationResult<T>, ImputationError> {
    let ws = prepare(matrix)?;
    Ok(ImputationResult {
        completed: finish(matrix, ws.values),
        iterations_run: 1,
        changes: Vec::new(),
        ridge_activations: 0,
    })
}

/// Least-squares fit with intercept on centered predictors.
struct LinearFit<T> {
    x_mean: Array1<T>,
    y_mean: T,
    coef: Array1<T>,
}

impl<T: Scalar> LinearFit<T> {
    fn predict(&self, x: ArrayView2<'_, T>) -> Array1<T> {
        let centered = &x - &self.x_mean;
        centered.dot(&self.coef) + self.y_mean
    }
}

/// Returns the fit and whether the ridge fallback was used.
fn fit_linear<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: &Array1<T>,
    allow_ridge: bool,
    column: &str,
) -> Result<(LinearFit<T>, bool), ImputationError> {
    let n = T::from_usize_lossy(x.nrows());
    let x_mean = x.sum_axis(ndarray::Axis(0)) / n;
    let y_mean = y.sum() / n;
    let xc = &x - &x_mean;
    let yc = y - y_mean;
    let gram = xc.t().dot(&xc);
    let rhs = xc.t().dot(&yc).insert_axis(ndarray::Axis(1));
    let p = gram.nrows();
    if let Some(l) = linalg::cholesky(gram.view()) {
        let coef = linalg::cholesky_solve(&l, rhs.view()).column(0).to_owned();
        return Ok((LinearFit { x_mean, y_mean, coef }, false));
    }
    if !allow_ridge {
        return Err(ImputationError::SingularDesign(column.to_string()));
    }
    // Ridge scaled to the average diagonal so it is negligible relative to
    // the data regardless of units.
    let scale = (0..p).map(|i| gram[[i, i]]).sum::<T>() / T::from_usize_lossy(p.max(1));
    let ridge = T::lit(linalg::RIDGE) * scale.max(T::one());
    let mut ridged = gram.clone();
    for i in 0..p {
        ridged[[i, i]] += ridge;
    }
    let l = linalg::cholesky(ridged.view()).ok_or_else(|| ImputationError::SingularDesign(column.to_string()))?;
    let coef = linalg::cholesky_solve(&l, rhs.view()).column(0).to_owned();
    Ok((LinearFit { x_mean, y_mean, coef }, true))
}

/// Chained-equation imputation.
///
/// Missing cells start at column means. Each cycle visits every incomplete
/// column, regresses its observed values on all other columns (current
/// imputations included) and overwrites its missing cells with the
/// predictions. `n_cycles = 0` returns the mean placeholders.
pub fn mice_impute<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    config: &MiceConfig,
) -> Result<ImputationResult<T>, ImputationError> {
    let Workspace { mut values, originally_missing, order } = prepare(matrix)?;
    let p = matrix.ncols();
    let mut changes = Vec::with_capacity(config.n_cycles);
    let mut ridge_activations = 0;
    if p < 2 {
        return Ok(ImputationResult {
            completed: finish(matrix, values),
            iterations_run: 0,
            changes,
            ridge_activations,
        });
    }
    for _cycle in 0..config.n_cycles {
        let before = values.clone();
        for &col in &order {
            let name = &matrix.column_keys()[col];
            let train_rows = rows_where(&originally_missing, col, false);
            let fill_rows = rows_where(&originally_missing, col, true);
            let x_train = design(&values, &train_rows, col);
            let y_train = Array1::from_iter(train_rows.iter().map(|&r| values[[r, col]]));
            let x_fill = design(&values, &fill_rows, col);
            let predictions = match &config.base_learner {
                BaseLearner::Linear => {
                    let (fit, ridged) = fit_linear(x_train.view(), &y_train, config.ridge_fallback, name)?;
                    ridge_activations += ridged as usize;
                    fit.predict(x_fill.view())
                }
                BaseLearner::Boost(boost) => {
                    let mut cfg = boost.clone();
                    cfg.seed = Stream::derive(config.seed, col as u64).next_u64();
                    let model = regressors::fit_boost(x_train.view(), y_train.view(), &cfg)
                        .map_err(|source| ImputationError::Regressor { column: name.clone(), source })?;
                    model
                        .predict(x_fill.view())
                        .map_err(|source| ImputationError::Regressor { column: name.clone(), source })?
                }
            };
            for (&r, v) in fill_rows.iter().zip(predictions.iter()) {
                values[[r, col]] = *v;
            }
        }
        changes.push(normalized_change(&before, &values, &originally_missing));
    }
    Ok(ImputationResult {
        completed: finish(matrix, values),
        iterations_run: config.n_cycles,
        changes,
        ridge_activations,
    })
}

/// Iterative random-forest imputation.
///
/// Starts from column means; every iteration refits a forest per
/// incomplete column on its observed rows and re-predicts its missing
/// cells. Stops at `max_iter`, when the iterate stops moving, or (with
/// `stop_on_increase`) as soon as the normalized change exceeds the
/// previous one, in which case the previous iterate is returned.
pub fn forest_impute<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    config: &ForestImputeConfig,
) -> Result<ImputationResult<T>, ImputationError> {
    if config.max_iter == 0 {
        return Err(ImputationError::InvalidConfig("max_iter must be >= 1".into()));
    }
    let Workspace { mut values, originally_missing, order } = prepare(matrix)?;
    let p = matrix.ncols();
    let mut changes: Vec<T> = Vec::new();
    if p < 2 || order.is_empty() {
        return Ok(ImputationResult {
            completed: finish(matrix, values),
            iterations_run: 0,
            changes,
            ridge_activations: 0,
        });
    }
    let mut iterations_run = 0;
    for iter in 1..=config.max_iter {
        iterations_run = iter;
        let before = values.clone();
        for &col in &order {
            let name = &matrix.column_keys()[col];
            let train_rows = rows_where(&originally_missing, col, false);
            let fill_rows = rows_where(&originally_missing, col, true);
            let x_train = design(&values, &train_rows, col);
            let y_train = Array1::from_iter(train_rows.iter().map(|&r| values[[r, col]]));
            let x_fill = design(&values, &fill_rows, col);
            let mut forest = config.forest.clone();
            forest.seed = Stream::derive(config.forest.seed, col as u64).next_u64();
            forest.mtry = Some(forest.resolved_mtry(p - 1).min(p - 1));
            let model = regressors::fit_forest(x_train.view(), y_train.view(), &forest)
                .map_err(|source| ImputationError::Regressor { column: name.clone(), source })?;
            let predictions = model
                .predict(x_fill.view())
                .map_err(|source| ImputationError::Regressor { column: name.clone(), source })?;
            for (&r, v) in fill_rows.iter().zip(predictions.iter()) {
                values[[r, col]] = *v;
            }
        }
        let delta = normalized_change(&before, &values, &originally_missing);
        let increased = changes.last().is_some_and(|&prev| delta > prev);
        changes.push(delta);
        if config.stop_on_increase && increased {
            values = before;
            break;
        }
        if delta == T::zero() {
            break;
        }
    }
    Ok(ImputationResult { completed: finish(matrix, values), iterations_run, changes, ridge_activations: 0 })
}

/// Writes a completed (or partially completed) matrix as long CSV, the same
/// schema the panel loader reads.
pub fn write_completed_csv<W: Write>(
    matrix: &FeatureMatrix<f64>,
    schema: &[IndicatorSpec],
    out: W,
    format: ValueFormat,
) -> Result<(), PanelError> {
    let dataset = PanelDataset::from_matrix(matrix, schema)?;
    panel::write_long_csv(&dataset, out, format)
}
