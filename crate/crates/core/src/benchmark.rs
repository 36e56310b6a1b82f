//! Imputation benchmarking: MCAR masking of observed cells, held-out
//! RMSE/MAE scoring, seeded replicated comparisons across imputers, and
//! Gaussian kernel density curves for original versus imputed values.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imputation::{self, ForestImputeConfig, ImputationError, MiceConfig};
use crate::matrix::FeatureMatrix;
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::stats;

pub const BENCHMARK_HEADER: &str = "method,attribute,rmse_mean,rmse_std,mae_mean,mae_std,n_runs";
pub const KDE_HEADER: &str = "variable,label,grid_x,density";
pub const DEFAULT_GRID_POINTS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchmarkError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("grid is not strictly ascending")]
    NonAscendingGrid,
    #[error("bandwidth must be positive and finite")]
    InvalidBandwidth,
    #[error("n_runs must be at least 1")]
    NoRuns,
    #[error("method `{method}` failed on run seed {seed}: {source}")]
    Imputer { method: String, seed: u64, source: ImputationError },
    #[error("write failed: {0}")]
    Write(String),
}

/// Cells removed by [`mask_mcar`] with their true values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MaskPlan<T> {
    pub fraction: f64,
    pub seed: u64,
    pub target_columns: Vec<String>,
    /// `(row, column, true value)`, grouped by target column in the order
    /// given, rows ascending within a column.
    pub held_out: Vec<(usize, usize, T)>,
}

impl<T: Scalar> MaskPlan<T> {
    /// Puts the held-out values back.
    pub fn restore(&self, masked: &FeatureMatrix<T>) -> FeatureMatrix<T> {
        let mut out = masked.clone();
        for &(r, c, v) in &self.held_out {
            out.set(r, c, v);
        }
        out
    }

    pub fn held_out_in_column(&self, col: usize) -> impl Iterator<Item = &(usize, usize, T)> {
        self.held_out.iter().filter(move |h| h.1 == col)
    }
}

/// Masks `floor(fraction * observed)` observed cells in each target column,
/// sampled uniformly without replacement. Column `i` of `columns` draws from
/// `Stream::derive(seed, i)`.
pub fn mask_mcar<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    fraction: f64,
    columns: &[String],
    seed: u64,
) -> Result<(FeatureMatrix<T>, MaskPlan<T>), BenchmarkError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(BenchmarkError::FractionOutOfRange(fraction));
    }
    let indices = columns
        .iter()
        .map(|name| matrix.column_index(name).ok_or_else(|| BenchmarkError::UnknownColumn(name.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut masked = matrix.clone();
    let mut held_out = Vec::new();
    for (i, &col) in indices.iter().enumerate() {
        let eligible: Vec<usize> = (0..matrix.nrows()).filter(|&r| !matrix.is_missing(r, col)).collect();
        let count = (fraction * eligible.len() as f64 + 1e-9).floor() as usize;
        let count = count.min(eligible.len());
        let mut picks: Vec<usize> = Stream::derive(seed, i as u64)
            .sample_without_replacement(eligible.len(), count)
            .into_iter()
            .map(|k| eligible[k])
            .collect();
        picks.sort_unstable();
        for r in picks {
            held_out.push((r, col, matrix.values()[[r, col]]));
            masked.clear(r, col);
        }
    }
    let plan = MaskPlan { fraction, seed, target_columns: columns.to_vec(), held_out };
    Ok((masked, plan))
}

/// `(rmse, mae)` of predictions against truth.
pub fn score<T: Scalar>(predictions: &[T], truth: &[T]) -> Result<(T, T), BenchmarkError> {
    if predictions.len() != truth.len() {
        return Err(BenchmarkError::LengthMismatch { left: predictions.len(), right: truth.len() });
    }
    if predictions.is_empty() {
        return Err(BenchmarkError::EmptyInput);
    }
    let n = T::from_usize_lossy(predictions.len());
    let mut se = T::zero();
    let mut ae = T::zero();
    for (&p, &t) in predictions.iter().zip(truth) {
        let d = p - t;
        se += d * d;
        ae += d.abs();
    }
    Ok(((se / n).sqrt(), ae / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Imputer {
    Mean,
    Mice(MiceConfig),
    Forest(ForestImputeConfig),
}

impl Imputer {
    /// Imputes with every seed in the configuration replaced by `seed`.
    pub fn impute<T: Scalar>(&self, matrix: &FeatureMatrix<T>, seed: u64) -> Result<FeatureMatrix<T>, ImputationError> {
        let result = match self {
            Imputer::Mean => imputation::mean_impute(matrix)?,
            Imputer::Mice(cfg) => {
                let mut cfg = cfg.clone();
                cfg.seed = seed;
                imputation::mice_impute(matrix, &cfg)?
            }
            Imputer::Forest(cfg) => {
                let mut cfg = cfg.clone();
                cfg.forest.seed = seed;
                imputation::forest_impute(matrix, &cfg)?
            }
        };
        Ok(result.completed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub label: String,
    pub imputer: Imputer,
}

impl Method {
    pub fn new(label: impl Into<String>, imputer: Imputer) -> Self {
        Method { label: label.into(), imputer }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunScore {
    pub run: usize,
    pub seed: u64,
    pub method: String,
    pub attribute: String,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeSummary {
    pub method: String,
    pub attribute: String,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub n_runs: usize,
    pub master_seed: u64,
    pub fraction: f64,
    /// Method-major, then attribute in the requested column order.
    pub summaries: Vec<AttributeSummary>,
    /// Every run's scores, ordered by run, method, attribute.
    pub runs: Vec<RunScore>,
}

impl EvaluationReport {
    pub fn summary(&self, method: &str, attribute: &str) -> Option<&AttributeSummary> {
        self.summaries.iter().find(|s| s.method == method && s.attribute == attribute)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), BenchmarkError> {
        let mut text = String::from(BENCHMARK_HEADER);
        text.push('\n');
        for s in &self.summaries {
            text.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{}\n",
                s.method, s.attribute, s.rmse_mean, s.rmse_std, s.mae_mean, s.mae_std, self.n_runs
            ));
        }
        out.write_all(text.as_bytes()).map_err(|e| BenchmarkError::Write(e.to_string()))
    }
}

fn one_run<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    methods: &[Method],
    fraction: f64,
    columns: &[String],
    run: usize,
    seed: u64,
) -> Result<Vec<RunScore>, BenchmarkError> {
    let (masked, plan) = mask_mcar(matrix, fraction, columns, seed)?;
    let mut scores = Vec::with_capacity(methods.len() * columns.len());
    for method in methods {
        let completed = method.imputer.impute(&masked, seed).map_err(|source| BenchmarkError::Imputer {
            method: method.label.clone(),
            seed,
            source,
        })?;
        for name in columns {
            let col = matrix.column_index(name).expect("validated by mask_mcar");
            let (pred, truth): (Vec<T>, Vec<T>) =
                plan.held_out_in_column(col).map(|&(r, c, v)| (completed.values()[[r, c]], v)).unzip();
            let (rmse, mae) = if pred.is_empty() { (T::zero(), T::zero()) } else { score(&pred, &truth)? };
            scores.push(RunScore {
                run,
                seed,
                method: method.label.clone(),
                attribute: name.clone(),
                rmse: rmse.as_f64(),
                mae: mae.as_f64(),
            });
        }
    }
    Ok(scores)
}

/// Replicated masking benchmark. Run `r` masks and imputes with seed
/// `master_seed + r`; runs execute in parallel and are aggregated in run
/// order, so the report does not depend on scheduling.
pub fn run_benchmark<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    methods: &[Method],
    fraction: f64,
    columns: &[String],
    n_runs: usize,
    master_seed: u64,
) -> Result<EvaluationReport, BenchmarkError> {
    if n_runs == 0 {
        return Err(BenchmarkError::NoRuns);
    }
    // Surface argument errors before spawning work.
    mask_mcar(matrix, fraction, columns, master_seed)?;
    let per_run: Vec<Vec<RunScore>> = (0..n_runs)
        .into_par_iter()
        .map(|r| one_run(matrix, methods, fraction, columns, r, master_seed.wrapping_add(r as u64)))
        .collect::<Result<_, _>>()?;
    let runs: Vec<RunScore> = per_run.into_iter().flatten().collect();

    let mut summaries = Vec::new();
    for method in methods {
        for name in columns {
            let picked: Vec<&RunScore> =
                runs.iter().filter(|s| s.method == method.label && &s.attribute == name).collect();
            let rmse: Vec<f64> = picked.iter().map(|s| s.rmse).collect();
            let mae: Vec<f64> = picked.iter().map(|s| s.mae).collect();
            summaries.push(AttributeSummary {
                method: method.label.clone(),
                attribute: name.clone(),
                rmse_mean: stats::mean(&rmse).unwrap_or(0.0),
                rmse_std: stats::sample_std(&rmse).unwrap_or(0.0),
                mae_mean: stats::mean(&mae).unwrap_or(0.0),
                mae_std: stats::sample_std(&mae).unwrap_or(0.0),
            });
        }
    }
    Ok(EvaluationReport { n_runs, master_seed, fraction, summaries, runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveLabel {
    Original,
    Imputed,
}

impl CurveLabel {
    pub fn key(self) -> &'static str {
        match self {
            CurveLabel::Original => "Original",
            CurveLabel::Imputed => "Imputed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct KdeEstimate<T> {
    pub grid: Vec<T>,
    pub density: Vec<T>,
    pub bandwidth: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct DensityCurve<T> {
    pub variable: String,
    pub label: CurveLabel,
    pub estimate: KdeEstimate<T>,
}

/// Silverman's rule `0.9 min(std, IQR / 1.34) n^(-1/5)`; uses the std alone
/// when the IQR is zero, and 1 when both vanish.
pub fn silverman_bandwidth<T: Scalar>(values: &[T]) -> Result<T, BenchmarkError> {
    let std = stats::sample_std(values).ok_or(BenchmarkError::EmptyInput)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let iqr = stats::quantile_sorted(&sorted, 0.75).unwrap() - stats::quantile_sorted(&sorted, 0.25).unwrap();
    let spread = match (std > T::zero(), iqr > T::zero()) {
        (true, true) => std.min(iqr / T::lit(1.34)),
        (true, false) => std,
        (false, true) => iqr / T::lit(1.34),
        (false, false) => return Ok(T::one()),
    };
    let n = T::from_usize_lossy(values.len());
    Ok(T::lit(0.9) * spread * n.powf(T::lit(-0.2)))
}

/// Gaussian KDE `(1 / (n h)) sum phi((g - x_i) / h)` evaluated on `grid`.
pub fn gaussian_kde<T: Scalar>(
    values: &[T],
    grid: &[T],
    bandwidth: Option<T>,
) -> Result<KdeEstimate<T>, BenchmarkError> {
    if values.is_empty() || grid.is_empty() {
        return Err(BenchmarkError::EmptyInput);
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(BenchmarkError::NonAscendingGrid);
    }
    let h = match bandwidth {
        Some(h) if h > T::zero() && h.is_finite() => h,
        Some(_) => return Err(BenchmarkError::InvalidBandwidth),
        None => silverman_bandwidth(values)?,
    };
    let norm = T::one() / (T::from_usize_lossy(values.len()) * h * T::lit((2.0 * PI).sqrt()));
    let half = T::lit(0.5);
    let density = grid
        .iter()
        .map(|&g| {
            let s: T = values
                .iter()
                .map(|&x| {
                    let u = (g - x) / h;
                    (-half * u * u).exp()
                })
                .sum();
            s * norm
        })
        .collect();
    Ok(KdeEstimate { grid: grid.to_vec(), density, bandwidth: h })
}

/// `points` evenly spaced values over `[lo, hi]`; a single point when the
/// interval is empty.
pub fn linear_grid<T: Scalar>(lo: T, hi: T, points: usize) -> Vec<T> {
    if points <= 1 || !(hi > lo) {
        return vec![lo];
    }
    let step = (hi - lo) / T::from_usize_lossy(points - 1);
    let mut grid: Vec<T> = (0..points).map(|i| lo + step * T::from_usize_lossy(i)).collect();
    grid[points - 1] = hi;
    grid
}

fn extent<T: Scalar>(values: &[T]) -> (T, T) {
    values.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Original and imputed densities of one variable on a shared grid of
/// [`DEFAULT_GRID_POINTS`] points spanning both samples plus three
/// bandwidths either side.
pub fn compare_densities<T: Scalar>(
    variable: &str,
    original: &[T],
    imputed: &[T],
) -> Result<[DensityCurve<T>; 2], BenchmarkError> {
    let h_orig = silverman_bandwidth(original)?;
    let h_imp = silverman_bandwidth(imputed)?;
    let (lo_a, hi_a) = extent(original);
    let (lo_b, hi_b) = extent(imputed);
    let pad = T::lit(3.0) * h_orig.max(h_imp);
    let grid = linear_grid(lo_a.min(lo_b) - pad, hi_a.max(hi_b) + pad, DEFAULT_GRID_POINTS);
    let make = |values: &[T], h: T, label| -> Result<DensityCurve<T>, BenchmarkError> {
        Ok(DensityCurve { variable: variable.to_string(), label, estimate: gaussian_kde(values, &grid, Some(h))? })
    };
    Ok([make(original, h_orig, CurveLabel::Original)?, make(imputed, h_imp, CurveLabel::Imputed)?])
}

pub fn write_kde_csv<T: Scalar, W: Write>(curves: &[DensityCurve<T>], mut out: W) -> Result<(), BenchmarkError> {
    let mut text = String::from(KDE_HEADER);
    text.push('\n');
    for c in curves {
        for (x, d) in c.estimate.grid.iter().zip(&c.estimate.density) {
            text.push_str(&format!("{},{},{:.6},{:.6}\n", c.variable, c.label.key(), x.as_f64(), d.as_f64()));
        }
    }
    out.write_all(text.as_bytes()).map_err(|e| BenchmarkError::Write(e.to_string()))
}
