//! Dimension reduction of an indicator block: z-scoring, correlation PCA,
//! Kaiser-Meyer-Olkin adequacy, principal-component factor extraction with
//! varimax rotation, and regression-method factor scores.
//!
//! Component and factor signs are fixed so that the entry of largest
//! magnitude in each column is positive (first such entry on ties).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};
use crate::matrix::FeatureMatrix;
use crate::scalar::Scalar;

pub const VARIMAX_MAX_ITER: usize = 1000;
pub const VARIMAX_TOL: f64 = 1e-8;

/// Both KMO sums below this count as degenerate.
const KMO_DEGENERATE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("matrix has missing cells")]
    MissingValues,
    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("need at least {needed} variables, found {found}")]
    TooFewVariables { needed: usize, found: usize },
    #[error("requested {k} components/factors from {p} variables")]
    InvalidComponentCount { k: usize, p: usize },
    #[error("eigendecomposition failed: {0}")]
    RankDeficient(LinalgError),
    #[error("correlation matrix is singular even after ridge regularization")]
    SingularCorrelation,
    #[error("loadings contain non-finite values")]
    NonFiniteLoadings,
    #[error("model was fitted on different variables")]
    VariableMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone)]
pub struct Standardized<T> {
    pub matrix: FeatureMatrix<T>,
    /// Constant columns removed under `drop_constant`.
    pub dropped: Vec<String>,
}

fn ensure_complete<T: Scalar>(m: &FeatureMatrix<T>) -> Result<(), ReductionError> {
    if m.is_complete() {
        Ok(())
    } else {
        Err(ReductionError::MissingValues)
    }
}

fn centered_column<T: Scalar>(col: ndarray::ArrayView1<'_, T>) -> (T, Array1<T>) {
    let n = T::from_usize_lossy(col.len());
    let mean = col.sum() / n;
    let mut c = col.mapv(|v| v - mean);
    // Second pass removes the rounding residue of the first.
    let residue = c.sum() / n;
    c.mapv_inplace(|v| v - residue);
    (mean + residue, c)
}

/// Population standard deviation counted as zero when it is within a few
/// ulps of the column's magnitude.
fn is_degenerate<T: Scalar>(std: T, mean: T) -> bool {
    std == T::zero() || std <= T::epsilon() * T::lit(16.0) * mean.abs()
}

/// Centers each column and scales it to unit population standard deviation.
pub fn zscore<T: Scalar>(matrix: &FeatureMatrix<T>, drop_constant: bool) -> Result<Standardized<T>, ReductionError> {
    ensure_complete(matrix)?;
    if matrix.nrows() == 0 {
        return Err(ReductionError::TooFewRows { needed: 1, found: 0 });
    }
    let n = T::from_usize_lossy(matrix.nrows());
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    let mut columns = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for c in 0..matrix.ncols() {
        let (mean, centered) = centered_column(matrix.column(c));
        let std = (centered.iter().map(|&v| v * v).sum::<T>() / n).sqrt();
        if is_degenerate(std, mean) {
            if drop_constant {
                dropped.push(matrix.column_keys()[c].clone());
                continue;
            }
            return Err(ReductionError::ZeroVariance(matrix.column_keys()[c].clone()));
        }
        keep.push(c);
        columns.push(centered / std);
        means.push(mean);
        stds.push(std);
    }
    let base = matrix.select_columns(&keep);
    let mut values = Array2::zeros((matrix.nrows(), keep.len()));
    for (j, col) in columns.into_iter().enumerate() {
        values.column_mut(j).assign(&col);
    }
    let mask = Array2::from_elem(values.dim(), false);
    let mut out = base.with_values(values, mask);
    out.set_moments(means, stds);
    Ok(Standardized { matrix: out, dropped })
}

/// Pearson correlation matrix of a complete matrix; unit diagonal.
pub fn correlation_matrix<T: Scalar>(matrix: &FeatureMatrix<T>) -> Result<Array2<T>, ReductionError> {
    ensure_complete(matrix)?;
    let (n, p) = (matrix.nrows(), matrix.ncols());
    if n < 2 {
        return Err(ReductionError::TooFewRows { needed: 2, found: n });
    }
    let mut centered = Array2::zeros((n, p));
    let mut norms = Vec::with_capacity(p);
    for c in 0..p {
        let (mean, col) = centered_column(matrix.column(c));
        let norm = col.iter().map(|&v| v * v).sum::<T>().sqrt();
        if is_degenerate(norm / T::from_usize_lossy(n).sqrt(), mean) {
            return Err(ReductionError::ZeroVariance(matrix.column_keys()[c].clone()));
        }
        centered.column_mut(c).assign(&col);
        norms.push(norm);
    }
    let mut r = centered.t().dot(&centered);
    for i in 0..p {
        for j in 0..p {
            r[[i, j]] =
                if i == j { T::one() } else { (r[[i, j]] / (norms[i] * norms[j])).max(-T::one()).min(T::one()) };
        }
    }
    // Exact symmetry.
    for i in 0..p {
        for j in (i + 1)..p {
            let v = r[[i, j]];
            r[[j, i]] = v;
        }
    }
    Ok(r)
}

/// Flips each column so its largest-magnitude entry is positive.
fn orient_columns<T: Scalar>(m: &mut Array2<T>, mut also: Option<&mut Array2<T>>) {
    for j in 0..m.ncols() {
        let mut best = 0;
        for i in 0..m.nrows() {
            if m[[i, j]].abs() > m[[best, j]].abs() {
                best = i;
            }
        }
        if m.nrows() > 0 && m[[best, j]] < T::zero() {
            m.column_mut(j).mapv_inplace(|v| -v);
            if let Some(other) = also.as_deref_mut() {
                other.column_mut(j).mapv_inplace(|v| -v);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PcaResult<T> {
    /// All `p` eigenvalues of the correlation matrix, descending.
    pub eigenvalues: Array1<T>,
    /// Share of total variance per eigenvalue; sums to one.
    pub explained_ratio: Array1<T>,
    /// `p x k`, orthonormal columns.
    pub components: Array2<T>,
    /// `n x k` projections of the standardized rows. Absent when fitted
    /// from a correlation matrix.
    pub scores: Option<Array2<T>>,
}

fn eigen<T: Scalar>(r: ArrayView2<'_, T>) -> Result<linalg::SymmetricEigen<T>, ReductionError> {
    let mut e =
        linalg::symmetric_eigen(r, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS).map_err(ReductionError::RankDeficient)?;
    e.values.mapv_inplace(|v| v.max(T::zero()));
    Ok(e)
}

/// PCA straight from a correlation matrix.
pub fn pca_from_correlation<T: Scalar>(r: ArrayView2<'_, T>, k: usize) -> Result<PcaResult<T>, ReductionError> {
    let p = r.nrows();
    if k == 0 || k > p {
        return Err(ReductionError::InvalidComponentCount { k, p });
    }
    let e = eigen(r)?;
    let total: T = e.values.sum();
    let explained_ratio = if total > T::zero() { e.values.mapv(|v| v / total) } else { Array1::zeros(p) };
    let mut components = e.vectors.slice(ndarray::s![.., ..k]).to_owned();
    orient_columns(&mut components, None);
    Ok(PcaResult { eigenvalues: e.values, explained_ratio, components, scores: None })
}

/// PCA of a standardized matrix via its correlation matrix.
pub fn pca<T: Scalar>(z: &FeatureMatrix<T>, k: usize) -> Result<PcaResult<T>, ReductionError> {
    let r = correlation_matrix(z)?;
    let mut out = pca_from_correlation(r.view(), k)?;
    out.scores = Some(z.values().dot(&out.components));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Inadequate,
    Mediocre,
    Adequate,
    Excellent,
}

impl Verdict {
    pub fn from_kmo(kmo: f64) -> Verdict {
        if kmo < 0.5 {
            Verdict::Inadequate
        } else if kmo < 0.6 {
            Verdict::Mediocre
        } else if kmo < 0.8 {
            Verdict::Adequate
        } else {
            Verdict::Excellent
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Inadequate => "Inadequate",
            Verdict::Mediocre => "Mediocre",
            Verdict::Adequate => "Adequate",
            Verdict::Excellent => "Excellent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AdequacyReport<T> {
    pub kmo: T,
    /// Per-variable measure of sampling adequacy.
    pub msa: Vec<T>,
    pub verdict: Verdict,
    /// Whether the correlation matrix needed a diagonal ridge to invert.
    pub ridge_applied: bool,
}

fn ratio<T: Scalar>(r2: T, q2: T) -> T {
    let floor = T::lit(KMO_DEGENERATE);
    if r2 < floor && q2 < floor {
        T::zero()
    } else {
        r2 / (r2 + q2)
    }
}

/// KMO from a correlation matrix using anti-image partial correlations
/// `q_ij = -S_ij / sqrt(S_ii S_jj)` with `S = R^-1`.
pub fn kmo_from_correlation<T: Scalar>(r: ArrayView2<'_, T>) -> Result<AdequacyReport<T>, ReductionError> {
    let p = r.nrows();
    if p < 2 {
        return Err(ReductionError::TooFewVariables { needed: 2, found: p });
    }
    let (s, ridge_applied) = linalg::spd_inverse_with_ridge(r).map_err(|_| ReductionError::SingularCorrelation)?;
    let mut r2_total = T::zero();
    let mut q2_total = T::zero();
    let mut msa = Vec::with_capacity(p);
    for i in 0..p {
        let mut r2 = T::zero();
        let mut q2 = T::zero();
        for j in 0..p {
            if i == j {
                continue;
            }
            let q = -s[[i, j]] / (s[[i, i]] * s[[j, j]]).sqrt();
            r2 += r[[i, j]] * r[[i, j]];
            q2 += q * q;
        }
        msa.push(ratio(r2, q2));
        r2_total += r2;
        q2_total += q2;
    }
    let kmo = ratio(r2_total, q2_total);
    Ok(AdequacyReport { kmo, msa, verdict: Verdict::from_kmo(kmo.as_f64()), ridge_applied })
}

pub fn kmo<T: Scalar>(z: &FeatureMatrix<T>) -> Result<AdequacyReport<T>, ReductionError> {
    let r = correlation_matrix(z)?;
    kmo_from_correlation(r.view())
}

/// Varimax criterion `sum_j [mean_i(l_ij^4) - mean_i(l_ij^2)^2]`, optionally
/// on Kaiser row-normalized loadings.
pub fn varimax_criterion<T: Scalar>(loadings: ArrayView2<'_, T>, kaiser: bool) -> T {
    let l = if kaiser { kaiser_normalize(loadings).0 } else { loadings.to_owned() };
    let p = T::from_usize_lossy(l.nrows().max(1));
    let mut total = T::zero();
    for col in l.columns() {
        let m2 = col.iter().map(|&v| v * v).sum::<T>() / p;
        let m4 = col.iter().map(|&v| v * v * v * v).sum::<T>() / p;
        total += m4 - m2 * m2;
    }
    total
}

fn kaiser_normalize<T: Scalar>(loadings: ArrayView2<'_, T>) -> (Array2<T>, Vec<T>) {
    let mut l = loadings.to_owned();
    let mut norms = Vec::with_capacity(l.nrows());
    for mut row in l.rows_mut() {
        let h = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if h > T::zero() {
            row.mapv_inplace(|v| v / h);
        }
        norms.push(h);
    }
    (l, norms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarimaxResult<T> {
    /// `loadings x rotation`.
    pub rotated: Array2<T>,
    pub rotation: Array2<T>,
    pub sweeps: usize,
    /// Criterion on the Kaiser-normalized rotated loadings.
    pub criterion: T,
}

/// Orthogonal varimax rotation by pairwise planar rotations on
/// Kaiser-normalized loadings. Sweeps over all factor pairs until a sweep
/// improves the criterion by less than `tol`, or `max_iter` sweeps ran.
pub fn varimax<T: Scalar>(
    loadings: ArrayView2<'_, T>,
    max_iter: usize,
    tol: f64,
) -> Result<VarimaxResult<T>, ReductionError> {
    let (p, k) = loadings.dim();
    if k < 2 {
        return Err(ReductionError::InvalidArgument(format!("varimax needs at least 2 factors, got {k}")));
    }
    if !(tol > 0.0) {
        return Err(ReductionError::InvalidArgument("tolerance must be positive".into()));
    }
    if loadings.iter().any(|v| !v.is_finite()) {
        return Err(ReductionError::NonFiniteLoadings);
    }
    let (mut x, _) = kaiser_normalize(loadings);
    let mut rotation = Array2::<T>::eye(k);
    let p_t = T::from_usize_lossy(p.max(1));
    let two = T::lit(2.0);
    let quarter = T::lit(0.25);
    let tol_t = T::lit(tol);
    let mut criterion = varimax_criterion(x.view(), false);
    let mut sweeps = 0;
    while sweeps < max_iter {
        sweeps += 1;
        for a in 0..k {
            for b in (a + 1)..k {
                let (mut sa, mut sb, mut sc, mut sd) = (T::zero(), T::zero(), T::zero(), T::zero());
                for i in 0..p {
                    let (xa, xb) = (x[[i, a]], x[[i, b]]);
                    let u = xa * xa - xb * xb;
                    let v = two * xa * xb;
                    sa += u;
                    sb += v;
                    sc += u * u - v * v;
                    sd += two * u * v;
                }
                let num = sd - two * sa * sb / p_t;
                let den = sc - (sa * sa - sb * sb) / p_t;
                let phi = num.atan2(den) * quarter;
                if phi == T::zero() {
                    continue;
                }
                let (sin, cos) = phi.sin_cos();
                for i in 0..p {
                    let (xa, xb) = (x[[i, a]], x[[i, b]]);
                    x[[i, a]] = cos * xa + sin * xb;
                    x[[i, b]] = -sin * xa + cos * xb;
                }
                for i in 0..k {
                    let (ra, rb) = (rotation[[i, a]], rotation[[i, b]]);
                    rotation[[i, a]] = cos * ra + sin * rb;
                    rotation[[i, b]] = -sin * ra + cos * rb;
                }
            }
        }
        let next = varimax_criterion(x.view(), false);
        let gain = next - criterion;
        criterion = next;
        if gain < tol_t {
            break;
        }
    }
    let rotated = loadings.dot(&rotation);
    Ok(VarimaxResult { rotated, rotation, sweeps, criterion })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FactorModel<T> {
    pub variables: Vec<String>,
    pub n_factors: usize,
    /// `p x k` rotated loadings.
    pub loadings: Array2<T>,
    /// `p x k` loadings before rotation.
    pub unrotated: Array2<T>,
    /// `k x k` orthogonal; `loadings = unrotated x rotation`.
    pub rotation: Array2<T>,
    pub communalities: Vec<T>,
    /// Eigenvalues of the correlation matrix used for extraction.
    pub eigenvalues: Array1<T>,
    pub adequacy: Option<AdequacyReport<T>>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> FactorModel<T> {
    /// Share of explained common variance per factor (column sums of squared
    /// loadings, normalized).
    pub fn factor_weights(&self) -> Vec<T> {
        let ss: Vec<T> = self.loadings.columns().into_iter().map(|c| c.iter().map(|&v| v * v).sum()).collect();
        let total: T = ss.iter().copied().sum();
        if total > T::zero() {
            ss.iter().map(|&s| s / total).collect()
        } else {
            vec![T::one() / T::from_usize_lossy(ss.len().max(1)); ss.len()]
        }
    }

    /// Per-variable loading of the variance-weighted factor composite.
    pub fn composite_loadings(&self) -> Vec<T> {
        let w = self.factor_weights();
        self.loadings.rows().into_iter().map(|row| row.iter().zip(&w).map(|(&l, &wj)| l * wj).sum()).collect()
    }
}

/// Principal-component factor extraction from a correlation matrix, with
/// varimax rotation when more than one factor is kept. Columns are ordered
/// by explained variance after rotation.
pub fn factor_analysis_from_correlation<T: Scalar>(
    r: ArrayView2<'_, T>,
    n_factors: usize,
    variables: Vec<String>,
) -> Result<FactorModel<T>, ReductionError> {
    let p = r.nrows();
    if n_factors == 0 || n_factors > p {
        return Err(ReductionError::InvalidComponentCount { k: n_factors, p });
    }
    if variables.len() != p {
        return Err(ReductionError::VariableMismatch);
    }
    let e = eigen(r)?;
    let mut unrotated = Array2::zeros((p, n_factors));
    for j in 0..n_factors {
        let scale = e.values[j].sqrt();
        unrotated.column_mut(j).assign(&e.vectors.column(j).mapv(|v| v * scale));
    }
    orient_columns(&mut unrotated, None);

    let mut warnings = Vec::new();
    let adequacy = if p >= 2 {
        let report = kmo_from_correlation(r)?;
        if report.verdict == Verdict::Inadequate {
            warnings.push(format!("KMO {:.4} below 0.5: sampling adequacy is poor", report.kmo.as_f64()));
        }
        if report.ridge_applied {
            warnings.push("correlation matrix needed ridge regularization for KMO".to_string());
        }
        Some(report)
    } else {
        None
    };

    let (mut loadings, mut rotation) = if n_factors >= 2 {
        let v = varimax(unrotated.view(), VARIMAX_MAX_ITER, VARIMAX_TOL)?;
        (v.rotated, v.rotation)
    } else {
        (unrotated.clone(), Array2::eye(1))
    };
    orient_columns(&mut loadings, Some(&mut rotation));

    // Order factors by explained variance, largest first (stable).
    let ss: Vec<T> = loadings.columns().into_iter().map(|c| c.iter().map(|&v| v * v).sum()).collect();
    let mut order: Vec<usize> = (0..n_factors).collect();
    order.sort_by(|&a, &b| ss[b].partial_cmp(&ss[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let loadings = loadings.select(Axis(1), &order);
    let rotation = rotation.select(Axis(1), &order);

    let communalities = loadings.rows().into_iter().map(|row| row.iter().map(|&v| v * v).sum()).collect();
    Ok(FactorModel {
        variables,
        n_factors,
        loadings,
        unrotated,
        rotation,
        communalities,
        eigenvalues: e.values,
        adequacy,
        warnings,
    })
}

pub fn factor_analysis<T: Scalar>(z: &FeatureMatrix<T>, n_factors: usize) -> Result<FactorModel<T>, ReductionError> {
    let r = correlation_matrix(z)?;
    factor_analysis_from_correlation(r.view(), n_factors, z.column_keys().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorScores<T> {
    /// `n x k`.
    pub scores: Array2<T>,
    pub ridge_applied: bool,
}

/// Regression-method (Thurstone) scores `Z R^-1 L`.
pub fn factor_scores<T: Scalar>(
    z: &FeatureMatrix<T>,
    model: &FactorModel<T>,
) -> Result<FactorScores<T>, ReductionError> {
    if z.column_keys() != model.variables.as_slice() {
        return Err(ReductionError::VariableMismatch);
    }
    let r = correlation_matrix(z)?;
    let (r_inv, ridge_applied) =
        linalg::spd_inverse_with_ridge(r.view()).map_err(|_| ReductionError::SingularCorrelation)?;
    let weights = r_inv.dot(&model.loadings);
    Ok(FactorScores { scores: z.values().dot(&weights), ridge_applied })
}

pub const PCA_REPORT_HEADER: &str = "block,component,eigenvalue,explained_pct";
pub const FACTOR_REPORT_HEADER: &str = "block,variable,factor,loading,communality";
pub const KMO_REPORT_HEADER: &str = "block,kmo,verdict";

/// `pca_report.csv` rows for one block, one per eigenvalue (1-based
/// component numbers).
pub fn pca_report_lines<T: Scalar>(block: &str, pca: &PcaResult<T>) -> Vec<String> {
    pca.eigenvalues
        .iter()
        .zip(pca.explained_ratio.iter())
        .enumerate()
        .map(|(i, (l, r))| format!("{block},{},{:.6},{:.6}", i + 1, l.as_f64(), 100.0 * r.as_f64()))
        .collect()
}

/// `factor_report.csv` rows, variable-major.
pub fn factor_report_lines<T: Scalar>(block: &str, model: &FactorModel<T>) -> Vec<String> {
    let mut out = Vec::new();
    for (i, name) in model.variables.iter().enumerate() {
        for j in 0..model.n_factors {
            out.push(format!(
                "{block},{name},{},{:.6},{:.6}",
                j + 1,
                model.loadings[[i, j]].as_f64(),
                model.communalities[i].as_f64()
            ));
        }
    }
    out
}

pub fn kmo_report_line<T: Scalar>(block: &str, report: &AdequacyReport<T>) -> String {
    format!("{block},{:.6},{}", report.kmo.as_f64(), report.verdict.label())
}
