use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Row identity of a panel observation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub country: String,
    pub year: i32,
}

impl RowKey {
    pub fn new(country: impl Into<String>, year: i32) -> Self {
        RowKey { country: country.into(), year }
    }
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.country, self.year)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("shape mismatch: {rows} row keys and {cols} column keys for a {shape:?} value array")]
    Shape { rows: usize, cols: usize, shape: (usize, usize) },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("duplicate column key `{0}`")]
    DuplicateColumn(String),
}

/// Numeric observation table with per-cell missing markers.
///
/// Missing cells hold NaN in [`values`](Self::values); the mask is the
/// authority. Present cells are always finite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureMatrix<T> {
    row_keys: Vec<RowKey>,
    column_keys: Vec<String>,
    values: Array2<T>,
    missing: Array2<bool>,
    means: Option<Vec<T>>,
    stds: Option<Vec<T>>,
}

/// Equal keys, equal masks, and equal values in every observed cell.
impl<T: PartialEq> PartialEq for FeatureMatrix<T> {
    fn eq(&self, other: &Self) -> bool {
        self.row_keys == other.row_keys
            && self.column_keys == other.column_keys
            && self.missing == other.missing
            && self.means == other.means
            && self.stds == other.stds
            && self.values.iter().zip(other.values.iter()).zip(self.missing.iter()).all(|((a, b), &m)| m || a == b)
    }
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Builds a matrix from optional cells (`None` = missing).
    pub fn from_cells(
        row_keys: Vec<RowKey>,
        column_keys: Vec<String>,
        cells: Array2<Option<T>>,
    ) -> Result<Self, MatrixError> {
        let shape = cells.dim();
        if shape != (row_keys.len(), column_keys.len()) {
            return Err(MatrixError::Shape { rows: row_keys.len(), cols: column_keys.len(), shape });
        }
        check_unique(&column_keys)?;
        let mut values = Array2::from_elem(shape, T::nan());
        let mut missing = Array2::from_elem(shape, true);
        for ((r, c), cell) in cells.indexed_iter() {
            if let Some(v) = cell {
                if !v.is_finite() {
                    return Err(MatrixError::NonFinite { row: r, col: c });
                }
                values[[r, c]] = *v;
                missing[[r, c]] = false;
            }
        }
        Ok(FeatureMatrix { row_keys, column_keys, values, missing, means: None, stds: None })
    }

    /// Builds a fully observed matrix.
    pub fn from_dense(row_keys: Vec<RowKey>, column_keys: Vec<String>, values: Array2<T>) -> Result<Self, MatrixError> {
        let cells = values.mapv(Some);
        Self::from_cells(row_keys, column_keys, cells)
    }

    /// Dense matrix with generated row keys (`R000000`, year 0, ...), handy for
    /// data that has no panel identity.
    pub fn anonymous(column_keys: Vec<String>, cells: Array2<Option<T>>) -> Result<Self, MatrixError> {
        let rows = (0..cells.nrows()).map(|i| RowKey::new(format!("R{i:06}"), 0)).collect();
        Self::from_cells(rows, column_keys, cells)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_keys(&self) -> &[RowKey] {
        &self.row_keys
    }

    pub fn column_keys(&self) -> &[String] {
        &self.column_keys
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_keys.iter().position(|c| c == name)
    }

    /// Raw values; missing cells read as NaN.
    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn missing_mask(&self) -> ArrayView2<'_, bool> {
        self.missing.view()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        if self.missing[[row, col]] {
            None
        } else {
            Some(self.values[[row, col]])
        }
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[[row, col]]
    }

    /// Stores an observed value. Panics on non-finite input, which would
    /// break the matrix invariant.
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        assert!(value.is_finite(), "non-finite value written to FeatureMatrix");
        self.values[[row, col]] = value;
        self.missing[[row, col]] = false;
    }

    pub fn clear(&mut self, row: usize, col: usize) {
        self.values[[row, col]] = T::nan();
        self.missing[[row, col]] = true;
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn column_missing_count(&self, col: usize) -> usize {
        self.missing.column(col).iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        !self.missing.iter().any(|&m| m)
    }

    /// Observed values of one column, in row order.
    pub fn observed_column(&self, col: usize) -> Vec<T> {
        self.values.column(col).iter().zip(self.missing.column(col)).filter(|(_, &m)| !m).map(|(&v, _)| v).collect()
    }

    pub fn column(&self, col: usize) -> ArrayView1<'_, T> {
        self.values.column(col)
    }

    pub fn means(&self) -> Option<&[T]> {
        self.means.as_deref()
    }

    pub fn stds(&self) -> Option<&[T]> {
        self.stds.as_deref()
    }

    pub(crate) fn set_moments(&mut self, means: Vec<T>, stds: Vec<T>) {
        self.means = Some(means);
        self.stds = Some(stds);
    }

    /// Matrix restricted to the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let values = self.values.select(ndarray::Axis(0), rows);
        let missing = self.missing.select(ndarray::Axis(0), rows);
        FeatureMatrix {
            row_keys: rows.iter().map(|&r| self.row_keys[r].clone()).collect(),
            column_keys: self.column_keys.clone(),
            values,
            missing,
            means: None,
            stds: None,
        }
    }

    /// Matrix restricted to the given columns (in the given order).
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let values = self.values.select(ndarray::Axis(1), cols);
        let missing = self.missing.select(ndarray::Axis(1), cols);
        FeatureMatrix {
            row_keys: self.row_keys.clone(),
            column_keys: cols.iter().map(|&c| self.column_keys[c].clone()).collect(),
            values,
            missing,
            means: None,
            stds: None,
        }
    }

    /// Same matrix in another scalar type.
    pub fn convert<U: Scalar>(&self) -> FeatureMatrix<U> {
        let conv = |v: T| U::from_f64(v.as_f64()).unwrap_or_else(U::nan);
        FeatureMatrix {
            row_keys: self.row_keys.clone(),
            column_keys: self.column_keys.clone(),
            values: self.values.mapv(conv),
            missing: self.missing.clone(),
            means: self.means.as_ref().map(|m| m.iter().map(|&v| conv(v)).collect()),
            stds: self.stds.as_ref().map(|m| m.iter().map(|&v| conv(v)).collect()),
        }
    }

    /// Replaces the whole value array. Used by transforms that keep the
    /// row/column identity; the caller guarantees finiteness.
    pub(crate) fn with_values(&self, values: Array2<T>, missing: Array2<bool>) -> Self {
        debug_assert_eq!(values.dim(), self.values.dim());
        FeatureMatrix {
            row_keys: self.row_keys.clone(),
            column_keys: self.column_keys.clone(),
            values,
            missing,
            means: None,
            stds: None,
        }
    }
}

fn check_unique(keys: &[String]) -> Result<(), MatrixError> {
    let mut seen = std::collections::HashSet::new();
    for k in keys {
        if !seen.insert(k.as_str()) {
            return Err(MatrixError::DuplicateColumn(k.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn missing_markers_are_tracked() {
        let cells = array![[Some(1.0), None], [Some(3.0), Some(4.0)]];
        let m = FeatureMatrix::anonymous(vec!["a".into(), "b".into()], cells).unwrap();
        assert_eq!(m.missing_count(), 1);
        assert!(m.is_missing(0, 1));
        assert_eq!(m.get(1, 1), Some(4.0));
        assert_eq!(m.observed_column(1), vec![4.0]);
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let cells = array![[Some(1.0)]];
        let err = FeatureMatrix::anonymous(vec!["a".into(), "b".into()], cells).unwrap_err();
        assert!(matches!(err, MatrixError::Shape { .. }));
        let cells = array![[Some(f64::INFINITY)]];
        assert!(FeatureMatrix::anonymous(vec!["a".into()], cells).is_err());
        let cells = array![[Some(1.0), Some(2.0)]];
        assert!(matches!(
            FeatureMatrix::anonymous(vec!["a".into(), "a".into()], cells),
            Err(MatrixError::DuplicateColumn(_))
        ));
    }

    #[test]
    fn converts_between_scalar_types() {
        let cells = array![[Some(1.5f64), None]];
        let m = FeatureMatrix::anonymous(vec!["a".into(), "b".into()], cells).unwrap();
        let f: FeatureMatrix<f32> = m.convert();
        assert_eq!(f.get(0, 0), Some(1.5f32));
        assert!(f.is_missing(0, 1));
    }
}
