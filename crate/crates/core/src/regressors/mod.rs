//! Regression trees, bagged random forests and squared-error gradient
//! boosting, written from scratch. These are the base learners of the
//! imputation engines.
//!
//! Split search maximizes variance reduction over thresholds placed at the
//! midpoint of adjacent distinct sorted values. Ties go to the lowest feature
//! index, then the lowest threshold.

mod tree;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Stream;
use crate::scalar::Scalar;

use tree::{FeatureSampler, Grower, SortedSlots};
pub use tree::{Node, Tree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressorError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: None, min_samples_split: 2, min_samples_leaf: 1 }
    }
}

impl TreeConfig {
    pub fn with_depth(depth: usize) -> Self {
        TreeConfig { max_depth: Some(depth), ..Default::default() }
    }

    fn validate(&self) -> Result<(), RegressorError> {
        if self.min_samples_split < 2 {
            return Err(RegressorError::InvalidConfig("min_samples_split must be >= 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(RegressorError::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub tree: TreeConfig,
    pub bootstrap: bool,
    /// Features tried per split; `None` means `max(1, p / 3)`.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, tree: TreeConfig::default(), bootstrap: true, mtry: None, seed: 0 }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| (p / 3).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub tree: TreeConfig,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig { n_rounds: 100, learning_rate: 0.02, tree: TreeConfig::with_depth(5), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Tree,
    Forest,
    Boost,
}

/// A fitted tree, forest or boosted ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RegressionModel<T> {
    kind: ModelKind,
    n_features: usize,
    /// Initial constant of a boosted model; zero otherwise.
    base_prediction: T,
    learning_rate: T,
    trees: Vec<Tree<T>>,
}

fn check_training<T: Scalar>(x: &ArrayView2<T>, y: &ArrayView1<T>) -> Result<(), RegressorError> {
    if x.nrows() == 0 || y.is_empty() {
        return Err(RegressorError::EmptyTrainingSet);
    }
    if x.nrows() != y.len() {
        return Err(RegressorError::DimensionMismatch { expected: x.nrows(), found: y.len() });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(RegressorError::NonFiniteInput);
    }
    Ok(())
}

fn grow<T: Scalar>(
    x: ArrayView2<'_, T>,
    rows: &[usize],
    targets: &[T],
    config: &TreeConfig,
    sorted: SortedSlots,
    sampler: Option<FeatureSampler<'_>>,
) -> Tree<T> {
    Grower::new(x, rows, targets, config, sorted, sampler).grow()
}

/// Fits a single deterministic regression tree.
pub fn fit_tree<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    config: &TreeConfig,
) -> Result<RegressionModel<T>, RegressorError> {
    check_training(&x, &y)?;
    config.validate()?;
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let targets = y.to_vec();
    let sorted = SortedSlots::new(x, &rows);
    let tree = grow(x, &rows, &targets, config, sorted, None);
    Ok(RegressionModel {
        kind: ModelKind::Tree,
        n_features: x.ncols(),
        base_prediction: T::zero(),
        learning_rate: T::one(),
        trees: vec![tree],
    })
}

/// Fits a random forest. Tree `i` draws its bootstrap sample and split
/// features from stream `i` of `config.seed`, so parallel and serial fits
/// agree bit for bit.
pub fn fit_forest<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    config: &ForestConfig,
) -> Result<RegressionModel<T>, RegressorError> {
    check_training(&x, &y)?;
    config.tree.validate()?;
    if config.n_trees == 0 {
        return Err(RegressorError::InvalidConfig("n_trees must be >= 1".into()));
    }
    let p = x.ncols();
    let mtry = config.resolved_mtry(p);
    if mtry == 0 || (p > 0 && mtry > p) {
        return Err(RegressorError::InvalidConfig(format!("mtry {mtry} not in 1..={p}")));
    }
    let n = x.nrows();
    let trees: Vec<Tree<T>> = (0..config.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut stream = Stream::derive(config.seed, i as u64);
            let rows: Vec<usize> = if config.bootstrap { stream.bootstrap(n) } else { (0..n).collect() };
            let targets: Vec<T> = rows.iter().map(|&r| y[r]).collect();
            let sorted = SortedSlots::new(x, &rows);
            let sampler = FeatureSampler { stream: &mut stream, mtry };
            grow(x, &rows, &targets, &config.tree, sorted, Some(sampler))
        })
        .collect();
    Ok(RegressionModel {
        kind: ModelKind::Forest,
        n_features: p,
        base_prediction: T::zero(),
        learning_rate: T::one(),
        trees,
    })
}

/// Stagewise squared-error boosting: start from `mean(y)`, then each round
/// fits a tree to the current residuals and adds `learning_rate * tree`.
pub fn fit_boost<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    config: &BoostConfig,
) -> Result<RegressionModel<T>, RegressorError> {
    check_training(&x, &y)?;
    config.tree.validate()?;
    if !(config.learning_rate > 0.0 && config.learning_rate <= 1.0) {
        return Err(RegressorError::InvalidConfig("learning_rate must be in (0, 1]".into()));
    }
    let n = x.nrows();
    let rate = T::lit(config.learning_rate);
    let base = y.sum() / T::from_usize_lossy(n);
    let rows: Vec<usize> = (0..n).collect();
    let presorted = SortedSlots::new(x, &rows);
    let mut fitted = vec![base; n];
    let mut residuals = vec![T::zero(); n];
    let mut trees = Vec::with_capacity(config.n_rounds);
    for _ in 0..config.n_rounds {
        for i in 0..n {
            residuals[i] = y[i] - fitted[i];
        }
        let tree = grow(x, &rows, &residuals, &config.tree, presorted.clone(), None);
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += rate * tree.predict_row(|j| x[[i, j]]);
        }
        trees.push(tree);
    }
    Ok(RegressionModel {
        kind: ModelKind::Boost,
        n_features: x.ncols(),
        base_prediction: base,
        learning_rate: rate,
        trees,
    })
}

impl<T: Scalar> RegressionModel<T> {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn base_prediction(&self) -> T {
        self.base_prediction
    }

    pub fn trees(&self) -> &[Tree<T>] {
        &self.trees
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<(), RegressorError> {
        if x.ncols() != self.n_features {
            return Err(RegressorError::DimensionMismatch { expected: self.n_features, found: x.ncols() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RegressorError::NonFiniteInput);
        }
        Ok(())
    }

    fn predict_one(&self, x: &ArrayView2<T>, i: usize) -> T {
        let row = |j: usize| x[[i, j]];
        match self.kind {
            ModelKind::Tree => self.trees[0].predict_row(row),
            ModelKind::Forest => {
                let (mut s, mut lo, mut hi) = (T::zero(), T::infinity(), T::neg_infinity());
                for t in &self.trees {
                    let v = t.predict_row(row);
                    s += v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                (s / T::from_usize_lossy(self.trees.len())).max(lo).min(hi)
            }
            ModelKind::Boost => {
                let mut acc = self.base_prediction;
                for t in &self.trees {
                    acc += self.learning_rate * t.predict_row(row);
                }
                acc
            }
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>, RegressorError> {
        self.check_input(&x)?;
        Ok(Array1::from_iter((0..x.nrows()).map(|i| self.predict_one(&x, i))))
    }

    /// Raw per-tree outputs, one column per tree (before averaging or
    /// shrinkage).
    pub fn predict_per_tree(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>, RegressorError> {
        self.check_input(&x)?;
        let mut out = Array2::zeros((x.nrows(), self.trees.len()));
        for i in 0..x.nrows() {
            for (t, tree) in self.trees.iter().enumerate() {
                out[[i, t]] = tree.predict_row(|j| x[[i, j]]);
            }
        }
        Ok(out)
    }

    /// Boosted predictions after each round; entry 0 is the base model.
    pub fn predict_staged(&self, x: ArrayView2<'_, T>) -> Result<Vec<Array1<T>>, RegressorError> {
        self.check_input(&x)?;
        let mut current = Array1::from_elem(x.nrows(), self.base_prediction);
        let mut stages = vec![current.clone()];
        if self.kind == ModelKind::Boost {
            for t in &self.trees {
                for i in 0..x.nrows() {
                    current[i] += self.learning_rate * t.predict_row(|j| x[[i, j]]);
                }
                stages.push(current.clone());
            }
        }
        Ok(stages)
    }

    /// JSON dump with nested tree nodes. Debugging aid only.
    pub fn to_debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": format!("{:?}", self.kind),
            "n_features": self.n_features,
            "base_prediction": self.base_prediction.as_f64(),
            "learning_rate": self.learning_rate.as_f64(),
            "trees": self.trees.iter().map(Tree::to_nested_json).collect::<Vec<_>>(),
        })
    }
}
