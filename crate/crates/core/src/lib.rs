//! Panel ingestion, imputation, dimension reduction and composite index
//! construction for country-level living-standard indicators.
//!
//! Numerical kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! panel data model and the index layer work in `f64`. The aliases below
//! name the common concrete instantiations.

pub mod benchmark;
pub mod imputation;
pub mod index;
pub mod linalg;
pub mod matrix;
pub mod panel;
pub mod reduction;
pub mod regressors;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod synthetic;

pub use matrix::{FeatureMatrix, RowKey};
pub use rng::Stream;
pub use scalar::Scalar;

pub type FeatureMatrixF64 = matrix::FeatureMatrix<f64>;
pub type FeatureMatrixF32 = matrix::FeatureMatrix<f32>;
pub type RegressionModelF64 = regressors::RegressionModel<f64>;
pub type RegressionModelF32 = regressors::RegressionModel<f32>;
pub type ImputationResultF64 = imputation::ImputationResult<f64>;
pub type ImputationResultF32 = imputation::ImputationResult<f32>;
pub type PcaResultF64 = reduction::PcaResult<f64>;
pub type PcaResultF32 = reduction::PcaResult<f32>;
pub type FactorModelF64 = reduction::FactorModel<f64>;
pub type FactorModelF32 = reduction::FactorModel<f32>;
pub type AdequacyReportF64 = reduction::AdequacyReport<f64>;
pub type MaskPlanF64 = benchmark::MaskPlan<f64>;
pub type DensityCurveF64 = benchmark::DensityCurve<f64>;
