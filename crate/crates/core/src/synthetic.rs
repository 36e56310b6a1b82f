//! Seeded synthetic data: a linear latent-factor matrix for imputation
//! benchmarks and a toy country panel shaped like the real indicator set.
//!
//! The toy panel has no relation to any published data. Each pillar has a
//! latent level per country and year (a country offset, a country trend and
//! AR(1) noise). Indicator `j` of a pillar is
//! `mean_j + scale_j * (sign_j * l_j * latent + sqrt(1 - l_j^2) * e)`,
//! where `sign_j` is `-1` for adverse indicators. Cells are then removed
//! completely at random.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::FeatureMatrix;
use crate::panel::{default_schema, IndicatorSpec, PanelBuilder, PanelDataset, Pillar};
use crate::rng::Stream;
use crate::scalar::Scalar;

pub const TOY_COUNTRIES: [&str; 9] = ["AUS", "CAN", "CHN", "DEU", "GBR", "IND", "JPN", "MYS", "USA"];
pub const TOY_FIRST_YEAR: i32 = 1970;
pub const TOY_LAST_YEAR: i32 = 2021;
pub const TOY_MISSING_FRACTION: f64 = 0.15;

pub const BENCHMARK_ROWS: usize = 500;
pub const BENCHMARK_LOADINGS: [f64; 6] = [0.90, 0.88, 0.86, 0.90, 0.85, 0.87];

fn normal(stream: &mut Stream) -> f64 {
    StandardNormal.sample(stream.generator())
}

/// `n` rows of `x_j = mean_j + scale_j (l_j z + sqrt(1 - l_j^2) e_j)` with
/// independent standard normal `z` and `e_j`. Column `j` has mean `10 j`
/// and scale `1 + j`, so columns are on different ranges.
pub fn linear_factor_matrix<T: Scalar>(n: usize, loadings: &[f64], seed: u64) -> FeatureMatrix<T> {
    let mut stream = Stream::new(seed);
    let p = loadings.len();
    let mut cells = Array2::from_elem((n, p), None);
    for r in 0..n {
        let z = normal(&mut stream);
        for (j, &l) in loadings.iter().enumerate() {
            let e = normal(&mut stream);
            let x = 10.0 * j as f64 + (1.0 + j as f64) * (l * z + (1.0 - l * l).max(0.0).sqrt() * e);
            cells[[r, j]] = Some(T::lit(x));
        }
    }
    let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
    FeatureMatrix::anonymous(names, cells).expect("finite synthetic values")
}

/// The 500 x 6 benchmark matrix.
pub fn benchmark_matrix<T: Scalar>(seed: u64) -> FeatureMatrix<T> {
    linear_factor_matrix(BENCHMARK_ROWS, &BENCHMARK_LOADINGS, seed)
}

/// Toy panel over [`TOY_COUNTRIES`], 1970 to 2021 and the default schema,
/// with about [`TOY_MISSING_FRACTION`] of cells missing. Every indicator
/// keeps at least one observed value per country.
pub fn toy_panel(seed: u64) -> PanelDataset {
    toy_panel_with(seed, &default_schema(), TOY_MISSING_FRACTION)
}

pub fn toy_panel_with(seed: u64, schema: &[IndicatorSpec], missing_fraction: f64) -> PanelDataset {
    let years: Vec<i32> = (TOY_FIRST_YEAR..=TOY_LAST_YEAR).collect();
    let span = (TOY_LAST_YEAR - TOY_FIRST_YEAR) as f64;
    let mut latent_stream = Stream::derive(seed, 0);
    // latent[pillar][country][year]
    let mut latent = vec![vec![vec![0.0; years.len()]; TOY_COUNTRIES.len()]; Pillar::ALL.len()];
    for pillar in latent.iter_mut() {
        for series in pillar.iter_mut() {
            let offset = normal(&mut latent_stream);
            let trend = 0.8 * normal(&mut latent_stream);
            let mut ar = 0.0;
            for (t, slot) in series.iter_mut().enumerate() {
                ar = 0.7 * ar + 0.25 * normal(&mut latent_stream);
                *slot = offset + trend * t as f64 / span + ar;
            }
        }
    }

    let mut builder = PanelBuilder::new(schema.to_vec()).expect("valid schema");
    for (j, spec) in schema.iter().enumerate() {
        let mut stream = Stream::derive(seed, 1 + j as u64);
        let loading = 0.7 + 0.25 * stream.next_f64();
        let mean = 10.0 + 90.0 * stream.next_f64();
        let scale = 1.0 + 9.0 * stream.next_f64();
        let sign = spec.polarity.sign();
        let noise = (1.0 - loading * loading).sqrt();
        for (c, country) in TOY_COUNTRIES.iter().enumerate() {
            let keep = stream.index_below(years.len());
            for (t, &year) in years.iter().enumerate() {
                let lv = latent[spec.sub_index.position()][c][t];
                let x = mean + scale * (sign * loading * lv + noise * normal(&mut stream));
                let hole = t != keep && stream.next_f64() < missing_fraction;
                let value = if hole { None } else { Some((x * 1e6).round() / 1e6) };
                builder.insert(country, year, &spec.name, value).expect("generated cell is unique");
            }
        }
    }
    builder.build()
}
