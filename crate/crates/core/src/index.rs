//! Sub-index construction, weighted composition into the Ease of Living
//! Index, per-year rankings, quartile categories and comparison with
//! external rankings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::RowKey;
use crate::panel::{Pillar, Polarity};
use crate::reduction::FactorModel;
use crate::stats;

pub const SUBINDEX_HEADER: &str = "country,year,economic,institutional,quality_of_life,sustainability,eoli";
pub const RANKINGS_HEADER: &str = "year,rank,country,eoli";
pub const CATEGORIES_HEADER: &str = "year,country,level";
pub const COMPARISON_HEADER: &str = "country,our_rank,external_rank,gap";
pub const AVERAGE_RANKS_HEADER: &str = "country,eoli,economic,institutional,quality_of_life,sustainability";

const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("no scores supplied")]
    EmptyScores,
    #[error("all raw scores are equal; cannot normalize")]
    DegenerateRange,
    #[error("loadings and polarities disagree in length ({loadings} vs {polarities})")]
    PolarityMismatch { loadings: usize, polarities: usize },
    #[error("weights must lie in [0, 1] and sum to 1 (sum = {0})")]
    WeightSum(f64),
    #[error("pillar `{0}` supplied twice or missing")]
    PillarSet(String),
    #[error("no (country, year) key is present in all four sub-indices")]
    EmptyIntersection,
    #[error("year {0} is not in the index")]
    UnknownYear(i32),
    #[error("year range {0}..={1} is empty")]
    EmptyRange(i32, i32),
    #[error("need at least 2 shared observations, found {0}")]
    InsufficientOverlap(usize),
    #[error("year {year} has {found} countries; need at least 4")]
    TooFewCountries { year: i32, found: usize },
    #[error("score outside [0, 1] at {0}")]
    OutOfRange(RowKey),
    #[error("malformed external ranking at line {line}: {reason}")]
    MalformedRanking { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Min-max over every country and year.
    Pooled,
    /// Min-max within each year.
    PerYear,
}

/// One pillar's scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubIndexSeries {
    pub pillar: Pillar,
    pub scores: BTreeMap<RowKey, f64>,
    pub orientation_sign: f64,
    /// Raw (oriented) minimum and maximum over the whole panel.
    pub bounds: (f64, f64),
    pub normalization: Normalization,
}

impl SubIndexSeries {
    /// Wraps scores that are already normalized.
    pub fn from_normalized(pillar: Pillar, scores: BTreeMap<RowKey, f64>) -> Result<Self, IndexError> {
        if let Some((k, _)) = scores.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(IndexError::OutOfRange(k.clone()));
        }
        Ok(SubIndexSeries {
            pillar,
            scores,
            orientation_sign: 1.0,
            bounds: (0.0, 1.0),
            normalization: Normalization::Pooled,
        })
    }
}

/// `+1` when `sum_i s_i * loading_i >= 0` with `s_i = +1` for beneficial and
/// `-1` for adverse indicators, else `-1`.
pub fn orientation_sign(loadings: &[f64], polarities: &[Polarity]) -> Result<f64, IndexError> {
    if loadings.len() != polarities.len() {
        return Err(IndexError::PolarityMismatch { loadings: loadings.len(), polarities: polarities.len() });
    }
    let s: f64 = loadings.iter().zip(polarities).map(|(l, p)| p.sign() * l).sum();
    Ok(if s >= 0.0 { 1.0 } else { -1.0 })
}

fn min_max<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Orients raw factor scores by polarity and min-max normalizes them.
/// The loading used for orientation is the variance-weighted composite of
/// the model's factors (the single factor when there is one).
pub fn build_sub_index(
    pillar: Pillar,
    raw: &BTreeMap<RowKey, f64>,
    model: &FactorModel<f64>,
    polarities: &[Polarity],
    normalization: Normalization,
) -> Result<SubIndexSeries, IndexError> {
    if raw.is_empty() {
        return Err(IndexError::EmptyScores);
    }
    let sign = orientation_sign(&model.composite_loadings(), polarities)?;
    let oriented: BTreeMap<RowKey, f64> = raw.iter().map(|(k, v)| (k.clone(), sign * v)).collect();
    let bounds = min_max(oriented.values());
    if !(bounds.1 > bounds.0) {
        return Err(IndexError::DegenerateRange);
    }
    let scores = match normalization {
        Normalization::Pooled => {
            oriented.iter().map(|(k, v)| (k.clone(), (v - bounds.0) / (bounds.1 - bounds.0))).collect()
        }
        Normalization::PerYear => {
            let mut per_year: BTreeMap<i32, (f64, f64)> = BTreeMap::new();
            for (k, &v) in &oriented {
                let e = per_year.entry(k.year).or_insert((f64::INFINITY, f64::NEG_INFINITY));
                *e = (e.0.min(v), e.1.max(v));
            }
            if per_year.values().any(|(lo, hi)| !(hi > lo)) {
                return Err(IndexError::DegenerateRange);
            }
            oriented
                .iter()
                .map(|(k, v)| {
                    let (lo, hi) = per_year[&k.year];
                    (k.clone(), (v - lo) / (hi - lo))
                })
                .collect()
        }
    };
    Ok(SubIndexSeries { pillar, scores, orientation_sign: sign, bounds, normalization })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeWeights {
    pub economic: f64,
    pub institutional: f64,
    pub quality_of_life: f64,
    pub sustainability: f64,
}

impl Default for CompositeWeights {
    fn default() -> Self {
        CompositeWeights { economic: 0.25, institutional: 0.25, quality_of_life: 0.35, sustainability: 0.15 }
    }
}

impl CompositeWeights {
    pub fn new(
        economic: f64,
        institutional: f64,
        quality_of_life: f64,
        sustainability: f64,
    ) -> Result<Self, IndexError> {
        let w = CompositeWeights { economic, institutional, quality_of_life, sustainability };
        w.validate()?;
        Ok(w)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.economic, self.institutional, self.quality_of_life, self.sustainability]
    }

    pub fn get(&self, pillar: Pillar) -> f64 {
        self.as_array()[pillar.position()]
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        let w = self.as_array();
        let sum: f64 = w.iter().sum();
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(IndexError::WeightSum(sum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositeIndex {
    pub weights: CompositeWeights,
    pub eoli: BTreeMap<RowKey, f64>,
    /// Pillar values behind each composite value, in pillar order.
    pub components: BTreeMap<RowKey, [f64; 4]>,
    /// Keys missing from at least one pillar, with the pillars lacking them.
    pub coverage: Vec<String>,
    pub provenance: Vec<String>,
}

impl CompositeIndex {
    pub fn years(&self) -> BTreeSet<i32> {
        self.eoli.keys().map(|k| k.year).collect()
    }

    pub fn countries(&self) -> BTreeSet<String> {
        self.eoli.keys().map(|k| k.country.clone()).collect()
    }

    fn year_scores(&self, year: i32) -> BTreeMap<String, f64> {
        self.eoli.iter().filter(|(k, _)| k.year == year).map(|(k, &v)| (k.country.clone(), v)).collect()
    }

    /// Replaces every eoli value with `f(value)`; used for transformation
    /// checks.
    pub fn map_scores(&self, f: impl Fn(&RowKey, f64) -> f64) -> CompositeIndex {
        let mut out = self.clone();
        for (k, v) in out.eoli.iter_mut() {
            *v = f(k, *v);
        }
        out
    }
}

fn ordered_pillars(subs: &[SubIndexSeries]) -> Result<[&SubIndexSeries; 4], IndexError> {
    let mut slots: [Option<&SubIndexSeries>; 4] = [None; 4];
    for s in subs {
        let slot = &mut slots[s.pillar.position()];
        if slot.is_some() {
            return Err(IndexError::PillarSet(s.pillar.key().into()));
        }
        *slot = Some(s);
    }
    let mut out = Vec::with_capacity(4);
    for (i, s) in slots.iter().enumerate() {
        out.push(s.ok_or_else(|| IndexError::PillarSet(Pillar::ALL[i].key().into()))?);
    }
    Ok([out[0], out[1], out[2], out[3]])
}

/// Weighted sum of the four pillars on the keys they share.
pub fn compose_eoli(subs: &[SubIndexSeries], weights: &CompositeWeights) -> Result<CompositeIndex, IndexError> {
    weights.validate()?;
    let pillars = ordered_pillars(subs)?;
    let w = weights.as_array();
    let all_keys: BTreeSet<&RowKey> = pillars.iter().flat_map(|s| s.scores.keys()).collect();
    let mut eoli = BTreeMap::new();
    let mut components = BTreeMap::new();
    let mut coverage = Vec::new();
    for key in all_keys {
        let values: Vec<Option<f64>> = pillars.iter().map(|s| s.scores.get(key).copied()).collect();
        if values.iter().all(Option::is_some) {
            let v: [f64; 4] = [values[0].unwrap(), values[1].unwrap(), values[2].unwrap(), values[3].unwrap()];
            let score = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            eoli.insert(key.clone(), score.clamp(0.0, 1.0));
            components.insert(key.clone(), v);
        } else {
            let lacking: Vec<&str> =
                values.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| Pillar::ALL[i].key()).collect();
            coverage.push(format!("{key} lacks {}", lacking.join("+")));
        }
    }
    if eoli.is_empty() {
        return Err(IndexError::EmptyIntersection);
    }
    let provenance = pillars
        .iter()
        .map(|s| format!("{} (sign {:+}, {:?})", s.pillar.key(), s.orientation_sign, s.normalization))
        .collect();
    Ok(CompositeIndex { weights: *weights, eoli, components, coverage, provenance })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEntry {
    pub rank: usize,
    pub country: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTable {
    pub year: i32,
    pub entries: Vec<RankEntry>,
    /// Adjacent pairs with equal scores, ordered by country code.
    pub ties: Vec<(String, String)>,
    /// Countries present in other years but absent here.
    pub excluded: Vec<String>,
}

impl RankTable {
    pub fn rank_of(&self, country: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.country == country).map(|e| e.rank)
    }
}

/// Ordinal ranks, score descending, ties broken by country code.
fn ordinal(scores: &BTreeMap<String, f64>) -> (Vec<RankEntry>, Vec<(String, String)>) {
    let mut items: Vec<(&String, f64)> = scores.iter().map(|(c, &v)| (c, v)).collect();
    items.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then_with(|| a.0.cmp(b.0)));
    let ties = items.windows(2).filter(|w| w[0].1 == w[1].1).map(|w| (w[0].0.clone(), w[1].0.clone())).collect();
    let entries = items
        .into_iter()
        .enumerate()
        .map(|(i, (c, v))| RankEntry { rank: i + 1, country: c.clone(), score: v })
        .collect();
    (entries, ties)
}

pub fn rank_year(index: &CompositeIndex, year: i32) -> Result<RankTable, IndexError> {
    let scores = index.year_scores(year);
    if scores.is_empty() {
        return Err(IndexError::UnknownYear(year));
    }
    let (entries, ties) = ordinal(&scores);
    let excluded = index.countries().into_iter().filter(|c| !scores.contains_key(c)).collect();
    Ok(RankTable { year, entries, ties, excluded })
}

pub fn rank_all_years(index: &CompositeIndex) -> Vec<RankTable> {
    index.years().into_iter().map(|y| rank_year(index, y).expect("year taken from the index")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageRankRow {
    pub country: String,
    pub eoli: f64,
    /// Mean pillar ranks in pillar order, when pillars were supplied.
    pub pillars: Option<[Option<f64>; 4]>,
}

/// Mean ordinal rank per country over `years` (inclusive), counting only
/// years in which the country appears. Rows sorted by mean EoLI rank, then
/// country.
pub fn average_ranks(
    index: &CompositeIndex,
    years: (i32, i32),
    per_pillar: Option<&[SubIndexSeries]>,
) -> Result<Vec<AverageRankRow>, IndexError> {
    let (from, to) = years;
    if from > to {
        return Err(IndexError::EmptyRange(from, to));
    }
    let mut eoli_ranks: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut pillar_ranks: [BTreeMap<String, Vec<f64>>; 4] = Default::default();
    let pillars = per_pillar.map(ordered_pillars).transpose()?;
    for year in from..=to {
        let table = rank_year(index, year)?;
        for e in &table.entries {
            eoli_ranks.entry(e.country.clone()).or_default().push(e.rank as f64);
        }
        if let Some(ps) = &pillars {
            for (i, s) in ps.iter().enumerate() {
                let scores: BTreeMap<String, f64> =
                    s.scores.iter().filter(|(k, _)| k.year == year).map(|(k, &v)| (k.country.clone(), v)).collect();
                for e in ordinal(&scores).0 {
                    pillar_ranks[i].entry(e.country).or_default().push(e.rank as f64);
                }
            }
        }
    }
    let mut rows: Vec<AverageRankRow> = eoli_ranks
        .into_iter()
        .map(|(country, ranks)| {
            let pillars = pillars.as_ref().map(|_| {
                let mut out = [None; 4];
                for (i, slot) in out.iter_mut().enumerate() {
                    *slot = pillar_ranks[i].get(&country).and_then(|r| stats::mean(r));
                }
                out
            });
            AverageRankRow { eoli: stats::mean(&ranks).unwrap_or(f64::NAN), pillars, country }
        })
        .collect();
    rows.sort_by(|a, b| a.eoli.partial_cmp(&b.eoli).expect("finite").then_with(|| a.country.cmp(&b.country)));
    Ok(rows)
}

/// Pearson correlations among the four pillars (and optionally the year)
/// over their shared keys. Labels follow the matrix order.
pub fn sub_index_correlation(
    subs: &[SubIndexSeries],
    include_year: bool,
) -> Result<(Vec<String>, Array2<f64>), IndexError> {
    let pillars = ordered_pillars(subs)?;
    let keys: Vec<&RowKey> =
        pillars[0].scores.keys().filter(|k| pillars[1..].iter().all(|s| s.scores.contains_key(*k))).collect();
    if keys.len() < 2 {
        return Err(IndexError::InsufficientOverlap(keys.len()));
    }
    let mut labels: Vec<String> = Pillar::ALL.iter().map(|p| p.key().to_string()).collect();
    let mut columns: Vec<Vec<f64>> = pillars.iter().map(|s| keys.iter().map(|k| s.scores[*k]).collect()).collect();
    if include_year {
        labels.push("year".into());
        columns.push(keys.iter().map(|k| k.year as f64).collect());
    }
    let p = columns.len();
    let mut r = Array2::<f64>::eye(p);
    for i in 0..p {
        for j in (i + 1)..p {
            let v = stats::pearson(&columns[i], &columns[j]).ok_or(IndexError::DegenerateRange)?;
            r[[i, j]] = v;
            r[[j, i]] = v;
        }
    }
    Ok((labels, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Low,
    MediumLow,
    MediumHigh,
    High,
}

impl Level {
    pub fn key(self) -> &'static str {
        match self {
            Level::Low => "Low",
            Level::MediumLow => "MediumLow",
            Level::MediumHigh => "MediumHigh",
            Level::High => "High",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Quartile levels for one year. Values on a quartile boundary fall into
/// the lower level.
pub fn categorize_levels(index: &CompositeIndex, year: i32) -> Result<BTreeMap<String, Level>, IndexError> {
    let scores = index.year_scores(year);
    if scores.is_empty() {
        return Err(IndexError::UnknownYear(year));
    }
    if scores.len() < 4 {
        return Err(IndexError::TooFewCountries { year, found: scores.len() });
    }
    let mut sorted: Vec<f64> = scores.values().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let q = |p| stats::quantile_sorted(&sorted, p).expect("nonempty");
    let (q1, q2, q3) = (q(0.25), q(0.5), q(0.75));
    Ok(scores
        .into_iter()
        .map(|(c, v)| {
            let level = if v <= q1 {
                Level::Low
            } else if v <= q2 {
                Level::MediumLow
            } else if v <= q3 {
                Level::MediumHigh
            } else {
                Level::High
            };
            (c, level)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub country: String,
    pub our_rank: usize,
    pub external_rank: u32,
    pub gap: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankComparison {
    /// Ordered by our rank.
    pub rows: Vec<ComparisonRow>,
    pub spearman: f64,
}

/// Average (fractional) ranks, ascending input value gets rank 1.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Joins our ranks with an external ranking. `gap = ours - external`;
/// Spearman correlation uses both rankings re-ranked within the shared
/// countries.
pub fn compare_external_ranks(
    ours: &RankTable,
    external: &BTreeMap<String, u32>,
) -> Result<RankComparison, IndexError> {
    let rows: Vec<ComparisonRow> = ours
        .entries
        .iter()
        .filter_map(|e| {
            external.get(&e.country).map(|&x| ComparisonRow {
                country: e.country.clone(),
                our_rank: e.rank,
                external_rank: x,
                gap: e.rank as i64 - x as i64,
            })
        })
        .collect();
    if rows.len() < 2 {
        return Err(IndexError::InsufficientOverlap(rows.len()));
    }
    let a = fractional_ranks(&rows.iter().map(|r| r.our_rank as f64).collect::<Vec<_>>());
    let b = fractional_ranks(&rows.iter().map(|r| r.external_rank as f64).collect::<Vec<_>>());
    let spearman = stats::pearson(&a, &b).unwrap_or(0.0);
    Ok(RankComparison { rows, spearman })
}

/// Reads a `country,rank` CSV.
pub fn read_external_ranks<R: Read>(input: R) -> Result<BTreeMap<String, u32>, IndexError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| IndexError::Io(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["country", "rank"] {
        return Err(IndexError::MalformedRanking { line: 1, reason: "header must be `country,rank`".into() });
    }
    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| IndexError::MalformedRanking { line, reason: e.to_string() })?;
        let country = record[0].to_string();
        let rank: u32 = record[1].parse().map_err(|_| IndexError::MalformedRanking {
            line,
            reason: format!("rank `{}` is not a positive integer", &record[1]),
        })?;
        if rank == 0 {
            return Err(IndexError::MalformedRanking { line, reason: "rank must be >= 1".into() });
        }
        if out.insert(country.clone(), rank).is_some() {
            return Err(IndexError::MalformedRanking { line, reason: format!("duplicate country `{country}`") });
        }
    }
    Ok(out)
}

fn emit<W: Write>(mut out: W, text: String) -> Result<(), IndexError> {
    out.write_all(text.as_bytes()).map_err(|e| IndexError::Io(e.to_string()))
}

pub fn write_subindex_csv<W: Write>(index: &CompositeIndex, out: W) -> Result<(), IndexError> {
    let mut text = format!("{SUBINDEX_HEADER}\n");
    for (key, v) in &index.components {
        text.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            key.country, key.year, v[0], v[1], v[2], v[3], index.eoli[key]
        ));
    }
    emit(out, text)
}

pub fn write_rankings_csv<W: Write>(tables: &[RankTable], out: W) -> Result<(), IndexError> {
    let mut text = format!("{RANKINGS_HEADER}\n");
    for t in tables {
        for e in &t.entries {
            text.push_str(&format!("{},{},{},{:.6}\n", t.year, e.rank, e.country, e.score));
        }
    }
    emit(out, text)
}

pub fn write_categories_csv<W: Write>(levels: &[(i32, BTreeMap<String, Level>)], out: W) -> Result<(), IndexError> {
    let mut text = format!("{CATEGORIES_HEADER}\n");
    for (year, map) in levels {
        for (country, level) in map {
            text.push_str(&format!("{year},{country},{level}\n"));
        }
    }
    emit(out, text)
}

pub fn write_comparison_csv<W: Write>(cmp: &RankComparison, out: W) -> Result<(), IndexError> {
    let mut text = format!("{COMPARISON_HEADER}\n");
    for r in &cmp.rows {
        text.push_str(&format!("{},{},{},{}\n", r.country, r.our_rank, r.external_rank, r.gap));
    }
    text.push_str(&format!("# spearman={:.6}\n", cmp.spearman));
    emit(out, text)
}

pub fn write_average_ranks_csv<W: Write>(rows: &[AverageRankRow], out: W) -> Result<(), IndexError> {
    let mut text = format!("{AVERAGE_RANKS_HEADER}\n");
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_default();
    for r in rows {
        let pillars = r.pillars.unwrap_or([None; 4]);
        text.push_str(&format!(
            "{},{:.1},{},{},{},{}\n",
            r.country,
            r.eoli,
            fmt_opt(pillars[0]),
            fmt_opt(pillars[1]),
            fmt_opt(pillars[2]),
            fmt_opt(pillars[3])
        ));
    }
    emit(out, text)
}
