//! Country-year panel data: schema, CSV ingestion, merging, unit
//! conversion and missingness accounting.
//!
//! The canonical interchange format is a long CSV with header
//! `country,year,indicator,value`. An empty `value` records an explicitly
//! missing cell; any other non-numeric value (including `NA`) is rejected.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{FeatureMatrix, MatrixError, RowKey};

pub const LONG_HEADER: [&str; 4] = ["country", "year", "indicator", "value"];
pub const SCHEMA_HEADER: [&str; 4] = ["name", "sub_index", "unit", "polarity"];
pub const MISSINGNESS_HEADER: &str = "sub_index,indicator,observed,missing,pct_missing";

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate cell ({country}, {year}, {indicator})")]
    DuplicateCell { country: String, year: i32, indicator: String },
    #[error("unknown indicator `{0}`")]
    UnknownIndicator(String),
    #[error("duplicate indicator `{0}` in schema")]
    DuplicateIndicator(String),
    #[error("indicator `{0}` is declared differently in the two datasets")]
    SchemaConflict(String),
    #[error("unit rule for `{0}` has zero scale")]
    ZeroScale(String),
    #[error("dataset has no countries, years or indicators")]
    EmptyDataset,
    #[error("selection produced no rows or no columns")]
    EmptySelection,
    #[error("unknown country `{0}`")]
    UnknownCountry(String),
    #[error("invalid year range {0}..={1}")]
    InvalidYearRange(i32, i32),
    #[error("invalid schema entry: {0}")]
    InvalidSchema(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("write failed: {0}")]
    Write(String),
}

impl PanelError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        PanelError::Io { path: path.to_path_buf(), source }
    }
}

/// One of the four index pillars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pillar {
    Economic,
    Institutional,
    QualityOfLife,
    Sustainability,
}

impl Pillar {
    pub const ALL: [Pillar; 4] =
        [Pillar::Economic, Pillar::Institutional, Pillar::QualityOfLife, Pillar::Sustainability];

    pub fn key(self) -> &'static str {
        match self {
            Pillar::Economic => "economic",
            Pillar::Institutional => "institutional",
            Pillar::QualityOfLife => "quality_of_life",
            Pillar::Sustainability => "sustainability",
        }
    }

    pub fn position(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Pillar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Pillar {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "economic" | "Economic" => Ok(Pillar::Economic),
            "institutional" | "Institutional" => Ok(Pillar::Institutional),
            "quality_of_life" | "QualityOfLife" => Ok(Pillar::QualityOfLife),
            "sustainability" | "Sustainability" => Ok(Pillar::Sustainability),
            other => Err(format!("unknown sub-index `{other}`")),
        }
    }
}

/// Whether a higher raw value is good or bad for living standards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Beneficial,
    Adverse,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Beneficial => 1.0,
            Polarity::Adverse => -1.0,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Polarity::Beneficial => "beneficial",
            Polarity::Adverse => "adverse",
        }
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "beneficial" | "Beneficial" => Ok(Polarity::Beneficial),
            "adverse" | "Adverse" => Ok(Polarity::Adverse),
            other => Err(format!("unknown polarity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    pub name: String,
    pub sub_index: Pillar,
    pub unit: String,
    pub polarity: Polarity,
}

impl IndicatorSpec {
    pub fn new(name: &str, sub_index: Pillar, unit: &str, polarity: Polarity) -> Self {
        IndicatorSpec { name: name.to_string(), sub_index, unit: unit.to_string(), polarity }
    }
}

/// The 26 indicators of the reference index, grouped by pillar.
pub fn default_schema() -> Vec<IndicatorSpec> {
    use Pillar::*;
    use Polarity::*;
    let rows: [(&str, Pillar, &str, Polarity); 26] = [
        ("gdp_growth", Economic, "percent", Beneficial),
        ("inflation_rate", Economic, "percent", Adverse),
        ("gdp_per_capita", Economic, "USD", Beneficial),
        ("unemployment_rate", Economic, "percent", Adverse),
        ("cost_of_living_index", Economic, "index", Adverse),
        ("local_purchasing_power_index", Economic, "index", Beneficial),
        ("control_of_corruption", Institutional, "estimate", Beneficial),
        ("government_effectiveness", Institutional, "estimate", Beneficial),
        ("political_stability", Institutional, "estimate", Beneficial),
        ("regulatory_quality", Institutional, "estimate", Beneficial),
        ("rule_of_law", Institutional, "estimate", Beneficial),
        ("voice_and_accountability", Institutional, "estimate", Beneficial),
        ("life_expectancy", QualityOfLife, "years", Beneficial),
        ("doctors_per_10k", QualityOfLife, "per 10,000", Beneficial),
        ("access_to_electricity", QualityOfLife, "percent", Beneficial),
        ("co2_per_capita", QualityOfLife, "tonnes", Adverse),
        ("gender_development_index", QualityOfLife, "index", Beneficial),
        ("gender_inequality_index", QualityOfLife, "index", Adverse),
        ("human_development_index", QualityOfLife, "index", Beneficial),
        ("health_care_index", QualityOfLife, "index", Beneficial),
        ("crime_index", QualityOfLife, "index", Adverse),
        ("co2_emissions", Sustainability, "kt", Adverse),
        ("non_renewable_electricity", Sustainability, "percent", Adverse),
        ("renewable_electricity", Sustainability, "percent", Beneficial),
        ("micro_air_pollution", Sustainability, "ug/m3", Adverse),
        ("greenhouse_emissions", Sustainability, "kt CO2e", Adverse),
    ];
    rows.iter().map(|&(n, p, u, pol)| IndicatorSpec::new(n, p, u, pol)).collect()
}

fn validate_schema(schema: &[IndicatorSpec]) -> Result<(), PanelError> {
    let mut seen = BTreeSet::new();
    for spec in schema {
        if spec.name.is_empty() || spec.name.contains([',', '"', '\n', '\r']) {
            return Err(PanelError::InvalidSchema(format!("bad indicator name `{}`", spec.name)));
        }
        if !seen.insert(spec.name.as_str()) {
            return Err(PanelError::DuplicateIndicator(spec.name.clone()));
        }
    }
    Ok(())
}

/// Affine unit conversion `scale * value + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRule {
    pub indicator: String,
    pub scale: f64,
    pub offset: f64,
    pub target_unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct CellKey {
    country: String,
    year: i32,
    indicator: String,
}

/// Sparse country x year x indicator table. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    countries: Vec<String>,
    years: Vec<i32>,
    indicators: Vec<IndicatorSpec>,
    cells: BTreeMap<CellKey, Option<f64>>,
}

/// Accumulates cells and validates them against a schema.
#[derive(Debug)]
pub struct PanelBuilder {
    indicators: Vec<IndicatorSpec>,
    known: HashMap<String, usize>,
    cells: BTreeMap<CellKey, Option<f64>>,
}

impl PanelBuilder {
    pub fn new(schema: Vec<IndicatorSpec>) -> Result<Self, PanelError> {
        validate_schema(&schema)?;
        let known = schema.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        Ok(PanelBuilder { indicators: schema, known, cells: BTreeMap::new() })
    }

    pub fn insert(&mut self, country: &str, year: i32, indicator: &str, value: Option<f64>) -> Result<(), PanelError> {
        if !self.known.contains_key(indicator) {
            return Err(PanelError::UnknownIndicator(indicator.to_string()));
        }
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(PanelError::MalformedRow { line: 0, reason: format!("non-finite value {v}") });
            }
        }
        let key = CellKey { country: country.to_string(), year, indicator: indicator.to_string() };
        if self.cells.contains_key(&key) {
            return Err(PanelError::DuplicateCell { country: key.country, year, indicator: key.indicator });
        }
        self.cells.insert(key, value);
        Ok(())
    }

    pub fn build(self) -> PanelDataset {
        PanelDataset::assemble(self.indicators, self.cells)
    }
}

impl PanelDataset {
    fn assemble(indicators: Vec<IndicatorSpec>, cells: BTreeMap<CellKey, Option<f64>>) -> Self {
        let countries: BTreeSet<&str> = cells.keys().map(|k| k.country.as_str()).collect();
        let years: BTreeSet<i32> = cells.keys().map(|k| k.year).collect();
        PanelDataset {
            countries: countries.into_iter().map(String::from).collect(),
            years: years.into_iter().collect(),
            indicators,
            cells,
        }
    }

    pub fn empty(schema: Vec<IndicatorSpec>) -> Result<Self, PanelError> {
        Ok(PanelBuilder::new(schema)?.build())
    }

    /// Sorted country codes.
    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    /// Strictly increasing years.
    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn indicators(&self) -> &[IndicatorSpec] {
        &self.indicators
    }

    pub fn indicator(&self, name: &str) -> Option<&IndicatorSpec> {
        self.indicators.iter().find(|s| s.name == name)
    }

    /// Value of a populated cell.
    pub fn value(&self, country: &str, year: i32, indicator: &str) -> Option<f64> {
        let key = CellKey { country: country.to_string(), year, indicator: indicator.to_string() };
        self.cells.get(&key).copied().flatten()
    }

    /// Number of stored cells, including explicitly missing ones.
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn populated_count(&self) -> usize {
        self.cells.values().filter(|v| v.is_some()).count()
    }

    /// Stored cells in (country, year, indicator) order.
    pub fn cells(&self) -> impl Iterator<Item = (&str, i32, &str, Option<f64>)> {
        self.cells.iter().map(|(k, v)| (k.country.as_str(), k.year, k.indicator.as_str(), *v))
    }

    /// Builds a dataset from a (possibly incomplete) feature matrix whose
    /// columns are named after indicators in `schema`.
    pub fn from_matrix(matrix: &FeatureMatrix<f64>, schema: &[IndicatorSpec]) -> Result<Self, PanelError> {
        let mut specs = Vec::with_capacity(matrix.ncols());
        for name in matrix.column_keys() {
            let spec =
                schema.iter().find(|s| &s.name == name).ok_or_else(|| PanelError::UnknownIndicator(name.clone()))?;
            specs.push(spec.clone());
        }
        let mut b = PanelBuilder::new(specs)?;
        for (r, key) in matrix.row_keys().iter().enumerate() {
            for (c, name) in matrix.column_keys().iter().enumerate() {
                b.insert(&key.country, key.year, name, matrix.get(r, c))?;
            }
        }
        Ok(b.build())
    }
}

fn parse_country(s: &str) -> Result<String, String> {
    if s.len() == 3 && s.bytes().all(|b| b.is_ascii_uppercase()) {
        Ok(s.to_string())
    } else {
        Err(format!("`{s}` is not an ISO-3166 alpha-3 code"))
    }
}

fn parse_year(s: &str) -> Result<i32, String> {
    if s.len() == 4 && s.bytes().all(|b| b.is_ascii_digit()) {
        Ok(s.parse().expect("four ASCII digits"))
    } else {
        Err(format!("`{s}` is not a 4-digit year"))
    }
}

fn parse_value(s: &str) -> Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    // Only plain decimal notation: reject `NA`, `null`, `inf`, `nan`.
    let plain = s.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'));
    match s.parse::<f64>() {
        Ok(v) if plain && v.is_finite() => Ok(Some(v)),
        _ => Err(format!("`{s}` is not a decimal value")),
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader)
}

fn row_error(line: u64, reason: impl Into<String>) -> PanelError {
    PanelError::MalformedRow { line, reason: reason.into() }
}

/// Reads a long CSV (`country,year,indicator,value`).
pub fn read_long_csv<R: Read>(reader: R, schema: Vec<IndicatorSpec>) -> Result<PanelDataset, PanelError> {
    let mut builder = PanelBuilder::new(schema)?;
    let mut rdr = csv_reader(reader);
    let mut records = rdr.records();
    match records.next() {
        None => return Err(row_error(1, "missing header")),
        Some(Err(e)) => return Err(row_error(1, e.to_string())),
        Some(Ok(h)) => {
            if h.iter().collect::<Vec<_>>() != LONG_HEADER {
                return Err(row_error(1, format!("header must be `{}`", LONG_HEADER.join(","))));
            }
        }
    }
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            row_error(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(row_error(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let country = parse_country(&rec[0]).map_err(|r| row_error(line, r))?;
        let year = parse_year(&rec[1]).map_err(|r| row_error(line, r))?;
        let value = parse_value(&rec[3]).map_err(|r| row_error(line, r))?;
        builder.insert(&country, year, &rec[2], value)?;
    }
    Ok(builder.build())
}

pub fn load_long_csv(path: &Path, schema: Vec<IndicatorSpec>) -> Result<PanelDataset, PanelError> {
    let file = File::open(path).map_err(|e| PanelError::io(path, e))?;
    read_long_csv(file, schema)
}

/// Reads a wide CSV (`country,year,<indicator>...`) and converts it to the
/// long representation. Empty fields become missing cells.
pub fn read_wide_csv<R: Read>(reader: R, schema: Vec<IndicatorSpec>) -> Result<PanelDataset, PanelError> {
    let mut builder = PanelBuilder::new(schema)?;
    let mut rdr = csv_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(row_error(1, "missing header")),
        Some(r) => r.map_err(|e| row_error(1, e.to_string()))?,
    };
    if header.len() < 2 || &header[0] != "country" || &header[1] != "year" {
        return Err(row_error(1, "wide header must start with `country,year`"));
    }
    let columns: Vec<String> = header.iter().skip(2).map(String::from).collect();
    for rec in records {
        let rec = rec.map_err(|e| row_error(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(row_error(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let country = parse_country(&rec[0]).map_err(|r| row_error(line, r))?;
        let year = parse_year(&rec[1]).map_err(|r| row_error(line, r))?;
        for (i, name) in columns.iter().enumerate() {
            let value = parse_value(&rec[i + 2]).map_err(|r| row_error(line, r))?;
            builder.insert(&country, year, name, value)?;
        }
    }
    Ok(builder.build())
}

pub fn load_wide_csv(path: &Path, schema: Vec<IndicatorSpec>) -> Result<PanelDataset, PanelError> {
    let file = File::open(path).map_err(|e| PanelError::io(path, e))?;
    read_wide_csv(file, schema)
}

/// Numeric rendering for emitted values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueFormat {
    /// Shortest representation that parses back to the same `f64`.
    Exact,
    /// Fixed number of decimals.
    Fixed(usize),
}

impl ValueFormat {
    pub fn render(self, v: f64) -> String {
        match self {
            ValueFormat::Exact => format!("{v}"),
            ValueFormat::Fixed(d) => format!("{v:.d$}"),
        }
    }
}

/// Writes every stored cell as a long CSV with LF line endings.
pub fn write_long_csv<W: Write>(dataset: &PanelDataset, out: W, format: ValueFormat) -> Result<(), PanelError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let err = |e: csv::Error| PanelError::Write(e.to_string());
    w.write_record(LONG_HEADER).map_err(err)?;
    for (country, year, indicator, value) in dataset.cells() {
        let v = value.map(|v| format.render(v)).unwrap_or_default();
        w.write_record([country, &year.to_string(), indicator, &v]).map_err(err)?;
    }
    w.flush().map_err(|e| PanelError::Write(e.to_string()))
}

/// Reads an indicator schema (`name,sub_index,unit,polarity`).
pub fn read_schema_csv<R: Read>(reader: R) -> Result<Vec<IndicatorSpec>, PanelError> {
    let mut rdr = csv_reader(reader);
    let mut records = rdr.records();
    match records.next() {
        Some(Ok(h)) if h.iter().collect::<Vec<_>>() == SCHEMA_HEADER => {}
        _ => return Err(row_error(1, format!("schema header must be `{}`", SCHEMA_HEADER.join(",")))),
    }
    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| row_error(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(row_error(line, "schema rows need 4 fields"));
        }
        let sub_index = rec[1].parse().map_err(|r: String| row_error(line, r))?;
        let polarity = rec[3].parse().map_err(|r: String| row_error(line, r))?;
        out.push(IndicatorSpec { name: rec[0].to_string(), sub_index, unit: rec[2].to_string(), polarity });
    }
    validate_schema(&out)?;
    Ok(out)
}

pub fn load_schema_csv(path: &Path) -> Result<Vec<IndicatorSpec>, PanelError> {
    let file = File::open(path).map_err(|e| PanelError::io(path, e))?;
    read_schema_csv(file)
}

pub fn write_schema_csv<W: Write>(schema: &[IndicatorSpec], out: W) -> Result<(), PanelError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let err = |e: csv::Error| PanelError::Write(e.to_string());
    w.write_record(SCHEMA_HEADER).map_err(err)?;
    for s in schema {
        w.write_record([s.name.as_str(), s.sub_index.key(), s.unit.as_str(), s.polarity.key()]).map_err(err)?;
    }
    w.flush().map_err(|e| PanelError::Write(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precedence {
    KeepBase,
    KeepOther,
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub dataset: PanelDataset,
    /// Cells populated in both inputs with different values.
    pub conflicts: usize,
}

/// Unions two datasets. A populated cell always wins over a missing one;
/// two different populated values are resolved by `precedence` and counted.
pub fn merge(base: &PanelDataset, other: &PanelDataset, precedence: Precedence) -> Result<MergeOutcome, PanelError> {
    let mut indicators = base.indicators.clone();
    for spec in &other.indicators {
        match indicators.iter().find(|s| s.name == spec.name) {
            Some(existing) => {
                if existing.sub_index != spec.sub_index || existing.polarity != spec.polarity {
                    return Err(PanelError::SchemaConflict(spec.name.clone()));
                }
            }
            None => indicators.push(spec.clone()),
        }
    }
    let mut cells = base.cells.clone();
    let mut conflicts = 0;
    for (key, &value) in &other.cells {
        match cells.get_mut(key) {
            None => {
                cells.insert(key.clone(), value);
            }
            Some(slot) => match (*slot, value) {
                (None, Some(v)) => *slot = Some(v),
                (Some(a), Some(b)) if a != b => {
                    conflicts += 1;
                    if precedence == Precedence::KeepOther {
                        *slot = Some(b);
                    }
                }
                _ => {}
            },
        }
    }
    Ok(MergeOutcome { dataset: PanelDataset::assemble(indicators, cells), conflicts })
}

/// Applies affine unit rules in order. Missing cells stay missing.
pub fn standardize_units(dataset: &PanelDataset, rules: &[UnitRule]) -> Result<PanelDataset, PanelError> {
    let mut out = dataset.clone();
    for rule in rules {
        let spec = out
            .indicators
            .iter_mut()
            .find(|s| s.name == rule.indicator)
            .ok_or_else(|| PanelError::UnknownIndicator(rule.indicator.clone()))?;
        if rule.scale == 0.0 || !rule.scale.is_finite() || !rule.offset.is_finite() {
            return Err(PanelError::ZeroScale(rule.indicator.clone()));
        }
        spec.unit = rule.target_unit.clone();
        for (key, value) in out.cells.iter_mut() {
            if key.indicator == rule.indicator {
                if let Some(v) = value {
                    *v = rule.scale * *v + rule.offset;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingnessRow {
    pub sub_index: Pillar,
    pub indicator: String,
    pub observed: usize,
    pub missing: usize,
    pub pct_missing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingnessReport {
    /// Grouped by pillar, schema order within a pillar.
    pub rows: Vec<MissingnessRow>,
    pub total_cells: usize,
}

impl MissingnessReport {
    pub fn row(&self, indicator: &str) -> Option<&MissingnessRow> {
        self.rows.iter().find(|r| r.indicator == indicator)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(MISSINGNESS_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{:.2}\n", r.sub_index, r.indicator, r.observed, r.missing, r.pct_missing));
        }
        s
    }
}

/// Per-indicator observed/missing counts over the full country x year grid.
pub fn missingness_report(dataset: &PanelDataset) -> Result<MissingnessReport, PanelError> {
    if dataset.countries.is_empty() || dataset.years.is_empty() || dataset.indicators.is_empty() {
        return Err(PanelError::EmptyDataset);
    }
    let total = dataset.countries.len() * dataset.years.len();
    let mut observed: HashMap<&str, usize> = HashMap::new();
    for (k, v) in &dataset.cells {
        if v.is_some() {
            *observed.entry(k.indicator.as_str()).or_default() += 1;
        }
    }
    let mut rows = Vec::new();
    for pillar in Pillar::ALL {
        for spec in dataset.indicators.iter().filter(|s| s.sub_index == pillar) {
            let obs = observed.get(spec.name.as_str()).copied().unwrap_or(0);
            let missing = total - obs;
            rows.push(MissingnessRow {
                sub_index: pillar,
                indicator: spec.name.clone(),
                observed: obs,
                missing,
                pct_missing: 100.0 * missing as f64 / total as f64,
            });
        }
    }
    Ok(MissingnessReport { rows, total_cells: total })
}

/// Selection of rows for [`to_matrix`].
#[derive(Debug, Clone, Default)]
pub struct Selection<'a> {
    pub countries: Option<&'a [String]>,
    pub years: Option<(i32, i32)>,
}

/// One row per retained (country, year), columns in the requested order.
pub fn to_matrix(
    dataset: &PanelDataset,
    indicator_names: &[String],
    selection: &Selection<'_>,
) -> Result<FeatureMatrix<f64>, PanelError> {
    for name in indicator_names {
        if dataset.indicator(name).is_none() {
            return Err(PanelError::UnknownIndicator(name.clone()));
        }
    }
    let countries: Vec<&String> = match selection.countries {
        Some(filter) => {
            for c in filter {
                if !dataset.countries.contains(c) {
                    return Err(PanelError::UnknownCountry(c.clone()));
                }
            }
            dataset.countries.iter().filter(|c| filter.contains(c)).collect()
        }
        None => dataset.countries.iter().collect(),
    };
    let years: Vec<i32> = match selection.years {
        Some((lo, hi)) => {
            if lo > hi {
                return Err(PanelError::InvalidYearRange(lo, hi));
            }
            dataset.years.iter().copied().filter(|y| (lo..=hi).contains(y)).collect()
        }
        None => dataset.years.clone(),
    };
    if countries.is_empty() || years.is_empty() || indicator_names.is_empty() {
        return Err(PanelError::EmptySelection);
    }
    let mut row_keys = Vec::with_capacity(countries.len() * years.len());
    for c in &countries {
        for &y in &years {
            row_keys.push(RowKey::new(c.as_str(), y));
        }
    }
    let mut cells = Array2::from_elem((row_keys.len(), indicator_names.len()), None);
    for (r, key) in row_keys.iter().enumerate() {
        for (c, name) in indicator_names.iter().enumerate() {
            cells[[r, c]] = dataset.value(&key.country, key.year, name);
        }
    }
    Ok(FeatureMatrix::from_cells(row_keys, indicator_names.to_vec(), cells)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<IndicatorSpec> {
        vec![
            IndicatorSpec::new("gdp_growth", Pillar::Economic, "percent", Polarity::Beneficial),
            IndicatorSpec::new("crime_index", Pillar::QualityOfLife, "index", Polarity::Adverse),
        ]
    }

    fn read(text: &str) -> Result<PanelDataset, PanelError> {
        read_long_csv(text.as_bytes(), schema())
    }

    #[test]
    fn single_row() {
        let d = read("country,year,indicator,value\nAUS,2020,gdp_growth,2.2\n").unwrap();
        assert_eq!(d.countries(), ["AUS"]);
        assert_eq!(d.years(), [2020]);
        assert_eq!(d.populated_count(), 1);
        assert_eq!(d.value("AUS", 2020, "gdp_growth"), Some(2.2));
    }

    #[test]
    fn header_only_is_empty() {
        let d = read("country,year,indicator,value\n").unwrap();
        assert_eq!(d.cell_count(), 0);
        assert!(d.countries().is_empty());
    }

    #[test]
    fn crlf_and_empty_values() {
        let d = read("country,year,indicator,value\r\nAUS,2020,gdp_growth,\r\nAUS,2021,gdp_growth,1\r\n").unwrap();
        assert_eq!(d.cell_count(), 2);
        assert_eq!(d.populated_count(), 1);
        assert_eq!(d.value("AUS", 2020, "gdp_growth"), None);
    }

    #[test]
    fn duplicate_cell() {
        let err = read("country,year,indicator,value\nAUS,2020,gdp_growth,2.2\nAUS,2020,gdp_growth,2.3\n").unwrap_err();
        assert!(matches!(err, PanelError::DuplicateCell { .. }));
    }

    #[test]
    fn malformed_rows_report_line() {
        for bad in [
            "AUS,2020,gdp_growth,NA",
            "AUS,2020,gdp_growth,null",
            "AU,2020,gdp_growth,1",
            "AUS,20x0,gdp_growth,1",
            "AUS,2020,gdp_growth",
            "AUS,2020,gdp_growth,inf",
        ] {
            let text = format!("country,year,indicator,value\nAUS,2019,gdp_growth,1\n{bad}\n");
            match read(&text) {
                Err(PanelError::MalformedRow { line, .. }) => assert_eq!(line, 3, "{bad}"),
                other => panic!("{bad}: {other:?}"),
            }
        }
        assert!(matches!(read("country,year,value\n"), Err(PanelError::MalformedRow { line: 1, .. })));
    }

    #[test]
    fn unknown_indicator() {
        let err = read("country,year,indicator,value\nAUS,2020,happiness,2\n").unwrap_err();
        assert!(matches!(err, PanelError::UnknownIndicator(_)));
    }

    #[test]
    fn merge_cases() {
        let a = read("country,year,indicator,value\nAUS,2020,gdp_growth,2\nAUS,2021,gdp_growth,\n").unwrap();
        let empty = PanelDataset::empty(schema()).unwrap();
        let m = merge(&a, &empty, Precedence::KeepBase).unwrap();
        assert_eq!(m.dataset, a);
        assert_eq!(m.conflicts, 0);

        let b = read("country,year,indicator,value\nAUS,2020,crime_index,40\n").unwrap();
        let m = merge(&a, &b, Precedence::KeepBase).unwrap();
        assert_eq!(m.dataset.value("AUS", 2020, "crime_index"), Some(40.0));
        assert_eq!(m.dataset.value("AUS", 2020, "gdp_growth"), Some(2.0));

        let c = read("country,year,indicator,value\nAUS,2020,gdp_growth,3\nAUS,2021,gdp_growth,4\n").unwrap();
        let m = merge(&a, &c, Precedence::KeepOther).unwrap();
        assert_eq!(m.conflicts, 1);
        assert_eq!(m.dataset.value("AUS", 2020, "gdp_growth"), Some(3.0));
        // Populated beats missing without counting as a conflict.
        assert_eq!(m.dataset.value("AUS", 2021, "gdp_growth"), Some(4.0));
        let m = merge(&a, &c, Precedence::KeepBase).unwrap();
        assert_eq!(m.dataset.value("AUS", 2020, "gdp_growth"), Some(2.0));
    }

    #[test]
    fn merge_schema_conflict() {
        let a = PanelDataset::empty(schema()).unwrap();
        let mut other = schema();
        other[1].polarity = Polarity::Beneficial;
        let b = PanelDataset::empty(other).unwrap();
        assert!(matches!(merge(&a, &b, Precedence::KeepBase), Err(PanelError::SchemaConflict(_))));
    }

    #[test]
    fn unit_rules() {
        let d = read(
            "country,year,indicator,value\nAUS,2020,gdp_growth,1500\nAUS,2021,gdp_growth,14\nAUS,2022,gdp_growth,\n",
        )
        .unwrap();
        let rule =
            |scale: f64| UnitRule { indicator: "gdp_growth".into(), scale, offset: 0.0, target_unit: "k".into() };
        let s = standardize_units(&d, &[rule(0.001)]).unwrap();
        assert!((s.value("AUS", 2020, "gdp_growth").unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(s.indicator("gdp_growth").unwrap().unit, "k");
        assert_eq!(s.cell_count(), 3);

        let s = standardize_units(&d, &[rule(1.0 / 1.4)]).unwrap();
        assert!((s.value("AUS", 2021, "gdp_growth").unwrap() - 10.0).abs() < 1e-12);

        let identity =
            UnitRule { indicator: "gdp_growth".into(), scale: 1.0, offset: 0.0, target_unit: "percent".into() };
        assert_eq!(standardize_units(&d, &[identity]).unwrap(), d);

        assert!(matches!(standardize_units(&d, &[rule(0.0)]), Err(PanelError::ZeroScale(_))));
        let unknown = UnitRule { indicator: "x".into(), scale: 1.0, offset: 0.0, target_unit: String::new() };
        assert!(matches!(standardize_units(&d, &[unknown]), Err(PanelError::UnknownIndicator(_))));
    }

    #[test]
    fn missingness_counts() {
        let text = "country,year,indicator,value\n\
            AUS,2020,gdp_growth,1\nAUS,2021,gdp_growth,\nAUS,2022,gdp_growth,3\nAUS,2023,gdp_growth,\nAUS,2024,gdp_growth,5\n\
            AUS,2020,crime_index,1\nAUS,2021,crime_index,1\nAUS,2022,crime_index,1\nAUS,2023,crime_index,1\nAUS,2024,crime_index,1\n";
        let d = read(text).unwrap();
        let rep = missingness_report(&d).unwrap();
        let g = rep.row("gdp_growth").unwrap();
        assert_eq!((g.observed, g.missing), (3, 2));
        assert!((g.pct_missing - 40.0).abs() < 1e-12);
        assert_eq!(rep.row("crime_index").unwrap().pct_missing, 0.0);
        let csv = rep.to_csv();
        assert!(csv.starts_with(MISSINGNESS_HEADER));
        assert!(csv.contains("economic,gdp_growth,3,2,40.00\n"));
        assert!(csv.contains("quality_of_life,crime_index,5,0,0.00\n"));

        let empty = PanelDataset::empty(schema()).unwrap();
        assert!(matches!(missingness_report(&empty), Err(PanelError::EmptyDataset)));
    }

    #[test]
    fn matrix_selection() {
        let text = "country,year,indicator,value\n\
            AUS,2020,gdp_growth,1\nAUS,2021,gdp_growth,2\nCAN,2020,gdp_growth,3\n\
            AUS,2020,crime_index,4\nAUS,2021,crime_index,5\nCAN,2021,crime_index,6\n";
        let d = read(text).unwrap();
        let names = vec!["gdp_growth".to_string(), "crime_index".to_string()];
        let only = vec!["AUS".to_string()];
        let m = to_matrix(&d, &names, &Selection { countries: Some(&only), years: None }).unwrap();
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.row_keys()[1], RowKey::new("AUS", 2021));
        let full = to_matrix(&d, &names, &Selection::default()).unwrap();
        assert_eq!((full.nrows(), full.ncols()), (4, 2));
        assert_eq!(full.missing_count(), 2);
        assert!(full.is_missing(2, 1) && full.is_missing(3, 0));

        let bad = vec!["nope".to_string()];
        assert!(matches!(to_matrix(&d, &bad, &Selection::default()), Err(PanelError::UnknownIndicator(_))));
        let sel = Selection { countries: None, years: Some((1990, 1995)) };
        assert!(matches!(to_matrix(&d, &names, &sel), Err(PanelError::EmptySelection)));
    }

    #[test]
    fn wide_reader_matches_long() {
        let wide = "country,year,gdp_growth,crime_index\nAUS,2020,1,\nCAN,2020,2.5,7\n";
        let w = read_wide_csv(wide.as_bytes(), schema()).unwrap();
        let long = read("country,year,indicator,value\nAUS,2020,gdp_growth,1\nAUS,2020,crime_index,\nCAN,2020,gdp_growth,2.5\nCAN,2020,crime_index,7\n").unwrap();
        assert_eq!(w, long);
    }

    #[test]
    fn schema_round_trip() {
        let mut buf = Vec::new();
        write_schema_csv(&default_schema(), &mut buf).unwrap();
        let back = read_schema_csv(buf.as_slice()).unwrap();
        assert_eq!(back, default_schema());
        assert_eq!(back.len(), 26);
    }
}
