//! JSON pipeline configuration.
//!
//! Only `data_sources` is required. Unknown keys are rejected at every
//! level. Relative paths are resolved against the directory holding the
//! configuration file.

use std::fmt;
use std::path::{Path, PathBuf};

use eoli_core::imputation::{BaseLearner, ForestImputeConfig, MiceConfig};
use eoli_core::index::{CompositeWeights, Normalization};
use eoli_core::panel::{Pillar, Precedence, UnitRule};
use eoli_core::regressors::{BoostConfig, ForestConfig, TreeConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io { path: PathBuf, reason: String },
    Parse { line: usize, column: usize, reason: String },
    UnknownKey { key: String, line: usize, column: usize },
    InvalidValue { key: String, reason: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, reason } => write!(f, "cannot read {}: {reason}", path.display()),
            ConfigError::Parse { line, column, reason } => {
                write!(f, "parse error at line {line}, column {column}: {reason}")
            }
            ConfigError::UnknownKey { key, line, column } => {
                write!(f, "unknown key `{key}` at line {line}, column {column}")
            }
            ConfigError::InvalidValue { key, reason } => write!(f, "invalid value for `{key}`: {reason}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    /// `country,year,indicator,value`
    #[default]
    Long,
    /// `country,year,<indicator>...`
    Wide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    #[serde(default)]
    pub format: SourceFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ImputerMethod {
    Mean,
    Mice,
    #[default]
    Forest,
}

impl ImputerMethod {
    pub fn key(self) -> &'static str {
        match self {
            ImputerMethod::Mean => "mean",
            ImputerMethod::Mice => "mice",
            ImputerMethod::Forest => "forest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MiceBase {
    Linear,
    #[default]
    Boost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostSettings {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
}

impl Default for BoostSettings {
    fn default() -> Self {
        BoostSettings { n_rounds: 100, learning_rate: 0.02, max_depth: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiceSettings {
    pub base_learner: MiceBase,
    pub n_cycles: usize,
    pub ridge_fallback: bool,
    pub boost: BoostSettings,
}

impl Default for MiceSettings {
    fn default() -> Self {
        MiceSettings {
            base_learner: MiceBase::Boost,
            n_cycles: 10,
            ridge_fallback: true,
            boost: BoostSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestSettings {
    pub n_trees: usize,
    pub max_iter: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub stop_on_increase: bool,
}

impl Default for ForestSettings {
    fn default() -> Self {
        ForestSettings {
            n_trees: 100,
            max_iter: 10,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            mtry: None,
            bootstrap: true,
            stop_on_increase: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ImputerSettings {
    pub method: ImputerMethod,
    pub mice: MiceSettings,
    pub forest: ForestSettings,
}

impl ImputerSettings {
    pub fn mice_config(&self, mice_base: MiceBase, seed: u64) -> MiceConfig {
        let m = &self.mice;
        let base_learner = match mice_base {
            MiceBase::Linear => BaseLearner::Linear,
            MiceBase::Boost => BaseLearner::Boost(BoostConfig {
                n_rounds: m.boost.n_rounds,
                learning_rate: m.boost.learning_rate,
                tree: TreeConfig::with_depth(m.boost.max_depth),
                seed,
            }),
        };
        MiceConfig { base_learner, n_cycles: m.n_cycles, seed, ridge_fallback: m.ridge_fallback }
    }

    pub fn forest_config(&self, seed: u64) -> ForestImputeConfig {
        let f = &self.forest;
        ForestImputeConfig {
            forest: ForestConfig {
                n_trees: f.n_trees,
                tree: TreeConfig {
                    max_depth: f.max_depth,
                    min_samples_split: f.min_samples_split,
                    min_samples_leaf: f.min_samples_leaf,
                },
                bootstrap: f.bootstrap,
                mtry: f.mtry,
                seed,
            },
            max_iter: f.max_iter,
            stop_on_increase: f.stop_on_increase,
        }
    }
}

/// Per-pillar value of some setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerPillar<T> {
    pub economic: T,
    pub institutional: T,
    pub quality_of_life: T,
    pub sustainability: T,
}

impl<T> PerPillar<T> {
    pub fn get(&self, pillar: Pillar) -> &T {
        match pillar {
            Pillar::Economic => &self.economic,
            Pillar::Institutional => &self.institutional,
            Pillar::QualityOfLife => &self.quality_of_life,
            Pillar::Sustainability => &self.sustainability,
        }
    }
}

fn one() -> usize {
    1
}

/// Factors kept per pillar; omitted pillars keep one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorCounts {
    #[serde(default = "one")]
    pub economic: usize,
    #[serde(default = "one")]
    pub institutional: usize,
    #[serde(default = "one")]
    pub quality_of_life: usize,
    #[serde(default = "one")]
    pub sustainability: usize,
}

impl Default for FactorCounts {
    fn default() -> Self {
        FactorCounts { economic: 1, institutional: 1, quality_of_life: 1, sustainability: 1 }
    }
}

impl FactorCounts {
    pub fn get(&self, pillar: Pillar) -> usize {
        match pillar {
            Pillar::Economic => self.economic,
            Pillar::Institutional => self.institutional,
            Pillar::QualityOfLife => self.quality_of_life,
            Pillar::Sustainability => self.sustainability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkMethod {
    Mean,
    MiceLinear,
    MiceBoost,
    Forest,
}

impl BenchmarkMethod {
    pub fn key(self) -> &'static str {
        match self {
            BenchmarkMethod::Mean => "mean",
            BenchmarkMethod::MiceLinear => "mice_linear",
            BenchmarkMethod::MiceBoost => "mice_boost",
            BenchmarkMethod::Forest => "forest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSettings {
    pub fraction: f64,
    pub runs: usize,
    /// Target indicators; default is the less-missing half of each pillar.
    pub columns: Option<Vec<String>>,
    pub methods: Vec<BenchmarkMethod>,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        BenchmarkSettings {
            fraction: 0.4,
            runs: 30,
            columns: None,
            methods: vec![
                BenchmarkMethod::Mean,
                BenchmarkMethod::MiceLinear,
                BenchmarkMethod::MiceBoost,
                BenchmarkMethod::Forest,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSettings {
    pub countries: Option<Vec<String>>,
    pub years: Option<[i32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalRanks {
    /// `country,rank` CSV.
    pub path: PathBuf,
    pub year: i32,
}

fn default_decade() -> [i32; 2] {
    [2012, 2021]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data_sources: Vec<DataSource>,
    /// Schema CSV (`name,sub_index,unit,polarity`); built-in schema when
    /// absent.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default = "default_precedence")]
    pub merge_precedence: Precedence,
    #[serde(default)]
    pub unit_rules: Vec<UnitRule>,
    #[serde(default)]
    pub imputer: ImputerSettings,
    /// Indicator lists per pillar; taken from the schema when absent.
    #[serde(default)]
    pub pillars: Option<PerPillar<Vec<String>>>,
    #[serde(default)]
    pub n_factors: FactorCounts,
    #[serde(default)]
    pub weights: CompositeWeights,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
    #[serde(default)]
    pub benchmark: BenchmarkSettings,
    #[serde(default)]
    pub selection: SelectionSettings,
    /// Inclusive year range for average ranks.
    #[serde(default = "default_decade")]
    pub decade: [i32; 2],
    #[serde(default)]
    pub external_ranks: Option<ExternalRanks>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_precedence() -> Precedence {
    Precedence::KeepBase
}

fn default_normalization() -> Normalization {
    Normalization::Pooled
}

impl PipelineConfig {
    /// Parses and validates configuration text. Paths stay as written.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig = serde_json::from_str(text).map_err(classify)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.data_sources.is_empty() {
            return Err(invalid("data_sources", "at least one source is required"));
        }
        self.weights.validate().map_err(|e| invalid("weights", e.to_string()))?;
        let b = &self.benchmark;
        if !(0.0..=1.0).contains(&b.fraction) {
            return Err(invalid("benchmark.fraction", format!("{} is outside [0, 1]", b.fraction)));
        }
        if b.runs == 0 {
            return Err(invalid("benchmark.runs", "must be at least 1"));
        }
        if b.methods.is_empty() {
            return Err(invalid("benchmark.methods", "at least one method is required"));
        }
        for pillar in Pillar::ALL {
            if self.n_factors.get(pillar) == 0 {
                return Err(invalid(&format!("n_factors.{}", pillar.key()), "must be at least 1"));
            }
        }
        if let Some(p) = &self.pillars {
            let mut seen = std::collections::BTreeSet::new();
            for pillar in Pillar::ALL {
                let names = p.get(pillar);
                if names.is_empty() {
                    return Err(invalid(&format!("pillars.{}", pillar.key()), "list is empty"));
                }
                for n in names {
                    if !seen.insert(n) {
                        return Err(invalid("pillars", format!("indicator `{n}` listed twice")));
                    }
                }
            }
        }
        if self.decade[0] > self.decade[1] {
            return Err(invalid("decade", "start year after end year"));
        }
        if let Some([lo, hi]) = self.selection.years {
            if lo > hi {
                return Err(invalid("selection.years", "start year after end year"));
            }
        }
        let m = &self.imputer.mice;
        if !(m.boost.learning_rate > 0.0 && m.boost.learning_rate <= 1.0) {
            return Err(invalid("imputer.mice.boost.learning_rate", "must lie in (0, 1]"));
        }
        if m.boost.n_rounds == 0 {
            return Err(invalid("imputer.mice.boost.n_rounds", "must be at least 1"));
        }
        let f = &self.imputer.forest;
        if f.n_trees == 0 {
            return Err(invalid("imputer.forest.n_trees", "must be at least 1"));
        }
        if f.max_iter == 0 {
            return Err(invalid("imputer.forest.max_iter", "must be at least 1"));
        }
        if f.min_samples_leaf == 0 || f.min_samples_split < 2 {
            return Err(invalid("imputer.forest", "min_samples_leaf >= 1 and min_samples_split >= 2 required"));
        }
        if f.mtry == Some(0) {
            return Err(invalid("imputer.forest.mtry", "must be at least 1"));
        }
        for rule in &self.unit_rules {
            if !(rule.scale.is_finite() && rule.offset.is_finite()) || rule.scale == 0.0 {
                return Err(invalid(
                    "unit_rules",
                    format!("rule for `{}` needs a finite nonzero scale", rule.indicator),
                ));
            }
        }
        Ok(())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for s in &mut self.data_sources {
            fix(&mut s.path);
        }
        if let Some(s) = &mut self.schema {
            fix(s);
        }
        if let Some(e) = &mut self.external_ranks {
            fix(&mut e.path);
        }
        fix(&mut self.output_dir);
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn classify(e: serde_json::Error) -> ConfigError {
    let (line, column) = (e.line(), e.column());
    let msg = e.to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return ConfigError::UnknownKey { key: rest[..end].to_string(), line, column };
        }
    }
    match e.classify() {
        serde_json::error::Category::Data => {
            ConfigError::InvalidValue { key: format!("line {line}, column {column}"), reason: msg }
        }
        _ => ConfigError::Parse { line, column, reason: msg },
    }
}

/// Reads, parses, validates and resolves a configuration file.
pub fn parse_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.to_path_buf(), reason: e.to_string() })?;
    let mut config = PipelineConfig::from_json(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.resolve_paths(&base);
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"data_sources": [{"path": "panel.csv"}]}"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = PipelineConfig::from_json(MINIMAL).unwrap();
        assert_eq!(
            c.weights,
            CompositeWeights { economic: 0.25, institutional: 0.25, quality_of_life: 0.35, sustainability: 0.15 }
        );
        assert_eq!(c.benchmark.fraction, 0.4);
        assert_eq!(c.benchmark.runs, 30);
        assert_eq!(c.decade, [2012, 2021]);
        assert_eq!(c.imputer.method, ImputerMethod::Forest);
        assert_eq!(c.n_factors.get(Pillar::QualityOfLife), 1);
    }

    #[test]
    fn misspelled_key_is_unknown() {
        let text = r#"{"data_sources": [{"path": "p.csv"}], "wieghts": {}}"#;
        match PipelineConfig::from_json(text).unwrap_err() {
            ConfigError::UnknownKey { key, line, .. } => {
                assert_eq!(key, "wieghts");
                assert_eq!(line, 1);
            }
            other => panic!("{other:?}"),
        }
        let nested = r#"{"data_sources": [{"path": "p.csv", "fmt": "long"}]}"#;
        assert!(matches!(PipelineConfig::from_json(nested), Err(ConfigError::UnknownKey { .. })));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let text = r#"{"data_sources": [{"path": "p.csv"}],
            "weights": {"economic": 0.3, "institutional": 0.3, "quality_of_life": 0.3, "sustainability": 0.3}}"#;
        assert!(
            matches!(PipelineConfig::from_json(text), Err(ConfigError::InvalidValue { key, .. }) if key == "weights")
        );
    }

    #[test]
    fn malformed_json_reports_location() {
        let err = PipelineConfig::from_json("{\n  \"data_sources\": [,]\n}").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn invalid_values() {
        let bad_fraction = r#"{"data_sources": [{"path": "p.csv"}], "benchmark": {"fraction": 1.5}}"#;
        assert!(matches!(PipelineConfig::from_json(bad_fraction), Err(ConfigError::InvalidValue { .. })));
        let no_runs = r#"{"data_sources": [{"path": "p.csv"}], "benchmark": {"runs": 0}}"#;
        assert!(matches!(PipelineConfig::from_json(no_runs), Err(ConfigError::InvalidValue { .. })));
        let wrong_type = r#"{"data_sources": [{"path": "p.csv"}], "seed": "x"}"#;
        assert!(matches!(PipelineConfig::from_json(wrong_type), Err(ConfigError::InvalidValue { .. })));
        let empty = r#"{"data_sources": []}"#;
        assert!(matches!(PipelineConfig::from_json(empty), Err(ConfigError::InvalidValue { .. })));
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut c = PipelineConfig::from_json(MINIMAL).unwrap();
        c.resolve_paths(Path::new("/data/run"));
        assert_eq!(c.data_sources[0].path, PathBuf::from("/data/run/panel.csv"));
        assert_eq!(c.output_dir, PathBuf::from("/data/run/out"));
    }

    #[test]
    fn digest_is_stable() {
        let a = PipelineConfig::from_json(MINIMAL).unwrap();
        let b = PipelineConfig::from_json(MINIMAL).unwrap();
        assert_eq!(a.digest(), b.digest());
        let mut c = a.clone();
        c.seed = 9;
        assert_ne!(a.digest(), c.digest());
    }
}
