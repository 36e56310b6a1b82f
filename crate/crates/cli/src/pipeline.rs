//! Stage orchestration: ingest, missingness, imputation, benchmarking,
//! per-pillar reduction, sub-index construction, ranking and reporting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use eoli_core::benchmark::{self, DensityCurve, EvaluationReport, Imputer, Method};
use eoli_core::imputation::{self, ImputationResult};
use eoli_core::index::{self, CompositeIndex, Level, RankTable, SubIndexSeries};
use eoli_core::panel::{self, default_schema, IndicatorSpec, PanelDataset, Pillar, Polarity, Selection, ValueFormat};
use eoli_core::reduction::{self, AdequacyReport, FactorModel, PcaResult};
use eoli_core::{FeatureMatrix, RowKey, Stream};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{BenchmarkMethod, ImputerMethod, PipelineConfig, SourceFormat};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_ARTIFACTS: [&str; 8] = [
    "missingness_report.csv",
    "imputed.csv",
    "pca_report.csv",
    "factor_report.csv",
    "kmo_report.csv",
    "subindex.csv",
    "rankings.csv",
    "categories.csv",
];

/// Decimal places of every emitted value.
const DECIMALS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Missingness,
    Impute,
    Benchmark,
    Reduce,
    BuildIndex,
    Rank,
    Categorize,
    Compare,
    Emit,
}

impl Stage {
    pub fn key(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Missingness => "missingness",
            Stage::Impute => "impute",
            Stage::Benchmark => "benchmark",
            Stage::Reduce => "reduce",
            Stage::BuildIndex => "build_index",
            Stage::Rank => "rank",
            Stage::Categorize => "categorize",
            Stage::Compare => "compare",
            Stage::Emit => "emit",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineError {
    pub stage: Stage,
    pub file: Option<PathBuf>,
    pub cause: String,
}

impl PipelineError {
    fn new(stage: Stage, cause: impl fmt::Display) -> Self {
        PipelineError { stage, file: None, cause: cause.to_string() }
    }

    fn at(stage: Stage, file: &Path, cause: impl fmt::Display) -> Self {
        PipelineError { stage, file: Some(file.to_path_buf()), cause: cause.to_string() }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed", self.stage)?;
        if let Some(p) = &self.file {
            write!(f, " ({})", p.display())?;
        }
        write!(f, ": {}", self.cause)
    }
}

impl std::error::Error for PipelineError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    ReportMissingness,
    Impute,
    Benchmark,
    Reduce,
    BuildIndex,
    Rank,
    Categorize,
    Compare,
    Run,
}

impl Command {
    pub fn key(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::ReportMissingness => "report-missingness",
            Command::Impute => "impute",
            Command::Benchmark => "benchmark",
            Command::Reduce => "reduce",
            Command::BuildIndex => "build-index",
            Command::Rank => "rank",
            Command::Categorize => "categorize",
            Command::Compare => "compare",
            Command::Run => "run",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub timings: Vec<StageTiming>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<ArtifactRecord>,
}

/// Files written by one invocation, removed again on failure.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<ArtifactRecord>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, PipelineError> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| PipelineError::at(Stage::Emit, dir, e))?;
        Ok(Outputs { dir: dir.to_path_buf(), created_dir, written: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| PipelineError::at(Stage::Emit, &path, e))?;
        self.written.retain(|r| r.file != name);
        self.written.push(ArtifactRecord {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn remove_all(&self) {
        for r in &self.written {
            let _ = fs::remove_file(self.dir.join(&r.file));
        }
        let _ = fs::remove_file(self.dir.join(MANIFEST_FILE));
        if self.created_dir {
            // Only succeeds when nothing else was put there.
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// Mutable run state shared by the stages.
pub struct Context<'a> {
    pub config: &'a PipelineConfig,
    timings: Vec<StageTiming>,
    warnings: Vec<String>,
    /// Echo warnings to stderr as they arise.
    pub echo: bool,
}

impl<'a> Context<'a> {
    pub fn new(config: &'a PipelineConfig) -> Self {
        Context { config, timings: Vec::new(), warnings: Vec::new(), echo: true }
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        if self.echo {
            eprintln!("warning: {message}");
        }
        self.warnings.push(message);
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn timed<T>(
        &mut self,
        stage: Stage,
        f: impl FnOnce(&mut Self) -> Result<T, PipelineError>,
    ) -> Result<T, PipelineError> {
        let start = Instant::now();
        let out = f(self);
        self.timings.push(StageTiming { stage, seconds: start.elapsed().as_secs_f64() });
        out
    }
}

/// Indicator names per pillar with their polarities.
#[derive(Debug, Clone)]
pub struct PillarLayout {
    pub pillar: Pillar,
    pub indicators: Vec<String>,
    pub polarities: Vec<Polarity>,
}

fn schema_for(config: &PipelineConfig) -> Result<Vec<IndicatorSpec>, PipelineError> {
    match &config.schema {
        Some(path) => panel::load_schema_csv(path).map_err(|e| PipelineError::at(Stage::Ingest, path, e)),
        None => Ok(default_schema()),
    }
}

/// Loads, merges (in listed order) and unit-standardizes the sources.
pub fn ingest(ctx: &mut Context<'_>) -> Result<PanelDataset, PipelineError> {
    ctx.timed(Stage::Ingest, |ctx| {
        let config = ctx.config;
        let schema = schema_for(config)?;
        let mut merged: Option<PanelDataset> = None;
        for source in &config.data_sources {
            let loaded = match source.format {
                SourceFormat::Long => panel::load_long_csv(&source.path, schema.clone()),
                SourceFormat::Wide => panel::load_wide_csv(&source.path, schema.clone()),
            }
            .map_err(|e| PipelineError::at(Stage::Ingest, &source.path, e))?;
            merged = Some(match merged {
                None => loaded,
                Some(base) => {
                    let outcome = panel::merge(&base, &loaded, config.merge_precedence)
                        .map_err(|e| PipelineError::at(Stage::Ingest, &source.path, e))?;
                    if outcome.conflicts > 0 {
                        ctx.warn(format!(
                            "{} conflicting cells while merging {}",
                            outcome.conflicts,
                            source.path.display()
                        ));
                    }
                    outcome.dataset
                }
            });
        }
        let dataset = merged.expect("config validation requires a source");
        panel::standardize_units(&dataset, &config.unit_rules).map_err(|e| PipelineError::new(Stage::Ingest, e))
    })
}

pub fn layout(config: &PipelineConfig, dataset: &PanelDataset) -> Result<Vec<PillarLayout>, PipelineError> {
    let mut out = Vec::with_capacity(4);
    for pillar in Pillar::ALL {
        let indicators: Vec<String> = match &config.pillars {
            Some(lists) => lists.get(pillar).clone(),
            None => dataset.indicators().iter().filter(|s| s.sub_index == pillar).map(|s| s.name.clone()).collect(),
        };
        if indicators.is_empty() {
            return Err(PipelineError::new(Stage::Ingest, format!("pillar `{pillar}` has no indicators")));
        }
        let mut polarities = Vec::with_capacity(indicators.len());
        for name in &indicators {
            let spec = dataset
                .indicator(name)
                .ok_or_else(|| PipelineError::new(Stage::Ingest, format!("unknown indicator `{name}`")))?;
            if spec.sub_index != pillar {
                return Err(PipelineError::new(
                    Stage::Ingest,
                    format!("indicator `{name}` belongs to `{}`, not `{pillar}`", spec.sub_index),
                ));
            }
            polarities.push(spec.polarity);
        }
        out.push(PillarLayout { pillar, indicators, polarities });
    }
    Ok(out)
}

pub fn missingness(ctx: &mut Context<'_>, dataset: &PanelDataset) -> Result<String, PipelineError> {
    ctx.timed(Stage::Missingness, |_| {
        panel::missingness_report(dataset).map(|r| r.to_csv()).map_err(|e| PipelineError::new(Stage::Missingness, e))
    })
}

/// One pillar's observed block and its completed version.
#[derive(Debug, Clone)]
pub struct PillarData {
    pub layout: PillarLayout,
    pub observed: FeatureMatrix<f64>,
    pub completed: FeatureMatrix<f64>,
}

fn pillar_seed(seed: u64, pillar: Pillar, offset: u64) -> u64 {
    Stream::derive(seed, offset + pillar.position() as u64).next_u64()
}

fn selection(config: &PipelineConfig) -> Selection<'_> {
    Selection { countries: config.selection.countries.as_deref(), years: config.selection.years.map(|[a, b]| (a, b)) }
}

/// Pillar block restricted to rows with at least one observed value.
fn observed_block(
    ctx: &mut Context<'_>,
    dataset: &PanelDataset,
    layout: &PillarLayout,
    stage: Stage,
) -> Result<FeatureMatrix<f64>, PipelineError> {
    let full = panel::to_matrix(dataset, &layout.indicators, &selection(ctx.config))
        .map_err(|e| PipelineError::new(stage, e))?;
    let keep: Vec<usize> = (0..full.nrows()).filter(|&r| (0..full.ncols()).any(|c| !full.is_missing(r, c))).collect();
    let dropped = full.nrows() - keep.len();
    if dropped > 0 {
        ctx.warn(format!("{}: {dropped} country-years with no observed indicator left out", layout.pillar));
    }
    if keep.is_empty() {
        return Err(PipelineError::new(stage, format!("pillar `{}` has no observed values", layout.pillar)));
    }
    Ok(full.select_rows(&keep))
}

fn run_imputer(
    config: &PipelineConfig,
    matrix: &FeatureMatrix<f64>,
    seed: u64,
) -> Result<ImputationResult<f64>, imputation::ImputationError> {
    let imp = &config.imputer;
    match imp.method {
        ImputerMethod::Mean => imputation::mean_impute(matrix),
        ImputerMethod::Mice => imputation::mice_impute(matrix, &imp.mice_config(imp.mice.base_learner, seed)),
        ImputerMethod::Forest => imputation::forest_impute(matrix, &imp.forest_config(seed)),
    }
}

/// Imputes each pillar block separately.
pub fn impute(ctx: &mut Context<'_>, dataset: &PanelDataset) -> Result<Vec<PillarData>, PipelineError> {
    let layouts = layout(ctx.config, dataset)?;
    ctx.timed(Stage::Impute, |ctx| {
        let mut out = Vec::with_capacity(4);
        for layout in layouts {
            let observed = observed_block(ctx, dataset, &layout, Stage::Impute)?;
            let seed = pillar_seed(ctx.config.seed, layout.pillar, 0);
            let result = run_imputer(ctx.config, &observed, seed)
                .map_err(|e| PipelineError::new(Stage::Impute, format!("{}: {e}", layout.pillar)))?;
            if result.ridge_activations > 0 {
                ctx.warn(format!(
                    "{}: ridge fallback used in {} least-squares fits",
                    layout.pillar, result.ridge_activations
                ));
            }
            out.push(PillarData { layout, observed, completed: result.completed });
        }
        Ok(out)
    })
}

pub fn imputed_csv(dataset: &PanelDataset, pillars: &[PillarData]) -> Result<Vec<u8>, PipelineError> {
    let schema = dataset.indicators();
    let mut merged: Option<PanelDataset> = None;
    for p in pillars {
        let part = PanelDataset::from_matrix(&p.completed, schema).map_err(|e| PipelineError::new(Stage::Emit, e))?;
        merged = Some(match merged {
            None => part,
            Some(base) => {
                panel::merge(&base, &part, panel::Precedence::KeepBase)
                    .map_err(|e| PipelineError::new(Stage::Emit, e))?
                    .dataset
            }
        });
    }
    let mut buf = Vec::new();
    panel::write_long_csv(&merged.expect("four pillars"), &mut buf, ValueFormat::Fixed(DECIMALS))
        .map_err(|e| PipelineError::new(Stage::Emit, e))?;
    Ok(buf)
}

/// Benchmark targets: configured columns in this pillar, or the less-missing
/// half (rounded up) of the pillar's indicators.
fn benchmark_columns(config: &PipelineConfig, data: &PillarData) -> Vec<String> {
    let names = &data.layout.indicators;
    match &config.benchmark.columns {
        Some(cols) => names.iter().filter(|n| cols.contains(n)).cloned().collect(),
        None => {
            let mut order: Vec<usize> = (0..names.len()).collect();
            order.sort_by_key(|&c| (data.observed.column_missing_count(c), c));
            let take = names.len().div_ceil(2);
            let mut picked: Vec<usize> = order.into_iter().take(take).collect();
            picked.sort_unstable();
            picked.into_iter().map(|c| names[c].clone()).collect()
        }
    }
}

fn benchmark_methods(config: &PipelineConfig, seed: u64) -> Vec<Method> {
    let imp = &config.imputer;
    config
        .benchmark
        .methods
        .iter()
        .map(|m| {
            let imputer = match m {
                BenchmarkMethod::Mean => Imputer::Mean,
                BenchmarkMethod::MiceLinear => Imputer::Mice(imp.mice_config(crate::config::MiceBase::Linear, seed)),
                BenchmarkMethod::MiceBoost => Imputer::Mice(imp.mice_config(crate::config::MiceBase::Boost, seed)),
                BenchmarkMethod::Forest => Imputer::Forest(imp.forest_config(seed)),
            };
            Method::new(m.key(), imputer)
        })
        .collect()
}

/// Masking benchmark per pillar plus original-versus-imputed densities for
/// every indicator.
pub fn run_benchmarks(
    ctx: &mut Context<'_>,
    pillars: &[PillarData],
) -> Result<(EvaluationReport, Vec<DensityCurve<f64>>), PipelineError> {
    ctx.timed(Stage::Benchmark, |ctx| {
        let config = ctx.config;
        if let Some(cols) = &config.benchmark.columns {
            for c in cols {
                if !pillars.iter().any(|p| p.layout.indicators.contains(c)) {
                    return Err(PipelineError::new(Stage::Benchmark, format!("unknown benchmark column `{c}`")));
                }
            }
        }
        let mut combined: Option<EvaluationReport> = None;
        for data in pillars {
            let columns = benchmark_columns(config, data);
            if columns.is_empty() {
                continue;
            }
            let seed = pillar_seed(config.seed, data.layout.pillar, 4);
            let methods = benchmark_methods(config, seed);
            let report = benchmark::run_benchmark(
                &data.observed,
                &methods,
                config.benchmark.fraction,
                &columns,
                config.benchmark.runs,
                seed,
            )
            .map_err(|e| PipelineError::new(Stage::Benchmark, format!("{}: {e}", data.layout.pillar)))?;
            combined = Some(match combined {
                None => report,
                Some(mut acc) => {
                    acc.summaries.extend(report.summaries);
                    acc.runs.extend(report.runs);
                    acc
                }
            });
        }
        let report = combined.ok_or_else(|| PipelineError::new(Stage::Benchmark, "no benchmark columns selected"))?;

        let mut curves = Vec::new();
        for data in pillars {
            for (c, name) in data.layout.indicators.iter().enumerate() {
                let original = data.observed.observed_column(c);
                let imputed = data.completed.column(c).to_vec();
                if original.is_empty() {
                    continue;
                }
                let pair = benchmark::compare_densities(name, &original, &imputed)
                    .map_err(|e| PipelineError::new(Stage::Benchmark, format!("{name}: {e}")))?;
                curves.extend(pair);
            }
        }
        Ok((report, curves))
    })
}

/// Reduction outputs for one pillar.
#[derive(Debug, Clone)]
pub struct PillarReduction {
    pub pillar: Pillar,
    pub polarities: Vec<Polarity>,
    pub pca: PcaResult<f64>,
    pub model: FactorModel<f64>,
    pub adequacy: Option<AdequacyReport<f64>>,
    /// Raw composite factor score per row.
    pub raw_scores: BTreeMap<RowKey, f64>,
}

pub fn reduce(ctx: &mut Context<'_>, pillars: &[PillarData]) -> Result<Vec<PillarReduction>, PipelineError> {
    ctx.timed(Stage::Reduce, |ctx| {
        let mut out = Vec::with_capacity(pillars.len());
        for data in pillars {
            let pillar = data.layout.pillar;
            let err = |e: reduction::ReductionError| PipelineError::new(Stage::Reduce, format!("{pillar}: {e}"));
            let standardized = reduction::zscore(&data.completed, true).map_err(err)?;
            for name in &standardized.dropped {
                ctx.warn(format!("{pillar}: constant indicator `{name}` dropped before reduction"));
            }
            let z = standardized.matrix;
            if z.ncols() == 0 {
                return Err(PipelineError::new(Stage::Reduce, format!("{pillar}: every indicator is constant")));
            }
            let polarities: Vec<Polarity> = z
                .column_keys()
                .iter()
                .map(|n| {
                    data.layout.polarities[data.layout.indicators.iter().position(|m| m == n).expect("kept column")]
                })
                .collect();
            let k = ctx.config.n_factors.get(pillar);
            if k > z.ncols() {
                return Err(PipelineError::new(
                    Stage::Reduce,
                    format!("{pillar}: {k} factors requested from {} indicators", z.ncols()),
                ));
            }
            let pca = reduction::pca(&z, z.ncols()).map_err(err)?;
            let model = reduction::factor_analysis(&z, k).map_err(err)?;
            for w in &model.warnings {
                ctx.warn(format!("{pillar}: {w}"));
            }
            if model.adequacy.is_none() {
                ctx.warn(format!("{pillar}: KMO needs at least two indicators; not computed"));
            }
            let scores = reduction::factor_scores(&z, &model).map_err(err)?;
            if scores.ridge_applied {
                ctx.warn(format!("{pillar}: correlation matrix needed ridge regularization for factor scores"));
            }
            let weights = model.factor_weights();
            let raw_scores = z
                .row_keys()
                .iter()
                .enumerate()
                .map(|(r, key)| {
                    let s = if k == 1 {
                        scores.scores[[r, 0]]
                    } else {
                        (0..k).map(|j| weights[j] * scores.scores[[r, j]]).sum()
                    };
                    (key.clone(), s)
                })
                .collect();
            out.push(PillarReduction { pillar, polarities, pca, adequacy: model.adequacy.clone(), model, raw_scores });
        }
        Ok(out)
    })
}

pub fn reduction_reports(reductions: &[PillarReduction]) -> [(&'static str, Vec<u8>); 3] {
    let mut pca = format!("{}\n", reduction::PCA_REPORT_HEADER);
    let mut factor = format!("{}\n", reduction::FACTOR_REPORT_HEADER);
    let mut kmo = format!("{}\n", reduction::KMO_REPORT_HEADER);
    for r in reductions {
        let block = r.pillar.key();
        for line in reduction::pca_report_lines(block, &r.pca) {
            pca.push_str(&line);
            pca.push('\n');
        }
        for line in reduction::factor_report_lines(block, &r.model) {
            factor.push_str(&line);
            factor.push('\n');
        }
        if let Some(a) = &r.adequacy {
            kmo.push_str(&reduction::kmo_report_line(block, a));
            kmo.push('\n');
        }
    }
    [
        ("pca_report.csv", pca.into_bytes()),
        ("factor_report.csv", factor.into_bytes()),
        ("kmo_report.csv", kmo.into_bytes()),
    ]
}

pub fn build_index(
    ctx: &mut Context<'_>,
    reductions: &[PillarReduction],
) -> Result<(Vec<SubIndexSeries>, CompositeIndex), PipelineError> {
    ctx.timed(Stage::BuildIndex, |ctx| {
        let mut subs = Vec::with_capacity(4);
        for r in reductions {
            let s = index::build_sub_index(r.pillar, &r.raw_scores, &r.model, &r.polarities, ctx.config.normalization)
                .map_err(|e| PipelineError::new(Stage::BuildIndex, format!("{}: {e}", r.pillar)))?;
            subs.push(s);
        }
        let composite =
            index::compose_eoli(&subs, &ctx.config.weights).map_err(|e| PipelineError::new(Stage::BuildIndex, e))?;
        for note in composite.coverage.clone() {
            ctx.warn(format!("coverage: {note}"));
        }
        Ok((subs, composite))
    })
}

fn index_bytes(
    f: impl FnOnce(&mut Vec<u8>) -> Result<(), index::IndexError>,
    stage: Stage,
) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| PipelineError::new(stage, e))?;
    Ok(buf)
}

pub fn rank(ctx: &mut Context<'_>, composite: &CompositeIndex) -> Result<Vec<RankTable>, PipelineError> {
    ctx.timed(Stage::Rank, |ctx| {
        let tables = index::rank_all_years(composite);
        for t in &tables {
            if !t.excluded.is_empty() {
                ctx.warn(format!("{}: not ranked for missing pillar data: {}", t.year, t.excluded.join(" ")));
            }
        }
        Ok(tables)
    })
}

pub fn categorize(
    ctx: &mut Context<'_>,
    composite: &CompositeIndex,
) -> Result<Vec<(i32, BTreeMap<String, Level>)>, PipelineError> {
    ctx.timed(Stage::Categorize, |ctx| {
        let mut out = Vec::new();
        for year in composite.years() {
            match index::categorize_levels(composite, year) {
                Ok(levels) => out.push((year, levels)),
                Err(index::IndexError::TooFewCountries { year, found }) => {
                    ctx.warn(format!("{year}: only {found} countries, no quartile levels"));
                }
                Err(e) => return Err(PipelineError::new(Stage::Categorize, e)),
            }
        }
        Ok(out)
    })
}

fn compare(ctx: &mut Context<'_>, composite: &CompositeIndex) -> Result<Option<Vec<u8>>, PipelineError> {
    let Some(ext) = ctx.config.external_ranks.clone() else {
        return Ok(None);
    };
    ctx.timed(Stage::Compare, |_| {
        let file = fs::File::open(&ext.path).map_err(|e| PipelineError::at(Stage::Compare, &ext.path, e))?;
        let external = index::read_external_ranks(file).map_err(|e| PipelineError::at(Stage::Compare, &ext.path, e))?;
        let table = index::rank_year(composite, ext.year).map_err(|e| PipelineError::new(Stage::Compare, e))?;
        let cmp =
            index::compare_external_ranks(&table, &external).map_err(|e| PipelineError::new(Stage::Compare, e))?;
        index_bytes(|b| index::write_comparison_csv(&cmp, b), Stage::Compare).map(Some)
    })
}

fn produce(ctx: &mut Context<'_>, command: Command, out: &mut Outputs) -> Result<(), PipelineError> {
    let dataset = ingest(ctx)?;
    if command == Command::Ingest {
        let mut buf = Vec::new();
        panel::write_long_csv(&dataset, &mut buf, ValueFormat::Fixed(DECIMALS))
            .map_err(|e| PipelineError::new(Stage::Emit, e))?;
        return out.write("panel.csv", &buf);
    }
    if matches!(command, Command::ReportMissingness | Command::Run) {
        let report = missingness(ctx, &dataset)?;
        out.write("missingness_report.csv", report.as_bytes())?;
        if command == Command::ReportMissingness {
            return Ok(());
        }
    }
    let pillars = impute(ctx, &dataset)?;
    if matches!(command, Command::Impute | Command::Run) {
        out.write("imputed.csv", &imputed_csv(&dataset, &pillars)?)?;
    }
    match command {
        Command::Impute => return Ok(()),
        Command::Benchmark => {
            let (report, curves) = run_benchmarks(ctx, &pillars)?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf).map_err(|e| PipelineError::new(Stage::Emit, e))?;
            out.write("benchmark_report.csv", &buf)?;
            let mut buf = Vec::new();
            benchmark::write_kde_csv(&curves, &mut buf).map_err(|e| PipelineError::new(Stage::Emit, e))?;
            return out.write("kde.csv", &buf);
        }
        _ => {}
    }
    let reductions = reduce(ctx, &pillars)?;
    if matches!(command, Command::Reduce | Command::Run) {
        for (name, bytes) in reduction_reports(&reductions) {
            out.write(name, &bytes)?;
        }
        if command == Command::Reduce {
            return Ok(());
        }
    }
    let (subs, composite) = build_index(ctx, &reductions)?;
    if matches!(command, Command::BuildIndex | Command::Run) {
        out.write("subindex.csv", &index_bytes(|b| index::write_subindex_csv(&composite, b), Stage::Emit)?)?;
    }
    if matches!(command, Command::Rank | Command::Run) {
        let tables = rank(ctx, &composite)?;
        out.write("rankings.csv", &index_bytes(|b| index::write_rankings_csv(&tables, b), Stage::Emit)?)?;
        if command == Command::Rank {
            let [from, to] = ctx.config.decade;
            let rows = ctx.timed(Stage::Rank, |_| {
                index::average_ranks(&composite, (from, to), Some(&subs))
                    .map_err(|e| PipelineError::new(Stage::Rank, e))
            })?;
            out.write("average_ranks.csv", &index_bytes(|b| index::write_average_ranks_csv(&rows, b), Stage::Emit)?)?;
        }
    }
    if matches!(command, Command::Categorize | Command::Run) {
        let levels = categorize(ctx, &composite)?;
        out.write("categories.csv", &index_bytes(|b| index::write_categories_csv(&levels, b), Stage::Emit)?)?;
    }
    if matches!(command, Command::Compare | Command::Run) {
        match compare(ctx, &composite)? {
            Some(bytes) => out.write("comparison.csv", &bytes)?,
            None if command == Command::Compare => {
                return Err(PipelineError::new(Stage::Compare, "config has no `external_ranks` entry"));
            }
            None => {}
        }
    }
    Ok(())
}

/// Runs `command`, writes its artifacts and `manifest.json` into the
/// configured output directory. On failure every file written by this
/// invocation is removed.
pub fn execute(command: Command, config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    execute_with(command, config, true)
}

pub fn execute_with(command: Command, config: &PipelineConfig, echo: bool) -> Result<RunManifest, PipelineError> {
    let mut ctx = Context::new(config);
    ctx.echo = echo;
    let mut out = Outputs::new(&config.output_dir)?;
    let result = produce(&mut ctx, command, &mut out).and_then(|()| {
        let manifest = RunManifest {
            tool: "eoli".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.key().into(),
            config_digest: config.digest(),
            seed: config.seed,
            timings: ctx.timings.clone(),
            warnings: ctx.warnings.clone(),
            artifacts: out.written.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = out.dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| PipelineError::at(Stage::Emit, &path, e))?;
        Ok(manifest)
    });
    if result.is_err() {
        out.remove_all();
    }
    result
}

/// Alias for the full pipeline.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    execute(Command::Run, config)
}
