//! Pipeline stages. Each stage reads its inputs from files (the raw inputs or
//! earlier stages' intermediates under the output directory) and writes its
//! own artifacts, so a staged run and an end-to-end run produce the same
//! files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use vinmap_core::allocator::{
    build_problem, multi_start_average, AllocationMatrix, AllocationProblem, MultiStart,
};
use vinmap_core::linkage::{
    match_labels, prices_by_appellation, targets_from_appellations, Dictionary, LabelMatch,
};
use vinmap_core::model::{department_of, AppellationRecord, CountyRecord};
use vinmap_core::pseudo::{inject_pseudo_appellations, PseudoWarning};
use vinmap_core::synth::{generate, score_recovery, uniform_spread};
use vinmap_core::validate::{aggregate, compare_aggregates, compare_solutions, AggregateKey};
use vinmap_core::valuation::{build_portfolio, summarize_by_category, summarize_by_region};
use vinmap_core::yields::expected_yields;

use crate::config::{parse_truncation, ConfigError, PipelineConfig};
use crate::formats::{self, ComparisonJson, MatchRow};
use crate::ingest::{self, IngestError, IngestReport, SecretMarkers};
use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Link,
    Yields,
    Solve,
    Validate,
    Value,
    Synth,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Link => "link",
            Stage::Yields => "yields",
            Stage::Solve => "solve",
            Stage::Validate => "validate",
            Stage::Value => "value",
            Stage::Synth => "synth",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}` needs {path}; run `vinmap {prior}` first")]
    MissingIntermediate {
        stage: Stage,
        prior: Stage,
        path: String,
    },
    #[error("stage `{stage}` failed: {source:#}")]
    Stage { stage: Stage, source: anyhow::Error },
}

impl PipelineError {
    /// 1 for configuration errors, 2 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<anyhow::Error>> StageContext<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: e.into(),
        })
    }
}

fn ingest_err(e: IngestError) -> PipelineError {
    if e.is_config() {
        PipelineError::Config(ConfigError::Invalid {
            key: "columns",
            message: e.to_string(),
        })
    } else {
        PipelineError::Stage {
            stage: Stage::Ingest,
            source: e.into(),
        }
    }
}

/// Locations of every artifact under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn ingest_dir(&self) -> PathBuf {
        self.root.join("ingest")
    }
    pub fn ingest_report(&self) -> PathBuf {
        self.ingest_dir().join("ingest_report.jsonl")
    }
    pub fn appellations(&self) -> PathBuf {
        self.ingest_dir().join("appellations.csv")
    }
    pub fn counties(&self) -> PathBuf {
        self.ingest_dir().join("counties.csv")
    }
    pub fn mask(&self) -> PathBuf {
        self.ingest_dir().join("mask.csv")
    }
    pub fn prices(&self) -> PathBuf {
        self.ingest_dir().join("prices.csv")
    }
    pub fn known_cells(&self) -> PathBuf {
        self.ingest_dir().join("known_cells.csv")
    }
    pub fn reference(&self) -> PathBuf {
        self.ingest_dir().join("reference_aggregates.csv")
    }
    pub fn problem_dir(&self) -> PathBuf {
        self.root.join("problem")
    }
    pub fn match_report(&self) -> PathBuf {
        self.root.join("link").join("match_report.csv")
    }
    pub fn link_report(&self) -> PathBuf {
        self.root.join("link").join("link_report.json")
    }
    pub fn yields(&self) -> PathBuf {
        self.root.join("yields").join("expected_yields.csv")
    }
    pub fn solution(&self) -> PathBuf {
        self.root.join("solve").join("solution.csv")
    }
    pub fn starts_dir(&self) -> PathBuf {
        self.root.join("solve").join("starts")
    }
    pub fn solve_report(&self) -> PathBuf {
        self.root.join("solve").join("solve_report.json")
    }
    pub fn validate_dir(&self) -> PathBuf {
        self.root.join("validate")
    }
    pub fn value_dir(&self) -> PathBuf {
        self.root.join("value")
    }
    pub fn portfolio(&self) -> PathBuf {
        self.value_dir().join("portfolio.csv")
    }
    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }
}

fn require(path: PathBuf, stage: Stage, prior: Stage) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingIntermediate {
            stage,
            prior,
            path: path.display().to_string(),
        })
    }
}

fn dictionary(cfg: &PipelineConfig) -> Result<Dictionary, PipelineError> {
    if cfg.inputs.acronyms.is_none() && cfg.inputs.stopwords.is_none() {
        return Ok(Dictionary::french_default());
    }
    let read = |p: &Option<PathBuf>| -> Result<String, PipelineError> {
        match p {
            Some(p) => std::fs::read_to_string(p).map_err(|e| {
                PipelineError::Config(ConfigError::Invalid {
                    key: "inputs",
                    message: format!("{}: {e}", p.display()),
                })
            }),
            None => Ok(String::new()),
        }
    };
    Dictionary::parse(&read(&cfg.inputs.acronyms)?, &read(&cfg.inputs.stopwords)?).map_err(|e| {
        PipelineError::Config(ConfigError::Invalid {
            key: "inputs",
            message: e.to_string(),
        })
    })
}

fn read_input(cfg: &PipelineConfig, path: &Path) -> Result<Table, PipelineError> {
    Table::read(path, &cfg.csv.format()).map_err(|e| ingest_err(e.into()))
}

/// Appellations read back from the canonical file.
fn read_appellations(path: &Path) -> anyhow::Result<Vec<AppellationRecord>> {
    let t = formats::read_table(path)?;
    let p = ingest::parse_customs_by_appellation(
        &t,
        &Default::default(),
        vinmap_core::cvi::TruncationRule::Keep,
        &SecretMarkers::new(&[]),
    )?;
    if let Some(e) = p.report.row_errors.first() {
        return Err(anyhow!(
            "{}: line {}: {}",
            path.display(),
            e.line,
            e.message
        ));
    }
    Ok(p.value)
}

fn read_counties(path: &Path) -> anyhow::Result<Vec<CountyRecord>> {
    let t = formats::read_table(path)?;
    let p = ingest::parse_customs_by_county(&t, &Default::default(), &SecretMarkers::new(&[]))?;
    if let Some(e) = p.report.row_errors.first() {
        return Err(anyhow!(
            "{}: line {}: {}",
            path.display(),
            e.line,
            e.message
        ));
    }
    Ok(p.value)
}

fn read_known_cells(path: &Path) -> anyhow::Result<BTreeMap<(String, String), f64>> {
    let m = formats::read_solution(path)?;
    Ok(m.cells)
}

// ingest

/// Parses the raw inputs and writes canonical records, the allocation
/// problem triple and the ingest report.
pub fn run_ingest(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let stage = Stage::Ingest;
    let layout = Layout::new(&cfg.output_dir);
    let secret = SecretMarkers::new(&cfg.csv.secret_markers);
    let dict = dictionary(cfg)?;
    let rule = parse_truncation(&cfg.columns.appellations.truncation)?;
    let mut reports: Vec<IngestReport> = Vec::new();

    let t = read_input(cfg, cfg.inputs.required("appellations")?)?;
    let apps = ingest::parse_customs_by_appellation(&t, &cfg.columns.appellations, rule, &secret)
        .map_err(ingest_err)?;
    reports.push(apps.report);
    let t = read_input(cfg, cfg.inputs.required("counties")?)?;
    let counties =
        ingest::parse_customs_by_county(&t, &cfg.columns.counties, &secret).map_err(ingest_err)?;
    reports.push(counties.report);
    let mut counties = counties.value;

    if let Some(p) = &cfg.inputs.county_regions {
        let m = ingest::parse_text_map("county_regions", &read_input(cfg, p)?, "insee", "region")
            .map_err(ingest_err)?;
        for c in &mut counties {
            if let Some(r) = m.value.get(&c.insee_code) {
                c.agricultural_region_id = r.clone();
            }
        }
        reports.push(m.report);
    }

    let t = read_input(cfg, cfg.inputs.required("authorizations")?)?;
    let mask = ingest::parse_inao_authorizations(
        &t,
        &cfg.columns.authorizations,
        &apps.value,
        &counties,
        cfg.weights.from_authorizations,
    )
    .map_err(ingest_err)?;
    reports.push(mask.report);

    let non_pgi = match &cfg.inputs.non_pgi_by_department {
        Some(p) => {
            let d = ingest::parse_department_surfaces(&read_input(cfg, p)?, &secret)
                .map_err(ingest_err)?;
            reports.push(d.report);
            d.value
        }
        None => BTreeMap::new(),
    };
    let injected = inject_pseudo_appellations(&apps.value, &counties, &mask.value, &non_pgi);
    let mut pseudo_report = IngestReport {
        file: "pseudo_appellations".into(),
        ..IngestReport::default()
    };
    pseudo_report.records = injected.added.len();
    pseudo_report.notes = injected
        .warnings
        .iter()
        .map(|w| match w {
            PseudoWarning::NoCounties {
                department,
                surface,
            } => {
                format!("department {department}: {surface} ha but no county; skipped")
            }
            PseudoWarning::InvalidSurface {
                department,
                surface,
            } => {
                format!("department {department}: invalid surface {surface}; skipped")
            }
            PseudoWarning::CodeCollision { department, code } => {
                format!("department {department}: code {code} already exists; skipped")
            }
        })
        .collect();
    reports.push(pseudo_report);
    let appellations = injected.appellations;
    let mut mask = injected.mask;
    mask.fill_weights(&appellations, &cfg.weights.category_weights());

    let t = read_input(cfg, cfg.inputs.required("prices")?)?;
    let prices = ingest::parse_price_scale(&t, &cfg.columns.prices, &dict).map_err(ingest_err)?;
    reports.push(prices.report);

    let known = match &cfg.inputs.champagne {
        Some(p) => {
            let k =
                ingest::parse_known_cells(&read_input(cfg, p)?, &counties).map_err(ingest_err)?;
            reports.push(k.report);
            k.value
        }
        None => BTreeMap::new(),
    };

    if let Some(p) = &cfg.inputs.reference_aggregates {
        let r = ingest::parse_reference_aggregates(&read_input(cfg, p)?).map_err(ingest_err)?;
        formats::write_csv(
            &layout.reference(),
            &["department", "wine_type", "surface"],
            r.value
                .iter()
                .map(|(k, v)| vec![k.department.clone(), k.wine_type.clone(), formats::num(*v)]),
        )
        .stage(stage)?;
        reports.push(r.report);
    }

    // known cells are fixed: they leave the mask and their surface leaves the caps
    let mut caps_apps = appellations.clone();
    let mut caps_counties = counties.clone();
    let mut solve_mask = vinmap_core::model::AuthorizationMask::new();
    for (a, c) in mask.cells() {
        if !known.contains_key(&(a.to_string(), c.to_string())) {
            solve_mask.insert(a, c);
        }
    }
    for (a, w) in mask.weights() {
        solve_mask.set_weight(a.clone(), *w);
    }
    for ((a, c), v) in &known {
        if let Some(r) = caps_apps.iter_mut().find(|r| &r.code == a) {
            r.marginal_surface = (r.marginal_surface - v).max(0.0);
        }
        if let Some(r) = caps_counties.iter_mut().find(|r| &r.insee_code == c) {
            r.marginal_surface = (r.marginal_surface - v).max(0.0);
        }
    }
    let problem = build_problem(&caps_apps, &caps_counties, &solve_mask).stage(stage)?;

    formats::write_appellations(&layout.appellations(), &appellations).stage(stage)?;
    formats::write_counties(&layout.counties(), &counties).stage(stage)?;
    formats::write_mask(&layout.mask(), &mask).stage(stage)?;
    formats::write_prices(&layout.prices(), &prices.value).stage(stage)?;
    formats::write_solution(
        &layout.known_cells(),
        &AllocationMatrix {
            cells: known,
            objective_value: 0.0,
        },
    )
    .stage(stage)?;
    formats::write_problem(&layout.problem_dir(), &problem).stage(stage)?;
    formats::write_json_lines(&layout.ingest_report(), &reports).stage(stage)?;
    Ok(())
}

// link

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub labels: usize,
    pub match_rows: usize,
    pub accepted: usize,
    pub matched_appellations: usize,
    pub unmatched_labels: Vec<String>,
}

pub fn run_link(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let stage = Stage::Link;
    let layout = Layout::new(&cfg.output_dir);
    let apps =
        read_appellations(&require(layout.appellations(), stage, Stage::Ingest)?).stage(stage)?;
    let prices =
        formats::read_prices(&require(layout.prices(), stage, Stage::Ingest)?).stage(stage)?;
    let dict = dictionary(cfg)?;
    let regions = match &cfg.inputs.appellation_regions {
        Some(p) => Some(
            ingest::parse_text_map(
                "appellation_regions",
                &read_input(cfg, p)?,
                "appellation",
                "region",
            )
            .map_err(ingest_err)?
            .value,
        ),
        None => None,
    };
    let targets = targets_from_appellations(&apps, &dict, regions.as_ref());
    let outcome = match_labels(&prices, &targets, &dict, &cfg.linkage.match_options());
    let rows: Vec<MatchRow> = outcome
        .matches
        .iter()
        .map(|m| MatchRow {
            label: m.source_label.clone(),
            code: m.target_code.clone(),
            distance: m.distance,
            accepted: m.accepted,
        })
        .collect();
    formats::write_match_report(&layout.match_report(), &rows).stage(stage)?;
    let report = LinkReport {
        labels: prices.len(),
        match_rows: rows.len(),
        accepted: rows.iter().filter(|r| r.accepted).count(),
        matched_appellations: prices_by_appellation(&outcome.matches).len(),
        unmatched_labels: outcome.unmatched,
    };
    formats::write_json(&layout.link_report(), &report).stage(stage)
}

// yields

pub fn run_yields(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let stage = Stage::Yields;
    let layout = Layout::new(&cfg.output_dir);
    let year = cfg.harvest_year()?;
    let apps =
        read_appellations(&require(layout.appellations(), stage, Stage::Ingest)?).stage(stage)?;
    formats::write_yields(&layout.yields(), &expected_yields(&apps, year)).stage(stage)
}

// solve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartJson {
    pub seed: u64,
    pub objective: f64,
    pub gradient_iterations: usize,
    pub augmentations: usize,
    pub interior_cells: usize,
    pub face_signature: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub k_starts: usize,
    pub seed_base: u64,
    pub active_cells: usize,
    pub dropped_cells: usize,
    pub objective: f64,
    pub best_start_objective: f64,
    pub max_violation: f64,
    pub pairwise_tau_min: Option<f64>,
    pub pairwise_tau_mean: Option<f64>,
    pub distinct_faces: usize,
    pub starts: Vec<StartJson>,
    pub failures: Vec<(u64, String)>,
}

/// Multi-start solve with feasibility checks on every start and the average.
pub fn solve_problem(
    problem: &AllocationProblem,
    cfg: &PipelineConfig,
) -> Result<(MultiStart, SolveReport), PipelineError> {
    let stage = Stage::Solve;
    let ms = multi_start_average(
        problem,
        cfg.k_starts,
        cfg.seed_base,
        &cfg.solver.solver_config(),
    )
    .stage(stage)?;
    let tol = cfg.solver.feasibility_tolerance;
    let worst = ms
        .solutions
        .iter()
        .chain(std::iter::once(&ms.average))
        .map(|s| problem.max_violation(s))
        .fold(0.0, f64::max);
    if worst > tol {
        return Err(PipelineError::Stage {
            stage,
            source: anyhow!("solution violates constraints by {worst:e} (tolerance {tol:e})"),
        });
    }
    let mut faces: Vec<u64> = ms.starts.iter().map(|s| s.stats.face_signature).collect();
    faces.sort_unstable();
    faces.dedup();
    let report = SolveReport {
        k_starts: cfg.k_starts,
        seed_base: cfg.seed_base,
        active_cells: problem.cells().len(),
        dropped_cells: problem.dropped_cells(),
        objective: ms.objective,
        best_start_objective: ms.best_objective(),
        max_violation: worst,
        pairwise_tau_min: ms.pairwise_tau_min,
        pairwise_tau_mean: ms.pairwise_tau_mean,
        distinct_faces: faces.len(),
        starts: ms
            .starts
            .iter()
            .map(|s| StartJson {
                seed: s.seed,
                objective: s.objective,
                gradient_iterations: s.stats.gradient_iterations,
                augmentations: s.stats.augmentations,
                interior_cells: s.stats.interior_cells,
                face_signature: format!("{:016x}", s.stats.face_signature),
            })
            .collect(),
        failures: ms
            .failures
            .iter()
            .map(|(s, e)| (*s, e.to_string()))
            .collect(),
    };
    Ok((ms, report))
}

pub fn run_solve(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    run_solve_from(cfg, None)
}

/// Solves the problem triple in `problem_dir`, or the one written by ingest.
/// Known cells from ingest are merged back only in the latter case.
pub fn run_solve_from(
    cfg: &PipelineConfig,
    problem_dir: Option<&Path>,
) -> Result<(), PipelineError> {
    let stage = Stage::Solve;
    let layout = Layout::new(&cfg.output_dir);
    let (problem, known) = match problem_dir {
        Some(dir) => (formats::read_problem(dir).stage(stage)?, BTreeMap::new()),
        None => {
            let dir = layout.problem_dir();
            require(dir.join(formats::PROBLEM_MASK), stage, Stage::Ingest)?;
            let known = match layout.known_cells() {
                p if p.exists() => read_known_cells(&p).stage(stage)?,
                _ => BTreeMap::new(),
            };
            (formats::read_problem(&dir).stage(stage)?, known)
        }
    };
    let (ms, report) = solve_problem(&problem, cfg)?;

    let mut solution = ms.to_matrix(&problem);
    for (k, v) in known {
        *solution.cells.entry(k).or_insert(0.0) += v;
    }
    formats::write_solution(&layout.solution(), &solution).stage(stage)?;
    let starts = layout.starts_dir();
    if starts.exists() {
        std::fs::remove_dir_all(&starts).stage(stage)?;
    }
    for (s, values) in ms.starts.iter().zip(&ms.solutions) {
        formats::write_solution(
            &starts.join(format!("start_{:020}.csv", s.seed)),
            &problem.to_matrix(values, 0.0),
        )
        .stage(stage)?;
    }
    formats::write_json(&layout.solve_report(), &report).stage(stage)
}

// validate

/// Tau between solution files (at least two).
pub fn compare_solution_files(
    paths: &[PathBuf],
    restrict_min: f64,
) -> anyhow::Result<ComparisonJson> {
    let sols = paths
        .iter()
        .map(|p| formats::read_solution(p).with_context(|| p.display().to_string()))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let r = compare_solutions(&sols, restrict_min)?;
    Ok(ComparisonJson::from(&r))
}

fn aggregate_key_fn(apps: &[AppellationRecord]) -> impl Fn(&str, &str) -> AggregateKey + '_ {
    let cats: BTreeMap<&str, &str> = apps
        .iter()
        .map(|a| (a.code.as_str(), a.category.reporting_group().as_str()))
        .collect();
    move |a, c| {
        AggregateKey::new(
            department_of(c).unwrap_or("UNKNOWN"),
            cats.get(a).copied().unwrap_or("UNKNOWN"),
        )
    }
}

pub fn run_validate(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let stage = Stage::Validate;
    let layout = Layout::new(&cfg.output_dir);
    let dir = layout.validate_dir();
    let starts_dir = require(layout.starts_dir(), stage, Stage::Solve)?;
    let starts: Vec<PathBuf> = formats::list_files(&starts_dir)
        .stage(stage)?
        .into_iter()
        .map(|p| starts_dir.join(p))
        .collect();
    if starts.len() >= 2 {
        let r = compare_solution_files(&starts, cfg.validate.restrict_min_hectares).stage(stage)?;
        formats::write_json(&dir.join("solutions.json"), &r).stage(stage)?;
    } else {
        let note = serde_json::json!({ "note": "fewer than two starts; nothing to compare" });
        formats::write_json(&dir.join("solutions.json"), &note).stage(stage)?;
    }

    if layout.reference().exists() {
        let solution = formats::read_solution(&require(layout.solution(), stage, Stage::Solve)?)
            .stage(stage)?;
        let apps = read_appellations(&layout.appellations()).stage(stage)?;
        let t = formats::read_table(&layout.reference()).stage(stage)?;
        let reference = ingest::parse_reference_aggregates(&t)
            .map_err(ingest_err)?
            .value;
        let key = aggregate_key_fn(&apps);
        let r = compare_aggregates(
            &solution,
            &reference,
            &key,
            cfg.validate.aggregate_min_reference,
        );
        formats::write_json(&dir.join("aggregates.json"), &ComparisonJson::from(&r))
            .stage(stage)?;
        formats::write_scatter(&dir.join("aggregates_scatter.csv"), &r).stage(stage)?;
    }
    Ok(())
}

// value

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub records: usize,
    pub total_value_eur: f64,
    pub total_surface_ha: f64,
    pub flagged_prices: usize,
    pub defaulted_yields: usize,
    pub unknown_appellations: usize,
}

/// Accepted matches joined back with the price scale on the raw label.
fn label_matches(rows: &[MatchRow], prices: &[vinmap_core::model::PriceEntry]) -> Vec<LabelMatch> {
    let mut by_label = BTreeMap::new();
    for p in prices {
        by_label.entry(p.label.as_str()).or_insert(p);
    }
    rows.iter()
        .filter_map(|r| {
            let p = by_label.get(r.label.as_str())?;
            Some(LabelMatch {
                source_label: r.label.clone(),
                matched_name: p.normalized_label.clone(),
                target_code: r.code.clone(),
                distance: r.distance,
                accepted: r.accepted,
                price: p.price,
                production_mode: p.production_mode,
            })
        })
        .collect()
}

pub fn run_value(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let stage = Stage::Value;
    let layout = Layout::new(&cfg.output_dir);
    let solution =
        formats::read_solution(&require(layout.solution(), stage, Stage::Solve)?).stage(stage)?;
    let yields =
        formats::read_yields(&require(layout.yields(), stage, Stage::Yields)?).stage(stage)?;
    let rows = formats::read_match_report(&require(layout.match_report(), stage, Stage::Link)?)
        .stage(stage)?;
    let prices =
        formats::read_prices(&require(layout.prices(), stage, Stage::Ingest)?).stage(stage)?;
    let apps = read_appellations(&layout.appellations()).stage(stage)?;
    let counties =
        read_counties(&require(layout.counties(), stage, Stage::Ingest)?).stage(stage)?;

    let price_map = prices_by_appellation(&label_matches(&rows, &prices));
    let portfolio = build_portfolio(&solution, &apps, &yields, &price_map);
    let regions: BTreeMap<String, String> = counties
        .iter()
        .filter(|c| !c.agricultural_region_id.is_empty())
        .map(|c| (c.insee_code.clone(), c.agricultural_region_id.clone()))
        .collect();
    let dir = layout.value_dir();
    formats::write_portfolio(&layout.portfolio(), &portfolio.records).stage(stage)?;
    let categories = summarize_by_category(&portfolio.records).stage(stage)?;
    formats::write_category_summary(&dir.join("category_summary.csv"), &categories).stage(stage)?;
    formats::write_region_summary(
        &dir.join("region_summary.csv"),
        &summarize_by_region(&portfolio.records, &regions),
    )
    .stage(stage)?;
    let report = ValueReport {
        records: portfolio.records.len(),
        total_value_eur: portfolio.total_value(),
        total_surface_ha: portfolio.total_surface(),
        flagged_prices: portfolio.flagged_prices,
        defaulted_yields: portfolio.defaulted_yields,
        unknown_appellations: portfolio.unknown_appellations,
    };
    formats::write_json(&dir.join("value_report.json"), &report).stage(stage)
}

// synth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub instance_seed: u64,
    pub n_appellations: usize,
    pub n_counties: usize,
    pub density: f64,
    pub truth_cells: usize,
    pub mask_cells: usize,
    pub truth_objective: f64,
    pub solve: SolveReport,
    pub cell_tau: Option<f64>,
    pub aggregate_tau: Option<f64>,
    pub max_row_error: f64,
    pub baseline_cell_tau: Option<f64>,
    pub baseline_aggregate_tau: Option<f64>,
}

/// Generates an instance with known truth, recovers it and scores the
/// recovery against the truth and against the uniform-spread baseline.
pub fn run_synth(cfg: &PipelineConfig) -> Result<SynthReport, PipelineError> {
    let stage = Stage::Synth;
    let section = cfg.synth.clone().unwrap_or_default();
    let synth_cfg = section.synth_config(&cfg.weights.category_weights())?;
    let inst = generate(section.shape(), &synth_cfg, section.instance_seed).stage(stage)?;
    let dir = Layout::new(&cfg.output_dir).synth_dir();
    formats::write_problem(&dir, &inst.problem).stage(stage)?;
    formats::write_solution(&dir.join("truth.csv"), &inst.truth).stage(stage)?;

    let (ms, solve) = solve_problem(&inst.problem, cfg).map_err(|e| match e {
        PipelineError::Stage { source, .. } => PipelineError::Stage { stage, source },
        other => other,
    })?;
    let recovered = ms.to_matrix(&inst.problem);
    formats::write_solution(&dir.join("solution.csv"), &recovered).stage(stage)?;
    let baseline = uniform_spread(&inst.problem);

    let truth_agg = inst.truth_aggregates();
    let keys = inst.key_lookup();
    let agg_tau = |m: &AllocationMatrix| compare_aggregates(m, &truth_agg, &keys, 0.0).kendall_tau;
    let score = score_recovery(&inst.truth, &recovered);
    let report = SynthReport {
        instance_seed: section.instance_seed,
        n_appellations: section.n_appellations,
        n_counties: section.n_counties,
        density: section.density,
        truth_cells: inst.truth.cells.len(),
        mask_cells: inst.mask.len(),
        truth_objective: inst.truth.objective_value,
        solve,
        cell_tau: score.kendall_tau,
        aggregate_tau: agg_tau(&recovered),
        max_row_error: score.max_row_error(),
        baseline_cell_tau: score_recovery(&inst.truth, &baseline).kendall_tau,
        baseline_aggregate_tau: agg_tau(&baseline),
    };
    formats::write_json(&dir.join("synth_report.json"), &report).stage(stage)?;
    Ok(report)
}

/// Model aggregates of a solution file, keyed like the reference table.
pub fn solution_aggregates(
    solution: &AllocationMatrix,
    apps: &[AppellationRecord],
) -> BTreeMap<AggregateKey, f64> {
    aggregate(solution, aggregate_key_fn(apps))
}

/// The full chain: ingest, link, yields, solve, validate, value.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    run_ingest(cfg)?;
    run_link(cfg)?;
    run_yields(cfg)?;
    run_solve(cfg)?;
    run_validate(cfg)?;
    run_value(cfg)
}
