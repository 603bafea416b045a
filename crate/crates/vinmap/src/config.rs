//! Declarative pipeline configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config file.
//! Every referenced input must exist when the config is loaded.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vinmap_core::allocator::SolverConfig;
use vinmap_core::cvi::TruncationRule;
use vinmap_core::linkage::{EditCosts, MatchOptions, Threshold};
use vinmap_core::model::{Category, CategoryWeights};
use vinmap_core::synth::{SynthConfig, SynthShape};

use crate::table::{Delimiter, Encoding, TextFormat};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("input `{key}` not found: {path}")]
    MissingInput { key: &'static str, path: String },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_k_starts")]
    pub k_starts: usize,
    #[serde(default)]
    pub seed_base: u64,
    /// Harvest year n; yields of n-5 ..= n-1 enter the Olympic average.
    pub harvest_year: Option<u16>,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub csv: CsvSection,
    #[serde(default)]
    pub columns: Columns,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub linkage: LinkageSection,
    #[serde(default)]
    pub validate: ValidateSection,
    pub synth: Option<SynthSection>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_k_starts() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub appellations: Option<PathBuf>,
    pub counties: Option<PathBuf>,
    pub authorizations: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    /// department;surface of non-PGI wine, one pseudo-appellation each.
    pub non_pgi_by_department: Option<PathBuf>,
    /// appellation;insee;surface cells known from outside the register.
    pub champagne: Option<PathBuf>,
    /// insee;region, overriding the region column of the county file.
    pub county_regions: Option<PathBuf>,
    /// appellation;region, enabling the linkage region filter.
    pub appellation_regions: Option<PathBuf>,
    /// department;wine_type;surface independent statistics.
    pub reference_aggregates: Option<PathBuf>,
    pub acronyms: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSection {
    #[serde(default)]
    pub delimiter: Delimiter,
    #[serde(default)]
    pub encoding: Encoding,
    /// Cell values marking a secretized figure (compared case-insensitively).
    /// Blank cells are always secretized.
    #[serde(default = "default_secret_markers")]
    pub secret_markers: Vec<String>,
}

fn default_secret_markers() -> Vec<String> {
    vec!["s".into(), "secret".into(), "nc".into()]
}

impl Default for CsvSection {
    fn default() -> Self {
        Self {
            delimiter: Delimiter::default(),
            encoding: Encoding::default(),
            secret_markers: default_secret_markers(),
        }
    }
}

impl CsvSection {
    pub fn format(&self) -> TextFormat {
        TextFormat {
            delimiter: self.delimiter,
            encoding: self.encoding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Columns {
    #[serde(default)]
    pub appellations: AppellationColumns,
    #[serde(default)]
    pub counties: CountyColumns,
    #[serde(default)]
    pub authorizations: AuthorizationColumns,
    #[serde(default)]
    pub prices: PriceColumns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppellationColumns {
    pub code: String,
    pub name: String,
    pub surface: String,
    /// Optional; inferred from the code when absent.
    pub category: String,
    /// Optional; inferred from the code when absent.
    pub color: String,
    /// Headers `<prefix><year>` hold the yield (hl/ha) of that year.
    pub yield_prefix: String,
    /// `trailing-letter`, `keep` or `fixed:<n>`.
    pub truncation: String,
}

impl Default for AppellationColumns {
    fn default() -> Self {
        Self {
            code: "code".into(),
            name: "name".into(),
            surface: "surface".into(),
            category: "category".into(),
            color: "color".into(),
            yield_prefix: "yield_".into(),
            truncation: "trailing-letter".into(),
        }
    }
}

pub fn parse_truncation(s: &str) -> Result<TruncationRule, ConfigError> {
    match s {
        "trailing-letter" => Ok(TruncationRule::TrailingLetter),
        "keep" => Ok(TruncationRule::Keep),
        _ => s
            .strip_prefix("fixed:")
            .and_then(|n| n.parse().ok())
            .filter(|&n: &usize| n > 0)
            .map(TruncationRule::FixedLength)
            .ok_or_else(|| ConfigError::Invalid {
                key: "columns.appellations.truncation",
                message: format!("expected trailing-letter, keep or fixed:<n>, got {s:?}"),
            }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountyColumns {
    pub insee: String,
    pub surface: String,
    /// Optional agricultural region id.
    pub region: String,
}

impl Default for CountyColumns {
    fn default() -> Self {
        Self {
            insee: "insee".into(),
            surface: "surface".into(),
            region: "region".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuthorizationColumns {
    pub appellation: String,
    pub insee: String,
    /// Optional per-row weight.
    pub weight: String,
}

impl Default for AuthorizationColumns {
    fn default() -> Self {
        Self {
            appellation: "appellation".into(),
            insee: "insee".into(),
            weight: "weight".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriceColumns {
    pub label: String,
    pub price: String,
    /// Optional region hint.
    pub region: String,
}

impl Default for PriceColumns {
    fn default() -> Self {
        Self {
            label: "label".into(),
            price: "price".into(),
            region: "region".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSection {
    pub aop: f64,
    pub aop_brandy: f64,
    pub pgi: f64,
    pub non_pgi: f64,
    pub pseudo_non_pgi: f64,
    /// Use the authorization file's weight column when it has one.
    pub from_authorizations: bool,
}

impl Default for WeightsSection {
    fn default() -> Self {
        let w = CategoryWeights::default();
        Self {
            aop: w.aop,
            aop_brandy: w.aop_brandy,
            pgi: w.pgi,
            non_pgi: w.non_pgi,
            pseudo_non_pgi: w.pseudo_non_pgi,
            from_authorizations: true,
        }
    }
}

impl WeightsSection {
    pub fn category_weights(&self) -> CategoryWeights {
        CategoryWeights {
            aop: self.aop,
            aop_brandy: self.aop_brandy,
            pgi: self.pgi,
            non_pgi: self.non_pgi,
            pseudo_non_pgi: self.pseudo_non_pgi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub step: f64,
    pub max_gradient_iterations: usize,
    pub stall_tolerance: f64,
    pub stall_window: usize,
    pub max_augmentations: usize,
    pub epsilon: f64,
    /// Relative tolerance of the feasibility check on every solution.
    pub feasibility_tolerance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            step: s.step,
            max_gradient_iterations: s.max_gradient_iterations,
            stall_tolerance: s.stall_tolerance,
            stall_window: s.stall_window,
            max_augmentations: s.max_augmentations,
            epsilon: s.epsilon,
            feasibility_tolerance: 1e-6,
        }
    }
}

impl SolverSection {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            step: self.step,
            max_gradient_iterations: self.max_gradient_iterations,
            stall_tolerance: self.stall_tolerance,
            stall_window: self.stall_window,
            max_augmentations: self.max_augmentations,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkageSection {
    /// Fraction of the longer normalized label length (times the
    /// substitution cost); ignored when `threshold_absolute` is set.
    pub threshold_relative: f64,
    pub threshold_absolute: Option<f64>,
    pub insert_cost: f64,
    pub delete_cost: f64,
    pub substitute_cost: f64,
    pub transpose_cost: f64,
    pub region_filter: bool,
}

impl Default for LinkageSection {
    fn default() -> Self {
        let c = EditCosts::default();
        Self {
            threshold_relative: 0.10,
            threshold_absolute: None,
            insert_cost: c.insert,
            delete_cost: c.delete,
            substitute_cost: c.substitute,
            transpose_cost: c.transpose,
            region_filter: false,
        }
    }
}

impl LinkageSection {
    pub fn match_options(&self) -> MatchOptions {
        MatchOptions {
            costs: EditCosts {
                insert: self.insert_cost,
                delete: self.delete_cost,
                substitute: self.substitute_cost,
                transpose: self.transpose_cost,
            },
            threshold: match self.threshold_absolute {
                Some(t) => Threshold::Absolute(t),
                None => Threshold::Relative(self.threshold_relative),
            },
            region_filter: self.region_filter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    /// Cells whose largest value across solutions reaches this many
    /// hectares enter the restricted tau.
    pub restrict_min_hectares: f64,
    /// Aggregate keys whose reference reaches this many hectares enter the
    /// restricted aggregate tau.
    pub aggregate_min_reference: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            restrict_min_hectares: 100.0,
            aggregate_min_reference: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_appellations: usize,
    pub n_counties: usize,
    pub density: f64,
    pub extra_mask_ratio: f64,
    pub sigma: f64,
    pub median_cell: f64,
    pub counties_per_department: usize,
    /// Category share, e.g. `{ AOP = 0.6, PGI = 0.3, NON_PGI = 0.1 }`.
    pub category_mix: std::collections::BTreeMap<String, f64>,
    /// Seed of the generator; the solver uses `seed_base`.
    pub instance_seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            n_appellations: 20,
            n_counties: 100,
            density: 0.03,
            extra_mask_ratio: d.extra_mask_ratio,
            sigma: d.sigma,
            median_cell: d.median_cell,
            counties_per_department: d.counties_per_department,
            category_mix: d
                .category_mix
                .iter()
                .map(|(c, p)| (c.as_str().to_string(), *p))
                .collect(),
            instance_seed: 0,
        }
    }
}

impl SynthSection {
    pub fn shape(&self) -> SynthShape {
        SynthShape {
            n_appellations: self.n_appellations,
            n_counties: self.n_counties,
            density: self.density,
        }
    }

    pub fn synth_config(&self, weights: &CategoryWeights) -> Result<SynthConfig, ConfigError> {
        let category_mix = self
            .category_mix
            .iter()
            .map(|(k, &p)| {
                k.parse::<Category>()
                    .map(|c| (c, p))
                    .map_err(|e| ConfigError::Invalid {
                        key: "synth.category_mix",
                        message: e.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SynthConfig {
            category_mix,
            weights: *weights,
            extra_mask_ratio: self.extra_mask_ratio,
            sigma: self.sigma,
            median_cell: self.median_cell,
            counties_per_department: self.counties_per_department,
        })
    }
}

/// Command-line overrides of config keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed_base: Option<u64>,
    pub k_starts: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub harvest_year: Option<u16>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// Reads, resolves paths against the config directory, applies overrides
    /// and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.apply(overrides);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        for p in self.inputs.paths_mut().into_iter().flatten() {
            join(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed_base {
            self.seed_base = s;
        }
        if let Some(k) = o.k_starts {
            self.k_starts = k;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(y) = o.harvest_year {
            self.harvest_year = Some(y);
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.k_starts == 0 {
            return Err(ConfigError::Invalid {
                key: "k_starts",
                message: "must be at least 1".into(),
            });
        }
        let s = &self.solver;
        for (key, v) in [
            ("solver.step", s.step),
            ("solver.stall_tolerance", s.stall_tolerance),
            ("solver.epsilon", s.epsilon),
            ("solver.feasibility_tolerance", s.feasibility_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid {
                    key,
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        if s.stall_window == 0 {
            return Err(ConfigError::Invalid {
                key: "solver.stall_window",
                message: "must be at least 1".into(),
            });
        }
        let w = &self.weights;
        for (key, v) in [
            ("weights.aop", w.aop),
            ("weights.aop_brandy", w.aop_brandy),
            ("weights.pgi", w.pgi),
            ("weights.non_pgi", w.non_pgi),
            ("weights.pseudo_non_pgi", w.pseudo_non_pgi),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ConfigError::Invalid {
                    key,
                    message: format!("must be in (0, 1], got {v}"),
                });
            }
        }
        let l = &self.linkage;
        for (key, v) in [
            ("linkage.insert_cost", l.insert_cost),
            ("linkage.delete_cost", l.delete_cost),
            ("linkage.substitute_cost", l.substitute_cost),
            ("linkage.transpose_cost", l.transpose_cost),
            ("linkage.threshold_relative", l.threshold_relative),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid {
                    key,
                    message: format!("must be non-negative, got {v}"),
                });
            }
        }
        parse_truncation(&self.columns.appellations.truncation)?;
        if let Some(synth) = &self.synth {
            synth.synth_config(&self.weights.category_weights())?;
        }
        for (key, p) in self.inputs.named() {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ConfigError::MissingInput {
                        key,
                        path: p.display().to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn harvest_year(&self) -> Result<u16, ConfigError> {
        self.harvest_year.ok_or(ConfigError::Invalid {
            key: "harvest_year",
            message: "required by the yields stage".into(),
        })
    }
}

impl Inputs {
    fn named(&self) -> [(&'static str, Option<&PathBuf>); 11] {
        [
            ("inputs.appellations", self.appellations.as_ref()),
            ("inputs.counties", self.counties.as_ref()),
            ("inputs.authorizations", self.authorizations.as_ref()),
            ("inputs.prices", self.prices.as_ref()),
            (
                "inputs.non_pgi_by_department",
                self.non_pgi_by_department.as_ref(),
            ),
            ("inputs.champagne", self.champagne.as_ref()),
            ("inputs.county_regions", self.county_regions.as_ref()),
            (
                "inputs.appellation_regions",
                self.appellation_regions.as_ref(),
            ),
            (
                "inputs.reference_aggregates",
                self.reference_aggregates.as_ref(),
            ),
            ("inputs.acronyms", self.acronyms.as_ref()),
            ("inputs.stopwords", self.stopwords.as_ref()),
        ]
    }

    fn paths_mut(&mut self) -> [Option<&mut PathBuf>; 11] {
        [
            self.appellations.as_mut(),
            self.counties.as_mut(),
            self.authorizations.as_mut(),
            self.prices.as_mut(),
            self.non_pgi_by_department.as_mut(),
            self.champagne.as_mut(),
            self.county_regions.as_mut(),
            self.appellation_regions.as_mut(),
            self.reference_aggregates.as_mut(),
            self.acronyms.as_mut(),
            self.stopwords.as_mut(),
        ]
    }

    /// The path of a mandatory input.
    pub fn required(&self, key: &'static str) -> Result<&Path, ConfigError> {
        self.named()
            .into_iter()
            .find(|(k, _)| k.strip_prefix("inputs.") == Some(key))
            .and_then(|(_, p)| p)
            .map(PathBuf::as_path)
            .ok_or(ConfigError::Invalid {
                key: "inputs",
                message: format!("`{key}` is required"),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_file() {
        let c = PipelineConfig::from_toml("", "t").unwrap();
        assert_eq!(c.k_starts, 20);
        assert_eq!(c.csv.delimiter, Delimiter::Byte(b';'));
        assert_eq!(c.weights.category_weights(), CategoryWeights::default());
        c.check().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("k_start = 3", "t").is_err());
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut c = PipelineConfig::from_toml("k_starts = 0", "t").unwrap();
        assert!(c.check().is_err());
        c.k_starts = 1;
        c.weights.pgi = 0.0;
        assert!(c.check().is_err());
    }

    #[test]
    fn missing_input_is_caught_eagerly() {
        let mut c =
            PipelineConfig::from_toml("[inputs]\nappellations = \"nope.csv\"", "t").unwrap();
        c.resolve(Path::new("/definitely/not/here"));
        assert!(matches!(c.check(), Err(ConfigError::MissingInput { .. })));
    }

    #[test]
    fn truncation_rules() {
        assert_eq!(
            parse_truncation("fixed:6").unwrap(),
            TruncationRule::FixedLength(6)
        );
        assert!(parse_truncation("fixed:0").is_err());
        assert!(parse_truncation("other").is_err());
    }

    #[test]
    fn overrides_win() {
        let mut c = PipelineConfig::from_toml("seed_base = 1\nk_starts = 2", "t").unwrap();
        c.apply(&Overrides {
            seed_base: Some(9),
            k_starts: Some(5),
            ..Overrides::default()
        });
        assert_eq!((c.seed_base, c.k_starts), (9, 5));
    }
}
