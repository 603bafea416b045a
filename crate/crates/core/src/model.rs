//! Domain records shared by every stage.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::cvi::CviCode;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("INSEE code {0:?} must be exactly 5 alphanumeric characters")]
    InvalidInsee(String),
    #[error("empty product code")]
    EmptyCode,
    #[error("negative or non-finite surface {0} for {1}")]
    InvalidSurface(f64, String),
    #[error("non-positive yield {value} for {code} in {year}")]
    InvalidYield { code: String, year: u16, value: f64 },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("unknown color {0:?}")]
    UnknownColor(String),
    #[error("unknown production mode {0:?}")]
    UnknownProductionMode(String),
    #[error("price must be positive, got {0}")]
    InvalidPrice(f64),
}

/// Wine category of an appellation. Orders the same way as the published
/// category table (AOP first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Aop,
    AopBrandy,
    Pgi,
    NonPgi,
    PseudoNonPgi,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Aop,
        Category::AopBrandy,
        Category::Pgi,
        Category::NonPgi,
        Category::PseudoNonPgi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Aop => "AOP",
            Category::AopBrandy => "AOP_BRANDY",
            Category::Pgi => "PGI",
            Category::NonPgi => "NON_PGI",
            Category::PseudoNonPgi => "PSEUDO_NON_PGI",
        }
    }

    /// Category used by summaries: pseudo-appellations carry non-PGI surface.
    pub fn reporting_group(self) -> Category {
        match self {
            Category::PseudoNonPgi => Category::NonPgi,
            c => c,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase().replace(['-', ' '], "_");
        Ok(match upper.as_str() {
            "AOP" | "AOC" => Category::Aop,
            "AOP_BRANDY" | "BRANDY" => Category::AopBrandy,
            "PGI" | "IGP" => Category::Pgi,
            "NON_PGI" | "NON_IGP" | "VSIG" => Category::NonPgi,
            "PSEUDO_NON_PGI" => Category::PseudoNonPgi,
            _ => return Err(ModelError::UnknownCategory(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Color {
    White,
    Red,
    Rose,
    Mixed,
    Unknown,
}

impl Color {
    pub fn as_str(self) -> &'static str {
        match self {
            Color::White => "WHITE",
            Color::Red => "RED",
            Color::Rose => "ROSE",
            Color::Mixed => "MIXED",
            Color::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Color {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "WHITE" | "BLANC" => Color::White,
            "RED" | "ROUGE" => Color::Red,
            "ROSE" => Color::Rose,
            "MIXED" => Color::Mixed,
            "UNKNOWN" | "" => Color::Unknown,
            _ => return Err(ModelError::UnknownColor(s.to_string())),
        })
    }
}

/// Objective weight per category.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryWeights {
    pub aop: f64,
    pub aop_brandy: f64,
    pub pgi: f64,
    pub non_pgi: f64,
    pub pseudo_non_pgi: f64,
}

impl Default for CategoryWeights {
    fn default() -> Self {
        Self {
            aop: 1.0,
            aop_brandy: 1.0,
            pgi: 1.0 / 3.0,
            non_pgi: 0.25,
            pseudo_non_pgi: 0.25,
        }
    }
}

impl CategoryWeights {
    pub fn weight(&self, category: Category) -> f64 {
        match category {
            Category::Aop => self.aop,
            Category::AopBrandy => self.aop_brandy,
            Category::Pgi => self.pgi,
            Category::NonPgi => self.non_pgi,
            Category::PseudoNonPgi => self.pseudo_non_pgi,
        }
    }
}

/// Maps a weight read from a file onto the nearest canonical weight (1, 1/3 or
/// 1/4) when it is within 0.005 of it, so that truncated decimals such as
/// `0.33` mean one third.
pub fn snap_weight(raw: f64) -> f64 {
    for canonical in [1.0, 1.0 / 3.0, 0.25] {
        if libm::fabs(raw - canonical) <= 0.005 {
            return canonical;
        }
    }
    raw
}

/// One wine product at appellation level.
#[derive(Debug, Clone, PartialEq)]
pub struct AppellationRecord {
    pub code: String,
    pub name: String,
    pub category: Category,
    pub color: Color,
    /// Hectares.
    pub marginal_surface: f64,
    /// Harvest year → hl/ha.
    pub yield_history: BTreeMap<u16, f64>,
}

impl AppellationRecord {
    pub fn new(
        code: impl Into<String>,
        name: impl Into<String>,
        category: Category,
        color: Color,
        marginal_surface: f64,
    ) -> Result<Self, ModelError> {
        let code = code.into();
        if code.is_empty() {
            return Err(ModelError::EmptyCode);
        }
        check_surface(marginal_surface, &code)?;
        Ok(Self {
            code,
            name: name.into(),
            category,
            color,
            marginal_surface,
            yield_history: BTreeMap::new(),
        })
    }

    pub fn with_yield(mut self, year: u16, value: f64) -> Result<Self, ModelError> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(ModelError::InvalidYield {
                code: self.code,
                year,
                value,
            });
        }
        self.yield_history.insert(year, value);
        Ok(self)
    }

    pub fn from_cvi(
        code: &CviCode,
        name: impl Into<String>,
        category: Category,
        color: Color,
        marginal_surface: f64,
    ) -> Result<Self, ModelError> {
        Self::new(code.prefix(), name, category, color, marginal_surface)
    }
}

pub(crate) fn check_surface(value: f64, owner: &str) -> Result<(), ModelError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidSurface(value, owner.to_string()))
    }
}

/// Department code of a commune: three characters for overseas codes
/// (`97x`/`98x`), two otherwise (including Corsica's `2A`/`2B`).
pub fn department_of(insee: &str) -> Result<&str, ModelError> {
    if insee.len() != 5 || !insee.bytes().all(|b| b.is_ascii_alphanumeric()) {
        return Err(ModelError::InvalidInsee(insee.to_string()));
    }
    if insee.starts_with("97") || insee.starts_with("98") {
        Ok(&insee[..3])
    } else {
        Ok(&insee[..2])
    }
}

/// One administrative county (commune).
#[derive(Debug, Clone, PartialEq)]
pub struct CountyRecord {
    pub insee_code: String,
    pub department: String,
    pub agricultural_region_id: String,
    pub marginal_surface: f64,
}

impl CountyRecord {
    pub fn new(
        insee_code: impl Into<String>,
        agricultural_region_id: impl Into<String>,
        marginal_surface: f64,
    ) -> Result<Self, ModelError> {
        let insee_code = insee_code.into();
        let department = department_of(&insee_code)?.to_string();
        check_surface(marginal_surface, &insee_code)?;
        Ok(Self {
            insee_code,
            department,
            agricultural_region_id: agricultural_region_id.into(),
            marginal_surface,
        })
    }
}

/// Permitted (appellation, county) cells and the objective weight of each
/// appellation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuthorizationMask {
    cells: BTreeSet<(String, String)>,
    weights: BTreeMap<String, f64>,
}

impl AuthorizationMask {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a cell. Returns false if it was already present.
    pub fn insert(&mut self, appellation: impl Into<String>, insee: impl Into<String>) -> bool {
        self.cells.insert((appellation.into(), insee.into()))
    }

    pub fn set_weight(&mut self, appellation: impl Into<String>, weight: f64) {
        self.weights.insert(appellation.into(), weight);
    }

    pub fn weight(&self, appellation: &str) -> Option<f64> {
        self.weights.get(appellation).copied()
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    pub fn contains(&self, appellation: &str, insee: &str) -> bool {
        // BTreeSet<(String, String)> cannot be queried by borrowed tuples.
        self.cells
            .range((appellation.to_string(), insee.to_string())..)
            .next()
            .is_some_and(|(a, c)| a == appellation && c == insee)
    }

    /// Cells in lexicographic (appellation, insee) order.
    pub fn cells(&self) -> impl Iterator<Item = (&str, &str)> {
        self.cells.iter().map(|(a, c)| (a.as_str(), c.as_str()))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Fills missing weights from the category, for appellations that have
    /// at least one cell.
    pub fn fill_weights<'a>(
        &mut self,
        appellations: impl IntoIterator<Item = &'a AppellationRecord>,
        weights: &CategoryWeights,
    ) {
        let used: BTreeSet<&str> = self.cells.iter().map(|(a, _)| a.as_str()).collect();
        let missing: alloc::vec::Vec<(String, f64)> = appellations
            .into_iter()
            .filter(|a| used.contains(a.code.as_str()) && !self.weights.contains_key(&a.code))
            .map(|a| (a.code.clone(), weights.weight(a.category)))
            .collect();
        self.weights.extend(missing);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProductionMode {
    Conventional,
    Organic,
}

impl ProductionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProductionMode::Conventional => "CONVENTIONAL",
            ProductionMode::Organic => "ORGANIC",
        }
    }

    /// Splits a trailing ` C` / ` B` production-mode suffix off a label.
    /// Labels without a suffix are conventional.
    pub fn split_label(label: &str) -> (&str, ProductionMode) {
        let trimmed = label.trim_end();
        if let Some((head, tail)) = trimmed.rsplit_once(char::is_whitespace) {
            match tail {
                "C" => return (head.trim_end(), ProductionMode::Conventional),
                "B" => return (head.trim_end(), ProductionMode::Organic),
                _ => {}
            }
        }
        (trimmed, ProductionMode::Conventional)
    }
}

impl fmt::Display for ProductionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProductionMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CONVENTIONAL" | "C" => Ok(ProductionMode::Conventional),
            "ORGANIC" | "B" => Ok(ProductionMode::Organic),
            _ => Err(ModelError::UnknownProductionMode(s.to_string())),
        }
    }
}

/// One line of the insurance price scale, in €/hl.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceEntry {
    pub label: String,
    pub normalized_label: String,
    pub price: f64,
    pub production_mode: ProductionMode,
    pub region_hint: Option<String>,
}

impl PriceEntry {
    pub fn new(
        label: impl Into<String>,
        normalized_label: impl Into<String>,
        price: f64,
        production_mode: ProductionMode,
        region_hint: Option<String>,
    ) -> Result<Self, ModelError> {
        if !(price > 0.0) || !price.is_finite() {
            return Err(ModelError::InvalidPrice(price));
        }
        Ok(Self {
            label: label.into(),
            normalized_label: normalized_label.into(),
            price,
            production_mode,
            region_hint,
        })
    }
}
