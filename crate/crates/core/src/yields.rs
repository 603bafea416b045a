//! Expected harvest yields.
//!
//! The expected yield of harvest year `n` is the Olympic average of the five
//! yearly yields `n-5 ..= n-1`: their sum minus one minimum and one maximum,
//! divided by three. When an appellation lacks a full window the Olympic
//! average of its wine type is used, and failing that 40 hl/ha.

use alloc::collections::BTreeMap;
use alloc::string::String;

use thiserror::Error;

use crate::model::{AppellationRecord, Category};
use crate::sum::NeumaierSum;

pub const DEFAULT_YIELD: f64 = 40.0;
pub const WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum YieldError {
    #[error("Olympic average needs exactly {WINDOW} yields, got {0}")]
    WrongLength(usize),
    #[error("yields must be positive and finite, got {0}")]
    NonPositive(f64),
}

pub fn olympic_average(history: &[f64]) -> Result<f64, YieldError> {
    if history.len() != WINDOW {
        return Err(YieldError::WrongLength(history.len()));
    }
    if let Some(&bad) = history.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(YieldError::NonPositive(bad));
    }
    let min = history.iter().copied().fold(f64::INFINITY, f64::min);
    let max = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // drop one instance of each extreme, then average the middle three
    let mut middle = [0.0; WINDOW];
    middle.copy_from_slice(history);
    middle.sort_by(f64::total_cmp);
    let mean = (middle[1] + middle[2] + middle[3]) / 3.0;
    Ok(mean.clamp(min, max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum YieldProvenance {
    AppellationOlympic,
    TypeLevelOlympic,
    Default40,
}

impl YieldProvenance {
    pub fn as_str(self) -> &'static str {
        match self {
            YieldProvenance::AppellationOlympic => "APPELLATION_OLYMPIC",
            YieldProvenance::TypeLevelOlympic => "TYPE_LEVEL_OLYMPIC",
            YieldProvenance::Default40 => "DEFAULT_40",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "APPELLATION_OLYMPIC" => Some(YieldProvenance::AppellationOlympic),
            "TYPE_LEVEL_OLYMPIC" => Some(YieldProvenance::TypeLevelOlympic),
            "DEFAULT_40" => Some(YieldProvenance::Default40),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedYield {
    pub appellation_code: String,
    /// hl/ha
    pub value: f64,
    pub provenance: YieldProvenance,
}

/// The five yields of years `harvest_year-5 ..= harvest_year-1`, if all are
/// present and positive. Zero yields count as missing.
pub fn history_window(history: &BTreeMap<u16, f64>, harvest_year: u16) -> Option<[f64; WINDOW]> {
    let first = harvest_year.checked_sub(WINDOW as u16)?;
    let mut out = [0.0; WINDOW];
    for (slot, year) in out.iter_mut().zip(first..harvest_year) {
        let v = *history.get(&year)?;
        if !(v > 0.0) || !v.is_finite() {
            return None;
        }
        *slot = v;
    }
    Some(out)
}

/// Category whose type-level history a category falls back on.
fn history_category(category: Category) -> Category {
    category.reporting_group()
}

/// Per-category yearly yields averaged over the appellations of that category
/// weighted by surface. Only categories with a full window are returned.
pub fn type_level_histories(
    appellations: &[AppellationRecord],
    harvest_year: u16,
) -> BTreeMap<Category, [f64; WINDOW]> {
    let Some(first) = harvest_year.checked_sub(WINDOW as u16) else {
        return BTreeMap::new();
    };
    let mut acc: BTreeMap<(Category, u16), (NeumaierSum, NeumaierSum)> = BTreeMap::new();
    for a in appellations {
        for year in first..harvest_year {
            match a.yield_history.get(&year) {
                Some(&y) if y > 0.0 && y.is_finite() && a.marginal_surface > 0.0 => {
                    let e = acc.entry((history_category(a.category), year)).or_default();
                    e.0.add(y * a.marginal_surface);
                    e.1.add(a.marginal_surface);
                }
                _ => {}
            }
        }
    }
    let mut out = BTreeMap::new();
    for category in Category::ALL.map(history_category) {
        let mut window = [0.0; WINDOW];
        let complete = (first..harvest_year)
            .zip(window.iter_mut())
            .all(|(year, slot)| match acc.get(&(category, year)) {
                Some((weighted, surface)) if surface.total() > 0.0 => {
                    *slot = weighted.total() / surface.total();
                    true
                }
                _ => false,
            });
        if complete {
            out.insert(category, window);
        }
    }
    out
}

pub fn expected_yield(
    appellation: &AppellationRecord,
    harvest_year: u16,
    type_level: &BTreeMap<Category, [f64; WINDOW]>,
) -> ExpectedYield {
    let (value, provenance) =
        if let Some(w) = history_window(&appellation.yield_history, harvest_year) {
            (
                olympic_average(&w).expect("window is validated"),
                YieldProvenance::AppellationOlympic,
            )
        } else if let Some(w) = type_level.get(&history_category(appellation.category)) {
            match olympic_average(w) {
                Ok(v) => (v, YieldProvenance::TypeLevelOlympic),
                Err(_) => (DEFAULT_YIELD, YieldProvenance::Default40),
            }
        } else {
            (DEFAULT_YIELD, YieldProvenance::Default40)
        };
    ExpectedYield {
        appellation_code: appellation.code.clone(),
        value,
        provenance,
    }
}

/// Expected yields of every appellation, keyed by code.
pub fn expected_yields(
    appellations: &[AppellationRecord],
    harvest_year: u16,
) -> BTreeMap<String, ExpectedYield> {
    let type_level = type_level_histories(appellations, harvest_year);
    appellations
        .iter()
        .map(|a| (a.code.clone(), expected_yield(a, harvest_year, &type_level)))
        .collect()
}
