//! Harvest values: surface × expected yield × scale price, and their totals by
//! category and by agricultural region.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::allocator::AllocationMatrix;
use crate::model::{AppellationRecord, Category, Color};
use crate::sum::NeumaierSum;
use crate::yields::{ExpectedYield, DEFAULT_YIELD};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValuationError {
    #[error("{name} must be non-negative and finite, got {value}")]
    InvalidFactor { name: &'static str, value: f64 },
    #[error("empty portfolio")]
    EmptyPortfolio,
}

fn factor(name: &'static str, value: f64) -> Result<f64, ValuationError> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ValuationError::InvalidFactor { name, value })
    }
}

/// Euros from hectares, hl/ha and €/hl.
pub fn harvest_value(surface: f64, yield_hl_ha: f64, price: f64) -> Result<f64, ValuationError> {
    Ok(factor("surface", surface)? * factor("yield", yield_hl_ha)? * factor("price", price)?)
}

/// Where the price of a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PriceSource {
    Matched,
    /// Median of the matched prices of the appellation's category.
    CategoryMedian,
    /// Median of all matched prices (the category had none).
    GlobalMedian,
    /// No matched price at all; valued at 0.
    Missing,
}

impl PriceSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PriceSource::Matched => "MATCHED",
            PriceSource::CategoryMedian => "CATEGORY_MEDIAN",
            PriceSource::GlobalMedian => "GLOBAL_MEDIAN",
            PriceSource::Missing => "MISSING",
        }
    }

    pub fn is_flagged(self) -> bool {
        self != PriceSource::Matched
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarvestValueRecord {
    pub insee_code: String,
    pub appellation_code: String,
    pub appellation_name: String,
    pub category: Category,
    pub color: Color,
    pub surface: f64,
    pub yield_hl_ha: f64,
    pub price: f64,
    pub value: f64,
    pub price_source: PriceSource,
    /// The appellation had no expected yield and was valued at 40 hl/ha.
    pub yield_defaulted: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Portfolio {
    pub records: Vec<HarvestValueRecord>,
    pub flagged_prices: usize,
    pub defaulted_yields: usize,
    /// Allocation cells whose appellation is not in the appellation table.
    pub unknown_appellations: usize,
}

impl Portfolio {
    pub fn total_value(&self) -> f64 {
        let mut s = NeumaierSum::new();
        s.extend(self.records.iter().map(|r| r.value));
        s.total()
    }

    pub fn total_surface(&self) -> f64 {
        let mut s = NeumaierSum::new();
        s.extend(self.records.iter().map(|r| r.surface));
        s.total()
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// One record per positive allocation cell, in (appellation, insee) order.
/// Cells without a matched price use the median matched price of their
/// category, and are flagged.
pub fn build_portfolio(
    alloc: &AllocationMatrix,
    appellations: &[AppellationRecord],
    yields: &BTreeMap<String, ExpectedYield>,
    prices: &BTreeMap<String, f64>,
) -> Portfolio {
    let by_code: BTreeMap<&str, &AppellationRecord> =
        appellations.iter().map(|a| (a.code.as_str(), a)).collect();

    let mut per_category: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
    let mut all: Vec<f64> = Vec::new();
    for (code, &p) in prices {
        if let Some(a) = by_code.get(code.as_str()) {
            per_category
                .entry(a.category.reporting_group())
                .or_default()
                .push(p);
        }
        all.push(p);
    }
    let category_median: BTreeMap<Category, f64> = per_category
        .into_iter()
        .filter_map(|(c, mut v)| median(&mut v).map(|m| (c, m)))
        .collect();
    let global_median = median(&mut all);

    let mut portfolio = Portfolio::default();
    for ((code, insee), &surface) in &alloc.cells {
        if !(surface > 0.0) {
            continue;
        }
        let app = by_code.get(code.as_str());
        if app.is_none() {
            portfolio.unknown_appellations += 1;
        }
        let category = app.map_or(Category::NonPgi, |a| a.category);
        let (yield_hl_ha, yield_defaulted) = match yields.get(code) {
            Some(y) => (y.value, false),
            None => (DEFAULT_YIELD, true),
        };
        let (price, price_source) = match prices.get(code) {
            Some(&p) => (p, PriceSource::Matched),
            None => match category_median.get(&category.reporting_group()) {
                Some(&p) => (p, PriceSource::CategoryMedian),
                None => match global_median {
                    Some(p) => (p, PriceSource::GlobalMedian),
                    None => (0.0, PriceSource::Missing),
                },
            },
        };
        portfolio.flagged_prices += usize::from(price_source.is_flagged());
        portfolio.defaulted_yields += usize::from(yield_defaulted);
        let value = harvest_value(surface, yield_hl_ha, price).unwrap_or(0.0);
        portfolio.records.push(HarvestValueRecord {
            insee_code: insee.clone(),
            appellation_code: code.clone(),
            appellation_name: app.map_or_else(String::new, |a| a.name.clone()),
            category,
            color: app.map_or(Color::Unknown, |a| a.color),
            surface,
            yield_hl_ha,
            price,
            value,
            price_source,
            yield_defaulted,
        });
    }
    portfolio
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategorySummary {
    pub category: Category,
    pub total_value: f64,
    pub value_share: f64,
    pub total_surface: f64,
    pub surface_share: f64,
}

/// Totals and shares for AOP, AOP brandy, PGI and non-PGI (pseudo-appellations
/// included), always in that order.
pub fn summarize_by_category(
    records: &[HarvestValueRecord],
) -> Result<Vec<CategorySummary>, ValuationError> {
    if records.is_empty() {
        return Err(ValuationError::EmptyPortfolio);
    }
    let groups = [
        Category::Aop,
        Category::AopBrandy,
        Category::Pgi,
        Category::NonPgi,
    ];
    let mut values = [NeumaierSum::new(); 4];
    let mut surfaces = [NeumaierSum::new(); 4];
    let (mut total_value, mut total_surface) = (NeumaierSum::new(), NeumaierSum::new());
    for r in records {
        let g = groups
            .iter()
            .position(|&c| c == r.category.reporting_group())
            .expect("four groups");
        values[g].add(r.value);
        surfaces[g].add(r.surface);
        total_value.add(r.value);
        total_surface.add(r.surface);
    }
    let share = |part: f64, total: f64| if total > 0.0 { part / total } else { 0.0 };
    Ok(groups
        .iter()
        .enumerate()
        .map(|(g, &category)| CategorySummary {
            category,
            total_value: values[g].total(),
            value_share: share(values[g].total(), total_value.total()),
            total_surface: surfaces[g].total(),
            surface_share: share(surfaces[g].total(), total_surface.total()),
        })
        .collect())
}

pub const UNKNOWN_REGION: &str = "UNKNOWN";

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSummary {
    pub region_id: String,
    pub total_value: f64,
    pub total_surface: f64,
    pub value_per_hectare: f64,
}

/// Totals by agricultural region, sorted by region id. Counties missing from
/// the map fall under [`UNKNOWN_REGION`]; regions without surface are omitted.
pub fn summarize_by_region(
    records: &[HarvestValueRecord],
    county_to_region: &BTreeMap<String, String>,
) -> Vec<RegionSummary> {
    let mut acc: BTreeMap<&str, (NeumaierSum, NeumaierSum)> = BTreeMap::new();
    for r in records {
        let region = county_to_region
            .get(&r.insee_code)
            .map_or(UNKNOWN_REGION, |s| s.as_str());
        let e = acc.entry(region).or_default();
        e.0.add(r.value);
        e.1.add(r.surface);
    }
    acc.into_iter()
        .filter(|(_, (_, s))| s.total() > 0.0)
        .map(|(id, (v, s))| RegionSummary {
            region_id: id.to_string(),
            total_value: v.total(),
            total_surface: s.total(),
            value_per_hectare: v.total() / s.total(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::yields::YieldProvenance;
    use alloc::vec;

    #[test]
    fn harvest_value_examples() {
        let v = harvest_value(13.5, 73.16, 260.0).unwrap();
        assert!((v - 256_902.0).abs() / 256_902.0 < 0.005);
        assert_eq!(harvest_value(0.0, 60.0, 300.0).unwrap(), 0.0);
        assert_eq!(harvest_value(2.0, 50.0, 100.0).unwrap(), 10_000.0);
        assert!(harvest_value(-1.0, 50.0, 100.0).is_err());
        assert!(harvest_value(1.0, f64::NAN, 100.0).is_err());
    }

    fn record(insee: &str, category: Category, surface: f64, value: f64) -> HarvestValueRecord {
        HarvestValueRecord {
            insee_code: insee.to_string(),
            appellation_code: "X".to_string(),
            appellation_name: String::new(),
            category,
            color: Color::Unknown,
            surface,
            yield_hl_ha: 1.0,
            price: value / surface,
            value,
            price_source: PriceSource::Matched,
            yield_defaulted: false,
        }
    }

    #[test]
    fn category_shares() {
        let one = summarize_by_category(&[record("01001", Category::Pgi, 1.0, 5.0)]).unwrap();
        assert_eq!(one[2].value_share, 1.0);
        assert_eq!(one[0].value_share, 0.0);
        let two = summarize_by_category(&[
            record("01001", Category::Aop, 1.0, 5.0),
            record("01001", Category::PseudoNonPgi, 3.0, 5.0),
        ])
        .unwrap();
        assert_eq!(two[0].value_share, 0.5);
        assert_eq!(two[3].value_share, 0.5);
        assert_eq!(two[3].surface_share, 0.75);
        let order: Vec<Category> = two.iter().map(|s| s.category).collect();
        assert_eq!(
            order,
            vec![
                Category::Aop,
                Category::AopBrandy,
                Category::Pgi,
                Category::NonPgi
            ]
        );
        assert_eq!(
            summarize_by_category(&[]),
            Err(ValuationError::EmptyPortfolio)
        );
    }

    #[test]
    fn region_value_per_hectare() {
        let map = BTreeMap::from([
            ("01001".to_string(), "R1".to_string()),
            ("01002".to_string(), "R1".to_string()),
        ]);
        let out = summarize_by_region(
            &[
                record("01001", Category::Aop, 10.0, 50_000.0),
                record("01002", Category::Aop, 10.0, 150_000.0),
            ],
            &map,
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].value_per_hectare, 10_000.0);
        assert!(summarize_by_region(&[], &map).is_empty());
        let out = summarize_by_region(&[record("99999", Category::Aop, 1.0, 1.0)], &map);
        assert_eq!(out[0].region_id, UNKNOWN_REGION);
    }

    #[test]
    fn unmatched_price_uses_category_median() {
        let apps = vec![
            AppellationRecord::new("A", "a", Category::Aop, Color::White, 10.0).unwrap(),
            AppellationRecord::new("B", "b", Category::Aop, Color::White, 10.0).unwrap(),
            AppellationRecord::new("C", "c", Category::Aop, Color::White, 10.0).unwrap(),
            AppellationRecord::new("D", "d", Category::Aop, Color::Red, 10.0).unwrap(),
            AppellationRecord::new("P", "p", Category::Pgi, Color::Red, 10.0).unwrap(),
        ];
        let prices = BTreeMap::from([
            ("A".to_string(), 100.0),
            ("B".to_string(), 300.0),
            ("C".to_string(), 200.0),
            ("P".to_string(), 50.0),
        ]);
        let yields: BTreeMap<String, ExpectedYield> = apps
            .iter()
            .map(|a| {
                (
                    a.code.clone(),
                    ExpectedYield {
                        appellation_code: a.code.clone(),
                        value: 50.0,
                        provenance: YieldProvenance::Default40,
                    },
                )
            })
            .collect();
        let alloc = AllocationMatrix {
            cells: BTreeMap::from([
                (("A".to_string(), "01001".to_string()), 1.0),
                (("D".to_string(), "01001".to_string()), 2.0),
                (("P".to_string(), "01001".to_string()), 3.0),
            ]),
            objective_value: 0.0,
        };
        let p = build_portfolio(&alloc, &apps, &yields, &prices);
        assert_eq!(p.records.len(), 3);
        let d = p
            .records
            .iter()
            .find(|r| r.appellation_code == "D")
            .unwrap();
        assert_eq!(d.price, 200.0);
        assert_eq!(d.price_source, PriceSource::CategoryMedian);
        assert_eq!(p.flagged_prices, 1);
        assert_eq!(p.total_surface(), alloc.total());
        assert_eq!(d.value, 2.0 * 50.0 * 200.0);
    }
}
