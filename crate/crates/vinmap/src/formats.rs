//! Canonical intermediate files: `;`-separated UTF-8 CSV with a header row,
//! numbers in shortest round-trip form, and JSON reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vinmap_core::allocator::{AllocError, AllocationMatrix, AllocationProblem};
use vinmap_core::model::{
    AppellationRecord, AuthorizationMask, CountyRecord, PriceEntry, ProductionMode,
};
use vinmap_core::validate::ComparisonReport;
use vinmap_core::valuation::{CategorySummary, HarvestValueRecord, RegionSummary};
use vinmap_core::yields::{ExpectedYield, YieldProvenance};

use crate::table::{field, Delimiter, Table, TableError, TextFormat};

/// Cells at or below this many hectares are left out of solution files.
pub const SOLUTION_MIN_HECTARES: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{file}: line {line}: {message}")]
    Row {
        file: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Problem(#[from] AllocError),
}

fn row_err(file: &str, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Row {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

pub fn num(v: f64) -> String {
    // `{}` prints the shortest string that parses back to the same value
    format!("{v}")
}

fn parse_num(file: &str, line: usize, cell: &str) -> Result<f64, FormatError> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| row_err(file, line, format!("not a number: {cell:?}")))
}

pub fn write_csv<I>(path: &Path, headers: &[&str], rows: I) -> Result<(), FormatError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let wrap = |source| FormatError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .delimiter(b';')
        .from_path(path)
        .map_err(wrap)?;
    w.write_record(headers).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.flush().map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn create_dir(dir: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(|source| FormatError::Io {
        path: dir.display().to_string(),
        source,
    })
}

pub fn read_table(path: &Path) -> Result<Table, FormatError> {
    Ok(Table::read(
        path,
        &TextFormat {
            delimiter: Delimiter::Byte(b';'),
            ..TextFormat::default()
        },
    )?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// One compact JSON document per line.
pub fn write_json_lines<T: Serialize>(path: &Path, values: &[T]) -> Result<(), FormatError> {
    let mut text = String::new();
    for v in values {
        text.push_str(
            &serde_json::to_string(v).map_err(|source| FormatError::Json {
                path: path.display().to_string(),
                source,
            })?,
        );
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

// appellations / counties / mask / prices

/// Readable back with the default appellation columns and the `keep`
/// truncation rule.
pub fn write_appellations(path: &Path, apps: &[AppellationRecord]) -> Result<(), FormatError> {
    let years: BTreeSet<u16> = apps
        .iter()
        .flat_map(|a| a.yield_history.keys().copied())
        .collect();
    let year_headers: Vec<String> = years.iter().map(|y| format!("yield_{y}")).collect();
    let mut headers = vec!["code", "name", "category", "color", "surface"];
    headers.extend(year_headers.iter().map(String::as_str));
    write_csv(
        path,
        &headers,
        apps.iter().map(|a| {
            let mut row = vec![
                a.code.clone(),
                a.name.clone(),
                a.category.as_str().to_string(),
                a.color.as_str().to_string(),
                num(a.marginal_surface),
            ];
            row.extend(
                years
                    .iter()
                    .map(|y| a.yield_history.get(y).map_or_else(String::new, |v| num(*v))),
            );
            row
        }),
    )
}

pub fn write_counties(path: &Path, counties: &[CountyRecord]) -> Result<(), FormatError> {
    write_csv(
        path,
        &["insee", "department", "region", "surface"],
        counties.iter().map(|c| {
            vec![
                c.insee_code.clone(),
                c.department.clone(),
                c.agricultural_region_id.clone(),
                num(c.marginal_surface),
            ]
        }),
    )
}

pub fn write_mask(path: &Path, mask: &AuthorizationMask) -> Result<(), FormatError> {
    write_csv(
        path,
        &["appellation", "insee", "weight"],
        mask.cells().map(|(a, c)| {
            vec![
                a.to_string(),
                c.to_string(),
                mask.weight(a).map_or_else(String::new, num),
            ]
        }),
    )
}

pub fn read_mask(path: &Path) -> Result<AuthorizationMask, FormatError> {
    let t = read_table(path)?;
    let (a, c, w) = (
        t.column("appellation")?,
        t.column("insee")?,
        t.column("weight")?,
    );
    let mut mask = AuthorizationMask::new();
    for (line, row) in &t.rows {
        mask.insert(field(row, a), field(row, c));
        let cell = field(row, w);
        if !cell.is_empty() {
            mask.set_weight(field(row, a), parse_num(&t.name, *line, cell)?);
        }
    }
    Ok(mask)
}

pub fn write_prices(path: &Path, prices: &[PriceEntry]) -> Result<(), FormatError> {
    write_csv(
        path,
        &[
            "label",
            "normalized_label",
            "price",
            "production_mode",
            "region",
        ],
        prices.iter().map(|p| {
            vec![
                p.label.clone(),
                p.normalized_label.clone(),
                num(p.price),
                p.production_mode.as_str().to_string(),
                p.region_hint.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn read_prices(path: &Path) -> Result<Vec<PriceEntry>, FormatError> {
    let t = read_table(path)?;
    let cols = [
        "label",
        "normalized_label",
        "price",
        "production_mode",
        "region",
    ]
    .map(|c| t.column(c))
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    t.rows
        .iter()
        .map(|(line, row)| {
            let mode: ProductionMode =
                field(row, cols[3])
                    .parse()
                    .map_err(|e: vinmap_core::model::ModelError| {
                        row_err(&t.name, *line, e.to_string())
                    })?;
            let region = Some(field(row, cols[4]))
                .filter(|s| !s.is_empty())
                .map(str::to_string);
            PriceEntry::new(
                field(row, cols[0]),
                field(row, cols[1]),
                parse_num(&t.name, *line, field(row, cols[2]))?,
                mode,
                region,
            )
            .map_err(|e| row_err(&t.name, *line, e.to_string()))
        })
        .collect()
}

// allocation problem triple

pub const PROBLEM_APPELLATIONS: &str = "problem_appellations.csv";
pub const PROBLEM_COUNTIES: &str = "problem_counties.csv";
pub const PROBLEM_MASK: &str = "problem_mask.csv";

/// Writes `problem_appellations.csv` (code;cap;weight),
/// `problem_counties.csv` (insee;cap) and `problem_mask.csv`
/// (appellation;insee, including cells dropped for a zero bound) into `dir`.
pub fn write_problem(dir: &Path, p: &AllocationProblem) -> Result<(), FormatError> {
    write_csv(
        &dir.join(PROBLEM_APPELLATIONS),
        &["code", "cap", "weight"],
        p.appellation_codes()
            .iter()
            .zip(p.appellation_caps())
            .zip(p.weights())
            .map(|((c, cap), w)| vec![c.clone(), num(*cap), num(*w)]),
    )?;
    write_csv(
        &dir.join(PROBLEM_COUNTIES),
        &["insee", "cap"],
        p.county_codes()
            .iter()
            .zip(p.county_caps())
            .map(|(c, cap)| vec![c.clone(), num(*cap)]),
    )?;
    write_csv(
        &dir.join(PROBLEM_MASK),
        &["appellation", "insee"],
        p.mask_keys()
            .into_iter()
            .map(|(a, c)| vec![a.to_string(), c.to_string()]),
    )
}

pub fn read_problem(dir: &Path) -> Result<AllocationProblem, FormatError> {
    let ta = read_table(&dir.join(PROBLEM_APPELLATIONS))?;
    let (code, cap, weight) = (ta.column("code")?, ta.column("cap")?, ta.column("weight")?);
    let mut caps = BTreeMap::new();
    let mut weights = BTreeMap::new();
    for (line, row) in &ta.rows {
        caps.insert(
            field(row, code).to_string(),
            parse_num(&ta.name, *line, field(row, cap))?,
        );
        weights.insert(
            field(row, code).to_string(),
            parse_num(&ta.name, *line, field(row, weight))?,
        );
    }
    let tc = read_table(&dir.join(PROBLEM_COUNTIES))?;
    let (insee, ccap) = (tc.column("insee")?, tc.column("cap")?);
    let mut county_caps = BTreeMap::new();
    for (line, row) in &tc.rows {
        county_caps.insert(
            field(row, insee).to_string(),
            parse_num(&tc.name, *line, field(row, ccap))?,
        );
    }
    let tm = read_table(&dir.join(PROBLEM_MASK))?;
    let (a, c) = (tm.column("appellation")?, tm.column("insee")?);
    let cells: Vec<(String, String, f64)> = tm
        .rows
        .iter()
        .map(|(_, row)| {
            let a = field(row, a).to_string();
            let w = weights.get(&a).copied().unwrap_or(f64::NAN);
            (a, field(row, c).to_string(), w)
        })
        .collect();
    Ok(AllocationProblem::from_parts(&caps, &county_caps, cells)?)
}

// solutions

pub fn write_solution(path: &Path, m: &AllocationMatrix) -> Result<(), FormatError> {
    write_csv(
        path,
        &["appellation", "insee", "hectares"],
        m.cells
            .iter()
            .filter(|(_, v)| **v > SOLUTION_MIN_HECTARES)
            .map(|((a, c), v)| vec![a.clone(), c.clone(), num(*v)]),
    )
}

/// Reads a sparse solution; the objective is left at zero.
pub fn read_solution(path: &Path) -> Result<AllocationMatrix, FormatError> {
    let t = read_table(path)?;
    let (a, c, h) = (
        t.column("appellation")?,
        t.column("insee")?,
        t.column("hectares")?,
    );
    let mut cells = BTreeMap::new();
    for (line, row) in &t.rows {
        let v = parse_num(&t.name, *line, field(row, h))?;
        if v < 0.0 {
            return Err(row_err(&t.name, *line, "negative surface"));
        }
        if cells
            .insert((field(row, a).to_string(), field(row, c).to_string()), v)
            .is_some()
        {
            return Err(row_err(&t.name, *line, "duplicate cell"));
        }
    }
    Ok(AllocationMatrix {
        cells,
        objective_value: 0.0,
    })
}

// yields

pub fn write_yields(
    path: &Path,
    yields: &BTreeMap<String, ExpectedYield>,
) -> Result<(), FormatError> {
    write_csv(
        path,
        &["code", "value", "provenance"],
        yields.values().map(|y| {
            vec![
                y.appellation_code.clone(),
                num(y.value),
                y.provenance.as_str().to_string(),
            ]
        }),
    )
}

pub fn read_yields(path: &Path) -> Result<BTreeMap<String, ExpectedYield>, FormatError> {
    let t = read_table(path)?;
    let (c, v, p) = (
        t.column("code")?,
        t.column("value")?,
        t.column("provenance")?,
    );
    let mut out = BTreeMap::new();
    for (line, row) in &t.rows {
        let provenance = YieldProvenance::parse(field(row, p)).ok_or_else(|| {
            row_err(
                &t.name,
                *line,
                format!("unknown provenance {:?}", field(row, p)),
            )
        })?;
        let y = ExpectedYield {
            appellation_code: field(row, c).to_string(),
            value: parse_num(&t.name, *line, field(row, v))?,
            provenance,
        };
        out.insert(y.appellation_code.clone(), y);
    }
    Ok(out)
}

// match report

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRow {
    pub label: String,
    pub code: String,
    pub distance: f64,
    pub accepted: bool,
}

pub fn write_match_report(path: &Path, rows: &[MatchRow]) -> Result<(), FormatError> {
    write_csv(
        path,
        &["label", "code", "distance", "accepted"],
        rows.iter().map(|r| {
            vec![
                r.label.clone(),
                r.code.clone(),
                num(r.distance),
                r.accepted.to_string(),
            ]
        }),
    )
}

pub fn read_match_report(path: &Path) -> Result<Vec<MatchRow>, FormatError> {
    let t = read_table(path)?;
    let cols = ["label", "code", "distance", "accepted"]
        .map(|c| t.column(c))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    t.rows
        .iter()
        .map(|(line, row)| {
            let accepted = match field(row, cols[3]) {
                "true" => true,
                "false" => false,
                other => {
                    return Err(row_err(
                        &t.name,
                        *line,
                        format!("expected true/false, got {other:?}"),
                    ))
                }
            };
            Ok(MatchRow {
                label: field(row, cols[0]).to_string(),
                code: field(row, cols[1]).to_string(),
                distance: parse_num(&t.name, *line, field(row, cols[2]))?,
                accepted,
            })
        })
        .collect()
}

// valuation outputs

pub const PORTFOLIO_HEADERS: [&str; 7] = [
    "county",
    "appellation",
    "surface_ha",
    "expected_yield_hl_ha",
    "price_eur_hl",
    "harvest_value_eur",
    "price_flag",
];

/// Columns in the order of the published extract (county, appellation and
/// color, surface, expected yield, price, harvest value) plus the price
/// fallback flag. Values are stored unrounded.
pub fn write_portfolio(path: &Path, records: &[HarvestValueRecord]) -> Result<(), FormatError> {
    write_csv(
        path,
        &PORTFOLIO_HEADERS,
        records.iter().map(|r| {
            let appellation = if r.appellation_name.is_empty() {
                r.appellation_code.clone()
            } else {
                format!("{} {}", r.appellation_code, r.appellation_name)
            };
            vec![
                r.insee_code.clone(),
                appellation,
                num(r.surface),
                num(r.yield_hl_ha),
                num(r.price),
                num(r.value),
                r.price_source.as_str().to_string(),
            ]
        }),
    )
}

pub fn write_category_summary(path: &Path, rows: &[CategorySummary]) -> Result<(), FormatError> {
    write_csv(
        path,
        &[
            "category",
            "total_value_eur",
            "value_share",
            "total_surface_ha",
            "surface_share",
        ],
        rows.iter().map(|r| {
            vec![
                r.category.as_str().to_string(),
                num(r.total_value),
                num(r.value_share),
                num(r.total_surface),
                num(r.surface_share),
            ]
        }),
    )
}

pub fn write_region_summary(path: &Path, rows: &[RegionSummary]) -> Result<(), FormatError> {
    write_csv(
        path,
        &[
            "region",
            "total_value_eur",
            "total_surface_ha",
            "value_per_hectare",
        ],
        rows.iter().map(|r| {
            vec![
                r.region_id.clone(),
                num(r.total_value),
                num(r.total_surface),
                num(r.value_per_hectare),
            ]
        }),
    )
}

// comparison reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonJson {
    pub pair_count: usize,
    pub kendall_tau: Option<f64>,
    pub kendall_tau_min: Option<f64>,
    pub restricted_count: usize,
    pub restricted_tau: Option<f64>,
    pub restricted_tau_min: Option<f64>,
    pub missing_in_model: usize,
    pub missing_in_reference: usize,
}

impl From<&ComparisonReport> for ComparisonJson {
    fn from(r: &ComparisonReport) -> Self {
        Self {
            pair_count: r.pair_count,
            kendall_tau: r.kendall_tau,
            kendall_tau_min: r.kendall_tau_min,
            restricted_count: r.restricted_count,
            restricted_tau: r.restricted_tau,
            restricted_tau_min: r.restricted_tau_min,
            missing_in_model: r.missing_in_model,
            missing_in_reference: r.missing_in_reference,
        }
    }
}

pub fn write_scatter(path: &Path, r: &ComparisonReport) -> Result<(), FormatError> {
    write_csv(
        path,
        &["key", "model", "reference"],
        r.scatter_rows
            .iter()
            .map(|s| vec![s.key.clone(), num(s.model_value), num(s.reference_value)]),
    )
}

/// Every regular file under `dir`, sorted, relative to `dir`.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>, FormatError> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out).map_err(|source| FormatError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    out.sort();
    Ok(out)
}
