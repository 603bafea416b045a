//! Parsers for the open-data inputs.
//!
//! Row-level problems (bad numbers, bad codes) are collected with their line
//! numbers and the row is skipped; only structural problems (missing column,
//! duplicate county) abort the parse.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vinmap_core::cvi::{infer_category, infer_color, CviCode, TruncationRule};
use vinmap_core::linkage::{normalize_label, Dictionary};
use vinmap_core::model::{
    snap_weight, AppellationRecord, AuthorizationMask, Category, Color, CountyRecord, PriceEntry,
    ProductionMode,
};
use vinmap_core::sum::NeumaierSum;
use vinmap_core::validate::AggregateKey;

use crate::config::{AppellationColumns, AuthorizationColumns, CountyColumns, PriceColumns};
use crate::table::{field, Table, TableError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{file}: line {line}: duplicate key {key}")]
    Duplicate {
        file: String,
        line: usize,
        key: String,
    },
}

impl IngestError {
    /// Missing columns are configuration mistakes rather than data errors.
    pub fn is_config(&self) -> bool {
        matches!(self, IngestError::Table(TableError::MissingColumn { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

/// One JSON line of the ingest report.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub file: String,
    pub rows: usize,
    pub records: usize,
    pub secretized: usize,
    pub row_errors: Vec<RowError>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl IngestReport {
    fn new(file: &str, table: &Table) -> Self {
        let mut r = Self {
            file: file.to_string(),
            rows: table.rows.len(),
            ..Self::default()
        };
        if table.latin1_fallback {
            r.notes.push("decoded as Latin-1".into());
        }
        r
    }

    fn error(&mut self, line: usize, message: impl Into<String>) {
        self.row_errors.push(RowError {
            line,
            message: message.into(),
        });
    }

    fn count(&mut self, key: &str) {
        *self.counts.entry(key.to_string()).or_default() += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub report: IngestReport,
}

/// Blank cells and configured markers stand for secretized figures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretMarkers(Vec<String>);

impl SecretMarkers {
    pub fn new(markers: &[String]) -> Self {
        Self(markers.iter().map(|m| m.trim().to_lowercase()).collect())
    }

    pub fn is_secret(&self, cell: &str) -> bool {
        let c = cell.trim();
        c.is_empty() || self.0.iter().any(|m| c.eq_ignore_ascii_case(m))
    }
}

impl Default for SecretMarkers {
    fn default() -> Self {
        Self::new(&["s".into(), "secret".into(), "nc".into()])
    }
}

pub fn parse_number(cell: &str) -> Result<f64, String> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| format!("not a number: {cell:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("not a finite number: {cell:?}"))
    }
}

fn parse_surface(cell: &str) -> Result<f64, String> {
    let v = parse_number(cell)?;
    if v < 0.0 {
        return Err(format!("negative surface: {cell:?}"));
    }
    Ok(v)
}

/// Yield columns `<prefix><year>` of a table, in year order.
fn yield_columns(table: &Table, prefix: &str) -> Vec<(u16, usize)> {
    let mut cols: Vec<(u16, usize)> = table
        .headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let rest = h.strip_prefix(prefix)?;
            (rest.len() == 4)
                .then(|| rest.parse().ok())
                .flatten()
                .map(|y| (y, i))
        })
        .collect();
    cols.sort_unstable();
    cols
}

struct Group {
    name: String,
    category: Category,
    color: Color,
    surface: NeumaierSum,
    /// year → (Σ yield·surface, Σ surface, rows, value of the single row)
    yields: BTreeMap<u16, (NeumaierSum, NeumaierSum, usize, f64)>,
}

/// Customs statistics by CVI product. Rows are grouped by appellation prefix:
/// surfaces are summed and yields averaged weighted by surface (the
/// volume-weighted mean).
pub fn parse_customs_by_appellation(
    table: &Table,
    cols: &AppellationColumns,
    rule: TruncationRule,
    secret: &SecretMarkers,
) -> Result<Parsed<Vec<AppellationRecord>>, IngestError> {
    let mut report = IngestReport::new("appellations", table);
    let code_col = table.column(&cols.code)?;
    let surface_col = table.column(&cols.surface)?;
    let name_col = table.optional_column(&cols.name);
    let category_col = table.optional_column(&cols.category);
    let color_col = table.optional_column(&cols.color);
    let years = yield_columns(table, &cols.yield_prefix);

    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for (line, row) in &table.rows {
        let line = *line;
        let code = match CviCode::parse(field(row, code_col), rule) {
            Ok(c) => c,
            Err(e) => {
                report.error(line, e.to_string());
                continue;
            }
        };
        let surface_cell = field(row, surface_col);
        if secret.is_secret(surface_cell) {
            report.secretized += 1;
            continue;
        }
        let surface = match parse_surface(surface_cell) {
            Ok(v) => v,
            Err(e) => {
                report.error(line, e);
                continue;
            }
        };
        let category = match category_col
            .map(|i| field(row, i))
            .filter(|s| !s.is_empty())
        {
            Some(s) => s.parse::<Category>().map_err(|e| e.to_string()),
            None => infer_category(code.prefix())
                .ok_or_else(|| format!("cannot infer category of {:?}", code.prefix())),
        };
        let category = match category {
            Ok(c) => c,
            Err(e) => {
                report.error(line, e);
                continue;
            }
        };
        let color = match color_col.map(|i| field(row, i)).filter(|s| !s.is_empty()) {
            Some(s) => match s.parse::<Color>() {
                Ok(c) => c,
                Err(e) => {
                    report.error(line, e.to_string());
                    continue;
                }
            },
            None => infer_color(code.prefix()),
        };
        let mut row_yields = Vec::new();
        let mut bad = None;
        for &(year, i) in &years {
            let cell = field(row, i);
            if secret.is_secret(cell) {
                continue;
            }
            match parse_number(cell) {
                Ok(v) if v > 0.0 => row_yields.push((year, v)),
                // a zero yield records non-production
                Ok(0.0) => {}
                Ok(v) => bad = Some(format!("negative yield {v} for {year}")),
                Err(e) => bad = Some(e),
            }
        }
        if let Some(e) = bad {
            report.error(line, e);
            continue;
        }

        let name = name_col
            .map(|i| field(row, i).to_string())
            .unwrap_or_default();
        let g = groups
            .entry(code.prefix().to_string())
            .or_insert_with(|| Group {
                name: String::new(),
                category,
                color,
                surface: NeumaierSum::new(),
                yields: BTreeMap::new(),
            });
        if g.name.is_empty() {
            g.name = name;
        }
        g.surface.add(surface);
        for (year, v) in row_yields {
            let e = g
                .yields
                .entry(year)
                .or_insert((NeumaierSum::new(), NeumaierSum::new(), 0, v));
            e.0.add(v * surface);
            e.1.add(surface);
            e.2 += 1;
        }
    }

    let mut out = Vec::with_capacity(groups.len());
    for (code, g) in groups {
        let name = if g.name.is_empty() {
            code.clone()
        } else {
            g.name
        };
        let mut rec = AppellationRecord::new(code, name, g.category, g.color, g.surface.total())
            .expect("surfaces are validated");
        for (year, (weighted, surface, n, single)) in g.yields {
            let v = if n == 1 {
                single
            } else if surface.total() > 0.0 {
                weighted.total() / surface.total()
            } else {
                continue;
            };
            rec = rec.with_yield(year, v).expect("yields are validated");
        }
        out.push(rec);
    }
    report.records = out.len();
    Ok(Parsed { value: out, report })
}

/// Customs statistics by county. INSEE codes are kept as text.
pub fn parse_customs_by_county(
    table: &Table,
    cols: &CountyColumns,
    secret: &SecretMarkers,
) -> Result<Parsed<Vec<CountyRecord>>, IngestError> {
    let mut report = IngestReport::new("counties", table);
    let insee_col = table.column(&cols.insee)?;
    let surface_col = table.column(&cols.surface)?;
    let region_col = table.optional_column(&cols.region);
    let mut seen: BTreeMap<String, CountyRecord> = BTreeMap::new();
    for (line, row) in &table.rows {
        let insee = field(row, insee_col);
        if seen.contains_key(insee) {
            return Err(IngestError::Duplicate {
                file: report.file,
                line: *line,
                key: insee.to_string(),
            });
        }
        let cell = field(row, surface_col);
        if secret.is_secret(cell) {
            report.secretized += 1;
            continue;
        }
        let surface = match parse_surface(cell) {
            Ok(v) => v,
            Err(e) => {
                report.error(*line, e);
                continue;
            }
        };
        let region = region_col.map(|i| field(row, i)).unwrap_or("");
        match CountyRecord::new(insee, region, surface) {
            Ok(c) => {
                seen.insert(insee.to_string(), c);
            }
            Err(e) => report.error(*line, e.to_string()),
        }
    }
    let out: Vec<CountyRecord> = seen.into_values().collect();
    report.records = out.len();
    Ok(Parsed { value: out, report })
}

/// INAO authorizations. Pairs naming an unknown appellation or county are
/// excluded and reported. Weights, when the file has a weight column and
/// `use_weights` is set, are snapped to 1, 1/3 or 1/4.
pub fn parse_inao_authorizations(
    table: &Table,
    cols: &AuthorizationColumns,
    appellations: &[AppellationRecord],
    counties: &[CountyRecord],
    use_weights: bool,
) -> Result<Parsed<AuthorizationMask>, IngestError> {
    let mut report = IngestReport::new("authorizations", table);
    let app_col = table.column(&cols.appellation)?;
    let insee_col = table.column(&cols.insee)?;
    let weight_col = if use_weights {
        table.optional_column(&cols.weight)
    } else {
        None
    };
    let apps: BTreeSet<&str> = appellations.iter().map(|a| a.code.as_str()).collect();
    let cnts: BTreeSet<&str> = counties.iter().map(|c| c.insee_code.as_str()).collect();

    let mut mask = AuthorizationMask::new();
    for (line, row) in &table.rows {
        let (a, c) = (field(row, app_col), field(row, insee_col));
        let weight = match weight_col.map(|i| field(row, i)).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => match parse_number(s) {
                Ok(w) if w > 0.0 && w <= 1.0 => Some(snap_weight(w)),
                Ok(w) => {
                    report.error(*line, format!("weight {w} outside (0, 1]"));
                    continue;
                }
                Err(e) => {
                    report.error(*line, e);
                    continue;
                }
            },
        };
        let known_a = apps.contains(a);
        let known_c = cnts.contains(c);
        if !known_a || !known_c {
            if !known_a {
                report.count("unmatched_appellation");
            }
            if !known_c {
                report.count("unmatched_county");
            }
            report.count("unmatched_pairs");
            report
                .notes
                .push(format!("line {line}: unmatched pair ({a}, {c})"));
            continue;
        }
        if let Some(w) = weight {
            match mask.weight(a) {
                Some(prev) if prev != w => {
                    report.error(*line, format!("weight {w} conflicts with {prev} for {a}"));
                    continue;
                }
                _ => mask.set_weight(a, w),
            }
        }
        if !mask.insert(a, c) {
            report.count("duplicate_pairs");
        }
    }
    report.records = mask.len();
    Ok(Parsed {
        value: mask,
        report,
    })
}

/// Insurance price scale. A trailing ` C` / ` B` marks the production mode.
pub fn parse_price_scale(
    table: &Table,
    cols: &PriceColumns,
    dict: &Dictionary,
) -> Result<Parsed<Vec<PriceEntry>>, IngestError> {
    let mut report = IngestReport::new("prices", table);
    let label_col = table.column(&cols.label)?;
    let price_col = table.column(&cols.price)?;
    let region_col = table.optional_column(&cols.region);
    let mut out = Vec::new();
    for (line, row) in &table.rows {
        let label = field(row, label_col);
        let price = match parse_number(field(row, price_col)) {
            Ok(p) => p,
            Err(e) => {
                report.error(*line, e);
                continue;
            }
        };
        let (bare, mode) = ProductionMode::split_label(label);
        let region = region_col
            .map(|i| field(row, i))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        match PriceEntry::new(label, normalize_label(bare, dict), price, mode, region) {
            Ok(p) => out.push(p),
            Err(e) => report.error(*line, e.to_string()),
        }
    }
    report.records = out.len();
    Ok(Parsed { value: out, report })
}

/// `department;surface` of non-PGI wine.
pub fn parse_department_surfaces(
    table: &Table,
    secret: &SecretMarkers,
) -> Result<Parsed<BTreeMap<String, f64>>, IngestError> {
    let mut report = IngestReport::new("non_pgi_by_department", table);
    let dept_col = table.column("department")?;
    let surface_col = table.column("surface")?;
    let mut out = BTreeMap::new();
    for (line, row) in &table.rows {
        let cell = field(row, surface_col);
        if secret.is_secret(cell) {
            report.secretized += 1;
            continue;
        }
        match parse_surface(cell) {
            Ok(v) => {
                let dept = field(row, dept_col).to_string();
                if out.insert(dept.clone(), v).is_some() {
                    return Err(IngestError::Duplicate {
                        file: report.file,
                        line: *line,
                        key: dept,
                    });
                }
            }
            Err(e) => report.error(*line, e),
        }
    }
    report.records = out.len();
    Ok(Parsed { value: out, report })
}

/// Two-column text map, e.g. `insee;region` or `appellation;region`.
pub fn parse_text_map(
    file: &str,
    table: &Table,
    key: &str,
    value: &str,
) -> Result<Parsed<BTreeMap<String, String>>, IngestError> {
    let mut report = IngestReport::new(file, table);
    let k = table.column(key)?;
    let v = table.column(value)?;
    let mut out = BTreeMap::new();
    for (line, row) in &table.rows {
        let (key, value) = (field(row, k), field(row, v));
        if key.is_empty() || value.is_empty() {
            report.error(*line, "empty key or value");
            continue;
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(IngestError::Duplicate {
                file: report.file,
                line: *line,
                key: key.to_string(),
            });
        }
    }
    report.records = out.len();
    Ok(Parsed { value: out, report })
}

/// Surfaces keyed by (appellation code, insee code).
pub type CellSurfaces = BTreeMap<(String, String), f64>;

/// `appellation;insee;surface` cells known from outside the register
/// (prepared by hand, e.g. for Champagne).
pub fn parse_known_cells(
    table: &Table,
    counties: &[CountyRecord],
) -> Result<Parsed<CellSurfaces>, IngestError> {
    let mut report = IngestReport::new("champagne", table);
    let a = table.column("appellation")?;
    let c = table.column("insee")?;
    let s = table.column("surface")?;
    let cnts: BTreeSet<&str> = counties.iter().map(|c| c.insee_code.as_str()).collect();
    let mut out = BTreeMap::new();
    for (line, row) in &table.rows {
        let (app, insee) = (field(row, a), field(row, c));
        if app.is_empty() {
            report.error(*line, "empty appellation code");
            continue;
        }
        if !cnts.contains(insee) {
            report.count("unmatched_county");
            report
                .notes
                .push(format!("line {line}: unknown county {insee}"));
            continue;
        }
        match parse_surface(field(row, s)) {
            Ok(v) => {
                if out
                    .insert((app.to_string(), insee.to_string()), v)
                    .is_some()
                {
                    return Err(IngestError::Duplicate {
                        file: report.file,
                        line: *line,
                        key: format!("({app}, {insee})"),
                    });
                }
            }
            Err(e) => report.error(*line, e),
        }
    }
    report.records = out.len();
    Ok(Parsed { value: out, report })
}

/// `department;wine_type;surface` reference statistics.
pub fn parse_reference_aggregates(
    table: &Table,
) -> Result<Parsed<BTreeMap<AggregateKey, f64>>, IngestError> {
    let mut report = IngestReport::new("reference_aggregates", table);
    let d = table.column("department")?;
    let w = table.column("wine_type")?;
    let s = table.column("surface")?;
    let mut out = BTreeMap::new();
    for (line, row) in &table.rows {
        let wine_type = match field(row, w).parse::<Category>() {
            Ok(c) => c.reporting_group().as_str(),
            Err(e) => {
                report.error(*line, e.to_string());
                continue;
            }
        };
        match parse_surface(field(row, s)) {
            Ok(v) => {
                let key = AggregateKey::new(field(row, d), wine_type);
                if out.insert(key.clone(), v).is_some() {
                    return Err(IngestError::Duplicate {
                        file: report.file,
                        line: *line,
                        key: key.label(),
                    });
                }
            }
            Err(e) => report.error(*line, e),
        }
    }
    report.records = out.len();
    Ok(Parsed { value: out, report })
}
