use std::collections::BTreeMap;

use vinmap::config::{AppellationColumns, AuthorizationColumns, CountyColumns, PriceColumns};
use vinmap::ingest::{
    parse_customs_by_appellation, parse_customs_by_county, parse_inao_authorizations,
    parse_price_scale, IngestError, SecretMarkers,
};
use vinmap::table::{Delimiter, Table};
use vinmap_core::cvi::TruncationRule;
use vinmap_core::linkage::Dictionary;
use vinmap_core::model::{AppellationRecord, Category, CountyRecord, ProductionMode};

fn semi(text: &str) -> Table {
    Table::parse_str("t", text, Delimiter::Byte(b';')).unwrap()
}

fn secret() -> SecretMarkers {
    SecretMarkers::default()
}

fn apps(text: &str, rule: TruncationRule) -> vinmap::ingest::Parsed<Vec<AppellationRecord>> {
    parse_customs_by_appellation(&semi(text), &AppellationColumns::default(), rule, &secret())
        .unwrap()
}

fn counties(text: &str) -> vinmap::ingest::Parsed<Vec<CountyRecord>> {
    parse_customs_by_county(&semi(text), &CountyColumns::default(), &secret()).unwrap()
}

#[test]
fn variety_code_truncated_to_appellation() {
    for rule in [
        TruncationRule::FixedLength(6),
        TruncationRule::TrailingLetter,
    ] {
        let p = apps("code;surface\n1B001M01;3064.79\n", rule);
        assert_eq!(p.value.len(), 1);
        assert_eq!(p.value[0].code, "1B001M");
        assert_eq!(p.value[0].marginal_surface, 3064.79);
        assert_eq!(p.value[0].category, Category::Aop);
    }
}

#[test]
fn empty_file_with_header() {
    let p = apps("code;surface\n", TruncationRule::TrailingLetter);
    assert!(p.value.is_empty());
    assert!(p.report.row_errors.is_empty());
}

#[test]
fn grouped_rows_sum() {
    let p = apps(
        "code;surface\n1B001M01;10.0\n1B001M02;5.0\n",
        TruncationRule::TrailingLetter,
    );
    assert_eq!(p.value.len(), 1);
    assert_eq!(p.value[0].marginal_surface, 15.0);
}

#[test]
fn malformed_surface_is_a_row_error_with_line() {
    let p = apps(
        "code;surface\n1B001M01;10.0\n1B002M01;abc\n",
        TruncationRule::TrailingLetter,
    );
    assert_eq!(p.value.len(), 1);
    assert_eq!(p.report.row_errors.len(), 1);
    assert_eq!(p.report.row_errors[0].line, 3);
}

#[test]
fn missing_column_is_a_config_error() {
    let e = parse_customs_by_appellation(
        &semi("code;area\n1B001M01;1\n"),
        &AppellationColumns::default(),
        TruncationRule::TrailingLetter,
        &secret(),
    )
    .unwrap_err();
    assert!(e.is_config());
}

#[test]
fn county_examples() {
    let p = counties("insee;surface\n01001;0.2\n01002;0\n1001;3\n");
    let codes: Vec<(&str, f64)> = p
        .value
        .iter()
        .map(|c| (c.insee_code.as_str(), c.marginal_surface))
        .collect();
    assert_eq!(codes, vec![("01001", 0.2), ("01002", 0.0)]);
    assert_eq!(p.report.row_errors.len(), 1);
    assert_eq!(p.report.row_errors[0].line, 4);
}

#[test]
fn duplicate_county_is_fatal() {
    let e = parse_customs_by_county(
        &semi("insee;surface\n01001;1\n01001;2\n"),
        &CountyColumns::default(),
        &secret(),
    )
    .unwrap_err();
    assert!(matches!(e, IngestError::Duplicate { .. }));
}

#[test]
fn secretized_surfaces_are_skipped_and_counted() {
    let p = counties("insee;surface\n01001;s\n01002;1\n");
    assert_eq!(p.value.len(), 1);
    assert_eq!(p.report.secretized, 1);
}

#[test]
fn authorization_cells_and_unmatched_county() {
    let a = apps(
        "code;surface\n1B001M01;1\n1B002M01;1\n",
        TruncationRule::TrailingLetter,
    )
    .value;
    let c = counties("insee;surface\n01001;1\n01002;1\n").value;
    let t = semi("appellation;insee\n1B001M;01001\n1B001M;01002\n1B002M;01001\n1B002M;01003\n");
    let p = parse_inao_authorizations(&t, &AuthorizationColumns::default(), &a, &c, true).unwrap();
    assert_eq!(p.value.len(), 3);
    assert!(p.value.contains("1B002M", "01001"));
    assert!(!p.value.contains("1B002M", "01003"));
    assert_eq!(p.report.counts["unmatched_pairs"], 1);
    assert_eq!(p.report.counts["unmatched_county"], 1);
}

#[test]
fn sas_style_row_with_rounded_weight() {
    let a = apps("code;category;surface\n3B011;PGI;5\n", TruncationRule::Keep).value;
    let c = counties("insee;surface\n01001;5\n").value;
    let t = Table::parse_str(
        "sas",
        "insee appellation weight flag\n01001 3B011 0.33 0\n",
        Delimiter::Whitespace,
    )
    .unwrap();
    let p = parse_inao_authorizations(&t, &AuthorizationColumns::default(), &a, &c, true).unwrap();
    assert!(p.value.contains("3B011", "01001"));
    assert_eq!(p.value.weight("3B011"), Some(1.0 / 3.0));
}

#[test]
fn price_scale_examples() {
    let t = semi("label;price\nCrémant d'Alsace blanc C;260\nX B;300\nY;-5\n");
    let p = parse_price_scale(&t, &PriceColumns::default(), &Dictionary::french_default()).unwrap();
    let modes: BTreeMap<&str, (f64, ProductionMode)> = p
        .value
        .iter()
        .map(|e| (e.label.as_str(), (e.price, e.production_mode)))
        .collect();
    assert_eq!(
        modes["Crémant d'Alsace blanc C"],
        (260.0, ProductionMode::Conventional)
    );
    assert_eq!(modes["X B"], (300.0, ProductionMode::Organic));
    assert_eq!(p.value.len(), 2);
    assert_eq!(p.report.row_errors.len(), 1);
    assert_eq!(p.report.row_errors[0].line, 4);
}
