//! Matching price-scale labels to appellations.
//!
//! Labels are folded to upper-case ASCII, acronyms are expanded and stopwords
//! dropped, then every label is matched to the appellation whose normalized
//! name is closest under a weighted Damerau-Levenshtein distance.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::model::{AppellationRecord, PriceEntry, ProductionMode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkageError {
    #[error("line {line}: expected KEY=expansion, got {text:?}")]
    MalformedAcronym { line: usize, text: String },
    #[error("acronym key {0:?} must be a single word")]
    MultiWordKey(String),
    #[error("expansion of {key:?} contains the acronym {inner:?}")]
    RecursiveExpansion { key: String, inner: String },
}

/// Acronym expansions and stopwords, both stored in folded form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    acronyms: BTreeMap<String, Vec<String>>,
    stopwords: BTreeSet<String>,
}

const DEFAULT_ACRONYMS: &str = include_str!("../data/acronyms.txt");
const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

fn entries(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

impl Dictionary {
    /// Parses the plain-text dictionary formats: one `KEY=expansion` per line
    /// for acronyms, one word per line for stopwords. `#` starts a comment line.
    pub fn parse(acronyms: &str, stopwords: &str) -> Result<Self, LinkageError> {
        let mut dict = Dictionary::default();
        for (_, line) in entries(stopwords) {
            dict.stopwords
                .extend(fold(line).split_whitespace().map(str::to_string));
        }
        for (line_no, line) in entries(acronyms) {
            let Some((key, expansion)) = line.split_once('=') else {
                return Err(LinkageError::MalformedAcronym {
                    line: line_no,
                    text: line.to_string(),
                });
            };
            let key_tokens: Vec<String> =
                fold(key).split_whitespace().map(str::to_string).collect();
            let [key] = key_tokens.as_slice() else {
                return Err(LinkageError::MultiWordKey(key.trim().to_string()));
            };
            let tokens = fold(expansion)
                .split_whitespace()
                .filter(|t| !dict.stopwords.contains(*t))
                .map(str::to_string)
                .collect();
            dict.acronyms.insert(key.clone(), tokens);
        }
        for (key, tokens) in &dict.acronyms {
            if let Some(inner) = tokens.iter().find(|t| dict.acronyms.contains_key(*t)) {
                return Err(LinkageError::RecursiveExpansion {
                    key: key.clone(),
                    inner: inner.clone(),
                });
            }
        }
        Ok(dict)
    }

    /// The bundled French dictionaries.
    pub fn french_default() -> Self {
        Self::parse(DEFAULT_ACRONYMS, DEFAULT_STOPWORDS).expect("bundled dictionaries are valid")
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }
}

/// Strips accents, upper-cases and turns anything that is not an ASCII letter
/// or digit into a space.
pub fn fold(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for ch in raw.nfd() {
        if is_combining_mark(ch) {
            continue;
        }
        match ch {
            'œ' | 'Œ' => out.push_str("OE"),
            'æ' | 'Æ' => out.push_str("AE"),
            'ß' => out.push_str("SS"),
            _ => {
                for up in ch.to_uppercase() {
                    out.push(if up.is_ascii_alphanumeric() { up } else { ' ' });
                }
            }
        }
    }
    out
}

/// Folded, acronym-expanded, stopword-free label with single spaces.
pub fn normalize_label(raw: &str, dict: &Dictionary) -> String {
    let folded = fold(raw);
    let mut out = String::with_capacity(folded.len());
    let mut push = |token: &str| {
        if dict.stopwords.contains(token) {
            return;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    };
    for token in folded.split_whitespace() {
        match dict.acronyms.get(token) {
            Some(expansion) => expansion.iter().for_each(|t| push(t)),
            None => push(token),
        }
    }
    out
}

/// Per-operation costs of the edit distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditCosts {
    pub insert: f64,
    pub delete: f64,
    pub substitute: f64,
    pub transpose: f64,
}

impl Default for EditCosts {
    fn default() -> Self {
        Self {
            insert: 1.0,
            delete: 1.0,
            substitute: 1.0,
            transpose: 1.0,
        }
    }
}

/// Weighted Damerau-Levenshtein distance (Lowrance-Wagner recurrence):
/// minimal cost of insertions, deletions, substitutions and adjacent
/// transpositions turning `a` into `b`, where transposed characters may be
/// separated by later insertions and deletions.
///
/// The result is the exact minimum over edit sequences whenever
/// `2 * transpose >= insert + delete`; otherwise it is an upper bound.
pub fn edit_distance(a: &str, b: &str, costs: &EditCosts) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (m, n) = (a.len(), b.len());
    let width = n + 2;
    let inf = f64::INFINITY;
    // table[(i + 1) * width + (j + 1)] holds the distance of a[..i] to b[..j];
    // row and column 0 are sentinels.
    let mut table = alloc::vec![inf; (m + 2) * width];
    let at = |i: usize, j: usize| i * width + j;
    for i in 0..=m {
        table[at(i + 1, 1)] = i as f64 * costs.delete;
    }
    for j in 0..=n {
        table[at(1, j + 1)] = j as f64 * costs.insert;
    }

    let mut last_row: BTreeMap<char, usize> = BTreeMap::new();
    for i in 1..=m {
        let mut last_col = 0usize;
        for j in 1..=n {
            let i1 = last_row.get(&b[j - 1]).copied().unwrap_or(0);
            let j1 = last_col;
            let matched = a[i - 1] == b[j - 1];
            if matched {
                last_col = j;
            }
            let substitution = table[at(i, j)] + if matched { 0.0 } else { costs.substitute };
            let insertion = table[at(i + 1, j)] + costs.insert;
            let deletion = table[at(i, j + 1)] + costs.delete;
            let transposition = table[at(i1, j1)]
                + (i - i1 - 1) as f64 * costs.delete
                + costs.transpose
                + (j - j1 - 1) as f64 * costs.insert;
            table[at(i + 1, j + 1)] = substitution.min(insertion).min(deletion).min(transposition);
        }
        last_row.insert(a[i - 1], i);
    }
    table[at(m + 1, n + 1)]
}

/// Acceptance threshold on the distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Absolute(f64),
    /// Fraction of the longer normalized string's length, times the
    /// substitution cost.
    Relative(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Relative(0.10)
    }
}

impl Threshold {
    pub fn limit(&self, a: &str, b: &str, costs: &EditCosts) -> f64 {
        match *self {
            Threshold::Absolute(t) => t,
            Threshold::Relative(r) => {
                let len = a.chars().count().max(b.chars().count());
                r * len as f64 * costs.substitute
            }
        }
    }
}

/// An appellation as seen by the matcher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTarget {
    pub code: String,
    pub normalized_name: String,
    pub region: Option<String>,
}

/// Builds match targets from appellation names, with an optional code → region
/// map (regions are folded before comparison).
pub fn targets_from_appellations(
    appellations: &[AppellationRecord],
    dict: &Dictionary,
    regions: Option<&BTreeMap<String, String>>,
) -> Vec<LabelTarget> {
    appellations
        .iter()
        .map(|a| LabelTarget {
            code: a.code.clone(),
            normalized_name: normalize_label(&a.name, dict),
            region: regions.and_then(|r| r.get(&a.code)).map(|r| fold_region(r)),
        })
        .collect()
}

fn fold_region(region: &str) -> String {
    fold(region)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatch {
    pub source_label: String,
    /// Normalized appellation name the row was matched on; differs from the
    /// normalized label when a label lists several appellations.
    pub matched_name: String,
    pub target_code: String,
    pub distance: f64,
    pub accepted: bool,
    pub price: f64,
    pub production_mode: ProductionMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchOptions {
    pub costs: EditCosts,
    pub threshold: Threshold,
    /// Require the price entry's region hint to agree with the target region
    /// when both are known.
    pub region_filter: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutcome {
    pub matches: Vec<LabelMatch>,
    /// Source labels with no accepted match.
    pub unmatched: Vec<String>,
}

/// Splits a label listing several appellations into one name per entry.
/// Labels opening with a quote are read as a sequence of quoted names;
/// otherwise names are separated by `/`.
pub fn split_label_names(label: &str) -> Vec<&str> {
    let trimmed = label.trim();
    let quote = trimmed
        .chars()
        .next()
        .filter(|c| matches!(c, '\'' | '"' | '’' | '‘'));
    let names: Vec<&str> = match quote {
        Some(q) => {
            let close = if q == '‘' { '’' } else { q };
            let mut names = Vec::new();
            let mut rest = trimmed;
            while let Some(start) = rest.find(q) {
                let after = &rest[start + q.len_utf8()..];
                let Some(end) = after.find(close) else { break };
                names.push(after[..end].trim());
                rest = &after[end + close.len_utf8()..];
            }
            names
        }
        None => trimmed.split('/').map(str::trim).collect(),
    };
    let names: Vec<&str> = names.into_iter().filter(|n| !n.is_empty()).collect();
    if names.is_empty() {
        alloc::vec![trimmed]
    } else {
        names
    }
}

/// Closest target for `name`; ties go to the lexicographically smallest code.
pub fn best_target<'t>(
    name: &str,
    targets: &'t [LabelTarget],
    costs: &EditCosts,
) -> Option<(&'t LabelTarget, f64)> {
    let mut best: Option<(&LabelTarget, f64)> = None;
    for t in targets {
        let d = edit_distance(name, &t.normalized_name, costs);
        let better = match best {
            None => true,
            Some((b, bd)) => d < bd || (d == bd && t.code < b.code),
        };
        if better {
            best = Some((t, d));
        }
    }
    best
}

pub fn match_labels(
    prices: &[PriceEntry],
    targets: &[LabelTarget],
    dict: &Dictionary,
    options: &MatchOptions,
) -> MatchOutcome {
    let mut outcome = MatchOutcome::default();
    for entry in prices {
        let (bare, _) = ProductionMode::split_label(&entry.label);
        let hint = entry.region_hint.as_deref().map(fold_region);
        let mut any_accepted = false;
        for name in split_label_names(bare) {
            let normalized = normalize_label(name, dict);
            let Some((target, distance)) = best_target(&normalized, targets, &options.costs) else {
                continue;
            };
            let limit =
                options
                    .threshold
                    .limit(&normalized, &target.normalized_name, &options.costs);
            let region_ok = !options.region_filter
                || match (&hint, &target.region) {
                    (Some(h), Some(r)) => h == r,
                    _ => true,
                };
            let accepted = distance <= limit && region_ok;
            any_accepted |= accepted;
            outcome.matches.push(LabelMatch {
                source_label: entry.label.clone(),
                matched_name: normalized,
                target_code: target.code.clone(),
                distance,
                accepted,
                price: entry.price,
                production_mode: entry.production_mode,
            });
        }
        if !any_accepted {
            outcome.unmatched.push(entry.label.clone());
        }
    }
    outcome
}

/// One price per appellation from accepted matches: conventional entries
/// first, then the smallest distance, then the smallest source label.
pub fn prices_by_appellation(matches: &[LabelMatch]) -> BTreeMap<String, f64> {
    let mut chosen: BTreeMap<&str, &LabelMatch> = BTreeMap::new();
    for m in matches.iter().filter(|m| m.accepted) {
        let rank = |x: &LabelMatch| {
            (
                x.production_mode != ProductionMode::Conventional,
                x.distance,
            )
        };
        match chosen.get(m.target_code.as_str()) {
            Some(cur) => {
                let (rm, rc) = (rank(m), rank(cur));
                let better = (!rm.0 && rc.0)
                    || (rm.0 == rc.0 && rm.1 < rc.1)
                    || (rm == rc && m.source_label < cur.source_label);
                if better {
                    chosen.insert(&m.target_code, m);
                }
            }
            None => {
                chosen.insert(&m.target_code, m);
            }
        }
    }
    chosen
        .into_iter()
        .map(|(k, m)| (k.to_string(), m.price))
        .collect()
}
