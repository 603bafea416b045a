//! Rank-correlation checks: agreement between solutions of different starts,
//! and between model aggregates and independent statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::allocator::AllocationMatrix;
use crate::sum::NeumaierSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TauError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least two observations are needed, got {0}")]
    TooShort(usize),
    #[error("NaN in input")]
    NotANumber,
    #[error("tau-b is undefined when one side is entirely tied")]
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompareError {
    #[error("at least two solutions are needed, got {0}")]
    TooFewSolutions(usize),
}

/// Kendall tau-b in O(n log n) (Knight's algorithm): sort by x then y, count
/// discordant pairs as merge-sort inversions of y, correct for ties.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, TauError> {
    if x.len() != y.len() {
        return Err(TauError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(TauError::TooShort(n));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(TauError::NotANumber);
    }
    // -0.0 and 0.0 are the same rank
    let key = |v: f64| if v == 0.0 { 0.0 } else { v };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        key(x[a])
            .total_cmp(&key(x[b]))
            .then(key(y[a]).total_cmp(&key(y[b])))
    });

    let pairs = |t: u64| t * t.saturating_sub(1) / 2;
    let mut x_ties = 0u64;
    let mut joint_ties = 0u64;
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        if key(x[a]) == key(x[b]) {
            run_x += 1;
            if key(y[a]) == key(y[b]) {
                run_xy += 1;
            } else {
                joint_ties += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            x_ties += pairs(run_x);
            joint_ties += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    x_ties += pairs(run_x);
    joint_ties += pairs(run_xy);

    let mut ys: Vec<f64> = order.iter().map(|&i| key(y[i])).collect();
    let mut buffer = vec![0.0; n];
    let discordant = count_inversions(&mut ys, &mut buffer);

    // ys is now sorted
    let mut y_ties = 0u64;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            y_ties += pairs(run_y);
            run_y = 1;
        }
    }
    y_ties += pairs(run_y);

    let total = pairs(n as u64);
    let untied_x = total - x_ties;
    let untied_y = total - y_ties;
    if untied_x == 0 || untied_y == 0 {
        return Err(TauError::Undefined);
    }
    let numerator =
        total as f64 - x_ties as f64 - y_ties as f64 + joint_ties as f64 - 2.0 * discordant as f64;
    let tau = numerator / libm::sqrt(untied_x as f64 * untied_y as f64);
    Ok(tau.clamp(-1.0, 1.0))
}

/// Sorts `v` ascending and returns the number of pairs i < j with v[i] > v[j].
fn count_inversions(v: &mut [f64], buffer: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left_buf, right_buf) = buffer.split_at_mut(mid);
    let mut inversions = {
        let (l, r) = v.split_at_mut(mid);
        count_inversions(l, left_buf) + count_inversions(r, right_buf)
    };
    buffer[..n].copy_from_slice(v);
    let (l, r) = buffer[..n].split_at(mid);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < l.len() && j < r.len() {
        if r[j] < l[i] {
            inversions += (l.len() - i) as u64;
            v[k] = r[j];
            j += 1;
        } else {
            v[k] = l[i];
            i += 1;
        }
        k += 1;
    }
    while i < l.len() {
        v[k] = l[i];
        i += 1;
        k += 1;
    }
    while j < r.len() {
        v[k] = r[j];
        j += 1;
        k += 1;
    }
    inversions
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub key: String,
    pub model_value: f64,
    pub reference_value: f64,
}

/// Outcome of a rank comparison. Tau values are `None` when undefined (fewer
/// than two entries, or one side entirely tied).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonReport {
    pub pair_count: usize,
    /// Mean tau (over solution pairs, or the single tau for aggregates).
    pub kendall_tau: Option<f64>,
    pub kendall_tau_min: Option<f64>,
    pub restricted_count: usize,
    pub restricted_tau: Option<f64>,
    pub restricted_tau_min: Option<f64>,
    /// Entries absent from the model side (or from some solution).
    pub missing_in_model: usize,
    /// Entries absent from the reference side.
    pub missing_in_reference: usize,
    pub scatter_rows: Vec<ScatterRow>,
}

fn summarize(taus: &[f64]) -> (Option<f64>, Option<f64>) {
    if taus.is_empty() {
        return (None, None);
    }
    let mut acc = NeumaierSum::new();
    acc.extend(taus.iter().copied());
    let min = taus.iter().copied().fold(f64::INFINITY, f64::min);
    (Some(acc.total() / taus.len() as f64), Some(min))
}

/// Pairwise tau between solutions over the union of their supports, plus the
/// same restricted to cells whose largest value across solutions is at least
/// `restrict_min_hectares`. Cells missing from a solution count as 0.
pub fn compare_solutions(
    solutions: &[AllocationMatrix],
    restrict_min_hectares: f64,
) -> Result<ComparisonReport, CompareError> {
    if solutions.len() < 2 {
        return Err(CompareError::TooFewSolutions(solutions.len()));
    }
    let keys: BTreeSet<&(String, String)> = solutions.iter().flat_map(|s| s.cells.keys()).collect();
    let mut missing = 0;
    let columns: Vec<Vec<f64>> = solutions
        .iter()
        .map(|s| {
            keys.iter()
                .map(|k| match s.cells.get(*k) {
                    Some(v) => *v,
                    None => {
                        missing += 1;
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let restricted: Vec<usize> = (0..keys.len())
        .filter(|&i| {
            columns
                .iter()
                .map(|c| c[i])
                .fold(f64::NEG_INFINITY, f64::max)
                >= restrict_min_hectares
        })
        .collect();
    let restricted_columns: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| restricted.iter().map(|&i| c[i]).collect())
        .collect();

    let pair_taus = |cols: &[Vec<f64>]| {
        let mut taus = Vec::new();
        for i in 0..cols.len() {
            for j in i + 1..cols.len() {
                if let Ok(t) = kendall_tau(&cols[i], &cols[j]) {
                    taus.push(t);
                }
            }
        }
        taus
    };
    let (mean, min) = summarize(&pair_taus(&columns));
    let (rmean, rmin) = summarize(&pair_taus(&restricted_columns));
    Ok(ComparisonReport {
        pair_count: keys.len(),
        kendall_tau: mean,
        kendall_tau_min: min,
        restricted_count: restricted.len(),
        restricted_tau: rmean,
        restricted_tau_min: rmin,
        missing_in_model: missing,
        missing_in_reference: 0,
        scatter_rows: Vec::new(),
    })
}

/// Key of the department × wine-type aggregation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AggregateKey {
    pub department: String,
    pub wine_type: String,
}

impl AggregateKey {
    pub fn new(department: impl Into<String>, wine_type: impl Into<String>) -> Self {
        Self {
            department: department.into(),
            wine_type: wine_type.into(),
        }
    }

    pub fn label(&self) -> String {
        format!("{}|{}", self.department, self.wine_type)
    }
}

/// Sums an allocation by `key_of(appellation, insee)`.
pub fn aggregate<K: Ord>(
    alloc: &AllocationMatrix,
    mut key_of: impl FnMut(&str, &str) -> K,
) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, NeumaierSum> = BTreeMap::new();
    for ((a, c), v) in &alloc.cells {
        acc.entry(key_of(a, c)).or_default().add(*v);
    }
    acc.into_iter().map(|(k, s)| (k, s.total())).collect()
}

/// Tau between the model aggregated to the reference keys and the reference
/// itself, over all keys and over keys with reference ≥ `min_reference`.
/// Keys present on one side only enter with 0 on the other.
pub fn compare_aggregates(
    alloc: &AllocationMatrix,
    reference: &BTreeMap<AggregateKey, f64>,
    key_of: impl FnMut(&str, &str) -> AggregateKey,
    min_reference: f64,
) -> ComparisonReport {
    let model = aggregate(alloc, key_of);
    compare_tables(&model, reference, min_reference)
}

/// Tau between two keyed tables (see [`compare_aggregates`]).
pub fn compare_tables(
    model: &BTreeMap<AggregateKey, f64>,
    reference: &BTreeMap<AggregateKey, f64>,
    min_reference: f64,
) -> ComparisonReport {
    let keys: BTreeSet<&AggregateKey> = model.keys().chain(reference.keys()).collect();
    let mut report = ComparisonReport {
        pair_count: keys.len(),
        ..ComparisonReport::default()
    };
    for key in keys {
        let m = model.get(key).copied();
        let r = reference.get(key).copied();
        report.missing_in_model += usize::from(m.is_none());
        report.missing_in_reference += usize::from(r.is_none());
        report.scatter_rows.push(ScatterRow {
            key: key.label(),
            model_value: m.unwrap_or(0.0),
            reference_value: r.unwrap_or(0.0),
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = report
        .scatter_rows
        .iter()
        .map(|r| (r.model_value, r.reference_value))
        .unzip();
    report.kendall_tau = kendall_tau(&xs, &ys).ok();
    report.kendall_tau_min = report.kendall_tau;
    let (rx, ry): (Vec<f64>, Vec<f64>) = report
        .scatter_rows
        .iter()
        .filter(|r| r.reference_value >= min_reference)
        .map(|r| (r.model_value, r.reference_value))
        .unzip();
    report.restricted_count = rx.len();
    report.restricted_tau = kendall_tau(&rx, &ry).ok();
    report.restricted_tau_min = report.restricted_tau;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn tau_examples() {
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(),
            2.0 / 3.0
        );
        let x = [3.0, 1.0, 4.0, 1.5, 9.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(kendall_tau(&x, &rev).unwrap(), -1.0);
    }

    #[test]
    fn tau_errors() {
        assert_eq!(kendall_tau(&[1.0], &[1.0]), Err(TauError::TooShort(1)));
        assert_eq!(
            kendall_tau(&[1.0, 2.0], &[1.0]),
            Err(TauError::LengthMismatch(2, 1))
        );
        assert_eq!(
            kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(TauError::Undefined)
        );
        assert_eq!(
            kendall_tau(&[f64::NAN, 1.0], &[1.0, 2.0]),
            Err(TauError::NotANumber)
        );
    }

    #[test]
    fn tau_b_with_ties() {
        // pair (0,1) is tied in x, the other five are concordant
        // tau_b = 5 / sqrt(5 * 6)
        let t = kendall_tau(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((t - 5.0 / libm::sqrt(30.0)).abs() < 1e-15);
    }

    fn matrix(cells: &[(&str, &str, f64)]) -> AllocationMatrix {
        AllocationMatrix {
            cells: cells
                .iter()
                .map(|(a, c, v)| ((a.to_string(), c.to_string()), *v))
                .collect(),
            objective_value: 0.0,
        }
    }

    #[test]
    fn identical_solutions_compare_at_one() {
        let s = matrix(&[
            ("A", "01001", 150.0),
            ("A", "01002", 3.0),
            ("B", "01001", 120.0),
        ]);
        let r = compare_solutions(&[s.clone(), s], 100.0).unwrap();
        assert_eq!(r.kendall_tau, Some(1.0));
        assert_eq!(r.restricted_tau, Some(1.0));
        assert_eq!(r.restricted_count, 2);
        assert!(compare_solutions(&[matrix(&[])], 1.0).is_err());
    }

    #[test]
    fn missing_cells_count_as_zero() {
        let a = matrix(&[
            ("A", "01001", 1.0),
            ("A", "01002", 2.0),
            ("B", "01001", 3.0),
        ]);
        let b = matrix(&[("A", "01002", 2.0), ("B", "01001", 3.0)]);
        let r = compare_solutions(&[a, b], 0.0).unwrap();
        assert_eq!(r.pair_count, 3);
        assert_eq!(r.missing_in_model, 1);
        assert_eq!(r.kendall_tau, Some(1.0));
    }

    #[test]
    fn aggregates_against_own_aggregate() {
        let alloc = matrix(&[
            ("A", "67003", 10.0),
            ("A", "68001", 3.0),
            ("B", "67003", 5.0),
            ("B", "68001", 1.0),
        ]);
        let key = |a: &str, c: &str| AggregateKey::new(&c[..2], a);
        let reference = aggregate(&alloc, key);
        let r = compare_aggregates(&alloc, &reference, key, 4.0);
        assert_eq!(r.kendall_tau, Some(1.0));
        assert_eq!(r.restricted_count, 2);
        assert_eq!(r.missing_in_model + r.missing_in_reference, 0);
        assert_eq!(r.scatter_rows.len(), 4);
    }

    #[test]
    fn one_sided_keys_are_counted() {
        let alloc = matrix(&[("A", "67003", 10.0)]);
        let reference = BTreeMap::from([
            (AggregateKey::new("67", "A"), 10.0),
            (AggregateKey::new("68", "A"), 4.0),
        ]);
        let r = compare_aggregates(
            &alloc,
            &reference,
            |a, c| AggregateKey::new(&c[..2], a),
            1000.0,
        );
        assert_eq!(r.missing_in_model, 1);
        assert_eq!(r.kendall_tau, Some(1.0));
        assert_eq!(r.restricted_tau, None);
    }
}
