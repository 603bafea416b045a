//! Synthetic instances with a known surface matrix.
//!
//! A heavy-tailed ground-truth matrix is drawn, its exact marginals become the
//! caps, and its support (plus extra authorized-but-unused cells) becomes the
//! mask. Recovering the truth from such an instance measures how much the
//! marginals and mask pin down.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use thiserror::Error;

use crate::allocator::{build_problem, AllocError, AllocationMatrix, AllocationProblem};
use crate::model::{
    AppellationRecord, AuthorizationMask, Category, CategoryWeights, Color, CountyRecord,
};
use crate::sum::NeumaierSum;
use crate::validate::{aggregate, kendall_tau, AggregateKey};

/// Cell sizes are multiples of this many hectares, so every marginal sum is
/// exact in floating point whatever the summation order.
pub const SURFACE_QUANTUM: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("degenerate shape: {0}")]
    DegenerateShape(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Problem(#[from] AllocError),
}

/// Matrix dimensions and the fraction of cells carrying true surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthShape {
    pub n_appellations: usize,
    pub n_counties: usize,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Share of appellations per category; also sets their weights.
    pub category_mix: Vec<(Category, f64)>,
    pub weights: CategoryWeights,
    /// Extra mask cells as a fraction of the truth support size.
    pub extra_mask_ratio: f64,
    /// Log-normal σ of cell sizes.
    pub sigma: f64,
    /// Median cell size in hectares.
    pub median_cell: f64,
    pub counties_per_department: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            category_mix: alloc::vec![
                (Category::Aop, 0.6),
                (Category::Pgi, 0.3),
                (Category::NonPgi, 0.1)
            ],
            weights: CategoryWeights::default(),
            extra_mask_ratio: 0.5,
            sigma: 1.0,
            median_cell: 10.0,
            counties_per_department: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub truth: AllocationMatrix,
    pub problem: AllocationProblem,
    pub appellations: Vec<AppellationRecord>,
    pub counties: Vec<CountyRecord>,
    pub mask: AuthorizationMask,
    pub generator_seed: u64,
    pub shape: SynthShape,
}

impl SyntheticInstance {
    /// (department, category) key of a cell, for aggregate comparisons.
    pub fn aggregate_key(&self, appellation: &str, insee: &str) -> AggregateKey {
        let category = self
            .appellations
            .iter()
            .find(|a| a.code == appellation)
            .map_or("UNKNOWN", |a| a.category.reporting_group().as_str());
        let department = self
            .counties
            .iter()
            .find(|c| c.insee_code == insee)
            .map_or("UNKNOWN", |c| c.department.as_str());
        AggregateKey::new(department, category)
    }

    /// Truth aggregated by department and category.
    pub fn truth_aggregates(&self) -> BTreeMap<AggregateKey, f64> {
        let keys = self.key_lookup();
        aggregate(&self.truth, |a, c| keys(a, c))
    }

    /// Fast key function backed by maps.
    pub fn key_lookup(&self) -> impl Fn(&str, &str) -> AggregateKey + '_ {
        let cats: BTreeMap<&str, &str> = self
            .appellations
            .iter()
            .map(|a| (a.code.as_str(), a.category.reporting_group().as_str()))
            .collect();
        let depts: BTreeMap<&str, &str> = self
            .counties
            .iter()
            .map(|c| (c.insee_code.as_str(), c.department.as_str()))
            .collect();
        move |a, c| {
            AggregateKey::new(
                depts.get(c).copied().unwrap_or("UNKNOWN"),
                cats.get(a).copied().unwrap_or("UNKNOWN"),
            )
        }
    }
}

fn category_digit(category: Category) -> char {
    match category {
        Category::Aop => '1',
        Category::AopBrandy => '2',
        Category::Pgi => '3',
        Category::NonPgi | Category::PseudoNonPgi => '4',
    }
}

pub fn generate(
    shape: SynthShape,
    config: &SynthConfig,
    seed: u64,
) -> Result<SyntheticInstance, SynthError> {
    let SynthShape {
        n_appellations: n_a,
        n_counties: n_c,
        density,
    } = shape;
    if n_a == 0 || n_c == 0 {
        return Err(SynthError::DegenerateShape("empty dimension"));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(SynthError::DegenerateShape("density must be in (0, 1]"));
    }
    if n_a > 1000 {
        return Err(SynthError::DegenerateShape("at most 1000 appellations"));
    }
    let per_dept = config.counties_per_department;
    if per_dept == 0 || per_dept > 999 || n_c.div_ceil(per_dept) > 95 {
        return Err(SynthError::DegenerateShape(
            "county codes do not fit five characters",
        ));
    }
    if config.category_mix.is_empty() || config.category_mix.iter().any(|(_, p)| !(*p > 0.0)) {
        return Err(SynthError::InvalidConfig(
            "category mix needs positive shares",
        ));
    }
    if !(config.extra_mask_ratio >= 0.0) || !(config.sigma >= 0.0) || !(config.median_cell > 0.0) {
        return Err(SynthError::InvalidConfig(
            "ratio, sigma and median cell size",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // categories in contiguous blocks proportional to the mix
    let total_share: f64 = config.category_mix.iter().map(|(_, p)| p).sum();
    let mut categories = Vec::with_capacity(n_a);
    for i in 0..n_a {
        let position = (i as f64 + 0.5) / n_a as f64 * total_share;
        let mut acc = 0.0;
        let mut chosen = config.category_mix[config.category_mix.len() - 1].0;
        for &(c, p) in &config.category_mix {
            acc += p;
            if position < acc {
                chosen = c;
                break;
            }
        }
        categories.push(chosen);
    }
    let colors = [(Color::White, 'B'), (Color::Red, 'R'), (Color::Rose, 'S')];
    let app_meta: Vec<(String, Category, Color)> = categories
        .iter()
        .enumerate()
        .map(|(i, &cat)| {
            let (color, letter) = colors[rng.random_range(0..colors.len())];
            (
                format!("{}{}{:03}S", category_digit(cat), letter, i),
                cat,
                color,
            )
        })
        .collect();
    let n_cells = n_a * n_c;
    let county_codes: Vec<String> = (0..n_c)
        .map(|j| format!("{:02}{:03}", j / per_dept + 1, j % per_dept + 1))
        .collect();

    // truth support: one guaranteed cell per appellation, the rest uniform
    let mut support: BTreeSet<usize> = BTreeSet::new();
    for a in 0..n_a {
        support.insert(a * n_c + rng.random_range(0..n_c));
    }
    let mut all: Vec<usize> = (0..n_cells).collect();
    let target = (libm::round(density * n_cells as f64) as usize).clamp(n_a, n_cells);
    all.shuffle(&mut rng);
    for &cell in &all {
        if support.len() >= target {
            break;
        }
        support.insert(cell);
    }

    let sizes = LogNormal::new(libm::log(config.median_cell), config.sigma)
        .map_err(|_| SynthError::InvalidConfig("log-normal parameters"))?;
    let mut truth_values: BTreeMap<usize, f64> = BTreeMap::new();
    for &cell in &support {
        let raw: f64 = sizes.sample(&mut rng);
        let q = (libm::round(raw / SURFACE_QUANTUM) * SURFACE_QUANTUM).max(SURFACE_QUANTUM);
        truth_values.insert(cell, q);
    }

    let extra_target = libm::round(config.extra_mask_ratio * support.len() as f64) as usize;
    let mut extra: BTreeSet<usize> = BTreeSet::new();
    all.shuffle(&mut rng);
    for &cell in &all {
        if extra.len() >= extra_target {
            break;
        }
        if !support.contains(&cell) {
            extra.insert(cell);
        }
    }

    let mut row_caps = alloc::vec![0.0; n_a];
    let mut col_caps = alloc::vec![0.0; n_c];
    for (&cell, &v) in &truth_values {
        row_caps[cell / n_c] += v;
        col_caps[cell % n_c] += v;
    }

    let appellations: Vec<AppellationRecord> = app_meta
        .iter()
        .zip(&row_caps)
        .map(|((code, cat, color), &cap)| {
            AppellationRecord::new(code.clone(), format!("Synthetic {code}"), *cat, *color, cap)
                .expect("caps are finite sums of positive sizes")
        })
        .collect();
    let counties: Vec<CountyRecord> = county_codes
        .iter()
        .zip(&col_caps)
        .map(|(code, &cap)| {
            CountyRecord::new(code.clone(), format!("RA{}", &code[..2]), cap)
                .expect("generated codes are valid")
        })
        .collect();

    let mut mask = AuthorizationMask::new();
    for &cell in support.iter().chain(&extra) {
        mask.insert(
            app_meta[cell / n_c].0.clone(),
            county_codes[cell % n_c].clone(),
        );
    }
    mask.fill_weights(&appellations, &config.weights);

    let problem = build_problem(&appellations, &counties, &mask)?;
    let truth_cells: BTreeMap<(String, String), f64> = truth_values
        .iter()
        .map(|(&cell, &v)| {
            (
                (
                    app_meta[cell / n_c].0.clone(),
                    county_codes[cell % n_c].clone(),
                ),
                v,
            )
        })
        .collect();
    let mut objective = NeumaierSum::new();
    for (&cell, &v) in &truth_values {
        objective.add(config.weights.weight(app_meta[cell / n_c].1) * v);
    }
    let truth = AllocationMatrix {
        cells: truth_cells,
        objective_value: objective.total(),
    };

    Ok(SyntheticInstance {
        truth,
        problem,
        appellations,
        counties,
        mask,
        generator_seed: seed,
        shape,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryScore {
    /// Cell-level tau over the union of both supports.
    pub kendall_tau: Option<f64>,
    /// |recovered row − true row| / true row, per appellation with a
    /// positive true row.
    pub row_relative_error: BTreeMap<String, f64>,
}

impl RecoveryScore {
    pub fn max_row_error(&self) -> f64 {
        self.row_relative_error
            .values()
            .copied()
            .fold(0.0, f64::max)
    }
}

pub fn score_recovery(truth: &AllocationMatrix, recovered: &AllocationMatrix) -> RecoveryScore {
    let keys: BTreeSet<&(String, String)> =
        truth.cells.keys().chain(recovered.cells.keys()).collect();
    let (t, r): (Vec<f64>, Vec<f64>) = keys
        .iter()
        .map(|k| {
            (
                truth.cells.get(*k).copied().unwrap_or(0.0),
                recovered.cells.get(*k).copied().unwrap_or(0.0),
            )
        })
        .unzip();
    let true_rows = truth.row_sums();
    let rec_rows = recovered.row_sums();
    let row_relative_error = true_rows
        .iter()
        .filter(|(_, v)| **v > 0.0)
        .map(|(k, v)| {
            let got = rec_rows.get(k).copied().unwrap_or(0.0);
            (k.clone(), libm::fabs(got - v) / v)
        })
        .collect();
    RecoveryScore {
        kendall_tau: kendall_tau(&t, &r).ok(),
        row_relative_error,
    }
}

/// Naive baseline: each appellation's cap spread evenly over its mask cells,
/// ignoring county caps.
pub fn uniform_spread(problem: &AllocationProblem) -> AllocationMatrix {
    let mut counts = alloc::vec![0usize; problem.appellation_codes().len()];
    for c in problem.cells() {
        counts[c.row] += 1;
    }
    let values: Vec<f64> = problem
        .cells()
        .iter()
        .map(|c| problem.appellation_caps()[c.row] / counts[c.row] as f64)
        .collect();
    problem.to_matrix(&values, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_density_two_by_two() {
        let shape = SynthShape {
            n_appellations: 2,
            n_counties: 2,
            density: 1.0,
        };
        let inst = generate(shape, &SynthConfig::default(), 5).unwrap();
        assert_eq!(inst.mask.len(), 4);
        assert_eq!(inst.truth.cells.len(), 4);
        for a in &inst.appellations {
            let row: f64 = inst
                .truth
                .cells
                .iter()
                .filter(|((k, _), _)| k == &a.code)
                .map(|(_, v)| v)
                .sum();
            assert_eq!(row, a.marginal_surface);
        }
        for c in &inst.counties {
            let col: f64 = inst
                .truth
                .cells
                .iter()
                .filter(|((_, k), _)| k == &c.insee_code)
                .map(|(_, v)| v)
                .sum();
            assert_eq!(col, c.marginal_surface);
        }
    }

    #[test]
    fn same_seed_same_instance() {
        let shape = SynthShape {
            n_appellations: 5,
            n_counties: 20,
            density: 0.2,
        };
        let a = generate(shape, &SynthConfig::default(), 11).unwrap();
        let b = generate(shape, &SynthConfig::default(), 11).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.problem, b.problem);
        assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn degenerate_shapes_rejected() {
        let cfg = SynthConfig::default();
        assert!(generate(
            SynthShape {
                n_appellations: 0,
                n_counties: 2,
                density: 0.5
            },
            &cfg,
            0
        )
        .is_err());
        assert!(generate(
            SynthShape {
                n_appellations: 2,
                n_counties: 2,
                density: 0.0
            },
            &cfg,
            0
        )
        .is_err());
        assert!(generate(
            SynthShape {
                n_appellations: 2,
                n_counties: 2,
                density: 1.5
            },
            &cfg,
            0
        )
        .is_err());
    }

    #[test]
    fn truth_scores_perfectly() {
        let shape = SynthShape {
            n_appellations: 6,
            n_counties: 30,
            density: 0.2,
        };
        let inst = generate(shape, &SynthConfig::default(), 3).unwrap();
        let s = score_recovery(&inst.truth, &inst.truth);
        assert_eq!(s.kendall_tau, Some(1.0));
        assert!(s.row_relative_error.values().all(|e| *e == 0.0));
    }

    #[test]
    fn mask_contains_truth_support() {
        let shape = SynthShape {
            n_appellations: 8,
            n_counties: 40,
            density: 0.1,
        };
        let inst = generate(shape, &SynthConfig::default(), 8).unwrap();
        for (a, c) in inst.truth.cells.keys() {
            assert!(inst.mask.contains(a, c));
        }
        let support = inst.truth.cells.len();
        assert_eq!(
            inst.mask.len(),
            support + (support as f64 * 0.5).round() as usize
        );
    }
}
