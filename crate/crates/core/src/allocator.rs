//! Weighted allocation of surfaces to authorized (appellation, county) cells.
//!
//! The problem is the linear program
//!
//! ```text
//! maximize   Σ α_a s_ac
//! subject to Σ_c s_ac ≤ s_a        for every appellation a
//!            Σ_a s_ac ≤ s_c        for every county c
//!            0 ≤ s_ac ≤ min(s_a, s_c) on authorized cells, s_ac = 0 elsewhere
//! ```
//!
//! [`solve`] starts from a (random) point, runs projected gradient ascent on
//! the objective and then finishes with exact augmenting-path steps in the
//! bipartite flow network of the problem, which certify optimality. The
//! ascent keeps the influence of the starting point on which optimal face is
//! reached; the augmenting phase only moves mass where the optimum requires it.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{AppellationRecord, AuthorizationMask, CountyRecord};
use crate::sum::{compensated_sum, NeumaierSum};
use crate::validate::kendall_tau;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocError {
    #[error("mask cell ({appellation}, {insee}) references an unknown appellation")]
    UnknownAppellation { appellation: String, insee: String },
    #[error("mask cell ({appellation}, {insee}) references an unknown county")]
    UnknownCounty { appellation: String, insee: String },
    #[error("no weight for appellation {0}")]
    MissingWeight(String),
    #[error("weight {weight} of appellation {appellation} is not in (0, 1]")]
    InvalidWeight { appellation: String, weight: f64 },
    #[error("inconsistent weights for appellation {0}")]
    InconsistentWeight(String),
    #[error("negative or non-finite cap {value} for {owner}")]
    InvalidCap { owner: String, value: f64 },
    #[error("duplicate {0}")]
    Duplicate(String),
    #[error("allocation cell ({0}, {1}) is outside the problem")]
    OutsideMask(String, String),
    #[error("starting point has {got} values for {expected} cells")]
    InitLength { expected: usize, got: usize },
    #[error("k_starts must be at least 1")]
    NoStarts,
    #[error("every start failed")]
    AllStartsFailed(Vec<(u64, SolveError)>),
    #[error("brute force refuses the instance: {0}")]
    TooLarge(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("augmentation limit {limit} reached before optimality")]
    IterationLimit {
        limit: usize,
        best: AllocationMatrix,
    },
    #[error(transparent)]
    Problem(#[from] AllocError),
}

/// One active cell: appellation index, county index and upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
    pub upper: f64,
}

/// Indexed form of the allocation LP. Appellations and counties are sorted by
/// code; cells are in lexicographic (appellation, insee) order, which is the
/// order random starts are drawn in.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    appellations: Vec<String>,
    appellation_caps: Vec<f64>,
    weights: Vec<f64>,
    counties: Vec<String>,
    county_caps: Vec<f64>,
    cells: Vec<Cell>,
    dropped: Vec<(usize, usize)>,
}

fn check_cap(owner: &str, value: f64) -> Result<(), AllocError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(AllocError::InvalidCap {
            owner: owner.to_string(),
            value,
        })
    }
}

impl AllocationProblem {
    /// Builds the problem from caps keyed by code and weighted mask cells.
    /// Cells whose upper bound is zero are dropped from the active set.
    pub fn from_parts(
        appellation_caps: &BTreeMap<String, f64>,
        county_caps: &BTreeMap<String, f64>,
        cells: impl IntoIterator<Item = (String, String, f64)>,
    ) -> Result<Self, AllocError> {
        for (k, &v) in appellation_caps.iter().chain(county_caps) {
            check_cap(k, v)?;
        }
        let appellations: Vec<String> = appellation_caps.keys().cloned().collect();
        let counties: Vec<String> = county_caps.keys().cloned().collect();
        let mut weights: Vec<Option<f64>> = vec![None; appellations.len()];
        let mut raw: Vec<(usize, usize)> = Vec::new();
        for (a, c, w) in cells {
            let Ok(row) = appellations.binary_search(&a) else {
                return Err(AllocError::UnknownAppellation {
                    appellation: a,
                    insee: c,
                });
            };
            let Ok(col) = counties.binary_search(&c) else {
                return Err(AllocError::UnknownCounty {
                    appellation: a,
                    insee: c,
                });
            };
            if !(w > 0.0 && w <= 1.0) {
                return Err(AllocError::InvalidWeight {
                    appellation: a,
                    weight: w,
                });
            }
            match weights[row] {
                Some(prev) if prev != w => return Err(AllocError::InconsistentWeight(a)),
                _ => weights[row] = Some(w),
            }
            raw.push((row, col));
        }
        raw.sort_unstable();
        if let Some(w) = raw.windows(2).find(|w| w[0] == w[1]) {
            let (r, c) = w[0];
            return Err(AllocError::Duplicate(alloc::format!(
                "cell ({}, {})",
                appellations[r],
                counties[c]
            )));
        }
        let appellation_caps: Vec<f64> = appellation_caps.values().copied().collect();
        let county_caps: Vec<f64> = county_caps.values().copied().collect();
        let mut active = Vec::with_capacity(raw.len());
        let mut dropped = Vec::new();
        for (row, col) in raw {
            let upper = appellation_caps[row].min(county_caps[col]).max(0.0);
            if upper > 0.0 {
                active.push(Cell { row, col, upper });
            } else {
                dropped.push((row, col));
            }
        }
        Ok(Self {
            appellations,
            appellation_caps,
            // rows without cells never enter the objective
            weights: weights.into_iter().map(|w| w.unwrap_or(0.0)).collect(),
            counties,
            county_caps,
            cells: active,
            dropped,
        })
    }

    pub fn appellation_codes(&self) -> &[String] {
        &self.appellations
    }

    pub fn county_codes(&self) -> &[String] {
        &self.counties
    }

    pub fn appellation_caps(&self) -> &[f64] {
        &self.appellation_caps
    }

    pub fn county_caps(&self) -> &[f64] {
        &self.county_caps
    }

    /// Objective weight of each appellation (0 for appellations without cells).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Mask cells dropped because their upper bound is zero.
    pub fn dropped_cells(&self) -> usize {
        self.dropped.len()
    }

    /// Every mask cell, active or dropped, in (appellation, county) order.
    pub fn mask_keys(&self) -> Vec<(&str, &str)> {
        let mut keys: Vec<(usize, usize)> = self
            .cells
            .iter()
            .map(|c| (c.row, c.col))
            .chain(self.dropped.iter().copied())
            .collect();
        keys.sort_unstable();
        keys.into_iter()
            .map(|(r, c)| (self.appellations[r].as_str(), self.counties[c].as_str()))
            .collect()
    }

    pub fn cell_key(&self, index: usize) -> (&str, &str) {
        let c = self.cells[index];
        (&self.appellations[c.row], &self.counties[c.col])
    }

    pub fn cell_index(&self, appellation: &str, insee: &str) -> Option<usize> {
        let row = self
            .appellations
            .binary_search_by(|a| a.as_str().cmp(appellation))
            .ok()?;
        let col = self
            .counties
            .binary_search_by(|c| c.as_str().cmp(insee))
            .ok()?;
        self.cells
            .binary_search_by(|c| (c.row, c.col).cmp(&(row, col)))
            .ok()
    }

    /// Weighted objective of a point aligned with [`Self::cells`].
    pub fn objective_of(&self, values: &[f64]) -> f64 {
        compensated_sum(
            self.cells
                .iter()
                .zip(values)
                .map(|(c, v)| self.weights[c.row] * v),
        )
    }

    /// Converts a point aligned with the cells into a sparse matrix, keeping
    /// cells above `min_value`.
    pub fn to_matrix(&self, values: &[f64], min_value: f64) -> AllocationMatrix {
        let cells = self
            .cells
            .iter()
            .zip(values)
            .filter(|(_, v)| **v > min_value)
            .map(|(c, v)| {
                (
                    (
                        self.appellations[c.row].clone(),
                        self.counties[c.col].clone(),
                    ),
                    *v,
                )
            })
            .collect();
        AllocationMatrix {
            cells,
            objective_value: self.objective_of(values),
        }
    }

    /// Values of a matrix aligned with the cells; errors on cells outside the
    /// active set.
    pub fn values_of(&self, matrix: &AllocationMatrix) -> Result<Vec<f64>, AllocError> {
        let mut values = vec![0.0; self.cells.len()];
        for ((a, c), v) in &matrix.cells {
            match self.cell_index(a, c) {
                Some(i) => values[i] = *v,
                None if *v == 0.0 => {}
                None => return Err(AllocError::OutsideMask(a.clone(), c.clone())),
            }
        }
        Ok(values)
    }

    /// Largest relative violation of the row, column, bound and sign
    /// constraints by a point aligned with the cells.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut rows = vec![NeumaierSum::new(); self.appellations.len()];
        let mut cols = vec![NeumaierSum::new(); self.counties.len()];
        let mut worst: f64 = 0.0;
        for (c, &v) in self.cells.iter().zip(values) {
            rows[c.row].add(v);
            cols[c.col].add(v);
            worst = worst.max(-v).max((v - c.upper) / c.upper.max(1.0));
        }
        for (s, cap) in rows
            .iter()
            .zip(&self.appellation_caps)
            .chain(cols.iter().zip(&self.county_caps))
        {
            worst = worst.max((s.total() - cap) / cap.max(1.0));
        }
        worst
    }
}

/// Builds the problem from ingested records; the mask must carry a weight for
/// every appellation that has cells.
pub fn build_problem(
    appellations: &[AppellationRecord],
    counties: &[CountyRecord],
    mask: &AuthorizationMask,
) -> Result<AllocationProblem, AllocError> {
    let mut app_caps = BTreeMap::new();
    for a in appellations {
        if app_caps
            .insert(a.code.clone(), a.marginal_surface)
            .is_some()
        {
            return Err(AllocError::Duplicate(alloc::format!(
                "appellation {}",
                a.code
            )));
        }
    }
    let mut county_caps = BTreeMap::new();
    for c in counties {
        if county_caps
            .insert(c.insee_code.clone(), c.marginal_surface)
            .is_some()
        {
            return Err(AllocError::Duplicate(alloc::format!(
                "county {}",
                c.insee_code
            )));
        }
    }
    let mut cells = Vec::with_capacity(mask.len());
    for (a, c) in mask.cells() {
        let w = mask
            .weight(a)
            .ok_or_else(|| AllocError::MissingWeight(a.to_string()))?;
        cells.push((a.to_string(), c.to_string(), w));
    }
    AllocationProblem::from_parts(&app_caps, &county_caps, cells)
}

/// Sparse surface estimates keyed by (appellation, insee).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AllocationMatrix {
    pub cells: BTreeMap<(String, String), f64>,
    pub objective_value: f64,
}

impl AllocationMatrix {
    pub fn get(&self, appellation: &str, insee: &str) -> f64 {
        self.cells
            .range((appellation.to_string(), insee.to_string())..)
            .next()
            .filter(|((a, c), _)| a == appellation && c == insee)
            .map_or(0.0, |(_, v)| *v)
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.cells.values().copied())
    }

    pub fn row_sums(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, NeumaierSum> = BTreeMap::new();
        for ((a, _), v) in &self.cells {
            acc.entry(a.clone()).or_default().add(*v);
        }
        acc.into_iter().map(|(k, s)| (k, s.total())).collect()
    }

    pub fn column_sums(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, NeumaierSum> = BTreeMap::new();
        for ((_, c), v) in &self.cells {
            acc.entry(c.clone()).or_default().add(*v);
        }
        acc.into_iter().map(|(k, s)| (k, s.total())).collect()
    }
}

/// Exact weighted sum Σ α_a s_ac of a sparse matrix.
pub fn objective(problem: &AllocationProblem, alloc: &AllocationMatrix) -> Result<f64, AllocError> {
    let values = problem.values_of(alloc)?;
    Ok(problem.objective_of(&values))
}

/// Independent uniform draw in `[0, upper]` for every active cell, in cell
/// order.
pub fn random_init(problem: &AllocationProblem, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    problem
        .cells
        .iter()
        .map(|c| rng.random_range(0.0..=c.upper))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Ascent step as a fraction of each cell's upper bound.
    pub step: f64,
    pub max_gradient_iterations: usize,
    /// Ascent stops when the objective improves by less than
    /// `stall_tolerance` (relative) over `stall_window` iterations.
    pub stall_tolerance: f64,
    pub stall_window: usize,
    pub max_augmentations: usize,
    /// Residual capacities below `epsilon × largest cap` are treated as zero.
    pub epsilon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step: 0.05,
            max_gradient_iterations: 200,
            stall_tolerance: 1e-9,
            stall_window: 10,
            max_augmentations: 1_000_000,
            epsilon: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveStats {
    pub gradient_iterations: usize,
    pub augmentations: usize,
    /// Cells strictly inside their bounds.
    pub interior_cells: usize,
    /// FNV-1a hash of the per-cell state (zero / interior / at upper bound);
    /// equal signatures mean the same face of the polytope was reached.
    pub face_signature: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solved {
    /// Values aligned with [`AllocationProblem::cells`].
    pub values: Vec<f64>,
    pub objective: f64,
    pub stats: SolveStats,
}

impl Solved {
    pub fn to_matrix(&self, problem: &AllocationProblem) -> AllocationMatrix {
        problem.to_matrix(&self.values, 0.0)
    }
}

struct State<'p> {
    problem: &'p AllocationProblem,
    x: Vec<f64>,
    row_sum: Vec<f64>,
    col_sum: Vec<f64>,
    row_cells: Vec<Vec<usize>>,
    col_cells: Vec<Vec<usize>>,
    eps: f64,
}

impl<'p> State<'p> {
    fn new(problem: &'p AllocationProblem, x: Vec<f64>, eps: f64) -> Self {
        let mut row_cells = vec![Vec::new(); problem.appellations.len()];
        let mut col_cells = vec![Vec::new(); problem.counties.len()];
        for (i, c) in problem.cells.iter().enumerate() {
            row_cells[c.row].push(i);
            col_cells[c.col].push(i);
        }
        let mut s = Self {
            problem,
            x,
            row_sum: Vec::new(),
            col_sum: Vec::new(),
            row_cells,
            col_cells,
            eps,
        };
        s.refresh_sums();
        s
    }

    fn refresh_sums(&mut self) {
        let p = self.problem;
        self.row_sum = self
            .row_cells
            .iter()
            .map(|cells| compensated_sum(cells.iter().map(|&i| self.x[i])))
            .collect();
        self.col_sum = self
            .col_cells
            .iter()
            .map(|cells| compensated_sum(cells.iter().map(|&i| self.x[i])))
            .collect();
        debug_assert_eq!(self.row_sum.len(), p.appellations.len());
    }

    /// Clips to the cell bounds, then scales over-full rows and then
    /// over-full columns down to their caps. Column scaling only lowers
    /// values, so the result satisfies every constraint.
    fn project(&mut self) {
        let p = self.problem;
        for (v, c) in self.x.iter_mut().zip(&p.cells) {
            *v = v.clamp(0.0, c.upper);
        }
        for (axis_cells, caps) in [
            (&self.row_cells, &p.appellation_caps),
            (&self.col_cells, &p.county_caps),
        ] {
            for (cells, &cap) in axis_cells.iter().zip(caps) {
                let total = compensated_sum(cells.iter().map(|&i| self.x[i]));
                if total > cap {
                    let scale = cap / total;
                    for &i in cells {
                        self.x[i] *= scale;
                    }
                    // rounding can leave the scaled sum a few ulps above cap
                    let mut again = compensated_sum(cells.iter().map(|&i| self.x[i]));
                    while again > cap {
                        let excess = again - cap;
                        if let Some(&i) = cells
                            .iter()
                            .max_by(|&&a, &&b| self.x[a].total_cmp(&self.x[b]))
                        {
                            self.x[i] = (self.x[i] - excess).max(0.0);
                        }
                        again = compensated_sum(cells.iter().map(|&i| self.x[i]));
                    }
                }
            }
        }
        self.refresh_sums();
    }

    fn gradient_phase(&mut self, config: &SolverConfig) -> usize {
        let p = self.problem;
        self.project();
        let mut history: VecDeque<f64> = VecDeque::with_capacity(config.stall_window + 1);
        history.push_back(p.objective_of(&self.x));
        let mut iterations = 0;
        while iterations < config.max_gradient_iterations {
            for (v, c) in self.x.iter_mut().zip(&p.cells) {
                *v += config.step * p.weights[c.row] * c.upper;
            }
            self.project();
            iterations += 1;
            let current = p.objective_of(&self.x);
            history.push_back(current);
            if history.len() > config.stall_window {
                let old = history.pop_front().unwrap_or(current);
                if current - old <= config.stall_tolerance * current.abs().max(1.0) {
                    break;
                }
            }
        }
        iterations
    }

    fn row_residual(&self, row: usize) -> f64 {
        self.problem.appellation_caps[row] - self.row_sum[row]
    }

    fn col_residual(&self, col: usize) -> f64 {
        self.problem.county_caps[col] - self.col_sum[col]
    }

    /// Augments weight classes in decreasing order. For each class, pushes
    /// flow from rows of the class with spare capacity along shortest
    /// residual paths ending either at a county with spare capacity or at a
    /// row of a lower class, whose flow is displaced. When no such path
    /// remains, the total allocated to the classes processed so far is
    /// maximal, which makes the final point optimal for the weighted
    /// objective.
    fn augment_phase(&mut self, config: &SolverConfig) -> Result<usize, usize> {
        let p = self.problem;
        let mut classes: Vec<f64> = p.cells.iter().map(|c| p.weights[c.row]).collect();
        classes.sort_by(|a, b| b.total_cmp(a));
        classes.dedup();

        let n_rows = p.appellations.len();
        let n_cols = p.counties.len();
        // predecessor of a county: the cell used to enter it (forward);
        // predecessor of a row: the cell used to enter it (backward)
        let mut col_pred: Vec<usize> = vec![usize::MAX; n_cols];
        let mut row_pred: Vec<usize> = vec![usize::MAX; n_rows];
        let mut row_seen = vec![false; n_rows];
        let mut col_seen = vec![false; n_cols];
        let mut queue: VecDeque<usize> = VecDeque::new();
        let mut augmentations = 0;

        enum Sink {
            County(usize),
            Displace(usize),
        }

        for class in classes {
            loop {
                if augmentations >= config.max_augmentations {
                    return Err(augmentations);
                }
                row_seen.iter_mut().for_each(|s| *s = false);
                col_seen.iter_mut().for_each(|s| *s = false);
                queue.clear();
                for row in 0..n_rows {
                    if p.weights[row] == class && self.row_residual(row) > self.eps {
                        row_seen[row] = true;
                        row_pred[row] = usize::MAX;
                        queue.push_back(row);
                    }
                }
                let mut sink = None;
                'bfs: while let Some(row) = queue.pop_front() {
                    for &i in &self.row_cells[row] {
                        let cell = p.cells[i];
                        if col_seen[cell.col] || cell.upper - self.x[i] <= self.eps {
                            continue;
                        }
                        col_seen[cell.col] = true;
                        col_pred[cell.col] = i;
                        if self.col_residual(cell.col) > self.eps {
                            sink = Some(Sink::County(cell.col));
                            break 'bfs;
                        }
                        for &j in &self.col_cells[cell.col] {
                            let back = p.cells[j];
                            if row_seen[back.row] || self.x[j] <= self.eps {
                                continue;
                            }
                            row_seen[back.row] = true;
                            row_pred[back.row] = j;
                            if p.weights[back.row] < class {
                                sink = Some(Sink::Displace(back.row));
                                break 'bfs;
                            }
                            queue.push_back(back.row);
                        }
                    }
                }
                let Some(sink) = sink else { break };

                // walk back to find the bottleneck, then apply it
                let (mut delta, mut col) = match sink {
                    Sink::County(col) => (self.col_residual(col), col),
                    Sink::Displace(row) => {
                        let j = row_pred[row];
                        (self.x[j], p.cells[j].col)
                    }
                };
                let source_row = loop {
                    let i = col_pred[col];
                    delta = delta.min(p.cells[i].upper - self.x[i]);
                    let row = p.cells[i].row;
                    match row_pred[row] {
                        usize::MAX => break row,
                        j => {
                            delta = delta.min(self.x[j]);
                            col = p.cells[j].col;
                        }
                    }
                };
                delta = delta.min(self.row_residual(source_row));
                if !(delta > 0.0) {
                    break;
                }

                let mut col = match sink {
                    Sink::County(col) => {
                        self.col_sum[col] += delta;
                        col
                    }
                    Sink::Displace(row) => {
                        let j = row_pred[row];
                        self.x[j] = (self.x[j] - delta).max(0.0);
                        self.row_sum[row] -= delta;
                        p.cells[j].col
                    }
                };
                loop {
                    let i = col_pred[col];
                    self.x[i] = (self.x[i] + delta).min(p.cells[i].upper);
                    let row = p.cells[i].row;
                    match row_pred[row] {
                        usize::MAX => {
                            self.row_sum[row] += delta;
                            break;
                        }
                        j => {
                            self.x[j] = (self.x[j] - delta).max(0.0);
                            col = p.cells[j].col;
                        }
                    }
                }
                augmentations += 1;
            }
        }
        Ok(augmentations)
    }

    fn stats(&self, gradient_iterations: usize, augmentations: usize) -> SolveStats {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut interior = 0;
        for (v, c) in self.x.iter().zip(&self.problem.cells) {
            let state: u8 = if *v <= self.eps {
                0
            } else if c.upper - v <= self.eps {
                2
            } else {
                interior += 1;
                1
            };
            hash = (hash ^ state as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
        SolveStats {
            gradient_iterations,
            augmentations,
            interior_cells: interior,
            face_signature: hash,
        }
    }

    /// Final cleanup: recompute sums exactly and repair any drift above a cap
    /// left by rounding in the incremental updates.
    fn finish(&mut self) {
        self.refresh_sums();
        if self.problem.max_violation(&self.x) > 0.0 {
            self.project();
        }
    }
}

/// Solves the allocation LP from `init` (one value per active cell; values are
/// clipped to the cell bounds).
pub fn solve(
    problem: &AllocationProblem,
    init: &[f64],
    config: &SolverConfig,
) -> Result<Solved, SolveError> {
    if init.len() != problem.cells.len() {
        return Err(AllocError::InitLength {
            expected: problem.cells.len(),
            got: init.len(),
        }
        .into());
    }
    let scale = problem
        .appellation_caps
        .iter()
        .chain(&problem.county_caps)
        .fold(0.0f64, |m, v| m.max(*v))
        .max(1.0);
    let mut state = State::new(problem, init.to_vec(), config.epsilon * scale);
    let gradient_iterations = state.gradient_phase(config);
    match state.augment_phase(config) {
        Ok(augmentations) => {
            state.finish();
            let objective = problem.objective_of(&state.x);
            let stats = state.stats(gradient_iterations, augmentations);
            Ok(Solved {
                values: state.x,
                objective,
                stats,
            })
        }
        Err(limit) => {
            state.finish();
            Err(SolveError::IterationLimit {
                limit,
                best: problem.to_matrix(&state.x, 0.0),
            })
        }
    }
}

/// Greedy reference point: cells in decreasing weight (then cell order), each
/// filled to the smallest remaining capacity of its row, column and bound.
pub fn greedy_baseline(problem: &AllocationProblem) -> Vec<f64> {
    let mut order: Vec<usize> = (0..problem.cells.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (problem.cells[a], problem.cells[b]);
        problem.weights[cb.row]
            .total_cmp(&problem.weights[ca.row])
            .then(a.cmp(&b))
    });
    let mut rows = problem.appellation_caps.clone();
    let mut cols = problem.county_caps.clone();
    let mut x = vec![0.0; problem.cells.len()];
    for i in order {
        let c = problem.cells[i];
        let v = c.upper.min(rows[c.row]).min(cols[c.col]).max(0.0);
        x[i] = v;
        rows[c.row] -= v;
        cols[c.col] -= v;
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartOutcome {
    pub seed: u64,
    pub objective: f64,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStart {
    /// Cell-wise mean of the successful starts, aligned with the cells.
    pub average: Vec<f64>,
    pub objective: f64,
    pub starts: Vec<StartOutcome>,
    /// Per-start solutions, aligned with the cells, in seed order.
    pub solutions: Vec<Vec<f64>>,
    pub failures: Vec<(u64, SolveError)>,
    /// Minimum and mean Kendall tau-b over all pairs of solutions (over every
    /// active cell). `None` with fewer than two solutions or when every pair
    /// is undefined.
    pub pairwise_tau_min: Option<f64>,
    pub pairwise_tau_mean: Option<f64>,
}

impl MultiStart {
    pub fn to_matrix(&self, problem: &AllocationProblem) -> AllocationMatrix {
        problem.to_matrix(&self.average, 0.0)
    }

    pub fn best_objective(&self) -> f64 {
        self.starts
            .iter()
            .map(|s| s.objective)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Seed of start `index` given the base seed.
pub fn start_seed(seed_base: u64, index: usize) -> u64 {
    seed_base.wrapping_add(index as u64)
}

/// Averages `solutions` cell by cell, in the order given.
pub fn average_solutions(n_cells: usize, solutions: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; n_cells];
    if solutions.is_empty() {
        return out;
    }
    let k = solutions.len() as f64;
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = compensated_sum(solutions.iter().map(|s| s[i])) / k;
    }
    out
}

/// Pairwise Kendall tau-b summary (min, mean) of aligned solution vectors.
pub fn pairwise_tau(solutions: &[Vec<f64>]) -> (Option<f64>, Option<f64>) {
    let mut min: Option<f64> = None;
    let mut acc = NeumaierSum::new();
    let mut n = 0usize;
    for i in 0..solutions.len() {
        for j in i + 1..solutions.len() {
            if let Ok(t) = kendall_tau(&solutions[i], &solutions[j]) {
                min = Some(min.map_or(t, |m: f64| m.min(t)));
                acc.add(t);
                n += 1;
            }
        }
    }
    (min, (n > 0).then(|| acc.total() / n as f64))
}

/// Assembles a [`MultiStart`] from per-seed results in seed order.
pub fn combine_starts(
    problem: &AllocationProblem,
    results: Vec<(u64, Result<Solved, SolveError>)>,
) -> Result<MultiStart, AllocError> {
    let mut starts = Vec::new();
    let mut solutions = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(s) => {
                starts.push(StartOutcome {
                    seed,
                    objective: s.objective,
                    stats: s.stats,
                });
                solutions.push(s.values);
            }
            Err(e) => failures.push((seed, e)),
        }
    }
    if solutions.is_empty() {
        return Err(AllocError::AllStartsFailed(failures));
    }
    let average = average_solutions(problem.cells.len(), &solutions);
    let objective = problem.objective_of(&average);
    let (pairwise_tau_min, pairwise_tau_mean) = pairwise_tau(&solutions);
    Ok(MultiStart {
        average,
        objective,
        starts,
        solutions,
        failures,
        pairwise_tau_min,
        pairwise_tau_mean,
    })
}

/// Solves from `k_starts` random starts seeded `seed_base, seed_base + 1, …`
/// and averages the solutions.
pub fn multi_start_average(
    problem: &AllocationProblem,
    k_starts: usize,
    seed_base: u64,
    config: &SolverConfig,
) -> Result<MultiStart, AllocError> {
    if k_starts == 0 {
        return Err(AllocError::NoStarts);
    }
    let results = (0..k_starts)
        .map(|i| {
            let seed = start_seed(seed_base, i);
            (seed, solve(problem, &random_init(problem, seed), config))
        })
        .collect();
    combine_starts(problem, results)
}

pub const BRUTE_FORCE_MAX_CELLS: usize = 9;
pub const BRUTE_FORCE_MAX_LEVELS: usize = 12;

/// Exhaustive search over the grid `{0, step, 2·step, …}` of each cell's
/// range. Only for tiny instances; used as a test oracle.
pub fn brute_force_optimum(
    problem: &AllocationProblem,
    grid_step: f64,
) -> Result<AllocationMatrix, AllocError> {
    if !(grid_step > 0.0) {
        return Err(AllocError::TooLarge("grid step must be positive"));
    }
    if problem.cells.len() > BRUTE_FORCE_MAX_CELLS {
        return Err(AllocError::TooLarge("more than 9 active cells"));
    }
    let levels: Vec<usize> = problem
        .cells
        .iter()
        .map(|c| libm::floor(c.upper / grid_step + 1e-9) as usize + 1)
        .collect();
    if levels.iter().any(|&l| l > BRUTE_FORCE_MAX_LEVELS) {
        return Err(AllocError::TooLarge("more than 12 grid levels in a cell"));
    }

    struct Search<'a> {
        p: &'a AllocationProblem,
        levels: &'a [usize],
        step: f64,
        rows: Vec<f64>,
        cols: Vec<f64>,
        current: Vec<f64>,
        best: Vec<f64>,
        best_obj: f64,
        // optimistic completion value from cell i onward
        tail_bound: Vec<f64>,
    }

    impl Search<'_> {
        fn go(&mut self, i: usize, obj: f64) {
            if i == self.current.len() {
                if obj > self.best_obj + 1e-12 {
                    self.best_obj = obj;
                    self.best.clone_from(&self.current);
                }
                return;
            }
            if obj + self.tail_bound[i] <= self.best_obj + 1e-12 {
                return;
            }
            let c = self.p.cells[i];
            let w = self.p.weights[c.row];
            let tol = 1e-9 * self.step;
            for k in (0..self.levels[i]).rev() {
                let v = k as f64 * self.step;
                if v > self.rows[c.row] + tol || v > self.cols[c.col] + tol {
                    continue;
                }
                self.rows[c.row] -= v;
                self.cols[c.col] -= v;
                self.current[i] = v;
                self.go(i + 1, obj + w * v);
                self.rows[c.row] += v;
                self.cols[c.col] += v;
            }
            self.current[i] = 0.0;
        }
    }

    let n = problem.cells.len();
    let mut tail_bound = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let c = problem.cells[i];
        let top = (levels[i] - 1) as f64 * grid_step;
        tail_bound[i] = tail_bound[i + 1] + problem.weights[c.row] * top;
    }
    let mut search = Search {
        p: problem,
        levels: &levels,
        step: grid_step,
        rows: problem.appellation_caps.clone(),
        cols: problem.county_caps.clone(),
        current: vec![0.0; n],
        best: vec![0.0; n],
        best_obj: -1.0,
        tail_bound,
    };
    search.go(0, 0.0);
    Ok(problem.to_matrix(&search.best, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(
        apps: &[(&str, f64)],
        counties: &[(&str, f64)],
        cells: &[(&str, &str, f64)],
    ) -> AllocationProblem {
        let a = apps.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let c = counties.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        AllocationProblem::from_parts(
            &a,
            &c,
            cells
                .iter()
                .map(|(a, c, w)| (a.to_string(), c.to_string(), *w)),
        )
        .unwrap()
    }

    #[test]
    fn build_full_two_by_two() {
        let p = problem(
            &[("A", 5.0), ("B", 2.0)],
            &[("01001", 3.0), ("01002", 4.0)],
            &[
                ("A", "01001", 1.0),
                ("A", "01002", 1.0),
                ("B", "01001", 0.25),
                ("B", "01002", 0.25),
            ],
        );
        let uppers: Vec<f64> = p.cells().iter().map(|c| c.upper).collect();
        assert_eq!(uppers, vec![3.0, 4.0, 2.0, 2.0]);
        assert_eq!(p.cell_key(2), ("B", "01001"));
    }

    #[test]
    fn zero_cap_county_cells_dropped() {
        let p = problem(
            &[("A", 5.0), ("B", 2.0)],
            &[("01001", 0.0), ("01002", 4.0)],
            &[
                ("A", "01001", 1.0),
                ("A", "01002", 1.0),
                ("B", "01001", 1.0),
            ],
        );
        assert_eq!(p.cells().len(), 1);
        assert_eq!(p.dropped_cells(), 2);
    }

    #[test]
    fn missing_cap_is_an_integrity_error() {
        let a = BTreeMap::from([("A".to_string(), 1.0)]);
        let c = BTreeMap::from([("01001".to_string(), 1.0)]);
        let err =
            AllocationProblem::from_parts(&a, &c, [("A".to_string(), "01002".to_string(), 1.0)]);
        assert!(matches!(err, Err(AllocError::UnknownCounty { .. })));
        let err =
            AllocationProblem::from_parts(&a, &c, [("Z".to_string(), "01001".to_string(), 1.0)]);
        assert!(matches!(err, Err(AllocError::UnknownAppellation { .. })));
    }

    #[test]
    fn inconsistent_weights_rejected() {
        let a = BTreeMap::from([("A".to_string(), 1.0)]);
        let c = BTreeMap::from([("01001".to_string(), 1.0), ("01002".to_string(), 1.0)]);
        let err = AllocationProblem::from_parts(
            &a,
            &c,
            [
                ("A".to_string(), "01001".to_string(), 1.0),
                ("A".to_string(), "01002".to_string(), 0.25),
            ],
        );
        assert_eq!(err, Err(AllocError::InconsistentWeight("A".to_string())));
    }

    #[test]
    fn random_init_is_deterministic_and_bounded() {
        let p = problem(
            &[("A", 5.0), ("B", 2.0)],
            &[("01001", 3.0), ("01002", 4.0)],
            &[
                ("A", "01001", 1.0),
                ("A", "01002", 1.0),
                ("B", "01001", 1.0),
            ],
        );
        let x = random_init(&p, 42);
        assert_eq!(x, random_init(&p, 42));
        assert_ne!(x, random_init(&p, 43));
        for (v, c) in x.iter().zip(p.cells()) {
            assert!(*v >= 0.0 && *v <= c.upper);
        }
        let empty = problem(&[("A", 0.0)], &[("01001", 3.0)], &[("A", "01001", 1.0)]);
        assert!(random_init(&empty, 1).is_empty());
    }

    #[test]
    fn one_by_one_forced_by_min_cap() {
        let p = problem(&[("A", 5.0)], &[("01001", 3.0)], &[("A", "01001", 1.0)]);
        let s = solve(&p, &random_init(&p, 7), &SolverConfig::default()).unwrap();
        assert_eq!(s.values, vec![3.0]);
        assert_eq!(s.objective, 3.0);
        let bf = brute_force_optimum(&p, 1.0).unwrap();
        assert_eq!(bf.get("A", "01001"), 3.0);
    }

    #[test]
    fn aop_has_priority_over_non_pgi() {
        let p = problem(
            &[("AOP", 10.0), ("NPGI", 10.0)],
            &[("01001", 10.0)],
            &[("AOP", "01001", 1.0), ("NPGI", "01001", 0.25)],
        );
        for seed in 0..20 {
            let s = solve(&p, &random_init(&p, seed), &SolverConfig::default()).unwrap();
            assert!((s.values[0] - 10.0).abs() <= 1e-6, "{:?}", s.values);
            assert!(s.values[1].abs() <= 1e-6);
            assert!((s.objective - 10.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn wrong_init_length_rejected() {
        let p = problem(&[("A", 5.0)], &[("01001", 3.0)], &[("A", "01001", 1.0)]);
        assert!(matches!(
            solve(&p, &[], &SolverConfig::default()),
            Err(SolveError::Problem(AllocError::InitLength { .. }))
        ));
    }

    #[test]
    fn iteration_limit_carries_feasible_point() {
        let p = problem(
            &[("A", 5.0), ("B", 5.0)],
            &[("01001", 3.0), ("01002", 4.0)],
            &[
                ("A", "01001", 1.0),
                ("B", "01002", 1.0),
                ("B", "01001", 1.0),
            ],
        );
        let config = SolverConfig {
            max_augmentations: 0,
            max_gradient_iterations: 0,
            ..SolverConfig::default()
        };
        match solve(&p, &[0.0, 0.0, 0.0], &config) {
            Err(SolveError::IterationLimit { best, .. }) => {
                let v = p.values_of(&best).unwrap();
                assert!(p.max_violation(&v) <= 0.0);
            }
            other => panic!("expected limit, got {other:?}"),
        }
    }

    #[test]
    fn objective_examples() {
        let p = problem(
            &[("A", 5.0)],
            &[("01001", 3.0)],
            &[("A", "01001", 1.0 / 3.0)],
        );
        assert_eq!(objective(&p, &AllocationMatrix::default()).unwrap(), 0.0);
        let mut m = AllocationMatrix::default();
        m.cells.insert(("A".to_string(), "01001".to_string()), 2.0);
        assert_eq!(objective(&p, &m).unwrap(), 2.0 / 3.0);
        m.cells.insert(("A".to_string(), "99999".to_string()), 1.0);
        assert!(objective(&p, &m).is_err());
    }

    #[test]
    fn brute_force_two_by_two() {
        let p = problem(
            &[("A", 1.0), ("B", 1.0)],
            &[("01001", 1.0), ("01002", 1.0)],
            &[
                ("A", "01001", 1.0),
                ("A", "01002", 1.0),
                ("B", "01001", 1.0),
                ("B", "01002", 1.0),
            ],
        );
        let bf = brute_force_optimum(&p, 0.5).unwrap();
        assert_eq!(bf.objective_value, 2.0);
        // masking B out of 01002 and A out of 01001... still 2 via the diagonal
        let p2 = problem(
            &[("A", 1.0), ("B", 1.0)],
            &[("01001", 1.0), ("01002", 1.0)],
            &[("A", "01001", 1.0), ("B", "01001", 1.0)],
        );
        assert_eq!(brute_force_optimum(&p2, 0.5).unwrap().objective_value, 1.0);
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let apps: Vec<(String, f64)> = (0..10).map(|i| (alloc::format!("A{i}"), 1.0)).collect();
        let a: BTreeMap<String, f64> = apps.into_iter().collect();
        let c = BTreeMap::from([("01001".to_string(), 1.0)]);
        let p = AllocationProblem::from_parts(
            &a,
            &c,
            a.keys().map(|k| (k.clone(), "01001".to_string(), 1.0)),
        )
        .unwrap();
        assert!(matches!(
            brute_force_optimum(&p, 1.0),
            Err(AllocError::TooLarge(_))
        ));
        let p = problem(&[("A", 100.0)], &[("01001", 100.0)], &[("A", "01001", 1.0)]);
        assert!(matches!(
            brute_force_optimum(&p, 1.0),
            Err(AllocError::TooLarge(_))
        ));
    }

    #[test]
    fn single_start_average_equals_single_solve() {
        let p = problem(
            &[("A", 5.0), ("B", 2.0)],
            &[("01001", 3.0), ("01002", 4.0)],
            &[
                ("A", "01001", 1.0),
                ("A", "01002", 1.0),
                ("B", "01001", 1.0 / 3.0),
                ("B", "01002", 1.0 / 3.0),
            ],
        );
        let config = SolverConfig::default();
        let ms = multi_start_average(&p, 1, 99, &config).unwrap();
        let single = solve(&p, &random_init(&p, 99), &config).unwrap();
        assert_eq!(ms.average, single.values);
        assert_eq!(ms.pairwise_tau_min, None);
        assert_eq!(
            multi_start_average(&p, 0, 0, &config),
            Err(AllocError::NoStarts)
        );
    }

    #[test]
    fn unique_optimum_gives_unit_tau() {
        let p = problem(
            &[("AOP", 10.0), ("NPGI", 10.0)],
            &[("01001", 10.0)],
            &[("AOP", "01001", 1.0), ("NPGI", "01001", 0.25)],
        );
        let ms = multi_start_average(&p, 5, 3, &SolverConfig::default()).unwrap();
        assert!((ms.average[0] - 10.0).abs() < 1e-9);
        assert!(ms.average[1].abs() < 1e-9);
        assert_eq!(ms.pairwise_tau_min, Some(1.0));
    }
}
