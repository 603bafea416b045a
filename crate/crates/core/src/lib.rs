//! Reconstruction of an appellation × county vineyard surface matrix from
//! marginal totals, and its conversion into expected harvest values.
//!
//! The crate is `no_std` with `alloc`. Everything here is a pure function over
//! in-memory records; reading the open-data files, configuration and the
//! command line live in the `vinmap` companion crate.
//!
//! Module map:
//!
//! - [`model`], [`cvi`], [`pseudo`]: domain records, product code truncation and
//!   per-department pseudo-appellations.
//! - [`linkage`]: label normalization, weighted Damerau-Levenshtein distance and
//!   price-scale matching.
//! - [`yields`]: Olympic average and the expected-yield fallback chain.
//! - [`allocator`]: the weighted allocation LP, random starts, the solver and the
//!   multi-start average.
//! - [`valuation`]: harvest values and their aggregation.
//! - [`validate`]: Kendall tau-b and solution/aggregate comparisons.
//! - [`synth`]: synthetic instances with a known ground truth.
#![no_std]
// `!(x > 0.0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod allocator;
pub mod cvi;
pub mod linkage;
pub mod model;
pub mod pseudo;
pub mod sum;
pub mod synth;
pub mod validate;
pub mod valuation;
pub mod yields;

pub use allocator::{AllocationMatrix, AllocationProblem};
pub use model::{
    AppellationRecord, AuthorizationMask, Category, CategoryWeights, Color, CountyRecord,
    PriceEntry, ProductionMode,
};
