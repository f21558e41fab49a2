//! Search for redistributing a detection backbone's block budget.
//!
//! A fixed block budget is redistributed across the stages of a backbone
//! (stage reallocation), then each block picks a dilation rate for its
//! spatial convolution (operation reallocation). Candidate architectures are
//! scored by a pluggable [`eval::Evaluator`], which stands in for detection
//! accuracy measured on a trained supernet.
//!
//! Module map:
//! - [`arch`]: genotypes, backbone families and the code text format.
//! - [`budget`]: weighted block counts and the relative cost model.
//! - [`space`]: stage branch sets, exhaustive enumeration and counting.
//! - [`rf`]: theoretical and effective receptive fields.
//! - [`eval`]: evaluators and completion sampling for partial codes.
//! - [`search`]: stage search, greedy beam operation search, brute force.
//! - [`report`]: run records, key-tree report files, scatter CSV.
//! - [`cli`]: the `realloc-nas` command line front end.

pub mod arch;
pub mod budget;
pub mod cli;
mod error;
pub mod eval;
pub mod golden;
pub mod keytree;
pub mod report;
pub mod rf;
pub mod rng;
pub mod search;
pub mod space;

pub use arch::{
    builtin_families, format_codes, parse_codes, validate_architecture, Architecture,
    BackboneFamily, BlockKind, OperationAssignment, StageAllocation, Violation,
};
pub use budget::{backbone_cost, is_within_budget, weighted_block_count, BudgetModel, Weight};
pub use error::{Error, Result};
pub use eval::{evaluate_full, evaluate_partial, Completions, Evaluator, EvaluatorSpec};
pub use search::{
    brute_force_search, greedy_op_search, hierarchical_search, stage_search, SearchConfig,
    SearchReport,
};
pub use space::{count_allocations, enumerate_allocations, operation_space_size, AllocationSpace};

/// Number of operation choices per block: dilation rates 1, 2 and 3.
pub const NUM_OPS: u8 = 3;

/// Crate version, embedded in run records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
