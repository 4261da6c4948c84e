//! Toolkit for the simple plant location problem (SPLP): pick a subset of
//! candidate sites to open so that the opened sites' fixed costs plus every
//! client's cheapest transportation cost is minimal.
//!
//! The crate is organized around an incrementally maintained solution state
//! ([`solution::SolutionState`]) that search components ([`components`])
//! mutate in place. A Markov-chain executor ([`cmcs`]) schedules components
//! by success/failure transition matrices, and [`generator`] enumerates,
//! filters, and selects deterministic configurations automatically.
//!
//! All cost arithmetic is exact 64-bit integer math; floating point appears
//! only in transition probabilities and score normalization.

pub mod cmcs;
pub mod components;
pub mod generator;
pub mod instance;
pub mod solution;

/// Exact currency type used for fixed costs, transportation costs, and
/// objective values. Instances keep every intermediate value well inside
/// `i64` range (costs are bounded by 2 * 10^12 for supported sizes).
pub type Money = i64;
