//! Traffic-distribution workbench for profiled Pennington-Worah random matrices.

pub mod experiment;
pub mod graph;
pub mod hermite;
pub mod limits;
pub mod models;
pub mod partitions;
pub mod traffic;

/// Arbitrary-precision rational scalar used by every exact computation.
pub type Rational = num_rational::BigRational;
