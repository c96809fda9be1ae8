//! Fractional Dirichlet problems, continuous Steiner symmetrization and shape
//! derivatives on convex domains in one and two dimensions.

pub mod eigensolve;
pub mod error;
pub mod fracops;
pub mod geometry;
pub mod grid;
pub mod quad;
pub mod selftest;
pub mod shape;
pub mod steiner;

pub use error::{Error, Result};
pub use fracops::FracOrder;
pub use geometry::{build_domain, BoundarySample, ConvexDomain, DomainSpec};
pub use grid::{GridFunction, Point};
pub use steiner::{IntervalUnion, Layering, SymTime};

/// Library version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
