//! hcsim: a simulator and analysis library for one-round hypercube
//! shuffles of full conjunctive queries on shared-nothing clusters.
//!
//! The library answers three questions about a query q, statistics M, and
//! a server budget p:
//!
//! - what are the optimal per-variable shares, and what load do they
//!   guarantee (`shares`, `packing`)?
//! - what load does a concrete run of the one-round shuffle incur on a
//!   concrete database, under plain, skew-aware two-relation, or general
//!   bin-combination routing (`shuffle`, `skew`)?
//! - how close is the measured load to the matching lower bounds
//!   (`bounds`)?
//!
//! Module map:
//!
//! - [`query`]: conjunctive query model, parser, residual queries.
//! - [`packing`]: fractional edge packings/covers, polytope vertices pk(q).
//! - [`stats`]: cardinalities, frequencies, heavy hitters, bins, bin
//!   combinations.
//! - [`bounds`]: closed-form load bounds, expected answers, replication
//!   bound, the correlation inequality checker.
//! - [`shares`]: the share-exponent LP, rounding, space exponents.
//! - [`simplex`]: exact rational LP solver backing the above.
//! - [`shuffle`]: hash families, subcube routing, load measurement, local
//!   joins.
//! - [`skew`]: skew-aware algorithms (two-relation skew join, general bin
//!   combinations).
//! - [`harness`]: generators, oracle join, experiment runner, report
//!   serialization; the `hcsim` binary is a thin wrapper around it.

pub mod bounds;
pub mod error;
pub mod harness;
pub mod packing;
pub mod query;
pub mod ratio;
pub mod shares;
pub mod shuffle;
pub mod simplex;
pub mod skew;
pub mod stats;

mod linalg;

pub use error::{Error, Result};
