//! Solver and simulator for caching control in ultra-dense cellular edge
//! networks.
//!
//! The crate has two halves that meet in the cost model:
//!
//! - a numerical engine that computes the equilibrium caching policy of a
//!   representative small base station by iterating a backward value
//!   equation against a forward state-density transport, coupled through a
//!   replication functional and a water-filling control formula;
//! - a Monte Carlo harness that replays that policy (and baselines) over a
//!   simulated multi-station network with common random numbers, measuring
//!   long-run-average cost and content replication.
//!
//! Geometry (interference, spectral efficiency) is reduced once per
//! configuration to a deterministic densification limit; everything else
//! consumes that scalar.

pub use ndarray;

pub mod config;
pub mod cost;
pub mod dynamics;
pub mod geometry;
pub mod policy;
pub mod seeds;
pub mod sim;
pub mod solver;
pub mod special;
