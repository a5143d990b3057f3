//! Maximum Budgeted Allocation toolkit.
//!
//! Players have hard budgets, items have per-player prices, and each item can
//! go to at most one player.  A player pays for the items they receive, capped
//! at their budget; the goal is to maximize total payment.  This crate builds
//! the whole experimental stack around that problem:
//!
//! * [`instance`] — instance data model, validation, JSON schema, generators,
//!   and a brute-force optimum for small instances.
//! * [`lp`] — an assignment relaxation and a configuration relaxation (solved
//!   by column generation), both on top of a small dense simplex.
//! * [`stats`] — per-player / per-item statistics of fractional solutions and
//!   the closed-form lower bounds used to certify rounding quality.
//! * [`rounding`] — bucket-graph randomized rounding: build the bipartite
//!   bucket graph, decompose it into a distribution over matchings with exact
//!   marginals, evaluate the expected value exactly, and sample.
//! * [`arrangements`] — worst-case rearrangement analysis of a single player's
//!   bucket distribution (equal-weight configurations, worsening swaps).
//! * [`transforms`] — value-improving reassignment schemes: shifting mass of
//!   unequally priced items toward high-price players, and shifting big/small
//!   mixed items inside a random player partition.
//! * [`pipeline`] — the end-to-end seven-step case analysis that either rounds
//!   immediately with a certificate or simplifies the solution and recurses.
//!
//! The `examples/` directory has one runnable walkthrough per module; the
//! `mba` binary exposes the same functionality as subcommands.

pub mod arrangements;
pub mod export;
pub mod instance;
pub mod lp;
pub mod pipeline;
pub mod rounding;
pub mod solution;
pub mod stats;
pub mod transforms;

mod error;

pub use error::{Error, Result};
pub use instance::{Allocation, Instance, ItemClass};
pub use solution::{AssignmentSolution, ConfigSolution, ItemOrigin};

/// Version stamp carried by every JSON artifact this crate writes.
pub const SCHEMA_VERSION: u32 = 1;
