//! Exact and approximate control of a two-stage collaborative-care clearing queue.
//!
//! A fixed population of patients waits for triage by one of `cp` nurse
//! practitioners (NPs). After triage the NP either serves the patient alone
//! (station 1) or together with one of `cg` general physicians (station 2),
//! queueing if every physician is busy. The goal is to empty the system at
//! minimum expected holding cost.
//!
//! The crate is organised as:
//!
//! * [`model`]: parameters, states, transitions and cost rates.
//! * [`solver`]: backward induction over the acyclic state graph, value
//!   differences, fixed-policy evaluation and threshold scans.
//! * [`heuristics`]: closed-form approximations of the value difference and
//!   the threshold rule they induce, plus a deterministic trace oracle.
//! * [`policies`]: benchmark, heuristic, custom and optimal policies.
//! * [`simulator`]: seeded Monte Carlo simulation of the controlled chain.
//! * [`experiments`]: the parameter sweep and relative-error tables.
//! * [`cli`]: the `clearq` command-line front end.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod heuristics;
pub mod model;
pub mod policies;
pub mod simulator;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Action, ModelParams, State};
pub use policies::PolicySpec;
pub use solver::ValueTable;
