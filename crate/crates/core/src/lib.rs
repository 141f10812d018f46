//! Virtual vehicles on a vehicular cloud.
//!
//! Consumers request a virtual vehicle (a VM) that should behave as if it
//! were driving with given parameters. A central manager places it on a
//! matching physical vehicle and migrates it, with pre-copy live migration,
//! whenever the host stops matching: to another vehicle in the zone when one
//! fits, otherwise to the covering roadside unit. The [`engine`] runs the
//! whole thing as a seeded discrete-event simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod directory;
pub mod engine;
pub mod geo;
pub mod ids;
pub mod metrics;
pub mod migration;
pub mod mobility;
pub mod provisioning;

pub use engine::{run, run_with, RunOptions, RunOutput, Scenario, SimError};
pub use metrics::SimulationReport;
