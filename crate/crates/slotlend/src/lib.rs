//! Deterministic, slot-synchronous simulator for a TDMA network in which
//! lightly loaded "lender" nodes lease their transmission slots to busy
//! neighbors and sleep for the lease duration.
//!
//! The pieces, bottom to top:
//!
//! - [`topology`]: random geometric graphs on a square, with the hop-distance
//!   queries the rest of the stack leans on;
//! - [`coloring`]: greedy distance-2 slot coloring and its verifier;
//! - [`traffic`]: seeded Poisson arrival streams and the bounded
//!   FIFO buffer whose drops and waits are the metrics under study;
//! - [`protocol`]: the per-node slot-lending state machine — offer,
//!   interest, confirmation, grant — plus lease-duration policy;
//! - [`trace`]: line-oriented event traces and the auditors that check
//!   borrowed transmissions against granted leases;
//! - [`engine`]: the synchronous round loop tying nodes together and the
//!   collision audit;
//! - [`harness`]: scenario configs, reports, paired baseline/lending
//!   comparison, and the α sweep with CSV output.
//!
//! Every run is a pure function of its config (including the seed): same
//! config, same bytes out — reports, traces, and sweep tables alike.

pub mod coloring;
pub mod engine;
pub mod harness;
pub mod protocol;
pub mod topology;
pub mod trace;
pub mod traffic;
