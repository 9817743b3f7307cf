//! Joint vehicle dispatching and pricing for a mixed exclusive/shared
//! mobility-on-demand fleet.
//!
//! The crate covers the sequential framework (each request priced on arrival
//! with a closed-form two-product optimum), the batched framework (requests
//! pooled into shareability matchings, priced jointly and selected by an exact
//! integer program with overbooking), and an event-driven simulator that runs
//! both against static-fare benchmarks.

pub mod assignment;
pub mod bpd_pricing;
pub mod choice;
pub mod costs;
pub mod error;
mod lambert;
pub mod matching;
pub mod network;
pub mod simulator;
pub mod spd_pricing;

pub use error::{Error, Result};
