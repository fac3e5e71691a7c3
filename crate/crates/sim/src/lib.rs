//! Deterministic end-to-end simulation of the prepaid card services.
//!
//! A single-threaded loop drives customers through the merchant against an
//! in-process provider on a simulated clock, injecting message and crash
//! faults from a seeded generator, then checks that every unit of issued
//! value is accounted for. A separate stress mode races real threads over
//! loopback.

pub mod bench;
pub mod config;
pub mod harness;
pub mod link;
pub mod stress;
pub mod tamper;

pub use bench::{Bench, SimCard, MERCHANT_ID, PROVIDER_ID};
pub use config::{SimConfig, SimError};
pub use harness::{check_conservation, run_simulation, Check, Conservation, Outcomes, SimReport, Totals};
pub use link::{CaptureEvent, FaultCounts, FaultRates, SimLink};
pub use stress::{run_stress, StressConfig, StressReport};
