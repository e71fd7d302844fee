//! Simulation of residential EV charging on a capacity-limited distribution
//! transformer.
//!
//! Each EV plans its own charging in the cheapest hours before departure
//! ([`rtp::build_rtp_schedule`]). In the aggregated strategy those plans are
//! submitted as [`aggregator::FlexOffer`]s to a grid-side [`aggregator::Aggregator`]
//! that moves charging out of forecast overloads, highest laxity first, and
//! compensates users for any cost increase. [`engine::run_scenario`] runs a
//! whole year minute by minute and [`kpi`] evaluates the outcome.
//!
//! ```no_run
//! use gridflex::config::{ScenarioConfig, Strategy};
//!
//! let cfg = ScenarioConfig { strategy: Strategy::Aggregated, seed: 42, ..Default::default() };
//! let result = gridflex::engine::run_scenario(&cfg)?;
//! println!("{}", result.kpi);
//! # Ok::<(), gridflex::Error>(())
//! ```

pub mod aggregator;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod fleet;
pub mod kpi;
pub mod market;
pub mod report;
pub mod rtp;
pub mod synth;

pub use aggregator::{shift_loads, Aggregator, AggregatorError, FlexOffer};
pub use config::{ScenarioConfig, Strategy};
pub use engine::{compare_runs, run_scenario, SimulationResult};
pub use error::{Error, Result};
pub use fleet::{EvId, EvSpec};
pub use kpi::KpiReport;
pub use rtp::{build_rtp_schedule, ChargingSchedule};
