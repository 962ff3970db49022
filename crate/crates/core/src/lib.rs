//! Discrete-time simulation and adaptive configuration of decentralized
//! single-hop interference networks.
//!
//! The crate is organized bottom-up: [`geometry`] places links, [`channel`]
//! turns distances into received powers, [`rates`] decides which coding
//! rates are decodable, [`mac`] and [`traffic`] drive channel access and
//! queues, [`metrics`] summarizes runs, [`engine`] ties them into a slotted
//! loop and [`adapt`] chooses per-node settings from local estimates.

pub mod adapt;
pub mod channel;
pub mod config;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod mac;
pub mod metrics;
pub mod rates;
pub mod rng;
pub mod traffic;

pub use config::{parse, parse_and_validate, ScenarioConfig};
pub use engine::{run, RunReport};
pub use error::{Error, Result};
