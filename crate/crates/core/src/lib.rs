//! Access-delay model, blocklength optimizer and Monte Carlo simulator for
//! two-step grant-free random access with short packets.
//!
//! - [`analytic`]: packet error probability under the linearized
//!   finite-blocklength error curve, collision avoidance, success probability.
//! - [`traffic`]: queue Markov chain, retransmission counts and delays.
//! - [`optimizer`]: per-packet blocklength optimization.
//! - [`simulator`]: seeded slot-level simulation and model comparison.
//! - [`config`] and [`experiment`]: TOML configuration, sweeps and CSV output.

pub mod analytic;
pub mod blocklength;
pub mod config;
pub mod error;
pub mod experiment;
pub mod optimizer;
pub mod scenario;
pub mod simulator;
pub mod traffic;

pub use blocklength::BlocklengthMatrix;
pub use config::SystemConfig;
pub use error::{Error, Result};
pub use scenario::Scenario;
