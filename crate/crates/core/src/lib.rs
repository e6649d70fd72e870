//! Discrete-event serverless cluster simulator with a learning resource
//! manager that harvests idle CPU and memory from over-provisioned function
//! invocations and hands it to under-provisioned ones.
//!
//! The crate is organised bottom-up:
//!
//! * [`domain`] and [`perf_model`] describe functions, invocations and the
//!   synthetic latency model.
//! * [`workload`] generates and loads invocation traces.
//! * [`sim`] runs a trace against a [`managers::ResourceManager`].
//! * [`safeguard`], [`agent`], [`neural`] and [`trainer`] make up the
//!   learning manager and its PPO training loop.
//! * [`metrics`] turns finished runs into reports.

pub mod agent;
pub mod config;
pub mod domain;
pub mod error;
pub mod managers;
pub mod metrics;
pub mod neural;
pub mod perf_model;
pub mod safeguard;
pub mod scenario;
pub mod sim;
pub mod trainer;
pub mod workload;

pub use error::{Error, Result};
