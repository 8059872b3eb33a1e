//! Discrete-time simulator of a C-V2X Mode 4 highway with semi-persistent
//! scheduling, prioritised message queues and NOMA reception, plus the
//! allocation agents that pick each vehicle's reservation interval and power.

pub mod agents;
pub mod config;
pub mod engine;
pub mod error;
pub mod mobility;
pub mod phy;
pub mod rng;
pub mod sps;
pub mod traffic;
pub mod training;

pub use config::{default_config, load_config, SimulationConfig};
pub use engine::{run_episode, run_episode_with, EpisodeMetrics, RunOptions};
pub use error::{ConfigError, Error, Result};
