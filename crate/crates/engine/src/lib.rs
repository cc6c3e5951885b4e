//! The decoding engine: device ingestion, recording, training, validation,
//! downstream outputs and the operator API.

pub mod bench;
pub mod config;
pub mod gateway;
pub mod ingest;
pub mod latency;
pub mod orchestrator;
pub mod outputs;
pub mod plot;
pub mod recorder;
pub mod shared;

pub use config::EngineConfig;
pub use orchestrator::{Command, CommandError, Engine, Reply};
