//! Simulated amplifier for desk-scale testing of the decoding pipeline.
//!
//! [`model`] turns a movement and its activation into frames of
//! amplitude-modulated noise, [`script`] sequences movements over time and
//! builds whole synthetic recording sessions, [`follow`] lets the simulated
//! participant imitate a guide hand received over UDP, and [`server`] streams
//! frames over TCP in the amplifier's wire format.

pub mod follow;
pub mod model;
pub mod script;
pub mod server;

use std::io;
use std::net::SocketAddr;

use thiserror::Error;

pub use follow::{explain_guide, GuideFollower};
pub use model::{synth_frame, DriveSignal, MovementPattern, SyntheticModel};
pub use script::{scripted_session, Script, ScriptEntry, SessionScript};
pub use server::{Drive, ServeOptions, ServerHandle, ServerStats, SimServer, Source};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("movement {0:?} has no activation pattern")]
    UnknownMovement(String),
    #[error("activation {0} outside [0, 1]")]
    InvalidActivation(f64),
    #[error("invalid synthetic model: {0}")]
    InvalidModel(String),
    #[error("invalid script: {0}")]
    Script(String),
    #[error("port {0} is already in use")]
    PortInUse(SocketAddr),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SimError {
    fn bind(addr: SocketAddr, e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::AddrInUse {
            SimError::PortInUse(addr)
        } else {
            SimError::Io(e)
        }
    }
}
