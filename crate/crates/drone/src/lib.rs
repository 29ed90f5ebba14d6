//! Drone side of the voice-command suite: turning decisions into protocol
//! commands, a Tello-style text simulator (in-process and over UDP) and the
//! HTTP service used by the operator console.

pub mod api;
pub mod dispatch;
pub mod error;
pub mod sim;
pub mod udp;

pub use dispatch::{dispatch, Action, Dispatch, ProtocolCommand, Verb, DEFAULT_STEP_CM};
pub use error::{Error, Result};
pub use sim::{replay, sim_apply, Bounds, DroneState, Reply, Simulator};
