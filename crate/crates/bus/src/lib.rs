//! Topic-based publish/subscribe bus.
//!
//! A broker speaks a small length-prefixed binary protocol over TCP
//! ([`codec`]) and a WebSocket bridge exposes the same topics as JSON
//! ([`ws`]). Delivery is at-most-once with exact topic matching; each
//! subscriber sees messages in publish order, and a slow subscriber loses
//! its oldest queued messages rather than stalling publishers.

pub mod broker;
pub mod client;
pub mod codec;
pub mod server;
pub mod ws;

pub use broker::{Broker, Delivery, Outbound, Session, SubStats, DEFAULT_QUEUE_CAPACITY};
pub use client::{BusClient, ClientError, Message, Publisher};
pub use codec::{decode, encode, CodecError, Frame, MsgType};
pub use server::{serve_bus, ServerHandle};
pub use ws::{serve_ws, BridgeConfig};

pub mod topics {
    /// Encoded camera frames.
    pub const CAMERA_FRAMES: &str = "camera/frames";
    /// JSON requests asking the recognizer to render a performance
    /// (`{"class_id": n, "frames"?: m}`) into `camera/frames`.
    pub const CAMERA_INJECT: &str = "camera/inject";
    pub const GESTURE_PREDICTION: &str = "gesture/prediction";
    pub const ROBOT_COMMAND: &str = "robot/command";
    pub const ROBOT_STATE: &str = "robot/state";
    pub const SYSTEM_ATTENTION: &str = "system/attention";
}

pub const DEFAULT_BUS_PORT: u16 = 7447;
pub const DEFAULT_WS_PORT: u16 = 7448;
pub const BUS_PORT_ENV: &str = "HIROS_BUS_PORT";
pub const WS_PORT_ENV: &str = "HIROS_WS_PORT";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{var}={value:?} is not a valid port")]
pub struct PortError {
    pub var: String,
    pub value: String,
}

/// Reads a port from the environment, falling back to `default` when unset.
pub fn port_from_env(var: &str, default: u16) -> Result<u16, PortError> {
    match std::env::var(var) {
        Ok(v) => v.trim().parse().map_err(|_| PortError {
            var: var.to_owned(),
            value: v,
        }),
        Err(_) => Ok(default),
    }
}

pub fn bus_port() -> Result<u16, PortError> {
    port_from_env(BUS_PORT_ENV, DEFAULT_BUS_PORT)
}

pub fn ws_port() -> Result<u16, PortError> {
    port_from_env(WS_PORT_ENV, DEFAULT_WS_PORT)
}
