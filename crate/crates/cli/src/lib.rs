//! Library side of the `hiros` binary: bus services, the synthetic camera,
//! the scripted demo and report formatting.

pub mod demo;
pub mod messages;
pub mod player;
pub mod report;
pub mod services;
