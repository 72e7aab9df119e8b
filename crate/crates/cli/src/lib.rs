//! Launcher and interactive console for the simulator.

pub mod app;
pub mod console;
