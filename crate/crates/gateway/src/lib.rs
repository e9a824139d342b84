//! Operator surface: the `toot` command line and the live click-to-train
//! websocket session.

pub mod cli;
pub mod protocol;
pub mod server;
pub mod session;
