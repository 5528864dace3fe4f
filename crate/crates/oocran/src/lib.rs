//! REST service, event stream and command-line front end.

pub mod cli;
pub mod client;
pub mod server;
