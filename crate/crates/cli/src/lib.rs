//! Command-line and HTTP front end for [`msdpp`].

pub mod commands;
pub mod eval;
pub mod pipeline;
pub mod service;
pub mod sweep;
