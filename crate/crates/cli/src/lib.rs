//! Command-line driver for the `hillspec` library.

pub mod args;
pub mod commands;
pub mod config;
pub mod svg;
pub mod verify;
