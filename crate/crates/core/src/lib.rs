pub mod commands;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod objective;
pub mod optimizer;
pub mod oracle;
pub mod spatial;
pub mod stochastic;
