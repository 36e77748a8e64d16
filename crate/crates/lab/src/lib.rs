//! Experiment harness for utility-based market makers: JSON market configs,
//! a random market generator, table and figure reproduction, and the
//! acceptance checks behind `mumarket verify`.

pub mod config;
pub mod generator;
pub mod oracle;
pub mod reproduce;
pub mod verify;
