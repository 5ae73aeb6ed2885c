//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

pub mod attention;
pub mod batches;
pub mod gen_source;
pub mod golden;
pub mod strip_oracle;
