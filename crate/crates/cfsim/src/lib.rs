//! File formats, external predictors and the `cfsim` command line built on
//! [`cfsim_core`].

pub mod bench;
pub mod cli;
pub mod formats;
pub mod predictor;
pub mod table;
