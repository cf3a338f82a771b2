//! File formats, dataset IO, training runs, evaluation reports and the
//! command-line interface around `transfig-core`.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod fsutil;
pub mod images;
pub mod manifest;
pub mod run;

pub use error::{AppError, Result};
