//! Experiment harness: configs, seed fan-out, metrics CSVs, aggregation,
//! significance tests, SVG plots and shipped recipes.

use std::path::{Path, PathBuf};

use statekl_core::batchrl::BatchError;
use statekl_core::train::TrainError;

pub mod config;
pub mod csvio;
pub mod ident;
pub mod plot;
pub mod recipes;
pub mod run;
pub mod stats;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("unknown recipe `{0}`")]
    UnknownRecipe(String),
    #[error("{0}")]
    Mode(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Csv(#[from] csvio::CsvError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Plot(#[from] plot::PlotError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for anything wrong with the inputs, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::UnknownRecipe(_) | HarnessError::Mode(_) => 2,
            _ => 3,
        }
    }
}
