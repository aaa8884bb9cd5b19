//! Deep graph convolution with a wide linear branch, for transductive node classification.
//!
//! The crate is organised bottom-up: [`dense`] and [`graph`] hold the numeric
//! containers and sparse operators, [`autodiff`] records a tape for reverse-mode
//! gradients, [`models`] assembles the architectures, [`trainer`] runs Adam with
//! early stopping, [`data`] reads graph bundles and [`analysis`] hosts the
//! diagnostic studies.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dense;
pub mod error;
pub mod graph;
pub mod models;
pub mod output;
pub mod trainer;

pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use graph::{Graph, SparseOperator, Split};
