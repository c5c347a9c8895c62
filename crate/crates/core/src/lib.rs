//! Flow-record to RGB-image encoding and compact CNN+LSTM classifiers for
//! DoS/DDoS detection and characterization.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
