//! Structure-aware serialization of point-cloud patch tokens, a toy selective
//! recurrence with hierarchical prompt/query fusion, and test-time spectral
//! feature alignment.

pub mod align;
pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod pointcloud;
pub mod serialize;
pub mod ssm;

pub use error::{Error, Result};
