//! Multi-horizon epidemic death forecasting from lagged surveillance counts
//! and search-frequency panels.

pub mod geo;
mod homotopy;
pub mod ingest;
pub mod preprocess;
pub mod solver;
pub mod argo;
pub mod argox;
pub mod features;
pub mod stats;
pub mod ensemble;
pub mod synth;
pub mod pipeline;
