//! Pose time-series cleaning, behavioral windows, UMAP embedding and
//! edge-ensemble rendering for home-cage mouse video.

pub mod config;
pub mod embed;
pub mod explore;
pub mod ingest;
pub mod pipeline;
pub mod quality;
pub mod series;
pub mod spotlight;
pub mod synth;
pub mod windows;
