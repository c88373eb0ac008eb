//! Region queries over an embedding, persistent cluster labels, and canny
//! edge-ensemble clips of the windows inside a region.

pub mod canny;
pub mod ensemble;
pub mod labels;
pub mod region;

pub use canny::{canny, CannyParams, EdgeMap};
pub use ensemble::{ensemble, export_clip, DirFrames, EnsembleClip, EnsembleError, FrameSource};
pub use labels::{ClusterLabel, LabelStore};
pub use region::{query_region, QueryResult, Region};
