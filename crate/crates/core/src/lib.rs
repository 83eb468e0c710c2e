//! Lossless point cloud geometry compression.
//!
//! A cloud is split into clusters, each cluster is serialized as a
//! breadth-first K-tree occupancy sequence, the sequence is mapped to model
//! tokens and cut into chunks, and each chunk is range coded against the
//! next-token distributions of a pluggable autoregressive model.

pub mod cluster;
pub mod container;
pub mod corpus;
pub mod error;
pub mod ktree;
pub mod pipeline;
pub mod pointcloud;
pub mod probmodel;
pub mod rangecoder;
pub mod synthgen;
pub mod tokenmap;

pub use error::{Error, Result, Stage};
pub use ktree::KMode;
pub use pipeline::{decode_bytes, decode_file, encode_cloud, encode_file, DecodeConfig, EncodeConfig};
pub use pointcloud::{Point, PointCloud};
pub use probmodel::ModelSpec;
