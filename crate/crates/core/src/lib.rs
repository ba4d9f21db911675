//! LiDAR odometry and pose-graph SLAM building blocks.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. Everything here is pure computation; file formats, logging and the
//! command line live in the `ndtslam` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cloud;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod icp;
pub mod kdtree;
pub mod math;
pub mod metrics;
pub mod ndt;
pub mod sim;
mod sparse;
pub mod uncertainty;
pub mod urban;

pub use crate::cloud::PointCloud;
pub use crate::error::{Error, Result};
pub use crate::geometry::{edge_error, Point3, Pose6D, PoseError6};
pub use crate::graph::{EdgeKind, GraphEdge, GraphNode, OptimizerParams, PoseGraph};
pub use crate::ndt::{NdtGrid, NdtParams, NdtPyramid, RegistrationResult};
pub use crate::uncertainty::{InformationMatrix6, UncertaintyBreakdown, UncertaintyCoefficients};
pub use crate::urban::{Building, Skyplot, UrbanizationClass};
