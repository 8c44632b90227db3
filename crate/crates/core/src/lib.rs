//! Targetless LiDAR-stereo extrinsic calibration from road markings.

pub mod config;
pub mod costs;
pub mod dataset;
pub mod edges;
pub mod error;
pub mod geometry;
pub mod image_selection;
pub mod io;
pub mod local_map;
pub mod optimizer;
pub mod raster;
pub mod stereo_road;
pub mod synthetic;

pub use config::Config;
pub use dataset::{CameraSide, Dataset};
pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, CloudPoint, IntensityCloud, Pose6, RigidTransform, Vec3};
pub use raster::{BinaryImage, EdgeImage, GrayImage, Raster, RoadMask};
