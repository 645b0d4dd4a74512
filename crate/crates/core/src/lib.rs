//! Learning-free BEV global localization: rotation from a Radon magnitude
//! spectrum, translation from 2D correlation of filtered BEV planes, and an
//! exhaustive search over a keyframe map where place recognition falls out of
//! pose estimation.

pub mod cloud_io;
pub mod correlation;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod grid;
pub mod localize;
pub mod map_store;
pub mod objectives;
pub mod repr;
pub mod selftest;

mod fft;

#[cfg(test)]
mod testutil;

pub use geometry::{compose_global_pose, remove_ground, transform_cloud, PointCloud, Pose2};
pub use grid::{rotate_grid, translate_grid, voxelize_to_bev, BevGrid, GridSpec};
pub use exec::Exec;
pub use localize::{Localization, Localizer, LocalizerConfig};
pub use map_store::{build_map, load_map, save_map, KeyframeDatabase, MapConfig, Observation};
