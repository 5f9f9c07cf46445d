//! Edge-based object detection, multi-view pose registration and next-best-view
//! planning for textureless rigid parts.
//!
//! The pipeline:
//! 1. [`mesh`] loads a triangle mesh and extracts its wire edges.
//! 2. [`template`] samples those edges and keeps the points visible from a
//!    viewpoint; a [`template::TemplateBank`] covers the pose space.
//! 3. [`edges`] turns an intensity image into oriented edgels.
//! 4. [`dcd`] builds the direction-aware distance tensor from the edgels.
//! 5. [`detection`] scans the bank against the tensor for pose candidates.
//! 6. [`registration`] refines candidates with Levenberg-Marquardt over one or
//!    more views and scores them.
//! 7. [`nbv`] chooses further viewpoints by maximizing mutual information.
//!
//! [`sim`] generates synthetic scenes and observations for all of the above.

pub mod error;
pub mod geometry;
pub mod mesh;
pub mod raster;
pub mod template;
pub mod image;
pub mod edges;
pub mod edt;
pub mod dcd;
pub mod detection;
pub mod registration;
pub mod nbv;
pub mod sim;
pub mod experiments;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, ImagePoint, Pose};
