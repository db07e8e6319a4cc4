//! Toolkit for turning robot trajectories into normalized 2D image-plane
//! paths and everything that hangs off that representation.
//!
//! The modules mirror the data flow:
//!
//! - [`geometry`]: pinhole projection of end-effector trajectories, PnP
//!   extrinsic recovery and reprojection-based filtering.
//! - [`path`]: the [`path::Path2D`] type and its transforms (RDP
//!   simplification, fixed-count resampling, noise augmentation).
//! - [`render`]: integer-only rasterization of paths onto images.
//! - [`vqa`]: prompt and answer wire formats for VLM finetuning records.
//! - [`dataset`]: manifest conversion, sharding, mixing and statistics.
//! - [`harness`]: a kinematic tabletop simulator exercising the
//!   plan-once, follow-many hierarchical contract.
//! - [`rank`]: ranking sessions for human evaluation of candidate paths,
//!   with an HTTP front end in [`rank::http`].

pub mod dataset;
pub mod geometry;
pub mod harness;
pub mod path;
pub mod rank;
pub mod render;
pub mod vqa;

pub use geometry::{CameraExtrinsics, CameraIntrinsics, Correspondence, EEFrame, Trajectory};
pub use path::{GripperEvent, GripperEventKind, Path2D, PathPoint};

pub use render::{Image, OverlayStyle, RenderMode};
pub use vqa::{ParseMode, Source, VqaSample};
