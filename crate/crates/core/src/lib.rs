//! Full object boundary detection from scale-invariant keypoints.
//!
//! An object is learned as a pool of keypoint descriptors from one or more
//! training images. In a test image, matched keypoints mark object regions
//! of a mean-shift over-segmentation, the image frame marks background, and
//! a maximal-similarity region merging pass grows the background until the
//! remaining regions form the object, whose boundary is then traced.
//!
//! Module map:
//! - [`raster`]: images, I/O, Gaussian blur, gradients
//! - [`scale_space`]: Gaussian / DoG pyramids and extrema
//! - [`features`]: keypoint refinement, orientation, descriptors
//! - [`matcher`]: ratio-test nearest-neighbour matching
//! - [`presegment`]: mean shift filtering and region labeling
//! - [`region_merge`]: region graph, seeding, merging, boundary tracing
//! - [`pipeline`]: train / detect / evaluate, file formats, configuration

pub mod error;
pub mod features;
pub mod matcher;
pub mod pipeline;
pub mod presegment;
pub mod raster;
pub mod region_merge;
pub mod scale_space;

pub use error::{Error, Result, Stage};
