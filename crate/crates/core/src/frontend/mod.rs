//! Point-cloud front end: registration, crossing detection and scan matching.

pub mod closure;
pub mod cloud;
pub mod crossings;
pub mod icp;
pub mod kdtree;

pub use closure::{make_loop_closure, ClosureParams};
pub use cloud::{
    estimate_normals_and_variation, extract_submap, register_profiles, voxel_downsample, Extrinsics, Frame, LaserProfile,
    RegisteredCloud, Submap,
};
pub use crossings::{detect_crossings, Crossing};
pub use icp::{icp_align, Correspondence, ErrorKind, IcpParams, IcpReport};
pub use kdtree::KdTree;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrontendError {
    #[error("insufficient overlap: {found} points, {required} required")]
    InsufficientOverlap { found: usize, required: usize },
    #[error("target submap has no normals")]
    MissingNormals,
    #[error("alignment failed: {0}")]
    AlignmentFailed(String),
}
