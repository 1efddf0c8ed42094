//! Volumetric alpha matting for 3D medical images.
//!
//! Soft lesion segmentations are recovered from CT intensities and several
//! binary annotations: masks are fused into a trimap, foreground constraints
//! are optionally calibrated against Hounsfield units, and a closed-form or
//! KNN matting Laplacian is solved with preconditioned conjugate gradients.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cf;
pub mod error;
pub mod io;
pub mod knn;
pub mod metrics;
pub mod phantom;
pub mod solve;
pub mod sparse;
pub mod trimap;
pub mod volume;

pub use error::{Error, Result};
pub use sparse::SparseSymMatrix;
pub use trimap::{Label, SoftConstraint, Trimap};
pub use volume::{AlphaMatte, Geometry, LabelMask, Unit, VolumeGrid};
