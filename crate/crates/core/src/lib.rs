//! Head-mesh deformation and single-image fitting toolkit.
//!
//! * [`mesh`]: triangle meshes, OBJ I/O, cotangent weights, Laplacian coordinates
//! * [`dr`]: deformation-representation encode/decode
//! * [`sampler`]: hyperspherical DR interpolation and PCA shape sampling
//! * [`camera`]: pinhole camera, quaternion extrinsics, EPnP
//! * [`solver`]: Gauss-Newton fit of expression, corrective field and camera to landmarks
//! * [`texture`]: UV projection with visibility and Poisson blending
//! * [`eval`]: alignment, ICP, cropping and ARMSE against ground truth

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod camera;
pub mod dr;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod mesh;
pub mod par;
pub mod sampler;
pub mod solver;
pub mod sparse;
pub mod synth;
pub mod texture;

pub use error::{Error, Result};
pub use par::Exec;
