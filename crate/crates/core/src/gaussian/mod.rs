//! The reference image as a sum of anisotropic 3D Gaussians.

mod init;
mod point;
mod voxelize;

pub use init::{
    cloud_from_positions, equal_space_positions, foreground, init_equal_space, init_multi_resolution, init_random,
    level_counts, level_samples, multi_resolution_pyramid, neighbor_scales, InitOptions, InitStrategy, PyramidLevel,
    FOREGROUND_THRESHOLD, MAX_LEVEL, PYRAMID_UNITS,
};
pub use point::{
    covariance, normalize_quaternion, quaternion_gradient, rotation_jacobian, rotation_matrix, CloudGradient,
    GaussianCloud, GaussianPoint, IDENTITY_QUATERNION,
};
pub use voxelize::{support_sizes, voxelize, voxelize_backward, SUPPORT_SIGMAS};
