//! Breathing torso phantom, golden-angle radial sampling and multi-coil acquisition.

mod acquisition;
mod coils;
mod compress;
mod scene;
mod trajectory;

pub use acquisition::{
    simulate_acquisition, simulate_acquisition_with, spoke_amplitudes, Acquisition, AcquisitionOptions,
    RadialKSpace,
};
pub use coils::{smooth_coil_maps, CoilSet};
pub use compress::{pca_coil_compress, CoilProjection};
pub use scene::{render_phantom, BreathingWaveform, Ellipsoid, PhantomScene, PhantomState};
pub use trajectory::{
    golden_angle_trajectory, golden_angle_trajectory_with_tr, golden_direction, RadialTrajectory, DEFAULT_TR,
    GOLDEN_MEAN_1, GOLDEN_MEAN_2, K_MAX,
};
