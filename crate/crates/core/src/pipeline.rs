//! End-to-end helpers shared by the CLI and the tests: phantom simulation
//! with ground truth, and self-gating.

use std::fs;
use std::path::Path;

use crate::config::SimConfig;
use crate::error::Result;
use crate::gating::{bin_spokes, extract_dc_signal, lowpass_filter, median, MotionStateBins, RespiratorySignal};
use crate::io;
use crate::nufft::NufftMethod;
use crate::phantom::{
    golden_angle_trajectory_with_tr, pca_coil_compress, render_phantom, simulate_acquisition_with, smooth_coil_maps,
    AcquisitionOptions, CoilSet, PhantomScene, PhantomState, RadialKSpace,
};

/// Default self-gating low-pass cutoff, Hz.
pub const GATING_CUTOFF_HZ: f64 = 0.75;

pub struct SimulatedData {
    pub scene: PhantomScene,
    pub kspace: RadialKSpace,
    pub coils: CoilSet,
    /// Breathing amplitude each spoke was rendered at.
    pub spoke_amplitudes: Vec<f64>,
    pub bins: MotionStateBins,
    /// Per gated state: the median true breathing amplitude of its spokes.
    pub truth_amplitudes: Vec<f64>,
    pub truth_states: Vec<PhantomState>,
}

/// DC signal, low-pass filter, equal-count amplitude bins.
pub fn gate(k: &RadialKSpace, n_states: usize, cutoff_hz: f64) -> Result<(RespiratorySignal, MotionStateBins)> {
    let sig = lowpass_filter(&extract_dc_signal(k)?, cutoff_hz)?;
    let bins = bin_spokes(&sig, n_states)?;
    Ok((sig, bins))
}

/// Simulates the breathing torso, optionally coil-compresses, gates the
/// result and renders one ground-truth volume per gated state.
pub fn simulate(cfg: &SimConfig) -> Result<SimulatedData> {
    cfg.validate()?;
    let dims = cfg.dims();
    let scene = PhantomScene::breathing_torso(dims, cfg.diaphragm_amplitude, cfg.breathing_frequency);
    let traj = golden_angle_trajectory_with_tr(cfg.n_spokes, cfg.samples_per_spoke, cfg.tr)?;
    let coils = smooth_coil_maps(cfg.n_coils, dims, cfg.seed)?;
    let opts = AcquisitionOptions {
        noise_std: cfg.noise_std,
        amplitude_levels: cfg.amplitude_levels,
        method: NufftMethod::Gridding {
            width: cfg.nufft_kernel_width,
        },
        seed: cfg.seed,
    };
    let acq = simulate_acquisition_with(&scene, &traj, &coils, &opts)?;
    let (kspace, coils) = match cfg.n_virtual_coils {
        Some(v) if v < cfg.n_coils => {
            let (k, proj) = pca_coil_compress(&acq.kspace, v)?;
            (k, proj.apply_to_coils(&coils)?)
        }
        _ => (acq.kspace, coils),
    };
    let (_, bins) = gate(&kspace, cfg.n_states, GATING_CUTOFF_HZ)?;
    let truth_amplitudes: Vec<f64> = bins
        .states
        .iter()
        .map(|spokes| median(&spokes.iter().map(|&s| acq.spoke_amplitudes[s]).collect::<Vec<_>>()))
        .collect();
    let truth_states = truth_amplitudes
        .iter()
        .map(|&a| render_phantom(&scene, a, dims))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedData {
        scene,
        kspace,
        coils,
        spoke_amplitudes: acq.spoke_amplitudes,
        bins,
        truth_amplitudes,
        truth_states,
    })
}

/// Writes `kspace.bin`, `trajectory.bin`, `coils.gsmr`, `scene.json`,
/// `truth_state_<i>.gsmr` and `truth_dvf_<i>.bin` (state 0 to state i).
pub fn write_simulation(dir: &Path, sim: &SimulatedData) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_radial_kspace(dir, &sim.kspace)?;
    io::write_coils(&dir.join("coils.gsmr"), &sim.coils)?;
    fs::write(dir.join("scene.json"), serde_json::to_string_pretty(&sim.scene)?)?;
    fs::write(
        dir.join("truth_amplitudes.json"),
        serde_json::to_string_pretty(&sim.truth_amplitudes)?,
    )?;
    let dims = sim.coils.dims();
    let a0 = sim.truth_amplitudes[0];
    for (i, (st, &a)) in sim.truth_states.iter().zip(&sim.truth_amplitudes).enumerate() {
        io::write_volume(&dir.join(format!("truth_state_{i}.gsmr")), &st.volume)?;
        io::write_dvf(&dir.join(format!("truth_dvf_{i}.bin")), &sim.scene.analytic_dvf(a0, a, dims))?;
    }
    Ok(())
}
