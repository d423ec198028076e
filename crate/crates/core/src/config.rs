//! Reconstruction and simulation configuration (JSON) with named presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::InitStrategy;
use crate::nufft::{KSpaceWeighting, NufftMethod, DEFAULT_KERNEL_WIDTH};
use crate::phantom::DEFAULT_TR;
use crate::volume::Dims;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DvfGenerator {
    DirectGrid,
    #[default]
    ConvDecoder,
}

/// Which states enter the objective at each iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSchedule {
    #[default]
    FullBatch,
    /// One state per iteration, cycling in index order.
    Cycle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub grid_size: usize,
    pub n_gaussians: usize,
    pub n_states: usize,
    pub lambda_tv: f64,
    pub lambda_spatial: f64,
    pub lambda_phase: f64,
    pub lr_rho: f64,
    pub lr_scale: f64,
    pub lr_rot: f64,
    pub lr_motion: f64,
    pub n_iterations: usize,
    pub init_strategy: InitStrategy,
    pub dvf_generator: DvfGenerator,
    pub n_bases: usize,
    pub rng_seed: u64,
    pub kspace_weighting: KSpaceWeighting,
    /// Decoder output bound in coarse-grid voxels; `None` means grid / 8.
    pub max_displacement: Option<f64>,
    /// Multiplies every initial Gaussian scale.
    pub scale_multiplier: f64,
    /// Foreground threshold relative to the seed volume's maximum magnitude.
    pub init_threshold: f64,
    pub checkpoint_every: usize,
    pub state_schedule: StateSchedule,
    pub nufft_kernel_width: usize,
    /// Self-gating low-pass cutoff in Hz.
    pub gating_cutoff_hz: f64,
    /// Abort when the total loss exceeds this multiple of its initial value.
    pub divergence_factor: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            grid_size: 64,
            n_gaussians: 30_000,
            n_states: 6,
            lambda_tv: 1.0,
            lambda_spatial: 0.005,
            lambda_phase: 0.005,
            lr_rho: 0.01,
            lr_scale: 0.005,
            lr_rot: 0.001,
            lr_motion: 0.001,
            n_iterations: 2000,
            init_strategy: InitStrategy::MultiResolution,
            dvf_generator: DvfGenerator::ConvDecoder,
            n_bases: 2,
            rng_seed: 0,
            kspace_weighting: KSpaceWeighting::Ramp,
            max_displacement: None,
            scale_multiplier: 1.0,
            init_threshold: 0.05,
            checkpoint_every: 500,
            state_schedule: StateSchedule::FullBatch,
            nufft_kernel_width: DEFAULT_KERNEL_WIDTH,
            gating_cutoff_hz: 0.75,
            divergence_factor: 10.0,
        }
    }
}

/// Names accepted by [`ReconConfig::preset`].
pub const PRESETS: &[&str] = &[
    "desk",
    "full-protocol",
    "lambda-tv-0",
    "lambda-tv-0.1",
    "lambda-tv-1",
    "lambda-tv-10",
    "m-30000",
    "m-300000",
    "states-5",
    "states-6",
    "init-random",
    "init-equal-space",
    "init-multi-resolution",
    "iterations-2000",
    "iterations-20000",
    "table1-strict",
];

impl ReconConfig {
    /// Desk-scale defaults with one ablation setting applied.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self::default();
        match name {
            "desk" => {}
            "full-protocol" => {
                c.grid_size = 256;
                c.n_gaussians = 300_000;
                c.n_iterations = 20_000;
            }
            "lambda-tv-0" => c.lambda_tv = 0.0,
            "lambda-tv-0.1" => c.lambda_tv = 0.1,
            "lambda-tv-1" => c.lambda_tv = 1.0,
            "lambda-tv-10" => c.lambda_tv = 10.0,
            "m-30000" => c.n_gaussians = 30_000,
            "m-300000" => c.n_gaussians = 300_000,
            "states-5" => c.n_states = 5,
            "states-6" => c.n_states = 6,
            "init-random" => c.init_strategy = InitStrategy::Random,
            "init-equal-space" => c.init_strategy = InitStrategy::EqualSpace,
            "init-multi-resolution" => c.init_strategy = InitStrategy::MultiResolution,
            "iterations-2000" => c.n_iterations = 2000,
            "iterations-20000" => c.n_iterations = 20_000,
            "table1-strict" => c.n_bases = 4,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown preset {name:?}; known: {}",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(c)
    }

    pub fn dims(&self) -> Dims {
        Dims::cube(self.grid_size)
    }

    pub fn nufft_method(&self) -> NufftMethod {
        NufftMethod::Gridding {
            width: self.nufft_kernel_width,
        }
    }

    pub fn max_displacement(&self) -> f64 {
        self.max_displacement.unwrap_or(self.grid_size as f64 / 8.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.grid_size < 16 || self.grid_size % 4 != 0 {
            return bad(format!("grid_size must be a multiple of 4 and >= 16, got {}", self.grid_size));
        }
        if self.n_gaussians < 1 || self.n_states < 1 || self.n_bases < 1 {
            return bad("n_gaussians, n_states and n_bases must be >= 1".into());
        }
        for (name, v) in [
            ("lambda_tv", self.lambda_tv),
            ("lambda_spatial", self.lambda_spatial),
            ("lambda_phase", self.lambda_phase),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("lr_rho", self.lr_rho),
            ("lr_scale", self.lr_scale),
            ("lr_rot", self.lr_rot),
            ("lr_motion", self.lr_motion),
            ("scale_multiplier", self.scale_multiplier),
            ("gating_cutoff_hz", self.gating_cutoff_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.init_threshold > 0.0 && self.init_threshold < 1.0) {
            return bad(format!("init_threshold must be in (0, 1), got {}", self.init_threshold));
        }
        if self.divergence_factor <= 1.0 {
            return bad("divergence_factor must exceed 1".into());
        }
        if let Some(d) = self.max_displacement {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("max_displacement must be > 0, got {d}"));
            }
        }
        if !(2..=16).contains(&self.nufft_kernel_width) {
            return bad(format!("nufft_kernel_width must be in 2..=16, got {}", self.nufft_kernel_width));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Phantom acquisition settings for `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub grid_size: usize,
    pub n_spokes: usize,
    pub samples_per_spoke: usize,
    pub n_coils: usize,
    /// PCA-compress to this many virtual coils; `None` keeps the physical ones.
    pub n_virtual_coils: Option<usize>,
    pub noise_std: f64,
    pub breathing_frequency: f64,
    /// Diaphragm excursion at full inspiration, voxels.
    pub diaphragm_amplitude: f64,
    pub tr: f64,
    pub seed: u64,
    /// Ground-truth states written alongside the data.
    pub n_states: usize,
    /// Breathing amplitude quantization used when rendering; `None` renders
    /// every distinct amplitude.
    pub amplitude_levels: Option<usize>,
    pub nufft_kernel_width: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grid_size: 64,
            n_spokes: 6000,
            samples_per_spoke: 33,
            n_coils: 4,
            n_virtual_coils: None,
            noise_std: 0.0,
            breathing_frequency: 0.25,
            diaphragm_amplitude: 4.0,
            tr: DEFAULT_TR,
            seed: 0,
            n_states: 6,
            amplitude_levels: Some(64),
            nufft_kernel_width: DEFAULT_KERNEL_WIDTH,
        }
    }
}

impl SimConfig {
    /// The scanner protocol numbers: 256³, 86,000 spokes of 149 samples,
    /// 8 virtual coils.
    pub fn full_protocol() -> Self {
        Self {
            grid_size: 256,
            n_spokes: 86_000,
            samples_per_spoke: 149,
            n_coils: 16,
            n_virtual_coils: Some(8),
            ..Self::default()
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::cube(self.grid_size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.grid_size < 16 {
            return bad(format!("grid_size must be >= 16, got {}", self.grid_size));
        }
        if self.n_spokes < 4 || self.samples_per_spoke < 2 || self.n_coils < 1 || self.n_states < 1 {
            return bad("need >= 4 spokes, >= 2 samples per spoke, >= 1 coil and >= 1 state".into());
        }
        if let Some(v) = self.n_virtual_coils {
            if v < 1 || v > self.n_coils {
                return bad(format!("n_virtual_coils must be in 1..={}", self.n_coils));
            }
        }
        if !(self.noise_std >= 0.0) || !(self.tr > 0.0) || !(self.diaphragm_amplitude >= 0.0) {
            return bad("noise_std and diaphragm_amplitude must be >= 0, tr > 0".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }
}
