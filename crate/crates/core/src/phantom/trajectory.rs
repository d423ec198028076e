use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2D golden means used to generate 3D golden-angle spoke directions.
pub const GOLDEN_MEAN_1: f64 = 0.465_571_231_876_768;
pub const GOLDEN_MEAN_2: f64 = 0.682_327_803_828_019;

/// Default repetition time, seconds.
pub const DEFAULT_TR: f64 = 3.7e-3;

pub const K_MAX: f64 = 0.5;

/// Center-out 3D radial trajectory, spoke-major: sample `i` of spoke `s` is
/// `k[s * samples_per_spoke + i]` (cycles/voxel).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialTrajectory {
    pub n_spokes: usize,
    pub samples_per_spoke: usize,
    pub tr: f64,
    pub k: Vec<[f64; 3]>,
}

impl RadialTrajectory {
    /// Largest sampled radius.
    pub fn k_max(&self) -> f64 {
        self.k.iter().map(|k| norm(k)).fold(0.0, f64::max)
    }

    pub fn n_samples(&self) -> usize {
        self.k.len()
    }

    pub fn spoke_time(&self, spoke: usize) -> f64 {
        spoke as f64 * self.tr
    }

    pub fn spoke(&self, spoke: usize) -> &[[f64; 3]] {
        let s = self.samples_per_spoke;
        &self.k[spoke * s..(spoke + 1) * s]
    }

    /// Unit direction of a spoke (the direction of its last sample).
    pub fn direction(&self, spoke: usize) -> [f64; 3] {
        let last = self.spoke(spoke)[self.samples_per_spoke - 1];
        let n = norm(&last);
        last.map(|v| v / n)
    }

    /// Trajectory made of the given spokes, in order.
    pub fn select_spokes(&self, spokes: &[usize]) -> Self {
        Self {
            n_spokes: spokes.len(),
            samples_per_spoke: self.samples_per_spoke,
            tr: self.tr,
            k: self.gather(spokes),
        }
    }

    /// Concatenated k locations of the given spokes, in order.
    pub fn gather(&self, spokes: &[usize]) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(spokes.len() * self.samples_per_spoke);
        for &s in spokes {
            out.extend_from_slice(self.spoke(s));
        }
        out
    }

    /// Keep only the first `keep` samples of every spoke (low-pass along the readout).
    pub fn truncate_readout(&self, keep: usize) -> Result<Self> {
        if keep == 0 || keep > self.samples_per_spoke {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {keep} of {} samples per spoke",
                self.samples_per_spoke
            )));
        }
        let mut k = Vec::with_capacity(self.n_spokes * keep);
        for s in 0..self.n_spokes {
            k.extend_from_slice(&self.spoke(s)[..keep]);
        }
        Ok(Self {
            n_spokes: self.n_spokes,
            samples_per_spoke: keep,
            tr: self.tr,
            k,
        })
    }
}

fn norm(k: &[f64; 3]) -> f64 {
    (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt()
}

/// Direction of spoke `n` from the 2D golden-means sequence: the cosine of
/// the polar angle is uniform in [-1, 1] and the azimuth uniform in [0, 2π).
pub fn golden_direction(n: usize) -> [f64; 3] {
    let m = (n + 1) as f64;
    let cz = 2.0 * (m * GOLDEN_MEAN_1).fract() - 1.0;
    let az = 2.0 * std::f64::consts::PI * (m * GOLDEN_MEAN_2).fract();
    let r = (1.0 - cz * cz).max(0.0).sqrt();
    [r * az.cos(), r * az.sin(), cz]
}

pub fn golden_angle_trajectory(n_spokes: usize, samples_per_spoke: usize) -> Result<RadialTrajectory> {
    golden_angle_trajectory_with_tr(n_spokes, samples_per_spoke, DEFAULT_TR)
}

pub fn golden_angle_trajectory_with_tr(
    n_spokes: usize,
    samples_per_spoke: usize,
    tr: f64,
) -> Result<RadialTrajectory> {
    if n_spokes < 1 || samples_per_spoke < 2 {
        return Err(Error::InvalidArgument(format!(
            "need >= 1 spoke and >= 2 samples per spoke, got {n_spokes} x {samples_per_spoke}"
        )));
    }
    let step = K_MAX / (samples_per_spoke - 1) as f64;
    let mut k = Vec::with_capacity(n_spokes * samples_per_spoke);
    for s in 0..n_spokes {
        let d = golden_direction(s);
        for i in 0..samples_per_spoke {
            let r = if i == samples_per_spoke - 1 { K_MAX } else { i as f64 * step };
            k.push([r * d[0], r * d[1], r * d[2]]);
        }
    }
    Ok(RadialTrajectory {
        n_spokes,
        samples_per_spoke,
        tr,
        k,
    })
}
