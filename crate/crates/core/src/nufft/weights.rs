use serde::{Deserialize, Serialize};

use crate::phantom::RadialTrajectory;

/// Per-sample density-compensation weights, laid out (spoke, readout).
#[derive(Clone, Debug, PartialEq)]
pub struct KSampleWeights {
    pub weights: Vec<f64>,
}

impl KSampleWeights {
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// First `keep` weights of every spoke.
    pub fn truncate_readout(&self, samples_per_spoke: usize, keep: usize) -> Self {
        let weights = self
            .weights
            .chunks(samples_per_spoke)
            .flat_map(|c| c[..keep.min(c.len())].iter().copied())
            .collect();
        Self { weights }
    }

    /// Weights for a subset of spokes, in the order given.
    pub fn select_spokes(&self, spokes: &[usize], samples_per_spoke: usize) -> Self {
        let mut weights = Vec::with_capacity(spokes.len() * samples_per_spoke);
        for &s in spokes {
            weights.extend_from_slice(&self.weights[s * samples_per_spoke..(s + 1) * samples_per_spoke]);
        }
        Self { weights }
    }
}

/// Which per-sample weighting the data term uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSpaceWeighting {
    None,
    #[default]
    Ramp,
}

impl KSpaceWeighting {
    pub fn weights(self, traj: &RadialTrajectory) -> KSampleWeights {
        match self {
            KSpaceWeighting::None => KSampleWeights::uniform(traj.n_samples()),
            KSpaceWeighting::Ramp => ramp_weights(traj),
        }
    }
}

/// 3D radial density compensation: `w ∝ |k|²` with the largest weight 1, and
/// each spoke's center sample weighted as if it sat half its first step out.
pub fn ramp_weights(traj: &RadialTrajectory) -> KSampleWeights {
    let s = traj.samples_per_spoke;
    let r2 = |k: &[f64; 3]| k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
    let k_max = traj.k_max();
    if k_max == 0.0 {
        return KSampleWeights::uniform(traj.n_samples());
    }
    let mut weights = Vec::with_capacity(traj.k.len());
    for sp in 0..traj.n_spokes {
        let spoke = traj.spoke(sp);
        for (i, k) in spoke.iter().enumerate() {
            let r = if i == 0 && s > 1 { 0.5 * r2(&spoke[1]).sqrt() } else { r2(k).sqrt() };
            weights.push((r / k_max).powi(2));
        }
    }
    KSampleWeights { weights }
}
