//! Non-uniform Fourier operator between gridded volumes and k-space samples.
//!
//! Convention: `s(k) = Σ_j v_j exp(-2πi k·(j - c))` with `k` in cycles/voxel
//! and `c = dims / 2` (integer) the grid center.

mod direct;
mod gridding;
pub mod kernel;
mod weights;

pub use direct::{adjoint_direct, forward_direct};
pub use gridding::{GriddingPlan, DEFAULT_KERNEL_WIDTH};
pub use weights::{ramp_weights, KSampleWeights, KSpaceWeighting};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{CoilSet, RadialTrajectory};
use crate::volume::{ComplexVolume, Dims, C64};

const K_TOLERANCE: f64 = 1e-12;

pub(crate) fn check_k_range(ks: &[[f64; 3]]) -> Result<()> {
    for k in ks {
        if k.iter().any(|c| !c.is_finite() || c.abs() > 0.5 + K_TOLERANCE) {
            return Err(Error::KOutOfRange(*k));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NufftMethod {
    Direct,
    Gridding { width: usize },
}

impl Default for NufftMethod {
    fn default() -> Self {
        NufftMethod::Gridding {
            width: DEFAULT_KERNEL_WIDTH,
        }
    }
}

#[derive(Debug)]
enum Backend {
    Direct { ks: Vec<[f64; 3]> },
    Gridding(GriddingPlan),
}

/// A NUFFT bound to one grid and one set of k-space locations.
#[derive(Debug)]
pub struct Nufft {
    dims: Dims,
    n_samples: usize,
    backend: Backend,
}

impl Nufft {
    pub fn new(dims: Dims, ks: &[[f64; 3]], method: NufftMethod) -> Result<Self> {
        dims.validate()?;
        check_k_range(ks)?;
        let backend = match method {
            NufftMethod::Direct => Backend::Direct { ks: ks.to_vec() },
            NufftMethod::Gridding { width } => Backend::Gridding(GriddingPlan::new(dims, ks, width)?),
        };
        Ok(Self {
            dims,
            n_samples: ks.len(),
            backend,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn forward(&self, v: &ComplexVolume) -> Result<Vec<C64>> {
        match &self.backend {
            Backend::Direct { ks } => forward_direct(v, ks),
            Backend::Gridding(plan) => plan.forward(v),
        }
    }

    pub fn adjoint(&self, samples: &[C64]) -> Result<ComplexVolume> {
        match &self.backend {
            Backend::Direct { ks } => adjoint_direct(samples, ks, self.dims),
            Backend::Gridding(plan) => plan.adjoint(samples),
        }
    }
}

/// Forward transform over every sample of a trajectory (gridding path).
pub fn nufft_forward(v: &ComplexVolume, traj: &RadialTrajectory) -> Result<Vec<C64>> {
    Nufft::new(v.dims, &traj.k, NufftMethod::default())?.forward(v)
}

/// Adjoint transform of samples laid out like `traj.k`.
pub fn nufft_adjoint(samples: &[C64], traj: &RadialTrajectory, dims: Dims) -> Result<ComplexVolume> {
    if samples.len() != traj.k.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples for {} trajectory points",
            samples.len(),
            traj.k.len()
        )));
    }
    Nufft::new(dims, &traj.k, NufftMethod::default())?.adjoint(samples)
}

/// `Σ_c conj(C_c) · Fᴴ(w · m_c)`: coil-combined weighted adjoint.
pub fn coil_combined_adjoint(
    op: &Nufft,
    per_coil: &[Vec<C64>],
    coils: &CoilSet,
    weights: Option<&[f64]>,
) -> Result<ComplexVolume> {
    if per_coil.len() != coils.n_coils() {
        return Err(Error::ShapeMismatch(format!(
            "{} coil data sets for {} coil maps",
            per_coil.len(),
            coils.n_coils()
        )));
    }
    let mut out = ComplexVolume::zeros(op.dims());
    for (samples, map) in per_coil.iter().zip(&coils.maps) {
        let img = match weights {
            Some(w) => {
                let weighted: Vec<C64> = samples.iter().zip(w).map(|(s, w)| s * w).collect();
                op.adjoint(&weighted)?
            }
            None => op.adjoint(samples)?,
        };
        for ((o, v), c) in out.data.iter_mut().zip(&img.data).zip(&map.data) {
            *o += c.conj() * v;
        }
    }
    Ok(out)
}
