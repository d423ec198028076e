//! Image-quality and motion metrics, ROIs, slice rendering and reports.

mod metrics;
mod profile;
mod render;
mod report;
mod roi;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use metrics::{
    cnr, cnr_from_stats, dvf_endpoint_error, masked_nrmse, masked_stats, nrmse, pearson, snr, snr_from_stats,
    EndpointError,
};
pub use profile::{diaphragm_profile, rising_edge, DiaphragmProfile, VoxelColumn};
pub use render::{extract_slice, gray_png, percentile, render_slice, write_slice_png, Slice};
pub use report::{MetricRow, MetricsReport};
pub use roi::{restrict_mask, RoiSet, NOISE};

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims, Dvf, RealVolume};

/// Slice orientation for the torso phantom's axes: x left-right,
/// y anterior-posterior, z superior-inferior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    Coronal,
    Sagittal,
    Axial,
}

impl Plane {
    /// The axis held fixed.
    pub fn axis(self) -> usize {
        match self {
            Plane::Sagittal => 0,
            Plane::Coronal => 1,
            Plane::Axial => 2,
        }
    }
}

impl FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            "axial" => Ok(Plane::Axial),
            _ => Err(Error::InvalidArgument(format!("unknown plane {s:?}"))),
        }
    }
}

/// Where SNR and CNR are measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricDomain {
    Volume,
    Slice { plane: Plane, index: usize },
}

impl MetricDomain {
    /// The central coronal slice.
    pub fn default_for(dims: Dims) -> Self {
        MetricDomain::Slice {
            plane: Plane::Coronal,
            index: dims.ny / 2,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct StateSet {
    pub volumes: Vec<ComplexVolume>,
    /// Displacement of each state relative to state 0, when known.
    pub dvfs: Option<Vec<Dvf>>,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub domain: MetricDomain,
    pub column: Option<VoxelColumn>,
    /// Known diaphragm displacement per state. Falls back to the edge
    /// series of the truth states.
    pub reference_displacement: Option<Vec<f64>>,
    /// Where DVF errors are measured. Defaults to the union of tissue ROIs.
    pub motion_mask: Option<RealVolume>,
}

/// SNR and CNR per tissue ROI and state, NRMSE per state, DVF endpoint
/// errors, diaphragm edges and their correlation with the reference.
/// ROIs with no voxel in the measured slice are skipped.
pub fn evaluate(recon: &StateSet, truth: &StateSet, rois: &RoiSet, opts: &EvalOptions) -> Result<MetricsReport> {
    if recon.volumes.len() != truth.volumes.len() || recon.volumes.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} reconstructed states, {} truth states",
            recon.volumes.len(),
            truth.volumes.len()
        )));
    }
    let mut report = MetricsReport::default();
    let measured = match opts.domain {
        MetricDomain::Volume => rois.clone(),
        MetricDomain::Slice { plane, index } => rois.restrict(plane, index)?,
    };
    let noise = measured.noise()?;
    for (s, vol) in recon.volumes.iter().enumerate() {
        let mag = vol.magnitude();
        let (mu_n, sigma) = masked_stats(&mag, noise)?;
        for (name, mask) in measured.tissues().filter(|(_, m)| m.count_nonzero() > 0) {
            let (mu, _) = masked_stats(&mag, mask)?;
            report.push("snr_db", name, Some(s), snr_from_stats(mu, sigma)?);
            report.push("cnr_db", name, Some(s), cnr_from_stats(mu, mu_n, sigma)?);
        }
        report.push("nrmse", "", Some(s), nrmse(vol, &truth.volumes[s])?);
    }
    if let (Some(est), Some(tr)) = (&recon.dvfs, &truth.dvfs) {
        let mask = match &opts.motion_mask {
            Some(m) => m.clone(),
            None => {
                let mut m = RealVolume::zeros(rois.dims);
                for (_, t) in rois.tissues() {
                    for (a, b) in m.data.iter_mut().zip(&t.data) {
                        *a = a.max(*b);
                    }
                }
                m
            }
        };
        for (s, (e, t)) in est.iter().zip(tr).enumerate() {
            let err = dvf_endpoint_error(e, t, &mask)?;
            report.push("dvf_epe_mean", "", Some(s), err.mean);
            report.push("dvf_epe_max", "", Some(s), err.max);
        }
    }
    if let Some(col) = opts.column {
        let prof = diaphragm_profile(&recon.volumes, col)?;
        for (s, e) in prof.edges.iter().enumerate() {
            report.push("diaphragm_edge", "", Some(s), e.unwrap_or(f64::NAN));
        }
        let reference = match &opts.reference_displacement {
            Some(r) => r.iter().map(|v| Some(*v)).collect(),
            None => diaphragm_profile(&truth.volumes, col)?.displacements(),
        };
        let est = prof.displacements();
        let pairs: Vec<(f64, f64)> = est.iter().zip(&reference).filter_map(|(a, b)| Some(((*a)?, (*b)?))).collect();
        if pairs.len() >= 2 {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Some(r) = pearson(&a, &b)? {
                report.push("diaphragm_pearson", "", None, r);
            }
        }
    }
    Ok(report)
}
