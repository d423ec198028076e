//! Initial Gaussian clouds from a seed volume (the weighted adjoint of the
//! reference-state data).

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rstar::primitives::GeomWithData;
use rstar::RTree;
use serde::{Deserialize, Serialize};

use super::point::{GaussianCloud, GaussianPoint};
use crate::error::{Error, Result};
use crate::nufft::{coil_combined_adjoint, KSpaceWeighting, Nufft, NufftMethod};
use crate::phantom::{CoilSet, RadialKSpace};
use crate::volume::{ComplexVolume, Dims, C64};

/// Foreground is every voxel with `|v| >= FOREGROUND_THRESHOLD * max|v|`.
pub const FOREGROUND_THRESHOLD: f64 = 0.05;

/// Resolution levels `l = 0..=MAX_LEVEL` of the multi-resolution pyramid.
pub const MAX_LEVEL: u32 = 5;

/// `Σ_{l=0}^{5} 4^l`: points per unit `n` across the pyramid.
pub const PYRAMID_UNITS: usize = 1365;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Random,
    EqualSpace,
    #[default]
    MultiResolution,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitOptions {
    /// Multiplies every initial scale (1 = average neighbor distance).
    pub scale_multiplier: f64,
    pub threshold: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            scale_multiplier: 1.0,
            threshold: FOREGROUND_THRESHOLD,
        }
    }
}

/// Indices of voxels at or above `threshold * max|v|`.
pub fn foreground(v: &ComplexVolume, threshold: f64) -> Result<Vec<usize>> {
    let max = v.max_abs();
    if !(max > 0.0) {
        return Err(Error::EmptyForeground);
    }
    let cut = threshold * max;
    let fg: Vec<usize> = (0..v.data.len()).filter(|&i| v.data[i].norm() >= cut).collect();
    if fg.is_empty() {
        return Err(Error::EmptyForeground);
    }
    Ok(fg)
}

fn nearest_voxel(dims: Dims, p: [f64; 3]) -> usize {
    let n = dims.as_array();
    let c: [usize; 3] = std::array::from_fn(|a| p[a].round().clamp(0.0, n[a] as f64 - 1.0) as usize);
    dims.index(c[0], c[1], c[2])
}

/// Mean distance from each point to its three nearest neighbors (fewer if
/// the set is smaller).
pub fn neighbor_scales(positions: &[[f64; 3]]) -> Vec<f64> {
    let tree = RTree::bulk_load(
        positions
            .iter()
            .enumerate()
            .map(|(i, p)| GeomWithData::new(*p, i))
            .collect(),
    );
    let k = 3.min(positions.len().saturating_sub(1));
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if k == 0 {
                return 1.0;
            }
            let sum: f64 = tree
                .nearest_neighbor_iter(p)
                .filter(|n| n.data != i)
                .take(k)
                .map(|n| {
                    let q = n.geom();
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
                })
                .sum();
            sum / k as f64
        })
        .collect()
}

/// Smallest scale handed out at initialization, in voxels.
const MIN_SCALE: f64 = 0.25;

/// Cloud with isotropic scales from each point's three nearest neighbors.
pub fn cloud_from_positions(
    positions: Vec<[f64; 3]>,
    seed_volume: &ComplexVolume,
    opts: &InitOptions,
) -> Result<GaussianCloud> {
    let dims = seed_volume.dims;
    let scales = neighbor_scales(&positions);
    let points: Vec<GaussianPoint> = positions
        .iter()
        .zip(&scales)
        .map(|(p, s)| {
            let rho = seed_volume.data[nearest_voxel(dims, *p)];
            GaussianPoint::isotropic(*p, rho, (s * opts.scale_multiplier).max(MIN_SCALE))
        })
        .collect();
    GaussianCloud::new(dims, &points)
}

/// `m` foreground voxels drawn uniformly without replacement (with
/// replacement plus sub-voxel jitter when `m` exceeds the foreground).
pub fn init_random(seed: u64, m: usize, seed_volume: &ComplexVolume, opts: &InitOptions) -> Result<GaussianCloud> {
    if m < 4 {
        return Err(Error::InvalidArgument(format!("random init needs M >= 4, got {m}")));
    }
    let fg = foreground(seed_volume, opts.threshold)?;
    let dims = seed_volume.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_pos = |i: usize| dims.coords(i).map(|c| c as f64);
    let positions: Vec<[f64; 3]> = if m <= fg.len() {
        index::sample(&mut rng, fg.len(), m)
            .into_iter()
            .map(|i| to_pos(fg[i]))
            .collect()
    } else {
        (0..m)
            .map(|_| {
                let p = to_pos(fg[rng.random_range(0..fg.len())]);
                p.map(|c| c + rng.random_range(-0.5..0.5))
            })
            .collect()
    };
    cloud_from_positions(positions, seed_volume, opts)
}

fn lattice(dims: Dims, spacing: f64) -> Vec<[f64; 3]> {
    let n = dims.as_array();
    let axis = |a: usize| -> Vec<f64> {
        let count = ((n[a] as f64 / spacing).floor() as usize).max(1);
        let mid = 0.5 * (n[a] as f64 - 1.0);
        (0..count)
            .map(|i| mid + spacing * (i as f64 - 0.5 * (count as f64 - 1.0)))
            .collect()
    };
    let (xs, ys, zs) = (axis(0), axis(1), axis(2));
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &x in &xs {
        for &y in &ys {
            for &z in &zs {
                out.push([x, y, z]);
            }
        }
    }
    out
}

/// Lattice points (spacing `Δ`) whose nearest voxel is foreground, with `Δ`
/// shrunk from `(|foreground| / m)^(1/3)` until at least `m` points qualify;
/// surplus points are dropped at evenly spaced indices. Returns the points
/// and the final spacing.
pub fn equal_space_positions(m: usize, seed_volume: &ComplexVolume, threshold: f64) -> Result<(Vec<[f64; 3]>, f64)> {
    if m < 1 {
        return Err(Error::InvalidArgument("equal-space init needs M >= 1".into()));
    }
    let fg = foreground(seed_volume, threshold)?;
    let dims = seed_volume.dims;
    let mut is_fg = vec![false; dims.len()];
    for &i in &fg {
        is_fg[i] = true;
    }
    let mut spacing = (fg.len() as f64 / m as f64).cbrt();
    loop {
        let pts: Vec<[f64; 3]> = lattice(dims, spacing)
            .into_iter()
            .filter(|p| is_fg[nearest_voxel(dims, *p)])
            .collect();
        if pts.len() >= m {
            let count = pts.len();
            let chosen = (0..m).map(|i| pts[(i * count) / m]).collect();
            return Ok((chosen, spacing));
        }
        spacing *= 0.98;
        if spacing < 0.05 {
            return Err(Error::InvalidArgument(format!(
                "cannot place {m} lattice points in {} foreground voxels",
                fg.len()
            )));
        }
    }
}

/// Uniform lattice over the foreground with every scale equal to the spacing.
pub fn init_equal_space(m: usize, seed_volume: &ComplexVolume, opts: &InitOptions) -> Result<GaussianCloud> {
    let (positions, spacing) = equal_space_positions(m, seed_volume, opts.threshold)?;
    let dims = seed_volume.dims;
    let scale = (spacing * opts.scale_multiplier).max(MIN_SCALE);
    let points: Vec<GaussianPoint> = positions
        .iter()
        .map(|p| GaussianPoint::isotropic(*p, seed_volume.data[nearest_voxel(dims, *p)], scale))
        .collect();
    GaussianCloud::new(dims, &points)
}

/// Points per level `l = 0..=5`: `4^l · n` with `n = ⌊M / 1365⌋`, remainder
/// added to the finest level.
pub fn level_counts(m: usize) -> Result<[usize; 6]> {
    if m < PYRAMID_UNITS {
        return Err(Error::InvalidArgument(format!(
            "multi-resolution init needs M >= {PYRAMID_UNITS}, got {m}"
        )));
    }
    let n = m / PYRAMID_UNITS;
    let mut counts: [usize; 6] = std::array::from_fn(|l| 4usize.pow(l as u32) * n);
    counts[5] += m - PYRAMID_UNITS * n;
    Ok(counts)
}

/// Readout samples kept per spoke at level `l`: `⌈S / 2^(5-l)⌉`.
pub fn level_samples(samples_per_spoke: usize, level: u32) -> usize {
    samples_per_spoke.div_ceil(1 << (MAX_LEVEL - level))
}

#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub level: u32,
    pub samples_per_spoke: usize,
    pub seed_volume: ComplexVolume,
    pub cloud: GaussianCloud,
    pub scale: f64,
}

/// Six-level pyramid. Level `l` keeps the first `⌈S/2^(5-l)⌉` samples of
/// every spoke, so its seed volume holds only the low spatial frequencies;
/// its points sit on an equal-space lattice of that volume with scale
/// inversely proportional to the retained k-space extent (capped at a
/// quarter of the smallest grid dimension).
pub fn multi_resolution_pyramid(
    m: usize,
    state0: &RadialKSpace,
    coils: &CoilSet,
    weighting: KSpaceWeighting,
    method: NufftMethod,
    opts: &InitOptions,
) -> Result<Vec<PyramidLevel>> {
    let counts = level_counts(m)?;
    let dims = coils.dims();
    let s_full = state0.samples_per_spoke();
    let full_weights = weighting.weights(&state0.trajectory);
    let cap = dims.as_array().into_iter().min().unwrap_or(1) as f64 / 4.0;

    let mut levels: Vec<PyramidLevel> = Vec::with_capacity(6);
    let mut finest_spacing = None;
    for level in (0..=MAX_LEVEL).rev() {
        let keep = level_samples(s_full, level);
        let data = state0.truncate_readout(keep)?;
        let w = full_weights.truncate_readout(s_full, keep);
        let op = Nufft::new(dims, &data.trajectory.k, method)?;
        let per_coil: Vec<Vec<C64>> = (0..data.n_coils).map(|c| data.coil(c).to_vec()).collect();
        let seed_volume = coil_combined_adjoint(&op, &per_coil, coils, Some(&w.weights))?;

        let (positions, spacing) = equal_space_positions(counts[level as usize], &seed_volume, opts.threshold)?;
        let base = *finest_spacing.get_or_insert(spacing);
        let scale = (base * s_full as f64 / keep as f64 * opts.scale_multiplier)
            .min(cap)
            .max(MIN_SCALE);
        let points: Vec<GaussianPoint> = positions
            .iter()
            .map(|p| GaussianPoint::isotropic(*p, seed_volume.data[nearest_voxel(dims, *p)], scale))
            .collect();
        levels.push(PyramidLevel {
            level,
            samples_per_spoke: keep,
            cloud: GaussianCloud::new(dims, &points)?,
            seed_volume,
            scale,
        });
    }
    levels.reverse();
    Ok(levels)
}

/// Concatenation of all pyramid levels, coarsest first.
pub fn init_multi_resolution(
    m: usize,
    state0: &RadialKSpace,
    coils: &CoilSet,
    weighting: KSpaceWeighting,
    method: NufftMethod,
    opts: &InitOptions,
) -> Result<GaussianCloud> {
    let levels = multi_resolution_pyramid(m, state0, coils, weighting, method, opts)?;
    let mut cloud = levels[0].cloud.clone();
    for l in &levels[1..] {
        cloud.extend(&l.cloud)?;
    }
    Ok(cloud)
}
