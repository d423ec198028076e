//! Multi-coil radial k-space simulation with spoke-atomic breathing motion.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{CoilSet, PhantomScene, RadialTrajectory};
use crate::error::{Error, Result};
use crate::nufft::{Nufft, NufftMethod};
use crate::volume::{check_same, Dims, C64};

/// Multi-coil samples, coil-major: `data[(coil * n_spokes + spoke) * samples_per_spoke + i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialKSpace {
    pub trajectory: RadialTrajectory,
    pub n_coils: usize,
    pub data: Vec<C64>,
}

impl RadialKSpace {
    pub fn new(trajectory: RadialTrajectory, n_coils: usize, data: Vec<C64>) -> Result<Self> {
        let expected = n_coils * trajectory.n_samples();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "k-space has {} samples, expected {n_coils} coils x {} spokes x {}",
                data.len(),
                trajectory.n_spokes,
                trajectory.samples_per_spoke
            )));
        }
        Ok(Self {
            trajectory,
            n_coils,
            data,
        })
    }

    pub fn n_spokes(&self) -> usize {
        self.trajectory.n_spokes
    }

    pub fn samples_per_spoke(&self) -> usize {
        self.trajectory.samples_per_spoke
    }

    pub fn coil(&self, c: usize) -> &[C64] {
        let n = self.trajectory.n_samples();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn sample(&self, coil: usize, spoke: usize, i: usize) -> C64 {
        let s = self.samples_per_spoke();
        self.data[(coil * self.n_spokes() + spoke) * s + i]
    }

    /// Per-coil samples of the given spokes, concatenated in spoke order.
    pub fn gather(&self, spokes: &[usize]) -> Vec<Vec<C64>> {
        let s = self.samples_per_spoke();
        (0..self.n_coils)
            .map(|c| {
                let coil = self.coil(c);
                let mut out = Vec::with_capacity(spokes.len() * s);
                for &sp in spokes {
                    out.extend_from_slice(&coil[sp * s..(sp + 1) * s]);
                }
                out
            })
            .collect()
    }

    /// The given spokes, in order, as a new data set.
    pub fn select_spokes(&self, spokes: &[usize]) -> Self {
        let data = self.gather(spokes).concat();
        Self {
            trajectory: self.trajectory.select_spokes(spokes),
            n_coils: self.n_coils,
            data,
        }
    }

    /// First `keep` readout samples of every spoke.
    pub fn truncate_readout(&self, keep: usize) -> Result<Self> {
        let trajectory = self.trajectory.truncate_readout(keep)?;
        let s = self.samples_per_spoke();
        let mut data = Vec::with_capacity(self.n_coils * self.n_spokes() * keep);
        for c in 0..self.n_coils {
            for sp in 0..self.n_spokes() {
                let base = (c * self.n_spokes() + sp) * s;
                data.extend_from_slice(&self.data[base..base + keep]);
            }
        }
        Self::new(trajectory, self.n_coils, data)
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionOptions {
    /// Standard deviation of the real and of the imaginary noise component.
    pub noise_std: f64,
    /// Quantize breathing amplitude to this many levels so spokes sharing a
    /// level share one rendered volume; `None` renders every distinct amplitude.
    pub amplitude_levels: Option<usize>,
    pub method: NufftMethod,
    pub seed: u64,
}

impl Default for AcquisitionOptions {
    fn default() -> Self {
        Self {
            noise_std: 0.0,
            amplitude_levels: Some(64),
            method: NufftMethod::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Acquisition {
    pub kspace: RadialKSpace,
    /// Breathing amplitude the phantom was rendered at, per spoke.
    pub spoke_amplitudes: Vec<f64>,
}

/// Breathing amplitude for each spoke at its acquisition time.
pub fn spoke_amplitudes(scene: &PhantomScene, traj: &RadialTrajectory, levels: Option<usize>) -> Vec<f64> {
    (0..traj.n_spokes)
        .map(|s| {
            if !scene.has_motion() {
                return 0.0;
            }
            let a = scene.amplitude_at(traj.spoke_time(s));
            match levels {
                Some(l) if l >= 2 => (a * (l - 1) as f64).round() / (l - 1) as f64,
                _ => a,
            }
        })
        .collect()
}

pub fn simulate_acquisition(
    scene: &PhantomScene,
    traj: &RadialTrajectory,
    coils: &CoilSet,
    noise_std: f64,
) -> Result<RadialKSpace> {
    let opts = AcquisitionOptions {
        noise_std,
        ..AcquisitionOptions::default()
    };
    Ok(simulate_acquisition_with(scene, traj, coils, &opts)?.kspace)
}

/// Spokes sharing a breathing amplitude are simulated together: render the
/// phantom once, weight by each coil, and transform at those spokes' samples.
pub fn simulate_acquisition_with(
    scene: &PhantomScene,
    traj: &RadialTrajectory,
    coils: &CoilSet,
    opts: &AcquisitionOptions,
) -> Result<Acquisition> {
    scene.validate()?;
    let dims = coils.dims();
    let amps = spoke_amplitudes(scene, traj, opts.amplitude_levels);
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (s, a) in amps.iter().enumerate() {
        groups.entry(a.to_bits()).or_default().push(s);
    }
    let groups: Vec<(f64, Vec<usize>)> = groups
        .into_iter()
        .map(|(bits, spokes)| (f64::from_bits(bits), spokes))
        .collect();

    let results: Vec<Vec<Vec<C64>>> = groups
        .par_iter()
        .map(|(amp, spokes)| simulate_group(scene, *amp, spokes, traj, coils, dims, opts.method))
        .collect::<Result<_>>()?;

    let n_coils = coils.n_coils();
    let sps = traj.samples_per_spoke;
    let mut data = vec![C64::new(0.0, 0.0); n_coils * traj.n_samples()];
    for ((_, spokes), per_coil) in groups.iter().zip(&results) {
        for (c, samples) in per_coil.iter().enumerate() {
            for (g, &sp) in spokes.iter().enumerate() {
                let dst = (c * traj.n_spokes + sp) * sps;
                data[dst..dst + sps].copy_from_slice(&samples[g * sps..(g + 1) * sps]);
            }
        }
    }

    if opts.noise_std > 0.0 {
        let normal = Normal::new(0.0, opts.noise_std)
            .map_err(|e| Error::InvalidArgument(format!("noise std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for v in &mut data {
            *v += C64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }

    Ok(Acquisition {
        kspace: RadialKSpace::new(traj.clone(), n_coils, data)?,
        spoke_amplitudes: amps,
    })
}

fn simulate_group(
    scene: &PhantomScene,
    amplitude: f64,
    spokes: &[usize],
    traj: &RadialTrajectory,
    coils: &CoilSet,
    dims: Dims,
    method: NufftMethod,
) -> Result<Vec<Vec<C64>>> {
    let volume = scene.render(amplitude, dims);
    let ks = traj.gather(spokes);
    let op = Nufft::new(dims, &ks, method)?;
    coils
        .maps
        .iter()
        .map(|map| {
            check_same(map.dims, dims)?;
            let mut weighted = volume.clone();
            for (v, c) in weighted.data.iter_mut().zip(&map.data) {
                *v *= c;
            }
            op.forward(&weighted)
        })
        .collect()
}
