use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::{check_same, ComplexVolume, Dims, RealVolume, C64};

/// Complex receive sensitivities, one volume per coil.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSet {
    pub maps: Vec<ComplexVolume>,
}

impl CoilSet {
    pub fn new(maps: Vec<ComplexVolume>) -> Result<Self> {
        let Some(first) = maps.first() else {
            return Err(Error::InvalidArgument("coil set needs at least one map".into()));
        };
        for m in &maps {
            check_same(first.dims, m.dims)?;
        }
        Ok(Self { maps })
    }

    /// A single coil with unit sensitivity everywhere.
    pub fn uniform(dims: Dims) -> Self {
        Self {
            maps: vec![ComplexVolume::from_data(dims, vec![C64::new(1.0, 0.0); dims.len()]).unwrap()],
        }
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> Dims {
        self.maps[0].dims
    }

    /// Root-sum-of-squares of the sensitivities.
    pub fn rss(&self) -> RealVolume {
        let dims = self.dims();
        let mut out = RealVolume::zeros(dims);
        for m in &self.maps {
            for (o, v) in out.data.iter_mut().zip(&m.data) {
                *o += v.norm_sqr();
            }
        }
        for o in &mut out.data {
            *o = o.sqrt();
        }
        out
    }
}

/// Broad Gaussian-windowed coil fields centered on the volume boundary with
/// smoothly varying phase. Centers are spread around the z axis; the seed
/// jitters their placement and phase.
pub fn smooth_coil_maps(n_coils: usize, dims: Dims, seed: u64) -> Result<CoilSet> {
    if n_coils < 1 {
        return Err(Error::InvalidArgument("n_coils must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.as_array().map(|v| v as f64);
    let mid = n.map(|v| 0.5 * (v - 1.0));
    let width = 0.6 * n.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut maps = Vec::with_capacity(n_coils);
    for c in 0..n_coils {
        let jitter: f64 = rng.random_range(-0.25..0.25);
        let theta = std::f64::consts::TAU * (c as f64 + jitter) / n_coils as f64;
        let (s, co) = theta.sin_cos();
        // project the ring direction onto the box surface
        let reach = 1.0 / co.abs().max(s.abs());
        let z_off: f64 = if c % 2 == 0 { -0.15 } else { 0.15 } + rng.random_range(-0.05..0.05);
        let center = [
            mid[0] + 0.5 * n[0] * co * reach,
            mid[1] + 0.5 * n[1] * s * reach,
            mid[2] + z_off * n[2],
        ];
        let phase0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let grad: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let map = ComplexVolume::from_fn(dims, |x, y, z| {
            let p = [x as f64, y as f64, z as f64];
            let r2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
            let mag = (-r2 / (2.0 * width * width)).exp();
            let phase = phase0
                + (0..3)
                    .map(|a| grad[a] * (p[a] - mid[a]) / n[a])
                    .sum::<f64>();
            C64::from_polar(mag, phase)
        });
        maps.push(map);
    }
    CoilSet::new(maps)
}
