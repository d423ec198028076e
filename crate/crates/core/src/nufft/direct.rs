//! Reference non-uniform DFT by direct summation.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims, C64};

/// Per-axis phase factors `exp(sign * 2πi k (j - c))` for `j in 0..n`.
fn axis_phases(k: f64, n: usize, center: f64, sign: f64) -> Vec<C64> {
    (0..n)
        .map(|j| C64::from_polar(1.0, sign * 2.0 * PI * k * (j as f64 - center)))
        .collect()
}

/// `s(k) = Σ_j v_j exp(-2πi k·(j - c))`.
pub fn forward_direct(v: &ComplexVolume, ks: &[[f64; 3]]) -> Result<Vec<C64>> {
    super::check_k_range(ks)?;
    let d = v.dims;
    let c = d.center();
    Ok(ks
        .par_iter()
        .map(|k| {
            let ex = axis_phases(k[0], d.nx, c[0], -1.0);
            let ey = axis_phases(k[1], d.ny, c[1], -1.0);
            let ez = axis_phases(k[2], d.nz, c[2], -1.0);
            let mut acc = C64::new(0.0, 0.0);
            for (x, px) in ex.iter().enumerate() {
                let mut acc_y = C64::new(0.0, 0.0);
                for (y, py) in ey.iter().enumerate() {
                    let row = &v.data[d.index(x, y, 0)..d.index(x, y, 0) + d.nz];
                    let s: C64 = row.iter().zip(&ez).map(|(a, b)| a * b).sum();
                    acc_y += py * s;
                }
                acc += px * acc_y;
            }
            acc
        })
        .collect())
}

/// `v_j = Σ_k s_k exp(+2πi k·(j - c))`, the exact adjoint of [`forward_direct`].
pub fn adjoint_direct(samples: &[C64], ks: &[[f64; 3]], dims: Dims) -> Result<ComplexVolume> {
    if samples.len() != ks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples for {} k-space locations",
            samples.len(),
            ks.len()
        )));
    }
    super::check_k_range(ks)?;
    let c = dims.center();
    let ey: Vec<Vec<C64>> = ks
        .iter()
        .map(|k| axis_phases(k[1], dims.ny, c[1], 1.0))
        .collect();
    let ez: Vec<Vec<C64>> = ks
        .iter()
        .map(|k| axis_phases(k[2], dims.nz, c[2], 1.0))
        .collect();
    let plane = dims.ny * dims.nz;
    let mut data = vec![C64::new(0.0, 0.0); dims.len()];
    data.par_chunks_mut(plane).enumerate().for_each(|(x, out)| {
        for (s, k) in ks.iter().enumerate() {
            let px = samples[s] * C64::from_polar(1.0, 2.0 * PI * k[0] * (x as f64 - c[0]));
            for (y, py) in ey[s].iter().enumerate() {
                let a = px * py;
                let row = &mut out[y * dims.nz..(y + 1) * dims.nz];
                for (o, pz) in row.iter_mut().zip(&ez[s]) {
                    *o += a * pz;
                }
            }
        }
    });
    ComplexVolume::from_data(dims, data)
}
