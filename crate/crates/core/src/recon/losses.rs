//! Regularizers: image total variation and the two DVF smoothness terms.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{check_same, ComplexVolume, Dims, Dvf, C64};

pub const TV_EPS: f64 = 1e-8;
pub const PHASE_EPS: f64 = 1e-8;

/// Forward differences of one real channel at voxel `idx` (zero past the
/// upper border).
#[inline]
fn forward_diffs(dims: Dims, idx: usize, f: impl Fn(usize) -> f64) -> [f64; 3] {
    let [x, y, z] = dims.coords(idx);
    let v = f(idx);
    let step = [dims.ny * dims.nz, dims.nz, 1];
    let inside = [x + 1 < dims.nx, y + 1 < dims.ny, z + 1 < dims.nz];
    std::array::from_fn(|d| if inside[d] { f(idx + step[d]) - v } else { 0.0 })
}

/// Smoothed isotropic TV of the real and imaginary parts, summed and divided
/// by the voxel count. Returns the loss and `∂L/∂Re + i ∂L/∂Im`.
pub fn tv_loss(v: &ComplexVolume) -> Result<(f64, ComplexVolume)> {
    let dims = v.dims;
    dims.validate()?;
    let n = dims.len();
    let parts: [fn(&C64) -> f64; 2] = [|c| c.re, |c| c.im];
    // Per voxel and part: the differences scaled by 1/T, and T itself.
    let terms: Vec<[([f64; 3], f64); 2]> = (0..n)
        .into_par_iter()
        .map(|idx| {
            parts.map(|p| {
                let d = forward_diffs(dims, idx, |i| p(&v.data[i]));
                let t = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + TV_EPS).sqrt();
                (d.map(|x| x / t), t)
            })
        })
        .collect();
    let loss = terms.iter().map(|t| t[0].1 + t[1].1).sum::<f64>() / n as f64;
    let step = [dims.ny * dims.nz, dims.nz, 1];
    let scale = 1.0 / n as f64;
    let grad: Vec<C64> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let c = dims.coords(idx);
            let mut g = [0.0; 2];
            for (p, gp) in g.iter_mut().enumerate() {
                let own = terms[idx][p].0;
                *gp -= own[0] + own[1] + own[2];
                for d in 0..3 {
                    if c[d] > 0 {
                        *gp += terms[idx - step[d]][p].0[d];
                    }
                }
            }
            C64::new(g[0] * scale, g[1] * scale)
        })
        .collect();
    Ok((loss, ComplexVolume::from_data(dims, grad)?))
}

/// `(1/|Ω|) Σ_t Σ_r Σ_d ‖u_t(r + e_d) − u_t(r)‖²` over the coarse fields.
pub fn spatial_smoothness_loss(dvfs: &[Dvf]) -> Result<(f64, Vec<Dvf>)> {
    let Some(first) = dvfs.first() else {
        return Ok((0.0, Vec::new()));
    };
    let dims = first.dims();
    for u in dvfs {
        check_same(dims, u.dims())?;
    }
    let n = dims.len() as f64;
    let step = [dims.ny * dims.nz, dims.nz, 1];
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(dvfs.len());
    for u in dvfs {
        let mut g = Dvf::zeros(dims);
        for (comp, gc) in u.components.iter().zip(g.components.iter_mut()) {
            let vals = &comp.data;
            let diffs: Vec<[f64; 3]> = (0..dims.len())
                .into_par_iter()
                .map(|idx| forward_diffs(dims, idx, |i| vals[i]))
                .collect();
            loss += diffs.iter().map(|d| d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sum::<f64>() / n;
            gc.data = (0..dims.len())
                .into_par_iter()
                .map(|idx| {
                    let c = dims.coords(idx);
                    let own = diffs[idx];
                    let mut s = -(own[0] + own[1] + own[2]);
                    for d in 0..3 {
                        if c[d] > 0 {
                            s += diffs[idx - step[d]][d];
                        }
                    }
                    2.0 * s / n
                })
                .collect();
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Gaussian affinity between states from their amplitudes, with `σ` the
/// population standard deviation of `s` and a zero diagonal.
pub fn phase_weights(s: &[f64]) -> Vec<Vec<f64>> {
    let n = s.len();
    let mean = s.iter().sum::<f64>() / n.max(1) as f64;
    let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(1) as f64;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        (-(s[i] - s[j]).powi(2) / (2.0 * var + PHASE_EPS)).exp()
                    }
                })
                .collect()
        })
        .collect()
}

/// `Σ_ij w_ij d²(u_i, u_j) / (Σ_ij w_ij + ε)`, with `d²` the mean over grid
/// points of the squared displacement difference. Zero for fewer than two states.
pub fn phase_smoothness_loss(dvfs: &[Dvf], s: &[f64]) -> Result<(f64, Vec<Dvf>)> {
    if dvfs.len() != s.len() {
        return Err(Error::ShapeMismatch(format!("{} DVFs for {} amplitudes", dvfs.len(), s.len())));
    }
    let n_states = dvfs.len();
    let Some(first) = dvfs.first() else {
        return Ok((0.0, Vec::new()));
    };
    let dims = first.dims();
    for u in dvfs {
        check_same(dims, u.dims())?;
    }
    let mut grads = vec![Dvf::zeros(dims); n_states];
    if n_states < 2 {
        return Ok((0.0, grads));
    }
    let w = phase_weights(s);
    let norm = w.iter().flatten().sum::<f64>() + PHASE_EPS;
    let n = dims.len() as f64;
    let mut loss = 0.0;
    for i in 0..n_states {
        for j in 0..n_states {
            if i == j || w[i][j] == 0.0 {
                continue;
            }
            let mut d2 = 0.0;
            for c in 0..3 {
                let (a, b) = (&dvfs[i].components[c].data, &dvfs[j].components[c].data);
                d2 += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            }
            loss += w[i][j] * d2 / n;
            // ∂/∂u_i and ∂/∂u_j of w_ij d²_ij
            let k = 2.0 * w[i][j] / (n * norm);
            for c in 0..3 {
                for r in 0..dims.len() {
                    let diff = dvfs[i].components[c].data[r] - dvfs[j].components[c].data[r];
                    grads[i].components[c].data[r] += k * diff;
                    grads[j].components[c].data[r] -= k * diff;
                }
            }
        }
    }
    Ok((loss / norm, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::RealVolume;

    #[test]
    fn constant_volume_has_negligible_tv() {
        let v = ComplexVolume::from_fn(Dims::cube(5), |_, _, _| C64::new(3.0, -1.0));
        let (l, g) = tv_loss(&v).unwrap();
        assert!(l < 1e-3);
        assert!(g.data.iter().all(|x| x.norm() < 1e-12));
    }

    #[test]
    fn ramp_spatial_loss_counts_x_differences() {
        let dims = Dims::new(4, 3, 5);
        let mut u = Dvf::zeros(dims);
        u.components[0] = RealVolume::from_fn(dims, |x, _, _| x as f64);
        let (l, _) = spatial_smoothness_loss(&[u]).unwrap();
        // one unit difference per x-adjacent pair
        let pairs = (dims.nx - 1) * dims.ny * dims.nz;
        assert!((l - pairs as f64 / dims.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn two_equal_amplitude_states() {
        let dims = Dims::cube(3);
        let a = Dvf::zeros(dims);
        // |Δ|² = 4 at every point: d² = 4
        let b = Dvf::constant(dims, [2.0, 0.0, 0.0]);
        let (l, _) = phase_smoothness_loss(&[a, b], &[0.5, 0.5]).unwrap();
        assert!((l - 8.0 / (2.0 + PHASE_EPS)).abs() < 1e-12);
        let w = phase_weights(&[0.5, 0.5]);
        assert_eq!(w, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn single_state_phase_loss_is_zero() {
        let u = Dvf::constant(Dims::cube(2), [1.0, 2.0, 3.0]);
        assert_eq!(phase_smoothness_loss(&[u], &[0.3]).unwrap().0, 0.0);
    }
}
