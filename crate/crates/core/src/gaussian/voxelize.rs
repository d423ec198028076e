//! Accumulate Gaussians onto the voxel grid and back-propagate to their parameters.
//!
//! A Gaussian contributes to voxel `j` when `j - p`, expressed in the
//! Gaussian's principal frame, lies within three scales along every axis.

use rayon::prelude::*;

use super::point::{normalize_quaternion, quaternion_gradient, rotation_matrix, CloudGradient, GaussianCloud};
use crate::error::{Error, Result};
use crate::volume::{check_same, ComplexVolume, Dims, C64};

pub const SUPPORT_SIGMAS: f64 = 3.0;

#[derive(Clone, Copy, Debug)]
struct Footprint {
    r: [[f64; 3]; 3],
    inv_s: [f64; 3],
    lo: [usize; 3],
    /// Exclusive.
    hi: [usize; 3],
}

impl Footprint {
    fn is_empty(&self) -> bool {
        (0..3).any(|a| self.lo[a] >= self.hi[a])
    }

    /// Support of the z-row through `(dx, dy)` (offsets from the center):
    /// the inclusive `z` range inside the footprint plus the principal-frame
    /// offset at `dz = 0` and its rate per unit `z`, both scaled by `1/s`.
    #[inline]
    fn z_run(&self, dx: f64, dy: f64, pz: f64) -> Option<(usize, usize, [f64; 3], [f64; 3])> {
        let (mut lo, mut hi) = (self.lo[2] as f64 - pz, (self.hi[2] - 1) as f64 - pz);
        let mut c = [0.0; 3];
        let mut r = [0.0; 3];
        for a in 0..3 {
            c[a] = (self.r[0][a] * dx + self.r[1][a] * dy) * self.inv_s[a];
            r[a] = self.r[2][a] * self.inv_s[a];
            // |c + r dz| <= SUPPORT_SIGMAS
            if r[a] == 0.0 {
                if c[a].abs() > SUPPORT_SIGMAS {
                    return None;
                }
                continue;
            }
            let t0 = (-SUPPORT_SIGMAS - c[a]) / r[a];
            let t1 = (SUPPORT_SIGMAS - c[a]) / r[a];
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
        let z0 = (pz + lo).ceil().max(self.lo[2] as f64);
        let z1 = (pz + hi).floor().min((self.hi[2] - 1) as f64);
        if z1 < z0 {
            return None;
        }
        Some((z0 as usize, z1 as usize, c, r))
    }
}

/// Gaussian weights along a z-run: with `u(dz) = c + r dz`, consecutive
/// values of `exp(-|u|²/2)` differ by a ratio that itself changes by a
/// constant factor. Returns the first weight, the first ratio and that factor.
#[inline]
fn run_recurrence(c: [f64; 3], r: [f64; 3], dz0: f64) -> (f64, f64, f64) {
    let a = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
    let b = c[0] * r[0] + c[1] * r[1] + c[2] * r[2];
    let cc = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let w0 = (-0.5 * (a + 2.0 * b * dz0 + cc * dz0 * dz0)).exp();
    let ratio = (-b - cc * dz0 - 0.5 * cc).exp();
    (w0, ratio, (-cc).exp())
}

fn footprint(cloud: &GaussianCloud, i: usize) -> Result<Footprint> {
    let (q, _) = normalize_quaternion(cloud.rotations[i]).ok_or(Error::ZeroQuaternion(i))?;
    let r = rotation_matrix(q);
    let s = cloud.log_scales[i].map(f64::exp);
    let p = cloud.positions[i];
    let n = cloud.dims.as_array();
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for ax in 0..3 {
        let half = SUPPORT_SIGMAS * (0..3).map(|a| r[ax][a].abs() * s[a]).sum::<f64>();
        let a = (p[ax] - half).ceil().max(0.0);
        let b = (p[ax] + half).floor().min(n[ax] as f64 - 1.0);
        if b < a || !a.is_finite() || !b.is_finite() {
            return Ok(Footprint { r, inv_s: s.map(|v| 1.0 / v), lo: [0; 3], hi: [0; 3] });
        }
        lo[ax] = a as usize;
        hi[ax] = b as usize + 1;
    }
    Ok(Footprint { r, inv_s: s.map(|v| 1.0 / v), lo, hi })
}

fn footprints(cloud: &GaussianCloud) -> Result<Vec<Footprint>> {
    (0..cloud.len()).into_par_iter().map(|i| footprint(cloud, i)).collect()
}

/// `x_j = Σ_i ρ_i exp(-½ (j - p_i)ᵀ Σ_i⁻¹ (j - p_i))` over each Gaussian's support.
pub fn voxelize(cloud: &GaussianCloud) -> Result<ComplexVolume> {
    let dims = cloud.dims;
    let fps = footprints(cloud)?;
    let mut planes: Vec<Vec<u32>> = vec![Vec::new(); dims.nx];
    for (i, f) in fps.iter().enumerate() {
        if !f.is_empty() {
            for x in f.lo[0]..f.hi[0] {
                planes[x].push(i as u32);
            }
        }
    }
    let mut out = ComplexVolume::zeros(dims);
    let plane = dims.ny * dims.nz;
    // Each x plane is written by one task, in Gaussian index order.
    out.data
        .par_chunks_mut(plane)
        .zip(planes.par_iter())
        .enumerate()
        .for_each(|(x, (dst, list))| {
            for &i in list {
                let i = i as usize;
                let f = &fps[i];
                let p = cloud.positions[i];
                let rho = cloud.rho[i];
                let dx = x as f64 - p[0];
                for y in f.lo[1]..f.hi[1] {
                    let dy = y as f64 - p[1];
                    let Some((z0, z1, c, r)) = f.z_run(dx, dy, p[2]) else { continue };
                    let row = y * dims.nz;
                    let (mut w, mut ratio, step) = run_recurrence(c, r, z0 as f64 - p[2]);
                    for v in &mut dst[row + z0..=row + z1] {
                        *v += rho * w;
                        w *= ratio;
                        ratio *= step;
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of a real loss given `upstream = ∂L/∂Re x + i ∂L/∂Im x`.
pub fn voxelize_backward(cloud: &GaussianCloud, upstream: &ComplexVolume) -> Result<CloudGradient> {
    check_same(cloud.dims, upstream.dims)?;
    let dims: Dims = cloud.dims;
    let fps = footprints(cloud)?;
    let per_point: Vec<(C64, [f64; 3], [f64; 4])> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let f = &fps[i];
            if f.is_empty() {
                return (C64::new(0.0, 0.0), [0.0; 3], [0.0; 4]);
            }
            let p = cloud.positions[i];
            let rho = cloud.rho[i];
            let mut d_rho = C64::new(0.0, 0.0);
            let mut d_l = [0.0; 3];
            let mut d_r = [[0.0; 3]; 3];
            for x in f.lo[0]..f.hi[0] {
                let dx = x as f64 - p[0];
                for y in f.lo[1]..f.hi[1] {
                    let dy = y as f64 - p[1];
                    let Some((z0, z1, c, r)) = f.z_run(dx, dy, p[2]) else { continue };
                    let base = dims.index(x, y, 0);
                    let dz0 = z0 as f64 - p[2];
                    let (mut w, mut ratio, step) = run_recurrence(c, r, dz0);
                    // Σ dw·u and Σ dw·u·dz over the run; dx and dy are constant.
                    let mut su = [0.0; 3];
                    let mut suz = [0.0; 3];
                    for (k, g) in upstream.data[base + z0..=base + z1].iter().enumerate() {
                        let dz = dz0 + k as f64;
                        let u = [c[0] + r[0] * dz, c[1] + r[1] * dz, c[2] + r[2] * dz];
                        d_rho += g * w;
                        let dw = (g.re * rho.re + g.im * rho.im) * w;
                        for a in 0..3 {
                            let du = dw * u[a];
                            d_l[a] += du * u[a];
                            su[a] += du;
                            suz[a] += du * dz;
                        }
                        w *= ratio;
                        ratio *= step;
                    }
                    for a in 0..3 {
                        let k = -f.inv_s[a];
                        d_r[0][a] += k * su[a] * dx;
                        d_r[1][a] += k * su[a] * dy;
                        d_r[2][a] += k * suz[a];
                    }
                }
            }
            (d_rho, d_l, quaternion_gradient(cloud.rotations[i], &d_r))
        })
        .collect();
    let mut grad = CloudGradient::zeros(cloud.len());
    for (i, (r, l, q)) in per_point.into_iter().enumerate() {
        grad.rho[i] = r;
        grad.log_scales[i] = l;
        grad.rotations[i] = q;
    }
    Ok(grad)
}

/// Number of voxels inside each Gaussian's support.
pub fn support_sizes(cloud: &GaussianCloud) -> Result<Vec<usize>> {
    let fps = footprints(cloud)?;
    Ok((0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let f = &fps[i];
            if f.is_empty() {
                return 0;
            }
            let p = cloud.positions[i];
            let mut count = 0;
            for x in f.lo[0]..f.hi[0] {
                for y in f.lo[1]..f.hi[1] {
                    if let Some((z0, z1, _, _)) = f.z_run(x as f64 - p[0], y as f64 - p[1], p[2]) {
                        count += z1 - z0 + 1;
                    }
                }
            }
            count
        })
        .collect())
}
