//! Coarse-to-fine DVF upsampling and the trilinear spatial transformer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{check_same, ComplexVolume, Dims, Dvf, RealVolume, C64};

/// Ratio between image and coarse motion grid, per axis.
pub const COARSE_FACTOR: usize = 4;

/// Linear interpolation taps along one axis from `fine` samples onto a grid of
/// `coarse` nodes (cell-centered alignment, border clamped).
fn axis_taps(coarse: usize, fine: usize) -> Vec<(usize, usize, f64)> {
    let ratio = fine as f64 / coarse as f64;
    (0..fine)
        .map(|j| {
            let c = ((j as f64 + 0.5) / ratio - 0.5).clamp(0.0, (coarse - 1) as f64);
            let i0 = (c.floor() as usize).min(coarse - 1);
            let i1 = (i0 + 1).min(coarse - 1);
            (i0, i1, c - i0 as f64)
        })
        .collect()
}

fn check_upsample(coarse: Dims, target: Dims) -> Result<()> {
    let c = coarse.as_array();
    let t = target.as_array();
    if (0..3).any(|a| t[a] != COARSE_FACTOR * c[a]) {
        return Err(Error::ShapeMismatch(format!(
            "target {t:?} is not {COARSE_FACTOR}x the coarse grid {c:?}"
        )));
    }
    Ok(())
}

/// Trilinear upsampling with displacements scaled by the grid ratio.
pub fn upsample_dvf(coarse: &Dvf, target: Dims) -> Result<Dvf> {
    let cd = coarse.dims();
    check_upsample(cd, target)?;
    let taps = [
        axis_taps(cd.nx, target.nx),
        axis_taps(cd.ny, target.ny),
        axis_taps(cd.nz, target.nz),
    ];
    let scale = COARSE_FACTOR as f64;
    let components = std::array::from_fn(|ch| {
        let src = &coarse.components[ch].data;
        let data: Vec<f64> = (0..target.len())
            .into_par_iter()
            .map(|idx| {
                let [x, y, z] = target.coords(idx);
                let (x0, x1, fx) = taps[0][x];
                let (y0, y1, fy) = taps[1][y];
                let (z0, z1, fz) = taps[2][z];
                let at = |a, b, c| src[cd.index(a, b, c)];
                let c00 = at(x0, y0, z0) * (1.0 - fz) + at(x0, y0, z1) * fz;
                let c01 = at(x0, y1, z0) * (1.0 - fz) + at(x0, y1, z1) * fz;
                let c10 = at(x1, y0, z0) * (1.0 - fz) + at(x1, y0, z1) * fz;
                let c11 = at(x1, y1, z0) * (1.0 - fz) + at(x1, y1, z1) * fz;
                let c0 = c00 * (1.0 - fy) + c01 * fy;
                let c1 = c10 * (1.0 - fy) + c11 * fy;
                scale * (c0 * (1.0 - fx) + c1 * fx)
            })
            .collect();
        RealVolume { dims: target, data }
    });
    Ok(Dvf { components })
}

/// Transpose of [`upsample_dvf`]: fine-grid gradient to coarse-grid gradient.
pub fn upsample_dvf_backward(fine_grad: &Dvf, coarse: Dims) -> Result<Dvf> {
    let target = fine_grad.dims();
    check_upsample(coarse, target)?;
    let taps = [
        axis_taps(coarse.nx, target.nx),
        axis_taps(coarse.ny, target.ny),
        axis_taps(coarse.nz, target.nz),
    ];
    let scale = COARSE_FACTOR as f64;
    let components = std::array::from_fn(|ch| {
        let g = &fine_grad.components[ch].data;
        let mut out = vec![0.0; coarse.len()];
        for (idx, gv) in g.iter().enumerate() {
            if *gv == 0.0 {
                continue;
            }
            let [x, y, z] = target.coords(idx);
            let (x0, x1, fx) = taps[0][x];
            let (y0, y1, fy) = taps[1][y];
            let (z0, z1, fz) = taps[2][z];
            let v = scale * gv;
            for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                    for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
                        out[coarse.index(xi, yi, zi)] += v * wx * wy * wz;
                    }
                }
            }
        }
        RealVolume { dims: coarse, data: out }
    });
    Ok(Dvf { components })
}

/// Sample location along one axis: clamped coordinate, lower node, upper
/// node, fraction, and whether the coordinate was inside the grid (so the
/// location derivative is live).
#[inline]
fn locate(p: f64, n: usize) -> (usize, usize, f64, bool) {
    let max = (n - 1) as f64;
    let inside = p > 0.0 && p < max;
    let c = p.clamp(0.0, max);
    let i0 = (c.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64, inside)
}

/// Backward warp: `out(j) = v(j + u(j))`, trilinear, border clamped.
pub fn warp(v: &ComplexVolume, dvf: &Dvf) -> Result<ComplexVolume> {
    let dims = v.dims;
    check_same(dims, dvf.dims())?;
    if dvf.is_zero() {
        return Ok(v.clone());
    }
    let data: Vec<C64> = (0..dims.len())
        .into_par_iter()
        .map(|idx| {
            let c = dims.coords(idx);
            let u = dvf.at(idx);
            let (x0, x1, fx, _) = locate(c[0] as f64 + u[0], dims.nx);
            let (y0, y1, fy, _) = locate(c[1] as f64 + u[1], dims.ny);
            let (z0, z1, fz, _) = locate(c[2] as f64 + u[2], dims.nz);
            let at = |a, b, c| v.data[dims.index(a, b, c)];
            let c00 = at(x0, y0, z0) * (1.0 - fz) + at(x0, y0, z1) * fz;
            let c01 = at(x0, y1, z0) * (1.0 - fz) + at(x0, y1, z1) * fz;
            let c10 = at(x1, y0, z0) * (1.0 - fz) + at(x1, y0, z1) * fz;
            let c11 = at(x1, y1, z0) * (1.0 - fz) + at(x1, y1, z1) * fz;
            let c0 = c00 * (1.0 - fy) + c01 * fy;
            let c1 = c10 * (1.0 - fy) + c11 * fy;
            c0 * (1.0 - fx) + c1 * fx
        })
        .collect();
    ComplexVolume::from_data(dims, data).map(|mut out| {
        out.voxel_size = v.voxel_size;
        out
    })
}

/// Gradients of a real loss through [`warp`], given `upstream = ∂L/∂Re + i ∂L/∂Im`
/// of the output. Returns (∂L/∂v, ∂L/∂u).
pub fn warp_backward(v: &ComplexVolume, dvf: &Dvf, upstream: &ComplexVolume) -> Result<(ComplexVolume, Dvf)> {
    let dims = v.dims;
    check_same(dims, dvf.dims())?;
    check_same(dims, upstream.dims)?;
    // Per-voxel sampling footprint and location derivative, in parallel.
    #[derive(Clone, Copy)]
    struct Sample {
        nodes: [usize; 8],
        w: [f64; 8],
        du: [f64; 3],
    }
    let samples: Vec<Sample> = (0..dims.len())
        .into_par_iter()
        .map(|idx| {
            let c = dims.coords(idx);
            let u = dvf.at(idx);
            let (x0, x1, fx, ix) = locate(c[0] as f64 + u[0], dims.nx);
            let (y0, y1, fy, iy) = locate(c[1] as f64 + u[1], dims.ny);
            let (z0, z1, fz, iz) = locate(c[2] as f64 + u[2], dims.nz);
            let at = |a, b, c| v.data[dims.index(a, b, c)];
            let g = upstream.data[idx];
            let (v000, v001, v010, v011) = (at(x0, y0, z0), at(x0, y0, z1), at(x0, y1, z0), at(x0, y1, z1));
            let (v100, v101, v110, v111) = (at(x1, y0, z0), at(x1, y0, z1), at(x1, y1, z0), at(x1, y1, z1));
            let lerp = |a: C64, b: C64, t: f64| a * (1.0 - t) + b * t;
            // ∂out/∂x, ∂out/∂y, ∂out/∂z of the trilinear interpolant
            let dx = lerp(lerp(v100 - v000, v101 - v001, fz), lerp(v110 - v010, v111 - v011, fz), fy);
            let dy = lerp(lerp(v010 - v000, v011 - v001, fz), lerp(v110 - v100, v111 - v101, fz), fx);
            let dz = lerp(lerp(v001 - v000, v011 - v010, fy), lerp(v101 - v100, v111 - v110, fy), fx);
            let re = |d: C64| g.re * d.re + g.im * d.im;
            let du = [
                if ix { re(dx) } else { 0.0 },
                if iy { re(dy) } else { 0.0 },
                if iz { re(dz) } else { 0.0 },
            ];
            let nodes = [
                dims.index(x0, y0, z0),
                dims.index(x0, y0, z1),
                dims.index(x0, y1, z0),
                dims.index(x0, y1, z1),
                dims.index(x1, y0, z0),
                dims.index(x1, y0, z1),
                dims.index(x1, y1, z0),
                dims.index(x1, y1, z1),
            ];
            let w = [
                (1.0 - fx) * (1.0 - fy) * (1.0 - fz),
                (1.0 - fx) * (1.0 - fy) * fz,
                (1.0 - fx) * fy * (1.0 - fz),
                (1.0 - fx) * fy * fz,
                fx * (1.0 - fy) * (1.0 - fz),
                fx * (1.0 - fy) * fz,
                fx * fy * (1.0 - fz),
                fx * fy * fz,
            ];
            Sample { nodes, w, du }
        })
        .collect();

    let mut dv = ComplexVolume::zeros(dims);
    for (s, g) in samples.iter().zip(&upstream.data) {
        for (n, w) in s.nodes.iter().zip(&s.w) {
            dv.data[*n] += g * w;
        }
    }
    let mut du = Dvf::zeros(dims);
    for (idx, s) in samples.iter().enumerate() {
        for a in 0..3 {
            du.components[a].data[idx] = s.du[a];
        }
    }
    Ok((dv, du))
}
