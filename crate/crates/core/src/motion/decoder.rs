//! Deep-image-prior style conv decoder: a frozen random latent mapped to the
//! coarse motion bases by learnable 3D convolutions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Dims;

pub const LATENT_CHANNELS: usize = 16;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
/// Conv widths of the four resolution groups, coarsest first.
pub const GROUP_CHANNELS: [usize; 4] = [64, 32, 16, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layer {
    /// Zero-padded "same" convolution with odd kernel `k`.
    Conv { out_channels: usize, kernel: usize, bias: bool },
    InstanceNorm,
    LeakyRelu,
    /// Nearest-neighbour, factor 2 along every axis.
    Upsample,
    Tanh,
}

/// Architecture plus the frozen latent and learnable weights `θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvDecoder {
    pub layers: Vec<Layer>,
    pub latent_dims: Dims,
    pub latent: Vec<f64>,
    pub theta: Vec<f64>,
    /// Output multiplier applied after the last layer.
    pub output_scale: f64,
}

/// Shape of the tensor between layers.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Shape {
    c: usize,
    d: Dims,
}

impl Shape {
    fn len(&self) -> usize {
        self.c * self.d.len()
    }
}

/// Per-layer activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct DecoderTape {
    /// Input to every layer, then the pre-scale output.
    activations: Vec<Vec<f64>>,
    shapes: Vec<Shape>,
    /// Per-channel inverse std for each InstanceNorm layer (empty otherwise).
    inv_std: Vec<Vec<f64>>,
}

impl DecoderTape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Upsampling stages so that the latent `output / 2^stages` is integral and
/// at least 8 on every axis, at most 3 (the full table). Small grids get no
/// upsampling and a latent at the output size.
pub fn upsampling_stages(output: Dims) -> usize {
    let n = output.as_array();
    (0..=3)
        .rev()
        .find(|&s| n.iter().all(|&v| v % (1 << s) == 0 && v >> s >= 8))
        .unwrap_or(0)
}

impl ConvDecoder {
    /// Table-style decoder: two conv-norm-LeakyReLU blocks per resolution,
    /// channel groups 64/32/16/8 ending at the output resolution, then a
    /// 1x1x1 conv and tanh.
    pub fn table1(output: Dims, out_channels: usize, max_displacement: f64, seed: u64) -> Result<Self> {
        let stages = upsampling_stages(output);
        let latent_dims = Dims::from_array(output.as_array().map(|v| v >> stages));
        let first_group = GROUP_CHANNELS.len() - 1 - stages;
        let mut layers = Vec::new();
        for (g, &ch) in GROUP_CHANNELS.iter().enumerate().skip(first_group) {
            if g > first_group {
                layers.push(Layer::Upsample);
            }
            for _ in 0..2 {
                layers.push(Layer::Conv { out_channels: ch, kernel: 3, bias: false });
                layers.push(Layer::InstanceNorm);
                layers.push(Layer::LeakyRelu);
            }
        }
        layers.push(Layer::Conv { out_channels, kernel: 1, bias: true });
        layers.push(Layer::Tanh);
        Self::new(layers, latent_dims, max_displacement, seed)
    }

    /// One convolution straight from the latent, no nonlinearity.
    pub fn single_conv(output: Dims, out_channels: usize, kernel: usize, seed: u64) -> Result<Self> {
        Self::new(
            vec![Layer::Conv { out_channels, kernel, bias: true }],
            output,
            1.0,
            seed,
        )
    }

    /// Latent ~ U(0, 1); conv weights Kaiming-uniform for the LeakyReLU
    /// slope, except a final conv, which starts near zero so the initial
    /// deformation is negligible.
    pub fn new(layers: Vec<Layer>, latent_dims: Dims, output_scale: f64, seed: u64) -> Result<Self> {
        if latent_dims.is_empty() {
            return Err(Error::InvalidArgument("latent dims must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let latent: Vec<f64> = (0..LATENT_CHANNELS * latent_dims.len())
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let last_conv = layers.iter().rposition(|l| matches!(l, Layer::Conv { .. }));
        let mut theta = Vec::new();
        let mut c = LATENT_CHANNELS;
        for (li, layer) in layers.iter().enumerate() {
            if let Layer::Conv { out_channels, kernel, bias } = *layer {
                if kernel % 2 == 0 {
                    return Err(Error::InvalidArgument("conv kernels must be odd".into()));
                }
                let fan_in = (c * kernel * kernel * kernel) as f64;
                let mut bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
                if Some(li) == last_conv && layers.len() > 1 {
                    bound *= 1e-3;
                }
                for _ in 0..out_channels * c * kernel * kernel * kernel {
                    theta.push(rng.random_range(-bound..bound));
                }
                if bias {
                    theta.extend(std::iter::repeat_n(0.0, out_channels));
                }
                c = out_channels;
            }
        }
        Ok(Self {
            layers,
            latent_dims,
            latent,
            theta,
            output_scale,
        })
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn out_channels(&self) -> usize {
        self.shapes().last().map(|s| s.c).unwrap_or(LATENT_CHANNELS)
    }

    pub fn output_dims(&self) -> Dims {
        self.shapes().last().map(|s| s.d).unwrap_or(self.latent_dims)
    }

    fn shapes(&self) -> Vec<Shape> {
        let mut s = Shape { c: LATENT_CHANNELS, d: self.latent_dims };
        let mut out = vec![s];
        for layer in &self.layers {
            match *layer {
                Layer::Conv { out_channels, .. } => s.c = out_channels,
                Layer::Upsample => s.d = Dims::from_array(s.d.as_array().map(|v| 2 * v)),
                _ => {}
            }
            out.push(s);
        }
        out
    }

    /// Output tensor, channel-major (`c`, then x, y, z), and the tape.
    pub fn forward(&self) -> (Vec<f64>, DecoderTape) {
        let shapes = self.shapes();
        let mut acts = vec![self.latent.clone()];
        let mut inv_std = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for (li, layer) in self.layers.iter().enumerate() {
            let x = &acts[li];
            let (sin, sout) = (shapes[li], shapes[li + 1]);
            let mut istd = Vec::new();
            let y = match *layer {
                Layer::Conv { out_channels, kernel, bias } => {
                    let nw = out_channels * sin.c * kernel.pow(3);
                    let w = &self.theta[offset..offset + nw];
                    let b = bias.then(|| &self.theta[offset + nw..offset + nw + out_channels]);
                    offset += nw + if bias { out_channels } else { 0 };
                    conv_forward(x, sin, out_channels, kernel, w, b)
                }
                Layer::InstanceNorm => {
                    let (y, s) = norm_forward(x, sin);
                    istd = s;
                    y
                }
                Layer::LeakyRelu => x.iter().map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v }).collect(),
                Layer::Upsample => upsample_forward(x, sin, sout),
                Layer::Tanh => x.iter().map(|v| v.tanh()).collect(),
            };
            inv_std.push(istd);
            acts.push(y);
        }
        let out = acts
            .last()
            .map(|a| a.iter().map(|v| v * self.output_scale).collect())
            .unwrap_or_default();
        (out, DecoderTape { activations: acts, shapes, inv_std })
    }

    /// `∂L/∂θ` from `∂L/∂output`. The latent is an input, not a parameter,
    /// so no gradient is produced for it.
    pub fn backward(&self, tape: &DecoderTape, upstream: &[f64]) -> Result<Vec<f64>> {
        let out_len = tape.shapes.last().map(Shape::len).unwrap_or(0);
        if upstream.len() != out_len {
            return Err(Error::ShapeMismatch(format!(
                "decoder upstream has {} values, output has {out_len}",
                upstream.len()
            )));
        }
        // Parameter offsets of every conv layer.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for (li, layer) in self.layers.iter().enumerate() {
            offsets.push(off);
            if let Layer::Conv { out_channels, kernel, bias } = *layer {
                off += out_channels * tape.shapes[li].c * kernel.pow(3) + if bias { out_channels } else { 0 };
            }
        }
        let mut grad = vec![0.0; self.theta.len()];
        let mut g: Vec<f64> = upstream.iter().map(|v| v * self.output_scale).collect();
        for li in (0..self.layers.len()).rev() {
            let x = &tape.activations[li];
            let y = &tape.activations[li + 1];
            let (sin, sout) = (tape.shapes[li], tape.shapes[li + 1]);
            g = match self.layers[li] {
                Layer::Conv { out_channels, kernel, bias } => {
                    let nw = out_channels * sin.c * kernel.pow(3);
                    let o = offsets[li];
                    let w = &self.theta[o..o + nw];
                    let (gw, rest) = grad[o..].split_at_mut(nw);
                    conv_weight_grad(x, &g, sin, out_channels, kernel, gw);
                    if bias {
                        let vox = sout.d.len();
                        for (oc, gb) in rest[..out_channels].iter_mut().enumerate() {
                            *gb = g[oc * vox..(oc + 1) * vox].iter().sum();
                        }
                    }
                    if li == 0 {
                        // input is the frozen latent
                        Vec::new()
                    } else {
                        conv_input_grad(&g, sin, out_channels, kernel, w)
                    }
                }
                Layer::InstanceNorm => norm_backward(y, &g, &tape.inv_std[li], sin),
                Layer::LeakyRelu => x
                    .iter()
                    .zip(&g)
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { LEAKY_SLOPE * gv })
                    .collect(),
                Layer::Upsample => upsample_backward(&g, sin, sout),
                Layer::Tanh => y.iter().zip(&g).map(|(&yv, &gv)| gv * (1.0 - yv * yv)).collect(),
            };
        }
        Ok(grad)
    }
}

/// Offset range of valid output positions for a 1D kernel tap `t` (0-based,
/// padding `p`): output `o` reads input `o + t - p`.
#[inline]
fn tap_range(n: usize, t: usize, p: usize) -> (usize, usize) {
    let lo = p.saturating_sub(t);
    let hi = (n + p).saturating_sub(t).min(n);
    (lo, hi.max(lo))
}

fn conv_forward(x: &[f64], s: Shape, cout: usize, k: usize, w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let d = s.d;
    let vox = d.len();
    let p = k / 2;
    let k3 = k * k * k;
    let mut out = vec![0.0; cout * vox];
    out.par_chunks_mut(vox).enumerate().for_each(|(o, dst)| {
        if let Some(b) = b {
            dst.iter_mut().for_each(|v| *v = b[o]);
        }
        for i in 0..s.c {
            let src = &x[i * vox..(i + 1) * vox];
            for t in 0..k3 {
                let wt = w[(o * s.c + i) * k3 + t];
                if wt == 0.0 {
                    continue;
                }
                let (tx, ty, tz) = (t / (k * k), (t / k) % k, t % k);
                let (x0, x1) = tap_range(d.nx, tx, p);
                let (y0, y1) = tap_range(d.ny, ty, p);
                let (z0, z1) = tap_range(d.nz, tz, p);
                for xo in x0..x1 {
                    let xi = xo + tx - p;
                    for yo in y0..y1 {
                        let yi = yo + ty - p;
                        let ob = d.index(xo, yo, 0);
                        let ib = d.index(xi, yi, 0) + tz;
                        for zo in z0..z1 {
                            dst[ob + zo] += wt * src[ib + zo - p];
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_weight_grad(x: &[f64], g: &[f64], s: Shape, cout: usize, k: usize, gw: &mut [f64]) {
    let d = s.d;
    let vox = d.len();
    let p = k / 2;
    let k3 = k * k * k;
    gw.par_chunks_mut(s.c * k3).enumerate().for_each(|(o, gwo)| {
        let go = &g[o * vox..(o + 1) * vox];
        for i in 0..s.c {
            let src = &x[i * vox..(i + 1) * vox];
            for t in 0..k3 {
                let (tx, ty, tz) = (t / (k * k), (t / k) % k, t % k);
                let (x0, x1) = tap_range(d.nx, tx, p);
                let (y0, y1) = tap_range(d.ny, ty, p);
                let (z0, z1) = tap_range(d.nz, tz, p);
                let mut acc = 0.0;
                for xo in x0..x1 {
                    let xi = xo + tx - p;
                    for yo in y0..y1 {
                        let yi = yo + ty - p;
                        let ob = d.index(xo, yo, 0);
                        let ib = d.index(xi, yi, 0) + tz;
                        for zo in z0..z1 {
                            acc += go[ob + zo] * src[ib + zo - p];
                        }
                    }
                }
                gwo[i * k3 + t] = acc;
            }
        }
    });
    debug_assert_eq!(gw.len(), cout * s.c * k3);
}

fn conv_input_grad(g: &[f64], s: Shape, cout: usize, k: usize, w: &[f64]) -> Vec<f64> {
    let d = s.d;
    let vox = d.len();
    let p = k / 2;
    let k3 = k * k * k;
    let mut out = vec![0.0; s.c * vox];
    out.par_chunks_mut(vox).enumerate().for_each(|(i, dst)| {
        for o in 0..cout {
            let go = &g[o * vox..(o + 1) * vox];
            for t in 0..k3 {
                let wt = w[(o * s.c + i) * k3 + t];
                if wt == 0.0 {
                    continue;
                }
                let (tx, ty, tz) = (t / (k * k), (t / k) % k, t % k);
                let (x0, x1) = tap_range(d.nx, tx, p);
                let (y0, y1) = tap_range(d.ny, ty, p);
                let (z0, z1) = tap_range(d.nz, tz, p);
                for xo in x0..x1 {
                    let xi = xo + tx - p;
                    for yo in y0..y1 {
                        let yi = yo + ty - p;
                        let ob = d.index(xo, yo, 0);
                        let ib = d.index(xi, yi, 0) + tz;
                        for zo in z0..z1 {
                            dst[ib + zo - p] += wt * go[ob + zo];
                        }
                    }
                }
            }
        }
    });
    out
}

fn norm_forward(x: &[f64], s: Shape) -> (Vec<f64>, Vec<f64>) {
    let vox = s.d.len();
    let n = vox as f64;
    let mut out = vec![0.0; x.len()];
    let inv: Vec<f64> = out
        .par_chunks_mut(vox)
        .zip(x.par_chunks(vox))
        .map(|(dst, src)| {
            let mean = src.iter().sum::<f64>() / n;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for (d, v) in dst.iter_mut().zip(src) {
                *d = (v - mean) * inv;
            }
            inv
        })
        .collect();
    (out, inv)
}

fn norm_backward(y: &[f64], g: &[f64], inv_std: &[f64], s: Shape) -> Vec<f64> {
    let vox = s.d.len();
    let n = vox as f64;
    let mut out = vec![0.0; y.len()];
    out.par_chunks_mut(vox).enumerate().for_each(|(c, dst)| {
        let yc = &y[c * vox..(c + 1) * vox];
        let gc = &g[c * vox..(c + 1) * vox];
        let mean_g = gc.iter().sum::<f64>() / n;
        let mean_gy = gc.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / n;
        for ((d, gv), yv) in dst.iter_mut().zip(gc).zip(yc) {
            *d = inv_std[c] * (gv - mean_g - yv * mean_gy);
        }
    });
    out
}

fn upsample_forward(x: &[f64], sin: Shape, sout: Shape) -> Vec<f64> {
    let (di, dout) = (sin.d, sout.d);
    let mut out = vec![0.0; sout.len()];
    out.par_chunks_mut(dout.len()).enumerate().for_each(|(c, dst)| {
        let src = &x[c * di.len()..(c + 1) * di.len()];
        for (idx, v) in dst.iter_mut().enumerate() {
            let [a, b, z] = dout.coords(idx);
            *v = src[di.index(a / 2, b / 2, z / 2)];
        }
    });
    out
}

fn upsample_backward(g: &[f64], sin: Shape, sout: Shape) -> Vec<f64> {
    let (di, dout) = (sin.d, sout.d);
    let mut out = vec![0.0; sin.len()];
    out.par_chunks_mut(di.len()).enumerate().for_each(|(c, dst)| {
        let src = &g[c * dout.len()..(c + 1) * dout.len()];
        for (idx, v) in src.iter().enumerate() {
            let [a, b, z] = dout.coords(idx);
            dst[di.index(a / 2, b / 2, z / 2)] += v;
        }
    });
    out
}
