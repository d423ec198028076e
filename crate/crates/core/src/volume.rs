//! Gridded volumes shared by every stage of the pipeline.
//!
//! All volumes use one linearization: row-major with z fastest,
//! `index = (x * ny + y) * nz + z`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn from_array(a: [usize; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.ny + y) * self.nz + z
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let z = idx % self.nz;
        let xy = idx / self.nz;
        [xy / self.ny, xy % self.ny, z]
    }

    /// Integer center used as the origin of Fourier phases (`n / 2` per axis).
    pub fn center(&self) -> [f64; 3] {
        [
            (self.nx / 2) as f64,
            (self.ny / 2) as f64,
            (self.nz / 2) as f64,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 || self.nz < 2 {
            return Err(Error::InvalidArgument(format!(
                "volume dims must be >= 2 per axis, got {:?}",
                self.as_array()
            )));
        }
        Ok(())
    }

    pub fn scaled_down(&self, factor: usize) -> Result<Dims> {
        if self.nx % factor != 0 || self.ny % factor != 0 || self.nz % factor != 0 {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} not divisible by {factor}",
                self.as_array()
            )));
        }
        Ok(Dims::new(self.nx / factor, self.ny / factor, self.nz / factor))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVolume {
    pub dims: Dims,
    pub data: Vec<C64>,
    pub voxel_size: f64,
}

impl ComplexVolume {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![C64::new(0.0, 0.0); dims.len()],
            voxel_size: 1.0,
        }
    }

    pub fn from_data(dims: Dims, data: Vec<C64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {} voxels",
                data.len(),
                dims.len()
            )));
        }
        Ok(Self {
            dims,
            data,
            voxel_size: 1.0,
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for x in 0..dims.nx {
            for y in 0..dims.ny {
                for z in 0..dims.nz {
                    data.push(f(x, y, z));
                }
            }
        }
        Self {
            dims,
            data,
            voxel_size: 1.0,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> C64 {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: C64) {
        let i = self.dims.index(x, y, z);
        self.data[i] = v;
    }

    pub fn magnitude(&self) -> RealVolume {
        magnitude(self)
    }

    pub fn scale(&mut self, a: C64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: C64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn add_assign(&mut self, other: &ComplexVolume) -> Result<()> {
        check_same(self.dims, other.dims)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealVolume {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl RealVolume {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_data(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {} voxels",
                data.len(),
                dims.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for x in 0..dims.nx {
            for y in 0..dims.ny {
                for z in 0..dims.nz {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = self.dims.index(x, y, z);
        self.data[i] = v;
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }
}

/// Three-component displacement field, one `RealVolume` per axis (x, y, z),
/// in voxel units of the grid it lives on.
#[derive(Clone, Debug, PartialEq)]
pub struct Dvf {
    pub components: [RealVolume; 3],
}

impl Dvf {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            components: [
                RealVolume::zeros(dims),
                RealVolume::zeros(dims),
                RealVolume::zeros(dims),
            ],
        }
    }

    pub fn constant(dims: Dims, c: [f64; 3]) -> Self {
        Self {
            components: [
                RealVolume::filled(dims, c[0]),
                RealVolume::filled(dims, c[1]),
                RealVolume::filled(dims, c[2]),
            ],
        }
    }

    pub fn dims(&self) -> Dims {
        self.components[0].dims
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [f64; 3] {
        [
            self.components[0].data[idx],
            self.components[1].data[idx],
            self.components[2].data[idx],
        ]
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.components {
            for v in &mut c.data {
                *v *= a;
            }
        }
        out
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Dvf) -> Result<()> {
        check_same(self.dims(), other.dims())?;
        for (c, o) in self.components.iter_mut().zip(&other.components) {
            for (v, w) in c.data.iter_mut().zip(&o.data) {
                *v += a * w;
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.components
            .iter()
            .all(|c| c.data.iter().all(|v| *v == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.data.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn check_same(a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.as_array(),
            b.as_array()
        )));
    }
    Ok(())
}

/// `Σ a_k · conj(b_k)`
pub fn complex_inner_product(a: &[C64], b: &[C64]) -> Result<C64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "inner product of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y.conj()).sum())
}

pub fn magnitude(v: &ComplexVolume) -> RealVolume {
    RealVolume {
        dims: v.dims,
        data: v.data.iter().map(|z| z.norm()).collect(),
    }
}
