use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, C64};

/// One anisotropic Gaussian. Quaternions are stored `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPoint {
    pub position: [f64; 3],
    pub rho: C64,
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
}

impl GaussianPoint {
    pub fn isotropic(position: [f64; 3], rho: C64, scale: f64) -> Self {
        Self {
            position,
            rho,
            log_scale: [scale.ln(); 3],
            rotation: IDENTITY_QUATERNION,
        }
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }
}

pub const IDENTITY_QUATERNION: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

pub fn normalize_quaternion(q: [f64; 4]) -> Option<([f64; 4], f64)> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        Some((q.map(|v| v / n), n))
    } else {
        None
    }
}

/// Rotation matrix of a unit quaternion; column `a` is principal axis `a`.
pub fn rotation_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// `∂R/∂q_k` for each quaternion component, evaluated at a unit quaternion.
pub fn rotation_jacobian(q: [f64; 4]) -> [[[f64; 3]; 3]; 4] {
    let [w, x, y, z] = q;
    let t = 2.0;
    [
        [[0.0, -t * z, t * y], [t * z, 0.0, -t * x], [-t * y, t * x, 0.0]],
        [[0.0, t * y, t * z], [t * y, -2.0 * t * x, -t * w], [t * z, t * w, -2.0 * t * x]],
        [[-2.0 * t * y, t * x, t * w], [t * x, 0.0, t * z], [-t * w, t * z, -2.0 * t * y]],
        [[-2.0 * t * z, -t * w, t * x], [t * w, -2.0 * t * z, t * y], [t * x, t * y, 0.0]],
    ]
}

/// Chain a gradient w.r.t. the rotation matrix back to the raw quaternion,
/// through the normalization `q / |q|`.
pub fn quaternion_gradient(q: [f64; 4], d_r: &[[f64; 3]; 3]) -> [f64; 4] {
    let Some((unit, norm)) = normalize_quaternion(q) else {
        return [0.0; 4];
    };
    let jac = rotation_jacobian(unit);
    let mut g = [0.0; 4];
    for (k, jk) in jac.iter().enumerate() {
        for i in 0..3 {
            for a in 0..3 {
                g[k] += jk[i][a] * d_r[i][a];
            }
        }
    }
    let dot: f64 = (0..4).map(|k| g[k] * unit[k]).sum();
    std::array::from_fn(|k| (g[k] - unit[k] * dot) / norm)
}

/// `Σ = R S Sᵀ Rᵀ` with `R` from the normalized quaternion.
pub fn covariance(point: &GaussianPoint) -> Result<Matrix3<f64>> {
    let (q, _) = normalize_quaternion(point.rotation).ok_or(Error::ZeroQuaternion(0))?;
    let r = rotation_matrix(q);
    let s = point.scale();
    Ok(Matrix3::from_fn(|i, j| (0..3).map(|a| r[i][a] * s[a] * s[a] * r[j][a]).sum()))
}

/// The learnable reference-state representation. Parameters are stored per
/// field so each optimizer group sees one contiguous slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianCloud {
    pub dims: Dims,
    pub positions: Vec<[f64; 3]>,
    pub rho: Vec<C64>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
}

impl GaussianCloud {
    pub fn new(dims: Dims, points: &[GaussianPoint]) -> Result<Self> {
        dims.validate()?;
        if points.is_empty() {
            return Err(Error::InvalidArgument("a cloud needs at least one Gaussian".into()));
        }
        Ok(Self {
            dims,
            positions: points.iter().map(|p| p.position).collect(),
            rho: points.iter().map(|p| p.rho).collect(),
            log_scales: points.iter().map(|p| p.log_scale).collect(),
            rotations: points.iter().map(|p| p.rotation).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn point(&self, i: usize) -> GaussianPoint {
        GaussianPoint {
            position: self.positions[i],
            rho: self.rho[i],
            log_scale: self.log_scales[i],
            rotation: self.rotations[i],
        }
    }

    pub fn points(&self) -> Vec<GaussianPoint> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn extend(&mut self, other: &GaussianCloud) -> Result<()> {
        crate::volume::check_same(self.dims, other.dims)?;
        self.positions.extend_from_slice(&other.positions);
        self.rho.extend_from_slice(&other.rho);
        self.log_scales.extend_from_slice(&other.log_scales);
        self.rotations.extend_from_slice(&other.rotations);
        Ok(())
    }

    pub fn scale_densities(&mut self, a: C64) {
        for r in &mut self.rho {
            *r *= a;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().all(|r| r.re.is_finite() && r.im.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
    }
}

/// Gradient of a real loss w.r.t. the learnable cloud parameters.
/// `rho[i]` packs `∂L/∂Re ρ + i ∂L/∂Im ρ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudGradient {
    pub rho: Vec<C64>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
}

impl CloudGradient {
    pub fn zeros(m: usize) -> Self {
        Self {
            rho: vec![C64::new(0.0, 0.0); m],
            log_scales: vec![[0.0; 3]; m],
            rotations: vec![[0.0; 4]; m],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().all(|r| r.re.is_finite() && r.im.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
    }
}
