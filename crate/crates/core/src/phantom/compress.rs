//! PCA coil compression.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{CoilSet, RadialKSpace};
use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, C64};

/// Orthonormal coil-space basis: `basis[v][c]` is coil `c`'s entry of
/// virtual coil `v` (ordered by decreasing energy).
#[derive(Clone, Debug, PartialEq)]
pub struct CoilProjection {
    pub basis: Vec<Vec<C64>>,
    /// Eigenvalues of the coil covariance for the retained components.
    pub energies: Vec<f64>,
}

impl CoilProjection {
    pub fn n_virtual(&self) -> usize {
        self.basis.len()
    }

    pub fn n_physical(&self) -> usize {
        self.basis.first().map_or(0, Vec::len)
    }

    /// `y_v = Σ_c conj(u_cv) x_c` for one stack of per-coil values.
    fn project(&self, per_coil: &[C64]) -> Vec<C64> {
        self.basis
            .iter()
            .map(|u| u.iter().zip(per_coil).map(|(a, b)| a.conj() * b).sum())
            .collect()
    }

    pub fn apply_to_coils(&self, coils: &CoilSet) -> Result<CoilSet> {
        if coils.n_coils() != self.n_physical() {
            return Err(Error::ShapeMismatch(format!(
                "projection expects {} coils, got {}",
                self.n_physical(),
                coils.n_coils()
            )));
        }
        let dims = coils.dims();
        let mut maps = vec![ComplexVolume::zeros(dims); self.n_virtual()];
        let mut stack = vec![C64::new(0.0, 0.0); coils.n_coils()];
        for j in 0..dims.len() {
            for (c, m) in coils.maps.iter().enumerate() {
                stack[c] = m.data[j];
            }
            for (v, val) in self.project(&stack).into_iter().enumerate() {
                maps[v].data[j] = val;
            }
        }
        CoilSet::new(maps)
    }

    /// Map compressed data back to the physical coils (`U · y`).
    pub fn expand(&self, compressed: &RadialKSpace) -> Result<RadialKSpace> {
        if compressed.n_coils != self.n_virtual() {
            return Err(Error::ShapeMismatch("compressed coil count mismatch".into()));
        }
        let n = compressed.trajectory.n_samples();
        let mut data = vec![C64::new(0.0, 0.0); self.n_physical() * n];
        for (v, u) in self.basis.iter().enumerate() {
            let src = compressed.coil(v);
            for (c, ucv) in u.iter().enumerate() {
                for (d, s) in data[c * n..(c + 1) * n].iter_mut().zip(src) {
                    *d += ucv * s;
                }
            }
        }
        RadialKSpace::new(compressed.trajectory.clone(), self.n_physical(), data)
    }
}

/// Project multi-coil data onto the `n_virtual` dominant principal components
/// of the coil covariance.
pub fn pca_coil_compress(k: &RadialKSpace, n_virtual: usize) -> Result<(RadialKSpace, CoilProjection)> {
    let nc = k.n_coils;
    if n_virtual == 0 || n_virtual > nc {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {n_virtual} virtual coils from {nc}"
        )));
    }
    let n = k.trajectory.n_samples();
    let mut cov = DMatrix::<C64>::zeros(nc, nc);
    for a in 0..nc {
        let xa = k.coil(a);
        for b in a..nc {
            let xb = k.coil(b);
            let v: C64 = xa.iter().zip(xb).map(|(p, q)| p * q.conj()).sum();
            cov[(a, b)] = v;
            cov[(b, a)] = v.conj();
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..nc).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut basis = Vec::with_capacity(n_virtual);
    let mut energies = Vec::with_capacity(n_virtual);
    for &i in order.iter().take(n_virtual) {
        let col = eig.eigenvectors.column(i);
        // Fix the arbitrary eigenvector phase: largest entry real positive.
        let pivot = col
            .iter()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .copied()
            .unwrap_or(C64::new(1.0, 0.0));
        let rot = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { C64::new(1.0, 0.0) };
        basis.push(col.iter().map(|v| v * rot).collect::<Vec<C64>>());
        energies.push(eig.eigenvalues[i]);
    }
    let proj = CoilProjection { basis, energies };

    let mut data = vec![C64::new(0.0, 0.0); n_virtual * n];
    for (v, u) in proj.basis.iter().enumerate() {
        let dst = &mut data[v * n..(v + 1) * n];
        for (c, ucv) in u.iter().enumerate() {
            let w = ucv.conj();
            for (d, s) in dst.iter_mut().zip(k.coil(c)) {
                *d += w * s;
            }
        }
    }
    Ok((RadialKSpace::new(k.trajectory.clone(), n_virtual, data)?, proj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::golden_angle_trajectory;
    use crate::volume::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kspace(n_coils: usize, seed: u64) -> RadialKSpace {
        let traj = golden_angle_trajectory(20, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n_coils * traj.n_samples())
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        RadialKSpace::new(traj, n_coils, data).unwrap()
    }

    #[test]
    fn full_rank_preserves_energy() {
        let k = random_kspace(5, 1);
        let (c, _) = pca_coil_compress(&k, 5).unwrap();
        assert!(((c.energy() - k.energy()) / k.energy()).abs() < 1e-8);
    }

    #[test]
    fn rank_one_data_compresses_to_one_coil() {
        let traj = golden_angle_trajectory(20, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base: Vec<C64> = (0..traj.n_samples())
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let gains = [C64::new(1.0, 0.0), C64::new(0.3, -0.7), C64::new(-2.0, 0.5), C64::new(0.0, 1.2)];
        let mut data = Vec::new();
        for g in gains {
            data.extend(base.iter().map(|b| g * b));
        }
        let k = RadialKSpace::new(traj, 4, data).unwrap();
        let (c, proj) = pca_coil_compress(&k, 1).unwrap();
        let back = proj.expand(&c).unwrap();
        let resid: f64 = back.data.iter().zip(&k.data).map(|(a, b)| (a - b).norm_sqr()).sum();
        assert!(resid / k.energy() < 1e-10);
    }

    #[test]
    fn eight_of_eight_keeps_rss() {
        let d = Dims::cube(8);
        let coils = crate::phantom::smooth_coil_maps(8, d, 2).unwrap();
        let k = random_kspace(8, 3);
        let (_, proj) = pca_coil_compress(&k, 8).unwrap();
        let virt = proj.apply_to_coils(&coils).unwrap();
        let a = coils.rss();
        let b = virt.rss();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn too_many_virtual_coils_is_an_error() {
        let k = random_kspace(3, 5);
        assert!(pca_coil_compress(&k, 4).is_err());
    }
}
