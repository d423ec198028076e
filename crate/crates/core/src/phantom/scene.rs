//! Ellipsoid breathing phantom with an analytic displacement field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims, Dvf, RealVolume, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub name: String,
    /// Center at rest, voxel units.
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub intensity: C64,
    /// Displacement at full inspiration, voxels.
    pub motion_amplitude: [f64; 3],
}

impl Ellipsoid {
    pub fn is_moving(&self) -> bool {
        self.motion_amplitude.iter().any(|m| *m != 0.0)
    }

    pub fn center_at(&self, amplitude: f64) -> [f64; 3] {
        [
            self.center[0] + amplitude * self.motion_amplitude[0],
            self.center[1] + amplitude * self.motion_amplitude[1],
            self.center[2] + amplitude * self.motion_amplitude[2],
        ]
    }

    /// Normalized radius of point `p` for the ellipsoid centered at `c`.
    fn radius(&self, c: [f64; 3], p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - c[a]) / self.semi_axes[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Partial-volume occupancy with a one-voxel linear edge.
    fn occupancy(&self, c: [f64; 3], p: [f64; 3]) -> f64 {
        let r = self.radius(c, p);
        let min_axis = self.semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        (0.5 - (r - 1.0) * min_axis).clamp(0.0, 1.0)
    }

    /// Inclusive voxel range touched by the ellipsoid centered at `c` (plus the edge ramp).
    fn voxel_range(&self, c: [f64; 3], dims: Dims) -> [(usize, usize); 3] {
        let n = dims.as_array();
        let mut r = [(0, 0); 3];
        for a in 0..3 {
            let lo = (c[a] - self.semi_axes[a] - 1.0).floor().max(0.0) as usize;
            let hi = ((c[a] + self.semi_axes[a] + 1.0).ceil().max(0.0) as usize).min(n[a] - 1);
            r[a] = (lo, hi);
        }
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreathingWaveform {
    Sinusoid,
    /// Longer dwell at end-expiration (`sin^4` profile).
    Asymmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomScene {
    pub ellipsoids: Vec<Ellipsoid>,
    pub breathing_frequency: f64,
    pub breathing_waveform: BreathingWaveform,
    pub diaphragm_amplitude: f64,
}

/// Ground truth at one breathing amplitude.
#[derive(Clone, Debug)]
pub struct PhantomState {
    pub volume: ComplexVolume,
    /// Backward-warp displacement from the rest state: `warp(rest, dvf) = volume`.
    pub dvf: Dvf,
}

impl PhantomScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.breathing_frequency > 0.05 && self.breathing_frequency < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "breathing frequency {} Hz outside (0.05, 1.0)",
                self.breathing_frequency
            )));
        }
        for e in &self.ellipsoids {
            if e.semi_axes.iter().any(|s| *s <= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "ellipsoid {} has non-positive semi-axes",
                    e.name
                )));
            }
        }
        Ok(())
    }

    /// Torso-like scene: static body and spine, lungs and liver translating
    /// along +z (inferior) by `diaphragm_amplitude` at full inspiration. The
    /// moving organs stay inside the body for amplitudes up to grid / 8.
    pub fn breathing_torso(dims: Dims, diaphragm_amplitude: f64, breathing_frequency: f64) -> Self {
        let n = dims.as_array().map(|v| v as f64);
        let at = |fx: f64, fy: f64, fz: f64| [fx * n[0], fy * n[1], fz * n[2]];
        let ax = |fx: f64, fy: f64, fz: f64| [fx * n[0], fy * n[1], fz * n[2]];
        let down = [0.0, 0.0, diaphragm_amplitude];
        let still = [0.0; 3];
        let ellipsoids = vec![
            Ellipsoid {
                name: "body".into(),
                center: at(0.5, 0.5, 0.5),
                semi_axes: ax(0.42, 0.34, 0.45),
                intensity: C64::new(1.0, 0.0),
                motion_amplitude: still,
            },
            Ellipsoid {
                name: "lung_left".into(),
                center: at(0.32, 0.47, 0.35),
                semi_axes: ax(0.12, 0.2, 0.19),
                intensity: C64::new(-0.8, 0.0),
                motion_amplitude: down,
            },
            Ellipsoid {
                name: "lung_right".into(),
                center: at(0.68, 0.47, 0.35),
                semi_axes: ax(0.12, 0.2, 0.19),
                intensity: C64::new(-0.8, 0.0),
                motion_amplitude: down,
            },
            Ellipsoid {
                name: "liver".into(),
                center: at(0.58, 0.47, 0.62),
                semi_axes: ax(0.17, 0.22, 0.1),
                intensity: C64::new(0.45, 0.15),
                motion_amplitude: down,
            },
            Ellipsoid {
                name: "spine".into(),
                center: at(0.5, 0.76, 0.5),
                semi_axes: ax(0.06, 0.06, 0.36),
                intensity: C64::new(0.9, 0.0),
                motion_amplitude: still,
            },
        ];
        Self {
            ellipsoids,
            breathing_frequency,
            breathing_waveform: BreathingWaveform::Sinusoid,
            diaphragm_amplitude,
        }
    }

    /// Breathing amplitude in [0, 1] at time `t` seconds (0 = end-expiration).
    pub fn amplitude_at(&self, t: f64) -> f64 {
        let s = (std::f64::consts::PI * self.breathing_frequency * t).sin();
        match self.breathing_waveform {
            BreathingWaveform::Sinusoid => s * s,
            BreathingWaveform::Asymmetric => s.powi(4),
        }
    }

    pub fn has_motion(&self) -> bool {
        self.ellipsoids.iter().any(Ellipsoid::is_moving)
    }

    pub fn ellipsoid(&self, name: &str) -> Option<&Ellipsoid> {
        self.ellipsoids.iter().find(|e| e.name == name)
    }

    pub fn render(&self, amplitude: f64, dims: Dims) -> ComplexVolume {
        let mut v = ComplexVolume::zeros(dims);
        for e in &self.ellipsoids {
            let c = e.center_at(amplitude);
            let [(x0, x1), (y0, y1), (z0, z1)] = e.voxel_range(c, dims);
            for x in x0..=x1 {
                for y in y0..=y1 {
                    for z in z0..=z1 {
                        let occ = e.occupancy(c, [x as f64, y as f64, z as f64]);
                        if occ > 0.0 {
                            let i = dims.index(x, y, z);
                            v.data[i] += e.intensity * occ;
                        }
                    }
                }
            }
        }
        v
    }

    /// Backward-warp field taking the state at `from` to the state at `to`:
    /// inside a moving ellipsoid (at its `to` position) the displacement is
    /// `-(to - from) * motion_amplitude`; zero elsewhere. Later ellipsoids win
    /// where moving ellipsoids overlap.
    pub fn analytic_dvf(&self, from: f64, to: f64, dims: Dims) -> Dvf {
        let mut dvf = Dvf::zeros(dims);
        for e in self.ellipsoids.iter().filter(|e| e.is_moving()) {
            let c = e.center_at(to);
            let u = e.motion_amplitude.map(|m| -(to - from) * m);
            let [(x0, x1), (y0, y1), (z0, z1)] = e.voxel_range(c, dims);
            for x in x0..=x1 {
                for y in y0..=y1 {
                    for z in z0..=z1 {
                        if e.radius(c, [x as f64, y as f64, z as f64]) <= 1.0 {
                            let i = dims.index(x, y, z);
                            for a in 0..3 {
                                dvf.components[a].data[i] = u[a];
                            }
                        }
                    }
                }
            }
        }
        dvf
    }

    /// 0/1 mask of an ellipsoid's interior at `amplitude`, eroded by `erosion` voxels.
    pub fn interior_mask(&self, ellipsoid: &Ellipsoid, amplitude: f64, erosion: f64, dims: Dims) -> RealVolume {
        let c = ellipsoid.center_at(amplitude);
        let shrunk = Ellipsoid {
            semi_axes: ellipsoid.semi_axes.map(|s| (s - erosion).max(1e-6)),
            ..ellipsoid.clone()
        };
        let mut mask = RealVolume::zeros(dims);
        let [(x0, x1), (y0, y1), (z0, z1)] = shrunk.voxel_range(c, dims);
        for x in x0..=x1 {
            for y in y0..=y1 {
                for z in z0..=z1 {
                    if shrunk.radius(c, [x as f64, y as f64, z as f64]) <= 1.0 {
                        mask.set(x, y, z, 1.0);
                    }
                }
            }
        }
        mask
    }

    /// Union of the eroded interiors of every moving ellipsoid at `amplitude`.
    pub fn moving_interior_mask(&self, amplitude: f64, erosion: f64, dims: Dims) -> RealVolume {
        let mut mask = RealVolume::zeros(dims);
        for e in self.ellipsoids.iter().filter(|e| e.is_moving()) {
            let m = self.interior_mask(e, amplitude, erosion, dims);
            for (a, b) in mask.data.iter_mut().zip(&m.data) {
                *a = a.max(*b);
            }
        }
        mask
    }
}

pub fn render_phantom(scene: &PhantomScene, respiratory_amplitude: f64, dims: Dims) -> Result<PhantomState> {
    if dims.nx < 16 || dims.ny < 16 || dims.nz < 16 {
        return Err(Error::InvalidArgument(format!(
            "phantom dims must be >= 16 per axis, got {:?}",
            dims.as_array()
        )));
    }
    if !(0.0..=1.0).contains(&respiratory_amplitude) {
        return Err(Error::InvalidArgument(format!(
            "respiratory amplitude {respiratory_amplitude} outside [0, 1]"
        )));
    }
    Ok(PhantomState {
        volume: scene.render(respiratory_amplitude, dims),
        dvf: scene.analytic_dvf(0.0, respiratory_amplitude, dims),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(motion: [f64; 3], intensity: f64, center: [f64; 3]) -> Ellipsoid {
        Ellipsoid {
            name: "e".into(),
            center,
            semi_axes: [4.0, 4.0, 4.0],
            intensity: C64::new(intensity, 0.0),
            motion_amplitude: motion,
        }
    }

    fn scene(ellipsoids: Vec<Ellipsoid>) -> PhantomScene {
        PhantomScene {
            ellipsoids,
            breathing_frequency: 0.25,
            breathing_waveform: BreathingWaveform::Sinusoid,
            diaphragm_amplitude: 4.0,
        }
    }

    fn centroid(v: &ComplexVolume) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut mass = 0.0;
        for (i, z) in v.data.iter().enumerate() {
            let w = z.norm();
            let c = v.dims.coords(i);
            for a in 0..3 {
                acc[a] += w * c[a] as f64;
            }
            mass += w;
        }
        acc.map(|a| a / mass)
    }

    #[test]
    fn rest_amplitude_has_zero_dvf() {
        let d = Dims::cube(16);
        let s = PhantomScene::breathing_torso(d, 2.0, 0.25);
        let st = render_phantom(&s, 0.0, d).unwrap();
        assert!(st.dvf.is_zero());
    }

    #[test]
    fn full_inspiration_shifts_center_in_z() {
        let d = Dims::cube(24);
        let s = scene(vec![single([0.0, 0.0, 4.0], 1.0, [12.0, 12.0, 8.0])]);
        let rest = centroid(&render_phantom(&s, 0.0, d).unwrap().volume);
        let moved_state = render_phantom(&s, 1.0, d).unwrap();
        let moved = centroid(&moved_state.volume);
        assert!((moved[2] - rest[2] - 4.0).abs() < 1e-9);
        assert!((moved[0] - rest[0]).abs() < 1e-9);
        // DVF inside the moved ellipsoid points back to the rest position
        let i = d.index(12, 12, 12);
        assert_eq!(moved_state.dvf.at(i), [0.0, 0.0, -4.0]);
    }

    #[test]
    fn disjoint_intensities_do_not_mix() {
        let d = Dims::cube(24);
        let s = scene(vec![
            single([0.0; 3], 1.0, [6.0, 12.0, 12.0]),
            single([0.0; 3], 2.0, [18.0, 12.0, 12.0]),
        ]);
        let v = render_phantom(&s, 0.0, d).unwrap().volume;
        assert!((v.get(18, 12, 12).norm() - 2.0).abs() < 1e-12);
        assert!((v.get(6, 12, 12).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_grids_and_bad_frequency() {
        let s = scene(vec![single([0.0; 3], 1.0, [4.0; 3])]);
        assert!(render_phantom(&s, 0.0, Dims::cube(8)).is_err());
        let mut bad = s.clone();
        bad.breathing_frequency = 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn waveforms_stay_in_unit_range() {
        let mut s = PhantomScene::breathing_torso(Dims::cube(16), 4.0, 0.25);
        for wf in [BreathingWaveform::Sinusoid, BreathingWaveform::Asymmetric] {
            s.breathing_waveform = wf;
            for i in 0..400 {
                let a = s.amplitude_at(i as f64 * 0.05);
                assert!((0.0..=1.0).contains(&a));
            }
            assert_eq!(s.amplitude_at(0.0), 0.0);
            assert!((s.amplitude_at(2.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn moving_organs_stay_inside_the_body() {
        // Otherwise part of a moved organ would read static body signal that
        // is not there, and the analytic DVF would not map rest to moved.
        for n in [32, 48, 64] {
            let dims = Dims::cube(n);
            let s = PhantomScene::breathing_torso(dims, 4.0, 0.25);
            let body = s.interior_mask(s.ellipsoid("body").unwrap(), 0.0, 0.0, dims);
            for a in [0.0, 1.0] {
                let organs = s.moving_interior_mask(a, 0.0, dims);
                let out = organs.data.iter().zip(&body.data).filter(|(o, b)| **o > 0.0 && **b == 0.0).count();
                assert_eq!(out, 0, "{n}^3 at amplitude {a}");
            }
        }
    }
}
