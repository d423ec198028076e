use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Plane;
use crate::error::{Error, Result};
use crate::phantom::PhantomScene;
use crate::volume::{check_same, Dims, RealVolume};

pub const NOISE: &str = "noise";

/// Named 0/1 masks. The `noise` mask is the background region used for
/// σ_noise; every other mask is a tissue ROI.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiSet {
    pub dims: Dims,
    pub masks: BTreeMap<String, RealVolume>,
}

#[derive(Serialize, Deserialize)]
struct RoiFile {
    dims: [usize; 3],
    /// Linear voxel indices per mask.
    masks: BTreeMap<String, Vec<usize>>,
}

impl RoiSet {
    /// Lung, liver and spine interiors at `amplitude`, eroded by one voxel,
    /// plus a noise mask of corner blocks clear of the object. An organ too
    /// thin to keep any voxel after erosion is left out.
    pub fn from_scene(scene: &PhantomScene, amplitude: f64, dims: Dims) -> Result<Self> {
        let mut masks = BTreeMap::new();
        for (roi, parts) in [("lung", &["lung_left", "lung_right"][..]), ("liver", &["liver"]), ("spine", &["spine"])] {
            let mut m = RealVolume::zeros(dims);
            for name in parts {
                let e = scene
                    .ellipsoid(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("scene has no ellipsoid {name}")))?;
                union(&mut m, &scene.interior_mask(e, amplitude, 1.0, dims));
            }
            if m.count_nonzero() > 0 {
                masks.insert(roi.to_string(), m);
            }
        }
        // Noise: blocks in the four (x, z) corners over every y, at least two
        // voxels away from any ellipsoid. Spanning y keeps every coronal
        // slice populated.
        let mut object = RealVolume::zeros(dims);
        for e in &scene.ellipsoids {
            union(&mut object, &scene.interior_mask(e, amplitude, -2.0, dims));
        }
        let cx = (dims.nx / 8).max(2);
        let cz = (dims.nz / 8).max(2);
        let noise = RealVolume::from_fn(dims, |x, y, z| {
            let corner = (x < cx || x >= dims.nx - cx) && (z < cz || z >= dims.nz - cz);
            if corner && object.get(x, y, z) == 0.0 {
                1.0
            } else {
                0.0
            }
        });
        masks.insert(NOISE.to_string(), noise);
        let set = Self { dims, masks };
        set.validate()?;
        Ok(set)
    }

    pub fn noise(&self) -> Result<&RealVolume> {
        self.masks
            .get(NOISE)
            .ok_or_else(|| Error::InvalidArgument("ROI set has no noise mask".into()))
    }

    /// Tissue ROIs, excluding the noise mask.
    pub fn tissues(&self) -> impl Iterator<Item = (&String, &RealVolume)> {
        self.masks.iter().filter(|(k, _)| k.as_str() != NOISE)
    }

    pub fn validate(&self) -> Result<()> {
        let noise = self.noise()?;
        for (name, m) in &self.masks {
            check_same(self.dims, m.dims)?;
            if m.count_nonzero() == 0 {
                return Err(Error::InvalidArgument(format!("ROI {name} is empty")));
            }
        }
        for (name, m) in self.tissues() {
            if m.data.iter().zip(&noise.data).any(|(a, b)| *a != 0.0 && *b != 0.0) {
                return Err(Error::InvalidArgument(format!("noise mask overlaps ROI {name}")));
            }
        }
        Ok(())
    }

    /// Every mask cut down to one slice.
    pub fn restrict(&self, plane: Plane, index: usize) -> Result<Self> {
        let masks = self
            .masks
            .iter()
            .map(|(k, m)| Ok((k.clone(), restrict_mask(m, plane, index)?)))
            .collect::<Result<_>>()?;
        Ok(Self { dims: self.dims, masks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = RoiFile {
            dims: self.dims.as_array(),
            masks: self
                .masks
                .iter()
                .map(|(k, m)| {
                    let idx = m.data.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i);
                    (k.clone(), idx.collect())
                })
                .collect(),
        };
        fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: RoiFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        let dims = Dims::from_array(file.dims);
        let mut masks = BTreeMap::new();
        for (k, idx) in file.masks {
            let mut m = RealVolume::zeros(dims);
            for i in idx {
                if i >= dims.len() {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        reason: format!("ROI {k} index {i} outside the {} voxel grid", dims.len()),
                    });
                }
                m.data[i] = 1.0;
            }
            masks.insert(k, m);
        }
        let set = Self { dims, masks };
        set.validate()?;
        Ok(set)
    }
}

fn union(into: &mut RealVolume, m: &RealVolume) {
    for (a, b) in into.data.iter_mut().zip(&m.data) {
        *a = a.max(*b);
    }
}

/// Zeroes `mask` outside the slice `index` of `plane`.
pub fn restrict_mask(mask: &RealVolume, plane: Plane, index: usize) -> Result<RealVolume> {
    let axis = plane.axis();
    let n = mask.dims.as_array()[axis];
    if index >= n {
        return Err(Error::InvalidArgument(format!("slice {index} outside axis of length {n}")));
    }
    Ok(RealVolume::from_fn(mask.dims, |x, y, z| {
        if [x, y, z][axis] == index {
            mask.get(x, y, z)
        } else {
            0.0
        }
    }))
}
