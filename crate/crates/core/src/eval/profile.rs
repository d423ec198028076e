use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::PhantomScene;
use crate::volume::{ComplexVolume, Dims};

/// Voxels `(x, y, z)` for `z` in `z_start..z_end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelColumn {
    pub x: usize,
    pub y: usize,
    pub z_start: usize,
    pub z_end: usize,
}

impl VoxelColumn {
    pub fn len(&self) -> usize {
        self.z_end.saturating_sub(self.z_start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        if self.x >= dims.nx || self.y >= dims.ny || self.z_end > dims.nz || self.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "column {self:?} does not fit a {:?} grid",
                dims.as_array()
            )));
        }
        Ok(())
    }

    /// Column from the middle of the right lung down into the liver, long
    /// enough to hold the lung base at full inspiration.
    pub fn through_diaphragm(scene: &PhantomScene, dims: Dims) -> Result<Self> {
        let get = |n: &str| {
            scene
                .ellipsoid(n)
                .ok_or_else(|| Error::InvalidArgument(format!("scene has no ellipsoid {n}")))
        };
        let lung = get("lung_right")?;
        let liver = get("liver")?;
        let col = Self {
            x: lung.center[0].round() as usize,
            y: lung.center[1].round() as usize,
            z_start: lung.center[2].round() as usize,
            z_end: ((liver.center[2] + scene.diaphragm_amplitude).round() as usize + 1).min(dims.nz),
        };
        col.validate(dims)?;
        Ok(col)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiaphragmProfile {
    pub column: VoxelColumn,
    pub n_states: usize,
    /// Magnitudes, row-major with one row per column voxel and one column
    /// per state.
    pub image: Vec<f64>,
    /// Sub-voxel z of the first rising 50%-of-max crossing, per state.
    /// `None` where no edge was found.
    pub edges: Vec<Option<f64>>,
}

impl DiaphragmProfile {
    /// Edge positions relative to state 0, `None` if either is missing.
    pub fn displacements(&self) -> Vec<Option<f64>> {
        let e0 = self.edges.first().copied().flatten();
        self.edges.iter().map(|e| Some((*e)? - e0?)).collect()
    }
}

/// Stacks `|v|` along `column` for each state and locates the edge.
pub fn diaphragm_profile(states: &[ComplexVolume], column: VoxelColumn) -> Result<DiaphragmProfile> {
    let first = states
        .first()
        .ok_or_else(|| Error::InvalidArgument("no states to profile".into()))?;
    column.validate(first.dims)?;
    let n_states = states.len();
    let mut image = vec![0.0; column.len() * n_states];
    let mut edges = Vec::with_capacity(n_states);
    for (s, vol) in states.iter().enumerate() {
        if vol.dims != first.dims {
            return Err(Error::ShapeMismatch(format!("state {s} has different dims")));
        }
        let line: Vec<f64> = (column.z_start..column.z_end)
            .map(|z| vol.get(column.x, column.y, z).norm())
            .collect();
        for (r, v) in line.iter().enumerate() {
            image[r * n_states + s] = *v;
        }
        edges.push(rising_edge(&line).map(|e| column.z_start as f64 + e));
    }
    Ok(DiaphragmProfile {
        column,
        n_states,
        image,
        edges,
    })
}

/// First position where `line` rises through half its maximum, linearly
/// interpolated.
pub fn rising_edge(line: &[f64]) -> Option<f64> {
    let max = line.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    let half = 0.5 * max;
    line.windows(2)
        .position(|w| w[0] < half && w[1] >= half)
        .map(|k| k as f64 + (half - line[k]) / (line[k + 1] - line[k]))
}
