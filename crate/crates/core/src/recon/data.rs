//! Per-state data consistency against the binned multi-coil k-space.

use crate::error::{Error, Result};
use crate::gating::MotionStateBins;
use crate::nufft::{coil_combined_adjoint, KSpaceWeighting, Nufft, NufftMethod};
use crate::phantom::{CoilSet, RadialKSpace};
use crate::volume::{check_same, ComplexVolume, Dims, C64};

/// One motion state's measured samples and forward operator.
#[derive(Debug)]
pub struct StateData {
    pub spokes: Vec<usize>,
    pub op: Nufft,
    /// Measured samples per coil, (spoke, readout) order.
    pub measured: Vec<Vec<C64>>,
    /// Data-term weights.
    pub weights: Vec<f64>,
    /// Ramp density compensation, used by the adjoint baseline.
    pub dcf: Vec<f64>,
    /// `1 / (voxels · coils · samples)`.
    pub norm: f64,
}

/// Everything needed to evaluate the data term for every state.
#[derive(Debug)]
pub struct DataProblem {
    pub dims: Dims,
    pub coils: CoilSet,
    pub states: Vec<StateData>,
}

impl DataProblem {
    /// Splits `k` by state. Weights come from the full trajectory so every
    /// state shares one k-space normalization.
    pub fn new(
        k: &RadialKSpace,
        bins: &MotionStateBins,
        coils: &CoilSet,
        weighting: KSpaceWeighting,
        method: NufftMethod,
    ) -> Result<Self> {
        if k.n_coils != coils.n_coils() {
            return Err(Error::ShapeMismatch(format!(
                "{} k-space coils, {} coil maps",
                k.n_coils,
                coils.n_coils()
            )));
        }
        if bins.n_spokes() != k.n_spokes() {
            return Err(Error::ShapeMismatch(format!(
                "bins cover {} spokes, k-space has {}",
                bins.n_spokes(),
                k.n_spokes()
            )));
        }
        let dims = coils.dims();
        let sps = k.samples_per_spoke();
        let all_weights = weighting.weights(&k.trajectory);
        let all_dcf = KSpaceWeighting::Ramp.weights(&k.trajectory);
        let states = bins
            .states
            .iter()
            .enumerate()
            .map(|(t, spokes)| {
                if spokes.is_empty() {
                    return Err(Error::EmptyState(t));
                }
                let op = Nufft::new(dims, &k.trajectory.gather(spokes), method)?;
                let n = (k.n_coils * spokes.len() * sps) as f64;
                Ok(StateData {
                    spokes: spokes.clone(),
                    op,
                    measured: k.gather(spokes),
                    weights: all_weights.select_spokes(spokes, sps).weights,
                    dcf: all_dcf.select_spokes(spokes, sps).weights,
                    norm: 1.0 / (dims.len() as f64 * n),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dims,
            coils: coils.clone(),
            states,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// Multiplies every measured sample by `a`.
    pub fn scale_measurements(&mut self, a: f64) {
        for st in &mut self.states {
            for z in st.measured.iter_mut().flatten() {
                *z *= a;
            }
        }
    }

    /// Coil images `C_c · y` transformed onto state `t`'s samples.
    pub fn predict(&self, t: usize, y: &ComplexVolume) -> Result<Vec<Vec<C64>>> {
        check_same(self.dims, y.dims)?;
        let st = self.state(t)?;
        self.coils
            .maps
            .iter()
            .map(|map| {
                let mut img = y.clone();
                for (v, c) in img.data.iter_mut().zip(&map.data) {
                    *v *= c;
                }
                st.op.forward(&img)
            })
            .collect()
    }

    fn state(&self, t: usize) -> Result<&StateData> {
        self.states
            .get(t)
            .ok_or_else(|| Error::InvalidArgument(format!("state {t} of {}", self.states.len())))
    }

    /// `Σ_c Σ_k w_k |F(C_c y) − m_c|²` normalized, and optionally its
    /// gradient with respect to `y`.
    pub fn state_loss(&self, t: usize, y: &ComplexVolume, want_grad: bool) -> Result<(f64, Option<ComplexVolume>)> {
        let st = self.state(t)?;
        let pred = self.predict(t, y)?;
        let mut loss = 0.0;
        let mut residuals = Vec::with_capacity(pred.len());
        for (p, m) in pred.iter().zip(&st.measured) {
            let r: Vec<C64> = p.iter().zip(m).map(|(p, m)| p - m).collect();
            loss += r.iter().zip(&st.weights).map(|(r, w)| w * r.norm_sqr()).sum::<f64>();
            residuals.push(r);
        }
        loss *= st.norm;
        if !want_grad {
            return Ok((loss, None));
        }
        let mut g = coil_combined_adjoint(&st.op, &residuals, &self.coils, Some(&st.weights))?;
        g.scale(C64::new(2.0 * st.norm, 0.0));
        Ok((loss, Some(g)))
    }

    /// Complex scalar `a` minimizing state `t`'s weighted loss of `a·y`.
    pub fn best_scale(&self, t: usize, y: &ComplexVolume, weighted: bool) -> Result<C64> {
        let st = self.state(t)?;
        let pred = self.predict(t, y)?;
        let (mut num, mut den) = (C64::new(0.0, 0.0), 0.0);
        for (p, m) in pred.iter().zip(&st.measured) {
            for ((p, m), w) in p.iter().zip(m).zip(&st.weights) {
                let w = if weighted { *w } else { 1.0 };
                num += p.conj() * m * w;
                den += w * p.norm_sqr();
            }
        }
        if den == 0.0 {
            return Err(Error::InvalidArgument("prediction is zero on every sample".into()));
        }
        Ok(num / den)
    }

    /// Density-compensated coil-combined adjoint of state `t`, scaled to
    /// best match that state's data.
    pub fn adjoint_baseline(&self, t: usize) -> Result<ComplexVolume> {
        let st = self.state(t)?;
        let mut x = coil_combined_adjoint(&st.op, &st.measured, &self.coils, Some(&st.dcf))?;
        let a = self.best_scale(t, &x, false)?;
        x.scale(a);
        Ok(x)
    }
}
