//! Low-rank motion model: shared coarse deformation bases, per-state
//! coefficients, and the generator that produces the bases.

pub mod decoder;
pub mod warp;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Dvf, RealVolume};

pub use decoder::{upsampling_stages, ConvDecoder, DecoderTape, Layer, LATENT_CHANNELS};
pub use warp::{upsample_dvf, upsample_dvf_backward, warp, warp_backward, COARSE_FACTOR};

/// `B` coarse 3-channel fields shared by all motion states.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionBases {
    pub coarse_dims: Dims,
    pub bases: Vec<Dvf>,
}

impl MotionBases {
    pub fn zeros(coarse_dims: Dims, n_bases: usize) -> Self {
        Self {
            coarse_dims,
            bases: vec![Dvf::zeros(coarse_dims); n_bases],
        }
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    /// Reinterprets a basis-major channel stack (`b * 3 + component`).
    pub fn from_channels(coarse_dims: Dims, channels: &[f64], n_bases: usize) -> Result<Self> {
        let vox = coarse_dims.len();
        if channels.len() != 3 * n_bases * vox {
            return Err(Error::ShapeMismatch(format!(
                "{} channels for {n_bases} bases on {:?}",
                channels.len() / vox.max(1),
                coarse_dims.as_array()
            )));
        }
        let bases = (0..n_bases)
            .map(|b| Dvf {
                components: std::array::from_fn(|c| RealVolume {
                    dims: coarse_dims,
                    data: channels[(3 * b + c) * vox..(3 * b + c + 1) * vox].to_vec(),
                }),
            })
            .collect();
        Ok(Self { coarse_dims, bases })
    }

    /// Inverse of [`MotionBases::from_channels`].
    pub fn to_channels(&self) -> Vec<f64> {
        self.bases
            .iter()
            .flat_map(|b| b.components.iter().flat_map(|c| c.data.iter().copied()))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.bases
            .iter()
            .all(|b| b.components.iter().all(|c| c.data.iter().all(|v| v.is_finite())))
    }
}

/// Per-state mixing weights. Basis 0 is driven by the fixed respiratory
/// coefficient `alpha`; the remaining bases have learnable coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateCoefficients {
    pub alpha: Vec<f64>,
    /// `learned[state][b - 1]` for bases `1..B`.
    pub learned: Vec<Vec<f64>>,
}

impl StateCoefficients {
    /// `alpha` from the per-state median amplitudes, divided by the largest
    /// magnitude; learnable coefficients start at zero.
    pub fn from_medians(medians: &[f64], n_bases: usize) -> Result<Self> {
        if medians.is_empty() || n_bases == 0 {
            return Err(Error::InvalidArgument("need at least one state and one basis".into()));
        }
        if medians.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("non-finite state amplitude".into()));
        }
        let peak = medians.iter().fold(0.0_f64, |a, m| a.max(m.abs()));
        let alpha = medians.iter().map(|m| if peak > 0.0 { m / peak } else { 0.0 }).collect();
        Ok(Self {
            alpha,
            learned: vec![vec![0.0; n_bases - 1]; medians.len()],
        })
    }

    pub fn n_states(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_bases(&self) -> usize {
        self.learned.first().map_or(1, |l| l.len() + 1)
    }

    /// Coefficient of basis `b` in state `i`.
    pub fn get(&self, i: usize, b: usize) -> f64 {
        if b == 0 {
            self.alpha[i]
        } else {
            self.learned[i][b - 1]
        }
    }

    pub fn learned_flat(&self) -> Vec<f64> {
        self.learned.iter().flatten().copied().collect()
    }

    pub fn set_learned_flat(&mut self, flat: &[f64]) -> Result<()> {
        let per = self.n_bases() - 1;
        if flat.len() != per * self.n_states() {
            return Err(Error::ShapeMismatch("learned coefficient count".into()));
        }
        for (row, chunk) in self.learned.iter_mut().zip(flat.chunks(per.max(1))) {
            row.copy_from_slice(&chunk[..per]);
        }
        Ok(())
    }
}

/// Linear combination of the bases with state `i`'s coefficients.
pub fn compose_dvf(bases: &MotionBases, coeff: &StateCoefficients, i: usize) -> Result<Dvf> {
    combine(bases, coeff, i, |b| coeff.get(i, b))
}

/// `compose(i) - compose(0)`: the reference state is never deformed.
pub fn state_dvf(bases: &MotionBases, coeff: &StateCoefficients, i: usize) -> Result<Dvf> {
    combine(bases, coeff, i, |b| coeff.get(i, b) - coeff.get(0, b))
}

fn combine(bases: &MotionBases, coeff: &StateCoefficients, i: usize, c: impl Fn(usize) -> f64) -> Result<Dvf> {
    if i >= coeff.n_states() {
        return Err(Error::InvalidArgument(format!("state {i} of {}", coeff.n_states())));
    }
    if coeff.n_bases() != bases.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficients per state for {} bases",
            coeff.n_bases(),
            bases.len()
        )));
    }
    let mut out = Dvf::zeros(bases.coarse_dims);
    for (b, basis) in bases.bases.iter().enumerate() {
        let w = c(b);
        if w != 0.0 {
            out.axpy(w, basis)?;
        }
    }
    Ok(out)
}

fn dot(a: &Dvf, b: &Dvf) -> f64 {
    a.components
        .iter()
        .zip(&b.components)
        .map(|(x, y)| x.data.iter().zip(&y.data).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

/// Where the bases come from.
#[derive(Clone, Debug, PartialEq)]
pub enum BasisGenerator {
    /// The coarse grids are the parameters themselves.
    DirectGrid(MotionBases),
    ConvDecoder { decoder: ConvDecoder, n_bases: usize },
}

impl BasisGenerator {
    pub fn direct_grid(coarse_dims: Dims, n_bases: usize) -> Self {
        BasisGenerator::DirectGrid(MotionBases::zeros(coarse_dims, n_bases))
    }

    pub fn conv_decoder(decoder: ConvDecoder, n_bases: usize) -> Result<Self> {
        if decoder.out_channels() != 3 * n_bases {
            return Err(Error::ShapeMismatch(format!(
                "decoder emits {} channels, {n_bases} bases need {}",
                decoder.out_channels(),
                3 * n_bases
            )));
        }
        Ok(BasisGenerator::ConvDecoder { decoder, n_bases })
    }

    pub fn n_bases(&self) -> usize {
        match self {
            BasisGenerator::DirectGrid(b) => b.len(),
            BasisGenerator::ConvDecoder { n_bases, .. } => *n_bases,
        }
    }

    pub fn coarse_dims(&self) -> Dims {
        match self {
            BasisGenerator::DirectGrid(b) => b.coarse_dims,
            BasisGenerator::ConvDecoder { decoder, .. } => decoder.output_dims(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            BasisGenerator::DirectGrid(b) => b.to_channels(),
            BasisGenerator::ConvDecoder { decoder, .. } => decoder.theta.clone(),
        }
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        match self {
            BasisGenerator::DirectGrid(b) => {
                *b = MotionBases::from_channels(b.coarse_dims, p, b.len())?;
            }
            BasisGenerator::ConvDecoder { decoder, .. } => {
                if p.len() != decoder.theta.len() {
                    return Err(Error::ShapeMismatch("decoder parameter count".into()));
                }
                decoder.theta.copy_from_slice(p);
            }
        }
        Ok(())
    }

    /// The bases, plus the decoder tape needed by [`BasisGenerator::backward`].
    pub fn generate(&self) -> Result<(MotionBases, Option<DecoderTape>)> {
        match self {
            BasisGenerator::DirectGrid(b) => Ok((b.clone(), None)),
            BasisGenerator::ConvDecoder { decoder, n_bases } => {
                let (out, tape) = decoder.forward();
                let bases = MotionBases::from_channels(decoder.output_dims(), &out, *n_bases)?;
                Ok((bases, Some(tape)))
            }
        }
    }

    /// Parameter gradient from per-basis gradients.
    pub fn backward(&self, tape: Option<&DecoderTape>, grad: &MotionBases) -> Result<Vec<f64>> {
        match (self, tape) {
            (BasisGenerator::DirectGrid(_), _) => Ok(grad.to_channels()),
            (BasisGenerator::ConvDecoder { decoder, .. }, Some(tape)) => decoder.backward(tape, &grad.to_channels()),
            (BasisGenerator::ConvDecoder { .. }, None) => {
                Err(Error::InvalidArgument("decoder backward needs a forward tape".into()))
            }
        }
    }
}

/// Everything the forward pass produces for one optimization step.
#[derive(Clone, Debug)]
pub struct MotionForward {
    pub bases: MotionBases,
    pub tape: Option<DecoderTape>,
    /// `state_dvf` per state, coarse grid.
    pub coarse: Vec<Dvf>,
    /// The same fields upsampled to the image grid.
    pub fine: Vec<Dvf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionGradient {
    pub generator: Vec<f64>,
    /// Same layout as [`StateCoefficients::learned_flat`].
    pub learned: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionModel {
    pub image_dims: Dims,
    pub generator: BasisGenerator,
    pub coeff: StateCoefficients,
}

impl MotionModel {
    pub fn new(image_dims: Dims, generator: BasisGenerator, coeff: StateCoefficients) -> Result<Self> {
        let coarse = image_dims.scaled_down(COARSE_FACTOR)?;
        if generator.coarse_dims() != coarse {
            return Err(Error::ShapeMismatch(format!(
                "generator grid {:?}, image needs {:?}",
                generator.coarse_dims().as_array(),
                coarse.as_array()
            )));
        }
        if generator.n_bases() != coeff.n_bases() {
            return Err(Error::ShapeMismatch("basis and coefficient counts differ".into()));
        }
        Ok(Self { image_dims, generator, coeff })
    }

    pub fn n_states(&self) -> usize {
        self.coeff.n_states()
    }

    pub fn forward(&self) -> Result<MotionForward> {
        let (bases, tape) = self.generator.generate()?;
        let coarse = (0..self.n_states())
            .map(|i| state_dvf(&bases, &self.coeff, i))
            .collect::<Result<Vec<_>>>()?;
        let fine = coarse
            .par_iter()
            .map(|c| upsample_dvf(c, self.image_dims))
            .collect::<Result<Vec<_>>>()?;
        Ok(MotionForward { bases, tape, coarse, fine })
    }

    /// Gradients from per-state gradients on the coarse state DVFs.
    pub fn backward(&self, fwd: &MotionForward, grad_coarse: &[Dvf]) -> Result<MotionGradient> {
        let n = self.n_states();
        if grad_coarse.len() != n {
            return Err(Error::ShapeMismatch(format!("{} state gradients for {n} states", grad_coarse.len())));
        }
        let nb = fwd.bases.len();
        let mut grad_bases = MotionBases::zeros(fwd.bases.coarse_dims, nb);
        let mut learned = vec![0.0; n * (nb - 1)];
        for (i, g) in grad_coarse.iter().enumerate() {
            for b in 0..nb {
                let w = self.coeff.get(i, b) - self.coeff.get(0, b);
                if w != 0.0 {
                    grad_bases.bases[b].axpy(w, g)?;
                }
                if b > 0 && i > 0 {
                    let d = dot(&fwd.bases.bases[b], g);
                    learned[i * (nb - 1) + b - 1] += d;
                    learned[b - 1] -= d;
                }
            }
        }
        let generator = self.generator.backward(fwd.tape.as_ref(), &grad_bases)?;
        Ok(MotionGradient { generator, learned })
    }

    /// Per-state gradients on the fine DVFs pulled back to the coarse grid.
    pub fn coarse_gradients(&self, fine_grad: &[Dvf]) -> Result<Vec<Dvf>> {
        let coarse = self.generator.coarse_dims();
        fine_grad
            .par_iter()
            .map(|g| upsample_dvf_backward(g, coarse))
            .collect()
    }
}
