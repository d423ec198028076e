//! Joint optimization of the Gaussian reference image and the motion model.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{DvfGenerator, ReconConfig, StateSchedule};
use crate::error::{Error, Result};
use crate::gating::MotionStateBins;
use crate::gaussian::{
    init_equal_space, init_multi_resolution, init_random, voxelize, voxelize_backward, CloudGradient, GaussianCloud,
    InitOptions, InitStrategy,
};
use crate::io;
use crate::motion::{
    warp, warp_backward, BasisGenerator, ConvDecoder, MotionGradient, MotionModel, StateCoefficients, COARSE_FACTOR,
};
use crate::nufft::KSpaceWeighting;
use crate::phantom::RadialKSpace;
use crate::recon::adam::Adam;
use crate::recon::data::DataProblem;
use crate::recon::losses::{phase_smoothness_loss, spatial_smoothness_loss, tv_loss};
use crate::volume::{ComplexVolume, Dvf, C64};

/// Smallest and largest Gaussian scale the optimizer may reach, voxels.
pub const MIN_TRAIN_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ReconModel {
    pub cloud: GaussianCloud,
    pub motion: MotionModel,
}

/// Objective components of one evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Zero for states not evaluated this iteration.
    pub data_per_state: Vec<f64>,
    pub data: f64,
    pub tv: f64,
    pub spatial: f64,
    pub phase: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, cfg: &ReconConfig) -> f64 {
        self.data_per_state.iter().sum::<f64>()
            + cfg.lambda_tv * self.tv
            + cfg.lambda_spatial * self.spatial
            + cfg.lambda_phase * self.phase
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub cloud: CloudGradient,
    pub motion: MotionGradient,
}

/// Reference volume, then each state's volume `warp(reference, u_t)`.
pub fn state_volumes(model: &ReconModel) -> Result<(ComplexVolume, Vec<ComplexVolume>, Vec<Dvf>)> {
    let x = voxelize(&model.cloud)?;
    let mf = model.motion.forward()?;
    let states = mf.fine.iter().map(|u| warp(&x, u)).collect::<Result<Vec<_>>>()?;
    Ok((x, states, mf.fine))
}

/// Full objective over `states`, with gradients on request.
pub fn objective(
    problem: &DataProblem,
    amplitudes: &[f64],
    model: &ReconModel,
    cfg: &ReconConfig,
    states: &[usize],
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    let n_states = problem.n_states();
    if model.motion.n_states() != n_states || amplitudes.len() != n_states {
        return Err(Error::ShapeMismatch(format!(
            "{n_states} data states, {} motion states, {} amplitudes",
            model.motion.n_states(),
            amplitudes.len()
        )));
    }
    let x = voxelize(&model.cloud)?;
    let mf = model.motion.forward()?;
    let mut out = LossBreakdown {
        data_per_state: vec![0.0; n_states],
        ..Default::default()
    };
    let mut grad_x = ComplexVolume::zeros(x.dims);
    let mut fine_grads = vec![Dvf::zeros(x.dims); n_states];
    for &t in states {
        let y = warp(&x, &mf.fine[t])?;
        let (l, gy) = problem.state_loss(t, &y, want_grad)?;
        out.data_per_state[t] = l;
        if let Some(gy) = gy {
            let (gx, gu) = warp_backward(&x, &mf.fine[t], &gy)?;
            grad_x.add_assign(&gx)?;
            fine_grads[t] = gu;
        }
    }
    out.data = out.data_per_state.iter().sum();

    let (tv, gtv) = tv_loss(&x)?;
    let (spatial, gs) = spatial_smoothness_loss(&mf.coarse)?;
    let (phase, gp) = phase_smoothness_loss(&mf.coarse, amplitudes)?;
    out.tv = tv;
    out.spatial = spatial;
    out.phase = phase;
    out.total = out.weighted_total(cfg);
    if !want_grad {
        return Ok((out, None));
    }

    for (g, t) in grad_x.data.iter_mut().zip(&gtv.data) {
        *g += t * cfg.lambda_tv;
    }
    let mut coarse = model.motion.coarse_gradients(&fine_grads)?;
    for ((c, s), p) in coarse.iter_mut().zip(&gs).zip(&gp) {
        c.axpy(cfg.lambda_spatial, s)?;
        c.axpy(cfg.lambda_phase, p)?;
    }
    let motion = model.motion.backward(&mf, &coarse)?;
    let cloud = voxelize_backward(&model.cloud, &grad_x)?;
    Ok((out, Some(Gradients { cloud, motion })))
}

/// Motion model for `cfg`: zero direct grids or a freshly seeded decoder,
/// with `α` from the state medians.
pub fn init_motion(cfg: &ReconConfig, medians: &[f64]) -> Result<MotionModel> {
    let dims = cfg.dims();
    let coarse = dims.scaled_down(COARSE_FACTOR)?;
    let generator = match cfg.dvf_generator {
        DvfGenerator::DirectGrid => BasisGenerator::direct_grid(coarse, cfg.n_bases),
        DvfGenerator::ConvDecoder => {
            // bases live on the coarse grid; the bound is given in image voxels
            let bound = cfg.max_displacement() / COARSE_FACTOR as f64;
            let decoder = ConvDecoder::table1(coarse, 3 * cfg.n_bases, bound, cfg.rng_seed.wrapping_add(1))?;
            BasisGenerator::conv_decoder(decoder, cfg.n_bases)?
        }
    };
    MotionModel::new(dims, generator, StateCoefficients::from_medians(medians, cfg.n_bases)?)
}

/// Initial cloud from the reference-state data, with densities rescaled to
/// best fit that state's samples.
pub fn init_cloud(cfg: &ReconConfig, problem: &DataProblem, kspace: &RadialKSpace) -> Result<GaussianCloud> {
    let opts = InitOptions {
        scale_multiplier: cfg.scale_multiplier,
        threshold: cfg.init_threshold,
    };
    let mut cloud = match cfg.init_strategy {
        InitStrategy::MultiResolution => {
            let state0 = kspace.select_spokes(&problem.states[0].spokes);
            init_multi_resolution(
                cfg.n_gaussians,
                &state0,
                &problem.coils,
                KSpaceWeighting::Ramp,
                cfg.nufft_method(),
                &opts,
            )?
        }
        InitStrategy::EqualSpace => init_equal_space(cfg.n_gaussians, &problem.adjoint_baseline(0)?, &opts)?,
        InitStrategy::Random => init_random(cfg.rng_seed, cfg.n_gaussians, &problem.adjoint_baseline(0)?, &opts)?,
    };
    let a = problem.best_scale(0, &voxelize(&cloud)?, true)?;
    cloud.scale_densities(a);
    Ok(cloud)
}

pub fn init_model(
    cfg: &ReconConfig,
    problem: &DataProblem,
    kspace: &RadialKSpace,
    bins: &MotionStateBins,
) -> Result<ReconModel> {
    Ok(ReconModel {
        cloud: init_cloud(cfg, problem, kspace)?,
        motion: init_motion(cfg, &bins.medians)?,
    })
}

/// One Adam group per parameter type: densities, scales and rotations for
/// the Gaussians; generator weights and learned coefficients for motion.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub rho: Adam,
    pub scale: Adam,
    pub rot: Adam,
    pub motion: Adam,
    pub coeff: Adam,
}

impl Optimizers {
    pub fn new(cfg: &ReconConfig, model: &ReconModel) -> Self {
        let m = model.cloud.len();
        Self {
            rho: Adam::new("rho", cfg.lr_rho, 2 * m),
            scale: Adam::new("log_scale", cfg.lr_scale, 3 * m),
            rot: Adam::new("rotation", cfg.lr_rot, 4 * m),
            motion: Adam::new("motion_generator", cfg.lr_motion, model.motion.generator.params().len()),
            coeff: Adam::new("motion_coefficients", cfg.lr_motion, model.motion.coeff.learned_flat().len()),
        }
    }

    pub fn apply(&mut self, model: &mut ReconModel, g: &Gradients) -> Result<()> {
        let cloud = &mut model.cloud;
        let mut rho: Vec<f64> = cloud.rho.iter().flat_map(|z| [z.re, z.im]).collect();
        let grho: Vec<f64> = g.cloud.rho.iter().flat_map(|z| [z.re, z.im]).collect();
        self.rho.update(&mut rho, &grho)?;
        for (z, p) in cloud.rho.iter_mut().zip(rho.chunks(2)) {
            z.re = p[0];
            z.im = p[1];
        }
        self.scale
            .update(cloud.log_scales.as_flattened_mut(), g.cloud.log_scales.as_flattened())?;
        let hi = cloud.dims.as_array().into_iter().min().unwrap_or(1) as f64 / 4.0;
        let (lo, hi) = (MIN_TRAIN_SCALE.ln(), hi.max(MIN_TRAIN_SCALE).ln());
        for l in cloud.log_scales.as_flattened_mut() {
            *l = l.clamp(lo, hi);
        }
        self.rot
            .update(cloud.rotations.as_flattened_mut(), g.cloud.rotations.as_flattened())?;

        let mut p = model.motion.generator.params();
        self.motion.update(&mut p, &g.motion.generator)?;
        model.motion.generator.set_params(&p)?;
        let mut c = model.motion.coeff.learned_flat();
        self.coeff.update(&mut c, &g.motion.learned)?;
        model.motion.coeff.set_learned_flat(&c)
    }
}

/// Training state: model, optimizers and history.
pub struct Trainer<'a> {
    pub cfg: ReconConfig,
    pub problem: &'a DataProblem,
    pub amplitudes: Vec<f64>,
    pub model: ReconModel,
    pub optimizers: Optimizers,
    pub history: Vec<LossBreakdown>,
    /// Factor taking the model's densities back to data units.
    pub intensity: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &ReconConfig, problem: &'a DataProblem, amplitudes: &[f64], model: ReconModel) -> Self {
        Self {
            optimizers: Optimizers::new(cfg, &model),
            cfg: cfg.clone(),
            problem,
            amplitudes: amplitudes.to_vec(),
            model,
            history: Vec::new(),
            intensity: 1.0,
        }
    }

    /// The model with densities in data units.
    pub fn data_units(&self) -> ReconModel {
        let mut m = self.model.clone();
        m.cloud.scale_densities(C64::new(self.intensity, 0.0));
        m
    }

    pub fn iteration(&self) -> usize {
        self.history.len()
    }

    fn active_states(&self) -> Vec<usize> {
        match self.cfg.state_schedule {
            StateSchedule::FullBatch => (0..self.problem.n_states()).collect(),
            StateSchedule::Cycle => vec![self.iteration() % self.problem.n_states()],
        }
    }

    /// Evaluates the objective, records it, checks for divergence and
    /// applies one update to every parameter group.
    pub fn step(&mut self) -> Result<&LossBreakdown> {
        let states = self.active_states();
        let (loss, grads) = objective(self.problem, &self.amplitudes, &self.model, &self.cfg, &states, true)?;
        if let Some(first) = self.history.first() {
            if !(loss.total <= self.cfg.divergence_factor * first.total) {
                return Err(Error::Diverged {
                    iteration: self.iteration(),
                    loss: loss.total,
                    initial: first.total,
                });
            }
        }
        let grads = grads.expect("gradients were requested");
        self.optimizers.apply(&mut self.model, &grads)?;
        self.history.push(loss);
        Ok(self.history.last().expect("just pushed"))
    }

    /// Runs `n_iterations`, checkpointing into `out/checkpoints` when given.
    pub fn run(&mut self, out: Option<&Path>) -> Result<()> {
        self.run_with(out, &mut |_, _| {})
    }

    /// As `run`, calling `on_step(iteration, loss)` after every update.
    pub fn run_with(&mut self, out: Option<&Path>, on_step: &mut dyn FnMut(usize, &LossBreakdown)) -> Result<()> {
        let every = self.cfg.checkpoint_every;
        for _ in 0..self.cfg.n_iterations {
            let loss = self.step()?.clone();
            on_step(self.iteration() - 1, &loss);
            if let Some(dir) = out {
                if every > 0 && self.iteration() % every == 0 {
                    write_checkpoint(dir, self.iteration(), &self.data_units())?;
                }
            }
        }
        Ok(())
    }
}

pub fn write_checkpoint(dir: &Path, iteration: usize, model: &ReconModel) -> Result<()> {
    let ck = dir.join("checkpoints");
    fs::create_dir_all(&ck)?;
    io::write_cloud(&ck.join(format!("cloud_{iteration:06}.gspc")), &model.cloud)?;
    io::write_motion(&ck.join(format!("motion_{iteration:06}.gsmm")), &model.motion)
}

/// `iteration,data,tv,spatial,phase,total` with round-trip float formatting.
pub fn loss_history_csv(history: &[LossBreakdown]) -> String {
    let mut s = String::from("iteration,data,tv,spatial,phase,total\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(s, "{i},{:e},{:e},{:e},{:e},{:e}", l.data, l.tv, l.spatial, l.phase, l.total);
    }
    s
}

/// Final reference and per-state volumes, DVFs and the loss history.
pub fn write_outputs(dir: &Path, model: &ReconModel, history: &[LossBreakdown]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (x, states, dvfs) = state_volumes(model)?;
    io::write_volume(&dir.join("reference.gsmr"), &x)?;
    for (i, (v, u)) in states.iter().zip(&dvfs).enumerate() {
        io::write_volume(&dir.join(format!("state_{i}.gsmr")), v)?;
        io::write_dvf(&dir.join(format!("dvf_{i}.bin")), u)?;
    }
    fs::write(dir.join("loss_history.csv"), loss_history_csv(history))?;
    write_checkpoint(dir, history.len(), model)
}

/// Everything `train` produces.
pub struct TrainOutput {
    pub model: ReconModel,
    pub history: Vec<LossBreakdown>,
    /// Density-compensated adjoint of the reference-state data.
    pub baseline: ComplexVolume,
}

/// Builds the problem, initializes, trains and (optionally) writes outputs.
pub fn train(
    cfg: &ReconConfig,
    kspace: &RadialKSpace,
    bins: &MotionStateBins,
    coils: &crate::phantom::CoilSet,
    out: Option<&Path>,
) -> Result<TrainOutput> {
    train_with(cfg, kspace, bins, coils, out, &mut |_, _| {})
}

pub fn train_with(
    cfg: &ReconConfig,
    kspace: &RadialKSpace,
    bins: &MotionStateBins,
    coils: &crate::phantom::CoilSet,
    out: Option<&Path>,
    on_step: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<TrainOutput> {
    cfg.validate()?;
    if coils.dims() != cfg.dims() {
        return Err(Error::ShapeMismatch(format!(
            "coil maps are {:?}, config grid is {}",
            coils.dims().as_array(),
            cfg.grid_size
        )));
    }
    if bins.n_states != cfg.n_states {
        return Err(Error::ShapeMismatch(format!(
            "{} binned states, config asks for {}",
            bins.n_states, cfg.n_states
        )));
    }
    let mut problem = DataProblem::new(kspace, bins, coils, cfg.kspace_weighting, cfg.nufft_method())?;
    let baseline = problem.adjoint_baseline(0)?;
    let mut model = init_model(cfg, &problem, kspace, bins)?;
    // The learning rates are absolute, so train with the largest initial
    // density at unit magnitude.
    let peak = model.cloud.rho.iter().fold(0.0_f64, |a, r| a.max(r.norm()));
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::InvalidArgument("initial densities are all zero".into()));
    }
    problem.scale_measurements(1.0 / peak);
    model.cloud.scale_densities(C64::new(1.0 / peak, 0.0));
    let mut trainer = Trainer::new(cfg, &problem, &bins.medians, model);
    trainer.intensity = peak;
    trainer.run_with(out, on_step)?;
    let model = trainer.data_units();
    if let Some(dir) = out {
        write_outputs(dir, &model, &trainer.history)?;
        io::write_volume(&dir.join("baseline_adjoint.gsmr"), &baseline)?;
    }
    Ok(TrainOutput {
        model,
        history: trainer.history,
        baseline,
    })
}
