use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gsmr_core::config::{ReconConfig, SimConfig, PRESETS};
use gsmr_core::eval::{
    evaluate, gray_png, write_slice_png, EvalOptions, MetricDomain, Plane, RoiSet, StateSet, VoxelColumn,
};
use gsmr_core::gating::MotionStateBins;
use gsmr_core::io;
use gsmr_core::nufft::{Nufft, NufftMethod};
use gsmr_core::phantom::{golden_angle_trajectory, PhantomScene};
use gsmr_core::pipeline::{self, GATING_CUTOFF_HZ};
use gsmr_core::recon::train_with;
use gsmr_core::{ComplexVolume, Dims, C64};

#[derive(Parser)]
#[command(name = "gsmr", version, about = "Motion-resolved radial MRI reconstruction with 3D Gaussians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the breathing phantom and write k-space plus ground truth.
    Simulate {
        /// SimConfig JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-gate a k-space file into motion states.
    Gate {
        /// kspace.bin; trajectory.bin must sit next to it.
        #[arg(long)]
        kspace: PathBuf,
        #[arg(long)]
        states: usize,
        #[arg(long, default_value_t = GATING_CUTOFF_HZ)]
        cutoff_hz: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the reference image and motion model.
    Reconstruct {
        /// ReconConfig JSON.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Named configuration, see `gsmr presets`.
        #[arg(long)]
        preset: Option<String>,
        /// Directory holding kspace.bin, trajectory.bin and coils.gsmr.
        #[arg(long)]
        kspace: PathBuf,
        /// Precomputed bins.json; self-gating is run when omitted.
        #[arg(long)]
        bins: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a reconstruction with ground truth and write report.csv.
    Evaluate {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        rois: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Measure SNR and CNR over the whole volume instead of one slice.
        #[arg(long)]
        volumetric: bool,
        /// Coronal slice for SNR and CNR; the central one by default.
        #[arg(long)]
        slice: Option<usize>,
        /// Also write the diaphragm profile image here.
        #[arg(long)]
        profile_png: Option<PathBuf>,
    },
    /// Render one slice of a volume as an 8-bit PNG.
    Render {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long, default_value = "coronal")]
        plane: String,
        #[arg(long)]
        slice: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the direct and gridding NUFFT and print CSV.
    NufftBench {
        #[arg(long, default_value_t = 32)]
        grid: usize,
        #[arg(long, default_value_t = 200)]
        spokes: usize,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the named reconstruction configurations.
    Presets,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Simulate { config, out } => simulate(config.as_deref(), &out),
        Command::Gate {
            kspace,
            states,
            cutoff_hz,
            out,
        } => gate(&kspace, states, cutoff_hz, &out),
        Command::Reconstruct {
            config,
            preset,
            kspace,
            bins,
            out,
        } => reconstruct(config.as_deref(), preset.as_deref(), &kspace, bins.as_deref(), &out),
        Command::Evaluate {
            recon,
            truth,
            rois,
            out,
            volumetric,
            slice,
            profile_png,
        } => evaluate_cmd(&recon, &truth, &rois, &out, volumetric, slice, profile_png.as_deref()),
        Command::Render {
            volume,
            plane,
            slice,
            out,
        } => render(&volume, &plane, slice, &out),
        Command::NufftBench {
            grid,
            spokes,
            samples,
            seed,
        } => nufft_bench(grid, spokes, samples, seed),
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(())
        }
    }
}

fn simulate(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => SimConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => SimConfig::default(),
    };
    let t = Instant::now();
    let sim = pipeline::simulate(&cfg)?;
    pipeline::write_simulation(out, &sim)?;
    let dims = cfg.dims();
    RoiSet::from_scene(&sim.scene, sim.truth_amplitudes[0], dims)?.save(&out.join("rois.json"))?;
    fs::write(out.join("bins.json"), serde_json::to_string_pretty(&sim.bins)?)?;
    info!(
        "simulated {} spokes x {} coils on {}^3 in {:.1?}; wrote {}",
        cfg.n_spokes,
        sim.kspace.n_coils,
        cfg.grid_size,
        t.elapsed(),
        out.display()
    );
    Ok(())
}

fn kspace_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn gate(kspace: &Path, states: usize, cutoff_hz: f64, out: &Path) -> Result<()> {
    let k = io::read_radial_kspace(kspace_dir(kspace))?;
    let (sig, bins) = pipeline::gate(&k, states, cutoff_hz)?;
    fs::write(out, serde_json::to_string_pretty(&bins)?)?;
    let counts: Vec<usize> = bins.states.iter().map(Vec::len).collect();
    info!(
        "{} spokes over {:.1} s into {states} states {counts:?}",
        k.n_spokes(),
        sig.len() as f64 * sig.tr
    );
    Ok(())
}

fn reconstruct(
    config: Option<&Path>,
    preset: Option<&str>,
    dir: &Path,
    bins: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = match (config, preset) {
        (Some(p), _) => ReconConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(name)) => ReconConfig::preset(name)?,
        (None, None) => ReconConfig::default(),
    };
    cfg.validate()?;
    let k = io::read_radial_kspace(dir)?;
    let coils = io::read_coils(&dir.join("coils.gsmr"))?;
    let bins: MotionStateBins = match bins {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => pipeline::gate(&k, cfg.n_states, cfg.gating_cutoff_hz)?.1,
    };
    fs::create_dir_all(out)?;
    cfg.save(&out.join("config.json"))?;
    fs::write(out.join("bins.json"), serde_json::to_string_pretty(&bins)?)?;
    let t = Instant::now();
    let every = cfg.checkpoint_every.max(1);
    let mut log_step = |i: usize, l: &gsmr_core::recon::LossBreakdown| {
        if i % every == 0 || i + 1 == cfg.n_iterations {
            info!(
                "iteration {i}: total {:.4e} data {:.4e} tv {:.4e} spatial {:.4e} phase {:.4e} ({:.0?})",
                l.total,
                l.data,
                l.tv,
                l.spatial,
                l.phase,
                t.elapsed()
            );
        }
    };
    train_with(&cfg, &k, &bins, &coils, Some(out), &mut log_step)?;
    info!("wrote {}", out.display());
    Ok(())
}

/// `<prefix>0<suffix>`, `<prefix>1<suffix>`, ... until one is missing.
fn numbered(dir: &Path, prefix: &str, suffix: &str) -> Vec<PathBuf> {
    (0..)
        .map(|i| dir.join(format!("{prefix}{i}{suffix}")))
        .take_while(|p| p.exists())
        .collect()
}

fn evaluate_cmd(
    recon: &Path,
    truth: &Path,
    rois: &Path,
    out: &Path,
    volumetric: bool,
    slice: Option<usize>,
    profile_png: Option<&Path>,
) -> Result<()> {
    let read_set = |dir: &Path, vol: &str, dvf: &str| -> Result<StateSet> {
        let volumes = numbered(dir, vol, ".gsmr")
            .iter()
            .map(|p| io::read_volume(p))
            .collect::<gsmr_core::Result<Vec<_>>>()?;
        let dvf_paths = numbered(dir, dvf, ".bin");
        let dvfs = if !volumes.is_empty() && dvf_paths.len() == volumes.len() {
            Some(dvf_paths.iter().map(|p| io::read_dvf(p)).collect::<gsmr_core::Result<_>>()?)
        } else {
            None
        };
        Ok(StateSet { volumes, dvfs })
    };
    let recon_set = read_set(recon, "state_", "dvf_")?;
    let truth_set = read_set(truth, "truth_state_", "truth_dvf_")?;
    if recon_set.volumes.is_empty() {
        bail!("no state_<i>.gsmr files in {}", recon.display());
    }
    let rois = RoiSet::load(rois)?;
    let dims = rois.dims;
    let domain = if volumetric {
        MetricDomain::Volume
    } else {
        MetricDomain::Slice {
            plane: Plane::Coronal,
            index: slice.unwrap_or(dims.ny / 2),
        }
    };
    let scene_path = truth.join("scene.json");
    let mut opts = EvalOptions {
        domain,
        column: None,
        reference_displacement: None,
        motion_mask: None,
    };
    if scene_path.exists() {
        let scene: PhantomScene = serde_json::from_str(&fs::read_to_string(&scene_path)?)?;
        opts.column = Some(VoxelColumn::through_diaphragm(&scene, dims)?);
        let amps_path = truth.join("truth_amplitudes.json");
        if amps_path.exists() {
            let amps: Vec<f64> = serde_json::from_str(&fs::read_to_string(amps_path)?)?;
            let a0 = amps.first().copied().unwrap_or(0.0);
            opts.reference_displacement =
                Some(amps.iter().map(|a| (a - a0) * scene.diaphragm_amplitude).collect());
        }
    }
    let report = evaluate(&recon_set, &truth_set, &rois, &opts)?;
    report.write_csv(out)?;
    for r in report.flagged() {
        log::warn!("{} {} state {:?} is {}", r.metric, r.roi, r.state, r.value);
    }
    if let (Some(png), Some(col)) = (profile_png, opts.column) {
        let prof = gsmr_core::eval::diaphragm_profile(&recon_set.volumes, col)?;
        fs::write(png, gray_png(prof.n_states, col.len(), &prof.image)?)?;
    }
    info!("{} metrics written to {}", report.rows.len(), out.display());
    Ok(())
}

fn render(volume: &Path, plane: &str, slice: Option<usize>, out: &Path) -> Result<()> {
    let v = io::read_volume(volume)?;
    let plane: Plane = plane.parse()?;
    let index = slice.unwrap_or(v.dims.as_array()[plane.axis()] / 2);
    write_slice_png(out, &v, plane, index)?;
    Ok(())
}

fn nufft_bench(grid: usize, spokes: usize, samples: Option<usize>, seed: u64) -> Result<()> {
    let dims = Dims::cube(grid);
    let traj = golden_angle_trajectory(spokes, samples.unwrap_or(grid / 2 + 1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = ComplexVolume::from_fn(dims, |_, _, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let time = |method: NufftMethod| -> Result<(Vec<C64>, f64)> {
        let t = Instant::now();
        let op = Nufft::new(dims, &traj.k, method)?;
        let out = op.forward(&v)?;
        Ok((out, t.elapsed().as_secs_f64()))
    };
    let (exact, t_direct) = time(NufftMethod::Direct)?;
    let (approx, t_grid) = time(NufftMethod::default())?;
    let num: f64 = exact.iter().zip(&approx).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = exact.iter().map(|a| a.norm_sqr()).sum();
    println!("path,grid,spokes,seconds,rel_err");
    println!("direct,{grid},{spokes},{t_direct:.6},0");
    println!("gridding,{grid},{spokes},{t_grid:.6},{:e}", (num / den).sqrt());
    Ok(())
}
