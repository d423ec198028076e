//! Little-endian binary formats for volumes, DVFs, k-space, trajectories,
//! coil maps and training checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::motion::MotionModel;
use crate::phantom::{CoilSet, RadialKSpace, RadialTrajectory};
use crate::volume::{ComplexVolume, Dims, Dvf, RealVolume, C64};

pub const VOLUME_MAGIC: &[u8; 4] = b"GSMR";
pub const KSPACE_MAGIC: &[u8; 4] = b"GSMK";
pub const TRAJECTORY_MAGIC: &[u8; 4] = b"GSMT";
pub const COILS_MAGIC: &[u8; 4] = b"GSMC";
pub const CLOUD_MAGIC: &[u8; 4] = b"GSPC";
pub const MOTION_MAGIC: &[u8; 4] = b"GSMM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn magic(&mut self, m: &[u8; 4]) {
        self.0.extend_from_slice(m);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn dims(&mut self, d: Dims) {
        self.magic(VOLUME_MAGIC);
        self.u32(d.nx);
        self.u32(d.ny);
        self.u32(d.nz);
    }
    fn volume(&mut self, v: &ComplexVolume) {
        self.dims(v.dims);
        for z in &v.data {
            self.f32(z.re);
            self.f32(z.im);
        }
    }
    fn save(self, path: &Path) -> Result<()> {
        fs::write(path, self.0)?;
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &Path) -> Self {
        Self {
            buf,
            pos: 0,
            path: path.to_path_buf(),
        }
    }
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            path: self.path.clone(),
            reason: reason.into(),
        })
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return self.fail(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn magic(&mut self, m: &[u8; 4]) -> Result<()> {
        if self.take(4)? != m {
            return self.fail(format!("expected magic {:?}", String::from_utf8_lossy(m)));
        }
        Ok(())
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn dims(&mut self) -> Result<Dims> {
        self.magic(VOLUME_MAGIC)?;
        let d = Dims::new(self.u32()?, self.u32()?, self.u32()?);
        if d.validate().is_err() {
            return self.fail(format!("bad dims {:?}", d.as_array()));
        }
        Ok(d)
    }
    fn volume(&mut self) -> Result<ComplexVolume> {
        let dims = self.dims()?;
        let mut data = Vec::with_capacity(dims.len());
        for _ in 0..dims.len() {
            data.push(C64::new(self.f32()?, self.f32()?));
        }
        ComplexVolume::from_data(dims, data)
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return self.fail(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path)?)
}

/// 16-byte header then float32 (re, im) pairs, z fastest.
pub fn write_volume(path: &Path, v: &ComplexVolume) -> Result<()> {
    let mut w = Writer::default();
    w.volume(v);
    w.save(path)
}

pub fn read_volume(path: &Path) -> Result<ComplexVolume> {
    let buf = read(path)?;
    let mut r = Reader::new(&buf, path);
    let v = r.volume()?;
    r.finish()?;
    Ok(v)
}

/// Volume header, channel count, then float32 values channel by channel.
pub fn write_dvf(path: &Path, dvf: &Dvf) -> Result<()> {
    let mut w = Writer::default();
    w.dims(dvf.dims());
    w.u32(3);
    for c in &dvf.components {
        for v in &c.data {
            w.f32(*v);
        }
    }
    w.save(path)
}

pub fn read_dvf(path: &Path) -> Result<Dvf> {
    let buf = read(path)?;
    let mut r = Reader::new(&buf, path);
    let dims = r.dims()?;
    if r.u32()? != 3 {
        return r.fail("DVF files carry 3 channels");
    }
    let mut comps = Vec::with_capacity(3);
    for _ in 0..3 {
        let data = (0..dims.len()).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        comps.push(RealVolume { dims, data });
    }
    r.finish()?;
    let [x, y, z]: [RealVolume; 3] = comps.try_into().unwrap();
    Ok(Dvf { components: [x, y, z] })
}

/// Header (coils, spokes, samples) then float32 pairs, coil-major.
pub fn write_kspace(path: &Path, k: &RadialKSpace) -> Result<()> {
    let mut w = Writer::default();
    w.magic(KSPACE_MAGIC);
    w.u32(k.n_coils);
    w.u32(k.n_spokes());
    w.u32(k.samples_per_spoke());
    for z in &k.data {
        w.f32(z.re);
        w.f32(z.im);
    }
    w.save(path)
}

/// Samples only; the trajectory is stored separately.
pub fn read_kspace_data(path: &Path) -> Result<(usize, usize, usize, Vec<C64>)> {
    let buf = read(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(KSPACE_MAGIC)?;
    let (coils, spokes, samples) = (r.u32()?, r.u32()?, r.u32()?);
    let n = coils * spokes * samples;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(C64::new(r.f32()?, r.f32()?));
    }
    r.finish()?;
    Ok((coils, spokes, samples, data))
}

/// Header (spokes, samples, TR) then float64 k triples.
pub fn write_trajectory(path: &Path, t: &RadialTrajectory) -> Result<()> {
    let mut w = Writer::default();
    w.magic(TRAJECTORY_MAGIC);
    w.u32(t.n_spokes);
    w.u32(t.samples_per_spoke);
    w.f64(t.tr);
    for k in &t.k {
        k.iter().for_each(|v| w.f64(*v));
    }
    w.save(path)
}

pub fn read_trajectory(path: &Path) -> Result<RadialTrajectory> {
    let buf = read(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(TRAJECTORY_MAGIC)?;
    let (n_spokes, samples_per_spoke, tr) = (r.u32()?, r.u32()?, r.f64()?);
    let mut k = Vec::with_capacity(n_spokes * samples_per_spoke);
    for _ in 0..n_spokes * samples_per_spoke {
        k.push([r.f64()?, r.f64()?, r.f64()?]);
    }
    r.finish()?;
    Ok(RadialTrajectory {
        n_spokes,
        samples_per_spoke,
        tr,
        k,
    })
}

/// Writes `kspace.bin` and `trajectory.bin` into `dir`.
pub fn write_radial_kspace(dir: &Path, k: &RadialKSpace) -> Result<()> {
    write_kspace(&dir.join("kspace.bin"), k)?;
    write_trajectory(&dir.join("trajectory.bin"), &k.trajectory)
}

pub fn read_radial_kspace(dir: &Path) -> Result<RadialKSpace> {
    let traj = read_trajectory(&dir.join("trajectory.bin"))?;
    let path = dir.join("kspace.bin");
    let (coils, spokes, samples, data) = read_kspace_data(&path)?;
    if spokes != traj.n_spokes || samples != traj.samples_per_spoke {
        return Err(Error::Format {
            path,
            reason: "k-space and trajectory shapes differ".into(),
        });
    }
    RadialKSpace::new(traj, coils, data)
}

/// Coil count then one volume record per coil.
pub fn write_coils(path: &Path, coils: &CoilSet) -> Result<()> {
    let mut w = Writer::default();
    w.magic(COILS_MAGIC);
    w.u32(coils.n_coils());
    for m in &coils.maps {
        w.volume(m);
    }
    w.save(path)
}

pub fn read_coils(path: &Path) -> Result<CoilSet> {
    let buf = read(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(COILS_MAGIC)?;
    let n = r.u32()?;
    let maps = (0..n).map(|_| r.volume()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    CoilSet::new(maps)
}

/// Gaussian cloud checkpoint: version, grid, count, then per Gaussian the
/// float64 record position(3), rho(2), log-scale(3), quaternion(4).
pub fn write_cloud(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    let mut w = Writer::default();
    w.magic(CLOUD_MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);
    w.dims(cloud.dims);
    w.u32(cloud.len());
    for i in 0..cloud.len() {
        cloud.positions[i].iter().for_each(|v| w.f64(*v));
        w.f64(cloud.rho[i].re);
        w.f64(cloud.rho[i].im);
        cloud.log_scales[i].iter().for_each(|v| w.f64(*v));
        cloud.rotations[i].iter().for_each(|v| w.f64(*v));
    }
    w.save(path)
}

pub fn read_cloud(path: &Path) -> Result<GaussianCloud> {
    let buf = read(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(CLOUD_MAGIC)?;
    if r.u32()? != CHECKPOINT_VERSION as usize {
        return r.fail("unsupported cloud checkpoint version");
    }
    let dims = r.dims()?;
    let m = r.u32()?;
    let mut cloud = GaussianCloud {
        dims,
        positions: Vec::with_capacity(m),
        rho: Vec::with_capacity(m),
        log_scales: Vec::with_capacity(m),
        rotations: Vec::with_capacity(m),
    };
    for _ in 0..m {
        cloud.positions.push([r.f64()?, r.f64()?, r.f64()?]);
        cloud.rho.push(C64::new(r.f64()?, r.f64()?));
        cloud.log_scales.push([r.f64()?, r.f64()?, r.f64()?]);
        cloud.rotations.push([r.f64()?, r.f64()?, r.f64()?, r.f64()?]);
    }
    r.finish()?;
    Ok(cloud)
}

/// Motion checkpoint: version, generator parameters (decoder weights or
/// direct grids), then the fixed and learned per-state coefficients.
pub fn write_motion(path: &Path, model: &MotionModel) -> Result<()> {
    let mut w = Writer::default();
    w.magic(MOTION_MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);
    let params = model.generator.params();
    w.u32(params.len());
    params.iter().for_each(|v| w.f64(*v));
    w.u32(model.coeff.n_states());
    w.u32(model.coeff.n_bases());
    model.coeff.alpha.iter().for_each(|v| w.f64(*v));
    model.coeff.learned_flat().iter().for_each(|v| w.f64(*v));
    w.save(path)
}

/// Restores parameters into a model of the same architecture.
pub fn read_motion_into(path: &Path, model: &mut MotionModel) -> Result<()> {
    let buf = read(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(MOTION_MAGIC)?;
    if r.u32()? != CHECKPOINT_VERSION as usize {
        return r.fail("unsupported motion checkpoint version");
    }
    let n = r.u32()?;
    if n != model.generator.params().len() {
        return r.fail(format!("{n} generator parameters, model has {}", model.generator.params().len()));
    }
    let params = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let (states, bases) = (r.u32()?, r.u32()?);
    if states != model.coeff.n_states() || bases != model.coeff.n_bases() {
        return r.fail("state or basis count differs from the model");
    }
    let alpha = (0..states).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let learned = (0..states * (bases - 1)).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    model.generator.set_params(&params)?;
    model.coeff.alpha = alpha;
    model.coeff.set_learned_flat(&learned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::golden_angle_trajectory;

    #[test]
    fn volume_header_is_sixteen_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.gsmr");
        let v = ComplexVolume::from_fn(Dims::new(2, 3, 4), |x, y, z| C64::new(x as f64, (y * z) as f64 - 0.5));
        write_volume(&p, &v).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"GSMR");
        assert_eq!(bytes[4..8], 2u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24 * 8);
        assert_eq!(read_volume(&p).unwrap(), v);
    }

    #[test]
    fn kspace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let traj = golden_angle_trajectory(5, 4).unwrap();
        let data = (0..2 * 20).map(|i| C64::new(i as f64, -(i as f64) / 4.0)).collect();
        let k = RadialKSpace::new(traj, 2, data).unwrap();
        write_radial_kspace(dir.path(), &k).unwrap();
        assert_eq!(read_radial_kspace(dir.path()).unwrap(), k);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.gsmr");
        write_volume(&p, &ComplexVolume::zeros(Dims::cube(2))).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Format { .. })));
    }
}
