//! Ground-truth generation and the trajectory container.
//!
//! Container layout, integers little-endian:
//!
//! ```text
//! magic      8 bytes  "TSMTRAJ\0"
//! version    u32
//! meta_len   u32
//! meta       meta_len bytes of UTF-8 JSON (TrajectoryMeta)
//! frame × n_frames:
//!     values  components · nx · ny × f32, u_x block then u_y block, row-major
//!     crc32   u32 over the frame's value bytes
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classic_stencils::SchemeKind;
use crate::error::{Result, TsmError};
use crate::fvm2d::{FlowConfig, FluxProvider, Forcing, Projector, Solver2d};
use crate::grid::{
    cfl_timestep, downsample_velocity, relative_divergence, Grid, VelocityField, DEFAULT_CFL_SAFETY,
    DEFAULT_MAX_SPEED,
};
use crate::spectral::{fft2_in_place, signed_wavenumber};
use crate::stencil_net::Dims;

pub const CONTAINER_MAGIC: &[u8; 8] = b"TSMTRAJ\0";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_PEAK_WAVENUMBER: usize = 4;
pub const DEFAULT_IC_MAX_SPEED: f64 = 7.0;
pub const DEFAULT_WARMUP: f64 = 40.0;
/// Fine-grid DNS safety factor, half the coarse one.
pub const DEFAULT_FINE_CFL_SAFETY: f64 = 0.25;
/// Relative divergence above which stored frames are re-projected.
pub const FRAME_DIVERGENCE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub format_version: u32,
    pub dims: Dims,
    pub nx: usize,
    pub ny: usize,
    pub domain_x: f64,
    pub domain_y: f64,
    pub n_frames: usize,
    /// Time between stored frames.
    pub save_dt: f64,
    /// Step of the solver that produced the frames.
    pub solver_dt: f64,
    pub viscosity: f64,
    pub forcing: Forcing,
    pub seed: Option<u64>,
    /// Free-form producer tag, e.g. `dns-256/vanleer` or `tsm-hippo`.
    pub source: String,
    pub reprojected: bool,
}

impl TrajectoryMeta {
    pub fn for_flow(cfg: &FlowConfig, save_dt: f64) -> TrajectoryMeta {
        TrajectoryMeta {
            format_version: FORMAT_VERSION,
            dims: Dims::Two,
            nx: cfg.grid.nx,
            ny: cfg.grid.ny,
            domain_x: cfg.grid.domain_x,
            domain_y: cfg.grid.domain_y,
            n_frames: 0,
            save_dt,
            solver_dt: cfg.dt,
            viscosity: cfg.viscosity,
            forcing: cfg.forcing,
            seed: None,
            source: String::new(),
            reprojected: false,
        }
    }

    pub fn components(&self) -> usize {
        self.dims.components()
    }

    pub fn frame_len(&self) -> usize {
        self.components() * self.nx * self.ny
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.nx, self.ny, self.domain_x, self.domain_y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub frames: Vec<VelocityField>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.frames.len()).map(|k| k as f64 * self.meta.save_dt).collect()
    }

    pub fn grid(&self) -> Option<Grid> {
        self.frames.first().map(|f| f.grid)
    }

    pub fn flat_frames(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| f.to_flat()).collect()
    }

    pub fn from_flat(meta: TrajectoryMeta, frames: &[Vec<f64>]) -> Result<Trajectory> {
        let g = meta.grid()?;
        let frames = frames
            .iter()
            .map(|f| VelocityField::from_flat(g, f))
            .collect::<Result<Vec<_>>>()?;
        let mut meta = meta;
        meta.n_frames = frames.len();
        Ok(Trajectory { meta, frames })
    }
}

/// Serializes a container; `meta.n_frames` is overwritten with `frames.len()`.
pub fn encode_container(meta: &TrajectoryMeta, frames: &[Vec<f64>]) -> Result<Vec<u8>> {
    if frames.is_empty() {
        return Err(TsmError::format("refusing to write a container without frames"));
    }
    let mut meta = meta.clone();
    meta.n_frames = frames.len();
    meta.format_version = FORMAT_VERSION;
    let flen = meta.frame_len();
    let json = serde_json::to_vec(&meta).map_err(|e| TsmError::format(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + frames.len() * (4 * flen + 4));
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (k, f) in frames.iter().enumerate() {
        if f.len() != flen {
            return Err(TsmError::ShapeMismatch {
                expected: format!("{flen} values per frame"),
                got: format!("{} in frame {k}", f.len()),
            });
        }
        let start = out.len();
        for &v in f {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<(TrajectoryMeta, Vec<Vec<f64>>)> {
    let (meta, frames) = decode_container_f32(bytes)?;
    let frames = frames
        .into_iter()
        .map(|f| f.into_iter().map(f64::from).collect())
        .collect();
    Ok((meta, frames))
}

/// Decodes without widening, for datasets held in memory.
pub fn decode_container_f32(bytes: &[u8]) -> Result<(TrajectoryMeta, Vec<Vec<f32>>)> {
    if bytes.len() < 16 {
        return Err(TsmError::format("truncated header"));
    }
    if &bytes[..8] != CONTAINER_MAGIC {
        return Err(TsmError::format("not a trajectory container"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(TsmError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16 + mlen)
        .ok_or_else(|| TsmError::format("truncated metadata"))?;
    let meta: TrajectoryMeta =
        serde_json::from_slice(body).map_err(|e| TsmError::format(format!("metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(TsmError::Version {
            found: meta.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if meta.n_frames == 0 {
        return Err(TsmError::format("container has no frames"));
    }
    let flen = meta.frame_len();
    let stride = 4 * flen + 4;
    let payload = &bytes[16 + mlen..];
    if payload.len() != meta.n_frames * stride {
        return Err(TsmError::format(format!(
            "expected {} frame bytes, found {}",
            meta.n_frames * stride,
            payload.len()
        )));
    }
    let mut frames = Vec::with_capacity(meta.n_frames);
    for (k, chunk) in payload.chunks_exact(stride).enumerate() {
        let (vals, crc) = chunk.split_at(4 * flen);
        if crc32fast::hash(vals) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(TsmError::Checksum { frame: k });
        }
        frames.push(
            vals.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    Ok((meta, frames))
}

pub fn write_container(path: &Path, meta: &TrajectoryMeta, frames: &[Vec<f64>]) -> Result<()> {
    let bytes = encode_container(meta, frames)?;
    fs::write(path, bytes).map_err(|e| TsmError::io(path, e))
}

fn with_path(path: &Path) -> impl Fn(TsmError) -> TsmError + '_ {
    move |e| match e {
        TsmError::Format { msg, .. } => TsmError::Format {
            path: Some(path.to_path_buf()),
            msg,
        },
        other => other,
    }
}

pub fn read_container(path: &Path) -> Result<(TrajectoryMeta, Vec<Vec<f64>>)> {
    let bytes = fs::read(path).map_err(|e| TsmError::io(path, e))?;
    decode_container(&bytes).map_err(with_path(path))
}

pub fn read_container_f32(path: &Path) -> Result<(TrajectoryMeta, Vec<Vec<f32>>)> {
    let bytes = fs::read(path).map_err(|e| TsmError::io(path, e))?;
    decode_container_f32(&bytes).map_err(with_path(path))
}

/// Values are stored as 32-bit floats, so a round trip is exact only for
/// f32-representable fields.
pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_container(path, &traj.meta, &traj.flat_frames())
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let (meta, frames) = read_container(path)?;
    if meta.dims != Dims::Two {
        return Err(TsmError::Format {
            path: Some(path.to_path_buf()),
            msg: "expected a 2-D trajectory".into(),
        });
    }
    Trajectory::from_flat(meta, &frames)
}

/// Seeded band-limited random field, projected divergence-free and scaled so
/// that the largest face value has magnitude `max_speed`.
pub fn random_divfree_field(grid: Grid, seed: u64, peak_wavenumber: usize, max_speed: f64) -> Result<VelocityField> {
    if peak_wavenumber == 0 {
        return Err(TsmError::InvalidArgument("peak wavenumber must be at least 1".into()));
    }
    if !(max_speed > 0.0) {
        return Err(TsmError::InvalidArgument("max speed must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nx, ny) = (grid.nx, grid.ny);
    let k0 = peak_wavenumber as f64;
    // Physical wavenumbers on a non-2π domain scale by 2π/L.
    let (sx, sy) = (
        2.0 * std::f64::consts::PI / grid.domain_x,
        2.0 * std::f64::consts::PI / grid.domain_y,
    );
    let mut comps = Vec::with_capacity(2);
    for _ in 0..2 {
        let mut d: Vec<Complex64> = (0..nx * ny)
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
            .collect();
        fft2_in_place(&mut d, nx, ny, false);
        for j in 0..ny {
            let ky = signed_wavenumber(j, ny) as f64 * sy;
            for i in 0..nx {
                let kx = signed_wavenumber(i, nx) as f64 * sx;
                let r = (kx * kx + ky * ky).sqrt() / k0;
                d[j * nx + i] *= r * r * (-r * r).exp();
            }
        }
        fft2_in_place(&mut d, nx, ny, true);
        comps.push(d.iter().map(|z| z.re).collect::<Vec<f64>>());
    }
    let uy = comps.pop().unwrap();
    let ux = comps.pop().unwrap();
    let v = Projector::new(&grid).project(&VelocityField::new(grid, ux, uy)?);
    let m = v.max_abs();
    if m == 0.0 {
        return Err(TsmError::InvalidArgument("random field vanished; grid too coarse for peak".into()));
    }
    let s = max_speed / m;
    let mut v = v;
    for x in v.ux.iter_mut().chain(v.uy.iter_mut()) {
        *x *= s;
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub preset: String,
    pub fine: usize,
    pub coarse: usize,
    pub domain: f64,
    pub viscosity: f64,
    pub forcing: Forcing,
    pub n_train: usize,
    pub n_eval: usize,
    /// Recorded time after warmup.
    pub duration: f64,
    pub warmup: f64,
    pub seed: u64,
    pub scheme: SchemeKind,
    pub peak_wavenumber: usize,
    pub ic_max_speed: f64,
    /// CFL speed and safety factor of the coarse step, which is the save
    /// interval.
    pub cfl_speed: f64,
    pub cfl_safety: f64,
    /// Safety factor of the fine DNS step; `cfl_safety / fine_cfl_safety`
    /// must be an integer.
    #[serde(default = "default_fine_safety")]
    pub fine_cfl_safety: f64,
}

fn default_fine_safety() -> f64 {
    DEFAULT_FINE_CFL_SAFETY
}

pub const PRESETS: [&str; 4] = ["kolmogorov-re1000", "decaying-re1000", "kolmogorov-re4000", "kolmogorov-2x"];

impl DatasetSpec {
    pub fn preset(name: &str) -> Option<DatasetSpec> {
        let tau = 2.0 * std::f64::consts::PI;
        let base = DatasetSpec {
            preset: name.to_string(),
            fine: 256,
            coarse: 64,
            domain: tau,
            viscosity: 1e-3,
            forcing: Forcing::kolmogorov(),
            n_train: 16,
            n_eval: 8,
            duration: 30.0,
            warmup: DEFAULT_WARMUP,
            seed: 0,
            scheme: SchemeKind::VanLeer,
            peak_wavenumber: DEFAULT_PEAK_WAVENUMBER,
            ic_max_speed: DEFAULT_IC_MAX_SPEED,
            cfl_speed: DEFAULT_MAX_SPEED,
            cfl_safety: DEFAULT_CFL_SAFETY,
            fine_cfl_safety: DEFAULT_FINE_CFL_SAFETY,
        };
        match name {
            "kolmogorov-re1000" => Some(base),
            "decaying-re1000" => Some(DatasetSpec {
                forcing: Forcing::None,
                ..base
            }),
            // Re = U L / ν with the same U, L: ν = 1/4000.
            "kolmogorov-re4000" => Some(DatasetSpec {
                viscosity: 2.5e-4,
                ..base
            }),
            "kolmogorov-2x" => Some(DatasetSpec { domain: 2.0 * tau, ..base }),
            _ => None,
        }
    }

    pub fn factor(&self) -> Result<usize> {
        if self.coarse == 0 || self.fine % self.coarse != 0 {
            return Err(TsmError::InvalidArgument(format!(
                "fine resolution {} is not a multiple of coarse {}",
                self.fine, self.coarse
            )));
        }
        Ok(self.fine / self.coarse)
    }

    pub fn fine_grid(&self) -> Result<Grid> {
        Grid::new(self.fine, self.fine, self.domain, self.domain)
    }

    pub fn coarse_grid(&self) -> Result<Grid> {
        Grid::new(self.coarse, self.coarse, self.domain, self.domain)
    }

    pub fn fine_config(&self) -> Result<FlowConfig> {
        let g = self.fine_grid()?;
        FlowConfig::new(g, self.viscosity, self.forcing, cfl_timestep(&g, self.cfl_speed, self.fine_cfl_safety)?)
    }

    /// Coarse solver configuration whose step equals the save interval.
    pub fn coarse_config(&self) -> Result<FlowConfig> {
        FlowConfig::new(self.coarse_grid()?, self.viscosity, self.forcing, self.save_dt()?)
    }

    /// Save interval: the coarse CFL step.
    pub fn save_dt(&self) -> Result<f64> {
        cfl_timestep(&self.coarse_grid()?, self.cfl_speed, self.cfl_safety)
    }

    /// Fine steps per saved frame.
    pub fn steps_per_frame(&self) -> Result<usize> {
        let r = self.factor()? as f64 * self.cfl_safety / self.fine_cfl_safety;
        let n = r.round();
        if !(n >= 1.0) || (r - n).abs() > 1e-9 * n {
            return Err(TsmError::InvalidArgument(format!(
                "fine safety {} does not divide the save interval (ratio {r})",
                self.fine_cfl_safety
            )));
        }
        Ok(n as usize)
    }

    pub fn frames_per_trajectory(&self) -> Result<usize> {
        Ok((self.duration / self.save_dt()? + 1e-9).floor() as usize + 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps_per_frame()?;
        self.fine_config()?;
        self.coarse_config()?;
        if !(self.duration > 0.0) || self.warmup < 0.0 {
            return Err(TsmError::InvalidArgument("duration must be positive and warmup non-negative".into()));
        }
        if self.n_train + self.n_eval == 0 {
            return Err(TsmError::InvalidArgument("dataset needs at least one trajectory".into()));
        }
        Ok(())
    }

    /// Seed of trajectory `index` within `split`.
    pub fn trajectory_seed(&self, split: Split, index: usize) -> u64 {
        let s = match split {
            Split::Train => 0u64,
            Split::Eval => 1u64 << 32,
        };
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(s + index as u64 + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// Fine-grid DNS from a seeded initial condition, downsampled every save
/// interval after the warmup.
pub fn generate_trajectory(spec: &DatasetSpec, seed: u64) -> Result<Trajectory> {
    spec.validate()?;
    let fine = spec.fine_config()?;
    let factor = spec.factor()?;
    let per_frame = spec.steps_per_frame()?;
    let solver = Solver2d::new(fine)?;
    let provider = FluxProvider::Classic(spec.scheme);
    let mut v = random_divfree_field(fine.grid, seed, spec.peak_wavenumber, spec.ic_max_speed)?;
    let warm_steps = (spec.warmup / fine.dt).round() as usize;
    for s in 0..warm_steps {
        v = solver.step(&v, &provider, s)?;
    }
    let n_frames = spec.frames_per_trajectory()?;
    let mut frames = Vec::with_capacity(n_frames);
    frames.push(downsample_velocity(&v, factor)?);
    let mut s = warm_steps;
    for _ in 1..n_frames {
        for _ in 0..per_frame {
            v = solver.step(&v, &provider, s)?;
            s += 1;
        }
        frames.push(downsample_velocity(&v, factor)?);
    }
    let mut meta = TrajectoryMeta::for_flow(&spec.coarse_config()?, spec.save_dt()?);
    meta.solver_dt = fine.dt;
    meta.seed = Some(seed);
    meta.source = format!("dns-{}/{}", spec.fine, spec.scheme.name());
    meta.n_frames = frames.len();
    if frames.iter().any(|f| relative_divergence(f) > FRAME_DIVERGENCE_TOL) {
        let p = Projector::new(&frames[0].grid);
        for f in frames.iter_mut() {
            *f = p.project(f);
        }
        meta.reprojected = true;
    }
    Ok(Trajectory { meta, frames })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub n_frames: usize,
    /// `ok` or `unstable`.
    pub status: String,
    pub reprojected: bool,
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub spec: DatasetSpec,
    pub fine_dt: f64,
    pub save_dt: f64,
    pub frames_per_trajectory: usize,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes one container per trajectory plus `manifest.json` into `out`.
/// Trajectories that blow up are recorded as `unstable` and skipped.
pub fn generate_dataset(spec: &DatasetSpec, out: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| TsmError::io(out, e))?;
    let jobs: Vec<(Split, usize)> = (0..spec.n_train)
        .map(|i| (Split::Train, i))
        .chain((0..spec.n_eval).map(|i| (Split::Eval, i)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(split, index)| {
            let seed = spec.trajectory_seed(split, index);
            let file = format!("{}_{index:03}.tsm", split.name());
            let mut entry = ManifestEntry {
                file: file.clone(),
                split,
                index,
                seed,
                n_frames: 0,
                status: "ok".into(),
                reprojected: false,
                detail: None,
            };
            match generate_trajectory(spec, seed) {
                Ok(mut t) => {
                    t.meta.source = format!("{}:{}", spec.preset, t.meta.source);
                    save_trajectory(&t, &out.join(&file))?;
                    entry.n_frames = t.len();
                    entry.reprojected = t.meta.reprojected;
                }
                Err(e @ TsmError::NonFinite { .. }) => {
                    entry.status = "unstable".into();
                    entry.detail = Some(e.to_string());
                }
                Err(e) => return Err(e),
            }
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        fine_dt: spec.fine_config()?.dt,
        save_dt: spec.save_dt()?,
        frames_per_trajectory: spec.frames_per_trajectory()?,
        entries,
    };
    write_manifest(out, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, m: &DatasetManifest) -> Result<()> {
    let path = dir.join(MANIFEST_NAME);
    let s = serde_json::to_string_pretty(m).map_err(|e| TsmError::format(e.to_string()))?;
    fs::write(&path, s).map_err(|e| TsmError::io(path, e))
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_NAME);
    let s = fs::read_to_string(&path).map_err(|e| TsmError::io(&path, e))?;
    serde_json::from_str(&s).map_err(|e| TsmError::Format {
        path: Some(path),
        msg: e.to_string(),
    })
}

#[derive(Deserialize)]
struct EntryList {
    entries: Vec<ManifestEntry>,
}

/// Paths of the usable trajectories of one split, in index order. Works for
/// both 2-D and KS manifests.
pub fn split_paths(dir: &Path, split: Split) -> Result<Vec<PathBuf>> {
    let path = dir.join(MANIFEST_NAME);
    let s = fs::read_to_string(&path).map_err(|e| TsmError::io(&path, e))?;
    let m: EntryList = serde_json::from_str(&s).map_err(|e| TsmError::Format {
        path: Some(path.clone()),
        msg: e.to_string(),
    })?;
    let mut entries = m.entries;
    entries.sort_by_key(|e| e.index);
    Ok(entries
        .iter()
        .filter(|e| e.split == split && e.status == "ok")
        .map(|e| dir.join(&e.file))
        .collect())
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Trajectory>> {
    split_paths(dir, split)?.iter().map(|p| load_trajectory(p)).collect()
}
