//! Solver setup from trajectory metadata and dataset loading.

use std::path::{Path, PathBuf};

use tsm_core::classic_stencils::SchemeKind;
use tsm_core::datagen::{read_container_f32, split_paths, Split, TrajectoryMeta, MANIFEST_NAME};
use tsm_core::fvm2d::FlowConfig;
use tsm_core::grid::{vorticity, VelocityField};
use tsm_core::ks1d::{KsConfig, KsIntegrator, KsScheme};
use tsm_core::metrics::{pearson, pearson_correlation};
use tsm_core::stencil_net::Dims;
use tsm_core::train::{FlowPhysics, KsPhysics};
use tsm_core::TsmError;

use crate::config::usage;

pub enum Phys {
    Flow(FlowPhysics),
    Ks(KsPhysics),
}

/// Runs `$body` with `$p` bound to the concrete physics.
macro_rules! with_physics {
    ($phys:expr, $p:ident => $body:expr) => {
        match $phys {
            $crate::session::Phys::Flow($p) => $body,
            $crate::session::Phys::Ks($p) => $body,
        }
    };
}
pub(crate) use with_physics;

pub fn parse_scheme(s: &str) -> anyhow::Result<SchemeKind> {
    SchemeKind::parse(s).ok_or_else(|| usage(format!("unknown scheme `{s}`; expected linear, upwind, weno5 or vanleer")))
}

/// Coarse solver whose step is the trajectory's save interval.
pub fn physics_for(meta: &TrajectoryMeta, scheme: SchemeKind) -> anyhow::Result<Phys> {
    Ok(match meta.dims {
        Dims::Two => {
            let cfg = FlowConfig::new(meta.grid()?, meta.viscosity, meta.forcing, meta.save_dt)?;
            Phys::Flow(FlowPhysics::new(cfg, scheme)?)
        }
        Dims::One => {
            if scheme != SchemeKind::VanLeer {
                return Err(usage("the KS solver supports only the vanleer scheme"));
            }
            let cfg = KsConfig {
                n: meta.nx,
                length: meta.domain_x,
                dt: meta.save_dt,
                scheme: KsScheme::VanLeer,
                integrator: KsIntegrator::Explicit,
            };
            cfg.validate()?;
            Phys::Ks(KsPhysics::new(cfg)?)
        }
    })
}

/// Vorticity correlation in 2-D, field correlation in 1-D.
pub fn correlate(meta: &TrajectoryMeta, a: &[f64], b: &[f64]) -> tsm_core::Result<f64> {
    match meta.dims {
        Dims::Two => {
            let g = meta.grid()?;
            pearson_correlation(
                &vorticity(&VelocityField::from_flat(g, a)?),
                &vorticity(&VelocityField::from_flat(g, b)?),
            )
        }
        Dims::One => pearson(a, b),
    }
}

pub fn same_layout(a: &TrajectoryMeta, b: &TrajectoryMeta) -> bool {
    a.dims == b.dims
        && a.nx == b.nx
        && a.ny == b.ny
        && a.domain_x == b.domain_x
        && a.domain_y == b.domain_y
        && (a.save_dt - b.save_dt).abs() <= 1e-9 * a.save_dt.abs()
}

pub struct Split32 {
    pub meta: TrajectoryMeta,
    pub paths: Vec<PathBuf>,
    pub frames: Vec<Vec<Vec<f32>>>,
}

/// Loads one split of a dataset directory as stored (f32).
pub fn load_split(dir: &Path, split: Split, limit: Option<usize>) -> anyhow::Result<Split32> {
    let mut paths = split_paths(dir, split)?;
    if let Some(n) = limit {
        paths.truncate(n);
    }
    if paths.is_empty() {
        return Err(TsmError::InvalidArgument(format!("dataset {} has no usable {} trajectories", dir.display(), split.name())).into());
    }
    let mut meta: Option<TrajectoryMeta> = None;
    let mut frames = Vec::with_capacity(paths.len());
    for p in &paths {
        let (m, f) = read_container_f32(p)?;
        if let Some(first) = &meta {
            if !same_layout(first, &m) {
                return Err(TsmError::Misaligned(format!("{} differs in grid or step from the first trajectory", p.display())).into());
            }
        } else {
            meta = Some(m);
        }
        frames.push(f);
    }
    Ok(Split32 {
        meta: meta.unwrap(),
        paths,
        frames,
    })
}

pub fn dataset_inputs(dir: &Path, s: &Split32) -> Vec<PathBuf> {
    let mut v = vec![dir.join(MANIFEST_NAME)];
    v.extend(s.paths.iter().cloned());
    v
}
