//! Kuramoto–Sivashinsky equation in conservation form,
//!
//! ```text
//! ∂v/∂t + ∂J/∂x = 0,   J = v²/2 + ∂v/∂x + ∂³v/∂x³,
//! ```
//!
//! on a periodic line of `n` cells. Face `k` lies between cells `k` and
//! `k + 1`. The nonlinear term uses a face value `a_k` from a Van Leer
//! reconstruction (upwinded by the linear mean) or from a learned 6-point
//! stencil over cells `k−2 … k+3`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::classic_stencils::{face_value, face_value_vjp, SchemeKind};
use crate::datagen::{read_container, write_container, ManifestEntry, Split, TrajectoryMeta, FORMAT_VERSION, MANIFEST_NAME};
use crate::error::{Result, TsmError};
use crate::fvm2d::Forcing;
use crate::stencil_net::{Dims, KS_STENCIL_TAPS};

pub const KS_LENGTH: f64 = 20.0 * PI;
pub const KS_WARMUP: f64 = 80.0;
pub const KS_MODES: usize = 10;

/// Step of the 32-cell grid over `20π`.
pub const KS_DT_32: f64 = 1.9635e-2;
/// Step of the 64-cell grid over `20π`.
pub const KS_DT_64: f64 = 9.81748e-3;

/// `0.01 h`, with the published constants for 32 and 64 cells on `20π`.
pub fn default_ks_dt(n: usize, length: f64) -> f64 {
    if length == KS_LENGTH {
        match n {
            32 => return KS_DT_32,
            64 => return KS_DT_64,
            _ => {}
        }
    }
    0.01 * length / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KsScheme {
    VanLeer,
    Learned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KsIntegrator {
    /// Forward Euler on the full flux.
    Explicit,
    /// Backward Euler on the linear terms (diagonal in Fourier space),
    /// forward Euler on the nonlinear flux. Used for fine reference runs,
    /// where the fourth-derivative term makes explicit steps of `O(h)`
    /// unstable.
    Imex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsConfig {
    pub n: usize,
    pub length: f64,
    pub dt: f64,
    pub scheme: KsScheme,
    pub integrator: KsIntegrator,
}

impl KsConfig {
    /// Explicit Van Leer solver with the default step.
    pub fn new(n: usize) -> Result<KsConfig> {
        let c = KsConfig {
            n,
            length: KS_LENGTH,
            dt: default_ks_dt(n, KS_LENGTH),
            scheme: KsScheme::VanLeer,
            integrator: KsIntegrator::Explicit,
        };
        c.validate()?;
        Ok(c)
    }

    /// Fine reference solver: IMEX with step `dt`.
    pub fn reference(n: usize, dt: f64) -> Result<KsConfig> {
        let c = KsConfig {
            n,
            length: KS_LENGTH,
            dt,
            scheme: KsScheme::VanLeer,
            integrator: KsIntegrator::Imex,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Largest forward-Euler step for the linear terms.
    pub fn explicit_limit(&self) -> f64 {
        let h = self.h();
        let s = 4.0 / (h * h);
        2.0 / (s * s - s).max(f64::MIN_POSITIVE)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(TsmError::InvalidGrid(format!("need at least 8 cells, got {}", self.n)));
        }
        if !(self.length > 0.0) || !(self.dt > 0.0) {
            return Err(TsmError::InvalidArgument("length and dt must be positive".into()));
        }
        if self.integrator == KsIntegrator::Explicit && self.dt > self.explicit_limit() {
            return Err(TsmError::InvalidArgument(format!(
                "explicit step {} exceeds the stability limit {:.3e}; use the IMEX integrator",
                self.dt,
                self.explicit_limit()
            )));
        }
        Ok(())
    }
}

/// `Σ A sin(2π ℓ x / L + φ)` at cell centers.
pub fn ks_from_modes(n: usize, length: f64, modes: &[(f64, f64, f64)]) -> Vec<f64> {
    let h = length / n as f64;
    (0..n)
        .map(|k| {
            let x = (k as f64 + 0.5) * h;
            modes
                .iter()
                .map(|&(a, l, phi)| a * (2.0 * PI * l * x / length + phi).sin())
                .sum()
        })
        .collect()
}

/// Ten random modes, `A ∈ [−0.5, 0.5]`, `φ ∈ [−π, π]`, `ℓ ∈ {1, 2, 3}`.
pub fn ks_random_modes(seed: u64) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..KS_MODES)
        .map(|_| {
            let a = rng.gen_range(-0.5..=0.5);
            let phi = rng.gen_range(-PI..=PI);
            let l = rng.gen_range(1..=3) as f64;
            (a, l, phi)
        })
        .collect()
}

pub fn ks_initial_condition(n: usize, length: f64, seed: u64) -> Vec<f64> {
    ks_from_modes(n, length, &ks_random_modes(seed))
}

fn six(v: &[f64], k: usize) -> [usize; 6] {
    let n = v.len();
    [
        (k + n - 2) % n,
        (k + n - 1) % n,
        k,
        (k + 1) % n,
        (k + 2) % n,
        (k + 3) % n,
    ]
}

/// Van Leer face values upwinded by the linear mean.
pub fn ks_classic_faces(v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|k| {
            let idx = six(v, k);
            let q = idx.map(|p| v[p]);
            face_value(SchemeKind::VanLeer, &q, 0.5 * (q[2] + q[3]))
        })
        .collect()
}

/// Learned face values; `w[m · n + k]` for taps `m = 0..6`.
pub fn ks_learned_faces(v: &[f64], w: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|k| {
            six(v, k)
                .iter()
                .enumerate()
                .map(|(m, &p)| w[m * n + k] * v[p])
                .sum()
        })
        .collect()
}

/// Linear part of the face flux, `∂v/∂x + ∂³v/∂x³`.
fn linear_flux(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let h3 = h * h * h;
    (0..n)
        .map(|k| {
            let (km, kp, kpp) = ((k + n - 1) % n, (k + 1) % n, (k + 2) % n);
            (v[kp] - v[k]) / h + (-v[km] + 3.0 * v[k] - 3.0 * v[kp] + v[kpp]) / h3
        })
        .collect()
}

/// Face flux `J` given nonlinear face values `a`.
pub fn ks_flux_with(v: &[f64], a: &[f64], h: f64) -> Vec<f64> {
    let mut j = linear_flux(v, h);
    for (jk, ak) in j.iter_mut().zip(a) {
        *jk += 0.5 * ak * ak;
    }
    j
}

/// Face flux with the Van Leer nonlinear term.
pub fn ks_flux(v: &[f64], h: f64) -> Vec<f64> {
    ks_flux_with(v, &ks_classic_faces(v), h)
}

fn flux_divergence(j: &[f64], h: f64) -> Vec<f64> {
    let n = j.len();
    (0..n).map(|k| (j[k] - j[(k + n - 1) % n]) / h).collect()
}

/// Recorded state for the step adjoint.
#[derive(Clone, Debug)]
pub struct KsTape {
    pub input: Vec<f64>,
    pub faces: Vec<f64>,
}

pub struct KsSolver {
    pub cfg: KsConfig,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// `1 / (1 + dt λ_k)` for the linear operator.
    imex_scale: Vec<f64>,
}

impl std::fmt::Debug for KsSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KsSolver").field("cfg", &self.cfg).finish()
    }
}

impl KsSolver {
    pub fn new(cfg: KsConfig) -> Result<KsSolver> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        let n = cfg.n;
        let h = cfg.h();
        let imex_scale = (0..n)
            .map(|k| {
                let s = (2.0 * (2.0 * PI * k as f64 / n as f64).cos() - 2.0) / (h * h);
                1.0 / (1.0 + cfg.dt * (s + s * s))
            })
            .collect();
        Ok(KsSolver {
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            imex_scale,
            cfg,
        })
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.cfg.n {
            return Err(TsmError::ShapeMismatch {
                expected: format!("{} cells", self.cfg.n),
                got: format!("{}", v.len()),
            });
        }
        Ok(())
    }

    fn finish(&self, out: Vec<f64>, step_index: usize) -> Result<Vec<f64>> {
        if out.iter().any(|x| !x.is_finite()) {
            return Err(TsmError::NonFinite {
                step: step_index,
                detail: "KS state".into(),
            });
        }
        Ok(out)
    }

    fn advance(&self, v: &[f64], a: &[f64], step_index: usize) -> Result<Vec<f64>> {
        let h = self.cfg.h();
        let dt = self.cfg.dt;
        let out = match self.cfg.integrator {
            KsIntegrator::Explicit => {
                let d = flux_divergence(&ks_flux_with(v, a, h), h);
                v.iter().zip(&d).map(|(x, dx)| x - dt * dx).collect()
            }
            KsIntegrator::Imex => {
                let nl: Vec<f64> = a.iter().map(|x| 0.5 * x * x).collect();
                let d = flux_divergence(&nl, h);
                let mut z: Vec<Complex64> = v.iter().zip(&d).map(|(x, dx)| Complex64::new(x - dt * dx, 0.0)).collect();
                self.fwd.process(&mut z);
                for (zk, s) in z.iter_mut().zip(&self.imex_scale) {
                    *zk *= s;
                }
                self.inv.process(&mut z);
                let inv_n = 1.0 / self.cfg.n as f64;
                z.iter().map(|c| c.re * inv_n).collect()
            }
        };
        self.finish(out, step_index)
    }

    /// Van Leer step.
    pub fn step_classic(&self, v: &[f64], step_index: usize) -> Result<Vec<f64>> {
        self.check(v)?;
        self.advance(v, &ks_classic_faces(v), step_index)
    }

    pub fn step_classic_recorded(&self, v: &[f64], step_index: usize) -> Result<(Vec<f64>, KsTape)> {
        self.check(v)?;
        let faces = ks_classic_faces(v);
        let out = self.advance(v, &faces, step_index)?;
        Ok((
            out,
            KsTape {
                input: v.to_vec(),
                faces,
            },
        ))
    }

    /// Step with learned face weights `w[m · n + k]`.
    pub fn step_learned(&self, v: &[f64], w: &[f64], step_index: usize) -> Result<(Vec<f64>, KsTape)> {
        self.check(v)?;
        if w.len() != KS_STENCIL_TAPS * v.len() {
            return Err(TsmError::ShapeMismatch {
                expected: format!("{} weights", KS_STENCIL_TAPS * v.len()),
                got: format!("{}", w.len()),
            });
        }
        let faces = ks_learned_faces(v, w);
        let out = self.advance(v, &faces, step_index)?;
        Ok((
            out,
            KsTape {
                input: v.to_vec(),
                faces,
            },
        ))
    }

    /// Returns `(∂L/∂v` through the linear terms and the explicit update,
    /// `∂L/∂a)`. Explicit integrator only.
    fn advance_vjp(&self, tape: &KsTape, g_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = g_out.len();
        let h = self.cfg.h();
        let c = self.cfg.dt / h;
        // v'_k = v_k − c (J_k − J_{k−1})  ⇒  ∂L/∂J_k = −c (g_k − g_{k+1})
        let gj: Vec<f64> = (0..n).map(|k| -c * (g_out[k] - g_out[(k + 1) % n])).collect();
        let mut gv = g_out.to_vec();
        let h3 = h * h * h;
        for k in 0..n {
            let (km, kp, kpp) = ((k + n - 1) % n, (k + 1) % n, (k + 2) % n);
            let g = gj[k];
            gv[kp] += g / h;
            gv[k] -= g / h;
            gv[km] -= g / h3;
            gv[k] += 3.0 * g / h3;
            gv[kp] -= 3.0 * g / h3;
            gv[kpp] += g / h3;
        }
        let ga = gj.iter().zip(&tape.faces).map(|(g, a)| g * a).collect();
        (gv, ga)
    }

    fn require_explicit(&self) -> Result<()> {
        if self.cfg.integrator != KsIntegrator::Explicit {
            return Err(TsmError::InvalidArgument("step adjoints need the explicit integrator".into()));
        }
        Ok(())
    }

    /// Adjoint of [`KsSolver::step_learned`]; accumulates into `g_w`.
    pub fn step_learned_vjp(&self, tape: &KsTape, w: &[f64], g_out: &[f64], g_w: &mut [f64]) -> Result<Vec<f64>> {
        self.require_explicit()?;
        let n = g_out.len();
        let (mut gv, ga) = self.advance_vjp(tape, g_out);
        for k in 0..n {
            for (m, &p) in six(&tape.input, k).iter().enumerate() {
                gv[p] += w[m * n + k] * ga[k];
                g_w[m * n + k] += ga[k] * tape.input[p];
            }
        }
        Ok(gv)
    }

    /// Adjoint of the Van Leer step. The upwind choice is treated as locally
    /// constant.
    pub fn step_classic_vjp(&self, tape: &KsTape, g_out: &[f64]) -> Result<Vec<f64>> {
        self.require_explicit()?;
        let n = g_out.len();
        let (mut gv, ga) = self.advance_vjp(tape, g_out);
        for k in 0..n {
            let idx = six(&tape.input, k);
            let q = idx.map(|p| tape.input[p]);
            let mut dq = [0.0; 6];
            face_value_vjp(SchemeKind::VanLeer, &q, 0.5 * (q[2] + q[3]), ga[k], &mut dq);
            for s in 0..6 {
                gv[idx[s]] += dq[s];
            }
        }
        Ok(gv)
    }
}

/// One classic step with a fresh solver.
pub fn ks_step(v: &[f64], cfg: &KsConfig) -> Result<Vec<f64>> {
    if cfg.scheme == KsScheme::Learned {
        return Err(TsmError::InvalidArgument(
            "learned KS steps need coefficients; use the training rollout".into(),
        ));
    }
    KsSolver::new(*cfg)?.step_classic(v, 0)
}

/// Classic run recording the initial state and every `save_every`-th state.
pub fn ks_simulate(v0: &[f64], cfg: &KsConfig, n_steps: usize, save_every: usize) -> Result<Vec<Vec<f64>>> {
    if save_every == 0 {
        return Err(TsmError::InvalidArgument("save_every must be at least 1".into()));
    }
    let s = KsSolver::new(*cfg)?;
    let mut out = vec![v0.to_vec()];
    let mut v = v0.to_vec();
    for k in 0..n_steps {
        v = s.step_classic(&v, k)?;
        if (k + 1) % save_every == 0 {
            out.push(v.clone());
        }
    }
    Ok(out)
}

/// Cell averages over blocks of `factor` cells.
pub fn ks_downsample(v: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || v.len() % factor != 0 {
        return Err(TsmError::InvalidArgument(format!(
            "factor {factor} does not divide {} cells",
            v.len()
        )));
    }
    Ok(v.chunks_exact(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsDatasetSpec {
    pub fine: usize,
    pub coarse: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub duration: f64,
    pub warmup: f64,
    pub seed: u64,
}

impl Default for KsDatasetSpec {
    fn default() -> Self {
        KsDatasetSpec {
            fine: 1024,
            coarse: 64,
            n_train: 16,
            n_eval: 8,
            duration: 100.0,
            warmup: KS_WARMUP,
            seed: 0,
        }
    }
}

impl KsDatasetSpec {
    pub fn factor(&self) -> Result<usize> {
        if self.coarse < 8 || self.fine % self.coarse != 0 {
            return Err(TsmError::InvalidArgument(format!(
                "fine {} is not a multiple of coarse {}",
                self.fine, self.coarse
            )));
        }
        Ok(self.fine / self.coarse)
    }

    pub fn coarse_dt(&self) -> f64 {
        default_ks_dt(self.coarse, KS_LENGTH)
    }

    pub fn fine_config(&self) -> Result<KsConfig> {
        KsConfig::reference(self.fine, self.coarse_dt() / self.factor()? as f64)
    }

    pub fn frames(&self) -> usize {
        (self.duration / self.coarse_dt() + 1e-9).floor() as usize + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KsTrajectory {
    pub meta: TrajectoryMeta,
    pub frames: Vec<Vec<f64>>,
}

impl KsTrajectory {
    pub fn times(&self) -> Vec<f64> {
        (0..self.frames.len()).map(|k| k as f64 * self.meta.save_dt).collect()
    }
}

pub fn ks_meta(n: usize, save_dt: f64, solver_dt: f64) -> TrajectoryMeta {
    TrajectoryMeta {
        format_version: FORMAT_VERSION,
        dims: Dims::One,
        nx: n,
        ny: 1,
        domain_x: KS_LENGTH,
        domain_y: 1.0,
        n_frames: 0,
        save_dt,
        solver_dt,
        viscosity: 0.0,
        forcing: Forcing::None,
        seed: None,
        source: String::new(),
        reprojected: false,
    }
}

/// Fine reference run from seed, warmed up and downsampled every coarse step.
pub fn generate_ks_trajectory(spec: &KsDatasetSpec, seed: u64) -> Result<KsTrajectory> {
    let factor = spec.factor()?;
    let fine = spec.fine_config()?;
    let s = KsSolver::new(fine)?;
    let mut v = ks_initial_condition(spec.fine, KS_LENGTH, seed);
    let warm = (spec.warmup / fine.dt).round() as usize;
    for k in 0..warm {
        v = s.step_classic(&v, k)?;
    }
    let n_frames = spec.frames();
    let mut frames = vec![ks_downsample(&v, factor)?];
    let mut step = warm;
    for _ in 1..n_frames {
        for _ in 0..factor {
            v = s.step_classic(&v, step)?;
            step += 1;
        }
        frames.push(ks_downsample(&v, factor)?);
    }
    let mut meta = ks_meta(spec.coarse, spec.coarse_dt(), fine.dt);
    meta.seed = Some(seed);
    meta.n_frames = frames.len();
    meta.source = format!("ks-dns-{}/imex", spec.fine);
    Ok(KsTrajectory { meta, frames })
}

pub fn save_ks_trajectory(t: &KsTrajectory, path: &Path) -> Result<()> {
    write_container(path, &t.meta, &t.frames)
}

pub fn load_ks_trajectory(path: &Path) -> Result<KsTrajectory> {
    let (meta, frames) = read_container(path)?;
    if meta.dims != Dims::One {
        return Err(TsmError::Format {
            path: Some(path.to_path_buf()),
            msg: "expected a 1-D trajectory".into(),
        });
    }
    Ok(KsTrajectory { meta, frames })
}

/// Generates `n_train + n_eval` trajectories in parallel, in index order.
pub fn generate_ks_dataset(spec: &KsDatasetSpec) -> Result<(Vec<KsTrajectory>, Vec<KsTrajectory>)> {
    let seeds: Vec<u64> = (0..spec.n_train + spec.n_eval)
        .map(|i| spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1))
        .collect();
    let mut all = seeds
        .par_iter()
        .map(|&s| generate_ks_trajectory(spec, s))
        .collect::<Result<Vec<_>>>()?;
    let eval = all.split_off(spec.n_train);
    Ok((all, eval))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsDatasetManifest {
    pub format_version: u32,
    pub equation: String,
    pub spec: KsDatasetSpec,
    pub fine_dt: f64,
    pub save_dt: f64,
    pub frames_per_trajectory: usize,
    pub entries: Vec<ManifestEntry>,
}

/// Writes `train_XXX.tsm` / `eval_XXX.tsm` plus `manifest.json` into `out`,
/// with the same entry layout as 2-D datasets.
pub fn write_ks_dataset(spec: &KsDatasetSpec, out: &Path) -> Result<KsDatasetManifest> {
    spec.fine_config()?;
    std::fs::create_dir_all(out).map_err(|e| TsmError::io(out, e))?;
    let jobs: Vec<(Split, usize, u64)> = (0..spec.n_train + spec.n_eval)
        .map(|i| {
            let seed = spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1);
            if i < spec.n_train {
                (Split::Train, i, seed)
            } else {
                (Split::Eval, i - spec.n_train, seed)
            }
        })
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(split, index, seed)| {
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
            match generate_ks_trajectory(spec, seed) {
                Ok(t) => {
                    save_ks_trajectory(&t, &out.join(&file))?;
                    entry.n_frames = t.frames.len();
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
    let m = KsDatasetManifest {
        format_version: FORMAT_VERSION,
        equation: "ks".into(),
        spec: spec.clone(),
        fine_dt: spec.fine_config()?.dt,
        save_dt: spec.coarse_dt(),
        frames_per_trajectory: spec.frames(),
        entries,
    };
    let path = out.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&m).map_err(|e| TsmError::format(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| TsmError::io(path, e))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_steps() {
        assert_eq!(default_ks_dt(32, KS_LENGTH), 1.9635e-2);
        assert_eq!(default_ks_dt(64, KS_LENGTH), 9.81748e-3);
        assert_eq!(KsConfig::new(32).unwrap().dt, 1.9635e-2);
        assert!(KsConfig::new(1024).is_err());
        assert!(KsConfig::reference(1024, 6e-4).is_ok());
    }

    #[test]
    fn initial_conditions() {
        assert!(ks_from_modes(64, KS_LENGTH, &[(0.0, 1.0, 0.3); 10]).iter().all(|&x| x == 0.0));
        let single = ks_from_modes(32, KS_LENGTH, &[(0.5, 1.0, 0.0)]);
        let h = KS_LENGTH / 32.0;
        for (k, v) in single.iter().enumerate() {
            assert_eq!(*v, 0.5 * (2.0 * PI * ((k as f64 + 0.5) * h) / KS_LENGTH).sin());
        }
        for seed in 0..50 {
            let m = ks_random_modes(seed);
            assert_eq!(m.len(), 10);
            let bound: f64 = m.iter().map(|x| x.0.abs()).sum();
            let v = ks_initial_condition(64, KS_LENGTH, seed);
            assert!(v.iter().all(|x| x.abs() <= bound + 1e-12 && x.abs() <= 5.0));
            assert!(m.iter().all(|&(a, l, p)| a.abs() <= 0.5 && [1.0, 2.0, 3.0].contains(&l) && p.abs() <= PI));
        }
        assert_eq!(ks_initial_condition(32, KS_LENGTH, 4), ks_initial_condition(32, KS_LENGTH, 4));
    }

    #[test]
    fn constant_flux() {
        let v = vec![1.5; 16];
        let j = ks_flux(&v, 0.3);
        assert!(j.iter().all(|&x| (x - 1.125).abs() < 1e-12));
    }

    #[test]
    fn sine_flux_is_second_order() {
        let err = |n: usize| {
            let h = KS_LENGTH / n as f64;
            let w = 2.0 * PI / KS_LENGTH * 3.0;
            let v: Vec<f64> = (0..n).map(|k| ((k as f64 + 0.5) * h * w).sin()).collect();
            let a: Vec<f64> = (0..n).map(|k| ((k as f64 + 1.0) * h * w).sin()).collect();
            // analytic flux at faces; use exact face values for the
            // nonlinear part so only the derivative stencils are tested
            let j = ks_flux_with(&v, &a, h);
            (0..n)
                .map(|k| {
                    let x = (k as f64 + 1.0) * h;
                    let s = (w * x).sin();
                    let c = (w * x).cos();
                    let exact = 0.5 * s * s + w * c - w * w * w * c;
                    (j[k] - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(128), err(256));
        let order = (e1 / e2).log2();
        assert!(order > 1.8, "order {order}");
    }

    #[test]
    fn mean_is_conserved() {
        let cfg = KsConfig::new(64).unwrap();
        let s = KsSolver::new(cfg).unwrap();
        let mut v = ks_initial_condition(64, KS_LENGTH, 3);
        for x in v.iter_mut() {
            *x += 0.2;
        }
        let m0: f64 = v.iter().sum();
        for k in 0..200 {
            v = s.step_classic(&v, k).unwrap();
        }
        let m1: f64 = v.iter().sum();
        assert!((m1 - m0).abs() < 1e-11, "{m0} {m1}");
        let z = ks_step(&vec![0.0; 32], &KsConfig::new(32).unwrap()).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn imex_matches_explicit_for_small_steps() {
        let n = 64;
        let v0 = ks_initial_condition(n, KS_LENGTH, 1);
        let dt = 1e-3;
        let ex = KsConfig { dt, ..KsConfig::new(n).unwrap() };
        let im = KsConfig::reference(n, dt).unwrap();
        let a = ks_simulate(&v0, &ex, 100, 100).unwrap();
        let b = ks_simulate(&v0, &im, 100, 100).unwrap();
        let d = a[1].iter().zip(&b[1]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d < 1e-3, "{d}");
    }

    #[test]
    fn base_learned_weights_give_linear_faces() {
        let n = 16;
        let v: Vec<f64> = (0..n).map(|k| (k as f64).sin()).collect();
        let mut w = vec![0.0; 6 * n];
        w[2 * n..4 * n].fill(0.5);
        let f = ks_learned_faces(&v, &w);
        for k in 0..n {
            assert_eq!(f[k], 0.5 * v[k] + 0.5 * v[(k + 1) % n]);
        }
    }

    #[test]
    fn learned_vjp_matches_finite_differences() {
        let n = 16;
        let cfg = KsConfig::new(32).unwrap();
        let cfg = KsConfig { n, dt: 0.01, ..cfg };
        let s = KsSolver::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..6 * n).map(|_| rng.gen_range(-0.3..0.7)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |v: &[f64], w: &[f64]| -> f64 {
            let (o, _) = s.step_learned(v, w, 0).unwrap();
            o.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = s.step_learned(&v, &w, 0).unwrap();
        let mut gw = vec![0.0; 6 * n];
        let gv = s.step_learned_vjp(&tape, &w, &g, &mut gw).unwrap();
        let eps = 1e-6;
        for p in [0, 5, 11] {
            let mut a = v.clone();
            a[p] += eps;
            let mut b = v.clone();
            b[p] -= eps;
            let fd = (loss(&a, &w) - loss(&b, &w)) / (2.0 * eps);
            assert!((fd - gv[p]).abs() < 1e-6 * (1.0 + fd.abs()), "v{p}: {fd} {}", gv[p]);
        }
        for p in [0, 17, 40, 95] {
            let mut a = w.clone();
            a[p] += eps;
            let mut b = w.clone();
            b[p] -= eps;
            let fd = (loss(&v, &a) - loss(&v, &b)) / (2.0 * eps);
            assert!((fd - gw[p]).abs() < 1e-6 * (1.0 + fd.abs()), "w{p}: {fd} {}", gw[p]);
        }
    }

    #[test]
    fn container_round_trip() {
        let spec = KsDatasetSpec {
            fine: 128,
            coarse: 32,
            n_train: 1,
            n_eval: 0,
            duration: 1.0,
            warmup: 1.0,
            seed: 5,
        };
        let (train, _) = generate_ks_dataset(&spec).unwrap();
        let t = &train[0];
        assert_eq!(t.frames.len(), spec.frames());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ks.tsm");
        save_ks_trajectory(t, &p).unwrap();
        let back = load_ks_trajectory(&p).unwrap();
        assert_eq!(back.meta, t.meta);
        for (a, b) in back.frames.iter().zip(&t.frames) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        assert!(crate::datagen::load_trajectory(&p).is_err());
    }

    #[test]
    fn dataset_files_and_manifest() {
        let spec = KsDatasetSpec {
            fine: 64,
            coarse: 32,
            n_train: 2,
            n_eval: 1,
            duration: 0.2,
            warmup: 0.1,
            seed: 4,
        };
        let dir = tempfile::tempdir().unwrap();
        let m = write_ks_dataset(&spec, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 3);
        let train = crate::datagen::split_paths(dir.path(), Split::Train).unwrap();
        let eval = crate::datagen::split_paths(dir.path(), Split::Eval).unwrap();
        assert_eq!((train.len(), eval.len()), (2, 1));
        let t = load_ks_trajectory(&eval[0]).unwrap();
        assert_eq!(t.frames.len(), spec.frames());
        assert_eq!(t.meta.nx, 32);
    }
}
