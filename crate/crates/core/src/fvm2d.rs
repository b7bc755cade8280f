//! Finite-volume incompressible Navier–Stokes stepper on the periodic MAC grid.
//!
//! One step is
//!
//! ```text
//! v* = v + dt · (convection(v) + ν ∇²v + f(v))
//! v' = P v*
//! ```
//!
//! where `P` is the discrete pressure projection. The convective flux
//! `u ⊗ u` is assembled from eight face interpolations supplied by a
//! [`FluxProvider`]; classic schemes and learned stencil coefficients go
//! through the same assembly code.
//!
//! Each step also has a vector-Jacobian product, used for reverse-mode
//! training through unrolled rollouts.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::classic_stencils::{face_value, face_value_vjp, SchemeKind};
use crate::datagen::{Trajectory, TrajectoryMeta};
use crate::error::{Result, TsmError};
use crate::grid::{Axis, Grid, VelocityField};
use crate::stencil_net::{CoefficientMap, STENCIL_TAPS};

/// Number of face interpolations needed per step.
pub const N_TARGETS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Forcing {
    /// `amplitude · sin(wavenumber · y) x̂ − drag · u`
    Kolmogorov {
        amplitude: f64,
        wavenumber: f64,
        drag: f64,
    },
    None,
}

impl Forcing {
    pub fn kolmogorov() -> Forcing {
        Forcing::Kolmogorov {
            amplitude: 1.0,
            wavenumber: 4.0,
            drag: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub grid: Grid,
    pub viscosity: f64,
    pub density: f64,
    pub forcing: Forcing,
    pub dt: f64,
}

impl FlowConfig {
    pub fn new(grid: Grid, viscosity: f64, forcing: Forcing, dt: f64) -> Result<FlowConfig> {
        let cfg = FlowConfig {
            grid,
            viscosity,
            density: 1.0,
            forcing,
            dt,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.viscosity >= 0.0) {
            return Err(TsmError::InvalidArgument(format!(
                "viscosity must be non-negative, got {}",
                self.viscosity
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(TsmError::InvalidArgument(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        let h = self.grid.dx.min(self.grid.dy);
        if self.viscosity > 0.0 && self.dt > h * h / (4.0 * self.viscosity) {
            return Err(TsmError::InvalidArgument(format!(
                "dt {} exceeds the explicit diffusion bound {}",
                self.dt,
                h * h / (4.0 * self.viscosity)
            )));
        }
        Ok(())
    }

    /// `U L / ν` with unit velocity and length scales.
    pub fn reynolds(&self) -> f64 {
        1.0 / self.viscosity
    }

    pub fn with_grid(&self, grid: Grid, dt: f64) -> Result<FlowConfig> {
        FlowConfig::new(grid, self.viscosity, self.forcing, dt)
    }
}

/// Geometry of one interpolation target.
///
/// The target value stored at index `(i, j)` lies between `src[(i,j) + lo·e]`
/// and `src[(i,j) + (lo+1)·e]` where `e` is the unit step along `half_axis`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TargetSpec {
    pub source: Axis,
    pub half_axis: Axis,
    pub lo: isize,
    /// Index of the advecting-velocity target this one is upwinded by, if it
    /// is an advected quantity.
    pub advected_by: Option<usize>,
}

/// The eight targets: for each momentum component and each flux direction,
/// the advected component and the advecting component at the control
/// volume faces.
pub const TARGETS: [TargetSpec; N_TARGETS] = [
    // x-momentum, x-flux at cell centers
    TargetSpec { source: Axis::X, half_axis: Axis::X, lo: -1, advected_by: Some(1) },
    TargetSpec { source: Axis::X, half_axis: Axis::X, lo: -1, advected_by: None },
    // x-momentum, y-flux at corners
    TargetSpec { source: Axis::X, half_axis: Axis::Y, lo: 0, advected_by: Some(3) },
    TargetSpec { source: Axis::Y, half_axis: Axis::X, lo: 0, advected_by: None },
    // y-momentum, y-flux at cell centers
    TargetSpec { source: Axis::Y, half_axis: Axis::Y, lo: -1, advected_by: Some(5) },
    TargetSpec { source: Axis::Y, half_axis: Axis::Y, lo: -1, advected_by: None },
    // y-momentum, x-flux at corners
    TargetSpec { source: Axis::Y, half_axis: Axis::X, lo: 0, advected_by: Some(7) },
    TargetSpec { source: Axis::X, half_axis: Axis::Y, lo: 0, advected_by: None },
];

/// Offsets `(di, dj)` of the 4×4 learned stencil footprint for `target`.
///
/// Along the half-offset axis the footprint covers two sources on each side
/// of the target; along the aligned axis it covers offsets `-1 ..= 2`.
/// Tap `m = 4·b + a` where `a` indexes the half axis and `b` the other one.
pub fn stencil_offsets(target: usize) -> [(isize, isize); STENCIL_TAPS] {
    let t = TARGETS[target];
    let mut out = [(0, 0); STENCIL_TAPS];
    for b in 0..4 {
        for a in 0..4 {
            let da = t.lo - 1 + a as isize;
            let db = b as isize - 1;
            out[4 * b + a] = match t.half_axis {
                Axis::X => (da, db),
                Axis::Y => (db, da),
            };
        }
    }
    out
}

/// Taps carrying the ½/½ base weights: the two face-adjacent sources.
pub const BASE_TAPS: [usize; 2] = [5, 6];

/// Periodic neighbour tables for offsets `-3 ..= 3`.
#[derive(Clone, Debug)]
pub(crate) struct Neighbors {
    nx: usize,
    ny: usize,
    xs: Vec<usize>,
    ys: Vec<usize>,
}

impl Neighbors {
    pub(crate) fn new(grid: &Grid) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut xs = vec![0; 7 * nx];
        let mut ys = vec![0; 7 * ny];
        for d in 0..7 {
            for i in 0..nx {
                xs[d * nx + i] = (i as isize + d as isize - 3).rem_euclid(nx as isize) as usize;
            }
            for j in 0..ny {
                ys[d * ny + j] = (j as isize + d as isize - 3).rem_euclid(ny as isize) as usize;
            }
        }
        Neighbors { nx, ny, xs, ys }
    }

    #[inline]
    pub(crate) fn at(&self, i: usize, j: usize, di: isize, dj: isize) -> usize {
        let x = self.xs[(di + 3) as usize * self.nx + i];
        let y = self.ys[(dj + 3) as usize * self.ny + j];
        y * self.nx + x
    }

    #[inline]
    fn six(&self, i: usize, j: usize, axis: Axis, lo: isize) -> [usize; 6] {
        let mut out = [0; 6];
        for (s, slot) in out.iter_mut().enumerate() {
            let d = lo - 2 + s as isize;
            *slot = match axis {
                Axis::X => self.at(i, j, d, 0),
                Axis::Y => self.at(i, j, 0, d),
            };
        }
        out
    }
}

/// The eight face-interpolated maps for one step.
#[derive(Clone, Debug)]
pub struct Interpolations {
    pub faces: [Vec<f64>; N_TARGETS],
}

/// Source of the face interpolations used in the convective flux.
#[derive(Clone, Copy, Debug)]
pub enum FluxProvider<'a> {
    /// Advecting velocities by linear interpolation; advected values by the
    /// given scheme, upwinded by the advecting velocity.
    Classic(SchemeKind),
    /// Learned stencil coefficients, bundle slot `step`.
    Learned {
        coeffs: &'a CoefficientMap,
        step: usize,
    },
}

impl<'a> FluxProvider<'a> {
    pub fn interpolations(&self, v: &VelocityField) -> Result<Interpolations> {
        let nb = Neighbors::new(&v.grid);
        self.interpolations_with(v, &nb)
    }

    pub(crate) fn interpolations_with(
        &self,
        v: &VelocityField,
        nb: &Neighbors,
    ) -> Result<Interpolations> {
        match *self {
            FluxProvider::Classic(kind) => Ok(classic_interpolations(v, nb, kind)),
            FluxProvider::Learned { coeffs, step } => {
                coeffs.check_grid(&v.grid)?;
                if step >= coeffs.bundle {
                    return Err(TsmError::InvalidArgument(format!(
                        "bundle slot {step} out of range for K={}",
                        coeffs.bundle
                    )));
                }
                let faces = std::array::from_fn(|t| {
                    learned_interpolation(v, nb, coeffs.weights(step, t), t)
                });
                Ok(Interpolations { faces })
            }
        }
    }
}

fn classic_interpolations(v: &VelocityField, nb: &Neighbors, kind: SchemeKind) -> Interpolations {
    let g = v.grid;
    let mut faces: [Vec<f64>; N_TARGETS] = std::array::from_fn(|_| vec![0.0; g.len()]);
    // advecting velocities first
    for t in 0..N_TARGETS {
        let spec = TARGETS[t];
        if spec.advected_by.is_some() {
            continue;
        }
        let src = v.component(spec.source);
        let out = &mut faces[t];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let a = nb.at(i, j, 0, 0);
                let (pa, pb) = match spec.half_axis {
                    Axis::X => (nb.at(i, j, spec.lo, 0), nb.at(i, j, spec.lo + 1, 0)),
                    Axis::Y => (nb.at(i, j, 0, spec.lo), nb.at(i, j, 0, spec.lo + 1)),
                };
                out[a] = 0.5 * (src[pa] + src[pb]);
            }
        }
    }
    for t in 0..N_TARGETS {
        let spec = TARGETS[t];
        let Some(by) = spec.advected_by else { continue };
        let src = v.component(spec.source);
        let (head, tail) = faces.split_at_mut(t.max(by));
        let (out, adv) = if t > by {
            (&mut tail[0], &head[by])
        } else {
            (&mut head[t], &tail[0])
        };
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                let idx = nb.six(i, j, spec.half_axis, spec.lo);
                let q = idx.map(|p| src[p]);
                out[k] = face_value(kind, &q, adv[k]);
            }
        }
    }
    Interpolations { faces }
}

/// `out[p] = Σ_m w[m][p] · src[p + offset_m]`.
fn learned_interpolation(v: &VelocityField, nb: &Neighbors, w: &[f64], target: usize) -> Vec<f64> {
    let g = v.grid;
    let n = g.len();
    let src = v.component(TARGETS[target].source);
    let offs = stencil_offsets(target);
    let mut out = vec![0.0; n];
    for (m, &(di, dj)) in offs.iter().enumerate() {
        let wm = &w[m * n..(m + 1) * n];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = j * g.nx + i;
                out[k] += wm[k] * src[nb.at(i, j, di, dj)];
            }
        }
    }
    out
}

/// Face values of one target from explicit coefficients (16 taps × cells).
pub fn interpolate_with_coeffs(v: &VelocityField, coeffs: &CoefficientMap, step: usize, target: usize) -> Result<Vec<f64>> {
    coeffs.check_grid(&v.grid)?;
    if target >= N_TARGETS || step >= coeffs.bundle {
        return Err(TsmError::InvalidArgument(format!(
            "target {target} / bundle slot {step} out of range"
        )));
    }
    let nb = Neighbors::new(&v.grid);
    Ok(learned_interpolation(v, &nb, coeffs.weights(step, target), target))
}

/// Convective tendency `−∇·(u ⊗ u)` from precomputed interpolations.
pub fn convection_from(grid: &Grid, it: &Interpolations) -> VelocityField {
    let g = *grid;
    let f = &it.faces;
    let mut out = VelocityField::zeros(g);
    for j in 0..g.ny {
        let jm = (j + g.ny - 1) % g.ny;
        let jp = (j + 1) % g.ny;
        for i in 0..g.nx {
            let im = (i + g.nx - 1) % g.nx;
            let ip = (i + 1) % g.nx;
            let k = g.idx(i, j);
            // x-momentum: x-faces at centers (i, j) and (i+1, j); y-faces at
            // corners [i, j-1] and [i, j].
            let kip = g.idx(ip, j);
            let kjm = g.idx(i, jm);
            let fxx_r = f[0][kip] * f[1][kip];
            let fxx_l = f[0][k] * f[1][k];
            let fxy_t = f[2][k] * f[3][k];
            let fxy_b = f[2][kjm] * f[3][kjm];
            out.ux[k] = -(fxx_r - fxx_l) / g.dx - (fxy_t - fxy_b) / g.dy;
            // y-momentum: y-faces at centers (i, j) and (i, j+1); x-faces at
            // corners [i-1, j] and [i, j].
            let kjp = g.idx(i, jp);
            let kim = g.idx(im, j);
            let fyy_t = f[4][kjp] * f[5][kjp];
            let fyy_b = f[4][k] * f[5][k];
            let fyx_r = f[6][k] * f[7][k];
            let fyx_l = f[6][kim] * f[7][kim];
            out.uy[k] = -(fyy_t - fyy_b) / g.dy - (fyx_r - fyx_l) / g.dx;
        }
    }
    out
}

/// Adjoint of [`convection_from`]: gradients of the eight face maps.
fn convection_from_vjp(grid: &Grid, it: &Interpolations, gt: &VelocityField) -> [Vec<f64>; N_TARGETS] {
    let g = *grid;
    let f = &it.faces;
    let mut gf: [Vec<f64>; N_TARGETS] = std::array::from_fn(|_| vec![0.0; g.len()]);
    for j in 0..g.ny {
        let jm = (j + g.ny - 1) % g.ny;
        let jp = (j + 1) % g.ny;
        for i in 0..g.nx {
            let im = (i + g.nx - 1) % g.nx;
            let ip = (i + 1) % g.nx;
            let k = g.idx(i, j);
            let gxx = (gt.ux[k] - gt.ux[g.idx(im, j)]) / g.dx;
            let gxy = (gt.ux[g.idx(i, jp)] - gt.ux[k]) / g.dy;
            let gyy = (gt.uy[k] - gt.uy[g.idx(i, jm)]) / g.dy;
            let gyx = (gt.uy[g.idx(ip, j)] - gt.uy[k]) / g.dx;
            gf[0][k] = gxx * f[1][k];
            gf[1][k] = gxx * f[0][k];
            gf[2][k] = gxy * f[3][k];
            gf[3][k] = gxy * f[2][k];
            gf[4][k] = gyy * f[5][k];
            gf[5][k] = gyy * f[4][k];
            gf[6][k] = gyx * f[7][k];
            gf[7][k] = gyx * f[6][k];
        }
    }
    gf
}

pub fn convection(v: &VelocityField, provider: &FluxProvider) -> Result<VelocityField> {
    let it = provider.interpolations(v)?;
    Ok(convection_from(&v.grid, &it))
}

fn laplacian(g: &Grid, u: &[f64], out: &mut [f64], scale: f64) {
    let (idx2, idy2) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
    for j in 0..g.ny {
        let jm = (j + g.ny - 1) % g.ny;
        let jp = (j + 1) % g.ny;
        for i in 0..g.nx {
            let im = (i + g.nx - 1) % g.nx;
            let ip = (i + 1) % g.nx;
            let k = g.idx(i, j);
            let c = u[k];
            let lap = (u[g.idx(ip, j)] - 2.0 * c + u[g.idx(im, j)]) * idx2
                + (u[g.idx(i, jp)] - 2.0 * c + u[g.idx(i, jm)]) * idy2;
            out[k] = scale * lap;
        }
    }
}

/// `ν ∇²u` with the 5-point Laplacian, per component.
pub fn diffusion(v: &VelocityField, viscosity: f64) -> VelocityField {
    let g = v.grid;
    let mut out = VelocityField::zeros(g);
    laplacian(&g, &v.ux, &mut out.ux, viscosity);
    laplacian(&g, &v.uy, &mut out.uy, viscosity);
    out
}

/// Body force evaluated at the face positions.
pub fn forcing(v: &VelocityField, cfg: &FlowConfig) -> VelocityField {
    let g = v.grid;
    let mut out = VelocityField::zeros(g);
    if let Forcing::Kolmogorov {
        amplitude,
        wavenumber,
        drag,
    } = cfg.forcing
    {
        for j in 0..g.ny {
            let (_, y) = g.x_face(0, j);
            let s = amplitude * (wavenumber * y).sin();
            for i in 0..g.nx {
                let k = g.idx(i, j);
                out.ux[k] = s - drag * v.ux[k];
                out.uy[k] = -drag * v.uy[k];
            }
        }
    }
    out
}

/// Periodic pressure projection by Fourier diagonalization of the discrete
/// 5-point Laplacian `L = D G`.
///
/// `P = I − G L⁺ D` with `G = −Dᵀ` on the periodic MAC grid, so `P` is a
/// symmetric orthogonal projector and is its own adjoint.
pub struct Projector {
    grid: Grid,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    /// Inverse eigenvalues in transposed `[kx][ky]` layout, zero at k = 0.
    inv_eig: Vec<f64>,
}

impl std::fmt::Debug for Projector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Projector").field("grid", &self.grid).finish()
    }
}

impl Projector {
    pub fn new(grid: &Grid) -> Projector {
        let mut planner = FftPlanner::new();
        let (nx, ny) = (grid.nx, grid.ny);
        let mut inv_eig = vec![0.0; nx * ny];
        let tau = 2.0 * std::f64::consts::PI;
        for kx in 0..nx {
            let lx = (2.0 * (tau * kx as f64 / nx as f64).cos() - 2.0) / (grid.dx * grid.dx);
            for ky in 0..ny {
                let ly = (2.0 * (tau * ky as f64 / ny as f64).cos() - 2.0) / (grid.dy * grid.dy);
                let lam = lx + ly;
                inv_eig[kx * ny + ky] = if kx == 0 && ky == 0 { 0.0 } else { 1.0 / lam };
            }
        }
        Projector {
            grid: *grid,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
            inv_eig,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Solves `L φ = rhs` with zero-mean gauge.
    pub fn solve_poisson(&self, rhs: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut data: Vec<Complex64> = rhs.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        self.fwd_x.process(&mut data);
        let mut t = transpose(&data, nx, ny);
        self.fwd_y.process(&mut t);
        for (z, &s) in t.iter_mut().zip(&self.inv_eig) {
            *z *= s;
        }
        self.inv_y.process(&mut t);
        let mut back = transpose(&t, ny, nx);
        self.inv_x.process(&mut back);
        let norm = 1.0 / (nx * ny) as f64;
        back.iter().map(|z| z.re * norm).collect()
    }

    pub fn project(&self, v: &VelocityField) -> VelocityField {
        let g = self.grid;
        let div = crate::grid::divergence(v);
        let phi = self.solve_poisson(&div.values);
        let mut out = v.clone();
        for j in 0..g.ny {
            let jp = (j + 1) % g.ny;
            for i in 0..g.nx {
                let ip = (i + 1) % g.nx;
                let k = g.idx(i, j);
                out.ux[k] -= (phi[g.idx(ip, j)] - phi[k]) / g.dx;
                out.uy[k] -= (phi[g.idx(i, jp)] - phi[k]) / g.dy;
            }
        }
        out
    }
}

/// `src` is `rows × cols` row-major; returns `cols × rows`.
fn transpose(src: &[Complex64], cols: usize, rows: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

pub fn pressure_project(v: &VelocityField) -> VelocityField {
    Projector::new(&v.grid).project(v)
}

/// Everything needed to replay one step backwards.
#[derive(Clone, Debug)]
pub struct StepTape {
    pub input: VelocityField,
    pub interps: Interpolations,
}

/// Reusable stepper owning the FFT plans and neighbour tables for one grid.
#[derive(Debug)]
pub struct Solver2d {
    pub cfg: FlowConfig,
    projector: Projector,
    nb: Neighbors,
}

impl Solver2d {
    pub fn new(cfg: FlowConfig) -> Result<Solver2d> {
        cfg.validate()?;
        Ok(Solver2d {
            projector: Projector::new(&cfg.grid),
            nb: Neighbors::new(&cfg.grid),
            cfg,
        })
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    fn check(&self, v: &VelocityField) -> Result<()> {
        if !v.grid.same_shape(&self.cfg.grid) {
            return Err(TsmError::ShapeMismatch {
                expected: format!("{}x{}", self.cfg.grid.nx, self.cfg.grid.ny),
                got: format!("{}x{}", v.grid.nx, v.grid.ny),
            });
        }
        Ok(())
    }

    fn advance(&self, v: &VelocityField, it: &Interpolations, step_index: usize) -> Result<VelocityField> {
        let g = self.cfg.grid;
        let conv = convection_from(&g, it);
        let diff = diffusion(v, self.cfg.viscosity);
        let force = forcing(v, &self.cfg);
        let dt = self.cfg.dt;
        let mut star = v.clone();
        for k in 0..g.len() {
            star.ux[k] += dt * (conv.ux[k] + diff.ux[k] + force.ux[k]);
            star.uy[k] += dt * (conv.uy[k] + diff.uy[k] + force.uy[k]);
        }
        let out = self.projector.project(&star);
        if !out.is_finite() {
            return Err(TsmError::NonFinite {
                step: step_index,
                detail: format!("velocity after step (max |u| before step {:.3e})", v.max_abs()),
            });
        }
        Ok(out)
    }

    /// One explicit step; `step_index` is only used in diagnostics.
    pub fn step(&self, v: &VelocityField, provider: &FluxProvider, step_index: usize) -> Result<VelocityField> {
        self.check(v)?;
        let it = provider.interpolations_with(v, &self.nb)?;
        self.advance(v, &it, step_index)
    }

    pub fn step_recorded(
        &self,
        v: &VelocityField,
        provider: &FluxProvider,
        step_index: usize,
    ) -> Result<(VelocityField, StepTape)> {
        self.check(v)?;
        let it = provider.interpolations_with(v, &self.nb)?;
        let out = self.advance(v, &it, step_index)?;
        Ok((
            out,
            StepTape {
                input: v.clone(),
                interps: it,
            },
        ))
    }

    /// Shared part of the step adjoint: given `∂L/∂v'`, returns
    /// `(∂L/∂v` without the flux-interpolation path`, ∂L/∂faces)`.
    fn advance_vjp(&self, tape: &StepTape, g_out: &VelocityField) -> (VelocityField, [Vec<f64>; N_TARGETS]) {
        let g = self.cfg.grid;
        let dt = self.cfg.dt;
        let g_star = self.projector.project(g_out);
        // v* = v + dt (conv + ν∇²v + f(v)); the Laplacian is symmetric and
        // the drag is diagonal.
        let mut gv = g_star.clone();
        let lap = diffusion(&g_star, self.cfg.viscosity);
        let drag = match self.cfg.forcing {
            Forcing::Kolmogorov { drag, .. } => drag,
            Forcing::None => 0.0,
        };
        for k in 0..g.len() {
            gv.ux[k] += dt * (lap.ux[k] - drag * g_star.ux[k]);
            gv.uy[k] += dt * (lap.uy[k] - drag * g_star.uy[k]);
        }
        let mut g_conv = g_star;
        for k in 0..g.len() {
            g_conv.ux[k] *= dt;
            g_conv.uy[k] *= dt;
        }
        let gf = convection_from_vjp(&g, &tape.interps, &g_conv);
        (gv, gf)
    }

    /// Adjoint of a learned step. Accumulates into `g_weights`, laid out like
    /// `coeffs.weights(step, ·)` for all targets (`8 × 16 × cells`).
    pub fn step_vjp_learned(
        &self,
        tape: &StepTape,
        coeffs: &CoefficientMap,
        step: usize,
        g_out: &VelocityField,
        g_weights: &mut [f64],
    ) -> VelocityField {
        let g = self.cfg.grid;
        let n = g.len();
        let (mut gv, gf) = self.advance_vjp(tape, g_out);
        for t in 0..N_TARGETS {
            let spec = TARGETS[t];
            let src = tape.input.component(spec.source);
            let w = coeffs.weights(step, t);
            let gw = &mut g_weights[t * STENCIL_TAPS * n..(t + 1) * STENCIL_TAPS * n];
            let gsrc = match spec.source {
                Axis::X => &mut gv.ux,
                Axis::Y => &mut gv.uy,
            };
            let offs = stencil_offsets(t);
            let gt = &gf[t];
            for (m, &(di, dj)) in offs.iter().enumerate() {
                let wm = &w[m * n..(m + 1) * n];
                let gwm = &mut gw[m * n..(m + 1) * n];
                for j in 0..g.ny {
                    for i in 0..g.nx {
                        let k = j * g.nx + i;
                        let p = self.nb.at(i, j, di, dj);
                        gsrc[p] += wm[k] * gt[k];
                        gwm[k] += gt[k] * src[p];
                    }
                }
            }
        }
        gv
    }

    /// Adjoint of a classic step with respect to the input velocity.
    pub fn step_vjp_classic(&self, tape: &StepTape, kind: SchemeKind, g_out: &VelocityField) -> Result<VelocityField> {
        if !kind.has_vjp() {
            return Err(TsmError::InvalidArgument(format!(
                "scheme {} is not differentiable here",
                kind.name()
            )));
        }
        let g = self.cfg.grid;
        let (mut gv, gf) = self.advance_vjp(tape, g_out);
        let faces = &tape.interps.faces;
        // Advected targets first: their gradients do not flow into the
        // advecting faces because the upwind choice is locally constant.
        for t in 0..N_TARGETS {
            let spec = TARGETS[t];
            let src = tape.input.component(spec.source);
            let gsrc = match spec.source {
                Axis::X => &mut gv.ux,
                Axis::Y => &mut gv.uy,
            };
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let k = g.idx(i, j);
                    let idx = self.nb.six(i, j, spec.half_axis, spec.lo);
                    let gk = gf[t][k];
                    match spec.advected_by {
                        Some(by) => {
                            let q = idx.map(|p| src[p]);
                            let mut dq = [0.0; 6];
                            face_value_vjp(kind, &q, faces[by][k], gk, &mut dq);
                            for s in 0..6 {
                                gsrc[idx[s]] += dq[s];
                            }
                        }
                        None => {
                            gsrc[idx[2]] += 0.5 * gk;
                            gsrc[idx[3]] += 0.5 * gk;
                        }
                    }
                }
            }
        }
        Ok(gv)
    }
}

/// One step with a fresh solver; see [`Solver2d::step`].
pub fn step(v: &VelocityField, cfg: &FlowConfig, provider: &FluxProvider) -> Result<VelocityField> {
    Solver2d::new(*cfg)?.step(v, provider, 0)
}

/// Runs `n_steps` steps, recording the initial state and every
/// `save_every`-th state.
pub fn simulate(
    v0: &VelocityField,
    cfg: &FlowConfig,
    provider: &FluxProvider,
    n_steps: usize,
    save_every: usize,
) -> Result<Trajectory> {
    if n_steps == 0 || save_every == 0 {
        return Err(TsmError::InvalidArgument(
            "n_steps and save_every must be at least 1".into(),
        ));
    }
    let solver = Solver2d::new(*cfg)?;
    let mut frames = vec![v0.clone()];
    let mut v = v0.clone();
    for s in 0..n_steps {
        v = solver.step(&v, provider, s)?;
        if (s + 1) % save_every == 0 {
            frames.push(v.clone());
        }
    }
    let meta = TrajectoryMeta::for_flow(cfg, cfg.dt * save_every as f64);
    Ok(Trajectory { meta, frames })
}
