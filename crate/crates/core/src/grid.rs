//! Periodic staggered (MAC) grid geometry and field containers.
//!
//! Index conventions, in units of cells with the origin at the lower-left
//! corner of cell `(0, 0)`:
//!
//! * cell center `(i, j)` sits at `(i + 1/2, j + 1/2)`,
//! * `u_x[i, j]` sits on the right x-face of cell `(i, j)`, at `(i + 1, j + 1/2)`,
//! * `u_y[i, j]` sits on the top y-face of cell `(i, j)`, at `(i + 1/2, j + 1)`,
//! * corner `[i, j]` is the upper-right corner of cell `(i, j)`, at `(i + 1, j + 1)`.
//!
//! Every array is row-major with x varying fastest: `k = j * nx + i`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsmError};

/// Maximum speed used with [`DEFAULT_CFL_SAFETY`] to pick the coarse time step.
///
/// Together they give `dt = 0.5 * (2π/64) / 7 = 7.0125e-3` on the 64×64 grid
/// over a `2π × 2π` domain.
pub const DEFAULT_MAX_SPEED: f64 = 7.0;
pub const DEFAULT_CFL_SAFETY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::X,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub domain_x: f64,
    pub domain_y: f64,
    pub dx: f64,
    pub dy: f64,
}

pub fn make_grid(nx: usize, ny: usize, domain_x: f64, domain_y: f64) -> Result<Grid> {
    Grid::new(nx, ny, domain_x, domain_y)
}

impl Grid {
    pub fn new(nx: usize, ny: usize, domain_x: f64, domain_y: f64) -> Result<Grid> {
        if nx < 4 || ny < 4 {
            return Err(TsmError::InvalidGrid(format!(
                "need at least 4 cells per axis, got {nx}x{ny}"
            )));
        }
        if !(domain_x > 0.0 && domain_y > 0.0) || !domain_x.is_finite() || !domain_y.is_finite() {
            return Err(TsmError::InvalidGrid(format!(
                "domain extents must be positive, got {domain_x}x{domain_y}"
            )));
        }
        Ok(Grid {
            nx,
            ny,
            domain_x,
            domain_y,
            dx: domain_x / nx as f64,
            dy: domain_y / ny as f64,
        })
    }

    /// Square `n × n` grid on a `2π × 2π` domain.
    pub fn square_2pi(n: usize) -> Result<Grid> {
        let l = 2.0 * std::f64::consts::PI;
        Grid::new(n, n, l, l)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Periodic index with signed offsets.
    #[inline]
    pub fn wrap(&self, i: usize, j: usize, di: isize, dj: isize) -> usize {
        let ii = (i as isize + di).rem_euclid(self.nx as isize) as usize;
        let jj = (j as isize + dj).rem_euclid(self.ny as isize) as usize;
        jj * self.nx + ii
    }

    pub fn spacing(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.dx,
            Axis::Y => self.dy,
        }
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Physical coordinates of the `u_x[i, j]` sample.
    pub fn x_face(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 1.0) * self.dx, (j as f64 + 0.5) * self.dy)
    }

    /// Physical coordinates of the `u_y[i, j]` sample.
    pub fn y_face(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx, (j as f64 + 1.0) * self.dy)
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }

    pub fn corner(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 1.0) * self.dx, (j as f64 + 1.0) * self.dy)
    }

    pub(crate) fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(TsmError::ShapeMismatch {
                expected: format!("{what} of {}x{}", self.nx, self.ny),
                got: format!("{len} values"),
            });
        }
        Ok(())
    }

    pub(crate) fn same_shape(&self, other: &Grid) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub grid: Grid,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(grid: Grid) -> Self {
        VelocityField {
            grid,
            ux: vec![0.0; grid.len()],
            uy: vec![0.0; grid.len()],
        }
    }

    pub fn new(grid: Grid, ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        grid.check_len("u_x", ux.len())?;
        grid.check_len("u_y", uy.len())?;
        Ok(VelocityField { grid, ux, uy })
    }

    pub fn uniform(grid: Grid, cx: f64, cy: f64) -> Self {
        VelocityField {
            grid,
            ux: vec![cx; grid.len()],
            uy: vec![cy; grid.len()],
        }
    }

    /// Samples `fx` at x-face positions and `fy` at y-face positions.
    pub fn from_fn(
        grid: Grid,
        fx: impl Fn(f64, f64) -> f64,
        fy: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut v = VelocityField::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                let (x, y) = grid.x_face(i, j);
                v.ux[k] = fx(x, y);
                let (x, y) = grid.y_face(i, j);
                v.uy[k] = fy(x, y);
            }
        }
        v
    }

    /// Components concatenated `[u_x..., u_y...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.grid.len());
        out.extend_from_slice(&self.ux);
        out.extend_from_slice(&self.uy);
        out
    }

    pub fn from_flat(grid: Grid, flat: &[f64]) -> Result<Self> {
        let n = grid.len();
        if flat.len() != 2 * n {
            return Err(TsmError::ShapeMismatch {
                expected: format!("{} values", 2 * n),
                got: format!("{}", flat.len()),
            });
        }
        Ok(VelocityField {
            grid,
            ux: flat[..n].to_vec(),
            uy: flat[n..].to_vec(),
        })
    }

    pub fn component(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.ux,
            Axis::Y => &self.uy,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ux.iter().chain(self.uy.iter()).all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.ux
            .iter()
            .chain(self.uy.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Largest face-sample speed estimate `max(|u_x|, |u_y|)`.
    pub fn max_speed(&self) -> f64 {
        self.max_abs()
    }

    /// Sums of each component over all faces.
    pub fn component_sums(&self) -> (f64, f64) {
        (self.ux.iter().sum(), self.uy.iter().sum())
    }

    /// Kinetic energy density `½ Σ |u|² · dx·dy`.
    pub fn kinetic_energy(&self) -> f64 {
        let s: f64 = self
            .ux
            .iter()
            .chain(self.uy.iter())
            .map(|x| x * x)
            .sum();
        0.5 * s * self.grid.cell_area()
    }

    pub fn l2_norm(&self) -> f64 {
        self.ux
            .iter()
            .chain(self.uy.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Mean of the squared face-wise difference over both components.
    pub fn mse(&self, other: &VelocityField) -> f64 {
        let n = 2 * self.grid.len();
        let s: f64 = self
            .ux
            .iter()
            .zip(&other.ux)
            .chain(self.uy.iter().zip(&other.uy))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        s / n as f64
    }

    /// Periodic shift by whole cells: `out[i + si, j + sj] = self[i, j]`.
    pub fn shifted(&self, si: isize, sj: isize) -> VelocityField {
        let g = self.grid;
        let mut out = VelocityField::zeros(g);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let src = g.idx(i, j);
                let dst = g.wrap(i, j, si, sj);
                out.ux[dst] = self.ux[src];
                out.uy[dst] = self.uy[src];
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.check_len("scalar field", values.len())?;
        Ok(ScalarField { grid, values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Curl `∂x u_y − ∂y u_x` evaluated at cell corners by nearest central differences.
pub fn vorticity(v: &VelocityField) -> ScalarField {
    let g = v.grid;
    let mut w = vec![0.0; g.len()];
    for j in 0..g.ny {
        let jp = (j + 1) % g.ny;
        for i in 0..g.nx {
            let ip = (i + 1) % g.nx;
            let duy_dx = (v.uy[g.idx(ip, j)] - v.uy[g.idx(i, j)]) / g.dx;
            let dux_dy = (v.ux[g.idx(i, jp)] - v.ux[g.idx(i, j)]) / g.dy;
            w[g.idx(i, j)] = duy_dx - dux_dy;
        }
    }
    ScalarField {
        grid: g,
        values: w,
    }
}

/// Discrete divergence at cell centers.
pub fn divergence(v: &VelocityField) -> ScalarField {
    let g = v.grid;
    let mut d = vec![0.0; g.len()];
    for j in 0..g.ny {
        let jm = (j + g.ny - 1) % g.ny;
        for i in 0..g.nx {
            let im = (i + g.nx - 1) % g.nx;
            let k = g.idx(i, j);
            d[k] = (v.ux[k] - v.ux[g.idx(im, j)]) / g.dx + (v.uy[k] - v.uy[g.idx(i, jm)]) / g.dy;
        }
    }
    ScalarField {
        grid: g,
        values: d,
    }
}

/// `max |div v| · min(dx, dy) / max |v|`, or 0 for the zero field.
pub fn relative_divergence(v: &VelocityField) -> f64 {
    let scale = v.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    divergence(v).max_abs() * v.grid.dx.min(v.grid.dy) / scale
}

/// Face-averaged coarsening: each coarse face value is the mean of the
/// `factor` fine face values lying on that coarse face segment.
pub fn downsample_velocity(v: &VelocityField, factor: usize) -> Result<VelocityField> {
    let g = v.grid;
    if factor == 0 || g.nx % factor != 0 || g.ny % factor != 0 {
        return Err(TsmError::InvalidArgument(format!(
            "downsample factor {factor} does not divide {}x{}",
            g.nx, g.ny
        )));
    }
    if factor == 1 {
        return Ok(v.clone());
    }
    let cg = Grid::new(g.nx / factor, g.ny / factor, g.domain_x, g.domain_y)?;
    let mut out = VelocityField::zeros(cg);
    let inv = 1.0 / factor as f64;
    for cj in 0..cg.ny {
        for ci in 0..cg.nx {
            let k = cg.idx(ci, cj);
            // x-face of coarse cell (ci, cj) coincides with fine x-faces at
            // column (ci+1)·f − 1, rows cj·f .. cj·f + f − 1.
            let fi = (ci + 1) * factor - 1;
            let mut sx = 0.0;
            for r in 0..factor {
                sx += v.ux[g.idx(fi, cj * factor + r)];
            }
            out.ux[k] = sx * inv;
            let fj = (cj + 1) * factor - 1;
            let mut sy = 0.0;
            for r in 0..factor {
                sy += v.uy[g.idx(ci * factor + r, fj)];
            }
            out.uy[k] = sy * inv;
        }
    }
    Ok(out)
}

/// `safety · min(dx, dy) / max_speed`.
pub fn cfl_timestep(grid: &Grid, max_speed: f64, safety: f64) -> Result<f64> {
    if !(max_speed > 0.0) || !max_speed.is_finite() {
        return Err(TsmError::InvalidArgument(format!(
            "max_speed must be positive, got {max_speed}"
        )));
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(TsmError::InvalidArgument(format!(
            "CFL safety factor must lie in (0, 1], got {safety}"
        )));
    }
    Ok(safety * grid.dx.min(grid.dy) / max_speed)
}
