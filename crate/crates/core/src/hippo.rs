//! Online projection of scalar histories onto scaled Legendre polynomials.
//!
//! After absorbing samples `u_1 … u_i` the state `c ∈ ℝᴺ` is updated as
//!
//! ```text
//! c ← (I − A/i) c + (B/i) u_i
//! ```
//!
//! with `i` the 1-based sample count. From the zero state the first update
//! reduces to `c = B u_1`, the projection of a constant history, so no
//! special case is needed. `c_0` is the running mean of the samples.
//!
//! Coefficients of a velocity history are stored planar, `[comp · N + n][cell]`,
//! so the state is directly the network input.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsmError};
use crate::grid::VelocityField;

pub const DEFAULT_ORDER: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct HippoMatrices {
    pub order: usize,
    /// Row-major `N × N`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl HippoMatrices {
    pub fn a_at(&self, n: usize, k: usize) -> f64 {
        self.a[n * self.order + k]
    }
}

pub fn hippo_matrices(order: usize) -> Result<HippoMatrices> {
    if order == 0 {
        return Err(TsmError::InvalidArgument("HiPPO order must be at least 1".into()));
    }
    let mut a = vec![0.0; order * order];
    for n in 0..order {
        for k in 0..=n {
            a[n * order + k] = if n == k {
                (n + 1) as f64
            } else {
                ((2 * n + 1) as f64).sqrt() * ((2 * k + 1) as f64).sqrt()
            };
        }
    }
    let b = (0..order).map(|n| ((2 * n + 1) as f64).sqrt()).collect();
    Ok(HippoMatrices { order, a, b })
}

/// Discretization knobs kept for provenance; the update rule does not read them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HippoHyper {
    pub a: f64,
    pub b: f64,
    pub dt: f64,
}

impl Default for HippoHyper {
    fn default() -> Self {
        HippoHyper {
            a: -0.5,
            b: 1.0,
            dt: 1.0,
        }
    }
}

/// Coefficients for `components × cells` independent scalar streams.
#[derive(Clone, Debug, PartialEq)]
pub struct HippoState {
    pub order: usize,
    pub components: usize,
    pub cells: usize,
    /// `coeffs[(comp · order + n) · cells + p]`
    pub coeffs: Vec<f64>,
    pub step_count: usize,
    pub hyper: HippoHyper,
}

impl HippoState {
    pub fn zeros(order: usize, components: usize, cells: usize) -> HippoState {
        HippoState {
            order,
            components,
            cells,
            coeffs: vec![0.0; order * components * cells],
            step_count: 0,
            hyper: HippoHyper::default(),
        }
    }

    pub fn channels(&self) -> usize {
        self.order * self.components
    }

    /// Coefficient vector of one scalar stream.
    pub fn series(&self, comp: usize, cell: usize) -> Vec<f64> {
        (0..self.order)
            .map(|n| self.coeffs[(comp * self.order + n) * self.cells + cell])
            .collect()
    }
}

/// Absorbs one sample per stream; `samples[comp · cells + p]`.
pub fn hippo_update(state: &mut HippoState, samples: &[f64], mats: &HippoMatrices) -> Result<()> {
    let (nn, cells) = (state.order, state.cells);
    if mats.order != nn {
        return Err(TsmError::ShapeMismatch {
            expected: format!("order {nn}"),
            got: format!("order {}", mats.order),
        });
    }
    if samples.len() != state.components * cells {
        return Err(TsmError::ShapeMismatch {
            expected: format!("{} samples", state.components * cells),
            got: format!("{}", samples.len()),
        });
    }
    let inv = 1.0 / (state.step_count + 1) as f64;
    for comp in 0..state.components {
        let block = &mut state.coeffs[comp * nn * cells..(comp + 1) * nn * cells];
        let u = &samples[comp * cells..(comp + 1) * cells];
        // A is lower triangular: updating rows from the top down would
        // overwrite inputs still needed, so go bottom up.
        for n in (0..nn).rev() {
            let (lower, rest) = block.split_at_mut(n * cells);
            let row = &mut rest[..cells];
            let ann = mats.a_at(n, n);
            let bn = mats.b[n];
            for p in 0..cells {
                row[p] += inv * (bn * u[p] - ann * row[p]);
            }
            for k in 0..n {
                let ank = mats.a_at(n, k) * inv;
                let ck = &lower[k * cells..(k + 1) * cells];
                for p in 0..cells {
                    row[p] -= ank * ck[p];
                }
            }
        }
    }
    state.step_count += 1;
    Ok(())
}

/// Adjoint of the update that used 1-based count `count`: maps `∂L/∂c'` to
/// `∂L/∂c` in place and accumulates `∂L/∂u` into `g_samples`.
pub fn hippo_update_vjp(
    mats: &HippoMatrices,
    components: usize,
    cells: usize,
    count: usize,
    g_coeffs: &mut [f64],
    g_samples: &mut [f64],
) {
    let nn = mats.order;
    let inv = 1.0 / count as f64;
    for comp in 0..components {
        let block = &mut g_coeffs[comp * nn * cells..(comp + 1) * nn * cells];
        let gu = &mut g_samples[comp * cells..(comp + 1) * cells];
        for n in 0..nn {
            let bn = mats.b[n] * inv;
            let row = &block[n * cells..(n + 1) * cells];
            for p in 0..cells {
                gu[p] += bn * row[p];
            }
        }
        // c_k = (1 − A_kk/i) c'_k − Σ_{n>k} (A_nk/i) c'_n ; top down keeps
        // the rows n > k untouched while row k is rewritten.
        for k in 0..nn {
            let (head, tail) = block.split_at_mut((k + 1) * cells);
            let row = &mut head[k * cells..];
            let akk = 1.0 - mats.a_at(k, k) * inv;
            for p in 0..cells {
                row[p] *= akk;
            }
            for n in k + 1..nn {
                let ank = mats.a_at(n, k) * inv;
                let cn = &tail[(n - k - 1) * cells..(n - k) * cells];
                for p in 0..cells {
                    row[p] -= ank * cn[p];
                }
            }
        }
    }
}

/// Encodes a window of velocity fields, oldest first.
pub fn encode_trajectory(frames: &[VelocityField], order: usize) -> Result<HippoState> {
    let first = frames
        .first()
        .ok_or_else(|| TsmError::InvalidArgument("cannot encode an empty window".into()))?;
    let g = first.grid;
    let mats = hippo_matrices(order)?;
    let mut st = HippoState::zeros(order, 2, g.len());
    for f in frames {
        if !f.grid.same_shape(&g) {
            return Err(TsmError::ShapeMismatch {
                expected: format!("{}x{}", g.nx, g.ny),
                got: format!("{}x{}", f.grid.nx, f.grid.ny),
            });
        }
        hippo_update(&mut st, &f.to_flat(), &mats)?;
    }
    Ok(st)
}

/// Encodes flat states (`components × cells` each), oldest first.
pub fn encode_flat(frames: &[&[f64]], components: usize, mats: &HippoMatrices) -> Result<HippoState> {
    let len = frames
        .first()
        .map(|f| f.len())
        .ok_or_else(|| TsmError::InvalidArgument("cannot encode an empty window".into()))?;
    let mut st = HippoState::zeros(mats.order, components, len / components);
    for f in frames {
        hippo_update(&mut st, f, mats)?;
    }
    Ok(st)
}

/// Legendre polynomials `P_0 … P_{n−1}` at `x`.
pub fn legendre(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n);
    for k in 0..n {
        let v = match k {
            0 => 1.0,
            1 => x,
            _ => ((2 * k - 1) as f64 * x * p[k - 1] - (k - 1) as f64 * p[k - 2]) / k as f64,
        };
        p.push(v);
    }
    p
}

/// `√(2n+1) P_n(2s/t − 1)`: the basis whose coefficients the recurrence tracks.
pub fn scaled_basis(order: usize, s_over_t: f64) -> Vec<f64> {
    let mut p = legendre(order, 2.0 * s_over_t - 1.0);
    for (n, v) in p.iter_mut().enumerate() {
        *v *= ((2 * n + 1) as f64).sqrt();
    }
    p
}

/// Evaluates `Σ c_n √(2n+1) P_n` at `n_points` midpoints of `[0, t]`.
pub fn reconstruct(coeffs: &[f64], n_points: usize) -> Vec<f64> {
    (0..n_points)
        .map(|k| {
            let s = (k as f64 + 0.5) / n_points as f64;
            scaled_basis(coeffs.len(), s)
                .iter()
                .zip(coeffs)
                .map(|(b, c)| b * c)
                .sum()
        })
        .collect()
}

/// Reconstruction of one stream of a state.
pub fn reconstruct_state(state: &HippoState, comp: usize, cell: usize, n_points: usize) -> Result<Vec<f64>> {
    if state.step_count == 0 {
        return Err(TsmError::InvalidArgument("state has absorbed no samples".into()));
    }
    Ok(reconstruct(&state.series(comp, cell), n_points))
}

/// Coefficients of a single scalar stream.
pub fn encode_series(samples: &[f64], order: usize) -> Result<Vec<f64>> {
    let mats = hippo_matrices(order)?;
    let mut st = HippoState::zeros(order, 1, 1);
    for &u in samples {
        hippo_update(&mut st, &[u], &mats)?;
    }
    Ok(st.coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use nalgebra::{DMatrix, DVector};

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    /// Least-squares fit of the scaled basis to the samples at midpoints.
    fn projection_oracle(samples: &[f64], order: usize) -> Vec<f64> {
        let l = samples.len();
        let m = DMatrix::from_fn(l, order, |r, c| scaled_basis(order, (r as f64 + 0.5) / l as f64)[c]);
        let y = DVector::from_column_slice(samples);
        let sol = m.svd(true, true).solve(&y, 1e-12).unwrap();
        sol.iter().copied().collect()
    }

    #[test]
    fn closed_form_small() {
        let m = hippo_matrices(2).unwrap();
        assert_eq!(m.a, vec![1.0, 0.0, 3f64.sqrt(), 2.0]);
        assert_eq!(m.b, vec![1.0, 3f64.sqrt()]);
        let m = hippo_matrices(16).unwrap();
        for n in 0..16 {
            assert_eq!(m.a_at(n, n), (n + 1) as f64);
            for k in n + 1..16 {
                assert_eq!(m.a_at(n, k), 0.0);
            }
        }
        assert!(hippo_matrices(0).is_err());
    }

    #[test]
    fn first_update_is_b_times_sample() {
        let c = encode_series(&[2.5], 5).unwrap();
        let m = hippo_matrices(5).unwrap();
        for n in 0..5 {
            assert_eq!(c[n], 2.5 * m.b[n]);
        }
        assert_eq!(encode_series(&[0.0, 0.0, 0.0], 4).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn constant_stream_reconstructs() {
        let c = encode_series(&[1.3; 64], 8).unwrap();
        assert!((c[0] - 1.3).abs() < 1e-12);
        let r = reconstruct(&c, 64);
        assert!(rel_l2(&r, &[1.3; 64]) <= 1e-2);
    }

    #[test]
    fn ramp_reconstructs() {
        let l = 200;
        let xs: Vec<f64> = (0..l).map(|k| (k as f64 + 0.5) / l as f64).collect();
        let c = encode_series(&xs, 4).unwrap();
        let r = reconstruct(&c, l);
        assert!(rel_l2(&r, &xs) <= 1e-2, "{}", rel_l2(&r, &xs));
    }

    #[test]
    fn matches_projection_oracle() {
        let l = 256;
        for (fi, f) in [
            (|s: f64| (3.0 * s).sin() + 0.5 * s) as fn(f64) -> f64,
            |s: f64| (-s).exp() * (5.0 * s).cos(),
            |s: f64| 1.0 + s * s,
        ]
        .iter()
        .enumerate()
        {
            let samples: Vec<f64> = (0..l).map(|k| f(2.0 * (k as f64 + 0.5) / l as f64)).collect();
            let c = encode_series(&samples, 8).unwrap();
            let o = projection_oracle(&samples, 8);
            let e = rel_l2(&c, &o);
            assert!(e <= 0.05, "stream {fi}: {e}");
        }
    }

    #[test]
    fn error_non_increasing_in_order() {
        let l = 256;
        let s: Vec<f64> = (0..l).map(|k| (6.0 * (k as f64 + 0.5) / l as f64).sin()).collect();
        let mut last = f64::INFINITY;
        for n in [2, 4, 8, 16] {
            let e = rel_l2(&reconstruct(&encode_series(&s, n).unwrap(), l), &s);
            assert!(e <= last, "N={n}: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn linear_in_stream() {
        let a: Vec<f64> = (0..40).map(|k| (k as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = (0..40).map(|k| (k as f64 * 0.1).cos()).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let ca = encode_series(&a, 6).unwrap();
        let cb = encode_series(&b, 6).unwrap();
        let cm = encode_series(&mix, 6).unwrap();
        for n in 0..6 {
            assert!((cm[n] - (2.0 * ca[n] - 3.0 * cb[n])).abs() < 1e-12);
        }
    }

    #[test]
    fn incremental_matches_batch() {
        let g = Grid::square_2pi(8).unwrap();
        let frames: Vec<VelocityField> = (0..6)
            .map(|t| VelocityField::from_fn(g, |x, y| (x + t as f64).sin() * y.cos(), |x, y| (y * t as f64).cos() + x))
            .collect();
        let mut inc = encode_trajectory(&frames[..5], 4).unwrap();
        hippo_update(&mut inc, &frames[5].to_flat(), &hippo_matrices(4).unwrap()).unwrap();
        let batch = encode_trajectory(&frames, 4).unwrap();
        assert_eq!(inc, batch);
    }

    #[test]
    fn uniform_and_zero_windows() {
        let g = Grid::square_2pi(6).unwrap();
        let z = encode_trajectory(&[VelocityField::zeros(g)], 3).unwrap();
        assert!(z.coeffs.iter().all(|&c| c == 0.0));
        let u: Vec<VelocityField> = (0..4).map(|t| VelocityField::uniform(g, t as f64, 1.0 - t as f64)).collect();
        let s = encode_trajectory(&u, 3).unwrap();
        for ch in 0..s.channels() {
            let row = &s.coeffs[ch * g.len()..(ch + 1) * g.len()];
            assert!(row.iter().all(|&c| c == row[0]));
        }
        assert!(encode_trajectory(&[], 3).is_err());
    }

    #[test]
    fn vjp_is_adjoint_of_update() {
        let mats = hippo_matrices(5).unwrap();
        let (comps, cells) = (2, 3);
        let len = 5 * comps * cells;
        let c0: Vec<f64> = (0..len).map(|k| (k as f64 * 0.7).sin()).collect();
        let u: Vec<f64> = (0..comps * cells).map(|k| (k as f64 * 1.3).cos()).collect();
        let gc: Vec<f64> = (0..len).map(|k| (k as f64 * 0.2 + 0.1).cos()).collect();
        let mut st = HippoState::zeros(5, comps, cells);
        st.coeffs = c0.clone();
        st.step_count = 3;
        hippo_update(&mut st, &u, &mats).unwrap();
        let lhs: f64 = st.coeffs.iter().zip(&gc).map(|(a, b)| a * b).sum();
        let mut g = gc.clone();
        let mut gu = vec![0.0; comps * cells];
        hippo_update_vjp(&mats, comps, cells, 4, &mut g, &mut gu);
        let rhs: f64 = c0.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() + u.iter().zip(&gu).map(|(a, b)| a * b).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} {rhs}");
    }
}
