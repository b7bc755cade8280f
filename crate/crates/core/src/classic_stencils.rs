//! Hand-designed face interpolation schemes.
//!
//! All schemes work on periodic lines of values. Face `k` lies between
//! `line[k]` and `line[k + 1]`; "left" means `line[k]`. Upwinding selects the
//! left-biased reconstruction when the advecting velocity at the face is
//! `>= 0` and the mirrored one otherwise.
//!
//! The per-face kernels take the six values `q[k-2] ..= q[k+3]` so that the
//! 2-D solver can gather them along either axis without building lines.

use serde::{Deserialize, Serialize};

use crate::grid::Axis;

/// Regularizer in the WENO5 nonlinear weights.
pub const WENO_EPS: f64 = 1e-6;

/// Optimal linear weights of the three WENO5 candidate stencils.
pub const WENO_LINEAR_WEIGHTS: [f64; 3] = [0.1, 0.6, 0.3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Linear,
    Upwind,
    Weno5,
    VanLeer,
}

impl SchemeKind {
    pub fn parse(s: &str) -> Option<SchemeKind> {
        match s {
            "linear" => Some(SchemeKind::Linear),
            "upwind" => Some(SchemeKind::Upwind),
            "weno5" => Some(SchemeKind::Weno5),
            "vanleer" | "van_leer" => Some(SchemeKind::VanLeer),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Linear => "linear",
            SchemeKind::Upwind => "upwind",
            SchemeKind::Weno5 => "weno5",
            SchemeKind::VanLeer => "vanleer",
        }
    }

    /// Whether [`face_value_vjp`] is available for this scheme.
    pub fn has_vjp(self) -> bool {
        !matches!(self, SchemeKind::Weno5)
    }

    /// Minimum periodic line length the scheme needs.
    pub fn min_len(self) -> usize {
        match self {
            SchemeKind::Linear | SchemeKind::Upwind => 2,
            SchemeKind::VanLeer => 3,
            SchemeKind::Weno5 => 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StencilScheme {
    pub kind: SchemeKind,
    pub axis: Axis,
}

/// Face value from the six-point neighbourhood `q[k-2] ..= q[k+3]`.
#[inline]
pub fn face_value(kind: SchemeKind, q: &[f64; 6], advect: f64) -> f64 {
    match kind {
        SchemeKind::Linear => 0.5 * (q[2] + q[3]),
        SchemeKind::Upwind => {
            if advect >= 0.0 {
                q[2]
            } else {
                q[3]
            }
        }
        SchemeKind::VanLeer => {
            if advect >= 0.0 {
                q[2] + 0.5 * van_leer_slope(q[2] - q[1], q[3] - q[2])
            } else {
                q[3] + 0.5 * van_leer_slope(q[3] - q[4], q[2] - q[3])
            }
        }
        SchemeKind::Weno5 => {
            if advect >= 0.0 {
                weno5_left(&[q[0], q[1], q[2], q[3], q[4]])
            } else {
                weno5_left(&[q[5], q[4], q[3], q[2], q[1]])
            }
        }
    }
}

/// Accumulates `g · ∂face/∂q` into `dq`. The upwind selection is treated as
/// locally constant. Panics for WENO5, which has no adjoint here.
#[inline]
pub fn face_value_vjp(kind: SchemeKind, q: &[f64; 6], advect: f64, g: f64, dq: &mut [f64; 6]) {
    match kind {
        SchemeKind::Linear => {
            dq[2] += 0.5 * g;
            dq[3] += 0.5 * g;
        }
        SchemeKind::Upwind => {
            if advect >= 0.0 {
                dq[2] += g;
            } else {
                dq[3] += g;
            }
        }
        SchemeKind::VanLeer => {
            let (c, m, p) = if advect >= 0.0 { (2, 1, 3) } else { (3, 4, 2) };
            let dm = q[c] - q[m];
            let dp = q[p] - q[c];
            let (sm, sp) = van_leer_slope_grad(dm, dp);
            // face = q_c + ½ s(q_c − q_m, q_p − q_c)
            dq[c] += g * (1.0 + 0.5 * (sm - sp));
            dq[m] -= g * 0.5 * sm;
            dq[p] += g * 0.5 * sp;
        }
        SchemeKind::Weno5 => panic!("WENO5 has no adjoint; use linear, upwind or vanleer"),
    }
}

/// Van Leer limited slope `φ(r)·Δ+` with `r = Δ−/Δ+` and
/// `φ(r) = (r + |r|)/(1 + |r|)`, written as the harmonic mean of the two
/// one-sided differences (zero when they differ in sign).
#[inline]
pub fn van_leer_slope(dm: f64, dp: f64) -> f64 {
    if dm * dp > 0.0 {
        2.0 * dm * dp / (dm + dp)
    } else {
        0.0
    }
}

#[inline]
fn van_leer_slope_grad(dm: f64, dp: f64) -> (f64, f64) {
    if dm * dp > 0.0 {
        let s = dm + dp;
        (2.0 * dp * dp / (s * s), 2.0 * dm * dm / (s * s))
    } else {
        (0.0, 0.0)
    }
}

/// The Van Leer limiter function.
pub fn van_leer_limiter(r: f64) -> f64 {
    (r + r.abs()) / (1.0 + r.abs())
}

/// Candidate reconstructions and smoothness indicators for the right face
/// of the middle cell of `q = [q_{i-2}, …, q_{i+2}]`.
#[inline]
pub fn weno5_candidates(q: &[f64; 5]) -> ([f64; 3], [f64; 3]) {
    let [a, b, c, d, e] = *q;
    let p0 = (2.0 * a - 7.0 * b + 11.0 * c) / 6.0;
    let p1 = (-b + 5.0 * c + 2.0 * d) / 6.0;
    let p2 = (2.0 * c + 5.0 * d - e) / 6.0;
    let b0 = 13.0 / 12.0 * (a - 2.0 * b + c).powi(2) + 0.25 * (a - 4.0 * b + 3.0 * c).powi(2);
    let b1 = 13.0 / 12.0 * (b - 2.0 * c + d).powi(2) + 0.25 * (b - d).powi(2);
    let b2 = 13.0 / 12.0 * (c - 2.0 * d + e).powi(2) + 0.25 * (3.0 * c - 4.0 * d + e).powi(2);
    ([p0, p1, p2], [b0, b1, b2])
}

/// Nonlinear WENO5 weights for the left-biased reconstruction.
#[inline]
pub fn weno5_weights(q: &[f64; 5]) -> [f64; 3] {
    let (_, beta) = weno5_candidates(q);
    let mut alpha = [0.0; 3];
    for r in 0..3 {
        alpha[r] = WENO_LINEAR_WEIGHTS[r] / (WENO_EPS + beta[r]).powi(2);
    }
    let s = alpha[0] + alpha[1] + alpha[2];
    [alpha[0] / s, alpha[1] / s, alpha[2] / s]
}

#[inline]
fn weno5_left(q: &[f64; 5]) -> f64 {
    let (p, _) = weno5_candidates(q);
    let w = weno5_weights(q);
    w[0] * p[0] + w[1] * p[1] + w[2] * p[2]
}

#[inline]
fn gather6(line: &[f64], k: usize) -> [f64; 6] {
    let n = line.len() as isize;
    let mut q = [0.0; 6];
    for (s, slot) in q.iter_mut().enumerate() {
        *slot = line[(k as isize + s as isize - 2).rem_euclid(n) as usize];
    }
    q
}

fn interp_line(kind: SchemeKind, line: &[f64], advect: Option<&[f64]>) -> Vec<f64> {
    assert!(
        line.len() >= kind.min_len(),
        "{} needs at least {} cells, got {}",
        kind.name(),
        kind.min_len(),
        line.len()
    );
    if let Some(a) = advect {
        assert_eq!(a.len(), line.len(), "one advecting velocity per face");
    }
    (0..line.len())
        .map(|k| {
            let a = advect.map_or(1.0, |a| a[k]);
            face_value(kind, &gather6(line, k), a)
        })
        .collect()
}

/// Mean of the two adjacent cells.
pub fn linear_interp(line: &[f64]) -> Vec<f64> {
    interp_line(SchemeKind::Linear, line, None)
}

/// First-order upwind: left cell when `advect >= 0`, right cell otherwise.
pub fn upwind_interp(line: &[f64], advect: &[f64]) -> Vec<f64> {
    interp_line(SchemeKind::Upwind, line, Some(advect))
}

/// Jiang–Shu WENO5 reconstruction of face point values from cell averages.
pub fn weno5_interp(line: &[f64], advect: &[f64]) -> Vec<f64> {
    interp_line(SchemeKind::Weno5, line, Some(advect))
}

/// MUSCL reconstruction with the Van Leer limiter.
pub fn van_leer_interp(line: &[f64], advect: &[f64]) -> Vec<f64> {
    interp_line(SchemeKind::VanLeer, line, Some(advect))
}

/// Dispatches on `kind`; `advect` is ignored by the linear scheme.
pub fn interp(kind: SchemeKind, line: &[f64], advect: &[f64]) -> Vec<f64> {
    interp_line(kind, line, Some(advect))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const ALL: [SchemeKind; 4] = [
        SchemeKind::Linear,
        SchemeKind::Upwind,
        SchemeKind::Weno5,
        SchemeKind::VanLeer,
    ];

    /// Exact cell averages of sin over a uniform periodic grid of `n` cells
    /// on `[0, 2π)`, and the exact point values at the right faces.
    fn sin_averages(n: usize) -> (Vec<f64>, Vec<f64>) {
        let h = 2.0 * PI / n as f64;
        let avg = (0..n)
            .map(|i| {
                let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
                (a.cos() - b.cos()) / h
            })
            .collect();
        let faces = (0..n).map(|i| ((i + 1) as f64 * h).sin()).collect();
        (avg, faces)
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn linear_examples() {
        assert_eq!(linear_interp(&[3.0; 6]), vec![3.0; 6]);
        assert_eq!(linear_interp(&[0.0, 2.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn upwind_examples() {
        let line = [1.0, 2.0, 3.0];
        assert_eq!(upwind_interp(&line, &[1.0; 3]), vec![1.0, 2.0, 3.0]);
        assert_eq!(upwind_interp(&line, &[-1.0; 3]), vec![2.0, 3.0, 1.0]);
        // tie goes left
        assert_eq!(upwind_interp(&line, &[0.0; 3]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn all_schemes_exact_on_constants() {
        for kind in ALL {
            for sign in [1.0, -1.0, 0.0] {
                let out = interp(kind, &[0.7; 8], &[sign; 8]);
                assert!(out.iter().all(|&v| v == 0.7), "{kind:?}");
            }
        }
    }

    #[test]
    fn weno_constant_weights_are_linear() {
        assert_eq!(weno5_weights(&[2.0; 5]), WENO_LINEAR_WEIGHTS);
    }

    /// Fits the three quadratics and the quartic through cell averages and
    /// evaluates them at the face, independent of the closed-form candidates.
    fn polynomial_face_value(avgs: &[f64], offsets: std::ops::Range<i32>) -> f64 {
        // Unknown polynomial coefficients c_m of x^m with cell i spanning
        // [i, i+1] (h = 1); face at x = 1 (right face of cell 0).
        let n = avgs.len();
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for (r, off) in offsets.clone().enumerate() {
            for p in 0..n {
                let a = off as f64;
                let b = a + 1.0;
                m[(r, p)] = (b.powi(p as i32 + 1) - a.powi(p as i32 + 1)) / (p as f64 + 1.0);
            }
        }
        let rhs = nalgebra::DVector::from_column_slice(avgs);
        let c = m.lu().solve(&rhs).unwrap();
        c.iter().sum()
    }

    #[test]
    fn weno_candidates_match_polynomial_oracle() {
        let q = [0.3, -1.2, 0.8, 2.1, -0.4];
        let (p, _) = weno5_candidates(&q);
        let p0 = polynomial_face_value(&q[0..3], -2..1);
        let p1 = polynomial_face_value(&q[1..4], -1..2);
        let p2 = polynomial_face_value(&q[2..5], 0..3);
        let quartic = polynomial_face_value(&q, -2..3);
        assert!((p[0] - p0).abs() < 1e-12);
        assert!((p[1] - p1).abs() < 1e-12);
        assert!((p[2] - p2).abs() < 1e-12);
        // The optimal weights combine the quadratics into the quartic.
        let lin: f64 = (0..3).map(|r| WENO_LINEAR_WEIGHTS[r] * p[r]).sum();
        assert!((lin - quartic).abs() < 1e-12);
        // On a constant line the nonlinear scheme reproduces the quartic.
        let c = [1.5; 5];
        let v = face_value(SchemeKind::Weno5, &[1.5; 6], 1.0);
        assert!((v - 1.5).abs() < 1e-14);
        assert!((polynomial_face_value(&c, -2..3) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn weno_weights_approach_linear_on_fine_smooth_data() {
        let (avg, _) = sin_averages(256);
        let n = avg.len();
        let mut worst = 0.0f64;
        for k in 0..n {
            let q = gather6(&avg, k);
            let w = weno5_weights(&[q[0], q[1], q[2], q[3], q[4]]);
            for r in 0..3 {
                worst = worst.max((w[r] - WENO_LINEAR_WEIGHTS[r]).abs());
            }
        }
        assert!(worst <= 1e-3, "max weight deviation {worst}");
    }

    #[test]
    fn error_hierarchy_at_h128() {
        let (avg, exact) = sin_averages(128);
        let adv = vec![1.0; 128];
        let e_weno = max_err(&weno5_interp(&avg, &adv), &exact);
        let e_lin = max_err(&linear_interp(&avg), &exact);
        let e_up = max_err(&upwind_interp(&avg, &adv), &exact);
        assert!(e_weno < e_lin && e_lin < e_up, "{e_weno} {e_lin} {e_up}");
    }

    #[test]
    fn van_leer_limiter_values() {
        assert_eq!(van_leer_limiter(1.0), 1.0);
        assert_eq!(van_leer_limiter(-2.0), 0.0);
        assert!((van_leer_limiter(3.0) - 1.5).abs() < 1e-15);
        // slope form agrees with φ(r)·Δ+
        let (dm, dp) = (0.3, 0.7);
        assert!((van_leer_slope(dm, dp) - van_leer_limiter(dm / dp) * dp).abs() < 1e-15);
    }

    #[test]
    fn van_leer_ramp_is_second_order() {
        let line: Vec<f64> = (0..10).map(|i| 2.0 * i as f64).collect();
        let out = van_leer_interp(&line, &[1.0; 10]);
        for k in 1..8 {
            assert_eq!(out[k], 2.0 * k as f64 + 1.0);
        }
        let out = van_leer_interp(&line, &[-1.0; 10]);
        for k in 1..7 {
            assert_eq!(out[k], 2.0 * k as f64 + 1.0);
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let q = [0.1, 0.5, 0.9, 1.6, 1.8, 1.1];
        for kind in [SchemeKind::Linear, SchemeKind::Upwind, SchemeKind::VanLeer] {
            for adv in [1.0, -1.0] {
                let mut dq = [0.0; 6];
                face_value_vjp(kind, &q, adv, 1.0, &mut dq);
                for s in 0..6 {
                    let h = 1e-6;
                    let mut qp = q;
                    qp[s] += h;
                    let mut qm = q;
                    qm[s] -= h;
                    let fd = (face_value(kind, &qp, adv) - face_value(kind, &qm, adv)) / (2.0 * h);
                    assert!((fd - dq[s]).abs() < 1e-7, "{kind:?} {adv} {s}: {fd} vs {}", dq[s]);
                }
            }
        }
    }

    fn bounded_by_neighbours(kind: SchemeKind, line: &[f64], adv: &[f64]) -> bool {
        let out = interp(kind, line, adv);
        let n = line.len();
        out.iter().enumerate().all(|(k, &f)| {
            let a = line[k];
            let b = line[(k + 1) % n];
            f >= a.min(b) - 1e-12 && f <= a.max(b) + 1e-12
        })
    }

    proptest! {
        #[test]
        fn monotone_data_stays_bounded(
            mut vals in proptest::collection::vec(-10.0f64..10.0, 12),
            sign in prop_oneof![Just(1.0f64), Just(-1.0f64)],
        ) {
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let adv = vec![sign; vals.len()];
            // Faces away from the periodic wrap see monotone neighbourhoods.
            let n = vals.len();
            for kind in [SchemeKind::Upwind, SchemeKind::VanLeer] {
                let out = interp(kind, &vals, &adv);
                for k in 2..n - 3 {
                    prop_assert!(out[k] >= vals[k] - 1e-12 && out[k] <= vals[k + 1] + 1e-12);
                }
            }
        }

        #[test]
        fn step_profiles_are_non_oscillatory(
            lo in -5.0f64..5.0,
            jump in 0.1f64..10.0,
            at in 3usize..13,
            sign in prop_oneof![Just(1.0f64), Just(-1.0f64)],
        ) {
            let n = 16;
            let line: Vec<f64> = (0..n).map(|i| if i < at { lo } else { lo + jump }).collect();
            let adv = vec![sign; n];
            for kind in [SchemeKind::Weno5, SchemeKind::VanLeer, SchemeKind::Upwind] {
                let out = interp(kind, &line, &adv);
                // Small WENO overshoot is O(ε)-weighted; allow a relative margin.
                let tol = 1e-3 * jump;
                for &f in &out {
                    prop_assert!(f >= lo - tol && f <= lo + jump + tol, "{:?} {}", kind, f);
                }
            }
            prop_assert!(bounded_by_neighbours(SchemeKind::VanLeer, &line, &adv));
        }
    }
}
