//! Learned-solver rollouts and their reverse pass.
//!
//! A rollout starts from a window of `T` states `w_0 … w_{T−1}` (oldest
//! first) with `v_0 = w_{T−1}`. Every `K` steps the network maps the current
//! features to coefficients for the next `K` steps:
//!
//! * raw features are the last `T` states, time-major, component-minor;
//! * HiPPO features are the encoder state after absorbing the window and
//!   every predicted state so far.
//!
//! In LC mode the network output is an additive velocity correction applied
//! after each classic step.

use crate::error::{Result, TsmError};
use crate::hippo::{hippo_matrices, hippo_update, hippo_update_vjp, HippoMatrices, HippoState};
use crate::nn::Activations;
use crate::stencil_net::{lift_coefficients, lift_vjp, network_vjp, run_network, Checkpoint, CoefficientMap, Mode};

use super::physics::Physics;

/// Loss of one window: the mean over unroll steps of the state MSE.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub per_step: Vec<f64>,
}

/// Output of an inference rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Predicted states `v_1 … v_n`.
    pub states: Vec<Vec<f64>>,
    /// Number of network evaluations.
    pub calls: usize,
    /// Step whose result was non-finite, when the rollout was allowed to
    /// stop there; `states` then holds the finite prefix.
    pub diverged_at: Option<usize>,
}

struct Call {
    acts: Activations,
    coeffs: Option<CoefficientMap>,
}

struct Forward<T> {
    states: Vec<Vec<f64>>,
    tapes: Vec<T>,
    calls: Vec<Call>,
    n_calls: usize,
    diverged_at: Option<usize>,
}

/// Checks that `ck` fits `phys` and returns the HiPPO matrices if needed.
pub fn check_model<P: Physics>(phys: &P, ck: &Checkpoint) -> Result<Option<HippoMatrices>> {
    let arch = ck.params.arch;
    let c = phys.components();
    if arch.dims != phys.dims() {
        return Err(TsmError::InvalidArgument(format!(
            "model is {:?}, solver is {:?}",
            arch.dims,
            phys.dims()
        )));
    }
    if ck.window == 0 || ck.bundle == 0 {
        return Err(TsmError::InvalidArgument("window and bundle must be at least 1".into()));
    }
    let expect_in = if ck.mode.uses_hippo() { ck.hippo_order * c } else { ck.window * c };
    let lay = phys.layout();
    let expect_out = if ck.mode == Mode::Lc {
        if ck.bundle != 1 {
            return Err(TsmError::InvalidArgument("LC mode needs bundle 1".into()));
        }
        c
    } else {
        lay.targets * lay.free() * ck.bundle
    };
    if arch.in_channels != expect_in || arch.out_channels != expect_out {
        return Err(TsmError::ShapeMismatch {
            expected: format!("{expect_in} -> {expect_out} channels"),
            got: format!("{} -> {}", arch.in_channels, arch.out_channels),
        });
    }
    if ck.params.len() != arch.param_count() {
        return Err(TsmError::ShapeMismatch {
            expected: format!("{} parameters", arch.param_count()),
            got: format!("{}", ck.params.len()),
        });
    }
    Ok(if ck.mode.uses_hippo() {
        Some(hippo_matrices(ck.hippo_order)?)
    } else {
        None
    })
}

fn raw_features(window: &[&[f64]], states: &[Vec<f64>], s: usize, t: usize, len: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(t * len);
    for tau in 0..t {
        let j = s + tau;
        if j < t {
            f.extend_from_slice(window[j]);
        } else {
            f.extend_from_slice(&states[j - t + 1]);
        }
    }
    f
}

fn advance<P: Physics>(phys: &P, call: &Call, v: &[f64], s: usize, k: usize) -> Result<(Vec<f64>, P::Tape)> {
    match &call.coeffs {
        Some(c) => phys.step_learned(v, c, s % k, s),
        None => {
            let (mut out, tape) = phys.step_classic(v, s)?;
            for (o, d) in out.iter_mut().zip(call.acts.output()) {
                *o += d;
            }
            if out.iter().any(|x| !x.is_finite()) {
                return Err(TsmError::NonFinite {
                    step: s,
                    detail: "corrected state".into(),
                });
            }
            Ok((out, tape))
        }
    }
}

fn forward<P: Physics>(
    phys: &P,
    ck: &Checkpoint,
    mats: Option<&HippoMatrices>,
    window: &[&[f64]],
    n_steps: usize,
    record: bool,
    stop_on_divergence: bool,
) -> Result<Forward<P::Tape>> {
    let t = ck.window;
    let k = ck.bundle;
    let len = phys.state_len();
    if window.len() != t {
        return Err(TsmError::InvalidArgument(format!(
            "model needs a window of {t} states, got {}",
            window.len()
        )));
    }
    if let Some(bad) = window.iter().find(|w| w.len() != len) {
        return Err(TsmError::ShapeMismatch {
            expected: format!("{len} values per state"),
            got: format!("{}", bad.len()),
        });
    }
    let (nx, ny) = (phys.nx(), phys.ny());
    let lay = phys.layout();
    let mut hippo = match mats {
        Some(m) => {
            let mut h = HippoState::zeros(m.order, phys.components(), phys.cells());
            for w in window {
                hippo_update(&mut h, w, m)?;
            }
            Some(h)
        }
        None => None,
    };
    let mut fw = Forward {
        states: vec![window[t - 1].to_vec()],
        tapes: Vec::new(),
        calls: Vec::new(),
        n_calls: 0,
        diverged_at: None,
    };
    let mut current: Option<Call> = None;
    for s in 0..n_steps {
        if s % k == 0 {
            let feats = match &hippo {
                Some(h) => h.coeffs.clone(),
                None => raw_features(window, &fw.states, s, t, len),
            };
            let acts = run_network(&ck.params, &feats, nx, ny, record)?;
            let coeffs = if ck.mode == Mode::Lc {
                None
            } else {
                Some(lift_coefficients(acts.output(), lay, nx, ny, k))
            };
            fw.n_calls += 1;
            if let Some(prev) = current.take() {
                if record {
                    fw.calls.push(prev);
                }
            }
            current = Some(Call { acts, coeffs });
        }
        let call = current.as_ref().unwrap();
        let (next, tape) = match advance(phys, call, &fw.states[s], s, k) {
            Ok(x) => x,
            Err(TsmError::NonFinite { .. }) if stop_on_divergence => {
                fw.diverged_at = Some(s);
                break;
            }
            Err(e) => return Err(e),
        };
        if let (Some(h), Some(m)) = (hippo.as_mut(), mats) {
            hippo_update(h, &next, m)?;
        }
        if record {
            fw.tapes.push(tape);
        }
        fw.states.push(next);
    }
    if let Some(c) = current {
        if record {
            fw.calls.push(c);
        }
    }
    Ok(fw)
}

/// Rolls a learned solver `n_steps` forward from `window`.
pub fn predict<P: Physics>(phys: &P, ck: &Checkpoint, window: &[&[f64]], n_steps: usize) -> Result<Prediction> {
    predict_with(phys, ck, window, n_steps, false)
}

/// Like [`predict`], but a non-finite state ends the rollout instead of
/// failing it.
pub fn predict_until_divergence<P: Physics>(
    phys: &P,
    ck: &Checkpoint,
    window: &[&[f64]],
    n_steps: usize,
) -> Result<Prediction> {
    predict_with(phys, ck, window, n_steps, true)
}

fn predict_with<P: Physics>(phys: &P, ck: &Checkpoint, window: &[&[f64]], n_steps: usize, stop: bool) -> Result<Prediction> {
    let mats = check_model(phys, ck)?;
    let fw = forward(phys, ck, mats.as_ref(), window, n_steps, false, stop)?;
    let mut states = fw.states;
    states.remove(0);
    Ok(Prediction {
        states,
        calls: fw.n_calls,
        diverged_at: fw.diverged_at,
    })
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Unrolled loss over `frames = [w_0 … w_{T−1}, y_1 … y_N]`.
pub fn unrolled_loss<P: Physics>(phys: &P, ck: &Checkpoint, frames: &[&[f64]]) -> Result<LossReport> {
    Ok(loss_and_grad(phys, ck, frames, false)?.0)
}

/// Loss and, if requested, its exact gradient with respect to `ck.params`.
pub fn loss_and_grad<P: Physics>(
    phys: &P,
    ck: &Checkpoint,
    frames: &[&[f64]],
    want_grad: bool,
) -> Result<(LossReport, Option<Vec<f64>>)> {
    let mats = check_model(phys, ck)?;
    let t = ck.window;
    if frames.len() <= t {
        return Err(TsmError::InvalidArgument(format!(
            "window of {} frames leaves nothing to unroll after {t} inputs",
            frames.len()
        )));
    }
    let n = frames.len() - t;
    let k = ck.bundle;
    if n % k != 0 {
        return Err(TsmError::InvalidArgument(format!("bundle {k} does not divide unroll {n}")));
    }
    let (window, targets) = frames.split_at(t);
    let fw = forward(phys, ck, mats.as_ref(), window, n, want_grad, false)?;
    let per_step: Vec<f64> = (0..n).map(|s| mse(&fw.states[s + 1], targets[s])).collect();
    let report = LossReport {
        loss: per_step.iter().sum::<f64>() / n as f64,
        per_step,
    };
    if !want_grad {
        return Ok((report, None));
    }

    let len = phys.state_len();
    let (nx, ny, cells, comps) = (phys.nx(), phys.ny(), phys.cells(), phys.components());
    let lay = phys.layout();
    let slot_len = lay.targets * lay.taps * cells;
    let mut g_params = vec![0.0; ck.params.len()];
    let mut gv: Vec<Vec<f64>> = vec![vec![0.0; len]; n + 1];
    let mut gh = mats.as_ref().map(|m| vec![0.0; m.order * comps * cells]);
    let mut gw_call = if ck.mode == Mode::Lc { Vec::new() } else { vec![0.0; k * slot_len] };
    let scale = 2.0 / (n * len) as f64;
    let mut g_corr = Vec::new();

    for s in (0..n).rev() {
        {
            let g = &mut gv[s + 1];
            for ((gi, p), y) in g.iter_mut().zip(&fw.states[s + 1]).zip(targets[s]) {
                *gi += scale * (p - y);
            }
        }
        if let (Some(m), Some(gh)) = (mats.as_ref(), gh.as_mut()) {
            hippo_update_vjp(m, comps, cells, t + s + 1, gh, &mut gv[s + 1]);
        }
        let g_next = std::mem::take(&mut gv[s + 1]);
        let call = &fw.calls[s / k];
        let g_prev = match &call.coeffs {
            Some(c) => {
                let slot = s % k;
                phys.step_learned_vjp(
                    &fw.tapes[s],
                    c,
                    slot,
                    &g_next,
                    &mut gw_call[slot * slot_len..(slot + 1) * slot_len],
                )?
            }
            None => {
                g_corr = g_next.clone();
                phys.step_classic_vjp(&fw.tapes[s], &g_next)?
            }
        };
        for (a, b) in gv[s].iter_mut().zip(&g_prev) {
            *a += b;
        }
        if s % k == 0 {
            let g_out = if call.coeffs.is_some() {
                let g = lift_vjp(&gw_call, lay, cells, k);
                gw_call.iter_mut().for_each(|x| *x = 0.0);
                g
            } else {
                std::mem::take(&mut g_corr)
            };
            let g_feats = network_vjp(&ck.params, &call.acts, nx, ny, &g_out, &mut g_params);
            match gh.as_mut() {
                Some(gh) => {
                    for (a, b) in gh.iter_mut().zip(&g_feats) {
                        *a += b;
                    }
                }
                None => {
                    for tau in 0..t {
                        let j = s + tau;
                        if j >= t {
                            let target = &mut gv[j - t + 1];
                            for (a, b) in target.iter_mut().zip(&g_feats[tau * len..(tau + 1) * len]) {
                                *a += b;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((report, Some(g_params)))
}
