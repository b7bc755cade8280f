//! Long rollouts against a reference trajectory.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Result, TsmError};
use crate::metrics::{duration_from_series, CorrelationSeries, Duration};
use crate::stencil_net::Checkpoint;

use super::fit::Sample;
use super::physics::Physics;
use super::rollout::predict_until_divergence;

/// A coarse solver under evaluation.
#[derive(Clone, Debug)]
pub enum Model {
    /// The physics' own classic scheme (DNS at the coarse resolution).
    Classic,
    Learned(Checkpoint),
}

impl Model {
    /// Reference states consumed before the first prediction.
    pub fn window(&self) -> usize {
        match self {
            Model::Classic => 1,
            Model::Learned(ck) => ck.window,
        }
    }
}

/// Output of [`rollout`].
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `v_0 … v_m`; `m < n_steps` only if the rollout diverged.
    pub states: Vec<Vec<f64>>,
    pub calls: usize,
    /// Step whose result was non-finite.
    pub diverged_at: Option<usize>,
}

/// States `v_0 … v_n` from reference frame `start`, one per solver step.
/// A non-finite state ends the rollout early.
pub fn rollout<P: Physics, S: Sample>(
    phys: &P,
    model: &Model,
    reference: &[Vec<S>],
    start: usize,
    n_steps: usize,
) -> Result<Rollout> {
    let t = model.window();
    if start + 1 < t || start >= reference.len() {
        return Err(TsmError::InvalidArgument(format!(
            "start frame {start} does not leave a window of {t} in {} frames",
            reference.len()
        )));
    }
    let widen = |f: &Vec<S>| -> Vec<f64> { f.iter().map(|&x| x.into()).collect() };
    match model {
        Model::Classic => {
            let mut states = vec![widen(&reference[start])];
            let mut diverged_at = None;
            for s in 0..n_steps {
                match phys.step_classic(&states[s], s) {
                    Ok((next, _)) => states.push(next),
                    Err(TsmError::NonFinite { .. }) => {
                        diverged_at = Some(s);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(Rollout {
                states,
                calls: 0,
                diverged_at,
            })
        }
        Model::Learned(ck) => {
            let window: Vec<Vec<f64>> = reference[start + 1 - t..=start].iter().map(widen).collect();
            let refs: Vec<&[f64]> = window.iter().map(|w| w.as_slice()).collect();
            let p = predict_until_divergence(phys, ck, &refs, n_steps)?;
            let mut states = vec![window[t - 1].clone()];
            states.extend(p.states);
            Ok(Rollout {
                states,
                calls: p.calls,
                diverged_at: p.diverged_at,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub series: CorrelationSeries,
    pub duration: Duration,
    pub calls: usize,
    /// Steps attempted, including a divergent last one.
    pub steps: usize,
    pub diverged_at: Option<usize>,
    /// Rollout wall-clock, excluding correlation.
    pub wall_time: f64,
}

/// Rolls `model` from frame `start` to the end of `reference` and scores
/// the correlation against it. Frames are `dt` apart. A divergent rollout
/// is scored on its finite prefix, and its high-correlation period ends at
/// the last finite frame at the latest.
pub fn evaluate<P: Physics, S: Sample>(
    phys: &P,
    model: &Model,
    reference: &[Vec<S>],
    start: usize,
    dt: f64,
    threshold: f64,
) -> Result<Evaluation> {
    if start + 1 >= reference.len() {
        return Err(TsmError::Misaligned(format!(
            "start frame {start} leaves nothing to compare in {} frames",
            reference.len()
        )));
    }
    let steps = reference.len() - 1 - start;
    let clock = Instant::now();
    let run = rollout(phys, model, reference, start, steps)?;
    let wall_time = clock.elapsed().as_secs_f64();
    let pred = &run.states;
    let mut rho = Vec::with_capacity(pred.len());
    for (k, p) in pred.iter().enumerate() {
        let r: Vec<f64> = reference[start + k].iter().map(|&x| x.into()).collect();
        rho.push(phys.correlation(p, &r)?);
    }
    let series = CorrelationSeries {
        times: (0..pred.len()).map(|k| k as f64 * dt).collect(),
        rho,
    };
    let mut duration = duration_from_series(&series, threshold)?;
    if run.diverged_at.is_some() {
        duration.censored = false;
    }
    Ok(Evaluation {
        series,
        duration,
        calls: run.calls,
        steps: run.diverged_at.map_or(steps, |s| s + 1),
        diverged_at: run.diverged_at,
        wall_time,
    })
}
