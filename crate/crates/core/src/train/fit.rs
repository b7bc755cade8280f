//! Training loop: seeded window sampling, batched gradients, Adam, logging
//! and periodic checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TsmError};
use crate::stencil_net::{init_params, Checkpoint, Dims, Mode, NetArch};

use super::optim::{learning_rate, optimizer_step, AdamConfig, AdamState};
use super::physics::Physics;
use super::rollout::loss_and_grad;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Unrolled solver steps per window.
    pub unroll: usize,
    /// Steps served by one network call.
    pub bundle: usize,
    /// Input states per window.
    pub window: usize,
    pub hippo_order: usize,
    pub layers: usize,
    pub channels: usize,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Write a checkpoint every this many optimizer steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Desk-scale defaults for a mode: 4 layers of 64 channels, unroll 32,
    /// batch 8, 2000 steps.
    pub fn for_mode(mode: Mode) -> TrainConfig {
        let window = match mode {
            Mode::TsmRaw | Mode::TsmHippo => 32,
            Mode::Li | Mode::Lc => 1,
        };
        TrainConfig {
            mode,
            unroll: 32,
            bundle: 1,
            window,
            hippo_order: crate::hippo::DEFAULT_ORDER,
            layers: 4,
            channels: 64,
            batch: 8,
            steps: 2000,
            seed: 0,
            adam: AdamConfig::default(),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TsmError::InvalidArgument(m));
        if self.unroll == 0 || self.bundle == 0 || self.window == 0 {
            return bad("unroll, bundle and window must be at least 1".into());
        }
        if self.unroll % self.bundle != 0 {
            return bad(format!("bundle {} does not divide unroll {}", self.bundle, self.unroll));
        }
        if self.mode == Mode::Li && self.window != 1 {
            return bad("LI mode uses a window of 1".into());
        }
        if self.mode == Mode::Lc && self.bundle != 1 {
            return bad("LC mode uses bundle 1".into());
        }
        if self.mode.uses_hippo() && self.hippo_order == 0 {
            return bad("HiPPO order must be at least 1".into());
        }
        if self.batch == 0 || self.layers == 0 || self.channels == 0 {
            return bad("batch, layers and channels must be at least 1".into());
        }
        Ok(())
    }

    pub fn in_channels(&self, dims: Dims) -> usize {
        let per = if self.mode.uses_hippo() { self.hippo_order } else { self.window };
        per * dims.components()
    }

    pub fn arch(&self, dims: Dims) -> NetArch {
        let cin = self.in_channels(dims);
        if self.mode == Mode::Lc {
            NetArch::correction(dims, cin, self.layers, self.channels)
        } else {
            NetArch::stencil(dims, cin, self.layers, self.channels, self.bundle)
        }
    }

    /// Fresh model with seeded parameters.
    pub fn init_checkpoint(&self, dims: Dims) -> Result<Checkpoint> {
        self.validate()?;
        Ok(Checkpoint {
            mode: self.mode,
            window: self.window,
            bundle: self.bundle,
            hippo_order: if self.mode.uses_hippo() { self.hippo_order } else { 0 },
            params: init_params(self.arch(dims), self.seed),
        })
    }

    /// Frames per training window.
    pub fn span(&self) -> usize {
        self.window + self.unroll
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub log_csv: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

/// `(trajectory, offset)` pairs for one optimizer step.
pub fn sample_windows(rng: &mut ChaCha8Rng, lengths: &[usize], span: usize, batch: usize) -> Vec<(usize, usize)> {
    (0..batch)
        .map(|_| {
            let t = rng.gen_range(0..lengths.len());
            let o = rng.gen_range(0..=lengths[t] - span);
            (t, o)
        })
        .collect()
}

/// Frame value type of in-memory datasets: `f64`, or `f32` as stored in
/// containers to halve the footprint.
pub trait Sample: Copy + Into<f64> + Send + Sync {}
impl Sample for f32 {}
impl Sample for f64 {}

/// Mean loss and gradient over a batch of windows. The reduction runs in
/// batch order regardless of thread count.
pub fn batch_loss_grad<P: Physics, S: Sample>(
    phys: &P,
    ck: &Checkpoint,
    data: &[Vec<Vec<S>>],
    windows: &[(usize, usize)],
    span: usize,
) -> Result<(f64, Vec<f64>)> {
    let parts = windows
        .par_iter()
        .map(|&(t, o)| {
            let owned: Vec<Vec<f64>> = data[t][o..o + span]
                .iter()
                .map(|f| f.iter().map(|&x| x.into()).collect())
                .collect();
            let frames: Vec<&[f64]> = owned.iter().map(|f| f.as_slice()).collect();
            let (rep, g) = loss_and_grad(phys, ck, &frames, true)?;
            Ok((rep.loss, g.unwrap()))
        })
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / windows.len() as f64;
    let mut grad = vec![0.0; ck.params.len()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|x| *x *= inv);
    Ok((loss * inv, grad))
}

/// Columns `step,loss,lr,wall_time`.
pub fn write_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TsmError::format(e.to_string()))?;
    for r in log {
        w.serialize(r).map_err(|e| TsmError::format(e.to_string()))?;
    }
    w.flush().map_err(|e| TsmError::io(path, e))
}

/// Trains a model on `data` (trajectories of flat states on the solver's
/// grid, spaced by the solver step).
pub fn fit<P: Physics, S: Sample>(phys: &P, data: &[Vec<Vec<S>>], cfg: &TrainConfig, opts: &FitOptions) -> Result<FitResult> {
    cfg.validate()?;
    let mut ck = cfg.init_checkpoint(phys.dims())?;
    let log = fit_from(phys, data, cfg, opts, &mut ck)?;
    Ok(FitResult { checkpoint: ck, log })
}

/// Trains `ck` in place and returns the loss log.
pub fn fit_from<P: Physics, S: Sample>(
    phys: &P,
    data: &[Vec<Vec<S>>],
    cfg: &TrainConfig,
    opts: &FitOptions,
    ck: &mut Checkpoint,
) -> Result<Vec<LogRow>> {
    let span = cfg.span();
    let len = phys.state_len();
    if data.is_empty() {
        return Err(TsmError::InvalidArgument("no training trajectories".into()));
    }
    for (i, t) in data.iter().enumerate() {
        if t.len() < span {
            return Err(TsmError::InvalidArgument(format!(
                "trajectory {i} has {} frames, windows need {span}",
                t.len()
            )));
        }
        if t.iter().any(|f| f.len() != len) {
            return Err(TsmError::ShapeMismatch {
                expected: format!("{len} values per frame"),
                got: format!("trajectory {i}"),
            });
        }
    }
    let lengths: Vec<usize> = data.iter().map(|t| t.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_F17);
    let mut adam = AdamState::new(ck.params.len());
    let adam_cfg = AdamConfig {
        total_steps: if cfg.adam.total_steps == 0 { 0 } else { cfg.steps },
        ..cfg.adam
    };
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let windows = sample_windows(&mut rng, &lengths, span, cfg.batch);
        let (loss, grad) = batch_loss_grad(phys, ck, data, &windows, span)?;
        if !loss.is_finite() {
            return Err(TsmError::NonFinite {
                step,
                detail: "training loss".into(),
            });
        }
        let lr = learning_rate(&adam_cfg, adam.t);
        optimizer_step(&mut ck.params.data, &grad, &mut adam, &adam_cfg);
        log.push(LogRow {
            step,
            loss,
            lr,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                ck.save(&dir.join(format!("step_{:06}.ckpt", step + 1)))?;
            }
        }
        if let Some(p) = &opts.log_csv {
            if (step + 1) % 10 == 0 || step + 1 == cfg.steps {
                write_log(p, &log)?;
            }
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        ck.save(&dir.join("final.ckpt"))?;
    }
    if let Some(p) = &opts.log_csv {
        write_log(p, &log)?;
    }
    Ok(log)
}
