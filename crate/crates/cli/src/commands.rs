use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use tsm_core::datagen::{generate_dataset, read_container, write_container, DatasetSpec, Split, PRESETS};
use tsm_core::ks1d::{write_ks_dataset, KsDatasetSpec};
use tsm_core::metrics::{
    duration_from_series, energy_spectrum, mean_spectrum, median, write_correlation_csv, write_spectrum_csv,
    write_summary_csv, CorrelationSeries, SummaryRow, THRESHOLD_SWEEP,
};
use tsm_core::stencil_net::{Checkpoint, Dims, Mode};
use tsm_core::train::{evaluate as eval_model, fit, rollout, write_log, FitOptions, Model, TrainConfig};
use tsm_core::grid::VelocityField;
use tsm_core::TsmError;

use crate::args::*;
use crate::config::*;
use crate::manifest::{dir_files, Recorder, RUN_MANIFEST};
use crate::session::{correlate, dataset_inputs, load_split, parse_scheme, physics_for, same_layout, with_physics};

fn create_dir(p: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn sidecar(file: &Path) -> PathBuf {
    PathBuf::from(format!("{}.manifest.json", file.display()))
}

pub fn datagen(a: &DatagenArgs, strict: bool) -> anyhow::Result<()> {
    let c: DatagenConfig = resolve(&DatagenConfig::default(), a.config.as_deref(), a)?;
    let out = require(&c.out, "out")?;
    let mut rec = Recorder::new("datagen", strict);
    rec.seed(c.seed);
    match c.equation.as_str() {
        "ns" => {
            let mut spec = DatasetSpec::preset(&c.preset)
                .ok_or_else(|| usage(format!("unknown preset `{}`; expected one of {}", c.preset, PRESETS.join(", "))))?;
            spec.fine = c.fine.unwrap_or(spec.fine);
            spec.coarse = c.coarse.unwrap_or(spec.coarse);
            spec.n_train = c.trajectories.unwrap_or(spec.n_train);
            spec.n_eval = c.eval_trajectories.unwrap_or(spec.n_eval);
            spec.duration = c.duration.unwrap_or(spec.duration);
            spec.warmup = c.warmup.unwrap_or(spec.warmup);
            spec.seed = c.seed;
            if let Some(s) = &c.scheme {
                spec.scheme = parse_scheme(s)?;
            }
            spec.validate()?;
            let m = generate_dataset(&spec, &out)?;
            report_entries(&m.entries, m.frames_per_trajectory, m.save_dt);
            rec.resolved(&spec)?
        }
        "ks" => {
            let d = KsDatasetSpec::default();
            let spec = KsDatasetSpec {
                fine: c.fine.unwrap_or(d.fine),
                coarse: c.coarse.unwrap_or(d.coarse),
                n_train: c.trajectories.unwrap_or(d.n_train),
                n_eval: c.eval_trajectories.unwrap_or(d.n_eval),
                duration: c.duration.unwrap_or(d.duration),
                warmup: c.warmup.unwrap_or(d.warmup),
                seed: c.seed,
            };
            if let Some(s) = &c.scheme {
                if parse_scheme(s)? != tsm_core::classic_stencils::SchemeKind::VanLeer {
                    return Err(usage("the KS reference uses the vanleer scheme"));
                }
            }
            let m = write_ks_dataset(&spec, &out)?;
            report_entries(&m.entries, m.frames_per_trajectory, m.save_dt);
            rec.resolved(&spec)?
        }
        other => return Err(usage(format!("unknown equation `{other}`; expected ns or ks"))),
    }
    for f in dir_files(&out)? {
        rec.output(f);
    }
    rec.finish(&c, &out.join(RUN_MANIFEST))
}

fn report_entries(entries: &[tsm_core::datagen::ManifestEntry], frames: usize, save_dt: f64) {
    let bad: Vec<&str> = entries.iter().filter(|e| e.status != "ok").map(|e| e.file.as_str()).collect();
    println!(
        "wrote {} trajectories of {frames} frames, save interval {save_dt:.6e}",
        entries.len() - bad.len()
    );
    if !bad.is_empty() {
        eprintln!("warning: unstable trajectories skipped: {}", bad.join(", "));
    }
}

pub fn train(a: &TrainArgs, strict: bool) -> anyhow::Result<()> {
    let c: TrainFileConfig = resolve(&TrainFileConfig::default(), a.config.as_deref(), a)?;
    let dataset = require(&c.dataset, "dataset")?;
    let out = require(&c.out, "out")?;
    let mode = Mode::parse(&c.mode).ok_or_else(|| usage(format!("unknown mode `{}`; expected li, tsm-raw, tsm-hippo or lc", c.mode)))?;
    let mut tc = TrainConfig::for_mode(mode);
    tc.unroll = c.unroll.unwrap_or(tc.unroll);
    tc.bundle = c.bundle.unwrap_or(tc.bundle);
    tc.window = c.window.unwrap_or(tc.window);
    tc.hippo_order = c.hippo_order.unwrap_or(tc.hippo_order);
    tc.layers = c.layers.unwrap_or(tc.layers);
    tc.channels = c.channels.unwrap_or(tc.channels);
    tc.batch = c.batch.unwrap_or(tc.batch);
    tc.steps = c.steps.unwrap_or(tc.steps);
    tc.seed = c.seed;
    tc.adam.lr = c.lr.unwrap_or(tc.adam.lr);
    tc.adam.clip = c.clip.or(tc.adam.clip);
    tc.adam.warmup = c.lr_warmup.unwrap_or(tc.adam.warmup);
    tc.adam.total_steps = tc.steps;
    tc.checkpoint_every = c.checkpoint_every.unwrap_or(tc.checkpoint_every);
    tc.validate()?;
    let scheme = parse_scheme(&c.scheme)?;
    if mode == Mode::Lc && !scheme.has_vjp() {
        return Err(usage(format!("LC training needs a differentiable base scheme, not {}", scheme.name())));
    }

    let data = load_split(&dataset, Split::Train, None)?;
    let phys = physics_for(&data.meta, scheme)?;
    create_dir(&out)?;
    let log_path = out.join("train_log.csv");
    let opts = FitOptions {
        log_csv: if strict { None } else { Some(log_path.clone()) },
        checkpoint_dir: Some(out.clone()),
    };
    let mut res = with_physics!(&phys, p => fit(p, &data.frames, &tc, &opts))?;
    if strict {
        for r in &mut res.log {
            r.wall_time = 0.0;
        }
        write_log(&log_path, &res.log)?;
    }
    if let Some(last) = res.log.last() {
        println!(
            "trained {} for {} steps: final batch loss {:.6e}, checkpoint {}",
            mode.name(),
            res.log.len(),
            last.loss,
            out.join("final.ckpt").display()
        );
    }

    let mut rec = Recorder::new("train", strict);
    rec.seed(tc.seed);
    for p in dataset_inputs(&dataset, &data) {
        rec.input(p);
    }
    for f in dir_files(&out)? {
        rec.output(f);
    }
    rec.resolved(&tc)?;
    rec.finish(&c, &out.join(RUN_MANIFEST))
}

fn load_model(path: &Option<PathBuf>) -> anyhow::Result<Model> {
    Ok(match path {
        Some(p) => Model::Learned(Checkpoint::load(p)?),
        None => Model::Classic,
    })
}

fn model_label(m: &Model) -> &'static str {
    match m {
        Model::Classic => "dns",
        Model::Learned(ck) => ck.mode.name(),
    }
}

pub fn simulate(a: &SimulateArgs, strict: bool) -> anyhow::Result<()> {
    let c: SimulateConfig = resolve(&SimulateConfig::default(), a.config.as_deref(), a)?;
    let traj = require(&c.trajectory, "trajectory")?;
    let out = require(&c.out, "out")?;
    let (meta, frames) = read_container(&traj)?;
    let phys = physics_for(&meta, parse_scheme(&c.scheme)?)?;
    let model = load_model(&c.checkpoint)?;
    let start = c.start.unwrap_or(model.window() - 1);
    if start >= frames.len() {
        return Err(usage(format!("--start {start} is beyond the {} frames of {}", frames.len(), traj.display())));
    }
    let steps = c.steps.unwrap_or(frames.len() - 1 - start);
    if steps == 0 {
        return Err(usage("nothing to simulate: zero steps"));
    }
    let run = with_physics!(&phys, p => rollout(p, &model, &frames, start, steps))?;
    let mut m = meta.clone();
    m.solver_dt = meta.save_dt;
    m.reprojected = false;
    m.source = format!("simulate:{}:start={start}", model_label(&model));
    if let Some(d) = run.diverged_at {
        m.source.push_str(&format!(":diverged={d}"));
        eprintln!(
            "warning: state after step {d} is non-finite; writing the {} finite frames",
            run.states.len()
        );
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_container(&out, &m, &run.states)?;
    let done = run.states.len() - 1;
    println!(
        "{done} steps of {} from frame {start}: {} network calls ({:.3} per step)",
        model_label(&model),
        run.calls,
        run.calls as f64 / done.max(1) as f64
    );
    let mut rec = Recorder::new("simulate", strict);
    rec.input(&traj);
    if let Some(p) = &c.checkpoint {
        rec.input(p);
    }
    rec.output(&out);
    rec.finish(&c, &sidecar(&out))
}

fn summary_rows(label: &str, trajectory: &str, series: &CorrelationSeries, thresholds: &[f64]) -> anyhow::Result<Vec<SummaryRow>> {
    thresholds
        .iter()
        .map(|&t| {
            let d = duration_from_series(series, t)?;
            Ok(SummaryRow {
                label: label.to_string(),
                trajectory: trajectory.to_string(),
                threshold: t,
                duration: d.time,
                censored: d.censored,
            })
        })
        .collect()
}

pub fn evaluate(a: &EvaluateArgs, strict: bool) -> anyhow::Result<()> {
    let c: EvaluateConfig = resolve(&EvaluateConfig::default(), a.config.as_deref(), a)?;
    let pred = require(&c.pred, "pred")?;
    let reference = require(&c.reference, "reference")?;
    let out = require(&c.out, "out")?;
    let (pm, pf) = read_container(&pred)?;
    let (rm, rf) = read_container(&reference)?;
    if !same_layout(&pm, &rm) {
        return Err(TsmError::Misaligned("prediction and reference differ in grid, domain or frame interval".into()).into());
    }
    if c.offset >= rf.len() {
        return Err(TsmError::Misaligned(format!("offset {} is beyond the {} reference frames", c.offset, rf.len())).into());
    }
    let n = pf.len().min(rf.len() - c.offset);
    let rho = (0..n)
        .map(|k| correlate(&pm, &pf[k], &rf[c.offset + k]))
        .collect::<tsm_core::Result<Vec<_>>>()?;
    let series = CorrelationSeries {
        times: (0..n).map(|k| k as f64 * pm.save_dt).collect(),
        rho,
    };
    create_dir(&out)?;
    let corr = out.join("correlation.csv");
    write_correlation_csv(&corr, &series)?;
    let mut thresholds = vec![c.threshold];
    thresholds.extend(THRESHOLD_SWEEP.iter().filter(|&&t| t != c.threshold));
    let name = pred.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let rows = summary_rows(&pm.source, &name, &series, &thresholds)?;
    let summary = out.join("summary.csv");
    write_summary_csv(&summary, &rows)?;
    println!(
        "duration={:.6} censored={} threshold={} frames={n}",
        rows[0].duration, rows[0].censored, rows[0].threshold
    );
    let mut rec = Recorder::new("evaluate", strict);
    rec.input(&pred);
    rec.input(&reference);
    rec.output(&corr);
    rec.output(&summary);
    rec.finish(&c, &out.join(RUN_MANIFEST))
}

pub fn spectrum(a: &SpectrumArgs, strict: bool) -> anyhow::Result<()> {
    let c: SpectrumConfig = resolve(&SpectrumConfig::default(), a.config.as_deref(), a)?;
    let traj = require(&c.trajectory, "trajectory")?;
    let out = require(&c.out, "out")?;
    let (meta, frames) = read_container(&traj)?;
    if meta.dims != Dims::Two {
        return Err(usage("spectra are defined for 2-D trajectories"));
    }
    let g = meta.grid()?;
    let (lo, hi) = (c.from.unwrap_or(f64::NEG_INFINITY), c.to.unwrap_or(f64::INFINITY));
    let eps = 1e-9 * meta.save_dt;
    let spectra = frames
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let t = *k as f64 * meta.save_dt;
            t >= lo - eps && t <= hi + eps
        })
        .map(|(_, f)| Ok(energy_spectrum(&VelocityField::from_flat(g, f)?)))
        .collect::<tsm_core::Result<Vec<_>>>()?;
    let mean = mean_spectrum(&spectra).ok_or_else(|| usage("no frames fall inside the --from/--to window"))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_spectrum_csv(&out, &mean)?;
    println!("averaged {} frames, total energy {:.6e}", spectra.len(), mean.total());
    let mut rec = Recorder::new("spectrum", strict);
    rec.input(&traj);
    rec.output(&out);
    rec.finish(&c, &sidecar(&out))
}

/// One row of the comparison table.
#[derive(Debug, Serialize)]
struct CompareRow {
    #[serde(rename = "type")]
    kind: String,
    model: String,
    median_duration: f64,
    mean_duration: f64,
    trajectories: usize,
    censored: usize,
    diverged: usize,
    calls_per_step: f64,
    wall_ms_per_step: f64,
    threshold: f64,
}

fn table_rank(m: &Model) -> (u8, &'static str) {
    match m {
        Model::Classic => (0, "DNS"),
        Model::Learned(ck) => match ck.mode {
            Mode::Lc => (1, "LC"),
            Mode::Li => (2, "LI"),
            Mode::TsmRaw => (3, "TSM"),
            Mode::TsmHippo => (4, "TSM"),
        },
    }
}

pub fn compare(a: &CompareArgs, strict: bool) -> anyhow::Result<()> {
    let c: CompareConfig = resolve(&CompareConfig::default(), a.config.as_deref(), a)?;
    let dataset = require(&c.dataset, "dataset")?;
    let out = require(&c.out, "out")?;
    let data = load_split(&dataset, Split::Eval, c.max_trajectories)?;
    let phys = physics_for(&data.meta, parse_scheme(&c.scheme)?)?;
    let mut rec = Recorder::new("compare", strict);
    for p in dataset_inputs(&dataset, &data) {
        rec.input(p);
    }

    let mut models = vec![(format!("dns-{}", data.meta.nx), Model::Classic)];
    for spec in &c.models {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--model expects LABEL=PATH, got `{spec}`")))?;
        let ck = Checkpoint::load(Path::new(path))?;
        rec.input(path);
        models.push((label.to_string(), Model::Learned(ck)));
    }
    models.sort_by_key(|(_, m)| table_rank(m).0);
    let start = models.iter().map(|(_, m)| m.window()).max().unwrap() - 1;
    create_dir(&out)?;

    let mut summary = Vec::new();
    let mut table = Vec::new();
    for (label, model) in &models {
        let mut durations = Vec::new();
        let (mut censored, mut diverged, mut calls, mut steps, mut wall) = (0, 0, 0, 0, 0.0);
        for (k, reference) in data.frames.iter().enumerate() {
            let e = with_physics!(&phys, p => eval_model(p, model, reference, start, data.meta.save_dt, c.threshold))?;
            let path = out.join(format!("corr_{label}_{k:03}.csv"));
            write_correlation_csv(&path, &e.series)?;
            rec.output(&path);
            summary.extend(summary_rows(label, &format!("eval_{k:03}"), &e.series, &[c.threshold])?);
            durations.push(e.duration.time);
            censored += e.duration.censored as usize;
            diverged += e.diverged_at.is_some() as usize;
            calls += e.calls;
            steps += e.steps;
            wall += e.wall_time;
        }
        let n = durations.len();
        table.push(CompareRow {
            kind: table_rank(model).1.to_string(),
            model: label.clone(),
            median_duration: median(&durations).unwrap(),
            mean_duration: durations.iter().sum::<f64>() / n as f64,
            trajectories: n,
            censored,
            diverged,
            calls_per_step: calls as f64 / steps as f64,
            wall_ms_per_step: if strict { 0.0 } else { 1e3 * wall / steps as f64 },
            threshold: c.threshold,
        });
    }
    let summary_path = out.join("summary.csv");
    write_summary_csv(&summary_path, &summary)?;
    rec.output(&summary_path);
    let table_path = out.join("compare_table.csv");
    let mut w = csv_writer(&table_path)?;
    for r in &table {
        w.serialize(r)?;
    }
    w.flush()?;
    rec.output(&table_path);

    println!(
        "{:<5} {:<16} {:>10} {:>10} {:>9} {:>9} {:>11}",
        "type", "model", "median", "mean", "censored", "diverged", "calls/step"
    );
    for r in &table {
        println!(
            "{:<5} {:<16} {:>10.3} {:>10.3} {:>9} {:>9} {:>11.3}",
            r.kind, r.model, r.median_duration, r.mean_duration, r.censored, r.diverged, r.calls_per_step
        );
    }
    rec.finish(&c, &out.join(RUN_MANIFEST))
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}
