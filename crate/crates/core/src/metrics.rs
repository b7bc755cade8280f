//! Vorticity correlation, high-correlation duration and energy spectra.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsmError};
use crate::grid::{vorticity, ScalarField, VelocityField};
use crate::spectral::{fft2_real, signed_wavenumber};

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const THRESHOLD_SWEEP: [f64; 4] = [0.95, 0.9, 0.8, 0.7];

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(TsmError::ShapeMismatch {
            expected: format!("{} values", a.len()),
            got: format!("{}", b.len()),
        });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(TsmError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson_correlation(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    if !a.grid.same_shape(&b.grid) {
        return Err(TsmError::ShapeMismatch {
            expected: format!("{}x{}", a.grid.nx, a.grid.ny),
            got: format!("{}x{}", b.grid.nx, b.grid.ny),
        });
    }
    pearson(&a.values, &b.values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSeries {
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Vorticity correlation per frame. Both sequences must have the same length
/// and grid; `times` are the frame times.
pub fn vorticity_correlation(pred: &[VelocityField], reference: &[VelocityField], times: &[f64]) -> Result<CorrelationSeries> {
    if pred.len() != reference.len() || pred.len() != times.len() {
        return Err(TsmError::Misaligned(format!(
            "{} predicted frames, {} reference frames, {} times",
            pred.len(),
            reference.len(),
            times.len()
        )));
    }
    let rho = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| pearson_correlation(&vorticity(p), &vorticity(r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationSeries {
        times: times.to_vec(),
        rho,
    })
}

/// Correlation per frame of 1-D states.
pub fn line_correlation(pred: &[Vec<f64>], reference: &[Vec<f64>], times: &[f64]) -> Result<CorrelationSeries> {
    if pred.len() != reference.len() || pred.len() != times.len() {
        return Err(TsmError::Misaligned(format!(
            "{} predicted frames, {} reference frames",
            pred.len(),
            reference.len()
        )));
    }
    let rho = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| pearson(p, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationSeries {
        times: times.to_vec(),
        rho,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Duration {
    /// Time, relative to the first frame, at which ρ first drops below the threshold.
    pub time: f64,
    /// The threshold was never crossed; `time` is the full span.
    pub censored: bool,
}

/// First crossing of `threshold`, linearly interpolated between frames.
pub fn duration_from_series(series: &CorrelationSeries, threshold: f64) -> Result<Duration> {
    let (t, r) = (&series.times, &series.rho);
    if t.is_empty() || t.len() != r.len() {
        return Err(TsmError::Misaligned("empty or ragged correlation series".into()));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(TsmError::Misaligned("times must be strictly increasing".into()));
    }
    let t0 = t[0];
    for k in 0..r.len() {
        if r[k] < threshold {
            if k == 0 {
                return Ok(Duration {
                    time: 0.0,
                    censored: false,
                });
            }
            let frac = (r[k - 1] - threshold) / (r[k - 1] - r[k]);
            return Ok(Duration {
                time: t[k - 1] + frac * (t[k] - t[k - 1]) - t0,
                censored: false,
            });
        }
    }
    Ok(Duration {
        time: t[t.len() - 1] - t0,
        censored: true,
    })
}

pub fn high_corr_duration(pred: &[VelocityField], reference: &[VelocityField], times: &[f64], threshold: f64) -> Result<Duration> {
    duration_from_series(&vorticity_correlation(pred, reference, times)?, threshold)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSeries {
    /// Shell indices `0, 1, …`.
    pub k: Vec<usize>,
    pub energy: Vec<f64>,
    /// Number of Fourier modes in each shell.
    pub modes: Vec<usize>,
}

impl SpectrumSeries {
    pub fn total(&self) -> f64 {
        self.energy.iter().sum()
    }

    pub fn scaled_k5(&self) -> Vec<f64> {
        self.k.iter().zip(&self.energy).map(|(&k, e)| e * (k as f64).powi(5)).collect()
    }
}

/// Face-to-center average of a velocity field.
pub fn cell_centered(v: &VelocityField) -> (Vec<f64>, Vec<f64>) {
    let g = v.grid;
    let mut cx = vec![0.0; g.len()];
    let mut cy = vec![0.0; g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            cx[k] = 0.5 * (v.ux[k] + v.ux[g.wrap(i, j, -1, 0)]);
            cy[k] = 0.5 * (v.uy[k] + v.uy[g.wrap(i, j, 0, -1)]);
        }
    }
    (cx, cy)
}

/// `½|û|²` of the cell-centered field binned into integer shells
/// `round(|k|)`, with `k` in units of the fundamental wavenumber. Normalized
/// so the shells sum to `½ mean(|u|²)` over cells.
pub fn energy_spectrum(v: &VelocityField) -> SpectrumSeries {
    let g = v.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (cx, cy) = cell_centered(v);
    let fx = fft2_real(&cx, nx, ny);
    let fy = fft2_real(&cy, nx, ny);
    let kmax = {
        let a = (nx / 2) as f64;
        let b = (ny / 2) as f64;
        (a * a + b * b).sqrt().round() as usize
    };
    let mut energy = vec![0.0; kmax + 1];
    let mut modes = vec![0usize; kmax + 1];
    let norm = 1.0 / ((nx * ny) as f64).powi(2);
    for j in 0..ny {
        let ky = signed_wavenumber(j, ny) as f64;
        for i in 0..nx {
            let kx = signed_wavenumber(i, nx) as f64;
            let shell = (kx * kx + ky * ky).sqrt().round() as usize;
            let p = j * nx + i;
            energy[shell] += 0.5 * (fx[p].norm_sqr() + fy[p].norm_sqr()) * norm;
            modes[shell] += 1;
        }
    }
    SpectrumSeries {
        k: (0..=kmax).collect(),
        energy,
        modes,
    }
}

/// Shell-wise mean of several spectra.
pub fn mean_spectrum(spectra: &[SpectrumSeries]) -> Option<SpectrumSeries> {
    let first = spectra.first()?;
    let mut out = first.clone();
    for s in &spectra[1..] {
        for (a, b) in out.energy.iter_mut().zip(&s.energy) {
            *a += b;
        }
    }
    let inv = 1.0 / spectra.len() as f64;
    for a in out.energy.iter_mut() {
        *a *= inv;
    }
    Some(out)
}

/// One row of a duration summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub trajectory: String,
    pub threshold: f64,
    pub duration: f64,
    pub censored: bool,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> TsmError + '_ {
    move |e| TsmError::Format {
        path: Some(path.to_path_buf()),
        msg: e.to_string(),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| TsmError::io(path, e))
}

/// Columns `time,rho`.
pub fn write_correlation_csv(path: &Path, s: &CorrelationSeries) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        time: f64,
        rho: f64,
    }
    write_rows(path, s.times.iter().zip(&s.rho).map(|(&time, &rho)| Row { time, rho }))
}

/// Columns `k,E_k,E_k_times_k5`.
pub fn write_spectrum_csv(path: &Path, s: &SpectrumSeries) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        k: usize,
        #[serde(rename = "E_k")]
        e: f64,
        #[serde(rename = "E_k_times_k5")]
        e5: f64,
    }
    let scaled = s.scaled_k5();
    write_rows(
        path,
        s.k.iter().zip(&s.energy).zip(scaled).map(|((&k, &e), e5)| Row { k, e, e5 }),
    )
}

/// Columns `label,trajectory,threshold,duration,censored`.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    #[test]
    fn pearson_basics() {
        let a: Vec<f64> = (0..50).map(|k| (k as f64 * 0.3).sin()).collect();
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&a, &[1.0; 50]), Err(TsmError::ZeroVariance)));
        let aff: Vec<f64> = a.iter().map(|x| 3.0 * x + 2.0).collect();
        let r = pearson(&a, &(0..50).map(|k| (k as f64).cos()).collect::<Vec<_>>()).unwrap();
        let r2 = pearson(&aff, &(0..50).map(|k| (k as f64).cos()).collect::<Vec<_>>()).unwrap();
        assert!((r - r2).abs() < 1e-14);
    }

    #[test]
    fn orthogonal_sinusoids() {
        let g = Grid::square_2pi(32).unwrap();
        let mut a = vec![0.0; g.len()];
        let mut b = vec![0.0; g.len()];
        for j in 0..32 {
            for i in 0..32 {
                let (x, y) = g.center(i, j);
                a[g.idx(i, j)] = (2.0 * x).sin();
                b[g.idx(i, j)] = (3.0 * y).cos();
            }
        }
        let r = pearson_correlation(&ScalarField::new(g, a).unwrap(), &ScalarField::new(g, b).unwrap()).unwrap();
        assert!(r.abs() < 1e-12, "{r}");
    }

    #[test]
    fn crossing_interpolation() {
        let s = CorrelationSeries {
            times: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            rho: vec![1.0, 0.99, 0.95, 0.85, 0.75, 0.5],
        };
        let d = duration_from_series(&s, 0.8).unwrap();
        assert!((d.time - 3.5).abs() < 1e-12);
        assert!(!d.censored);
        let lo = duration_from_series(&s, 0.7).unwrap();
        assert!(lo.time >= d.time);
        let never = duration_from_series(&s, 0.1).unwrap();
        assert_eq!(never, Duration { time: 5.0, censored: true });
        let bad = CorrelationSeries { times: vec![0.0, 0.0], rho: vec![1.0, 1.0] };
        assert!(duration_from_series(&bad, 0.8).is_err());
    }

    #[test]
    fn identical_trajectories_are_censored() {
        let g = Grid::square_2pi(16).unwrap();
        let frames: Vec<VelocityField> = (0..4)
            .map(|t| VelocityField::from_fn(g, |x, y| (x + 0.1 * t as f64).sin() * y.cos(), |x, y| -(x.cos() * y.sin())))
            .collect();
        let d = high_corr_duration(&frames, &frames, &[0.0, 0.1, 0.2, 0.3], 0.8).unwrap();
        assert!(d.censored);
        assert!((d.time - 0.3).abs() < 1e-15);
        assert!(high_corr_duration(&frames, &frames[..3], &[0.0, 0.1, 0.2, 0.3], 0.8).is_err());
    }

    #[test]
    fn single_mode_spectrum() {
        let g = Grid::square_2pi(64).unwrap();
        let v = VelocityField::from_fn(g, |x, _| (5.0 * x).sin(), |_, _| 0.0);
        let s = energy_spectrum(&v);
        let frac = s.energy[5] / s.total();
        assert!(frac >= 0.99, "{frac}");
        assert!(energy_spectrum(&VelocityField::zeros(g)).energy.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn parseval_and_partition() {
        let g = Grid::new(32, 16, 2.0 * PI, PI).unwrap();
        let v = VelocityField::from_fn(g, |x, y| (x + 2.0 * y).sin() + 0.3, |x, y| (3.0 * x).cos() * y.sin());
        let s = energy_spectrum(&v);
        let (cx, cy) = cell_centered(&v);
        let phys: f64 = cx.iter().chain(&cy).map(|u| 0.5 * u * u).sum::<f64>() / g.len() as f64;
        assert!((s.total() - phys).abs() <= 1e-10 * phys);
        assert_eq!(s.modes.iter().sum::<usize>(), g.len());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn csv_headers() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("c.csv");
        write_correlation_csv(&c, &CorrelationSeries { times: vec![0.0, 0.5], rho: vec![1.0, 0.9] }).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        assert_eq!(text.lines().collect::<Vec<_>>(), ["time,rho", "0.0,1.0", "0.5,0.9"]);
        let s = dir.path().join("s.csv");
        let spec = SpectrumSeries { k: vec![0, 2], energy: vec![1.0, 0.5], modes: vec![1, 4] };
        write_spectrum_csv(&s, &spec).unwrap();
        let text = std::fs::read_to_string(&s).unwrap();
        assert_eq!(text.lines().collect::<Vec<_>>(), ["k,E_k,E_k_times_k5", "0,1.0,0.0", "2,0.5,16.0"]);
    }
}
