//! Convolutional network mapping per-cell features to stencil interpolation
//! coefficients, with temporal bundling and the sum-to-one constraint.
//!
//! The network predicts `free = taps − 1` raw values per (bundle slot,
//! target, cell). The lift
//!
//! ```text
//! w[m]    = base[m] + raw[m]          for m < taps − 1
//! w[last] = base[last] − Σ_m raw[m]
//! ```
//!
//! makes every stencil sum to one for any parameters, so constants are
//! interpolated exactly. `base` is ½/½ on the two face-adjacent sources,
//! i.e. the linear interpolant, which a zero final layer reproduces.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TsmError};
use crate::grid::Grid;
use crate::nn::{self, Activations, ConvGeom, ConvStack};

/// 4×4 footprint per 2-D interpolation target.
pub const STENCIL_TAPS: usize = 16;
/// Six-point footprint of the 1-D learned interpolation.
pub const KS_STENCIL_TAPS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dims {
    One,
    Two,
}

impl Dims {
    pub fn components(self) -> usize {
        match self {
            Dims::One => 1,
            Dims::Two => 2,
        }
    }
}

/// Target count, tap count and base pattern of the stencil head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StencilLayout {
    pub targets: usize,
    pub taps: usize,
    pub base_taps: [usize; 2],
}

impl StencilLayout {
    pub fn for_dims(dims: Dims) -> StencilLayout {
        match dims {
            Dims::Two => StencilLayout {
                targets: crate::fvm2d::N_TARGETS,
                taps: STENCIL_TAPS,
                base_taps: crate::fvm2d::BASE_TAPS,
            },
            Dims::One => StencilLayout {
                targets: 1,
                taps: KS_STENCIL_TAPS,
                base_taps: [2, 3],
            },
        }
    }

    pub fn free(&self) -> usize {
        self.taps - 1
    }

    pub fn base_weight(&self, tap: usize) -> f64 {
        if self.base_taps.contains(&tap) {
            0.5
        } else {
            0.0
        }
    }
}

/// Solver family, following the DNS / LC / LI / TSM taxonomy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Learned interpolation from the latest state only.
    #[serde(rename = "li")]
    Li,
    /// Learned interpolation from a sliding window of raw states.
    #[serde(rename = "tsm-raw")]
    TsmRaw,
    /// Learned interpolation from HiPPO-encoded history.
    #[serde(rename = "tsm-hippo")]
    TsmHippo,
    /// Classic step followed by a learned additive velocity correction.
    #[serde(rename = "lc")]
    Lc,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "li" => Some(Mode::Li),
            "tsm-raw" | "tsm_raw" => Some(Mode::TsmRaw),
            "tsm-hippo" | "tsm_hippo" | "tsm" => Some(Mode::TsmHippo),
            "lc" => Some(Mode::Lc),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Li => "li",
            Mode::TsmRaw => "tsm-raw",
            Mode::TsmHippo => "tsm-hippo",
            Mode::Lc => "lc",
        }
    }

    fn code(self) -> u8 {
        match self {
            Mode::Li => 0,
            Mode::TsmRaw => 1,
            Mode::TsmHippo => 2,
            Mode::Lc => 3,
        }
    }

    fn from_code(c: u8) -> Option<Mode> {
        [Mode::Li, Mode::TsmRaw, Mode::TsmHippo, Mode::Lc]
            .into_iter()
            .find(|m| m.code() == c)
    }

    pub fn uses_hippo(self) -> bool {
        self == Mode::TsmHippo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    pub dims: Dims,
    pub layers: usize,
    pub channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl NetArch {
    /// Stencil head for `bundle` future steps.
    pub fn stencil(dims: Dims, in_channels: usize, layers: usize, channels: usize, bundle: usize) -> NetArch {
        let lay = StencilLayout::for_dims(dims);
        NetArch {
            dims,
            layers,
            channels,
            in_channels,
            out_channels: lay.targets * lay.free() * bundle,
        }
    }

    /// Velocity-correction head (one channel per component).
    pub fn correction(dims: Dims, in_channels: usize, layers: usize, channels: usize) -> NetArch {
        NetArch {
            dims,
            layers,
            channels,
            in_channels,
            out_channels: dims.components(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(TsmError::InvalidArgument(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    pub(crate) fn stack(&self) -> ConvStack {
        ConvStack {
            in_channels: self.in_channels,
            hidden: self.channels,
            layers: self.layers,
            out_channels: self.out_channels,
            taps: match self.dims {
                Dims::Two => 9,
                Dims::One => 3,
            },
        }
    }

    pub fn param_count(&self) -> usize {
        self.stack().param_count()
    }

    pub fn geom(&self, nx: usize, ny: usize) -> ConvGeom {
        match self.dims {
            Dims::Two => ConvGeom::square3(nx, ny),
            Dims::One => ConvGeom::line3(nx),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub arch: NetArch,
    /// Flat kernels and biases, layer by layer: `W[out][in][tap]` then `b[out]`.
    pub data: Vec<f64>,
}

impl NetParams {
    pub fn zeros(arch: NetArch) -> NetParams {
        NetParams {
            data: vec![0.0; arch.param_count()],
            arch,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Range of the final layer's kernels and bias in `data`.
    pub fn final_layer(&self) -> std::ops::Range<usize> {
        let s = self.arch.stack();
        let (w, _, end) = s.layer_span(s.layers - 1);
        w..end
    }
}

/// Fan-in scaled uniform initialization with a zero final layer.
pub fn init_params(arch: NetArch, seed: u64) -> NetParams {
    let stack = arch.stack();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; stack.param_count()];
    for l in 0..stack.layers.saturating_sub(1) {
        let (cin, _) = stack.layer_dims(l);
        let (wo, bo, _) = stack.layer_span(l);
        let bound = (6.0 / (cin * stack.taps) as f64).sqrt();
        for w in &mut data[wo..bo] {
            *w = rng.gen_range(-bound..bound);
        }
    }
    NetParams { arch, data }
}

/// Per-cell stencil weights for `bundle` future steps.
///
/// Layout: `weights[((k · targets + t) · taps + m) · cells + p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMap {
    pub nx: usize,
    pub ny: usize,
    pub bundle: usize,
    pub layout: StencilLayout,
    pub weights: Vec<f64>,
}

impl CoefficientMap {
    /// The base (linear) stencil for every cell, target and slot.
    pub fn base(grid: Grid, bundle: usize) -> CoefficientMap {
        Self::base_for(StencilLayout::for_dims(Dims::Two), grid.nx, grid.ny, bundle)
    }

    pub fn base_for(layout: StencilLayout, nx: usize, ny: usize, bundle: usize) -> CoefficientMap {
        let n = nx * ny;
        let mut weights = vec![0.0; bundle * layout.targets * layout.taps * n];
        for k in 0..bundle {
            for t in 0..layout.targets {
                for m in layout.base_taps {
                    let o = ((k * layout.targets + t) * layout.taps + m) * n;
                    weights[o..o + n].fill(0.5);
                }
            }
        }
        CoefficientMap {
            nx,
            ny,
            bundle,
            layout,
            weights,
        }
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    fn slot_len(&self) -> usize {
        self.layout.targets * self.layout.taps * self.cells()
    }

    /// `taps × cells` weights of one target in bundle slot `k`.
    pub fn weights(&self, k: usize, target: usize) -> &[f64] {
        let len = self.layout.taps * self.cells();
        let o = k * self.slot_len() + target * len;
        &self.weights[o..o + len]
    }

    /// All weights of bundle slot `k`.
    pub fn weights_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.slot_len();
        &mut self.weights[k * len..(k + 1) * len]
    }

    pub fn slot(&self, k: usize) -> CoefficientMap {
        let len = self.slot_len();
        CoefficientMap {
            nx: self.nx,
            ny: self.ny,
            bundle: 1,
            layout: self.layout,
            weights: self.weights[k * len..(k + 1) * len].to_vec(),
        }
    }

    pub(crate) fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.nx != self.nx || grid.ny != self.ny {
            return Err(TsmError::ShapeMismatch {
                expected: format!("{}x{}", self.nx, self.ny),
                got: format!("{}x{}", grid.nx, grid.ny),
            });
        }
        Ok(())
    }

    /// Largest deviation of any stencil's weight sum from one.
    pub fn max_sum_error(&self) -> f64 {
        let n = self.cells();
        let mut worst = 0.0f64;
        for k in 0..self.bundle {
            for t in 0..self.layout.targets {
                let w = self.weights(k, t);
                for p in 0..n {
                    let s: f64 = (0..self.layout.taps).map(|m| w[m * n + p]).sum();
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
        worst
    }
}

/// Applies the sum-to-one lift to raw network output
/// `raw[((k · targets + t) · free + m) · cells + p]`.
pub fn lift_coefficients(raw: &[f64], layout: StencilLayout, nx: usize, ny: usize, bundle: usize) -> CoefficientMap {
    let n = nx * ny;
    let free = layout.free();
    assert_eq!(raw.len(), bundle * layout.targets * free * n, "raw coefficient size");
    let mut map = CoefficientMap::base_for(layout, nx, ny, bundle);
    for k in 0..bundle {
        for t in 0..layout.targets {
            let r = &raw[(k * layout.targets + t) * free * n..(k * layout.targets + t + 1) * free * n];
            let o = (k * layout.targets + t) * layout.taps * n;
            let w = &mut map.weights[o..o + layout.taps * n];
            let (head, last) = w.split_at_mut(free * n);
            for m in 0..free {
                for p in 0..n {
                    let d = r[m * n + p];
                    head[m * n + p] += d;
                    last[p] -= d;
                }
            }
        }
    }
    map
}

/// Adjoint of [`lift_coefficients`].
pub fn lift_vjp(g_weights: &[f64], layout: StencilLayout, cells: usize, bundle: usize) -> Vec<f64> {
    let n = cells;
    let free = layout.free();
    let mut g_raw = vec![0.0; bundle * layout.targets * free * n];
    for kt in 0..bundle * layout.targets {
        let gw = &g_weights[kt * layout.taps * n..(kt + 1) * layout.taps * n];
        let last = &gw[free * n..];
        let gr = &mut g_raw[kt * free * n..(kt + 1) * free * n];
        for m in 0..free {
            for p in 0..n {
                gr[m * n + p] = gw[m * n + p] - last[p];
            }
        }
    }
    g_raw
}

/// Number of network evaluations, for latency and bundling checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCount(pub usize);

/// Runs the conv stack on planar features `[channel][cell]`.
pub fn run_network(params: &NetParams, features: &[f64], nx: usize, ny: usize, keep: bool) -> Result<Activations> {
    let arch = params.arch;
    let n = nx * ny;
    if features.len() != arch.in_channels * n {
        return Err(TsmError::ShapeMismatch {
            expected: format!("{} channels x {n} cells", arch.in_channels),
            got: format!("{} values", features.len()),
        });
    }
    let geom = arch.geom(nx, ny);
    Ok(nn::forward(&arch.stack(), &params.data, &geom, features, keep))
}

/// Backward pass of [`run_network`].
pub fn network_vjp(
    params: &NetParams,
    acts: &Activations,
    nx: usize,
    ny: usize,
    g_output: &[f64],
    g_params: &mut [f64],
) -> Vec<f64> {
    let geom = params.arch.geom(nx, ny);
    nn::backward(&params.arch.stack(), &params.data, &geom, acts, g_output, g_params)
}

fn bundle_of(arch: &NetArch) -> Result<usize> {
    let lay = StencilLayout::for_dims(arch.dims);
    let per = lay.targets * lay.free();
    if arch.out_channels % per != 0 {
        return Err(TsmError::InvalidArgument(format!(
            "output width {} is not a stencil head",
            arch.out_channels
        )));
    }
    Ok(arch.out_channels / per)
}

/// Coefficients for every bundle slot from one network call.
pub fn forward(params: &NetParams, features: &[f64], nx: usize, ny: usize) -> Result<CoefficientMap> {
    let bundle = bundle_of(&params.arch)?;
    let acts = run_network(params, features, nx, ny, false)?;
    Ok(lift_coefficients(
        acts.output(),
        StencilLayout::for_dims(params.arch.dims),
        nx,
        ny,
        bundle,
    ))
}

/// `K` coefficient maps from a single network invocation.
pub fn bundle_forward(params: &NetParams, features: &[f64], nx: usize, ny: usize, k: usize) -> Result<Vec<CoefficientMap>> {
    let bundle = bundle_of(&params.arch)?;
    if bundle != k {
        return Err(TsmError::InvalidArgument(format!(
            "network predicts {bundle} bundle steps, requested {k}"
        )));
    }
    let map = forward(params, features, nx, ny)?;
    Ok((0..k).map(|s| map.slot(s)).collect())
}

/// Everything needed to rebuild a learned solver.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub mode: Mode,
    pub window: usize,
    pub bundle: usize,
    pub hippo_order: usize,
    pub params: NetParams,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TSMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    /// Binary layout, all integers little-endian:
    ///
    /// ```text
    /// magic        8 bytes  "TSMCKPT\0"
    /// version      u32
    /// dims         u8       1 or 2
    /// mode         u8       0 li, 1 tsm-raw, 2 tsm-hippo, 3 lc
    /// reserved     u16      0
    /// window       u32
    /// bundle       u32
    /// hippo_order  u32
    /// in_channels  u32
    /// channels     u32
    /// layers       u32
    /// out_channels u32
    /// n_params     u64
    /// params       n_params × f32
    /// crc32        u32      over every preceding byte
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = self.params.arch;
        let mut b = Vec::with_capacity(64 + 4 * self.params.len());
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.push(match a.dims {
            Dims::One => 1,
            Dims::Two => 2,
        });
        b.push(self.mode.code());
        b.extend_from_slice(&0u16.to_le_bytes());
        for v in [
            self.window,
            self.bundle,
            self.hippo_order,
            a.in_channels,
            a.channels,
            a.layers,
            a.out_channels,
        ] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        b.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for &p in &self.params.data {
            b.extend_from_slice(&(p as f32).to_le_bytes());
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: &str| TsmError::format(format!("checkpoint: {m}"));
        if bytes.len() < 56 {
            return Err(bad("truncated header"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != CHECKPOINT_VERSION {
            return Err(TsmError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let dims = match bytes[12] {
            1 => Dims::One,
            2 => Dims::Two,
            d => return Err(bad(&format!("bad dims {d}"))),
        };
        let mode = Mode::from_code(bytes[13]).ok_or_else(|| bad("bad mode"))?;
        let f = |k: usize| u32_at(16 + 4 * k) as usize;
        let (window, bundle, hippo_order) = (f(0), f(1), f(2));
        let arch = NetArch {
            dims,
            in_channels: f(3),
            channels: f(4),
            layers: f(5),
            out_channels: f(6),
        };
        arch.validate()?;
        let n = u64::from_le_bytes(bytes[44..52].try_into().unwrap()) as usize;
        if n != arch.param_count() {
            return Err(bad("parameter count does not match architecture"));
        }
        let end = 52 + 4 * n;
        if bytes.len() != end + 4 {
            return Err(bad("truncated payload"));
        }
        let crc = u32::from_le_bytes(bytes[end..end + 4].try_into().unwrap());
        if crc != crc32fast::hash(&bytes[..end]) {
            return Err(TsmError::Checksum { frame: 0 });
        }
        let data = bytes[52..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Checkpoint {
            mode,
            window,
            bundle,
            hippo_order,
            params: NetParams { arch, data },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| TsmError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| TsmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| TsmError::io(path, e))?;
        Checkpoint::from_bytes(&buf).map_err(|e| match e {
            TsmError::Format { msg, .. } => TsmError::Format {
                path: Some(path.to_path_buf()),
                msg,
            },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classic_stencils::linear_interp;
    use crate::fvm2d::{interpolate_with_coeffs, stencil_offsets, N_TARGETS, TARGETS};
    use crate::grid::{Axis, VelocityField};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_features(c: usize, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..c * n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn randomize_final(p: &mut NetParams, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = p.final_layer();
        for w in &mut p.data[r] {
            *w = rng.gen_range(-0.1..0.1);
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_head() {
        let arch = NetArch::stencil(Dims::Two, 4, 3, 8, 1);
        let a = init_params(arch, 5);
        let b = init_params(arch, 5);
        assert_eq!(a, b);
        assert_ne!(a, init_params(arch, 6));
        assert!(a.data[a.final_layer()].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn parameter_count_closed_form() {
        // 6 layers, 64 channels, 16 inputs, 120 outputs, 3×3 kernels:
        // 16·9·64 + 64 + 4·(64·9·64 + 64) + 64·9·120 + 120
        let arch = NetArch::stencil(Dims::Two, 16, 6, 64, 1);
        assert_eq!(arch.out_channels, 120);
        assert_eq!(arch.param_count(), 9_280 + 4 * 36_928 + 69_240);
        assert_eq!(arch.param_count(), 226_232);
    }

    #[test]
    fn zero_head_gives_base_coefficients() {
        let arch = NetArch::stencil(Dims::Two, 6, 3, 8, 2);
        let p = init_params(arch, 1);
        let feats = random_features(6, 64, 2);
        let map = forward(&p, &feats, 8, 8).unwrap();
        let g = Grid::square_2pi(8).unwrap();
        assert_eq!(map, CoefficientMap::base(g, 2));
    }

    #[test]
    fn sums_are_one_for_random_params() {
        let arch = NetArch::stencil(Dims::Two, 4, 2, 8, 3);
        let mut p = init_params(arch, 3);
        randomize_final(&mut p, 4);
        let map = forward(&p, &random_features(4, 36, 5), 6, 6).unwrap();
        assert!(map.max_sum_error() <= 1e-12);
        for m in bundle_forward(&p, &random_features(4, 36, 5), 6, 6, 3).unwrap() {
            assert!(m.max_sum_error() <= 1e-12);
        }
        assert!(bundle_forward(&p, &random_features(4, 36, 5), 6, 6, 2).is_err());
    }

    #[test]
    fn bundle_of_one_is_forward() {
        let arch = NetArch::stencil(Dims::Two, 4, 2, 8, 1);
        let mut p = init_params(arch, 3);
        randomize_final(&mut p, 9);
        let f = random_features(4, 36, 1);
        let a = forward(&p, &f, 6, 6).unwrap();
        let b = bundle_forward(&p, &f, 6, 6, 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(a, b[0]);
    }

    #[test]
    fn forward_is_translation_equivariant() {
        let (nx, ny) = (8, 6);
        let arch = NetArch::stencil(Dims::Two, 3, 3, 8, 1);
        let mut p = init_params(arch, 11);
        randomize_final(&mut p, 12);
        let f = random_features(3, nx * ny, 13);
        let (si, sj) = (3isize, -2isize);
        let shift = |src: &[f64], ch: usize| -> Vec<f64> {
            let n = nx * ny;
            let mut out = vec![0.0; src.len()];
            for c in 0..ch {
                for j in 0..ny {
                    for i in 0..nx {
                        let ii = (i as isize + si).rem_euclid(nx as isize) as usize;
                        let jj = (j as isize + sj).rem_euclid(ny as isize) as usize;
                        out[c * n + jj * nx + ii] = src[c * n + j * nx + i];
                    }
                }
            }
            out
        };
        let a = forward(&p, &f, nx, ny).unwrap();
        let b = forward(&p, &shift(&f, 3), nx, ny).unwrap();
        let ch = a.weights.len() / (nx * ny);
        assert_eq!(shift(&a.weights, ch), b.weights);
    }

    #[test]
    fn interpolation_with_coefficients() {
        let g = Grid::square_2pi(8).unwrap();
        let arch = NetArch::stencil(Dims::Two, 2, 2, 4, 1);
        let mut p = init_params(arch, 1);
        randomize_final(&mut p, 2);
        let map = forward(&p, &random_features(2, 64, 3), 8, 8).unwrap();
        let c = VelocityField::uniform(g, 1.75, -0.5);
        for t in 0..N_TARGETS {
            let f = interpolate_with_coeffs(&c, &map, 0, t).unwrap();
            let expect = if TARGETS[t].source == Axis::X { 1.75 } else { -0.5 };
            assert!(f.iter().all(|&x| (x - expect).abs() < 1e-14));
        }

        // one-hot on the left-adjacent source reproduces positive upwinding
        let mut v = VelocityField::zeros(g);
        for k in 0..64 {
            v.ux[k] = (k as f64 * 0.37).sin();
        }
        let mut onehot = CoefficientMap::base(g, 1);
        for w in onehot.weights_mut(0).iter_mut() {
            *w = 0.0;
        }
        let n = g.len();
        let w = onehot.weights_mut(0);
        w[5 * n..6 * n].fill(1.0); // target 0, tap 5 = left-adjacent
        let up = interpolate_with_coeffs(&v, &onehot, 0, 0).unwrap();
        for j in 0..8 {
            for i in 0..8 {
                assert_eq!(up[g.idx(i, j)], v.ux[g.wrap(i, j, -1, 0)]);
            }
        }
        assert_eq!(stencil_offsets(0)[5], (-1, 0));
    }

    #[test]
    fn base_coefficients_match_linear_interp_bitwise() {
        let g = Grid::new(8, 6, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ux: Vec<f64> = (0..48).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v = VelocityField::new(g, ux.clone(), ux.iter().map(|x| x * 0.5).collect()).unwrap();
        let base = CoefficientMap::base(g, 1);
        // target 2: u_x along y between rows j and j+1
        let f = interpolate_with_coeffs(&v, &base, 0, 2).unwrap();
        for i in 0..8 {
            let line: Vec<f64> = (0..6).map(|j| v.ux[g.idx(i, j)]).collect();
            let lin = linear_interp(&line);
            for j in 0..6 {
                assert_eq!(f[g.idx(i, j)].to_bits(), lin[j].to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let arch = NetArch::stencil(Dims::Two, 16, 2, 4, 4);
        let mut p = init_params(arch, 3);
        randomize_final(&mut p, 1);
        for x in p.data.iter_mut() {
            *x = *x as f32 as f64;
        }
        let ck = Checkpoint {
            mode: Mode::TsmHippo,
            window: 32,
            bundle: 4,
            hippo_order: 8,
            params: p,
        };
        let bytes = ck.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        let mut bad = bytes.clone();
        bad[60] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(TsmError::Checksum { .. })));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(TsmError::Version { .. })));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn lift_always_sums_to_one(raw in proptest::collection::vec(-5.0f64..5.0, 15 * 8 * 4)) {
            let lay = StencilLayout::for_dims(Dims::Two);
            let map = lift_coefficients(&raw, lay, 2, 2, 1);
            prop_assert!(map.max_sum_error() < 1e-12);
        }
    }

    #[test]
    fn lift_vjp_is_adjoint() {
        let lay = StencilLayout::for_dims(Dims::Two);
        let n = 4;
        let raw = random_features(15 * 8 * 2, n, 1);
        let gw = random_features(16 * 8 * 2, n, 2);
        let base = CoefficientMap::base_for(lay, 2, 2, 2);
        let lifted = lift_coefficients(&raw, lay, 2, 2, 2);
        let lhs: f64 = lifted.weights.iter().zip(&base.weights).zip(&gw).map(|((a, b), g)| (a - b) * g).sum();
        let gr = lift_vjp(&gw, lay, n, 2);
        let rhs: f64 = raw.iter().zip(&gr).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
