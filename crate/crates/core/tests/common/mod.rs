//! Small datasets shared by the integration tests.
#![allow(dead_code)]

use tsm_core::classic_stencils::SchemeKind;
use tsm_core::datagen::random_divfree_field;
use tsm_core::fvm2d::{FlowConfig, FluxProvider, Forcing, Solver2d};
use tsm_core::grid::{cfl_timestep, downsample_velocity, Grid};
use tsm_core::ks1d::{KsConfig, KsDatasetSpec, generate_ks_trajectory};
use tsm_core::stencil_net::Checkpoint;
use tsm_core::train::{FlowPhysics, KsPhysics};

/// Kolmogorov flow on an `n × n` 2π grid with the CFL step for speed 7.
pub fn flow_config(n: usize) -> FlowConfig {
    let g = Grid::square_2pi(n).unwrap();
    FlowConfig::new(g, 1e-3, Forcing::kolmogorov(), cfl_timestep(&g, 7.0, 0.5).unwrap()).unwrap()
}

pub fn flow_physics(n: usize) -> FlowPhysics {
    FlowPhysics::new(flow_config(n), SchemeKind::VanLeer).unwrap()
}

/// Reference frames on the `coarse` grid, one per coarse step, from a
/// Van Leer run on a grid `factor` times finer.
pub fn flow_data(coarse: usize, factor: usize, seed: u64, frames: usize) -> Vec<Vec<f64>> {
    let c = flow_config(coarse);
    let fg = Grid::square_2pi(coarse * factor).unwrap();
    let fine = FlowConfig::new(fg, c.viscosity, c.forcing, c.dt / factor as f64).unwrap();
    let solver = Solver2d::new(fine).unwrap();
    let p = FluxProvider::Classic(SchemeKind::VanLeer);
    let mut v = random_divfree_field(fg, seed, 2, 2.0).unwrap();
    let mut out = Vec::with_capacity(frames);
    let mut s = 0;
    for _ in 0..frames {
        out.push(downsample_velocity(&v, factor).unwrap().to_flat());
        for _ in 0..factor {
            v = solver.step(&v, &p, s).unwrap();
            s += 1;
        }
    }
    out
}

pub fn ks_physics(n: usize) -> KsPhysics {
    KsPhysics::new(KsConfig::new(n).unwrap()).unwrap()
}

/// Downsampled IMEX reference frames on a 32-cell KS grid.
pub fn ks_data(seed: u64, frames: usize) -> Vec<Vec<f64>> {
    let spec = KsDatasetSpec {
        fine: 128,
        coarse: 32,
        n_train: 1,
        n_eval: 0,
        duration: (frames - 1) as f64 * tsm_core::ks1d::KS_DT_32,
        warmup: 20.0,
        seed: 0,
    };
    generate_ks_trajectory(&spec, seed).unwrap().frames
}

/// Fills the final layer with small seeded values so every layer
/// receives gradient.
pub fn randomize_head(ck: &mut Checkpoint, scale: f64, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let r = ck.params.final_layer();
    for w in &mut ck.params.data[r] {
        *w = rng.gen_range(-scale..scale);
    }
}
