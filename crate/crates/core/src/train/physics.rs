//! Solver adapters on flat state vectors (`components × cells`, component
//! blocks in order), shared by training and inference rollouts.

use crate::classic_stencils::SchemeKind;
use crate::error::{Result, TsmError};
use crate::fvm2d::{FlowConfig, FluxProvider, Solver2d, StepTape};
use crate::grid::{vorticity, Grid, VelocityField};
use crate::metrics::{pearson, pearson_correlation};
use crate::ks1d::{KsConfig, KsIntegrator, KsSolver, KsTape};
use crate::stencil_net::{CoefficientMap, Dims, StencilLayout};

pub trait Physics: Sync {
    type Tape: Send;

    fn dims(&self) -> Dims;
    fn nx(&self) -> usize;
    fn ny(&self) -> usize;

    fn components(&self) -> usize {
        self.dims().components()
    }

    fn cells(&self) -> usize {
        self.nx() * self.ny()
    }

    fn state_len(&self) -> usize {
        self.components() * self.cells()
    }

    fn layout(&self) -> StencilLayout {
        StencilLayout::for_dims(self.dims())
    }

    fn step_learned(&self, v: &[f64], coeffs: &CoefficientMap, slot: usize, step_index: usize) -> Result<(Vec<f64>, Self::Tape)>;

    /// Accumulates into `g_w`, the weights of `slot` (`targets × taps × cells`).
    fn step_learned_vjp(
        &self,
        tape: &Self::Tape,
        coeffs: &CoefficientMap,
        slot: usize,
        g_out: &[f64],
        g_w: &mut [f64],
    ) -> Result<Vec<f64>>;

    fn step_classic(&self, v: &[f64], step_index: usize) -> Result<(Vec<f64>, Self::Tape)>;

    fn step_classic_vjp(&self, tape: &Self::Tape, g_out: &[f64]) -> Result<Vec<f64>>;

    /// Pearson correlation of the evaluation quantity: vorticity in 2-D,
    /// the field itself in 1-D.
    fn correlation(&self, pred: &[f64], reference: &[f64]) -> Result<f64>;
}

/// 2-D Navier–Stokes on the MAC grid.
#[derive(Debug)]
pub struct FlowPhysics {
    pub solver: Solver2d,
    /// Scheme of the classic step (LC mode and DNS baselines).
    pub classic: SchemeKind,
}

impl FlowPhysics {
    pub fn new(cfg: FlowConfig, classic: SchemeKind) -> Result<FlowPhysics> {
        Ok(FlowPhysics {
            solver: Solver2d::new(cfg)?,
            classic,
        })
    }

    pub fn grid(&self) -> Grid {
        self.solver.cfg.grid
    }

    fn field(&self, v: &[f64]) -> Result<VelocityField> {
        VelocityField::from_flat(self.grid(), v)
    }
}

impl Physics for FlowPhysics {
    type Tape = StepTape;

    fn dims(&self) -> Dims {
        Dims::Two
    }

    fn nx(&self) -> usize {
        self.grid().nx
    }

    fn ny(&self) -> usize {
        self.grid().ny
    }

    fn step_learned(&self, v: &[f64], coeffs: &CoefficientMap, slot: usize, step_index: usize) -> Result<(Vec<f64>, StepTape)> {
        let f = self.field(v)?;
        let (out, tape) = self
            .solver
            .step_recorded(&f, &FluxProvider::Learned { coeffs, step: slot }, step_index)?;
        Ok((out.to_flat(), tape))
    }

    fn step_learned_vjp(
        &self,
        tape: &StepTape,
        coeffs: &CoefficientMap,
        slot: usize,
        g_out: &[f64],
        g_w: &mut [f64],
    ) -> Result<Vec<f64>> {
        let g = self.field(g_out)?;
        Ok(self.solver.step_vjp_learned(tape, coeffs, slot, &g, g_w).to_flat())
    }

    fn step_classic(&self, v: &[f64], step_index: usize) -> Result<(Vec<f64>, StepTape)> {
        let f = self.field(v)?;
        let (out, tape) = self
            .solver
            .step_recorded(&f, &FluxProvider::Classic(self.classic), step_index)?;
        Ok((out.to_flat(), tape))
    }

    fn step_classic_vjp(&self, tape: &StepTape, g_out: &[f64]) -> Result<Vec<f64>> {
        let g = self.field(g_out)?;
        Ok(self.solver.step_vjp_classic(tape, self.classic, &g)?.to_flat())
    }

    fn correlation(&self, pred: &[f64], reference: &[f64]) -> Result<f64> {
        let a = vorticity(&self.field(pred)?);
        let b = vorticity(&self.field(reference)?);
        pearson_correlation(&a, &b)
    }
}

/// 1-D Kuramoto–Sivashinsky.
#[derive(Debug)]
pub struct KsPhysics {
    pub solver: KsSolver,
}

impl KsPhysics {
    pub fn new(cfg: KsConfig) -> Result<KsPhysics> {
        if cfg.integrator != KsIntegrator::Explicit {
            return Err(TsmError::InvalidArgument(
                "learned KS solvers use the explicit integrator".into(),
            ));
        }
        Ok(KsPhysics {
            solver: KsSolver::new(cfg)?,
        })
    }
}

impl Physics for KsPhysics {
    type Tape = KsTape;

    fn dims(&self) -> Dims {
        Dims::One
    }

    fn nx(&self) -> usize {
        self.solver.cfg.n
    }

    fn ny(&self) -> usize {
        1
    }

    fn step_learned(&self, v: &[f64], coeffs: &CoefficientMap, slot: usize, step_index: usize) -> Result<(Vec<f64>, KsTape)> {
        self.solver.step_learned(v, coeffs.weights(slot, 0), step_index)
    }

    fn step_learned_vjp(
        &self,
        tape: &KsTape,
        coeffs: &CoefficientMap,
        slot: usize,
        g_out: &[f64],
        g_w: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.solver.step_learned_vjp(tape, coeffs.weights(slot, 0), g_out, g_w)
    }

    fn step_classic(&self, v: &[f64], step_index: usize) -> Result<(Vec<f64>, KsTape)> {
        self.solver.step_classic_recorded(v, step_index)
    }

    fn step_classic_vjp(&self, tape: &KsTape, g_out: &[f64]) -> Result<Vec<f64>> {
        self.solver.step_classic_vjp(tape, g_out)
    }

    fn correlation(&self, pred: &[f64], reference: &[f64]) -> Result<f64> {
        pearson(pred, reference)
    }
}
