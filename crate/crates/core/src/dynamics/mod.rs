//! Dirac-Frenkel dynamics of the multi-D1 state in the interaction picture of
//! the free field.

mod deviation;
mod eom;
mod propagate;

pub use deviation::{deviation_norm, energy, h_tilde_squared};
pub use eom::{
    assemble_eom, derivatives, solve_eom, BranchSolution, Coupling, Derivatives, EomSystem,
    SolveStats, RESIDUAL_TOL,
};
pub use propagate::{propagate, Checkpoint, Trajectory};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Step (1/ω₀): fixed for RK4, the upper bound when adaptive.
    pub dt: f64,
    pub t_final: f64,
    /// Tikhonov parameter relative to the mean diagonal of the Gram matrix.
    pub epsilon_reg: f64,
    /// Largest relative Tikhonov parameter tried before giving up.
    pub epsilon_max: f64,
    /// Scale of the complex Gaussian jitter on the extra coherent states.
    pub noise_scale: f64,
    /// Observables are recorded every `output_stride` steps.
    pub output_stride: usize,
    /// Trajectory is abandoned when |⟨D|D⟩ − 1| exceeds this.
    pub norm_abort: f64,
    /// Error-controlled Dormand-Prince 5(4) with `dt` as the largest step;
    /// `false` selects fixed-step RK4.
    pub adaptive: bool,
    /// Local error bound per step on the state vector, ‖δ|D⟩‖.
    pub tolerance: f64,
    /// Smallest adaptive step; steps here are accepted whatever their error.
    pub min_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: 0.01,
            t_final: 300.0,
            epsilon_reg: 1e-10,
            epsilon_max: 1e-6,
            noise_scale: 1e-3,
            output_stride: 10,
            norm_abort: 1e-3,
            adaptive: true,
            tolerance: 1e-8,
            min_step: 1e-6,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be >= 0, got {}", self.t_final));
        }
        if !(self.epsilon_reg >= 0.0 && self.epsilon_max >= self.epsilon_reg) {
            return bad("need 0 <= epsilon_reg <= epsilon_max".into());
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad(format!(
                "noise_scale must be >= 0, got {}",
                self.noise_scale
            ));
        }
        if self.output_stride == 0 {
            return bad("output_stride must be >= 1".into());
        }
        if !(self.norm_abort > 0.0) {
            return bad("norm_abort must be > 0".into());
        }
        if self.adaptive && !(self.tolerance > 0.0 && self.min_step > 0.0) {
            return bad("tolerance and min_step must be > 0".into());
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}
