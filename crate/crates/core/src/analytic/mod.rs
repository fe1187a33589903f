//! Closed-form steady-state spectra from the transformed rotating-wave
//! approximation (TRWA) and standard second-order perturbation theory (SP).

mod sp;
mod trwa;

pub use sp::SpKernels;
pub use trwa::{dipole_coupling_vc, eta_exponent, solve_eta, TrwaKernels};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{spectral_density, InitialState, ModelParams};
use crate::quadrature::{principal_value, DEFAULT_ABS_TOL};
use crate::spectrum::{SpectrumMeta, SpectrumSeries};

/// Which theory's shift and width functions to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theory {
    /// Form factor (ηω₀/(x + ηω₀))² with the given η.
    Trwa { eta: f64 },
    /// Constant form factor 1/4.
    Sp,
}

impl Theory {
    fn form_factor(self, x: f64, omega0: f64) -> f64 {
        match self {
            Theory::Trwa { eta } => {
                let a = eta * omega0;
                (a / (x + a)).powi(2)
            }
            Theory::Sp => 0.25,
        }
    }
}

/// Lamb shift P∫₀^{ω_c} J(x) cos(xd/v_g) F(x) / (ω − x) dx, with F the form
/// factor of `theory`. Diverges logarithmically at ω = ω_c.
pub fn lamb_shift_pv(omega: f64, d: f64, params: &ModelParams, theory: Theory) -> Result<f64> {
    if params.alpha == 0.0 {
        return Ok(0.0);
    }
    let g = |x: f64| {
        spectral_density(x, params)
            * (x * d / params.v_g).cos()
            * theory.form_factor(x, params.omega0)
    };
    let wc = params.omega_c;
    if omega == wc {
        let edge = 2.0
            * params.alpha
            * wc
            * (wc * d / params.v_g).cos()
            * theory.form_factor(wc, params.omega0);
        return Ok(edge.signum() * f64::INFINITY);
    }
    principal_value(g, 0.0, wc, omega, DEFAULT_ABS_TOL)
}

/// π J(ω) cos(ωd/v_g) F(ω); zero outside (0, ω_c).
pub fn linewidth(omega: f64, d: f64, params: &ModelParams, theory: Theory) -> f64 {
    let j = spectral_density(omega, params);
    if j == 0.0 {
        return 0.0;
    }
    std::f64::consts::PI
        * j
        * (omega * d / params.v_g).cos()
        * theory.form_factor(omega, params.omega0)
}

/// Per-mode coupling weight λ² used to turn amplitudes into photon numbers.
#[derive(Debug, Clone, Copy)]
pub enum ModeWeight<'a> {
    /// Continuum density: each branch contributes J(ω)/2 per unit frequency.
    Density,
    /// Bin weights λ_k² aligned with the evaluation grid.
    PerMode(&'a [f64]),
}

impl ModeWeight<'_> {
    fn label(&self) -> &'static str {
        match self {
            ModeWeight::Density => "density",
            ModeWeight::PerMode(_) => "bins",
        }
    }

    fn at(&self, i: usize, omega: f64, params: &ModelParams) -> f64 {
        match self {
            ModeWeight::Density => 0.5 * spectral_density(omega, params),
            ModeWeight::PerMode(w) => w[i],
        }
    }
}

/// Emission amplitudes of one mode for the three initial states, without the
/// coupling prefactor: N = weight · |amp|².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeAmplitudes {
    pub psi0: Complex64,
    pub plus: Complex64,
    pub minus: Complex64,
}

impl ModeAmplitudes {
    pub fn get(&self, state: InitialState) -> Complex64 {
        match state {
            InitialState::Psi0 => self.psi0,
            InitialState::PsiPlus => self.plus,
            InitialState::PsiMinus => self.minus,
        }
    }
}

/// Shared interface of the two theories.
pub trait SpectrumKernels: Sync {
    fn method(&self) -> &'static str;
    fn params(&self) -> &ModelParams;
    /// Amplitudes at mode frequency ω for phase e^{−ikd} = e^{−i·sign·ωd/v_g}.
    /// Each entry is (mode amplitude for k = +ω/v_g, for k = −ω/v_g).
    fn mode_pair(&self, omega: f64) -> Result<[ModeAmplitudes; 2]>;
    /// Scale applied to the per-mode weight (λ̃²/λ² or 1/4).
    fn weight_factor(&self, omega: f64) -> f64;
    fn annotate(&self, meta: SpectrumMeta) -> SpectrumMeta {
        meta
    }
}

/// e^{−ikd} for the right (+) and left (−) mode at frequency ω.
pub(crate) fn mirror_phases(omega: f64, params: &ModelParams) -> [Complex64; 2] {
    let phase = omega * params.d() / params.v_g;
    [
        Complex64::from_polar(1.0, -phase),
        Complex64::from_polar(1.0, phase),
    ]
}

/// 2001 uniform points on (0, ω_c].
pub fn default_grid(params: &ModelParams) -> Vec<f64> {
    uniform_grid(params, 2001)
}

pub fn uniform_grid(params: &ModelParams, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| params.omega_c * i as f64 / n as f64)
        .collect()
}

fn check_grid(grid: &[f64], params: &ModelParams) -> Result<()> {
    if let Some(w) = grid.iter().find(|&&w| !(w > 0.0 && w <= params.omega_c)) {
        return Err(Error::InvalidParameter(format!(
            "grid point {w} outside (0, {}]",
            params.omega_c
        )));
    }
    Ok(())
}

/// N(ω) = N(k) + N(−k) on `grid` for the initial state in the kernels' params.
pub fn spectrum<K: SpectrumKernels>(
    kernels: &K,
    grid: &[f64],
    weight: ModeWeight,
) -> Result<SpectrumSeries> {
    let params = *kernels.params();
    check_grid(grid, &params)?;
    if let ModeWeight::PerMode(w) = weight {
        if w.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} grid points",
                w.len(),
                grid.len()
            )));
        }
    }
    let state = params.initial_state;
    let value = grid
        .par_iter()
        .enumerate()
        .map(|(i, &w)| {
            let lam_sq = weight.at(i, w, &params) * kernels.weight_factor(w);
            if lam_sq == 0.0 {
                return Ok(0.0);
            }
            let pair = kernels.mode_pair(w)?;
            Ok(lam_sq * (pair[0].get(state).norm_sqr() + pair[1].get(state).norm_sqr()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut meta = SpectrumMeta::new(kernels.method()).with_params(&params);
    meta.weighting = Some(weight.label().to_string());
    SpectrumSeries::new(grid.to_vec(), value, kernels.annotate(meta))
}

pub fn trwa_spectrum(
    params: &ModelParams,
    grid: &[f64],
    weight: ModeWeight,
) -> Result<SpectrumSeries> {
    spectrum(&TrwaKernels::new(params)?, grid, weight)
}

pub fn sp_spectrum(
    params: &ModelParams,
    grid: &[f64],
    weight: ModeWeight,
) -> Result<SpectrumSeries> {
    spectrum(&SpKernels::new(params)?, grid, weight)
}
