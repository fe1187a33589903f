use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;

use super::{lamb_shift_pv, linewidth, mirror_phases, ModeAmplitudes, SpectrumKernels, Theory};
use crate::error::{Error, Result};
use crate::model::{spectral_density, ModelParams};
use crate::quadrature::{integrate, DEFAULT_ABS_TOL};
use crate::spectrum::SpectrumMeta;

const ETA_TOL: f64 = 1e-13;
const ETA_MAX_ITER: usize = 200;
const ETA_DAMPING: f64 = 0.5;

/// ½∫₀^{ω_c} J(x)/(x + ηω₀)² dx in closed form.
pub fn eta_exponent(eta: f64, params: &ModelParams) -> f64 {
    let a = eta * params.omega0;
    let wc = params.omega_c;
    params.alpha * (((wc + a) / a).ln() + a / (wc + a) - 1.0)
}

/// Self-consistent η = exp(−½∫ J/(x + ηω₀)²), by damped fixed-point iteration.
pub fn solve_eta(params: &ModelParams) -> Result<f64> {
    let mut eta = 1.0;
    for i in 0..ETA_MAX_ITER {
        let next = (-eta_exponent(eta, params)).exp();
        let step = next - eta;
        eta += ETA_DAMPING * step;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::NoConvergence {
                iterations: i + 1,
                last_step: step,
            });
        }
        if step.abs() < ETA_TOL {
            return Ok(eta);
        }
    }
    Err(Error::NoConvergence {
        iterations: ETA_MAX_ITER,
        last_step: (-eta_exponent(eta, params)).exp() - eta,
    })
}

/// Inter-qubit coupling V_c = −∫ J(x)(x + 2a)/(2(x + a)²) cos(xd/v_g) dx with a = ηω₀.
pub fn dipole_coupling_vc(eta: f64, params: &ModelParams) -> Result<f64> {
    let a = eta * params.omega0;
    let d = params.d();
    let v = integrate(
        |x| {
            spectral_density(x, params) * (x + 2.0 * a) / (2.0 * (x + a).powi(2))
                * (x * d / params.v_g).cos()
        },
        0.0,
        params.omega_c,
        DEFAULT_ABS_TOL,
        0.0,
    )?;
    Ok(-v)
}

#[derive(Debug, Clone, Copy)]
pub struct TrwaKernels {
    pub params: ModelParams,
    pub eta: f64,
    pub v_c: f64,
}

impl TrwaKernels {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let eta = solve_eta(params)?;
        let v_c = dipole_coupling_vc(eta, params)?;
        Ok(TrwaKernels {
            params: *params,
            eta,
            v_c,
        })
    }

    /// ηω₀, the renormalized splitting.
    pub fn a(&self) -> f64 {
        self.eta * self.params.omega0
    }

    fn theory(&self) -> Theory {
        Theory::Trwa { eta: self.eta }
    }

    pub fn delta(&self, omega: f64, d: f64) -> Result<f64> {
        lamb_shift_pv(omega, d, &self.params, self.theory())
    }

    pub fn gamma(&self, omega: f64, d: f64) -> f64 {
        linewidth(omega, d, &self.params, self.theory())
    }

    /// Ã(ω) = ω − ηω₀ − Δ̃(ω, 0) + iΓ̃(ω, 0).
    pub fn a_fn(&self, omega: f64) -> Result<Complex64> {
        Ok(Complex64::new(
            omega - self.a() - self.delta(omega, 0.0)?,
            self.gamma(omega, 0.0),
        ))
    }

    /// B̃(ω) = V_c + Δ̃(ω, d) − iΓ̃(ω, d).
    pub fn b_fn(&self, omega: f64) -> Result<Complex64> {
        let d = self.params.d();
        Ok(Complex64::new(
            self.v_c + self.delta(omega, d)?,
            -self.gamma(omega, d),
        ))
    }

    /// ω̃ = ω − V_c²/(2ηω₀).
    pub fn omega_tilde(&self, omega: f64) -> f64 {
        omega - self.v_c * self.v_c / (2.0 * self.a())
    }

    /// Amplitudes at a given phase e^{−ikd}, for already evaluated Ã and B̃.
    pub fn amplitudes(&self, a: Complex64, b: Complex64, phase: Complex64) -> ModeAmplitudes {
        let off = Complex64::new(1.0 / (2.0 * self.a()), 0.0);
        ModeAmplitudes {
            psi0: (a + phase * b) / (a * a - b * b) + off,
            plus: (1.0 + phase) * FRAC_1_SQRT_2 * ((a - b).inv() + off),
            minus: (1.0 - phase) * FRAC_1_SQRT_2 * ((a + b).inv() + off),
        }
    }
}

impl SpectrumKernels for TrwaKernels {
    fn method(&self) -> &'static str {
        "TRWA"
    }

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn mode_pair(&self, omega: f64) -> Result<[ModeAmplitudes; 2]> {
        let wt = self.omega_tilde(omega);
        let (a, b) = (self.a_fn(wt)?, self.b_fn(wt)?);
        Ok(mirror_phases(omega, &self.params).map(|e| self.amplitudes(a, b, e)))
    }

    /// λ̃²/λ² = (ηω₀/(ω + ηω₀))².
    fn weight_factor(&self, omega: f64) -> f64 {
        (self.a() / (omega + self.a())).powi(2)
    }

    fn annotate(&self, mut meta: SpectrumMeta) -> SpectrumMeta {
        meta.eta = Some(self.eta);
        meta.v_c = Some(self.v_c);
        meta
    }
}
