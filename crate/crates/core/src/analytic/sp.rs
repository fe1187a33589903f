use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;

use super::{lamb_shift_pv, linewidth, mirror_phases, ModeAmplitudes, SpectrumKernels, Theory};
use crate::error::Result;
use crate::model::ModelParams;

/// Second-order perturbative kernels, including counter-rotating terms.
#[derive(Debug, Clone, Copy)]
pub struct SpKernels {
    pub params: ModelParams,
    /// 2Δ(−ω₀, 0), the frequency offset of the emitted photon.
    pub shift: f64,
}

impl SpKernels {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let shift = 2.0 * lamb_shift_pv(-params.omega0, 0.0, params, Theory::Sp)?;
        Ok(SpKernels {
            params: *params,
            shift,
        })
    }

    pub fn delta(&self, omega: f64, d: f64) -> Result<f64> {
        lamb_shift_pv(omega, d, &self.params, Theory::Sp)
    }

    pub fn gamma(&self, omega: f64, d: f64) -> f64 {
        linewidth(omega, d, &self.params, Theory::Sp)
    }

    /// ω' = ω + 2Δ(−ω₀, 0).
    pub fn omega_prime(&self, omega: f64) -> f64 {
        omega + self.shift
    }

    fn shift_width(&self, omega: f64, d: f64) -> Result<Complex64> {
        let w2 = omega - 2.0 * self.params.omega0;
        Ok(Complex64::new(
            self.delta(omega, d)? + self.delta(w2, d)?,
            self.gamma(omega, d) + self.gamma(w2, d),
        ))
    }

    /// A(ω) = ω − ω₀ − Δ(ω,0) − Δ(ω−2ω₀,0) + i[Γ(ω,0) + Γ(ω−2ω₀,0)].
    pub fn a_fn(&self, omega: f64) -> Result<Complex64> {
        let sw = self.shift_width(omega, 0.0)?;
        Ok(Complex64::new(omega - self.params.omega0 - sw.re, sw.im))
    }

    /// B(ω) = Δ(ω,d) + Δ(ω−2ω₀,d) − i[Γ(ω,d) + Γ(ω−2ω₀,d)].
    pub fn b_fn(&self, omega: f64) -> Result<Complex64> {
        Ok(self.shift_width(omega, self.params.d())?.conj())
    }

    pub fn amplitudes(&self, a: Complex64, b: Complex64, phase: Complex64) -> ModeAmplitudes {
        ModeAmplitudes {
            psi0: (a + phase * b) / (a * a - b * b),
            plus: (1.0 + phase) * FRAC_1_SQRT_2 / (a - b),
            minus: (1.0 - phase) * FRAC_1_SQRT_2 / (a + b),
        }
    }
}

impl SpectrumKernels for SpKernels {
    fn method(&self) -> &'static str {
        "SP"
    }

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn mode_pair(&self, omega: f64) -> Result<[ModeAmplitudes; 2]> {
        let wp = self.omega_prime(omega);
        let (a, b) = (self.a_fn(wp)?, self.b_fn(wp)?);
        Ok(mirror_phases(omega, &self.params).map(|e| self.amplitudes(a, b, e)))
    }

    fn weight_factor(&self, _omega: f64) -> f64 {
        0.25
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitialState;
    use crate::quadrature::integrate;
    use approx::assert_abs_diff_eq;

    #[test]
    fn shift_is_a_regular_integral() {
        let p = ModelParams::with_separation(0.05, 1.0, InitialState::Psi0).unwrap();
        let k = SpKernels::new(&p).unwrap();
        // 2 · ∫ 2αx/(4(−1 − x)) dx = −α ∫ x/(1 + x) = −α(5 − ln 6)
        assert_abs_diff_eq!(k.shift, -0.05 * (5.0 - 6f64.ln()), epsilon = 1e-11);
        assert_abs_diff_eq!(k.omega_prime(1.2), 1.2 + k.shift, epsilon = 1e-15);
    }

    #[test]
    fn counter_rotating_partner_is_off_shell() {
        let p = ModelParams::with_separation(0.05, 2.0, InitialState::Psi0).unwrap();
        let k = SpKernels::new(&p).unwrap();
        let w = 0.9;
        // Δ(ω − 2ω₀, d) has no pole inside (0, ω_c)
        let direct = integrate(
            |x| 0.1 * x * (2.0 * x).cos() / (4.0 * (w - 2.0 - x)),
            0.0,
            5.0,
            1e-13,
            0.0,
        )
        .unwrap();
        assert_abs_diff_eq!(k.delta(w - 2.0, 2.0).unwrap(), direct, epsilon = 1e-10);
        let a = k.a_fn(w).unwrap();
        assert_abs_diff_eq!(a.im, k.gamma(w, 0.0), epsilon = 1e-16);
        let b = k.b_fn(w).unwrap();
        assert_abs_diff_eq!(
            b.re,
            k.delta(w, 2.0).unwrap() + k.delta(w - 2.0, 2.0).unwrap(),
            epsilon = 1e-15
        );
    }
}
