//! Physical configuration of the two-qubit waveguide model.
//!
//! Units: ω₀ = 1 sets frequencies, energies and inverse times; distances are in
//! L₀ = v_g/ω₀. Qubit states are expanded in the product σˣ eigenbasis ordered
//! as (|++⟩, |+−⟩, |−+⟩, |−−⟩).

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of two-qubit basis states.
pub const N_QUBIT_STATES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// |eg⟩
    Psi0,
    /// (|eg⟩ + |ge⟩)/√2
    PsiPlus,
    /// (|eg⟩ − |ge⟩)/√2
    PsiMinus,
}

impl InitialState {
    pub const ALL: [InitialState; 3] = [Self::Psi0, Self::PsiPlus, Self::PsiMinus];

    pub fn label(self) -> &'static str {
        match self {
            Self::Psi0 => "psi0",
            Self::PsiPlus => "psi_plus",
            Self::PsiMinus => "psi_minus",
        }
    }
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for InitialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psi0" | "eg" => Ok(Self::Psi0),
            "psi_plus" | "psi+" | "plus" => Ok(Self::PsiPlus),
            "psi_minus" | "psi-" | "minus" => Ok(Self::PsiMinus),
            other => Err(Error::InvalidParameter(format!(
                "unknown initial state {other:?}"
            ))),
        }
    }
}

/// Model parameters. `d = x1 - x2` is derived and kept in sync by the
/// constructor; deserialization goes through [`ModelParams::new`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelParams", into = "RawModelParams")]
pub struct ModelParams {
    pub omega0: f64,
    pub alpha: f64,
    pub omega_c: f64,
    pub v_g: f64,
    pub x1: f64,
    pub x2: f64,
    d: f64,
    pub initial_state: InitialState,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelParams {
    #[serde(default = "one")]
    omega0: f64,
    alpha: f64,
    omega_c: f64,
    #[serde(default = "one")]
    v_g: f64,
    x1: f64,
    #[serde(default)]
    x2: f64,
    initial_state: InitialState,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawModelParams> for ModelParams {
    type Error = Error;

    fn try_from(r: RawModelParams) -> Result<Self> {
        if r.omega0 != 1.0 {
            return Err(Error::InvalidParameter(
                "omega0 sets the unit system and must be 1".into(),
            ));
        }
        ModelParams::new(r.alpha, r.omega_c, r.v_g, r.x1, r.x2, r.initial_state)
    }
}

impl From<ModelParams> for RawModelParams {
    fn from(p: ModelParams) -> Self {
        RawModelParams {
            omega0: p.omega0,
            alpha: p.alpha,
            omega_c: p.omega_c,
            v_g: p.v_g,
            x1: p.x1,
            x2: p.x2,
            initial_state: p.initial_state,
        }
    }
}

impl ModelParams {
    pub fn new(
        alpha: f64,
        omega_c: f64,
        v_g: f64,
        x1: f64,
        x2: f64,
        initial_state: InitialState,
    ) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be >= 0, got {alpha}"
            )));
        }
        if !(omega_c > 0.0 && omega_c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "omega_c must be > 0, got {omega_c}"
            )));
        }
        if !(v_g > 0.0 && v_g.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "v_g must be > 0, got {v_g}"
            )));
        }
        if !(x1.is_finite() && x2.is_finite()) {
            return Err(Error::InvalidParameter(
                "qubit positions must be finite".into(),
            ));
        }
        Ok(ModelParams {
            omega0: 1.0,
            alpha,
            omega_c,
            v_g,
            x1,
            x2,
            d: x1 - x2,
            initial_state,
        })
    }

    /// Qubits at x1 = d, x2 = 0 with ω_c = 5 and v_g = 1.
    pub fn with_separation(alpha: f64, d: f64, initial_state: InitialState) -> Result<Self> {
        Self::new(alpha, 5.0, 1.0, d, 0.0, initial_state)
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn positions(&self) -> [f64; 2] {
        [self.x1, self.x2]
    }

    pub fn with_alpha(self, alpha: f64) -> Result<Self> {
        Self::new(
            alpha,
            self.omega_c,
            self.v_g,
            self.x1,
            self.x2,
            self.initial_state,
        )
    }

    pub fn with_initial_state(mut self, s: InitialState) -> Self {
        self.initial_state = s;
        self
    }

    pub fn spectral_density(&self, omega: f64) -> f64 {
        spectral_density(omega, self)
    }
}

/// Ohmic spectral density J(ω) = 2αω Θ(ω_c − ω), zero for ω ≤ 0 and at ω_c.
pub fn spectral_density(omega: f64, params: &ModelParams) -> f64 {
    if omega > 0.0 && omega < params.omega_c {
        2.0 * params.alpha * omega
    } else {
        0.0
    }
}

/// Two-qubit amplitudes over (|++⟩, |+−⟩, |−+⟩, |−−⟩).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialQubitAmplitudes {
    pub c: [Complex64; N_QUBIT_STATES],
}

impl InitialQubitAmplitudes {
    pub fn norm_sqr(&self) -> f64 {
        self.c.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Expands the initial state with |e⟩ = (|+⟩+|−⟩)/√2, |g⟩ = (|+⟩−|−⟩)/√2.
pub fn initial_amplitudes(state: InitialState) -> InitialQubitAmplitudes {
    let h = 0.5;
    let r = FRAC_1_SQRT_2;
    let re = |v: [f64; 4]| v.map(|x| Complex64::new(x, 0.0));
    let c = match state {
        InitialState::Psi0 => re([h, -h, h, -h]),
        InitialState::PsiPlus => re([r, 0.0, 0.0, -r]),
        InitialState::PsiMinus => re([0.0, -r, r, 0.0]),
    };
    InitialQubitAmplitudes { c }
}

/// σˣ eigenvalue of qubit `qubit` (0 or 1) in basis state `j`.
#[inline]
pub fn sigma_x_sign(qubit: usize, j: usize) -> f64 {
    let bit = if qubit == 0 { (j >> 1) & 1 } else { j & 1 };
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Basis index reached from `j` by σᶻ on `qubit` (σᶻ|±⟩ = |∓⟩).
#[inline]
pub fn sigma_z_partner(qubit: usize, j: usize) -> usize {
    if qubit == 0 {
        j ^ 2
    } else {
        j ^ 1
    }
}

/// Qubit operators in the σˣ product basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub h_s: Matrix4<Complex64>,
    pub h_s_sq: Matrix4<Complex64>,
    pub sigma_x: [Matrix4<Complex64>; 2],
    pub sigma_z: [Matrix4<Complex64>; 2],
    pub sigma_x1_sigma_x2: Matrix4<Complex64>,
    /// Diagonals of σ₁ˣ and σ₂ˣ.
    pub sx_diag: [[f64; 4]; 2],
}

pub fn system_matrix_elements(omega0: f64) -> SystemMatrices {
    let mut sigma_x = [Matrix4::zeros(), Matrix4::zeros()];
    let mut sigma_z = [Matrix4::zeros(), Matrix4::zeros()];
    let mut sx_diag = [[0.0; 4]; 2];
    for q in 0..2 {
        for j in 0..N_QUBIT_STATES {
            let s = sigma_x_sign(q, j);
            sx_diag[q][j] = s;
            sigma_x[q][(j, j)] = Complex64::new(s, 0.0);
            sigma_z[q][(sigma_z_partner(q, j), j)] = Complex64::new(1.0, 0.0);
        }
    }
    let h_s = (sigma_z[0] + sigma_z[1]) * Complex64::new(0.5 * omega0, 0.0);
    SystemMatrices {
        h_s_sq: h_s * h_s,
        h_s,
        sigma_x1_sigma_x2: sigma_x[0] * sigma_x[1],
        sigma_x,
        sigma_z,
        sx_diag,
    }
}
