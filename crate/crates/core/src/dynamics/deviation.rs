//! Energy, ⟨H̃²⟩ and the Dirac-Frenkel deviation σ².

use num_complex::Complex64;

use crate::bath::DiscretizedBath;
use crate::model::{ModelParams, SystemMatrices, N_QUBIT_STATES};
use crate::state::{MultiD1State, Overlaps};

use super::eom::{Coupling, Derivatives};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Deviations below −this are reported rather than silently clamped.
pub const NEGATIVE_DEVIATION_TOL: f64 = 1e-8;

fn p_vector(state: &MultiD1State, g: &[Complex64], j: usize) -> Vec<Complex64> {
    (0..state.m)
        .map(|n| g.iter().zip(state.f(n, j)).map(|(a, b)| a.conj() * b).sum())
        .collect()
}

/// Schrödinger-picture energy ⟨H_S⟩ + ⟨V(t)⟩ + Σ_k ω_k N_k.
pub fn energy(
    state: &MultiD1State,
    bath: &DiscretizedBath,
    params: &ModelParams,
    sys: &SystemMatrices,
) -> f64 {
    let coupling = Coupling::new(bath, params, state.t);
    let ov = state.overlaps();
    energy_with(state, bath, &coupling, sys, &ov)
}

pub(crate) fn energy_with(
    state: &MultiD1State,
    bath: &DiscretizedBath,
    coupling: &Coupling,
    sys: &SystemMatrices,
    ov: &Overlaps,
) -> f64 {
    let m = state.m;
    let mut acc = ZERO;
    for j in 0..N_QUBIT_STATES {
        for l in 0..N_QUBIT_STATES {
            let h = sys.h_s[(j, l)];
            if h == ZERO {
                continue;
            }
            let o = ov.block(j, l);
            for r in 0..m {
                for n in 0..m {
                    acc += h * state.amp(r, j).conj() * state.amp(n, l) * o[r * m + n];
                }
            }
        }
        let p = p_vector(state, &coupling.g[j], j);
        let s = ov.block(j, j);
        for r in 0..m {
            for n in 0..m {
                acc +=
                    state.amp(r, j).conj() * state.amp(n, j) * s[r * m + n] * (p[n] + p[r].conj());
            }
        }
    }
    let photons = state.photon_numbers_with(ov);
    let field: f64 = photons
        .values
        .iter()
        .zip(&bath.omega)
        .map(|(n, w)| n * w)
        .sum();
    acc.re + field
}

/// ⟨D|H̃(t)²|D⟩ in the interaction picture.
pub fn h_tilde_squared(
    state: &MultiD1State,
    bath: &DiscretizedBath,
    params: &ModelParams,
    sys: &SystemMatrices,
) -> f64 {
    let coupling = Coupling::new(bath, params, state.t);
    h_tilde_squared_with(state, &coupling, sys, &Overlaps::full(state))
}

pub(crate) fn h_tilde_squared_with(
    state: &MultiD1State,
    coupling: &Coupling,
    sys: &SystemMatrices,
    ov: &Overlaps,
) -> f64 {
    let m = state.m;
    let k = state.n_modes;
    let p: Vec<Vec<Complex64>> = (0..N_QUBIT_STATES)
        .map(|j| p_vector(state, &coupling.g[j], j))
        .collect();
    let mut acc = ZERO;
    for j in 0..N_QUBIT_STATES {
        for l in 0..N_QUBIT_STATES {
            let h2 = sys.h_s_sq[(j, l)];
            let h = sys.h_s[(j, l)];
            if h2 == ZERO && h == ZERO {
                continue;
            }
            let o = ov.block(j, l);
            for r in 0..m {
                let ar = state.amp(r, j).conj();
                if ar == ZERO {
                    continue;
                }
                let fr = state.f(r, j);
                for n in 0..m {
                    let w = ar * state.amp(n, l) * o[r * m + n];
                    if w == ZERO {
                        continue;
                    }
                    let mut term = h2;
                    if h != ZERO {
                        // ⟨f_r|V_l + V_j|f_n⟩ / ⟨f_r|f_n⟩
                        let fnl = state.f(n, l);
                        let mut cross = ZERO;
                        for q in 0..k {
                            cross += (coupling.g[l][q].conj() + coupling.g[j][q].conj()) * fnl[q]
                                + (coupling.g[l][q] + coupling.g[j][q]) * fr[q].conj();
                        }
                        term += h * cross;
                    }
                    acc += w * term;
                }
            }
        }
        let s = ov.block(j, j);
        for r in 0..m {
            for n in 0..m {
                let smn = p[j][n] + p[j][r].conj();
                acc += state.amp(r, j).conj()
                    * state.amp(n, j)
                    * s[r * m + n]
                    * (smn * smn + coupling.g_norm_sq[j]);
            }
        }
    }
    acc.re
}

/// σ² = ‖iḊ − H̃D‖²/ω₀² for the solved derivatives, with the raw (unclamped)
/// value returned alongside.
pub(crate) fn deviation_from_parts(h2: f64, deriv: &Derivatives, omega0: f64) -> (f64, f64) {
    let raw = (h2 + deriv.tangent_norm_sq - 2.0 * deriv.projected_overlap) / (omega0 * omega0);
    (raw.max(0.0), raw)
}

/// Deviation from the exact Schrödinger evolution, in units of ω₀².
pub fn deviation_norm(
    state: &MultiD1State,
    deriv: &Derivatives,
    bath: &DiscretizedBath,
    params: &ModelParams,
    sys: &SystemMatrices,
) -> f64 {
    let h2 = h_tilde_squared(state, bath, params, sys);
    deviation_from_parts(h2, deriv, params.omega0).0
}
