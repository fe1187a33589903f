//! Multi-Davydov-D1 state: storage, coherent-state overlaps and observables.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bath::DiscretizedBath;
use crate::error::{Error, Result};
use crate::model::{initial_amplitudes, sigma_z_partner, InitialState, N_QUBIT_STATES};
use crate::spectrum::{SpectrumMeta, SpectrumSeries};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Photon-number imaginary parts below this are dropped silently.
pub const PHOTON_IMAG_TOL: f64 = 1e-10;
/// Photon numbers below −this are reported.
pub const PHOTON_NEGATIVE_TOL: f64 = 1e-8;

/// ln⟨a|b⟩ for multimode coherent states |a⟩, |b⟩.
pub fn log_overlap(f_a: &[Complex64], f_b: &[Complex64]) -> Complex64 {
    assert_eq!(
        f_a.len(),
        f_b.len(),
        "displacement vectors differ in length"
    );
    let mut acc = ZERO;
    for (a, b) in f_a.iter().zip(f_b) {
        acc += a.conj() * b - 0.5 * (a.norm_sqr() + b.norm_sqr());
    }
    acc
}

/// ⟨a|b⟩ = exp[Σ_k (a*_k b_k − (|a_k|² + |b_k|²)/2)].
pub fn overlap(f_a: &[Complex64], f_b: &[Complex64]) -> Complex64 {
    log_overlap(f_a, f_b).exp()
}

/// Variational parameters A_{nj} and f_{njk}.
///
/// Layout: `a[j*m + n]`, `f[(j*m + n)*n_modes + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiD1State {
    pub m: usize,
    pub n_modes: usize,
    pub t: f64,
    pub a: Vec<Complex64>,
    pub f: Vec<Complex64>,
}

impl MultiD1State {
    pub fn zeros(m: usize, n_modes: usize) -> Self {
        MultiD1State {
            m,
            n_modes,
            t: 0.0,
            a: vec![ZERO; N_QUBIT_STATES * m],
            f: vec![ZERO; N_QUBIT_STATES * m * n_modes],
        }
    }

    /// Qubits in `state`, field in vacuum. For m > 1 the extra coherent states
    /// carry zero amplitude and complex Gaussian displacements of scale
    /// `noise_scale` drawn from `seed`; branches absent from `state` are
    /// seeded as described below and the result is renormalized.
    pub fn initial(
        state: InitialState,
        n_modes: usize,
        m: usize,
        noise_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter(
                "multiplicity must be at least 1".into(),
            ));
        }
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise scale must be finite and >= 0, got {noise_scale}"
            )));
        }
        let mut s = Self::zeros(m, n_modes);
        let c = initial_amplitudes(state).c;
        for j in 0..N_QUBIT_STATES {
            s.a[j * m] = c[j];
        }
        if m > 1 && noise_scale > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, noise_scale).expect("valid normal");
            let mut draw = || Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            for j in 0..N_QUBIT_STATES {
                // A branch that starts empty never fills if all its amplitudes
                // vanish: its displacements then carry no metric. Such branches
                // get jitter on every state and amplitudes of order noise².
                let empty = c[j] == Complex64::new(0.0, 0.0);
                for n in usize::from(!empty)..m {
                    for z in s.f_mut(n, j) {
                        *z = draw();
                    }
                    if empty {
                        s.a[j * m + n] = draw() * noise_scale;
                    }
                }
            }
            let norm = s.norm();
            for a in &mut s.a {
                *a /= norm.sqrt();
            }
        }
        Ok(s)
    }

    #[inline]
    pub fn idx(&self, n: usize, j: usize) -> usize {
        j * self.m + n
    }

    #[inline]
    pub fn amp(&self, n: usize, j: usize) -> Complex64 {
        self.a[j * self.m + n]
    }

    #[inline]
    pub fn f(&self, n: usize, j: usize) -> &[Complex64] {
        let start = (j * self.m + n) * self.n_modes;
        &self.f[start..start + self.n_modes]
    }

    #[inline]
    pub fn f_mut(&mut self, n: usize, j: usize) -> &mut [Complex64] {
        let start = (j * self.m + n) * self.n_modes;
        &mut self.f[start..start + self.n_modes]
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
            && self.f.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn overlaps(&self) -> Overlaps {
        Overlaps::new(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_with(&self.overlaps())
    }

    pub fn norm_with(&self, ov: &Overlaps) -> f64 {
        let mut acc = ZERO;
        for j in 0..N_QUBIT_STATES {
            for mm in 0..self.m {
                let am = self.amp(mm, j).conj();
                for n in 0..self.m {
                    acc += am * self.amp(n, j) * ov.get(j, j, mm, n);
                }
            }
        }
        acc.re
    }

    /// Σ_{mn} A*_{mj} A_{nl} ⟨f_{mj}|f_{nl}⟩
    fn branch_expectation(&self, ov: &Overlaps, j: usize, l: usize) -> Complex64 {
        let mut acc = ZERO;
        for mm in 0..self.m {
            let am = self.amp(mm, j).conj();
            for n in 0..self.m {
                acc += am * self.amp(n, l) * ov.get(j, l, mm, n);
            }
        }
        acc
    }

    /// Excited-state populations ⟨σ_h⁺σ_h⁻⟩ = (⟨1⟩ + ⟨σ_hᶻ⟩)/2.
    pub fn populations(&self) -> [f64; 2] {
        self.populations_with(&self.overlaps())
    }

    pub fn populations_with(&self, ov: &Overlaps) -> [f64; 2] {
        let norm = self.norm_with(ov);
        let mut out = [0.0; 2];
        for (h, p) in out.iter_mut().enumerate() {
            let mut sz = ZERO;
            for j in 0..N_QUBIT_STATES {
                sz += self.branch_expectation(ov, j, sigma_z_partner(h, j));
            }
            *p = 0.5 * (norm + sz.re);
        }
        out
    }

    /// ⟨b_k†b_k⟩ for every mode.
    pub fn photon_numbers(&self) -> PhotonNumbers {
        self.photon_numbers_with(&self.overlaps())
    }

    pub fn photon_numbers_with(&self, ov: &Overlaps) -> PhotonNumbers {
        let nk = self.n_modes;
        let mut acc = vec![ZERO; nk];
        for j in 0..N_QUBIT_STATES {
            for mm in 0..self.m {
                let fm = self.f(mm, j);
                let am = self.amp(mm, j).conj();
                for n in 0..self.m {
                    let w = am * self.amp(n, j) * ov.get(j, j, mm, n);
                    if w == ZERO {
                        continue;
                    }
                    let fn_ = self.f(n, j);
                    for k in 0..nk {
                        acc[k] += w * fm[k].conj() * fn_[k];
                    }
                }
            }
        }
        let mut max_imag: f64 = 0.0;
        let mut min_value = f64::INFINITY;
        let values = acc
            .into_iter()
            .map(|z| {
                max_imag = max_imag.max(z.im.abs());
                min_value = min_value.min(z.re);
                z.re
            })
            .collect();
        PhotonNumbers {
            values,
            max_imag,
            min_value,
        }
    }

    /// Mirror-summed N(ω_k, t) on the right-branch frequencies.
    pub fn emission_spectrum_snapshot(&self, bath: &DiscretizedBath) -> Result<SpectrumSeries> {
        if bath.n_modes() != self.n_modes {
            return Err(Error::InvalidParameter(format!(
                "state has {} modes but bath has {}",
                self.n_modes,
                bath.n_modes()
            )));
        }
        let n = self.photon_numbers();
        let value = (0..bath.n_b)
            .map(|i| n.values[i] + n.values[bath.mirror(i)])
            .collect();
        SpectrumSeries::new(
            bath.right_frequencies().to_vec(),
            value,
            SpectrumMeta::multi_d1(self.t, self.m),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotonNumbers {
    pub values: Vec<f64>,
    /// Largest discarded imaginary part.
    pub max_imag: f64,
    pub min_value: f64,
}

impl PhotonNumbers {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Problems worth reporting; empty when the numbers are clean.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_imag > PHOTON_IMAG_TOL {
            out.push(format!(
                "photon number imaginary residue {:e} exceeds {PHOTON_IMAG_TOL:e}",
                self.max_imag
            ));
        }
        if self.min_value < -PHOTON_NEGATIVE_TOL {
            out.push(format!("negative photon number {:e}", self.min_value));
        }
        out
    }
}

/// Coherent-state overlap tables ⟨f_{mj}|f_{nl}⟩. [`Overlaps::new`] covers the
/// branch pairs the Hamiltonian connects (l = j and the two σᶻ partners of j);
/// [`Overlaps::full`] adds the doubly flipped partner needed by ⟨H̃²⟩.
#[derive(Debug, Clone)]
pub struct Overlaps {
    m: usize,
    blocks: [[Option<Vec<Complex64>>; N_QUBIT_STATES]; N_QUBIT_STATES],
}

impl Overlaps {
    pub fn new(state: &MultiD1State) -> Self {
        Self::build(state, false)
    }

    pub fn full(state: &MultiD1State) -> Self {
        Self::build(state, true)
    }

    fn build(state: &MultiD1State, all_pairs: bool) -> Self {
        let m = state.m;
        let half_norms: Vec<f64> = (0..N_QUBIT_STATES * m)
            .map(|i| {
                let (j, n) = (i / m, i % m);
                0.5 * state.f(n, j).iter().map(|z| z.norm_sqr()).sum::<f64>()
            })
            .collect();
        let pair = |j: usize, l: usize| -> Vec<Complex64> {
            let mut out = vec![ZERO; m * m];
            for mm in 0..m {
                let fa = state.f(mm, j);
                for n in 0..m {
                    let fb = state.f(n, l);
                    let mut dot = ZERO;
                    for (a, b) in fa.iter().zip(fb) {
                        dot += a.conj() * b;
                    }
                    let lg = dot - half_norms[j * m + mm] - half_norms[l * m + n];
                    out[mm * m + n] = lg.exp();
                }
            }
            out
        };
        let mut blocks: [[Option<Vec<Complex64>>; N_QUBIT_STATES]; N_QUBIT_STATES] =
            Default::default();
        for j in 0..N_QUBIT_STATES {
            for l in j..N_QUBIT_STATES {
                if !all_pairs && (j ^ l) == 3 {
                    continue;
                }
                let b = pair(j, l);
                if l != j {
                    let mut adj = vec![ZERO; m * m];
                    for mm in 0..m {
                        for n in 0..m {
                            adj[n * m + mm] = b[mm * m + n].conj();
                        }
                    }
                    blocks[l][j] = Some(adj);
                }
                blocks[j][l] = Some(b);
            }
        }
        Overlaps { m, blocks }
    }

    /// ⟨f_{mj}|f_{nl}⟩
    #[inline]
    pub fn get(&self, j: usize, l: usize, m: usize, n: usize) -> Complex64 {
        self.block(j, l)[m * self.m + n]
    }

    /// Row-major M×M block ⟨f_{·j}|f_{·l}⟩.
    #[inline]
    pub fn block(&self, j: usize, l: usize) -> &[Complex64] {
        self.blocks[j][l]
            .as_deref()
            .unwrap_or_else(|| panic!("overlap between branches {j} and {l} is not tabulated"))
    }
}

/// One sample of the observables along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub t: f64,
    pub p_e: [f64; 2],
    pub n_k: Vec<f64>,
    pub norm: f64,
    pub sigma2: f64,
    /// ⟨H̃(t)⟩ + Σ_k ω_k N(k, t): the Schrödinger-picture energy.
    pub energy: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::discretize;
    use crate::model::ModelParams;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn overlap_special_cases() {
        let f = vec![c(0.3, -0.2), c(0.1, 0.4)];
        assert_eq!(overlap(&f, &f), c(1.0, 0.0));
        let v = overlap(&[c(0.0, 0.0)], &[c(0.3, 0.0)]);
        assert_abs_diff_eq!(v.re, (-0.045f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn overlap_bounded_and_hermitian(
            xs in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0), 1..20)
        ) {
            let a: Vec<_> = xs.iter().map(|x| c(x.0, x.1)).collect();
            let b: Vec<_> = xs.iter().map(|x| c(x.2, x.3)).collect();
            let ab = overlap(&a, &b);
            let ba = overlap(&b, &a);
            prop_assert!(ab.norm() <= 1.0 + 1e-15);
            prop_assert!((ab - ba.conj()).norm() < 1e-14);
            // |⟨a|b⟩| = exp(−|a−b|²/2)
            let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum();
            prop_assert!((ab.norm() - (-0.5 * dist).exp()).abs() < 1e-13);
        }

        #[test]
        fn gram_is_positive_semidefinite(
            seed in 0u64..1000, m in 1usize..5
        ) {
            let s = MultiD1State::initial(InitialState::Psi0, 6, m, 0.5, seed).unwrap();
            let g = nalgebra::DMatrix::from_fn(m, m, |i, k| overlap(s.f(i, 0), s.f(k, 0)));
            prop_assert!((&g - g.adjoint()).norm() < 1e-14);
            let eig = nalgebra::SymmetricEigen::new(g);
            prop_assert!(eig.eigenvalues.iter().all(|&e| e > -1e-12));
        }
    }

    #[test]
    fn vacuum_observables() {
        let p = ModelParams::with_separation(0.05, 1.0, InitialState::Psi0).unwrap();
        let bath = discretize(&p, 5).unwrap();
        let s = MultiD1State::initial(InitialState::Psi0, bath.n_modes(), 1, 0.0, 0).unwrap();
        assert_eq!(s.populations(), [1.0, 0.0]);
        assert_abs_diff_eq!(s.norm(), 1.0, epsilon = 1e-15);
        assert!(s.photon_numbers().values.iter().all(|&n| n == 0.0));
        let spec = s.emission_spectrum_snapshot(&bath).unwrap();
        assert!(spec.value.iter().all(|&n| n == 0.0));

        let s = MultiD1State::initial(InitialState::PsiPlus, bath.n_modes(), 1, 0.0, 0).unwrap();
        let [p1, p2] = s.populations();
        assert_abs_diff_eq!(p1, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p2, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn coherent_mean_number_and_mirror_sum() {
        let p = ModelParams::with_separation(0.05, 1.0, InitialState::Psi0).unwrap();
        let bath = discretize(&p, 4).unwrap();
        let mut s = MultiD1State::zeros(1, bath.n_modes());
        let i0 = s.idx(0, 2);
        s.a[i0] = c(1.0, 0.0);
        let beta = c(0.3, -0.4);
        let left = bath.mirror(1);
        s.f_mut(0, 2)[left] = beta;
        let n = s.photon_numbers();
        assert_abs_diff_eq!(n.values[left], beta.norm_sqr(), epsilon = 1e-15);
        assert!(n.diagnostics().is_empty());
        let spec = s.emission_spectrum_snapshot(&bath).unwrap();
        assert_abs_diff_eq!(spec.value[1], beta.norm_sqr(), epsilon = 1e-15);
        assert_eq!(spec.value[0], 0.0);
        assert_eq!(spec.meta.method, "multiD1");
    }

    #[test]
    fn jitter_is_seeded() {
        let a = MultiD1State::initial(InitialState::Psi0, 8, 3, 1e-3, 7).unwrap();
        let b = MultiD1State::initial(InitialState::Psi0, 8, 3, 1e-3, 7).unwrap();
        let c2 = MultiD1State::initial(InitialState::Psi0, 8, 3, 1e-3, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c2);
        assert!(a.f(0, 1).iter().all(|z| *z == ZERO));
        assert_eq!(a.amp(1, 0), ZERO);
        assert!(a.f(2, 3).iter().any(|z| *z != ZERO));
    }

    #[test]
    fn empty_branches_are_seeded() {
        let s = MultiD1State::initial(InitialState::PsiMinus, 6, 2, 1e-3, 3).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-14);
        for j in [0, 3] {
            for n in 0..2 {
                let a = s.amp(n, j).norm();
                assert!(a > 0.0 && a < 1e-5, "A[{n},{j}] = {a}");
                assert!(s.f(n, j).iter().all(|z| *z != ZERO));
            }
        }
        // occupied branches: vacuum first state, silent extra states
        assert!(s.f(0, 1).iter().all(|z| *z == ZERO));
        assert_eq!(s.amp(1, 2), ZERO);
        let p = s.populations();
        assert!((p[0] - 0.5).abs() < 1e-5 && (p[1] - 0.5).abs() < 1e-5);
        // M = 1 has nothing to seed
        let d1 = MultiD1State::initial(InitialState::PsiMinus, 6, 1, 1e-3, 3).unwrap();
        assert_eq!(d1.amp(0, 0), ZERO);
    }
}
