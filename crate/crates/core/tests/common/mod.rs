//! Independent reference: exact dynamics in a truncated Fock space, built in
//! the |e⟩/|g⟩ basis from the lab-frame Hamiltonian
//! H = (ω₀/2)Σσᶻ_h + Σ ω_k b†b + Σ_h σˣ_h Σ_k (λ_k/2)(e^{−ikx_h} b_k + e^{ikx_h} b_k†).

#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use waveguide_emission::bath::DiscretizedBath;
use waveguide_emission::model::{InitialState, ModelParams};

/// Truncated two-qubit Fock space. Basis index = qubit pattern (2 bits,
/// 1 = excited, qubit 1 high) × field index.
pub struct FockSpace {
    /// Photon occupation of each field basis vector, per mode.
    pub occupations: Vec<Vec<u32>>,
    lookup: HashMap<Vec<u32>, usize>,
    pub n_modes: usize,
}

pub struct FockOracle {
    space: FockSpace,
    evals: DVector<f64>,
    evecs: DMatrix<Complex64>,
}

pub struct FockObservables {
    pub p_e: [f64; 2],
    pub n_k: Vec<f64>,
    pub norm: f64,
}

/// All occupation vectors of `modes` modes with at most `cap` photons in total.
fn occupations(modes: usize, cap: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..modes {
        let mut next = Vec::new();
        for o in &out {
            let used: u32 = o.iter().sum();
            for n in 0..=cap - used {
                let mut v = o.clone();
                v.push(n);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn excited(q: usize, qubit: usize) -> bool {
    (q >> (1 - qubit)) & 1 == 1
}

impl FockSpace {
    pub fn new(n_modes: usize, photon_cap: u32) -> Self {
        let occupations = occupations(n_modes, photon_cap);
        let lookup = occupations
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, o)| (o, i))
            .collect();
        FockSpace {
            occupations,
            lookup,
            n_modes,
        }
    }

    pub fn field_dim(&self) -> usize {
        self.occupations.len()
    }

    pub fn dim(&self) -> usize {
        4 * self.field_dim()
    }

    /// Nonzero entries (row, col, value) of H_S + Σ ω_k b†b·`free_field` + V(t),
    /// where V(t) carries the interaction-picture phases e^{±iω_k t}.
    pub fn hamiltonian_entries(
        &self,
        bath: &DiscretizedBath,
        params: &ModelParams,
        free_field: bool,
        t: f64,
    ) -> Vec<(usize, usize, Complex64)> {
        let nf = self.field_dim();
        let x = params.positions();
        let mut out = Vec::new();
        for q in 0..4 {
            for (fi, o) in self.occupations.iter().enumerate() {
                let row = q * nf + fi;
                let mut diag = 0.0;
                for hq in 0..2 {
                    diag += if excited(q, hq) { 0.5 } else { -0.5 } * params.omega0;
                }
                if free_field {
                    for k in 0..self.n_modes {
                        diag += bath.omega[k] * o[k] as f64;
                    }
                }
                out.push((row, row, Complex64::new(diag, 0.0)));
                for hq in 0..2 {
                    // σˣ flips qubit hq
                    let q2 = q ^ (1 << (1 - hq));
                    for k in 0..self.n_modes {
                        let c = 0.5 * bath.lambda[k];
                        let phase = bath.k[k] * x[hq] + bath.omega[k] * t;
                        // b_k† term: |o⟩ → √(n+1)|o + 1_k⟩
                        let mut up = o.clone();
                        up[k] += 1;
                        if let Some(&fj) = self.lookup.get(&up) {
                            let amp = c * ((o[k] + 1) as f64).sqrt();
                            let r = q2 * nf + fj;
                            let z = Complex64::from_polar(amp, phase);
                            out.push((r, row, z));
                            out.push((row, r, z.conj()));
                        }
                    }
                }
            }
        }
        out
    }

    /// Field part of the coherent state |f⟩.
    pub fn coherent(&self, f: &[Complex64]) -> DVector<Complex64> {
        let pref = (-0.5 * f.iter().map(|z| z.norm_sqr()).sum::<f64>()).exp();
        DVector::from_iterator(
            self.field_dim(),
            self.occupations.iter().map(|o| {
                let mut z = Complex64::new(pref, 0.0);
                for (k, &n) in o.iter().enumerate() {
                    let fact: f64 = (1..=n).map(f64::from).product();
                    z *= f[k].powu(n) / fact.sqrt();
                }
                z
            }),
        )
    }

    /// b_k† applied to a field vector.
    pub fn raise(&self, k: usize, v: &DVector<Complex64>) -> DVector<Complex64> {
        let mut out = DVector::zeros(self.field_dim());
        for (i, o) in self.occupations.iter().enumerate() {
            let mut up = o.clone();
            up[k] += 1;
            if let Some(&j) = self.lookup.get(&up) {
                out[j] += v[i] * ((o[k] + 1) as f64).sqrt();
            }
        }
        out
    }

    /// ⟨qubits|j⟩ for the σˣ product state j (bit 1 = qubit 1 in |−⟩),
    /// with |±⟩ = (|e⟩ ± |g⟩)/√2.
    pub fn sigma_x_state(j: usize) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (q, v) in out.iter_mut().enumerate() {
            let mut z = 0.5;
            for hq in 0..2 {
                let minus = (j >> (1 - hq)) & 1 == 1;
                if minus && !excited(q, hq) {
                    z = -z;
                }
            }
            *v = z;
        }
        out
    }

    /// Qubit state ⊗ field vector.
    pub fn product(&self, qubits: &[f64; 4], field: &DVector<Complex64>) -> DVector<Complex64> {
        let nf = self.field_dim();
        let mut out = DVector::zeros(self.dim());
        for q in 0..4 {
            for i in 0..nf {
                out[q * nf + i] = field[i] * qubits[q];
            }
        }
        out
    }
}

impl FockOracle {
    pub fn new(bath: &DiscretizedBath, params: &ModelParams, photon_cap: u32) -> Self {
        let space = FockSpace::new(bath.n_modes(), photon_cap);
        let dim = space.dim();
        let mut h = DMatrix::<Complex64>::zeros(dim, dim);
        for (r, c, z) in space.hamiltonian_entries(bath, params, true, 0.0) {
            h[(r, c)] += z;
        }
        let eig = nalgebra::SymmetricEigen::new(h);
        FockOracle {
            space,
            evals: eig.eigenvalues,
            evecs: eig.eigenvectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.evals.len()
    }

    pub fn initial(&self, state: InitialState) -> DVector<Complex64> {
        let nf = self.space.field_dim();
        let mut psi = DVector::zeros(self.dim());
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // pattern bits: qubit 1 is the high bit; |eg⟩ = 0b10
        let (eg, ge) = (2 * nf, nf);
        match state {
            InitialState::Psi0 => psi[eg] = Complex64::new(1.0, 0.0),
            InitialState::PsiPlus => {
                psi[eg] = Complex64::new(r, 0.0);
                psi[ge] = Complex64::new(r, 0.0);
            }
            InitialState::PsiMinus => {
                psi[eg] = Complex64::new(r, 0.0);
                psi[ge] = Complex64::new(-r, 0.0);
            }
        }
        psi
    }

    pub fn evolve(&self, psi0: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
        let mut c = self.evecs.adjoint() * psi0;
        for (ci, e) in c.iter_mut().zip(self.evals.iter()) {
            *ci *= Complex64::from_polar(1.0, -e * t);
        }
        &self.evecs * c
    }

    pub fn observables(&self, psi: &DVector<Complex64>) -> FockObservables {
        let nf = self.space.field_dim();
        let mut p_e = [0.0; 2];
        let mut n_k = vec![0.0; self.space.n_modes];
        let mut norm = 0.0;
        for q in 0..4 {
            for (fi, o) in self.space.occupations.iter().enumerate() {
                let w = psi[q * nf + fi].norm_sqr();
                norm += w;
                if q & 2 != 0 {
                    p_e[0] += w;
                }
                if q & 1 != 0 {
                    p_e[1] += w;
                }
                for k in 0..self.space.n_modes {
                    n_k[k] += w * o[k] as f64;
                }
            }
        }
        FockObservables { p_e, n_k, norm }
    }
}
