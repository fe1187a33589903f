//! The multi-D1 equations of motion checked against an explicit Fock-space
//! representation of the same state.

mod common;

use common::{FockOracle, FockSpace};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waveguide_emission::bath::{discretize, DiscretizedBath};
use waveguide_emission::dynamics::{
    derivatives, deviation_norm, energy, h_tilde_squared, propagate, Derivatives, IntegratorConfig,
};
use waveguide_emission::model::{system_matrix_elements, InitialState, ModelParams};
use waveguide_emission::state::MultiD1State;

const CAP: u32 = 12;

fn ket(space: &FockSpace, s: &MultiD1State) -> DVector<Complex64> {
    let mut out = DVector::zeros(space.dim());
    for j in 0..4 {
        let q = FockSpace::sigma_x_state(j);
        for n in 0..s.m {
            out += space.product(&q, &space.coherent(s.f(n, j))) * s.amp(n, j);
        }
    }
    out
}

fn apply(entries: &[(usize, usize, Complex64)], v: &DVector<Complex64>) -> DVector<Complex64> {
    let mut out = DVector::zeros(v.len());
    for &(r, c, z) in entries {
        out[r] += z * v[c];
    }
    out
}

fn shifted(s: &MultiD1State, d: &Derivatives, h: f64) -> MultiD1State {
    let mut out = s.clone();
    for (a, da) in out.a.iter_mut().zip(&d.a_dot) {
        *a += da * h;
    }
    for (f, df) in out.f.iter_mut().zip(&d.f_dot) {
        *f += df * h;
    }
    out.t += h;
    out
}

fn random_state(m: usize, n_modes: usize, seed: u64) -> MultiD1State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = MultiD1State::zeros(m, n_modes);
    s.t = 0.7;
    for a in &mut s.a {
        *a = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    for f in &mut s.f {
        *f = Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    }
    let norm = s.norm().sqrt();
    for a in &mut s.a {
        *a /= norm;
    }
    s
}

struct Setup {
    params: ModelParams,
    bath: DiscretizedBath,
    space: FockSpace,
}

fn setup(alpha: f64) -> Setup {
    let params = ModelParams::with_separation(alpha, 1.3, InitialState::Psi0).unwrap();
    let bath = discretize(&params, 2).unwrap();
    let space = FockSpace::new(bath.n_modes(), CAP);
    Setup {
        params,
        bath,
        space,
    }
}

#[test]
fn residual_is_orthogonal_to_tangent_space() {
    let Setup {
        params,
        bath,
        space,
    } = setup(0.1);
    let sys = system_matrix_elements(params.omega0);
    for seed in 0..3 {
        let s = random_state(2, bath.n_modes(), seed);
        let d = derivatives(&s, &bath, &params, &sys, &IntegratorConfig::default()).unwrap();
        assert_eq!(
            d.stats.regularized_branches, 0,
            "random states are well conditioned"
        );

        let h = 1e-5;
        let ddot = (ket(&space, &shifted(&s, &d, h)) - ket(&space, &shifted(&s, &d, -h)))
            / Complex64::new(2.0 * h, 0.0);
        let d0 = ket(&space, &s);
        let hd = apply(&space.hamiltonian_entries(&bath, &params, false, s.t), &d0);
        let r = ddot * Complex64::i() - &hd;
        let scale = hd.norm();

        for j in 0..4 {
            let q = FockSpace::sigma_x_state(j);
            for n in 0..s.m {
                let coh = space.coherent(s.f(n, j));
                let along = space.product(&q, &coh).dotc(&r).norm();
                assert!(
                    along < 1e-8 * scale,
                    "seed {seed}: ⟨j={j},n={n}|R⟩ = {along:e}"
                );
                for k in 0..bath.n_modes() {
                    let w = space.product(&q, &space.raise(k, &coh));
                    let along = w.dotc(&r).norm();
                    assert!(
                        along < 1e-8 * scale,
                        "seed {seed}: ⟨b†_{k} j={j},n={n}|R⟩ = {along:e}"
                    );
                }
            }
        }

        let sigma2 = deviation_norm(&s, &d, &bath, &params, &sys);
        let r2 = r.norm_squared();
        assert!(
            (sigma2 - r2).abs() < 1e-8 * (1.0 + r2),
            "σ² {sigma2:e} vs ‖R‖² {r2:e}"
        );
        let h2 = h_tilde_squared(&s, &bath, &params, &sys);
        assert!(
            (h2 - hd.norm_squared()).abs() < 1e-12,
            "{h2} vs {}",
            hd.norm_squared()
        );
    }
}

#[test]
fn energy_matches_lab_frame_expectation() {
    let Setup {
        params,
        bath,
        space,
    } = setup(0.07);
    let sys = system_matrix_elements(params.omega0);
    let s = random_state(3, bath.n_modes(), 11);
    let d0 = ket(&space, &s);
    let hd = apply(&space.hamiltonian_entries(&bath, &params, true, s.t), &d0);
    let exact = d0.dotc(&hd).re;
    let e = energy(&s, &bath, &params, &sys);
    assert!((e - exact).abs() < 1e-12, "{e} vs {exact}");
}

#[test]
fn fock_oracle_conserves_norm_and_decouples_at_zero_coupling() {
    let params = ModelParams::with_separation(0.0, 1.0, InitialState::PsiPlus).unwrap();
    let bath = discretize(&params, 2).unwrap();
    let oracle = FockOracle::new(&bath, &params, 3);
    let psi = oracle.evolve(&oracle.initial(InitialState::PsiPlus), 4.2);
    let o = oracle.observables(&psi);
    assert!((o.norm - 1.0).abs() < 1e-12);
    assert!((o.p_e[0] - 0.5).abs() < 1e-12 && (o.p_e[1] - 0.5).abs() < 1e-12);
    assert!(o.n_k.iter().all(|n| n.abs() < 1e-12));
}

#[test]
fn short_time_dynamics_match_fock_propagator() {
    let alpha = 0.002;
    let params = ModelParams::with_separation(alpha, 1.0, InitialState::Psi0).unwrap();
    let bath = discretize(&params, 2).unwrap();
    let oracle = FockOracle::new(&bath, &params, 6);
    let psi0 = oracle.initial(InitialState::Psi0);
    let start = MultiD1State::initial(InitialState::Psi0, bath.n_modes(), 2, 1e-3, 0).unwrap();
    let cfg = IntegratorConfig {
        t_final: 2.0,
        output_stride: 20,
        ..Default::default()
    };
    let tr = propagate(&start, &bath, &params, &cfg).unwrap();
    for rec in &tr.records {
        let o = oracle.observables(&oracle.evolve(&psi0, rec.t));
        for h in 0..2 {
            assert!((rec.p_e[h] - o.p_e[h]).abs() < 1e-4, "t={} P{h}", rec.t);
        }
        for k in 0..bath.n_modes() {
            assert!((rec.n_k[k] - o.n_k[k]).abs() < 1e-4, "t={} N{k}", rec.t);
        }
    }
}
