//! Assembly and solution of the Dirac-Frenkel equations of motion.
//!
//! Differentiating the multi-D1 state gives
//! |Ḋ⟩ = Σ_{nj} (a_{nj} + A_{nj} Σ_k ḟ_{njk} b_k†)|φ_j⟩|f_{nj}⟩ with
//! a_{nj} = Ȧ_{nj} − A_{nj} Re Σ_k f*_{njk} ḟ_{njk}. Projecting the Schrödinger
//! residual onto the tangent vectors |φ_j f_{mj}⟩ and A_{mj} b_q†|φ_j f_{mj}⟩
//! yields, for every branch j, the Hermitian system  i G y = I  with y =
//! (a_{·j}, ḟ_{·j·}). Branches couple only through the right-hand side.
//!
//! The Gram matrix has the structure (A*_m A_n S_mn)(δ_qk + f*_{mk} f_{nq}) in
//! its ḟ block: an M×M matrix tensored with the identity, corrected only
//! inside span{f_n}. The solver therefore never forms the M(1+K) system.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::bath::DiscretizedBath;
use crate::error::{Error, Result};
use crate::model::{sigma_x_sign, ModelParams, SystemMatrices, N_QUBIT_STATES};
use crate::state::{MultiD1State, Overlaps};

use super::IntegratorConfig;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Relative residual ‖Gy − b‖/‖b‖ above which a solve is rejected.
pub const RESIDUAL_TOL: f64 = 1e-6;

/// Bath coupling at time t. On branch j the interaction reads
/// Σ_k (g*_{jk} b_k + g_{jk} b_k†) with
/// g_{jk} = Σ_h s_h(j) (λ_k/2) e^{i(k x_h + ω_k t)}.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub t: f64,
    pub g: [Vec<Complex64>; N_QUBIT_STATES],
    /// Σ_k |g_{jk}|² per branch.
    pub g_norm_sq: [f64; N_QUBIT_STATES],
}

impl Coupling {
    pub fn new(bath: &DiscretizedBath, params: &ModelParams, t: f64) -> Self {
        let n = bath.n_modes();
        let pos = params.positions();
        let mut c = [vec![ZERO; n], vec![ZERO; n]];
        for (h, ch) in c.iter_mut().enumerate() {
            for k in 0..n {
                let phase = bath.k[k] * pos[h] + bath.omega[k] * t;
                ch[k] = Complex64::from_polar(0.5 * bath.lambda[k], phase);
            }
        }
        let g: [Vec<Complex64>; N_QUBIT_STATES] = std::array::from_fn(|j| {
            let (s0, s1) = (sigma_x_sign(0, j), sigma_x_sign(1, j));
            c[0].iter()
                .zip(&c[1])
                .map(|(a, b)| a * s0 + b * s1)
                .collect()
        });
        let g_norm_sq = std::array::from_fn(|j| g[j].iter().map(|z| z.norm_sqr()).sum());
        Coupling { t, g, g_norm_sq }
    }
}

/// Equations of motion for one qubit branch j: i G y = I.
#[derive(Debug, Clone)]
pub struct EomSystem<'a> {
    pub branch: usize,
    pub m: usize,
    pub n_modes: usize,
    /// S_mn = ⟨f_{mj}|f_{nj}⟩, row-major.
    pub gram_s: Vec<Complex64>,
    pub amp: &'a [Complex64],
    /// f_{nj·}, M rows of length n_modes.
    pub f: &'a [Complex64],
    /// I_a[m] = ⟨φ_j f_{mj}|H̃|D⟩
    pub rhs_a: Vec<Complex64>,
    /// I_f[m, q] = A*_{mj} ⟨φ_j f_{mj}|b_q H̃|D⟩
    pub rhs_f: Vec<Complex64>,
}

impl EomSystem<'_> {
    pub fn dim(&self) -> usize {
        self.m * (1 + self.n_modes)
    }

    fn f_row(&self, n: usize) -> &[Complex64] {
        &self.f[n * self.n_modes..(n + 1) * self.n_modes]
    }

    /// Dense Gram matrix G (the coefficient matrix without the factor i).
    /// Unknown order: a_0..a_{M−1}, then ḟ_{n,k} at M + n·K + k.
    pub fn dense_matrix(&self) -> DMatrix<Complex64> {
        let (m, k) = (self.m, self.n_modes);
        let dim = self.dim();
        let mut g = DMatrix::zeros(dim, dim);
        for r in 0..m {
            let fr = self.f_row(r);
            for n in 0..m {
                let s = self.gram_s[r * m + n];
                let fn_ = self.f_row(n);
                g[(r, n)] = s;
                for q in 0..k {
                    g[(r, m + n * k + q)] = s * self.amp[n] * fr[q].conj();
                    g[(m + r * k + q, n)] = s * self.amp[r].conj() * fn_[q];
                }
                let at = self.amp[r].conj() * self.amp[n] * s;
                for q in 0..k {
                    for kk in 0..k {
                        let delta = if q == kk { 1.0 } else { 0.0 };
                        g[(m + r * k + q, m + n * k + kk)] = at * (fr[kk].conj() * fn_[q] + delta);
                    }
                }
            }
        }
        g
    }

    /// Right-hand side I in the dense unknown order.
    pub fn rhs_vector(&self) -> DVector<Complex64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.rhs_a);
        v.extend_from_slice(&self.rhs_f);
        DVector::from_vec(v)
    }

    fn mean_diag(&self) -> f64 {
        let (m, k) = (self.m, self.n_modes);
        let mut acc = m as f64;
        for n in 0..m {
            let fsq: f64 = self.f_row(n).iter().map(|z| z.norm_sqr()).sum();
            acc += self.amp[n].norm_sqr() * (k as f64 + fsq);
        }
        acc / self.dim() as f64
    }

    /// (G y) for y = (a, ḟ) without forming G.
    pub fn gram_apply(
        &self,
        a: &[Complex64],
        fdot: &[Complex64],
    ) -> (Vec<Complex64>, Vec<Complex64>) {
        let (m, k) = (self.m, self.n_modes);
        let mut v = vec![ZERO; m * m];
        for r in 0..m {
            let fr = self.f_row(r);
            for n in 0..m {
                let fd = &fdot[n * k..(n + 1) * k];
                v[r * m + n] = fr.iter().zip(fd).map(|(x, y)| x.conj() * y).sum();
            }
        }
        let mut out_a = vec![ZERO; m];
        let mut out_f = vec![ZERO; m * k];
        for r in 0..m {
            let ar = self.amp[r].conj();
            let row = &mut out_f[r * k..(r + 1) * k];
            for n in 0..m {
                let s = self.gram_s[r * m + n];
                let coef = a[n] + self.amp[n] * v[r * m + n];
                out_a[r] += s * coef;
                if ar == ZERO {
                    continue;
                }
                let c1 = ar * s * coef;
                let c2 = ar * s * self.amp[n];
                let fn_ = self.f_row(n);
                let fd = &fdot[n * k..(n + 1) * k];
                for q in 0..k {
                    row[q] += c1 * fn_[q] + c2 * fd[q];
                }
            }
        }
        (out_a, out_f)
    }
}

/// Solution of one branch system.
#[derive(Debug, Clone)]
pub struct BranchSolution {
    /// a_{nj}
    pub a: Vec<Complex64>,
    /// ḟ_{njk}, M rows of length n_modes.
    pub fdot: Vec<Complex64>,
    /// u_nn = Σ_k f*_{nk} ḟ_{nk}
    pub f_dot_f: Vec<Complex64>,
    /// Absolute Tikhonov parameter used (0 for a plain solve).
    pub epsilon: f64,
    pub residual: f64,
    /// y†Gy, the branch contribution to ⟨Ḋ|Ḋ⟩.
    pub tangent_norm_sq: f64,
    /// y†b with b = −iI, the branch contribution to ⟨Ḋ|(−iH̃)|D⟩.
    pub y_dot_b: Complex64,
}

/// Orthonormal basis of span{f_n} by twice-iterated Gram-Schmidt. Directions
/// with residual below `tol` are dropped.
fn orthonormal_span(sys: &EomSystem, tol: f64) -> Vec<Vec<Complex64>> {
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(sys.m);
    for n in 0..sys.m {
        let mut v = sys.f_row(n).to_vec();
        for _ in 0..2 {
            for q in &basis {
                let c: Complex64 = q.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
        let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm > tol {
            v.iter_mut().for_each(|z| *z /= nrm);
            basis.push(v);
        }
    }
    basis
}

/// Factorization of G + εI for one branch.
///
/// With Q an orthonormal basis of span{f_n}, every ḟ_n splits into Σ_i C_ni Q_i
/// plus a part orthogonal to all f. G does not mix the two: on the orthogonal
/// part it acts as Ã ⊗ 1 with Ã_mn = A*_m A_n S_mn, while (a, C) obey a dense
/// (M + M·r) system. Both are solved by Cholesky.
struct TikhonovSolver {
    m: usize,
    k: usize,
    q: Vec<Vec<Complex64>>,
    amp_block: nalgebra::Cholesky<Complex64, nalgebra::Dyn>,
    span_block: nalgebra::Cholesky<Complex64, nalgebra::Dyn>,
}

fn dot(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(u, v)| u.conj() * v).sum()
}

impl TikhonovSolver {
    fn new(sys: &EomSystem, eps: f64) -> Option<Self> {
        let (m, k) = (sys.m, sys.n_modes);
        let s = &sys.gram_s;
        let amp = sys.amp;
        let f_scale = (0..m)
            .map(|n| {
                sys.f_row(n)
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(1.0, f64::max);
        let q = orthonormal_span(sys, 1e-12 * f_scale);
        let r = q.len();
        // f_n = Σ_i φ_ni Q_i
        let phi: Vec<Complex64> = (0..m)
            .flat_map(|n| q.iter().map(move |qi| (qi, n)))
            .map(|(qi, n)| dot(qi, sys.f_row(n)))
            .collect();

        let at = DMatrix::from_fn(m, m, |i, n| {
            amp[i].conj() * amp[n] * s[i * m + n] + if i == n { eps } else { 0.0 }
        });

        // unknowns a_n at n, C_ni at m + n·r + i
        let dim = m + m * r;
        let ic = |n: usize, i: usize| m + n * r + i;
        let mut h = DMatrix::<Complex64>::zeros(dim, dim);
        for row in 0..m {
            h[(row, row)] += eps;
            for n in 0..m {
                let smn = s[row * m + n];
                h[(row, n)] += smn;
                for i in 0..r {
                    h[(row, ic(n, i))] += smn * amp[n] * phi[row * r + i].conj();
                }
            }
        }
        for row in 0..m {
            let ar = amp[row].conj();
            for i in 0..r {
                let ri = ic(row, i);
                h[(ri, ri)] += eps;
                for n in 0..m {
                    let w = ar * s[row * m + n];
                    h[(ri, n)] += w * phi[n * r + i];
                    let wa = w * amp[n];
                    for i2 in 0..r {
                        let delta = if i == i2 { 1.0 } else { 0.0 };
                        h[(ri, ic(n, i2))] +=
                            wa * (phi[n * r + i] * phi[row * r + i2].conj() + delta);
                    }
                }
            }
        }
        Some(TikhonovSolver {
            m,
            k,
            q,
            amp_block: at.cholesky()?,
            span_block: h.cholesky()?,
        })
    }

    fn solve(
        &self,
        b_a: &[Complex64],
        b_f: &[Complex64],
    ) -> Option<(Vec<Complex64>, Vec<Complex64>)> {
        let (m, k, r) = (self.m, self.k, self.q.len());
        // b_m = Σ_i β_mi Q_i + b⊥_m
        let mut b_perp = b_f.to_vec();
        let mut rhs = DVector::<Complex64>::zeros(m + m * r);
        for (i, z) in b_a.iter().enumerate() {
            rhs[i] = *z;
        }
        for mm in 0..m {
            let row = &mut b_perp[mm * k..(mm + 1) * k];
            for (i, qi) in self.q.iter().enumerate() {
                let c = dot(qi, row);
                rhs[m + mm * r + i] = c;
                for (x, y) in row.iter_mut().zip(qi) {
                    *x -= c * y;
                }
            }
        }

        let mut fdot = vec![ZERO; m * k];
        if b_perp.iter().any(|z| *z != ZERO) {
            let x = self
                .amp_block
                .solve(&DMatrix::from_fn(m, k, |i, qq| b_perp[i * k + qq]));
            for i in 0..m {
                for qq in 0..k {
                    fdot[i * k + qq] = x[(i, qq)];
                }
            }
        }
        let z = self.span_block.solve(&rhs);
        let a: Vec<Complex64> = z.iter().take(m).copied().collect();
        for n in 0..m {
            let out = &mut fdot[n * k..(n + 1) * k];
            for (i, qi) in self.q.iter().enumerate() {
                let c = z[m + n * r + i];
                for (x, y) in out.iter_mut().zip(qi) {
                    *x += c * y;
                }
            }
        }
        let finite = |v: &[Complex64]| v.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        (finite(&a) && finite(&fdot)).then_some((a, fdot))
    }
}

/// Relative residual of G y = b and the residual vector itself.
fn residual(
    sys: &EomSystem,
    a: &[Complex64],
    fdot: &[Complex64],
    b_a: &[Complex64],
    b_f: &[Complex64],
) -> (f64, Vec<Complex64>, Vec<Complex64>) {
    let (ga, gf) = sys.gram_apply(a, fdot);
    let ra: Vec<Complex64> = b_a.iter().zip(&ga).map(|(b, g)| b - g).collect();
    let rf: Vec<Complex64> = b_f.iter().zip(&gf).map(|(b, g)| b - g).collect();
    let res_sq: f64 = ra.iter().chain(&rf).map(|z| z.norm_sqr()).sum();
    let b_sq: f64 = b_a.iter().chain(b_f).map(|z| z.norm_sqr()).sum();
    let rel = if b_sq > 0.0 {
        (res_sq / b_sq).sqrt()
    } else {
        res_sq.sqrt()
    };
    (rel, ra, rf)
}

/// Conjugate-gradient iterations allowed per regularization level.
const MAX_REFINEMENTS: usize = 50;

fn vdot(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    dot(x, y)
}

/// Solves (G + εI) y = b, then, while the residual of G y = b exceeds
/// [`RESIDUAL_TOL`], continues with conjugate gradients on G y = b
/// preconditioned by the same factorization. The iterates move from the
/// Tikhonov solution toward the pseudo-inverse one.
fn solve_with_epsilon(sys: &EomSystem, eps: f64, refinements: usize) -> Option<BranchSolution> {
    let (m, k) = (sys.m, sys.n_modes);
    let b_a: Vec<Complex64> = sys.rhs_a.iter().map(|z| -I * z).collect();
    let b_f: Vec<Complex64> = sys.rhs_f.iter().map(|z| -I * z).collect();
    let solver = TikhonovSolver::new(sys, eps)?;
    let (mut a, mut fdot) = solver.solve(&b_a, &b_f)?;
    let (mut res, mut ra, mut rf) = residual(sys, &a, &fdot, &b_a, &b_f);
    if res > RESIDUAL_TOL && refinements > 0 {
        let b_norm = b_a
            .iter()
            .chain(&b_f)
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt();
        let (mut za, mut zf) = solver.solve(&ra, &rf)?;
        let (mut pa, mut pf) = (za.clone(), zf.clone());
        let mut rz = (vdot(&ra, &za) + vdot(&rf, &zf)).re;
        for _ in 0..refinements {
            let (ga, gf) = sys.gram_apply(&pa, &pf);
            let pgp = (vdot(&pa, &ga) + vdot(&pf, &gf)).re;
            if !(pgp > 0.0 && rz > 0.0) {
                break;
            }
            let step = rz / pgp;
            a.iter_mut().zip(&pa).for_each(|(x, d)| *x += step * d);
            fdot.iter_mut().zip(&pf).for_each(|(x, d)| *x += step * d);
            ra.iter_mut().zip(&ga).for_each(|(x, d)| *x -= step * d);
            rf.iter_mut().zip(&gf).for_each(|(x, d)| *x -= step * d);
            let r_norm = ra
                .iter()
                .chain(&rf)
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt();
            if r_norm <= RESIDUAL_TOL * b_norm {
                break;
            }
            (za, zf) = solver.solve(&ra, &rf)?;
            let rz_new = (vdot(&ra, &za) + vdot(&rf, &zf)).re;
            let beta = rz_new / rz;
            rz = rz_new;
            pa.iter_mut().zip(&za).for_each(|(x, z)| *x = z + beta * *x);
            pf.iter_mut().zip(&zf).for_each(|(x, z)| *x = z + beta * *x);
        }
        // recompute rather than trust the recurrence
        (res, ra, rf) = residual(sys, &a, &fdot, &b_a, &b_f);
    }

    // G y = b − r
    let mut tangent = ZERO;
    let mut yb = ZERO;
    for i in 0..m {
        tangent += a[i].conj() * (b_a[i] - ra[i]);
        yb += a[i].conj() * b_a[i];
    }
    for i in 0..m * k {
        tangent += fdot[i].conj() * (b_f[i] - rf[i]);
        yb += fdot[i].conj() * b_f[i];
    }
    let f_dot_f = (0..m)
        .map(|n| dot(sys.f_row(n), &fdot[n * k..(n + 1) * k]))
        .collect();
    Some(BranchSolution {
        a,
        fdot,
        f_dot_f,
        epsilon: eps,
        residual: res,
        tangent_norm_sq: tangent.re,
        y_dot_b: yb,
    })
}

fn condition_number(m: usize, entries: impl Fn(usize, usize) -> Complex64) -> f64 {
    let mat = DMatrix::from_fn(m, m, entries);
    let eig = nalgebra::SymmetricEigen::new(mat).eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves one branch: a plain solve when the Gram blocks are well
/// conditioned, otherwise Tikhonov-regularized (G + εI)y = b with
/// ε = `epsilon_reg`·mean diag(G) plus preconditioned CG, raising ε ×10 up to
/// `epsilon_max` until the relative residual of G y = b is below
/// [`RESIDUAL_TOL`].
pub fn solve_branch(sys: &EomSystem, cfg: &IntegratorConfig) -> Result<BranchSolution> {
    let m = sys.m;
    let k = sys.n_modes;
    if sys.rhs_a.iter().chain(&sys.rhs_f).all(|z| *z == ZERO) {
        return Ok(BranchSolution {
            a: vec![ZERO; m],
            fdot: vec![ZERO; m * k],
            f_dot_f: vec![ZERO; m],
            epsilon: 0.0,
            residual: 0.0,
            tangent_norm_sq: 0.0,
            y_dot_b: ZERO,
        });
    }

    let limit = if cfg.epsilon_reg > 0.0 {
        1.0 / cfg.epsilon_reg
    } else {
        f64::INFINITY
    };
    let well_conditioned = condition_number(m, |r, n| sys.gram_s[r * m + n]) <= limit
        && condition_number(m, |r, n| {
            sys.amp[r].conj() * sys.amp[n] * sys.gram_s[r * m + n]
        }) <= limit;
    if well_conditioned {
        if let Some(sol) = solve_with_epsilon(sys, 0.0, 0) {
            if sol.residual <= RESIDUAL_TOL {
                return Ok(sol);
            }
        }
    }

    let scale = sys.mean_diag();
    let mut rel = cfg.epsilon_reg.max(f64::MIN_POSITIVE);
    let mut best: Option<BranchSolution> = None;
    loop {
        if let Some(sol) = solve_with_epsilon(sys, rel * scale, MAX_REFINEMENTS) {
            if sol.residual <= RESIDUAL_TOL {
                return Ok(sol);
            }
            if best.as_ref().is_none_or(|b| sol.residual < b.residual) {
                best = Some(sol);
            }
        }
        if rel >= cfg.epsilon_max {
            break;
        }
        rel = (rel * 10.0).min(cfg.epsilon_max);
    }
    let reason = match best {
        Some(b) => format!(
            "branch {} solve residual {:e} exceeds {RESIDUAL_TOL:e} at epsilon {:e}",
            sys.branch, b.residual, b.epsilon
        ),
        None => format!("branch {} Gram system could not be factorized", sys.branch),
    };
    Err(Error::IntegrationFailure {
        t: f64::NAN,
        reason,
    })
}

/// Builds the four branch systems at the coupling's time.
pub fn assemble_with<'a>(
    state: &'a MultiD1State,
    coupling: &Coupling,
    sys: &SystemMatrices,
    ov: &Overlaps,
) -> [EomSystem<'a>; N_QUBIT_STATES] {
    std::array::from_fn(|j| assemble_branch(state, coupling, sys, ov, j))
}

fn assemble_branch<'a>(
    state: &'a MultiD1State,
    coupling: &Coupling,
    sys: &SystemMatrices,
    ov: &Overlaps,
    j: usize,
) -> EomSystem<'a> {
    let m = state.m;
    let k = state.n_modes;
    let g = &coupling.g[j];
    let amp = &state.a[j * m..(j + 1) * m];
    let f = &state.f[j * m * k..(j + 1) * m * k];
    let s = ov.block(j, j).to_vec();

    // p_n = Σ_k g*_k f_nk ;  s_mn = p_n + p*_m
    let p: Vec<Complex64> = (0..m)
        .map(|n| {
            g.iter()
                .zip(state.f(n, j))
                .map(|(gk, fk)| gk.conj() * fk)
                .sum()
        })
        .collect();

    let partners: Vec<(usize, Complex64)> = (0..N_QUBIT_STATES)
        .filter(|&l| l != j && sys.h_s[(j, l)] != ZERO)
        .map(|l| (l, sys.h_s[(j, l)]))
        .collect();
    let diag_h = sys.h_s[(j, j)];

    let mut rhs_a = vec![ZERO; m];
    let mut rhs_f = vec![ZERO; m * k];
    for r in 0..m {
        let want_f = amp[r] != ZERO;
        let mut row = vec![ZERO; if want_f { k } else { 0 }];
        let mut acc = ZERO;
        for &(l, hjl) in &partners {
            let o = ov.block(j, l);
            for n in 0..m {
                let w = hjl * state.amp(n, l) * o[r * m + n];
                if w == ZERO {
                    continue;
                }
                acc += w;
                if want_f {
                    for (x, y) in row.iter_mut().zip(state.f(n, l)) {
                        *x += w * y;
                    }
                }
            }
        }
        for n in 0..m {
            let w = amp[n] * s[r * m + n];
            if w == ZERO {
                continue;
            }
            let smn = p[n] + p[r].conj();
            acc += w * (smn + diag_h);
            if want_f {
                let fnn = state.f(n, j);
                let c = w * (smn + diag_h);
                for q in 0..k {
                    row[q] += w * g[q] + c * fnn[q];
                }
            }
        }
        rhs_a[r] = acc;
        if want_f {
            let ar = amp[r].conj();
            for (dst, x) in rhs_f[r * k..(r + 1) * k].iter_mut().zip(row) {
                *dst = ar * x;
            }
        }
    }

    EomSystem {
        branch: j,
        m,
        n_modes: k,
        gram_s: s,
        amp,
        f,
        rhs_a,
        rhs_f,
    }
}

/// Builds the four branch systems for `state` at time `t`.
pub fn assemble_eom<'a>(
    state: &'a MultiD1State,
    bath: &DiscretizedBath,
    params: &ModelParams,
    sys: &SystemMatrices,
    t: f64,
) -> [EomSystem<'a>; N_QUBIT_STATES] {
    let coupling = Coupling::new(bath, params, t);
    let ov = state.overlaps();
    assemble_with(state, &coupling, sys, &ov)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveStats {
    pub max_residual: f64,
    pub max_epsilon: f64,
    pub regularized_branches: usize,
}

/// Time derivatives of all variational parameters, in state layout.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub a_dot: Vec<Complex64>,
    pub f_dot: Vec<Complex64>,
    /// ⟨Ḋ|Ḋ⟩
    pub tangent_norm_sq: f64,
    /// Re⟨Ḋ|(−iH̃)|D⟩
    pub projected_overlap: f64,
    pub stats: SolveStats,
}

/// Solves the four branch systems and recovers Ȧ_{nj} = a_{nj} + A_{nj} Re Σ_k f*ḟ.
pub fn solve_eom(
    blocks: &[EomSystem; N_QUBIT_STATES],
    cfg: &IntegratorConfig,
) -> Result<Derivatives> {
    let sols: Vec<Result<BranchSolution>> =
        blocks.par_iter().map(|b| solve_branch(b, cfg)).collect();
    let m = blocks[0].m;
    let k = blocks[0].n_modes;
    let mut a_dot = vec![ZERO; N_QUBIT_STATES * m];
    let mut f_dot = vec![ZERO; N_QUBIT_STATES * m * k];
    let mut stats = SolveStats::default();
    let mut tangent = 0.0;
    let mut proj = 0.0;
    for (j, sol) in sols.into_iter().enumerate() {
        let sol = sol?;
        for n in 0..m {
            a_dot[j * m + n] = sol.a[n] + blocks[j].amp[n] * sol.f_dot_f[n].re;
        }
        f_dot[j * m * k..(j + 1) * m * k].copy_from_slice(&sol.fdot);
        stats.max_residual = stats.max_residual.max(sol.residual);
        stats.max_epsilon = stats.max_epsilon.max(sol.epsilon);
        if sol.epsilon > 0.0 {
            stats.regularized_branches += 1;
        }
        tangent += sol.tangent_norm_sq;
        proj += sol.y_dot_b.re;
    }
    Ok(Derivatives {
        a_dot,
        f_dot,
        tangent_norm_sq: tangent,
        projected_overlap: proj,
        stats,
    })
}

/// Assembles and solves the equations of motion at the state's own time.
pub fn derivatives(
    state: &MultiD1State,
    bath: &DiscretizedBath,
    params: &ModelParams,
    sys: &SystemMatrices,
    cfg: &IntegratorConfig,
) -> Result<Derivatives> {
    let coupling = Coupling::new(bath, params, state.t);
    let ov = state.overlaps();
    derivatives_with(state, &coupling, sys, &ov, cfg)
}

pub(crate) fn derivatives_with(
    state: &MultiD1State,
    coupling: &Coupling,
    sys: &SystemMatrices,
    ov: &Overlaps,
    cfg: &IntegratorConfig,
) -> Result<Derivatives> {
    let blocks = assemble_with(state, coupling, sys, ov);
    solve_eom(&blocks, cfg).map_err(|e| match e {
        Error::IntegrationFailure { reason, .. } => {
            Error::IntegrationFailure { t: state.t, reason }
        }
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::discretize;
    use crate::model::{system_matrix_elements, InitialState};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_state(m: usize, n_modes: usize, seed: u64, scale: f64) -> MultiD1State {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = MultiD1State::zeros(m, n_modes);
        for z in s.a.iter_mut() {
            *z = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        for z in s.f.iter_mut() {
            *z = c(
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
            );
        }
        let nrm = s.norm().sqrt();
        s.a.iter_mut().for_each(|z| *z /= nrm);
        s
    }

    fn setup(alpha: f64, n_b: usize) -> (ModelParams, DiscretizedBath, SystemMatrices) {
        let p = ModelParams::with_separation(alpha, 1.3, InitialState::Psi0).unwrap();
        let b = discretize(&p, n_b).unwrap();
        (p, b, system_matrix_elements(1.0))
    }

    #[test]
    fn dense_matrix_is_hermitian_and_matches_apply() {
        let (p, bath, sys) = setup(0.1, 3);
        let st = random_state(2, bath.n_modes(), 3, 0.4);
        let blocks = assemble_eom(&st, &bath, &p, &sys, 0.7);
        for b in &blocks {
            let g = b.dense_matrix();
            assert!((&g - g.adjoint()).norm() < 1e-13 * g.norm());
            let y = DVector::from_fn(b.dim(), |i, _| c((i as f64).sin(), (i as f64 * 0.3).cos()));
            let dense = &g * &y;
            let (ga, gf) = b.gram_apply(&y.as_slice()[..2], &y.as_slice()[2..]);
            for i in 0..2 {
                assert!((dense[i] - ga[i]).norm() < 1e-12);
            }
            for i in 0..gf.len() {
                assert!((dense[2 + i] - gf[i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn structured_solve_matches_dense_regularized_solve() {
        let (p, bath, sys) = setup(0.1, 3);
        for (m, seed) in [(1, 1), (2, 2), (3, 5)] {
            let st = random_state(m, bath.n_modes(), seed, 0.5);
            let blocks = assemble_eom(&st, &bath, &p, &sys, 1.1);
            for b in &blocks {
                for eps in [0.0, 1e-3] {
                    let sol = solve_with_epsilon(b, eps, 0).unwrap();
                    let g = b.dense_matrix() + DMatrix::identity(b.dim(), b.dim()) * c(eps, 0.0);
                    let rhs = b.rhs_vector() * (-I);
                    let y = g.lu().solve(&rhs).unwrap();
                    let scale = y.norm();
                    for i in 0..m {
                        assert!((y[i] - sol.a[i]).norm() < 1e-10 * scale, "m={m} eps={eps}");
                    }
                    for i in 0..sol.fdot.len() {
                        assert!((y[m + i] - sol.fdot[i]).norm() < 1e-10 * scale);
                    }
                }
            }
        }
    }

    #[test]
    fn well_conditioned_single_branch_is_plain_solve() {
        let (p, bath, sys) = setup(0.05, 4);
        let st = random_state(1, bath.n_modes(), 9, 0.3);
        let blocks = assemble_eom(&st, &bath, &p, &sys, 0.2);
        let cfg = IntegratorConfig::default();
        for b in &blocks {
            let sol = solve_branch(b, &cfg).unwrap();
            assert_eq!(sol.epsilon, 0.0);
            let y = b
                .dense_matrix()
                .lu()
                .solve(&(b.rhs_vector() * (-I)))
                .unwrap();
            assert!((y[0] - sol.a[0]).norm() < 1e-12 * y.norm());
            for i in 0..sol.fdot.len() {
                assert!((y[1 + i] - sol.fdot[i]).norm() < 1e-12 * y.norm());
            }
        }
    }

    #[test]
    fn duplicated_coherent_states_regularize_to_pseudo_inverse() {
        let (p, bath, sys) = setup(0.1, 3);
        let mut st = random_state(2, bath.n_modes(), 4, 0.4);
        let nk = bath.n_modes();
        for j in 0..4 {
            let f0 = st.f(0, j).to_vec();
            st.f_mut(1, j).copy_from_slice(&f0);
            st.a[j * 2 + 1] = st.a[j * 2];
        }
        let blocks = assemble_eom(&st, &bath, &p, &sys, 0.5);
        let cfg = IntegratorConfig::default();
        for b in &blocks {
            let sol = solve_branch(b, &cfg).unwrap();
            assert!(sol.epsilon > 0.0);
            assert!(sol.residual <= RESIDUAL_TOL);
            // Oracle: minimum-norm least-squares solution through the SVD.
            let g = b.dense_matrix();
            let rhs = b.rhs_vector() * (-I);
            let svd = g.clone().svd(true, true);
            let y = svd.solve(&rhs, 1e-9 * svd.singular_values[0]).unwrap();
            let mut ours = sol.a.clone();
            ours.extend_from_slice(&sol.fdot);
            let ours = DVector::from_vec(ours);
            // Same tangent vector |Ḋ⟩: compare G-weighted difference
            let diff = &ours - &y;
            let gd = (diff.adjoint() * &g * &diff)[(0, 0)].re;
            assert!(gd.abs() < 1e-12 * (y.adjoint() * &g * &y)[(0, 0)].re.max(1.0));
            assert!(ours.iter().all(|z| z.re.is_finite()));
            assert!((ours.norm() - y.norm()).abs() < 1e-6 * y.norm());
        }
        let _ = nk;
    }

    #[test]
    fn zero_rhs_gives_zero_derivative() {
        let (p, bath, sys) = setup(0.0, 3);
        let mut st = MultiD1State::zeros(2, bath.n_modes());
        // no amplitudes: every right-hand side vanishes
        st.t = 0.3;
        let d = derivatives(&st, &bath, &p, &sys, &IntegratorConfig::default()).unwrap();
        assert!(d.a_dot.iter().chain(&d.f_dot).all(|z| *z == ZERO));
    }

    #[test]
    fn vacuum_single_coherent_state_reduces_to_schrodinger() {
        let (p, bath, sys) = setup(0.05, 5);
        let st = MultiD1State::initial(InitialState::Psi0, bath.n_modes(), 1, 0.0, 0).unwrap();
        let d = derivatives(&st, &bath, &p, &sys, &IntegratorConfig::default()).unwrap();
        for j in 0..4 {
            let mut expect = ZERO;
            for l in 0..4 {
                expect += sys.h_s[(j, l)] * st.amp(0, l);
            }
            assert!((d.a_dot[j] - (-I * expect)).norm() < 1e-14);
        }
        // the drive e^{ikx} seeds ḟ on occupied branches
        let coupling = Coupling::new(&bath, &p, 0.0);
        for q in 0..bath.n_modes() {
            assert!((d.f_dot[q] - (-I * coupling.g[0][q])).norm() < 1e-13);
        }
    }

    #[test]
    fn decoupled_limit_keeps_field_empty() {
        // seeded empty branches (Ψ± with M > 1) are excluded: their jitter
        // differs from that of the occupied branches H_S maps them onto
        let (p, bath, sys) = setup(0.0, 4);
        for (state, m) in [
            (InitialState::Psi0, 2),
            (InitialState::PsiPlus, 1),
            (InitialState::PsiMinus, 1),
        ] {
            let st = MultiD1State::initial(state, bath.n_modes(), m, 1e-3, 1).unwrap();
            let d = derivatives(&st, &bath, &p, &sys, &IntegratorConfig::default()).unwrap();
            assert!(d.f_dot.iter().all(|z| z.norm() < 1e-12), "{state:?} M={m}");
        }
    }
}
