//! Time stepping (adaptive Dormand-Prince or fixed RK4), observable
//! recording and checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bath::DiscretizedBath;
use crate::error::{Error, Result};
use crate::model::{system_matrix_elements, ModelParams, SystemMatrices};
use crate::state::{MultiD1State, ObservableRecord, Overlaps};

use super::deviation::{
    deviation_from_parts, energy_with, h_tilde_squared_with, NEGATIVE_DEVIATION_TOL,
};
use super::eom::{derivatives_with, Coupling, Derivatives, SolveStats};
use super::IntegratorConfig;

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<ObservableRecord>,
    pub final_state: MultiD1State,
    pub warnings: Vec<String>,
    pub max_sigma2: f64,
    /// Worst solver statistics seen over all stages.
    pub stats: SolveStats,
    pub steps: usize,
    pub rejected_steps: usize,
    /// Adaptive steps accepted at `min_step` with the error above tolerance.
    pub forced_steps: usize,
}

impl Trajectory {
    /// Record closest to time `t`.
    pub fn record_at(&self, t: f64) -> Option<&ObservableRecord> {
        self.records
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }
}

/// Resumable snapshot of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub n_b: usize,
    pub state: MultiD1State,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cp: Checkpoint = serde_json::from_str(&text)?;
        if cp.state.n_modes != 2 * cp.n_b
            || cp.state.a.len() != 4 * cp.state.m
            || cp.state.f.len() != 4 * cp.state.m * cp.state.n_modes
        {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                reason: "checkpoint arrays do not match its dimensions".into(),
            });
        }
        Ok(cp)
    }
}

fn axpy(base: &MultiD1State, h: f64, d: &Derivatives, t: f64) -> MultiD1State {
    combine(base, t, &[(h, d)])
}

/// base + Σ_i h_i k_i at time t.
fn combine(base: &MultiD1State, t: f64, terms: &[(f64, &Derivatives)]) -> MultiD1State {
    let mut out = base.clone();
    out.t = t;
    for &(h, d) in terms {
        if h == 0.0 {
            continue;
        }
        for (x, dx) in out.a.iter_mut().zip(&d.a_dot) {
            *x += dx * h;
        }
        for (x, dx) in out.f.iter_mut().zip(&d.f_dot) {
            *x += dx * h;
        }
    }
    out
}

fn merge(stats: &mut SolveStats, s: &SolveStats) {
    stats.max_residual = stats.max_residual.max(s.max_residual);
    stats.max_epsilon = stats.max_epsilon.max(s.max_epsilon);
    stats.regularized_branches = stats.regularized_branches.max(s.regularized_branches);
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order minus embedded fourth-order weights
const DP_E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// ‖δ|D⟩‖ estimate: amplitude errors plus displacement errors weighted by |A|.
fn error_norm(state: &MultiD1State, h: f64, ks: &[Derivatives; 7]) -> f64 {
    let nk = state.n_modes;
    let mut acc = 0.0;
    for (i, a) in state.a.iter().enumerate() {
        let mut e = num_complex::Complex64::new(0.0, 0.0);
        let mut fe = 0.0;
        for (w, k) in DP_E.iter().zip(ks) {
            e += k.a_dot[i] * *w;
        }
        let weight = a.norm_sqr();
        if weight > 0.0 {
            for q in i * nk..(i + 1) * nk {
                let mut d = num_complex::Complex64::new(0.0, 0.0);
                for (w, k) in DP_E.iter().zip(ks) {
                    d += k.f_dot[q] * *w;
                }
                fe += d.norm_sqr();
            }
        }
        acc += e.norm_sqr() + weight * fe;
    }
    h * acc.sqrt()
}

struct Stepper<'a> {
    bath: &'a DiscretizedBath,
    params: &'a ModelParams,
    sys: SystemMatrices,
    cfg: &'a IntegratorConfig,
    stats: SolveStats,
    /// Step proposal carried between adaptive intervals.
    h: f64,
    steps: usize,
    rejected: usize,
    forced: usize,
}

impl Stepper<'_> {
    fn eval(&mut self, st: &MultiD1State) -> Result<Derivatives> {
        let coupling = Coupling::new(self.bath, self.params, st.t);
        self.eval_with(st, &coupling)
    }

    fn eval_with(&mut self, st: &MultiD1State, coupling: &Coupling) -> Result<Derivatives> {
        let ov = Overlaps::new(st);
        let d = derivatives_with(st, coupling, &self.sys, &ov, self.cfg)?;
        merge(&mut self.stats, &d.stats);
        Ok(d)
    }

    fn rk4_step(
        &mut self,
        state: &MultiD1State,
        k1: &Derivatives,
        dt: f64,
    ) -> Result<MultiD1State> {
        let t = state.t;
        let k2 = self.eval(&axpy(state, 0.5 * dt, k1, t + 0.5 * dt))?;
        let k3 = self.eval(&axpy(state, 0.5 * dt, &k2, t + 0.5 * dt))?;
        let k4 = self.eval(&axpy(state, dt, &k3, t + dt))?;
        let w = dt / 6.0;
        self.steps += 1;
        Ok(combine(
            state,
            t + dt,
            &[(w, k1), (2.0 * w, &k2), (2.0 * w, &k3), (w, &k4)],
        ))
    }

    /// Advances `state` to `t_end` in steps no longer than `cfg.dt`.
    fn advance(
        &mut self,
        state: MultiD1State,
        k_start: Derivatives,
        t_end: f64,
    ) -> Result<MultiD1State> {
        if self.cfg.adaptive {
            self.advance_adaptive(state, k_start, t_end)
        } else {
            let n = ((t_end - state.t) / self.cfg.dt - 1e-9).ceil().max(1.0) as usize;
            let dt = (t_end - state.t) / n as f64;
            let mut st = state;
            let mut k1 = k_start;
            for i in 0..n {
                st = self.rk4_step(&st, &k1, dt)?;
                if i + 1 < n {
                    k1 = self.eval(&st)?;
                }
            }
            st.t = t_end;
            Ok(st)
        }
    }

    fn advance_adaptive(
        &mut self,
        state: MultiD1State,
        k_start: Derivatives,
        t_end: f64,
    ) -> Result<MultiD1State> {
        let tol = self.cfg.tolerance;
        let h_max = self.cfg.dt;
        let h_min = self.cfg.min_step.min(h_max);
        let mut st = state;
        let mut k1 = k_start;
        while st.t < t_end {
            let remaining = t_end - st.t;
            let last = self.h >= remaining * (1.0 - 1e-12);
            let h = if last { remaining } else { self.h };
            let t = st.t;
            let mut ks: Vec<Derivatives> = Vec::with_capacity(7);
            ks.push(k1.clone());
            for stage in 1..7 {
                let terms: Vec<(f64, &Derivatives)> = DP_A[stage][..stage]
                    .iter()
                    .zip(&ks)
                    .map(|(a, k)| (a * h, k))
                    .collect();
                let t_stage = if stage == 6 && last {
                    t_end
                } else {
                    t + DP_C[stage] * h
                };
                let y = combine(&st, t_stage, &terms);
                if stage == 6 {
                    // FSAL: y is the fifth-order solution
                    let k7 = self.eval(&y)?;
                    ks.push(k7);
                    let ks_arr: &[Derivatives; 7] = ks.as_slice().try_into().unwrap();
                    let err = error_norm(&st, h, ks_arr);
                    let factor = if err > 0.0 {
                        (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0)
                    } else {
                        5.0
                    };
                    // at the floor the step is taken regardless and counted
                    let floored = h <= h_min * (1.0 + 1e-12);
                    if (err <= tol || floored) && y.is_finite() {
                        self.steps += 1;
                        if err > tol {
                            self.forced += 1;
                        }
                        st = y;
                        k1 = ks.pop().unwrap();
                        if !last || factor < 1.0 {
                            self.h = (h * factor).clamp(h_min, h_max);
                        }
                    } else if floored {
                        return Err(Error::IntegrationFailure {
                            t,
                            reason: "non-finite state at the minimum step".into(),
                        });
                    } else {
                        self.rejected += 1;
                        self.h = (h * factor.min(0.9)).max(h_min);
                    }
                    break;
                }
                let k = self.eval(&y)?;
                ks.push(k);
            }
        }
        st.t = t_end;
        Ok(st)
    }

    fn record(
        &self,
        st: &MultiD1State,
        k1: &Derivatives,
        warnings: &mut Vec<String>,
    ) -> ObservableRecord {
        let coupling = Coupling::new(self.bath, self.params, st.t);
        let ov = Overlaps::full(st);
        let photons = st.photon_numbers_with(&ov);
        for w in photons.diagnostics() {
            warnings.push(format!("t = {:.4}: {w}", st.t));
        }
        let h2 = h_tilde_squared_with(st, &coupling, &self.sys, &ov);
        let (sigma2, raw) = deviation_from_parts(h2, k1, self.params.omega0);
        if raw < -NEGATIVE_DEVIATION_TOL {
            warnings.push(format!("t = {:.4}: negative deviation {raw:e}", st.t));
        }
        ObservableRecord {
            t: st.t,
            p_e: st.populations_with(&ov),
            n_k: photons.values,
            norm: st.norm_with(&ov),
            sigma2,
            energy: energy_with(st, self.bath, &coupling, &self.sys, &ov),
        }
    }
}

/// Integrates `initial` to `cfg.t_final`, recording observables every
/// `cfg.output_stride`·`cfg.dt` and at the final time.
pub fn propagate(
    initial: &MultiD1State,
    bath: &DiscretizedBath,
    params: &ModelParams,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if initial.n_modes != bath.n_modes() {
        return Err(Error::InvalidParameter(format!(
            "state has {} modes but bath has {}",
            initial.n_modes,
            bath.n_modes()
        )));
    }
    let mut stepper = Stepper {
        bath,
        params,
        sys: system_matrix_elements(params.omega0),
        cfg,
        stats: SolveStats::default(),
        h: cfg.dt,
        steps: 0,
        rejected: 0,
        forced: 0,
    };
    let n_steps = cfg.n_steps();
    let t0 = initial.t;
    let norm0 = initial.norm();
    let mut record_steps: Vec<usize> = (0..=n_steps).step_by(cfg.output_stride).collect();
    if record_steps.last() != Some(&n_steps) {
        record_steps.push(n_steps);
    }

    let mut state = initial.clone();
    let mut records = Vec::with_capacity(record_steps.len());
    let mut warnings = Vec::new();
    for (i, &step) in record_steps.iter().enumerate() {
        let k1 = stepper.eval(&state)?;
        let rec = stepper.record(&state, &k1, &mut warnings);
        let drift = (rec.norm - norm0).abs();
        records.push(rec);
        if drift > cfg.norm_abort {
            return Err(Error::IntegrationFailure {
                t: state.t,
                reason: format!("norm drifted by {drift:e}"),
            });
        }
        let Some(&next) = record_steps.get(i + 1) else {
            break;
        };
        debug_assert!(next > step);
        let t_next = if next == n_steps {
            t0 + cfg.t_final
        } else {
            t0 + next as f64 * cfg.dt
        };
        state = stepper.advance(state, k1, t_next)?;
        if !state.is_finite() {
            return Err(Error::IntegrationFailure {
                t: state.t,
                reason: "non-finite variational parameters".into(),
            });
        }
    }

    if stepper.forced > 0 {
        warnings.push(format!(
            "{} steps taken at the minimum step {:e} with error above tolerance",
            stepper.forced,
            cfg.min_step.min(cfg.dt)
        ));
    }
    let max_sigma2 = records.iter().map(|r| r.sigma2).fold(0.0, f64::max);
    Ok(Trajectory {
        records,
        final_state: state,
        warnings,
        max_sigma2,
        stats: stepper.stats,
        steps: stepper.steps,
        rejected_steps: stepper.rejected,
        forced_steps: stepper.forced,
    })
}
