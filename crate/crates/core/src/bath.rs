//! Linear discretization of the Ohmic waveguide into left- and right-moving modes.

use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const DEFAULT_N_B: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Right,
    Left,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Right => 1.0,
            Branch::Left => -1.0,
        }
    }
}

/// 2N_b modes stored flat: indices `0..n_b` are right movers (k > 0) in
/// increasing frequency, `n_b..2n_b` their left-moving mirrors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedBath {
    pub n_b: usize,
    pub omega: Vec<f64>,
    pub lambda: Vec<f64>,
    pub k: Vec<f64>,
    pub branch: Vec<Branch>,
    /// Bin edges x_0..x_{N_b} shared by both branches.
    pub edges: Vec<f64>,
}

impl DiscretizedBath {
    pub fn n_modes(&self) -> usize {
        self.omega.len()
    }

    /// Index of the mirror partner (k ↔ −k).
    pub fn mirror(&self, i: usize) -> usize {
        if i < self.n_b {
            i + self.n_b
        } else {
            i - self.n_b
        }
    }

    pub fn right_frequencies(&self) -> &[f64] {
        &self.omega[..self.n_b]
    }

    /// Squared couplings of the right branch, i.e. the per-mode spectral weight.
    pub fn right_weights(&self) -> Vec<f64> {
        self.lambda[..self.n_b].iter().map(|l| l * l).collect()
    }

    pub fn sum_lambda_sq(&self) -> f64 {
        self.lambda.iter().map(|l| l * l).sum()
    }

    /// Columns `index,branch,k,omega,lambda`, one row per mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * self.n_modes());
        out.push_str("index,branch,k,omega,lambda\n");
        for i in 0..self.n_modes() {
            let b = match self.branch[i] {
                Branch::Right => "right",
                Branch::Left => "left",
            };
            writeln!(
                out,
                "{i},{b},{:.17e},{:.17e},{:.17e}",
                self.k[i], self.omega[i], self.lambda[i]
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Splits [0, ω_c] into `n_b` equal bins. Each bin yields one right- and one
/// left-moving mode with λ² = ½∫J and ω the J-weighted bin mean.
pub fn discretize(params: &ModelParams, n_b: usize) -> Result<DiscretizedBath> {
    if n_b == 0 {
        return Err(Error::InvalidParameter("n_b must be at least 1".into()));
    }
    let wc = params.omega_c;
    let edges: Vec<f64> = (0..=n_b).map(|n| n as f64 * wc / n_b as f64).collect();

    let mut omega = Vec::with_capacity(2 * n_b);
    let mut lambda = Vec::with_capacity(2 * n_b);
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let sq = hi * hi - lo * lo;
        // ½∫ 2αω dω and ∫ ω·2αω dω / ∫ 2αω dω over the bin
        let lam_sq = 0.5 * params.alpha * sq;
        let mean = 2.0 / 3.0 * (hi * hi * hi - lo * lo * lo) / sq;
        omega.push(mean);
        lambda.push(lam_sq.sqrt());
    }
    omega.extend_from_within(..n_b);
    lambda.extend_from_within(..n_b);

    let mut k = Vec::with_capacity(2 * n_b);
    let mut branch = Vec::with_capacity(2 * n_b);
    for (i, &w) in omega.iter().enumerate() {
        let b = if i < n_b { Branch::Right } else { Branch::Left };
        k.push(b.sign() * w / params.v_g);
        branch.push(b);
    }

    Ok(DiscretizedBath {
        n_b,
        omega,
        lambda,
        k,
        branch,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitialState;
    use approx::assert_relative_eq;

    fn params(alpha: f64) -> ModelParams {
        ModelParams::with_separation(alpha, 1.0, InitialState::Psi0).unwrap()
    }

    #[test]
    fn first_bin_closed_form() {
        let b = discretize(&params(0.05), 300).unwrap();
        // ∫₀^{1/60} 2αω dω / 2 = α/2 · (1/60)²
        let x1: f64 = 5.0 / 300.0;
        assert_relative_eq!(b.lambda[0].powi(2), 0.025 * x1 * x1, max_relative = 1e-13);
        assert_relative_eq!(b.lambda[0].powi(2), 6.9444e-6, max_relative = 1e-4);
        assert_relative_eq!(b.omega[0], 2.0 / 3.0 * x1, max_relative = 1e-13);
        assert_relative_eq!(b.omega[0], 0.011111, max_relative = 1e-4);
    }

    #[test]
    fn zero_coupling_and_mirror() {
        let b = discretize(&params(0.0), 10).unwrap();
        assert!(b.lambda.iter().all(|&l| l == 0.0));
        let b = discretize(&params(0.1), 17).unwrap();
        for i in 0..b.n_modes() {
            let j = b.mirror(i);
            assert_eq!(b.omega[i], b.omega[j]);
            assert_eq!(b.lambda[i], b.lambda[j]);
            assert_eq!(b.k[i], -b.k[j]);
            assert_relative_eq!(b.omega[i], params(0.1).v_g * b.k[i].abs());
        }
    }

    #[test]
    fn rejects_empty() {
        assert!(discretize(&params(0.1), 0).is_err());
    }

    #[test]
    fn sum_rule_and_moments() {
        let p = params(0.07);
        let total = p.alpha * p.omega_c * p.omega_c;
        let first_moment = 2.0 / 3.0 * p.alpha * p.omega_c.powi(3);
        for n_b in [1, 7, 300, 600] {
            let b = discretize(&p, n_b).unwrap();
            assert_relative_eq!(b.sum_lambda_sq(), total, max_relative = 1e-12);
            let m1: f64 = b.lambda.iter().zip(&b.omega).map(|(l, w)| l * l * w).sum();
            assert_relative_eq!(m1, first_moment, max_relative = 1e-12);
            for i in 0..n_b {
                assert!(b.omega[i] > b.edges[i] && b.omega[i] < b.edges[i + 1]);
                if i > 0 {
                    assert!(b.omega[i] > b.omega[i - 1]);
                }
            }
        }
    }
}
