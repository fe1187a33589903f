//! Sampled emission spectra and their on-disk form (CSV + JSON sidecar).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Values below −this are treated as corrupt.
pub const NEGATIVE_VALUE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    /// "multiD1", "TRWA" or "SP".
    pub method: String,
    /// Evaluation time for time-dependent spectra.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplicity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_c: Option<f64>,
    /// How the per-mode coupling weight was chosen for analytic spectra.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighting: Option<String>,
}

impl SpectrumMeta {
    pub fn new(method: impl Into<String>) -> Self {
        SpectrumMeta {
            method: method.into(),
            t: None,
            multiplicity: None,
            params: None,
            params_hash: None,
            eta: None,
            v_c: None,
            weighting: None,
        }
    }

    pub fn multi_d1(t: f64, m: usize) -> Self {
        SpectrumMeta {
            t: Some(t),
            multiplicity: Some(m),
            ..Self::new("multiD1")
        }
    }

    pub fn with_params(mut self, p: &ModelParams) -> Self {
        self.params_hash = Some(params_hash(p));
        self.params = Some(*p);
        self
    }
}

/// FNV-1a over the canonical TOML form of the parameters.
pub fn params_hash(p: &ModelParams) -> String {
    let text = toml::to_string(p).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSeries {
    pub omega: Vec<f64>,
    pub value: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl SpectrumSeries {
    pub fn new(omega: Vec<f64>, value: Vec<f64>, meta: SpectrumMeta) -> Result<Self> {
        if omega.len() != value.len() {
            return Err(Error::InvalidParameter(format!(
                "grid has {} points but {} values",
                omega.len(),
                value.len()
            )));
        }
        if omega.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "spectrum grid must be strictly increasing".into(),
            ));
        }
        if let Some(v) = value
            .iter()
            .find(|v| !v.is_finite() || **v < -NEGATIVE_VALUE_TOL)
        {
            return Err(Error::InvalidParameter(format!(
                "spectrum value {v} is negative or not finite"
            )));
        }
        Ok(SpectrumSeries { omega, value, meta })
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn max_value(&self) -> f64 {
        self.value.iter().copied().fold(0.0, f64::max)
    }

    /// Copy scaled to unit maximum (unchanged if identically zero).
    pub fn normalized(&self) -> SpectrumSeries {
        let mx = self.max_value();
        let mut out = self.clone();
        if mx > 0.0 {
            out.value.iter_mut().for_each(|v| *v /= mx);
        }
        out
    }

    /// Piecewise-linear interpolation; `None` outside the grid.
    pub fn interpolate(&self, w: f64) -> Option<f64> {
        let n = self.omega.len();
        if n == 0 || w < self.omega[0] || w > self.omega[n - 1] {
            return None;
        }
        let i = self.omega.partition_point(|&x| x < w);
        if i == 0 {
            return Some(self.value[0]);
        }
        let (x0, x1) = (self.omega[i - 1], self.omega[i]);
        let (y0, y1) = (self.value[i - 1], self.value[i]);
        Some(y0 + (y1 - y0) * (w - x0) / (x1 - x0))
    }

    /// Writes `path` (CSV: omega,N) and `path.json` (metadata).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(48 * self.len());
        writeln!(out, "omega,N").unwrap();
        for (w, v) in self.omega.iter().zip(&self.value) {
            writeln!(out, "{w:.17e},{v:.17e}").unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))?;

        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let sidecar = Sidecar {
            meta: self.meta.clone(),
            points: self.len(),
            created_unix: created,
        };
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    /// Reads a CSV written by [`save`](Self::save); metadata comes from the
    /// sidecar when present.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            reason,
        };
        let mut omega = Vec::new();
        let mut value = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
                continue;
            }
            let mut cols = line.split(',');
            let mut next = || -> Result<f64> {
                cols.next()
                    .ok_or_else(|| bad(format!("line {}: missing column", lineno + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))
            };
            omega.push(next()?);
            value.push(next()?);
        }
        let side = sidecar_path(path);
        let meta = match std::fs::read_to_string(&side) {
            Ok(s) => serde_json::from_str::<Sidecar>(&s)?.meta,
            Err(_) => SpectrumMeta::new("unknown"),
        };
        SpectrumSeries::new(omega, value, meta).map_err(|e| bad(e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    #[serde(flatten)]
    meta: SpectrumMeta,
    points: usize,
    created_unix: u64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        let m = || SpectrumMeta::new("TRWA");
        assert!(SpectrumSeries::new(vec![1.0, 1.0], vec![0.0, 0.0], m()).is_err());
        assert!(SpectrumSeries::new(vec![1.0, 2.0], vec![0.0], m()).is_err());
        assert!(SpectrumSeries::new(vec![1.0, 2.0], vec![0.0, -1e-6], m()).is_err());
        assert!(SpectrumSeries::new(vec![1.0, 2.0], vec![0.0, -1e-13], m()).is_ok());
    }

    #[test]
    fn interpolation() {
        let s = SpectrumSeries::new(
            vec![0.0, 1.0, 3.0],
            vec![0.0, 2.0, 4.0],
            SpectrumMeta::new("x"),
        )
        .unwrap();
        assert_eq!(s.interpolate(0.5), Some(1.0));
        assert_eq!(s.interpolate(2.0), Some(3.0));
        assert_eq!(s.interpolate(3.0), Some(4.0));
        assert_eq!(s.interpolate(3.5), None);
        assert_eq!(s.normalized().value, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let params =
            ModelParams::with_separation(0.05, 1.0, crate::model::InitialState::PsiMinus).unwrap();
        let mut meta = SpectrumMeta::new("TRWA").with_params(&params);
        meta.eta = Some(0.95);
        let s = SpectrumSeries::new(vec![0.5, 1.0], vec![0.1, 1.0 / 3.0], meta).unwrap();
        s.save(&p).unwrap();
        let back = SpectrumSeries::load(&p).unwrap();
        assert_eq!(back, s);
    }
}
