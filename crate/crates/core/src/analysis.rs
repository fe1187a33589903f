//! Peak extraction, line-shape comparison and the doublet-splitting estimate.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytic::TrwaKernels;
use crate::error::{Error, Result};
use crate::spectrum::SpectrumSeries;

/// Default minimum prominence, as a fraction of the global maximum.
pub const DEFAULT_PROMINENCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub omega: f64,
    pub height: f64,
    pub fwhm: f64,
    pub prominence: f64,
}

/// Peaks sorted by position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
}

impl PeakSet {
    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    /// Tallest peak.
    pub fn dominant(&self) -> Option<&Peak> {
        self.peaks
            .iter()
            .max_by(|a, b| a.height.total_cmp(&b.height))
    }

    /// The `n` tallest peaks, re-sorted by position.
    pub fn tallest(&self, n: usize) -> Vec<Peak> {
        let mut p = self.peaks.clone();
        p.sort_by(|a, b| b.height.total_cmp(&a.height));
        p.truncate(n);
        p.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        p
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "omega,height,fwhm,prominence").unwrap();
        for p in &self.peaks {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e}",
                p.omega, p.height, p.fwhm, p.prominence
            )
            .unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Where the series first drops to `level` walking from `i` in direction `step`,
/// linearly interpolated; the grid edge if it never does.
fn crossing(s: &SpectrumSeries, i: usize, level: f64, step: isize) -> f64 {
    let mut j = i as isize;
    loop {
        let next = j + step;
        if next < 0 || next as usize >= s.len() {
            return s.omega[j as usize];
        }
        let (a, b) = (j as usize, next as usize);
        if s.value[b] <= level {
            let t = (s.value[a] - level) / (s.value[a] - s.value[b]);
            return s.omega[a] + t * (s.omega[b] - s.omega[a]);
        }
        j = next;
    }
}

/// Local maxima with topographic prominence ≥ `min_prominence` × global max.
/// Flat tops are reported at their left edge.
pub fn find_peaks(s: &SpectrumSeries, min_prominence: f64) -> PeakSet {
    let v = &s.value;
    let n = v.len();
    let top = s.max_value();
    if n == 0 || top <= 0.0 {
        return PeakSet::default();
    }
    let threshold = min_prominence * top;
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        let rises = i == 0 || v[i] > v[i - 1];
        let mut end = i;
        while end + 1 < n && v[end + 1] == v[i] {
            end += 1;
        }
        let falls = end + 1 == n || v[end + 1] < v[i];
        if rises && falls && v[i] > 0.0 {
            let h = v[i];
            let mut left_min = h;
            for k in (0..i).rev() {
                if v[k] > h {
                    break;
                }
                left_min = left_min.min(v[k]);
            }
            let mut right_min = h;
            for &x in &v[end + 1..] {
                if x > h {
                    break;
                }
                right_min = right_min.min(x);
            }
            // a maximum at the grid edge has no base on that side
            let base = match (i == 0, end + 1 == n) {
                (true, true) => 0.0,
                (true, false) => right_min,
                (false, true) => left_min,
                (false, false) => left_min.max(right_min),
            };
            let prominence = h - base;
            if prominence >= threshold {
                let half = 0.5 * h;
                let fwhm = crossing(s, end, half, 1) - crossing(s, i, half, -1);
                peaks.push(Peak {
                    omega: s.omega[i],
                    height: h,
                    fwhm,
                    prominence,
                });
            }
        }
        i = end + 1;
    }
    PeakSet { peaks }
}

/// Line-shape comparison of two spectra, both scaled to unit maximum on the
/// overlap of their grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub method_a: String,
    pub method_b: String,
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
    /// ‖a − b‖₂ / √(½(‖a‖₂² + ‖b‖₂²)), trapezoidal in ω.
    pub relative_l2: f64,
    pub linf: f64,
    /// |ω_a − ω_b| of the dominant peaks.
    pub dominant_peak_offset: Option<f64>,
    /// For each peak of `a`, the distance to the nearest peak of `b`.
    pub peak_offsets: Vec<f64>,
}

impl ComparisonReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Compares over the whole common range.
pub fn compare(a: &SpectrumSeries, b: &SpectrumSeries) -> Result<ComparisonReport> {
    compare_in(a, b, None)
}

/// Compares on the merged grid inside the overlap, optionally clipped to
/// `window` = (lo, hi).
pub fn compare_in(
    a: &SpectrumSeries,
    b: &SpectrumSeries,
    window: Option<(f64, f64)>,
) -> Result<ComparisonReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DisjointGrids);
    }
    let mut lo = a.omega[0].max(b.omega[0]);
    let mut hi = a.omega[a.len() - 1].min(b.omega[b.len() - 1]);
    if let Some((wl, wh)) = window {
        lo = lo.max(wl);
        hi = hi.min(wh);
    }
    if lo > hi {
        return Err(Error::DisjointGrids);
    }
    let mut grid: Vec<f64> = a
        .omega
        .iter()
        .chain(&b.omega)
        .copied()
        .chain([lo, hi])
        .filter(|&w| w >= lo && w <= hi)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let sample = |s: &SpectrumSeries| -> Vec<f64> {
        let v: Vec<f64> = grid
            .iter()
            .map(|&w| s.interpolate(w).unwrap_or(0.0))
            .collect();
        let mx = v.iter().copied().fold(0.0, f64::max);
        if mx > 0.0 {
            v.iter().map(|x| x / mx).collect()
        } else {
            v
        }
    };
    let (va, vb) = (sample(a), sample(b));

    let trapz = |f: &dyn Fn(usize) -> f64| -> f64 {
        if grid.len() == 1 {
            return f(0);
        }
        grid.windows(2)
            .enumerate()
            .map(|(i, w)| 0.5 * (w[1] - w[0]) * (f(i) + f(i + 1)))
            .sum()
    };
    let diff = trapz(&|i| (va[i] - vb[i]).powi(2));
    let scale = 0.5 * (trapz(&|i| va[i] * va[i]) + trapz(&|i| vb[i] * vb[i]));
    let relative_l2 = if scale > 0.0 {
        (diff / scale).sqrt()
    } else {
        0.0
    };
    let linf = va
        .iter()
        .zip(&vb)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    let clip = |s: &SpectrumSeries| -> Result<SpectrumSeries> {
        let idx: Vec<usize> = (0..s.len())
            .filter(|&i| s.omega[i] >= lo && s.omega[i] <= hi)
            .collect();
        SpectrumSeries::new(
            idx.iter().map(|&i| s.omega[i]).collect(),
            idx.iter().map(|&i| s.value[i]).collect(),
            s.meta.clone(),
        )
    };
    let (pa, pb) = (
        find_peaks(&clip(a)?, DEFAULT_PROMINENCE),
        find_peaks(&clip(b)?, DEFAULT_PROMINENCE),
    );
    let dominant_peak_offset = match (pa.dominant(), pb.dominant()) {
        (Some(x), Some(y)) => Some((x.omega - y.omega).abs()),
        _ => None,
    };
    let peak_offsets = pa
        .peaks
        .iter()
        .filter_map(|p| {
            pb.peaks
                .iter()
                .map(|q| (p.omega - q.omega).abs())
                .min_by(f64::total_cmp)
        })
        .collect();

    Ok(ComparisonReport {
        method_a: a.meta.method.clone(),
        method_b: b.meta.method.clone(),
        omega_min: lo,
        omega_max: hi,
        points: grid.len(),
        relative_l2,
        linf,
        dominant_peak_offset,
        peak_offsets,
    })
}

/// 2|V_c + Δ̃(ηω₀, d)|, the expected separation of the Ψ₀ doublet.
pub fn splitting_estimate(kernels: &TrwaKernels, d: f64) -> Result<f64> {
    Ok(2.0 * (kernels.v_c + kernels.delta(kernels.a(), d)?).abs())
}
