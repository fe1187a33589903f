//! Run configuration, named presets and the run driver that writes an
//! artifact directory.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{compare, find_peaks, ComparisonReport, PeakSet, DEFAULT_PROMINENCE};
use crate::analytic::{spectrum, uniform_grid, ModeWeight, SpKernels, TrwaKernels};
use crate::bath::{discretize, DiscretizedBath, DEFAULT_N_B};
use crate::dynamics::{propagate, IntegratorConfig, Trajectory};
use crate::error::{Error, Result};
use crate::model::{InitialState, ModelParams};
use crate::spectrum::SpectrumSeries;
use crate::state::MultiD1State;

/// Environment variable naming the directory under which runs are written.
pub const OUTPUT_ROOT_ENV: &str = "WGEMIT_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const DEFAULT_MULTIPLICITY: usize = 4;
pub const DEFAULT_GRID_POINTS: usize = 2001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "multiD1")]
    MultiD1,
    #[serde(rename = "TRWA")]
    Trwa,
    #[serde(rename = "SP")]
    Sp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MultiD1, Method::Trwa, Method::Sp];

    pub fn tag(self) -> &'static str {
        match self {
            Method::MultiD1 => "multiD1",
            Method::Trwa => "TRWA",
            Method::Sp => "SP",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Method::MultiD1 => "multid1",
            Method::Trwa => "trwa",
            Method::Sp => "sp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "multid1" | "variational" => Ok(Method::MultiD1),
            "trwa" => Ok(Method::Trwa),
            "sp" => Ok(Method::Sp),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathConfig {
    pub n_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationalConfig {
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticConfig {
    /// Points of the uniform grid on (0, ω_c].
    pub grid_points: usize,
    /// Peak prominence threshold as a fraction of the maximum.
    pub prominence: f64,
}

impl Default for AnalyticConfig {
    fn default() -> Self {
        AnalyticConfig {
            grid_points: DEFAULT_GRID_POINTS,
            prominence: DEFAULT_PROMINENCE,
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub methods: Vec<Method>,
    /// Seeds the jitter of the extra coherent states; the only randomness.
    #[serde(default)]
    pub seed: u64,
    /// Artifact directory, relative to the output root; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: ModelParams,
    pub bath: BathConfig,
    pub variational: VariationalConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub analytic: AnalyticConfig,
}

impl RunConfig {
    pub fn new(name: impl Into<String>, model: ModelParams, methods: Vec<Method>) -> Self {
        RunConfig {
            name: name.into(),
            methods,
            seed: 0,
            output_dir: None,
            model,
            bath: BathConfig { n_b: DEFAULT_N_B },
            variational: VariationalConfig {
                multiplicity: DEFAULT_MULTIPLICITY,
            },
            integrator: IntegratorConfig::default(),
            analytic: AnalyticConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!(
                "run name {:?} must be a non-empty single path component",
                self.name
            ));
        }
        if self.methods.is_empty() {
            return bad("at least one method must be selected".into());
        }
        let a = self.model.alpha;
        if !(0.0..=1.0).contains(&a) {
            return bad(format!("alpha must lie in [0, 1], got {a}"));
        }
        let m = self.variational.multiplicity;
        if !(1..=16).contains(&m) {
            return bad(format!("multiplicity must lie in [1, 16], got {m}"));
        }
        let n_b = self.bath.n_b;
        if !(8..=5000).contains(&n_b) {
            return bad(format!("n_b must lie in [8, 5000], got {n_b}"));
        }
        if self.analytic.grid_points < 2 {
            return bad("analytic.grid_points must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.analytic.prominence) {
            return bad(format!(
                "analytic.prominence must lie in [0, 1), got {}",
                self.analytic.prominence
            ));
        }
        self.integrator.validate()
    }

    /// Sorted, deduplicated method list.
    pub fn method_set(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    /// Applies `key=value` overrides with dotted keys (`model.alpha=0.1`).
    /// Values are parsed as TOML, falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, assignments: &[S]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml_string()?)?;
        for a in assignments {
            let a = a.as_ref();
            let (key, raw) = a.split_once('=').ok_or_else(|| {
                Error::Validation(format!("override {a:?} is not of the form key=value"))
            })?;
            let value = parse_value(raw.trim());
            set_path(&mut table, key.trim(), value)?;
        }
        let cfg: RunConfig = toml::from_str(&toml::to_string(&table)?)
            .map_err(|e| Error::Validation(format!("invalid override: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `root/output_dir` or `root/name`.
    pub fn artifact_dir(&self, root: &Path) -> PathBuf {
        root.join(
            self.output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from(&self.name)),
        )
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Validation(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Validation(format!("{p:?} in {key:?} is not a section")))?;
    }
    // a single method is accepted where a list is expected
    let last = parts[parts.len() - 1];
    let value = match (key, value) {
        ("methods", toml::Value::String(s)) => toml::Value::Array(
            s.split(',')
                .map(|m| toml::Value::String(m.trim().to_string()))
                .collect(),
        ),
        (_, v) => v,
    };
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Output root from the environment, else [`DEFAULT_OUTPUT_ROOT`].
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

const SEPARATIONS: [f64; 3] = [1.0, 3.0, 12.0];

fn cell(alpha: f64, d: f64, state: InitialState, name: String, methods: Vec<Method>) -> RunConfig {
    let model = ModelParams::with_separation(alpha, d, state).expect("preset parameters are valid");
    RunConfig::new(name, model, methods)
}

/// The 18 figure cells (panels a–i: rows d = 1, 3, 12; columns Ψ₀, Ψ₊, Ψ₋),
/// their desk-scale variants, and the weak-coupling and subradiance runs.
pub fn presets() -> Vec<RunConfig> {
    let mut out = Vec::new();
    let mut desk = Vec::new();
    for (fig, alpha) in [(1, 0.05), (2, 0.1)] {
        let methods = if fig == 1 {
            Method::ALL.to_vec()
        } else {
            vec![Method::MultiD1, Method::Trwa]
        };
        for (row, &d) in SEPARATIONS.iter().enumerate() {
            for (col, state) in InitialState::ALL.into_iter().enumerate() {
                let panel = (b'a' + (3 * row + col) as u8) as char;
                let name = format!("fig{fig}{panel}");
                out.push(cell(alpha, d, state, name.clone(), methods.clone()));
                let mut small = cell(alpha, d, state, format!("desk-{name}"), methods.clone());
                small.bath.n_b = 150;
                small.variational.multiplicity = 3;
                small.integrator.t_final = 150.0;
                desk.push(small);
            }
        }
    }
    out.extend(desk);

    out.push(cell(
        0.001,
        1.0,
        InitialState::Psi0,
        "weak".into(),
        vec![Method::Trwa, Method::Sp],
    ));

    let mut fig3 = cell(
        0.1,
        12.0,
        InitialState::PsiPlus,
        "fig3".into(),
        vec![Method::MultiD1],
    );
    fig3.integrator.t_final = 300.0;
    out.push(fig3.clone());
    fig3.name = "fig3-reduced".into();
    fig3.bath.n_b = 150;
    fig3.variational.multiplicity = 2;
    out.push(fig3);
    out
}

pub fn preset(name: &str) -> Option<RunConfig> {
    presets().into_iter().find(|p| p.name == name)
}

/// In-memory results of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: RunConfig,
    pub bath: DiscretizedBath,
    pub trajectory: Option<Trajectory>,
    pub spectra: Vec<SpectrumSeries>,
    pub peaks: Vec<PeakSet>,
    pub comparisons: Vec<ComparisonReport>,
    pub eta: Option<f64>,
    pub v_c: Option<f64>,
}

impl RunOutput {
    pub fn spectrum(&self, method: Method) -> Option<&SpectrumSeries> {
        self.spectra.iter().find(|s| s.meta.method == method.tag())
    }
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    name: &'a str,
    methods: Vec<&'static str>,
    eta: Option<f64>,
    v_c: Option<f64>,
    steps: Option<usize>,
    rejected_steps: Option<usize>,
    forced_steps: Option<usize>,
    max_sigma2: Option<f64>,
    max_residual: Option<f64>,
    max_epsilon: Option<f64>,
    warnings: &'a [String],
    peaks: Vec<(&'a str, &'a PeakSet)>,
}

/// Computes every selected method without touching the filesystem.
///
/// Analytic spectra are evaluated on the bath's right-branch frequencies with
/// bin weights λ_k² when multiD1 is selected, so all three overlay directly;
/// otherwise on the uniform grid with the continuum weight J(ω)/2.
pub fn execute(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let params = config.model;
    let bath = discretize(&params, config.bath.n_b)?;
    let methods = config.method_set();

    let trajectory = if methods.contains(&Method::MultiD1) {
        let initial = MultiD1State::initial(
            params.initial_state,
            bath.n_modes(),
            config.variational.multiplicity,
            config.integrator.noise_scale,
            config.seed,
        )?;
        Some(propagate(&initial, &bath, &params, &config.integrator)?)
    } else {
        None
    };

    let bin_weights = bath.right_weights();
    let (grid, weight) = if trajectory.is_some() {
        (
            bath.right_frequencies().to_vec(),
            ModeWeight::PerMode(&bin_weights),
        )
    } else {
        (
            uniform_grid(&params, config.analytic.grid_points),
            ModeWeight::Density,
        )
    };

    let mut spectra = Vec::new();
    let (mut eta, mut v_c) = (None, None);
    for &m in &methods {
        let s = match m {
            Method::MultiD1 => trajectory
                .as_ref()
                .expect("propagated above")
                .final_state
                .emission_spectrum_snapshot(&bath)?,
            Method::Trwa => {
                let k = TrwaKernels::new(&params)?;
                eta = Some(k.eta);
                v_c = Some(k.v_c);
                spectrum(&k, &grid, weight)?
            }
            Method::Sp => spectrum(&SpKernels::new(&params)?, &grid, weight)?,
        };
        spectra.push(s);
    }
    let peaks = spectra
        .iter()
        .map(|s| find_peaks(s, config.analytic.prominence))
        .collect();
    let mut comparisons = Vec::new();
    for i in 0..spectra.len() {
        for j in i + 1..spectra.len() {
            comparisons.push(compare(&spectra[i], &spectra[j])?);
        }
    }
    Ok(RunOutput {
        config: config.clone(),
        bath,
        trajectory,
        spectra,
        peaks,
        comparisons,
        eta,
        v_c,
    })
}

/// Runs `config` and writes its artifacts under `root`; returns the directory.
pub fn run(config: &RunConfig, root: &Path) -> Result<(PathBuf, RunOutput)> {
    let out = execute(config)?;
    let dir = config.artifact_dir(root);
    write_artifacts(&out, &dir)?;
    Ok((dir, out))
}

pub fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    out.config.save(&dir.join("config.toml"))?;
    out.bath.write_csv(&dir.join("bath.csv"))?;

    if let Some(tr) = &out.trajectory {
        write_trajectory(tr, &out.bath, dir)?;
    }
    for (s, p) in out.spectra.iter().zip(&out.peaks) {
        let stem = Method::from_str(&s.meta.method)?.file_stem();
        s.save(&dir.join(format!("spectrum_{stem}.csv")))?;
        p.write_csv(&dir.join(format!("peaks_{stem}.csv")))?;
    }
    if !out.comparisons.is_empty() {
        let path = dir.join("comparison.json");
        let text = serde_json::to_string_pretty(&out.comparisons)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }

    let tr = out.trajectory.as_ref();
    let summary = Summary {
        name: &out.config.name,
        methods: out.config.method_set().iter().map(|m| m.tag()).collect(),
        eta: out.eta,
        v_c: out.v_c,
        steps: tr.map(|t| t.steps),
        rejected_steps: tr.map(|t| t.rejected_steps),
        forced_steps: tr.map(|t| t.forced_steps),
        max_sigma2: tr.map(|t| t.max_sigma2),
        max_residual: tr.map(|t| t.stats.max_residual),
        max_epsilon: tr.map(|t| t.stats.max_epsilon),
        warnings: tr.map(|t| t.warnings.as_slice()).unwrap_or(&[]),
        peaks: out
            .spectra
            .iter()
            .map(|s| s.meta.method.as_str())
            .zip(&out.peaks)
            .collect(),
    };
    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))
}

/// `trajectory.csv` (scalars per record) and `photon_numbers.csv` (mirror-summed
/// N(ω_k, t), one column per right-branch mode).
fn write_trajectory(tr: &Trajectory, bath: &DiscretizedBath, dir: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "t,p_e1,p_e2,norm,sigma2,energy,n_total").unwrap();
    for r in &tr.records {
        let total: f64 = r.n_k.iter().sum();
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.t, r.p_e[0], r.p_e[1], r.norm, r.sigma2, r.energy, total
        )
        .unwrap();
    }
    let path = dir.join("trajectory.csv");
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;

    let mut out = Vec::new();
    write!(out, "t").unwrap();
    for w in bath.right_frequencies() {
        write!(out, ",{w:.10e}").unwrap();
    }
    writeln!(out).unwrap();
    for r in &tr.records {
        write!(out, "{:.17e}", r.t).unwrap();
        for i in 0..bath.n_b {
            write!(out, ",{:.17e}", r.n_k[i] + r.n_k[bath.mirror(i)]).unwrap();
        }
        writeln!(out).unwrap();
    }
    let path = dir.join("photon_numbers.csv");
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))
}
