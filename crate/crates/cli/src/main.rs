use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use waveguide_emission::analysis::compare_in;
use waveguide_emission::bath::discretize;
use waveguide_emission::error::Error;
use waveguide_emission::experiment::{self, output_root, preset, presets, RunConfig};
use waveguide_emission::spectrum::SpectrumSeries;

/// Emission spectra of two qubits coupled to an Ohmic waveguide.
#[derive(Parser)]
#[command(name = "wgemit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration file or one or more presets.
    Run(RunArgs),
    /// List the built-in presets.
    Presets {
        /// Print each preset as a TOML configuration.
        #[arg(long)]
        full: bool,
    },
    /// Compare two spectrum CSV files and print the report as JSON.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Restrict the comparison to [lo, hi] (units of ω₀).
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        window: Option<Vec<f64>>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the discretized bath of a configuration as CSV.
    BathDump {
        #[command(flatten)]
        source: Source,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Source {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name; repeat to sweep several presets in parallel.
    #[arg(long)]
    preset: Vec<String>,
    /// Override any configuration key, e.g. `model.alpha=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_b: Option<usize>,
    #[arg(long)]
    multiplicity: Option<usize>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of multiD1, TRWA, SP.
    #[arg(long)]
    methods: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Artifact root; defaults to $WGEMIT_OUTPUT_ROOT, then `runs`.
    #[arg(long)]
    output_root: Option<PathBuf>,
}

impl Source {
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{key}={v}"));
            }
        };
        push("model.alpha", self.alpha.map(|v| v.to_string()));
        push("bath.n_b", self.n_b.map(|v| v.to_string()));
        push(
            "variational.multiplicity",
            self.multiplicity.map(|v| v.to_string()),
        );
        push("integrator.t_final", self.t_final.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("methods", self.methods.clone());
        out.extend(self.sets.iter().cloned());
        out
    }

    fn configs(&self) -> Result<Vec<RunConfig>, Error> {
        let base = match (&self.config, self.preset.as_slice()) {
            (Some(path), _) => vec![RunConfig::load(path)?],
            (None, []) => {
                return Err(Error::Validation(
                    "give --config or at least one --preset".into(),
                ))
            }
            (None, names) => names
                .iter()
                .map(|n| {
                    preset(n).ok_or_else(|| Error::Validation(format!("unknown preset {n:?}")))
                })
                .collect::<Result<_, _>>()?,
        };
        let overrides = self.overrides();
        base.iter().map(|c| c.with_overrides(&overrides)).collect()
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if is_broken_pipe(e) {
        return 0;
    }
    match e.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 3,
        Some(
            Error::Validation(_)
            | Error::InvalidParameter(_)
            | Error::Parse { .. }
            | Error::TomlDe(_)
            | Error::Json(_)
            | Error::DisjointGrids,
        ) => 2,
        _ => 1,
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<io::Error>())
        .any(|e| e.kind() == io::ErrorKind::BrokenPipe)
}

fn run(args: &RunArgs) -> anyhow::Result<()> {
    let configs = args.source.configs()?;
    let root = args.output_root.clone().unwrap_or_else(output_root);
    let results: Vec<_> = configs
        .par_iter()
        .map(|c| experiment::run(c, &root).map(|(dir, out)| (c.name.clone(), dir, out)))
        .collect();
    let sweep = configs.len() > 1;
    let mut stdout = io::stdout().lock();
    let mut first_err = None;
    for (r, config) in results.into_iter().zip(&configs) {
        match r {
            Ok((name, dir, out)) => {
                if let Some(tr) = &out.trajectory {
                    for w in &tr.warnings {
                        eprintln!("{name}: warning: {w}");
                    }
                }
                writeln!(stdout, "{name}: {}", dir.display())?;
            }
            Err(e) => {
                // the first failure is reported by main
                if sweep && first_err.is_some() {
                    eprintln!("{}: error: {:#}", config.name, anyhow::Error::from(e));
                } else {
                    if sweep {
                        eprintln!("{}: failed", config.name);
                    }
                    first_err.get_or_insert(e);
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn list_presets(full: bool) -> anyhow::Result<()> {
    let mut stdout = io::stdout().lock();
    for p in presets() {
        if full {
            writeln!(stdout, "# {}\n{}", p.name, p.to_toml_string()?)?;
        } else {
            let methods: Vec<&str> = p.methods.iter().map(|m| m.tag()).collect();
            writeln!(
                stdout,
                "{:<16} alpha={:<6} d={:<5} state={:<10} n_b={:<4} M={} t_final={} methods={}",
                p.name,
                p.model.alpha,
                p.model.d(),
                p.model.initial_state.label(),
                p.bath.n_b,
                p.variational.multiplicity,
                p.integrator.t_final,
                methods.join(",")
            )?;
        }
    }
    Ok(())
}

fn compare(a: &Path, b: &Path, window: Option<&[f64]>, out: Option<&Path>) -> anyhow::Result<()> {
    let sa = SpectrumSeries::load(a)?;
    let sb = SpectrumSeries::load(b)?;
    let report = compare_in(&sa, &sb, window.map(|w| (w[0], w[1])))?;
    writeln!(
        io::stdout().lock(),
        "{}",
        serde_json::to_string_pretty(&report)?
    )?;
    if let Some(path) = out {
        report.save(path)?;
    }
    Ok(())
}

fn bath_dump(source: &Source, out: Option<&Path>) -> anyhow::Result<()> {
    let configs = source.configs()?;
    let [config] = configs.as_slice() else {
        return Err(Error::Validation("bath-dump takes a single configuration".into()).into());
    };
    let bath = discretize(&config.model, config.bath.n_b)?;
    match out {
        Some(path) => bath.write_csv(path)?,
        None => io::stdout().lock().write_all(bath.to_csv().as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Presets { full } => list_presets(*full),
        Command::Compare { a, b, window, out } => compare(a, b, window.as_deref(), out.as_deref()),
        Command::BathDump { source, out } => bath_dump(source, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if code != 0 {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}
