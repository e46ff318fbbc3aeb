//! `stratum`: check, flow, audit and inspect coalescing isomonodromic systems.

mod commands;
mod report;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::Options;
use spec::{Pair, SystemSpec};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Report,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "stratum", version, about = "Isomonodromic deformations along a coalescence stratum")]
struct Cli {
    /// Integrator relative tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Series truncation order for monodromy data.
    #[arg(long = "K", global = true)]
    k: Option<usize>,
    /// Number of audit sample points along the path.
    #[arg(long, global = true, default_value_t = 3)]
    samples: usize,
    /// JSON file with path waypoints (a list of λ lists of [re, im] pairs).
    #[arg(long = "path", global = true, value_name = "FILE")]
    path_file: Option<PathBuf>,
    /// Write the output here instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Output format; `csv` is available for `flow`.
    #[arg(long, global = true, value_enum, default_value_t = Format::Report)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Source {
    /// System spec file (JSON).
    spec: Option<PathBuf>,
    /// Start from a built-in preset.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Linear constraints and the curl (integrability) test at the spec point.
    Check {
        #[command(flatten)]
        src: Source,
        /// Finite-difference step of the curl test.
        #[arg(long, default_value_t = 1e-2)]
        h: f64,
    },
    /// Integrate the deformation equations along the path.
    Flow {
        #[command(flatten)]
        src: Source,
    },
    /// Strong isomonodromy audit along the path.
    Monodromy {
        #[command(flatten)]
        src: Source,
        /// Keep A frozen along the path (a negative control).
        #[arg(long)]
        frozen: bool,
    },
    /// Caustic diagnostics: block eigenvalues, Ψ certificates, boundedness scan.
    Caustic {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        m: Option<u32>,
        #[arg(long)]
        n: Option<usize>,
        /// Scan candidate values of V̊₁₂ for boundedness.
        #[arg(long)]
        scan: bool,
    },
    /// Print a preset as a spec file.
    Example {
        /// One of 3d-example, 4d-omega, caustic.
        name: String,
    },
}

fn load(src: &Source, default: Option<&str>) -> Result<(SystemSpec, String), CliError> {
    let (mut doc, label) = match &src.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            (SystemSpec::parse(&text)?, p.display().to_string())
        }
        None => (SystemSpec::default(), String::new()),
    };
    if let Some(p) = &src.preset {
        doc.preset = Some(p.clone());
    }
    if doc.preset.is_none() && src.spec.is_none() {
        match default {
            Some(d) => doc.preset = Some(d.into()),
            None => return Err(CliError::Input("give a spec file or --preset".into())),
        }
    }
    let label = if label.is_empty() { format!("preset:{}", doc.preset.as_deref().unwrap_or("")) } else { label };
    Ok((doc, label))
}

fn run(cli: &Cli) -> Result<(String, bool), CliError> {
    let mut opts = Options {
        tol: cli.tol,
        k: cli.k,
        samples: cli.samples,
        path: None,
        h: 1e-2,
    };
    if let Some(p) = &cli.path_file {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        let w: Vec<Vec<Pair>> = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("--path: {e}")))?;
        opts.path = Some(w);
    }
    let out = match &cli.command {
        Command::Example { name } => {
            let doc = spec::preset(name)?;
            return Ok((report::to_json(&doc), true));
        }
        Command::Check { src, h } => {
            opts.h = *h;
            let (doc, label) = load(src, None)?;
            commands::check(&doc.resolve()?, &label, &opts)?
        }
        Command::Flow { src } => {
            let (doc, label) = load(src, None)?;
            commands::flow(&doc.resolve()?, &label, &opts)?
        }
        Command::Monodromy { src, frozen } => {
            let (doc, label) = load(src, None)?;
            commands::monodromy(&doc.resolve()?, &label, &opts, *frozen)?
        }
        Command::Caustic { src, m, n, scan } => {
            let (mut doc, label) = load(src, Some("caustic"))?;
            if m.is_some() || n.is_some() {
                let base = doc.merged()?.caustic.ok_or_else(|| CliError::Input("field `caustic`: missing".into()))?;
                let mut c = spec::caustic_spec(m.unwrap_or(base.m), n.unwrap_or(base.n));
                if m.is_none() {
                    c.v12 = base.v12;
                }
                doc.caustic = Some(c);
            }
            commands::caustic_cmd(&doc.resolve()?, &label, &opts, *scan)?
        }
    };
    let pass = out.report.verdict == report::Verdict::Pass;
    let text = match cli.format {
        Format::Report => report::to_json(&out.report),
        Format::Csv => out.csv.ok_or_else(|| CliError::Input("--format csv is only available for `flow`".into()))?,
    };
    Ok((text, pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((text, pass)) => {
            let written = match &cli.out {
                Some(p) => std::fs::write(p, &text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
                None => {
                    print!("{text}");
                    Ok(())
                }
            };
            match written {
                Err(e) => {
                    eprintln!("stratum: {e}");
                    ExitCode::from(e.exit_code())
                }
                Ok(()) if pass => ExitCode::SUCCESS,
                Ok(()) => ExitCode::from(1),
            }
        }
        Err(e) => {
            eprintln!("stratum: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
