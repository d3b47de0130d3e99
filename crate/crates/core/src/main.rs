use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use capguard::commands::{
    cmd_diff, cmd_infer, cmd_outline, cmd_report, OutlineRequest, ReportRequest, EXIT_ERROR, EXIT_OK, EXIT_REVIEW,
};
use capguard::layout::Diagnostic;
use capguard::policy::EnforcementMode;

#[derive(Parser)]
#[command(name = "capguard", version, about = "Capability policies and guarded clones for Node.js projects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Table,
    Json,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Mode {
    Log,
    Throw,
    #[default]
    Exit,
}

impl From<Mode> for EnforcementMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Log => EnforcementMode::Log,
            Mode::Throw => EnforcementMode::Throw,
            Mode::Exit => EnforcementMode::Exit,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Infer a CBOM from package sources.
    Infer {
        #[arg(long)]
        sbom: PathBuf,
        #[arg(long)]
        root: PathBuf,
        /// Where to write the CBOM; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Guard violation logs (NDJSON) whose capabilities are added.
        #[arg(long = "violations")]
        violations: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Write a guarded clone of the project.
    Outline {
        #[arg(long)]
        sbom: PathBuf,
        /// Inferred from the sources when omitted.
        #[arg(long)]
        cbom: Option<PathBuf>,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        mode: Mode,
        #[arg(long)]
        builtin_manifest: Option<PathBuf>,
        /// Directory of guard runtime files copied into the clone.
        #[arg(long)]
        runtime: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Compare two snapshots; exits 2 when changes need review.
    Diff {
        #[arg(long)]
        old_sbom: PathBuf,
        #[arg(long)]
        old_cbom: PathBuf,
        #[arg(long)]
        new_sbom: PathBuf,
        #[arg(long)]
        new_cbom: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Enforced and presented views; exits 2 when a direct dependency gained
    /// capabilities relative to the baseline.
    Report {
        #[arg(long)]
        sbom: PathBuf,
        #[arg(long)]
        cbom: Option<PathBuf>,
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        baseline_cbom: Option<PathBuf>,
        #[arg(long)]
        baseline_sbom: Option<PathBuf>,
        /// Directory to dump the compiled policies into.
        #[arg(long)]
        policies: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        mode: Mode,
        #[arg(long)]
        builtin_manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
}

fn warn(diagnostics: &[Diagnostic]) {
    for d in diagnostics {
        eprintln!("warning: {d}");
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Infer { sbom, root, out, violations, format } => {
            let outcome = cmd_infer(&sbom, &root, &violations)?;
            warn(&outcome.inference.diagnostics);
            if outcome.unresolved_violations > 0 {
                eprintln!("warning: {} violation records name no capability", outcome.unresolved_violations);
            }
            let cbom = outcome.inference.cbom.to_canonical_json();
            match out {
                Some(path) => {
                    std::fs::write(&path, &cbom)?;
                    match format {
                        Format::Table => print!("{}", outcome.table()),
                        Format::Json => print!("{cbom}"),
                    }
                }
                None => match format {
                    Format::Table => {
                        eprint!("{}", outcome.table());
                        print!("{cbom}");
                    }
                    Format::Json => print!("{cbom}"),
                },
            }
            Ok(EXIT_OK)
        }
        Command::Outline { sbom, cbom, root, out, mode, builtin_manifest, runtime, format } => {
            let req = OutlineRequest {
                sbom: &sbom,
                cbom: cbom.as_deref(),
                root: &root,
                out: &out,
                mode: mode.into(),
                builtin_manifest: builtin_manifest.as_deref(),
                runtime: runtime.as_deref(),
            };
            let summary = cmd_outline(&req)?;
            warn(&summary.diagnostics);
            if runtime.is_none() {
                eprintln!(
                    "warning: no --runtime given; the clone expects guard runtime files under __capguard__/runtime"
                );
            }
            match format {
                Format::Table => println!(
                    "outlined {} copied {} skipped {} policies {} mode {} -> {}",
                    summary.outlined,
                    summary.copied,
                    summary.skipped,
                    summary.policies,
                    summary.mode,
                    summary.out.display()
                ),
                Format::Json => println!("{}", json(&summary)),
            }
            Ok(EXIT_OK)
        }
        Command::Diff { old_sbom, old_cbom, new_sbom, new_cbom, format } => {
            let diff = cmd_diff(&old_sbom, &old_cbom, &new_sbom, &new_cbom)?;
            match format {
                Format::Table => print!("{}", diff.to_table()),
                Format::Json => println!("{}", json(&diff)),
            }
            Ok(if diff.reviewable > 0 { EXIT_REVIEW } else { EXIT_OK })
        }
        Command::Report {
            sbom,
            cbom,
            root,
            baseline_cbom,
            baseline_sbom,
            policies,
            mode,
            builtin_manifest,
            format,
        } => {
            let req = ReportRequest {
                sbom: &sbom,
                cbom: cbom.as_deref(),
                root: root.as_deref(),
                baseline_sbom: baseline_sbom.as_deref(),
                baseline_cbom: baseline_cbom.as_deref(),
                policies_out: policies.as_deref(),
                mode: mode.into(),
                builtin_manifest: builtin_manifest.as_deref(),
            };
            let outcome = cmd_report(&req)?;
            warn(&outcome.diagnostics);
            match format {
                Format::Table => print!("{}", outcome.report.table()),
                Format::Json => println!("{}", json(&outcome.report)),
            }
            Ok(if outcome.report.flagged.is_empty() { EXIT_OK } else { EXIT_REVIEW })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
