//! Command-line surface: validate documents, rewrite and apply update
//! operations under a policy, and materialize security views.
//!
//! Exit codes: 0 success, 1 policy or validity denial (violations, dynamic
//! errors, rejected updates), 2 usage and parse errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use xuguard::dtd::{parse_dtd, Dtd};
use xuguard::policy::parse_policy;
use xuguard::rewrite::{apply_update, parse_update, rewrite_update, ApplyReport, ApplyStatus};
use xuguard::tree::{parse_xml, serialize_xml, XmlTree};
use xuguard::validate::validate;
use xuguard::view::{extract_view, parse_access, secure_update, SecurityView};

#[derive(Parser)]
#[command(name = "xuguard", version, about = "Policy-controlled XML updating")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Jsonl,
}

#[derive(Args)]
struct CommonArgs {
    /// Schema file
    #[arg(long)]
    dtd: PathBuf,
    /// Output format
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Check a document against a schema
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        /// Document file
        #[arg(long)]
        doc: PathBuf,
    },
    /// Rewrite an update operation into its safe form
    Rewrite {
        #[command(flatten)]
        common: CommonArgs,
        /// Update-operation file
        #[arg(long)]
        op: PathBuf,
        /// Update-policy file
        #[arg(long)]
        policy: PathBuf,
        /// Read-access specification; switches to the two-step pipeline
        #[arg(long)]
        access: Option<PathBuf>,
    },
    /// Rewrite and apply an update operation to a document
    Apply {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        doc: PathBuf,
        #[arg(long)]
        op: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        access: Option<PathBuf>,
        /// Write the edited document here (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Edit the input document in place
        #[arg(long, conflicts_with = "out")]
        in_place: bool,
        /// Report affected nodes without writing anything
        #[arg(long)]
        dry_run: bool,
    },
    /// Materialize the security view of a document
    View {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        doc: PathBuf,
        /// Read-access specification
        #[arg(long)]
        access: PathBuf,
        /// Write the view here (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_dtd(path: &Path) -> Result<Arc<Dtd>, String> {
    Ok(Arc::new(parse_dtd(&read(path)?).map_err(|e| e.to_string())?))
}

fn load_doc(path: &Path) -> Result<XmlTree, String> {
    parse_xml(&read(path)?).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Validate { common, doc } => {
            let dtd = load_dtd(&common.dtd)?;
            let tree = load_doc(&doc)?;
            let report = validate(&tree, &dtd);
            for violation in report.violations() {
                match common.format {
                    Format::Text => println!("{violation}"),
                    Format::Jsonl => println!(
                        "{}",
                        serde_json::json!({
                            "event": "violation",
                            "path": violation.path,
                            "detail": violation.to_string(),
                        })
                    ),
                }
            }
            match common.format {
                Format::Text => println!(
                    "{}",
                    if report.conforming() { "conforming" } else { "not conforming" }
                ),
                Format::Jsonl => println!(
                    "{}",
                    serde_json::json!({
                        "event": "summary",
                        "conforming": report.conforming(),
                        "violations": report.violations().len(),
                    })
                ),
            }
            Ok(if report.conforming() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Rewrite { common, op, policy, access } => {
            let dtd = load_dtd(&common.dtd)?;
            let operation = parse_update(&read(&op)?).map_err(|e| e.to_string())?;
            let spec = parse_policy(&read(&policy)?, dtd.clone()).map_err(|e| e.to_string())?;
            let rewritten = match access {
                None => rewrite_update(&spec, &operation),
                Some(access_path) => {
                    let access_spec = parse_access(&read(&access_path)?, dtd.clone())
                        .map_err(|e| e.to_string())?;
                    let view = SecurityView::derive(access_spec);
                    secure_update(&view, &spec, &operation).map_err(|e| e.to_string())?
                }
            };
            match common.format {
                Format::Text => println!("{rewritten}"),
                Format::Jsonl => println!(
                    "{}",
                    serde_json::json!({ "event": "rewritten", "op": rewritten.to_string() })
                ),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Apply { common, doc, op, policy, access, out, in_place, dry_run } => {
            let dtd = load_dtd(&common.dtd)?;
            let tree = load_doc(&doc)?;
            let operation = parse_update(&read(&op)?).map_err(|e| e.to_string())?;
            let spec = parse_policy(&read(&policy)?, dtd.clone()).map_err(|e| e.to_string())?;
            let rewritten = match access {
                None => rewrite_update(&spec, &operation),
                Some(access_path) => {
                    let access_spec = parse_access(&read(&access_path)?, dtd.clone())
                        .map_err(|e| e.to_string())?;
                    let view = SecurityView::derive(access_spec);
                    secure_update(&view, &spec, &operation).map_err(|e| e.to_string())?
                }
            };
            let (edited, report) = apply_update(&dtd, &tree, &rewritten);
            print_apply_report(&report, common.format);
            if !report.accepted() {
                return Ok(ExitCode::from(1));
            }
            if !dry_run {
                let serialized = serialize_xml(&edited);
                if in_place {
                    fs::write(&doc, serialized).map_err(|e| e.to_string())?;
                } else if let Some(out_path) = out {
                    fs::write(&out_path, serialized).map_err(|e| e.to_string())?;
                } else {
                    match common.format {
                        Format::Text => print!("{serialized}"),
                        Format::Jsonl => println!(
                            "{}",
                            serde_json::json!({ "event": "document", "xml": serialized })
                        ),
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::View { common, doc, access, out } => {
            let dtd = load_dtd(&common.dtd)?;
            let tree = load_doc(&doc)?;
            let access_spec =
                parse_access(&read(&access)?, dtd.clone()).map_err(|e| e.to_string())?;
            let (view, _mapping) = extract_view(&access_spec, &tree);
            let serialized = serialize_xml(&view);
            match out {
                Some(out_path) => fs::write(&out_path, serialized).map_err(|e| e.to_string())?,
                None => print!("{serialized}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_apply_report(report: &ApplyReport, format: Format) {
    let status = match &report.status {
        ApplyStatus::Accepted => "accepted",
        ApplyStatus::AcceptedNoOp => "accepted-no-op",
        ApplyStatus::DynamicError(_) => "dynamic-error",
        ApplyStatus::RejectedInvalid(_) => "rejected-invalid",
    };
    let reason = match &report.status {
        ApplyStatus::DynamicError(msg) => Some(msg.clone()),
        ApplyStatus::RejectedInvalid(violations) => Some(
            violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        ),
        _ => None,
    };
    match format {
        Format::Text => {
            eprintln!("{status}: {} nodes affected", report.affected_paths.len());
            for path in &report.affected_paths {
                eprintln!("  {path}");
            }
            if let Some(reason) = reason {
                eprintln!("reason: {reason}");
            }
        }
        Format::Jsonl => {
            println!(
                "{}",
                serde_json::json!({
                    "event": "apply",
                    "status": status,
                    "affected": report.affected_paths,
                    "reason": reason,
                })
            );
        }
    }
}
