//! `codetrail` command line.
//!
//! Exit codes: 0 success, 1 input error (unreadable or invalid logs, bad
//! flags or config), 2 runtime error (connection failures, rejected frames,
//! server I/O).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use codetrail_core::metrics::{aggregate, compute_metrics, summary_line, to_csv, SegmentationRules, SessionMetrics};
use codetrail_core::provenance::{label_session, ProvenanceConfig};
use codetrail_core::replay::ReplayError;
use codetrail_core::session_log::{from_ndjson, parse_session, LogError, SessionLog};
use codetrail_core::timeline::{build_timeline, ViewportHints};
use serde_json::json;
use thiserror::Error;

use crate::client::{replay_log, ClientError, ReplayOptions};
use crate::config::{load_provenance, ServerConfig};
use crate::hub::{Hub, HubSettings};

#[derive(Debug, Parser)]
#[command(name = "codetrail", version, about = "Replay, attribute and monitor coding-session logs")]
pub struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ProvenanceArgs {
    /// Provenance config file (TOML, or JSON by extension).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Similarity threshold override.
    #[arg(long)]
    pub theta: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute provenance metrics for logs or directories of logs.
    Analyze {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        provenance: ProvenanceArgs,
        #[arg(long, value_enum, default_value = "json")]
        format: OutputFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append the mean over all sessions.
        #[arg(long)]
        aggregate: bool,
    },
    /// Parse and fully replay a log, reporting the first violation.
    Validate {
        input: PathBuf,
        #[command(flatten)]
        provenance: ProvenanceArgs,
    },
    /// Write the timeline model of one file of a log.
    ExportTimeline {
        input: PathBuf,
        /// File within the session; defaults to the primary file.
        #[arg(long = "file")]
        file_path: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        provenance: ProvenanceArgs,
        /// First and last visible line for the projection indicator.
        #[arg(long, num_args = 2, value_names = ["FIRST", "LAST"])]
        visible_lines: Option<Vec<usize>>,
    },
    /// Stream a log into a running server as its student.
    Replay {
        input: PathBuf,
        /// Server address, `host:port` or a ws:// URL.
        #[arg(long)]
        server: String,
        /// Time compression; 0 sends as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Student token; defaults to CODETRAIL_STUDENT_TOKEN.
        #[arg(long)]
        token: Option<String>,
    },
    /// Run the monitoring server.
    Serve {
        /// Server config file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        journal_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn log_error_kind(e: &LogError) -> &'static str {
    match e {
        LogError::MalformedJson(_) => "MalformedJson",
        LogError::SchemaViolation { .. } => "SchemaViolation",
        LogError::SeqOrderViolation { .. } => "SeqOrderViolation",
        LogError::TimestampRegression { .. } => "TimestampRegression",
    }
}

fn replay_error_kind(e: &ReplayError) -> &'static str {
    match e {
        ReplayError::OffsetOutOfRange { .. } => "OffsetOutOfRange",
        ReplayError::RemovedTextMismatch { .. } => "RemovedTextMismatch",
        ReplayError::UnknownFile(_) => "UnknownFile",
    }
}

fn replay_failure(path: &Path, e: &ReplayError) -> CliError {
    CliError::Input(format!("{}: {}: {e}", path.display(), replay_error_kind(e)))
}

/// Reads a session log; `.ndjson` files use the streaming format.
pub fn read_log(path: &Path) -> Result<SessionLog, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "ndjson") {
        let text = String::from_utf8(bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        from_ndjson(&text)
    } else {
        parse_session(&bytes)
    };
    parsed.map_err(|e| CliError::Input(format!("{}: {}: {e}", path.display(), log_error_kind(&e))))
}

fn provenance_config(args: &ProvenanceArgs) -> Result<ProvenanceConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => load_provenance(p).map_err(|e| CliError::Input(e.to_string()))?,
        None => ProvenanceConfig::default(),
    };
    if let Some(t) = args.theta {
        cfg = cfg.with_threshold(t);
        cfg.validate().map_err(|e| CliError::Input(format!("--theta: {e}")))?;
    }
    Ok(cfg)
}

/// Log files named by `inputs`; directories contribute their `.json` and
/// `.ndjson` files in name order.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "json" || x == "ndjson"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Input("no session logs found".into()));
    }
    Ok(out)
}

/// Offline metrics for one log.
pub fn analyze_log(log: &SessionLog, cfg: &ProvenanceConfig) -> Result<SessionMetrics, ReplayError> {
    let labeled = label_session(log, cfg)?;
    Ok(compute_metrics(log, &labeled, &SegmentationRules::default()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports always serialize");
    s.push('\n');
    s
}

fn analyze(
    inputs: &[PathBuf],
    provenance: &ProvenanceArgs,
    format: OutputFormat,
    out: Option<&Path>,
    with_aggregate: bool,
) -> Result<(), CliError> {
    let cfg = provenance_config(provenance)?;
    let files = expand_inputs(inputs)?;
    let mut all = Vec::with_capacity(files.len());
    for f in &files {
        let log = read_log(f)?;
        let m = analyze_log(&log, &cfg).map_err(|e| replay_failure(f, &e))?;
        tracing::info!("{}", summary_line(&m));
        all.push(m);
    }
    let text = match format {
        OutputFormat::Csv => to_csv(&all, with_aggregate),
        OutputFormat::Json if inputs.len() == 1 && !inputs[0].is_dir() && !with_aggregate => {
            pretty(&all[0])
        }
        OutputFormat::Json => {
            let mut v = json!({ "sessions": all });
            if with_aggregate {
                v["aggregate"] = serde_json::to_value(aggregate(&all)).expect("aggregates serialize");
            }
            pretty(&v)
        }
    };
    write_output(out, &text)
}

fn validate(input: &Path, provenance: &ProvenanceArgs) -> Result<(), CliError> {
    let cfg = provenance_config(provenance)?;
    let log = read_log(input)?;
    let labeled = label_session(&log, &cfg).map_err(|e| replay_failure(input, &e))?;
    println!(
        "ok: {}: {} events, {} edits, {} labelled insertions, {} files",
        input.display(),
        log.events.len(),
        log.edit_count(),
        labeled.labels.len(),
        labeled.documents.len()
    );
    Ok(())
}

fn export_timeline(
    input: &Path,
    file_path: Option<&str>,
    out: Option<&Path>,
    provenance: &ProvenanceArgs,
    visible: Option<&[usize]>,
) -> Result<(), CliError> {
    let cfg = provenance_config(provenance)?;
    let log = read_log(input)?;
    let labeled = label_session(&log, &cfg).map_err(|e| replay_failure(input, &e))?;
    let mut viewport = ViewportHints::default();
    if let Some([a, b]) = visible {
        viewport.visible_lines = Some((*a, *b));
    }
    let model = build_timeline(&log, &labeled, file_path, &viewport).map_err(|e| replay_failure(input, &e))?;
    write_output(out, &pretty(&model))
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn replay(input: &Path, server: &str, speed: f64, token: Option<String>) -> Result<(), CliError> {
    if !(speed >= 0.0 && speed.is_finite()) {
        return Err(CliError::Input(format!("--speed must be a finite number >= 0, got {speed}")));
    }
    let log = read_log(input)?;
    let token = token.or_else(|| std::env::var("CODETRAIL_STUDENT_TOKEN").ok());
    let opts = ReplayOptions { speed, token };
    let report = runtime()?.block_on(replay_log(server, &log, &opts)).map_err(|e| match e {
        ClientError::ServerRejectedFrame(p) => CliError::Runtime(format!(
            "{}: server rejected frame{}: {:?}: {}",
            input.display(),
            p.seq.map(|s| format!(" at seq {s}")).unwrap_or_default(),
            p.code,
            p.message
        )),
        other => CliError::Runtime(other.to_string()),
    })?;
    println!(
        "replayed {} events of {} (last seq {}) in {:.3} s",
        report.events_sent,
        log.session_id,
        report.last_seq,
        report.elapsed.as_secs_f64()
    );
    Ok(())
}

fn serve(config: Option<&Path>, listen: Option<String>, journal_dir: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(p) => ServerConfig::from_toml_file(p).map_err(|e| CliError::Input(e.to_string()))?,
        None => ServerConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())
        .map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(l) = listen {
        cfg.listen = l;
    }
    if let Some(d) = journal_dir {
        cfg.journal_dir = Some(d);
    }
    let settings = HubSettings {
        provenance: cfg.provenance().map_err(|e| CliError::Input(e.to_string()))?,
        rules: SegmentationRules::default(),
        journal_dir: cfg.journal_dir.clone(),
        student_token: cfg.student_token.clone(),
        instructor_token: cfg.instructor_token.clone(),
    };
    let provider = cfg.provider.build().map_err(|e| CliError::Input(e.to_string()))?;
    let hub = Arc::new(Hub::open(settings, provider).map_err(|e| CliError::Runtime(e.to_string()))?);
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.listen)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot listen on {}: {e}", cfg.listen)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("codetrail listening on {addr}");
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        crate::http::serve(listener, hub, shutdown)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze {
            inputs,
            provenance,
            format,
            out,
            aggregate,
        } => analyze(&inputs, &provenance, format, out.as_deref(), aggregate),
        Command::Validate { input, provenance } => validate(&input, &provenance),
        Command::ExportTimeline {
            input,
            file_path,
            out,
            provenance,
            visible_lines,
        } => export_timeline(
            &input,
            file_path.as_deref(),
            out.as_deref(),
            &provenance,
            visible_lines.as_deref(),
        ),
        Command::Replay {
            input,
            server,
            speed,
            token,
        } => replay(&input, &server, speed, token),
        Command::Serve {
            config,
            listen,
            journal_dir,
        } => serve(config.as_deref(), listen, journal_dir),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "codetrail", "analyze", "a.json", "dir", "--format", "csv", "--aggregate", "--theta", "0.9",
        ])
        .unwrap();
        match cli.command {
            Command::Analyze {
                inputs,
                format,
                aggregate,
                provenance,
                ..
            } => {
                assert_eq!(inputs.len(), 2);
                assert_eq!(format, OutputFormat::Csv);
                assert!(aggregate);
                assert_eq!(provenance.theta, Some(0.9));
            }
            other => panic!("parsed as {other:?}"),
        }
        let cli = Cli::try_parse_from(["codetrail", "replay", "x.json", "--server", "h:1", "--speed", "0"]).unwrap();
        assert!(matches!(cli.command, Command::Replay { speed, .. } if speed == 0.0));
    }

    #[test]
    fn theta_out_of_range_is_an_input_error() {
        let args = ProvenanceArgs {
            config: None,
            theta: Some(0.0),
        };
        assert_eq!(provenance_config(&args).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn directories_expand_to_sorted_logs() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["b.json", "a.ndjson", "notes.txt"] {
            std::fs::write(dir.path().join(n), "").unwrap();
        }
        let files = expand_inputs(&[dir.path().to_path_buf()]).unwrap();
        let names: Vec<_> = files.iter().map(|f| f.file_name().unwrap().to_str().unwrap()).collect();
        assert_eq!(names, ["a.ndjson", "b.json"]);
    }
}
