use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use labloom::builtin::with_builtins;
use labloom::datastore::{export_scalars, ArtifactRecord, ArtifactStore, ExportFormat};
use labloom::dsl::{parse_workflow, validate, ModuleKind, WorkflowSpec};
use labloom::engine::{
    default_runs_dir, latest_checkpoint, make_headless, EngineError, NodeStatus, Phase, Run, RunManager, RunOptions,
    RunState,
};
use labloom::plugin::PluginRegistry;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "labloom", version, about = "Validate, run and steer labloom workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a workflow document against the installed plugins.
    Validate {
        spec: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Execute a workflow to completion.
    Run {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Every interaction times out at once and takes its default.
        #[arg(long)]
        headless: bool,
        /// Also expose the control API on this address while the run executes.
        #[arg(long, value_name = "ADDR")]
        serve: Option<String>,
        #[arg(long)]
        run_id: Option<String>,
        /// Defaults to $LABLOOM_RUNS_DIR, then ./runs.
        #[arg(long)]
        runs_dir: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Continue a paused or interrupted run from a checkpoint file.
    Resume {
        checkpoint: PathBuf,
        #[arg(long, value_name = "ADDR")]
        serve: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Show the state recorded in a run directory.
    Status {
        run_dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Answer a pending interaction of a stopped run.
    Answer {
        run_dir: PathBuf,
        request_id: String,
        /// Parsed as JSON when possible, otherwise taken as a string.
        answer: String,
    },
    /// Write every scalar artifact of a run as one table.
    Export {
        run_dir: PathBuf,
        /// `-` writes to stdout.
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Exit status: 1 for a failed run or invalid input, 2 for usage and I/O problems.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn run(message: impl Into<String>) -> Failure {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Failure {
        match e {
            EngineError::Io(_) => Failure::io(e.to_string()),
            _ => Failure::run(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    let registry = Arc::new(with_builtins());
    match cmd {
        Command::Validate { spec, json } => cmd_validate(&registry, &spec, json),
        Command::Run {
            spec,
            seed,
            headless,
            serve,
            run_id,
            runs_dir,
            json,
        } => {
            let parsed = load_valid(&registry, &spec)?;
            let parsed = if headless { make_headless(&parsed, &registry) } else { parsed };
            let opts = RunOptions {
                run_id,
                seed,
                base_dir: spec.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            let runs_dir = runs_dir.unwrap_or_else(default_runs_dir);
            let run = Run::start(Arc::clone(&registry), parsed, &runs_dir, opts)?;
            drive(&registry, run, serve.as_deref(), json)
        }
        Command::Resume { checkpoint, serve, json } => {
            if !checkpoint.is_file() {
                return Err(Failure::io(format!("{}: no such checkpoint", checkpoint.display())));
            }
            let run = Run::resume_from(Arc::clone(&registry), &checkpoint)?;
            drive(&registry, run, serve.as_deref(), json)
        }
        Command::Status { run_dir, json } => {
            let run = open_run(&registry, &run_dir)?;
            let s = run.state();
            if json {
                println!("{}", summary_json(s, run.store().records()));
            } else {
                println!("run_id={}", s.run_id);
                println!("phase={}", s.phase.as_str());
                println!("iteration={}", s.current_iteration());
                println!("artifacts={}", run.store().len());
                for r in &s.pending_interactions {
                    println!("pending {} {} {}", r.request_id, r.node_id, r.prompt);
                }
                if let Some(f) = &s.failure {
                    println!("failure={f}");
                }
            }
            Ok(())
        }
        Command::Answer {
            run_dir,
            request_id,
            answer,
        } => {
            let mut run = open_run(&registry, &run_dir)?;
            if run.phase() == Phase::Running {
                run.pause()?;
            }
            let value = serde_json::from_str(&answer).unwrap_or(Value::String(answer));
            run.answer(&request_id, value)?;
            let ck = latest_checkpoint(run.run_dir()).expect("answering a paused run checkpoints it");
            println!("answered {request_id}");
            println!("checkpoint={}", ck.display());
            Ok(())
        }
        Command::Export { run_dir, out, format } => {
            if !run_dir.join("provenance.jsonl").is_file() {
                return Err(Failure::io(format!("{}: not a run directory", run_dir.display())));
            }
            let store = ArtifactStore::open(&run_dir).map_err(|e| Failure::run(e.to_string()))?;
            let fmt = match format {
                Format::Csv => ExportFormat::Csv,
                Format::Json => ExportFormat::Json,
            };
            let table = export_scalars(&store, fmt).map_err(|e| Failure::run(e.to_string()))?;
            if out == Path::new("-") {
                print!("{table}");
            } else {
                std::fs::write(&out, table).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
            }
            Ok(())
        }
    }
}

fn read_spec(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn cmd_validate(registry: &PluginRegistry, path: &Path, json: bool) -> Result<(), Failure> {
    let text = read_spec(path)?;
    let spec = match parse_workflow(&text) {
        Ok(s) => s,
        Err(e) => {
            if json {
                println!("{}", json!({"ok": false, "issues": [{"severity": "error", "location": "document", "message": e.to_string()}]}));
            } else {
                println!("ok=false\nerror [document]: {e}");
            }
            return Err(Failure::run("invalid workflow"));
        }
    };
    let report = validate(&spec, registry);
    if json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        print!("{report}");
    }
    if report.ok {
        Ok(())
    } else {
        Err(Failure::run("invalid workflow"))
    }
}

fn load_valid(registry: &PluginRegistry, path: &Path) -> Result<WorkflowSpec, Failure> {
    let text = read_spec(path)?;
    let spec = parse_workflow(&text).map_err(|e| Failure::run(e.to_string()))?;
    let report = validate(&spec, registry);
    if !report.ok {
        for i in report.errors() {
            eprintln!("{i}");
        }
        return Err(Failure::run("invalid workflow"));
    }
    Ok(spec)
}

fn open_run(registry: &Arc<PluginRegistry>, run_dir: &Path) -> Result<Run, Failure> {
    let ck = latest_checkpoint(run_dir)
        .ok_or_else(|| Failure::io(format!("{}: no checkpoints found", run_dir.display())))?;
    Ok(Run::load(Arc::clone(registry), &ck)?)
}

/// Run in the foreground, or under a manager with the control API attached.
fn drive(registry: &Arc<PluginRegistry>, mut run: Run, serve: Option<&str>, json: bool) -> Result<(), Failure> {
    let (state, records) = match serve {
        None => {
            run.run_to_end()?;
            (run.state().clone(), run.store().records().to_vec())
        }
        Some(addr) => serve_until_done(registry, run, addr)?,
    };
    if json {
        println!("{}", summary_json(&state, &records));
    } else {
        print_summary(&state, &records);
    }
    match state.phase {
        Phase::Completed => Ok(()),
        _ => Err(Failure::run(match failed_node(&state) {
            Some(n) => format!("node '{n}' failed: {}", state.failure.clone().unwrap_or_default()),
            None => format!("run ended {}", state.phase.as_str()),
        })),
    }
}

fn serve_until_done(
    registry: &Arc<PluginRegistry>,
    run: Run,
    addr: &str,
) -> Result<(RunState, Vec<ArtifactRecord>), Failure> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::io(e.to_string()))?;
    let runs_dir = run.run_dir().parent().map(Path::to_path_buf).unwrap_or_default();
    let manager = Arc::new(RunManager::new(Arc::clone(registry), runs_dir));
    let listener = rt
        .block_on(tokio::net::TcpListener::bind(addr))
        .map_err(|e| Failure::io(format!("{addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Failure::io(e.to_string()))?;
    let id = manager.attach(run)?;
    eprintln!("serving http://{local}/api/runs/{id}");
    rt.spawn(labloom_server::serve(listener, Arc::clone(&manager)));
    loop {
        let phase = manager.wait(&id, Duration::from_secs(3600))?;
        let view = manager.view(&id)?;
        if let Some(e) = view.engine_error {
            return Err(Failure::run(e));
        }
        if phase.is_finished() {
            return Ok((view.state, view.artifacts));
        }
    }
}

fn failed_node(state: &RunState) -> Option<&str> {
    state
        .node_status
        .iter()
        .find(|(_, s)| **s == NodeStatus::Failed)
        .map(|(n, _)| n.as_str())
}

/// Latest artifact of every Output-node port.
fn outputs<'a>(state: &RunState, records: &'a [ArtifactRecord]) -> Vec<&'a ArtifactRecord> {
    let mut latest: Vec<&ArtifactRecord> = Vec::new();
    for r in records {
        if state.spec.node(&r.node_id).map(|n| n.kind) != Some(ModuleKind::Output) {
            continue;
        }
        match latest.iter_mut().find(|l| l.node_id == r.node_id && l.port == r.port) {
            Some(l) => *l = r,
            None => latest.push(r),
        }
    }
    latest
}

fn print_summary(state: &RunState, records: &[ArtifactRecord]) {
    println!("run_id={}", state.run_id);
    println!("phase={}", state.phase.as_str());
    println!("artifacts={}", records.len());
    for r in outputs(state, records) {
        println!("output {} {} {} {} {}", r.node_id, r.port, r.iteration, r.kind.as_str(), r.artifact_id);
    }
    if let Some(f) = &state.failure {
        println!("failure={f}");
    }
}

fn summary_json(state: &RunState, records: &[ArtifactRecord]) -> Value {
    json!({
        "run_id": state.run_id,
        "phase": state.phase.as_str(),
        "artifacts": records.len(),
        "outputs": outputs(state, records),
        "pending_interactions": state.pending_interactions,
        "failed_node": failed_node(state),
        "failure": state.failure,
    })
}
