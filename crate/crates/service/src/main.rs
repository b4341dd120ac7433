use std::io::{self, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use convroutine::backend::ScriptedBackend;
use convroutine::clock::{Clock, FixedClock, SystemClock};
use convroutine::procedure::{emit_flowchart, extract_report_steps, parse_procedure, validate_trace};
use convroutine::replay::{replay_succeeded, run_dialog, ReplayInputs};
use convroutine::telemetry::{usage_csv, usage_series, EventStore, JsonlStore};
use convroutine_service::config::{BackendKind, Config};
use convroutine_service::repl::{Repl, ReplOptions};
use convroutine_service::runtime::{build_scenario, script_for, BackendFactory};
use convroutine_service::server;

#[derive(Parser)]
#[command(name = "agent", version, about = "Run conversation-routine agents")]
struct Cli {
    /// JSON config file; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// booking, troubleshooting, or comma-separated agent manifest paths.
    #[arg(long, global = true)]
    scenario: Option<String>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Script for the scripted backend.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// Pin the tools' clock, e.g. 2024-12-18T18:40:00+01:00.
    #[arg(long, global = true)]
    now: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    sessions_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the HTTP/WebSocket API.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Chat in the terminal; `/quit` ends the session.
    Repl {
        #[arg(long)]
        no_color: bool,
    },
    /// Run a dialog from an inputs file against a script; exit 1 on mismatch.
    Replay {
        /// JSON list of user messages, or {scenario, now, seed, messages}.
        #[arg(long)]
        inputs: PathBuf,
        /// Also write the event log under the sessions directory.
        #[arg(long)]
        record: bool,
    },
    /// Check a report's [step] markers against a procedure (exit 0 valid, 1 invalid, 2 error).
    ValidateTrace { procedure: PathBuf, report: PathBuf },
    /// Print a procedure as a Mermaid flowchart.
    EmitFlowchart {
        procedure: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print a recorded session's per-call token usage.
    ExportUsage {
        session_id: String,
        #[arg(long, value_enum, default_value_t = UsageFormat::Csv)]
        format: UsageFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum UsageFormat {
    Csv,
    Json,
}

fn config_from(cli: &Cli) -> anyhow::Result<Config> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = &cli.scenario {
        c.scenario = s.clone();
    }
    if let Some(b) = cli.backend {
        c.backend = b;
    }
    if let Some(s) = &cli.script {
        c.script = Some(s.clone());
    }
    if let Some(n) = &cli.now {
        c.now = Some(n.clone());
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(d) = &cli.sessions_dir {
        c.sessions_dir = d.clone();
    }
    if let Command::Serve { listen: Some(l) } = &cli.command {
        c.listen_addr = l.clone();
    }
    c.validate()?;
    Ok(c)
}

fn telemetry_clock(config: &Config) -> anyhow::Result<Arc<dyn Clock>> {
    Ok(match &config.now {
        Some(n) => Arc::new(FixedClock::parse(n).map_err(|_| anyhow!("bad --now {n:?}"))?),
        None => Arc::new(SystemClock),
    })
}

fn new_session_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

fn repl(config: &Config, no_color: bool) -> anyhow::Result<ExitCode> {
    let kind = config.scenario_kind()?;
    let scenario = build_scenario(&kind, &config.scenario_options()?, config.default_model.as_deref())?;
    let backend = BackendFactory::from_config(config, &kind)?.make();
    let store: Arc<dyn EventStore> = Arc::new(JsonlStore::open(&config.sessions_dir)?);
    let interactive = io::stdin().is_terminal();
    let session_id = new_session_id();
    eprintln!("session {session_id} ({}), /quit to end", kind.name());
    let r = Repl {
        scenario: &scenario,
        backend,
        store,
        clock: telemetry_clock(config)?,
        session_id,
        options: ReplOptions {
            color: interactive && io::stdout().is_terminal() && !no_color,
            echo: !interactive,
        },
    };
    r.run(io::stdin().lock(), &mut io::stdout().lock())?;
    Ok(ExitCode::SUCCESS)
}

fn replay(config: &Config, inputs_path: &Path, record: bool) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(inputs_path).with_context(|| format!("reading {}", inputs_path.display()))?;
    let inputs = ReplayInputs::parse(&text)?;
    let mut config = config.clone();
    // Inputs may pin scenario, clock and seed; explicit flags were already
    // folded into the config and the inputs file wins only where it speaks.
    if let Some(s) = &inputs.scenario {
        config.scenario = s.clone();
    }
    let kind = config.scenario_kind()?;
    let opts = inputs.apply(config.scenario_options()?)?;
    let scenario = build_scenario(&kind, &opts, config.default_model.as_deref())?;
    let backend = ScriptedBackend::new(script_for(config.script.as_deref(), &kind)?);
    let store: Arc<dyn EventStore> = if record {
        Arc::new(JsonlStore::open(&config.sessions_dir)?)
    } else {
        Arc::new(convroutine::telemetry::MemoryStore::default())
    };
    let id = new_session_id();
    let report = run_dialog(&scenario, &backend, &inputs.messages, &id, store, opts.clock.clone());
    print!("{}", report.transcript());
    let unused = backend.remaining();
    let ok = replay_succeeded(&report) && unused == 0;
    if let Some((turn, e)) = report.first_error() {
        eprintln!("first mismatch at input {}: {e}", turn + 1);
    } else if unused > 0 {
        eprintln!("script has {unused} unused step(s)");
    }
    if let Some(e) = &report.telemetry_error {
        eprintln!("telemetry: {e}");
    }
    if record {
        eprintln!("session {id} recorded under {}", config.sessions_dir.display());
    }
    eprintln!(
        "{} turn(s), {} backend call(s), {} tokens, {:?}",
        report.turns.len(),
        report.session.usage_log.len(),
        report.session.total_tokens(),
        report.elapsed
    );
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn validate_trace_cmd(procedure: &Path, report: &Path) -> anyhow::Result<ExitCode> {
    let proc_text = std::fs::read_to_string(procedure).with_context(|| format!("reading {}", procedure.display()))?;
    let report_text = std::fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
    let graph = parse_procedure(&proc_text).with_context(|| format!("parsing {}", procedure.display()))?;
    let steps = extract_report_steps(&report_text);
    let v = validate_trace(&graph, &steps);
    println!("trace: {steps:?}");
    if v.valid {
        println!(
            "valid; {}",
            if v.reached_terminal {
                "reached the end of the procedure"
            } else {
                "stopped before the end"
            }
        );
        return Ok(ExitCode::SUCCESS);
    }
    match v.first_violation {
        Some(x) => match x.from {
            Some(from) => println!(
                "invalid at position {}: {from} -> {} is not a transition",
                x.index, x.to
            ),
            None => println!(
                "invalid: trace starts at {}, procedure starts at {}",
                x.to, graph.start_id
            ),
        },
        None => println!("invalid: the report has no [step] markers"),
    }
    Ok(ExitCode::from(1))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::ValidateTrace { procedure, report } => return validate_trace_cmd(procedure, report),
        Command::EmitFlowchart { procedure, out } => {
            let text =
                std::fs::read_to_string(procedure).with_context(|| format!("reading {}", procedure.display()))?;
            let chart = emit_flowchart(&parse_procedure(&text)?);
            match out {
                Some(p) => std::fs::write(p, chart)?,
                None => io::stdout().write_all(chart.as_bytes())?,
            }
            return Ok(ExitCode::SUCCESS);
        }
        _ => {}
    }
    let config = config_from(&cli)?;
    match cli.command {
        Command::Serve { .. } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(config))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Repl { no_color } => repl(&config, no_color),
        Command::Replay { inputs, record } => replay(&config, &inputs, record),
        Command::ExportUsage { session_id, format } => {
            let store = JsonlStore::open(&config.sessions_dir)?;
            let series = usage_series(&store.load(&session_id)?);
            match format {
                UsageFormat::Csv => print!("{}", usage_csv(&series)),
                UsageFormat::Json => println!("{}", serde_json::to_string_pretty(&series)?),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateTrace { .. } | Command::EmitFlowchart { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
