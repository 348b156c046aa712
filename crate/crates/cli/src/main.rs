//! `stagelink`: validate, run, simulate, replay and measure shows.
//!
//! Exit codes: 0 success, 1 diagnostics (invalid input, replay
//! divergence), 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use stagelink_core::diag::Diagnostic;
use stagelink_core::engine::replay;
use stagelink_core::runlog::{header, parse_log, replay_inputs, to_jsonl, LogError, LogLine};
use stagelink_core::script::{compile_timeline, parse_script, validate_script, CueGraph, ShowScript};
use stagelink_core::sim::{check_scenario, compute_metrics, parse_scenario, simulate_graph, RunReport, Scenario};
use stagelink_server::Config;

#[derive(Parser)]
#[command(name = "stagelink", version, about = "Show control for mixed-reality performances")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a show script and report diagnostics.
    Validate { script: PathBuf },
    /// Run a show live: device TCP listener plus the operator HTTP API.
    Run {
        script: PathBuf,
        /// TOML configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the run log here (overrides the config file).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Simulate a scenario in virtual time.
    Sim {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the run report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the run log as JSON Lines.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Re-run the engine over a log and compare command streams byte for byte.
    Replay {
        log: PathBuf,
        script: PathBuf,
        /// Write the replayed command lines here.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Compute a run report from a log and its scenario.
    Metrics {
        log: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// A failure that is the input's fault rather than the program's.
struct Rejected;

type Outcome = Result<std::result::Result<(), Rejected>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Validate { script } => validate(&script),
        Cmd::Run { script, config, log } => run(&script, config.as_deref(), log),
        Cmd::Sim { scenario, seed, report, log } => sim(&scenario, seed, report.as_deref(), log.as_deref()),
        Cmd::Replay { log, script, emit } => replay_cmd(&log, &script, emit.as_deref()),
        Cmd::Metrics { log, scenario, report } => metrics(&log, &scenario, report.as_deref()),
    };
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Rejected)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn report_diags(path: &Path, diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("{}:{d}", path.display());
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Parse, validate and compile, printing diagnostics on the way.
fn load_show(path: &Path) -> Result<std::result::Result<(ShowScript, Arc<CueGraph>), Rejected>> {
    let script = match parse_script(&read(path)?) {
        Ok(s) => s,
        Err(d) => {
            report_diags(path, &d.0);
            return Ok(Err(Rejected));
        }
    };
    let diags = validate_script(&script);
    if !diags.is_empty() {
        report_diags(path, &diags);
        return Ok(Err(Rejected));
    }
    let graph = compile_timeline(&script).with_context(|| format!("{}: compile", path.display()))?;
    Ok(Ok((script, Arc::new(graph))))
}

fn load_log(path: &Path) -> Result<std::result::Result<(String, Vec<LogLine>), Rejected>> {
    let text = read(path)?;
    match parse_log(&text) {
        Ok(lines) => Ok(Ok((text, lines))),
        Err(e) => {
            match &e {
                LogError::Malformed { line, message } => {
                    eprintln!("{}:{line}: {} {message}", path.display(), e.code())
                }
                LogError::MissingHeader => eprintln!("{}: {} {e}", path.display(), e.code()),
            }
            Ok(Err(Rejected))
        }
    }
}

fn load_scenario_file(path: &Path) -> Result<std::result::Result<(Scenario, PathBuf), Rejected>> {
    match parse_scenario(&read(path)?) {
        Ok(sc) => {
            let script = path.parent().unwrap_or(Path::new(".")).join(&sc.script);
            Ok(Ok((sc, script)))
        }
        Err(d) => {
            report_diags(path, &d.0);
            Ok(Err(Rejected))
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn validate(path: &Path) -> Outcome {
    let (script, graph) = match load_show(path)? {
        Ok(v) => v,
        Err(r) => return Ok(Err(r)),
    };
    println!(
        "{}: ok ({} scenes, {} cues, {} devices)",
        path.display(),
        graph.scenes.len(),
        graph.cue_count(),
        script.roster.len()
    );
    Ok(Ok(()))
}

fn run(path: &Path, config: Option<&Path>, log: Option<PathBuf>) -> Outcome {
    let (_, graph) = match load_show(path)? {
        Ok(v) => v,
        Err(r) => return Ok(Err(r)),
    };
    let mut cfg = Config::load(config)?;
    if log.is_some() {
        cfg.log = log;
    }
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let rt = tokio::runtime::Runtime::new().context("cannot start the async runtime")?;
    rt.block_on(async {
        let server = stagelink_server::start(graph, cfg).await?;
        println!("devices on {}, operator API on http://{}", server.devices, server.http);
        tokio::signal::ctrl_c().await.context("waiting for ctrl-c")?;
        server.shutdown().await?;
        anyhow::Ok(())
    })?;
    Ok(Ok(()))
}

fn summary(r: &RunReport) -> String {
    let end = r.finished_at.map_or("did not finish".to_owned(), |t| format!("finished at {t} ms"));
    let skew = r.max_skew_ms.map_or("-".to_owned(), |s| format!("{s} ms"));
    let commands: usize = r.commands.values().sum();
    format!(
        "{}: {end}; {} events, {commands} commands, {} ignored, {} media timeouts, max skew {skew}",
        r.title, r.events, r.ignored, r.media_timeouts
    )
}

fn sim(path: &Path, seed: Option<u64>, report: Option<&Path>, log: Option<&Path>) -> Outcome {
    let (mut sc, script_path) = match load_scenario_file(path)? {
        Ok(v) => v,
        Err(r) => return Ok(Err(r)),
    };
    if let Some(s) = seed {
        sc.seed = s;
    }
    let (script, graph) = match load_show(&script_path)? {
        Ok(v) => v,
        Err(r) => return Ok(Err(r)),
    };
    let diags = check_scenario(&sc, &script);
    if !diags.is_empty() {
        report_diags(path, &diags);
        return Ok(Err(Rejected));
    }
    let run = simulate_graph(graph, &sc).context("simulation failed")?;
    let r = compute_metrics(&run.log, &sc).context("metrics")?;
    if let Some(p) = log {
        write(p, &to_jsonl(&run.log))?;
    }
    if let Some(p) = report {
        write(p, &serde_json::to_string_pretty(&r)?)?;
    }
    println!("{}", summary(&r));
    Ok(Ok(()))
}

fn replay_cmd(log: &Path, script: &Path, emit: Option<&Path>) -> Outcome {
    let (text, lines) = match load_log(log)? {
        Ok(v) => v,
        Err(r) => return Ok(Err(r)),
    };
    let (_, graph) = match load_show(script)? {
        Ok(v) => v,
        Err(r) => return Ok(Err(r)),
    };
    let h = match header(&lines) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("{}: {} {e}", log.display(), e.code());
            return Ok(Err(Rejected));
        }
    };
    let replayed = replay(graph, h.config(), h.start_at, &replay_inputs(&lines)).context("replay")?;
    let replayed: Vec<String> = replayed.into_iter().map(|c| LogLine::Command(c).to_json()).collect();
    if let Some(p) = emit {
        write(p, &replayed.iter().map(|l| format!("{l}\n")).collect::<String>())?;
    }
    // raw command lines, exactly as written
    let logged: Vec<&str> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .zip(&lines)
        .filter(|(_, l)| matches!(l, LogLine::Command(_)))
        .map(|(raw, _)| raw.trim_end_matches('\r'))
        .collect();
    for i in 0..logged.len().max(replayed.len()) {
        let (a, b) = (logged.get(i).copied(), replayed.get(i).map(String::as_str));
        if a != b {
            eprintln!("{}: divergence at command {}", log.display(), i + 1);
            eprintln!("  logged:   {}", a.unwrap_or("(none)"));
            eprintln!("  replayed: {}", b.unwrap_or("(none)"));
            return Ok(Err(Rejected));
        }
    }
    println!("{}: replay ok, {} commands identical", log.display(), logged.len());
    Ok(Ok(()))
}

fn metrics(log: &Path, scenario: &Path, report: Option<&Path>) -> Outcome {
    let (_, lines) = match load_log(log)? {
        Ok(v) => v,
        Err(r) => return Ok(Err(r)),
    };
    let (sc, _) = match load_scenario_file(scenario)? {
        Ok(v) => v,
        Err(r) => return Ok(Err(r)),
    };
    let r = match compute_metrics(&lines, &sc) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}: {} {e}", log.display(), e.code());
            return Ok(Err(Rejected));
        }
    };
    let json = serde_json::to_string_pretty(&r)?;
    match report {
        Some(p) => {
            write(p, &json)?;
            println!("{}", summary(&r));
        }
        None => println!("{json}"),
    }
    Ok(Ok(()))
}
