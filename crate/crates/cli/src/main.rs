mod http;

use std::fs::File;
use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::json;
use sitestream_core::api::{Api, ApiRequest, Platform, PlatformConfig};
use sitestream_core::cep::parse_rules;
use sitestream_core::sim::{ecdf_csv, latency_report, run_scenario, RunOptions, ScenarioConfig, ScenarioTrace};

#[derive(Parser)]
#[command(name = "sitestream", version, about = "Building sensor stream platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the platform and serve the query API over HTTP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's listen address.
        #[arg(long)]
        listen: Option<String>,
        /// NDJSON of `{"topic", "payload"}` lines to publish before serving; `-` for stdin.
        #[arg(long)]
        ingest: Option<PathBuf>,
        /// Exit after answering this many connections.
        #[arg(long)]
        max_requests: Option<usize>,
    },
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
    /// Room-bounded heatmap of one floor from a data directory.
    Heatmap {
        #[arg(long)]
        floor: i32,
        #[arg(long)]
        feature: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        /// Cell size in metres.
        #[arg(long)]
        cell: Option<f64>,
    },
    Rules {
        #[command(subcommand)]
        command: RulesCommand,
    },
    /// Rebuild the stores from a data directory and optionally query them.
    Replay {
        #[arg(long)]
        data_dir: PathBuf,
        /// API targets to answer from the rebuilt stores, e.g. `/bim/get/FE11`.
        #[arg(long = "get")]
        get: Vec<String>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run a scenario file end to end.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for trace.ndjson and ground_truth.ndjson.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also file the delivered readings as day shards here.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Per-stage latency statistics of a trace.
    Latency {
        #[arg(long)]
        trace: PathBuf,
        /// Write the empirical CDF of every stage as CSV.
        #[arg(long)]
        ecdf: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum RulesCommand {
    /// Parse a rule file and report syntax errors.
    Check {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), String> {
    std::fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string(v).expect("json"));
}

fn serve(config: &Path, listen: Option<String>, ingest: Option<PathBuf>, max_requests: Option<usize>) -> Result<(), String> {
    let mut cfg = PlatformConfig::load(config)?;
    if let Some(l) = listen {
        cfg.listen = l;
    }
    let listener = TcpListener::bind(&cfg.listen).map_err(|e| format!("bind {}: {e}", cfg.listen))?;
    let platform = Platform::start(cfg)?;
    if let Some(path) = ingest {
        let (ok, bad) = if path.as_os_str() == "-" {
            platform.ingest_ndjson(std::io::stdin().lock())
        } else {
            let f = File::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            platform.ingest_ndjson(BufReader::new(f))
        }
        .map_err(|e| e.to_string())?;
        platform.wait_idle(Duration::from_secs(30));
        eprintln!("ingested {ok} messages, {bad} unreadable lines");
    }
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    println!("listening on http://{addr}");
    std::io::stdout().flush().ok();
    let served = http::serve(platform.api(), listener, max_requests).map_err(|e| e.to_string());
    platform.shutdown();
    served
}

fn sim_run(scenario: &Path, seed: Option<u64>, out: Option<PathBuf>, data_dir: Option<PathBuf>, as_json: bool) -> Result<(), String> {
    let cfg = ScenarioConfig::load(scenario).map_err(|e| e.to_string())?;
    let trace = run_scenario(&cfg, &RunOptions { data_dir, seed }).map_err(|e| e.to_string())?;
    if let Some(dir) = &out {
        trace.write(dir).map_err(|e| e.to_string())?;
    }
    let summary = json!({
        "emitted": trace.emitted,
        "delivered": trace.records.len(),
        "deadlettered": trace.deadlettered,
        "ground_truth": trace.ground_truth.len(),
        "detected": trace.detected_events().len(),
        "conserved": trace.conserved(),
    });
    if as_json {
        print_json(&summary);
    } else {
        println!(
            "emitted {} delivered {} dead-lettered {} events {}/{}",
            trace.emitted,
            trace.records.len(),
            trace.deadlettered,
            trace.detected_events().len(),
            trace.ground_truth.len()
        );
    }
    if trace.conserved() {
        Ok(())
    } else {
        Err("message count not conserved".into())
    }
}

fn report_latency(trace: &Path, ecdf: Option<PathBuf>, as_json: bool) -> Result<(), String> {
    let records = ScenarioTrace::read_records(trace).map_err(|e| e.to_string())?;
    let rep = latency_report(&records).map_err(|e| e.to_string())?;
    if let Some(path) = ecdf {
        write(&path, ecdf_csv(&records).map_err(|e| e.to_string())?.as_bytes())?;
    }
    if as_json {
        print_json(&serde_json::to_value(&rep).expect("json"));
    } else {
        print!("{}", rep.to_csv());
    }
    Ok(())
}

fn heatmap(floor: i32, feature: &str, out: &Path, data_dir: &Path, cell: Option<f64>) -> Result<(), String> {
    let (api, _) = Api::from_data_dir(data_dir)?;
    let mut target = format!("/heatmap/get/{floor}/{feature}");
    if let Some(c) = cell {
        target.push_str(&format!("?cell={c}"));
    }
    let r = api.handle(&ApiRequest::get(&target));
    if r.status != 200 {
        return Err(format!("{target}: {} {}", r.status, r.body_text().trim_end()));
    }
    write(out, &r.body)
}

fn rules_check(file: &Path, as_json: bool) -> Result<(), String> {
    match parse_rules(&read(file)?) {
        Ok(rules) => {
            let names: Vec<&str> = rules.iter().map(|r| r.name.as_str()).collect();
            if as_json {
                print_json(&json!({"ok": true, "rules": names}));
            } else {
                println!("{} rules ok: {}", names.len(), names.join(", "));
            }
            Ok(())
        }
        Err(e) => {
            if as_json {
                print_json(&json!({"ok": false, "error": e.to_string()}));
            }
            Err(format!("{}: {e}", file.display()))
        }
    }
}

fn replay(data_dir: &Path, targets: &[String], as_json: bool) -> Result<(), String> {
    let (api, bad) = Api::from_data_dir(data_dir)?;
    let stats = api.handle(&ApiRequest::get("/stats")).body_json().unwrap_or_default();
    if as_json {
        print_json(&json!({"bad_lines": bad, "stats": stats}));
    } else {
        println!(
            "revision {} sensors with readings {} unreadable lines {bad}",
            stats["revision"], stats["sensors_with_readings"]
        );
    }
    let mut failed = false;
    for t in targets {
        let r = api.handle(&ApiRequest::get(t));
        failed |= r.status != 200;
        std::io::stdout().write_all(&r.body).map_err(|e| e.to_string())?;
    }
    if failed {
        Err("one or more requests failed".into())
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config, listen, ingest, max_requests } => serve(&config, listen, ingest, max_requests),
        Command::Sim { command: SimCommand::Run { scenario, seed, out, data_dir, json } } => {
            sim_run(&scenario, seed, out, data_dir, json)
        }
        Command::Report { command: ReportCommand::Latency { trace, ecdf, json } } => report_latency(&trace, ecdf, json),
        Command::Heatmap { floor, feature, out, data_dir, cell } => heatmap(floor, &feature, &out, &data_dir, cell),
        Command::Rules { command: RulesCommand::Check { file, json } } => rules_check(&file, json),
        Command::Replay { data_dir, get, json } => replay(&data_dir, &get, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sitestream: {e}");
            ExitCode::FAILURE
        }
    }
}
