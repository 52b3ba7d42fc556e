use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use hsaudit::adapters::{OfflineTransport, RecordingTransport, Transport, UreqTransport};
use hsaudit::{run, RunConfig, Stage};

/// Run classifier-audit stages from a TOML config.
#[derive(Debug, Parser)]
#[command(name = "hsaudit", version)]
struct Args {
    /// Run configuration file.
    #[arg(long, required_unless_present = "make_synthetic")]
    config: Option<PathBuf>,
    /// ingest, score, bias, debias, annotate, scm, cluster, calibrate, metrics, report or all.
    #[arg(long, default_value = "all")]
    stage: Stage,
    /// Overrides `run.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Refuse every network request.
    #[arg(long)]
    offline: bool,
    /// Write the offline synthetic fixture (corpora, replies, config) into DIR and exit.
    #[arg(long, value_name = "DIR", conflicts_with = "config")]
    make_synthetic: Option<PathBuf>,
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string(v).expect("serializable"));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();

    if let Some(dir) = &args.make_synthetic {
        let seed = args.seed.unwrap_or(hsaudit::analysis::DEFAULT_SEED);
        return match hsaudit::synthetic::write_fixture(dir, seed) {
            Ok(cfg) => {
                print(&json!({ "status": "ok", "config": cfg }));
                ExitCode::SUCCESS
            }
            Err(e) => {
                print(&json!({ "status": "error", "error": "IoFailure", "message": e.to_string(), "exit_code": 4 }));
                ExitCode::from(4)
            }
        };
    }

    let path = args.config.expect("required by clap");
    let mut config = match RunConfig::load(&path) {
        Ok(c) => c,
        Err(e) => {
            print(&json!({
                "status": "error",
                "stage": args.stage.name(),
                "error": "ConfigInvalid",
                "message": e.to_string(),
                "exit_code": 2,
            }));
            return ExitCode::from(2);
        }
    };
    if let Some(out) = args.out {
        config.run.out_dir = out;
    }
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }

    let offline = RecordingTransport::new(OfflineTransport);
    let online = UreqTransport::default();
    let transport: &dyn Transport = if args.offline { &offline } else { &online };

    match run(&config, args.stage, transport) {
        Ok(outcome) => {
            let mut v = json!({
                "status": "ok",
                "out_dir": config.run.out_dir,
                "stages": outcome.stages,
            });
            if let Some(m) = outcome.manifest {
                v["bundle_checksum"] = json!(m.run.bundle_checksum);
            }
            if args.offline {
                v["network_requests"] = json!(offline.calls());
            }
            print(&v);
            ExitCode::SUCCESS
        }
        Err(e) => {
            print(&e.summary(args.stage));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
