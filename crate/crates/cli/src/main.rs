mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Parser, Subcommand};
use popsweeper::corpus::{synthetic_corpus, CorpusSpec, ORACLE_FILE};
use popsweeper::eval::{evaluate_log, load_annotations};
use popsweeper::frame::pixel_hash_hex;
use popsweeper::replay::{load_event_log, replay_directory, save_event_log};
use popsweeper::server::Server;
use popsweeper::{Engine, LatencyBreakdown};
use serde_json::json;

use config::EngineArgs;

#[derive(Debug, Parser)]
#[command(name = "popsweeper", version, about = "Detect and dismiss app-blocking pop-ups in screen recordings")]
struct Cli {
    /// TOML file with engine settings; keys mirror the long flag names
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More logging (-v, -vv)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Answer frames over the length-prefixed TCP protocol
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Append the event log (JSON lines) here instead of keeping it in memory
        #[arg(long)]
        event_log: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Run a recorded frame directory through the engine
    Replay {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Event log destination (JSON lines)
        #[arg(long)]
        out: PathBuf,
        /// Evaluation report destination; needs --annotations
        #[arg(long)]
        report: Option<PathBuf>,
        /// Session id for the log [default: directory name]
        #[arg(long)]
        session: Option<String>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Score an event log against annotations
    Eval {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time each pipeline stage on a frame directory
    Bench {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Write the synthetic annotated corpus
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Remove the scripted detection of this pop-up episode (1-based)
        #[arg(long)]
        drop_detection: Option<usize>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();

    let config = cli.config.as_deref();
    match cli.command {
        Command::Serve {
            listen,
            event_log,
            engine,
        } => serve(&listen, event_log.as_deref(), engine.with_file(config)?),
        Command::Replay {
            frames,
            annotations,
            out,
            report,
            session,
            engine,
        } => replay(
            &frames,
            annotations.as_deref(),
            &out,
            report.as_deref(),
            session.as_deref(),
            engine.with_file(config)?,
        ),
        Command::Eval {
            log,
            annotations,
            out,
        } => eval(&log, &annotations, &out),
        Command::Bench {
            frames,
            runs,
            engine,
        } => bench(&frames, runs, engine.with_file(config)?),
        Command::Synth {
            out,
            drop_detection,
        } => synth(&out, drop_detection),
    }
}

fn build_engine(args: &EngineArgs) -> Result<Engine> {
    Ok(Engine::new(args.engine_config(), args.backends()?)?)
}

/// Replay-style commands fall back to an `oracle.json` next to the frames.
fn with_local_oracle(mut args: EngineArgs, frames: &Path) -> EngineArgs {
    let unset = args.oracle.is_none()
        && [&args.primary_model, &args.secondary_model, &args.detector_model]
            .iter()
            .any(|m| m.is_none());
    let local = frames.join(ORACLE_FILE);
    if unset && local.is_file() {
        args.oracle = Some(local);
    }
    args
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn serve(listen: &str, event_log: Option<&Path>, args: EngineArgs) -> Result<()> {
    let engine = Arc::new(build_engine(&args)?);
    let mut server = Server::bind(listen, engine)?;
    if let Some(path) = event_log {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        server = server.with_event_sink(Box::new(BufWriter::new(file)));
    }
    eprintln!("listening on {}", server.local_addr()?);
    server.run()?;
    Ok(())
}

fn replay(
    frames: &Path,
    annotations: Option<&Path>,
    out: &Path,
    report: Option<&Path>,
    session: Option<&str>,
    args: EngineArgs,
) -> Result<()> {
    if report.is_some() && annotations.is_none() {
        bail!("--report needs --annotations");
    }
    let engine = build_engine(&with_local_oracle(args, frames))?;
    let run = replay_directory(&engine, frames, session)?;
    save_event_log(out, &run.events).with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "{} frames, {} events, {} dismissals",
        run.responses.len(),
        run.events.len(),
        run.dismissals()
    );
    if let Some(ann) = annotations {
        let recs = load_annotations(ann)?;
        let rep = run.evaluate(&recs)?;
        match report {
            Some(path) => write_json(path, &rep)?,
            None => println!("{}", serde_json::to_string_pretty(&rep)?),
        }
    }
    Ok(())
}

fn eval(log: &Path, annotations: &Path, out: &Path) -> Result<()> {
    let events = load_event_log(log)?;
    let recs = load_annotations(annotations)?;
    write_json(out, &evaluate_log(&events, &recs)?)
}

fn quantiles(mut v: Vec<f64>) -> serde_json::Value {
    if v.is_empty() {
        return json!(null);
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
    json!({"n": v.len(), "median": q(0.5), "p95": q(0.95), "max": v[v.len() - 1]})
}

fn bench(frames: &Path, runs: usize, args: EngineArgs) -> Result<()> {
    let engine = build_engine(&with_local_oracle(args, frames))?;
    let mut all: Vec<LatencyBreakdown> = Vec::new();
    let mut forwarded: Vec<LatencyBreakdown> = Vec::new();
    let mut duration_ms = 0;
    for _ in 0..runs.max(1) {
        let run = replay_directory(&engine, frames, None)?;
        duration_ms = run.events.last().map_or(0, |e| e.timestamp_ms);
        for r in &run.responses {
            all.push(r.latency);
            if r.latency.classify_ms > 0.0 {
                forwarded.push(r.latency);
            }
        }
    }
    let pick = |v: &[LatencyBreakdown], f: fn(&LatencyBreakdown) -> f64| quantiles(v.iter().map(f).collect());
    let sampler_total_ms: f64 = all.iter().map(|l| l.sample_ms).sum::<f64>() / runs.max(1) as f64;
    let summary = json!({
        "frames_per_run": all.len() / runs.max(1),
        "forwarded_per_run": forwarded.len() / runs.max(1),
        "recording_ms": duration_ms,
        "sample_ms": pick(&all, |l| l.sample_ms),
        "forwarded": {
            "classify_ms": pick(&forwarded, |l| l.classify_ms),
            "detect_ms": pick(&forwarded, |l| l.detect_ms),
            "inference_ms": pick(&forwarded, |l| l.inference_ms),
            "overhead_ms": pick(&forwarded, LatencyBreakdown::overhead_ms),
            "total_ms": pick(&forwarded, LatencyBreakdown::total_ms),
        },
        "sampler_total_ms_per_run": sampler_total_ms,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn synth(out: &Path, drop_detection: Option<usize>) -> Result<()> {
    let mut corpus = synthetic_corpus(&CorpusSpec::default());
    if let Some(n) = drop_detection {
        let name = format!("popup-{}.png", n.wrapping_sub(1));
        let Some(img) = corpus.images.get(&name) else {
            bail!("no pop-up episode {n}; the corpus has {}", corpus.popup_groups());
        };
        let key = pixel_hash_hex(img.pixels());
        if let Some(entry) = corpus.script.frames.get_mut(&key) {
            entry.detections = Some(Vec::new());
        }
    }
    corpus.write(out).with_context(|| format!("writing corpus to {}", out.display()))?;
    eprintln!(
        "wrote {} frames ({} distinct) to {}",
        corpus.manifest.len(),
        corpus.images.len(),
        out.display()
    );
    Ok(())
}
