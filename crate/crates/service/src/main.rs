use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tokio::sync::watch;
use tracing::{info, warn};
use tracing_subscriber::EnvFilter;

use wagonline_core::detection::{parse_line, read_stream, write_frame, FrameDetections};
use wagonline_core::fuse::fuse;
use wagonline_core::grammar::{parse, CheckDigitScheme};
use wagonline_core::pipeline::{run, Pipeline};
use wagonline_core::sim::{generate, generate_side, ScenarioConfig, Side};
use wagonline_core::summary::{render_manifest, TrainSummary};

use wagonline_service::api::{self, AppState};
use wagonline_service::config::ServiceConfig;
use wagonline_service::publish::{Endpoint, PublishError, Publisher};
use wagonline_service::store::TrainStore;

#[derive(Parser)]
#[command(name = "wagonline", version, about = "Count and identify train wagons from detection streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CameraSide {
    Left,
    Right,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a detection stream into a train summary.
    Run {
        #[arg(long)]
        detections: PathBuf,
        /// Counting line column in pixels; defaults to the frame center.
        #[arg(long)]
        count_line: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write mosaic.json and mosaic.html into this directory.
        #[arg(long)]
        mosaic: Option<PathBuf>,
        /// Directory holding the crop images named by crop_ref.
        #[arg(long)]
        crops: Option<PathBuf>,
    },
    /// Generate a synthetic detection stream with ground truth.
    Simulate {
        #[arg(long, default_value_t = 40)]
        wagons: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        damage_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        miss_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        false_positive_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        unlabeled: f64,
        #[arg(long, default_value_t = 0.0)]
        confusion_rate: f64,
        #[arg(long, default_value_t = 0)]
        locomotives: usize,
        #[arg(long)]
        camera: Option<String>,
        /// Render one side of a two-camera pair.
        #[arg(long, value_enum)]
        side: Option<CameraSide>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Merge the summaries of the two cameras of one passage.
    Fuse {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the review API over a train store.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        crops: Option<PathBuf>,
        #[arg(long, env = "WAGONLINE_API_TOKEN", hide_env_values = true)]
        token: Option<String>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
    },
    /// Publish a train summary to a webhook or MQTT endpoint.
    Report {
        #[arg(long)]
        train: PathBuf,
        /// http(s)://... or mqtt://host[:port]/topic; defaults to the configured endpoint.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "wagonline-outbox")]
        outbox: PathBuf,
    },
    /// Validate codes. Exit status 0 when all are valid, 2 when one is not, 1 when one does not parse.
    Checkdigit {
        codes: Vec<String>,
        /// Write a shared test-vector file of this many entries instead.
        #[arg(long, requires = "vectors_out")]
        vectors: Option<usize>,
        #[arg(long)]
        vectors_out: Option<PathBuf>,
    },
    /// Measure pipeline throughput on a synthetic stream.
    Bench {
        #[arg(long, default_value_t = 135)]
        wagons: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        repeat: u32,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(io::stderr)
        .init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    let config = ServiceConfig::from_env().context("loading configuration")?;
    match command {
        Command::Run { detections, count_line, out, mosaic, crops } => {
            let mut pipeline = config.pipeline.clone();
            if count_line.is_some() {
                pipeline.tracker.count_line_x = count_line;
            }
            pipeline.validate()?;
            let stream = read_stream(&detections).with_context(|| format!("opening {}", detections.display()))?;
            let summary = run(stream, &pipeline)?;
            write_json(&out, &summary)?;
            if let Some(dir) = mosaic {
                let rendered = render_manifest(&summary, crops.as_deref(), &dir)?;
                for m in rendered.missing {
                    warn!(pos = m.pos, crop_ref = %m.crop_ref, "crop image missing");
                }
            }
            let s = &summary.stats;
            println!(
                "{}: {} wagons, {} accepted, {} damaged but read, {} rejected, {} not located",
                summary.train_id, summary.wagon_count, s.accepted, s.accepted_damaged, s.rejected, s.not_located
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            wagons,
            seed,
            damage_rate,
            miss_rate,
            false_positive_rate,
            unlabeled,
            confusion_rate,
            locomotives,
            camera,
            side,
            out,
            truth,
        } => {
            let mut scenario = ScenarioConfig {
                damaged_fraction: damage_rate,
                miss_rate,
                false_positive_rate,
                unlabeled_fraction: unlabeled,
                char_confusion_rate: confusion_rate,
                locomotives,
                ..ScenarioConfig::clean(wagons, seed)
            };
            if let Some(camera) = camera {
                scenario.camera = camera;
            }
            let (stream, gt) = match side {
                None => generate(&scenario)?,
                Some(CameraSide::Left) => generate_side(&scenario, Side::Left)?,
                Some(CameraSide::Right) => generate_side(&scenario, Side::Right)?,
            };
            let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            let mut frames = 0u64;
            for frame in stream {
                write_frame(&mut w, &frame)?;
                frames += 1;
            }
            w.flush()?;
            if let Some(path) = truth {
                write_json(&path, &gt)?;
            }
            println!("{frames} frames, {} units", gt.expected_count);
            Ok(ExitCode::SUCCESS)
        }
        Command::Fuse { left, right, out } => {
            let fused = fuse(&read_summary(&left)?, &read_summary(&right)?)?;
            write_json(&out, &fused)?;
            println!("{}: {} wagons, {} unresolved", fused.train_id, fused.wagons.len(), fused.unresolved());
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { port, store, crops, token, bind } => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(config, port, store, crops, token, bind))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { train, endpoint, outbox } => {
            let endpoint = match endpoint {
                Some(text) => Endpoint::parse(&text)?,
                None => config.publish_endpoint.clone().context("no --endpoint given and none configured")?,
            };
            let summary = read_summary(&train)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(report(endpoint, &outbox, &summary))
        }
        Command::Checkdigit { codes, vectors, vectors_out } => {
            if let (Some(count), Some(path)) = (vectors, vectors_out) {
                write_vectors(&path, count)?;
                println!("wrote {count} vectors to {}", path.display());
                return Ok(ExitCode::SUCCESS);
            }
            if codes.is_empty() {
                bail!("no codes given");
            }
            Ok(checkdigit(&codes))
        }
        Command::Bench { wagons, seed, repeat } => {
            bench(&config, wagons, seed, repeat)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_summary(path: &Path) -> Result<TrainSummary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

async fn serve(
    config: ServiceConfig,
    port: Option<u16>,
    store: Option<PathBuf>,
    crops: Option<PathBuf>,
    token: Option<String>,
    bind: std::net::IpAddr,
) -> Result<()> {
    let store_dir = store.unwrap_or(config.store_dir);
    let store = TrainStore::open(&store_dir).with_context(|| format!("opening store {}", store_dir.display()))?;
    info!(trains = store.len(), dir = %store_dir.display(), "store opened");

    let (stop_tx, stop_rx) = watch::channel(false);
    let publisher = match config.publish_endpoint {
        Some(endpoint) => {
            let publisher = Arc::new(Publisher::new(endpoint, store_dir.join("outbox"))?);
            let interval = Duration::from_secs(config.retry_interval_s);
            tokio::spawn(Arc::clone(&publisher).run_retry_loop(interval, stop_rx));
            Some(publisher)
        }
        None => None,
    };
    let state = AppState::new(store)
        .with_crop_dir(crops.or(config.crop_dir))
        .with_token(token.or(config.api_token))
        .with_publisher(publisher);

    let listener = tokio::net::TcpListener::bind(SocketAddr::new(bind, port.unwrap_or(config.port))).await?;
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    io::stdout().flush()?;
    api::serve(listener, state, shutdown_signal()).await?;
    let _ = stop_tx.send(true);
    info!("stopped");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

async fn report(endpoint: Endpoint, outbox: &Path, summary: &TrainSummary) -> Result<ExitCode> {
    let publisher = Publisher::new(endpoint, outbox)?;
    for receipt in publisher.retry_pending().await?.into_iter().flatten() {
        println!("{}", serde_json::to_string(&receipt)?);
    }
    match publisher.publish(summary).await {
        Ok(receipt) => {
            println!("{}", serde_json::to_string(&receipt)?);
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ PublishError::Unreachable { .. }) => {
            eprintln!("{e}");
            Ok(ExitCode::from(3))
        }
        Err(e) => Err(e.into()),
    }
}

fn checkdigit(codes: &[String]) -> ExitCode {
    let scheme = CheckDigitScheme::default();
    let (mut unparseable, mut invalid) = (false, false);
    for text in codes {
        match parse(text) {
            Err(e) => {
                println!("{text}: unparseable: {e}");
                unparseable = true;
            }
            Ok(code) => match scheme.validate(&code) {
                Ok(()) => println!("{code}: valid"),
                Err(e) => {
                    println!("{code}: invalid: {e}");
                    invalid = true;
                }
            },
        }
    }
    match (unparseable, invalid) {
        (true, _) => ExitCode::from(1),
        (false, true) => ExitCode::from(2),
        _ => ExitCode::SUCCESS,
    }
}

#[derive(Serialize)]
struct Vector {
    code: String,
    valid: bool,
}

/// Writes a deterministic mix of valid codes, single-digit substitutions and
/// wrong check digits, labelled by this implementation's validator.
fn write_vectors(path: &Path, count: usize) -> Result<()> {
    let scheme = CheckDigitScheme::default();
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..count {
        let n = (i as u64).wrapping_mul(104_729).wrapping_add(12_345) % 1_000_000;
        let letters: String = (0..3).map(|k| char::from(b'A' + ((i / 26usize.pow(k)) % 26) as u8)).collect();
        let mut serial: Vec<u8> = format!("{n:06}").bytes().map(|b| b - b'0').collect();
        let check = (0..10u8)
            .find(|c| parse(&code_text(&letters, &serial, *c)).is_ok_and(|id| scheme.validate(&id).is_ok()))
            .unwrap_or((i % 10) as u8);
        let check = match i % 3 {
            1 => {
                let pos = i % 6;
                serial[pos] = (serial[pos] + 1 + ((i / 6) % 9) as u8) % 10;
                check
            }
            2 => (check + 1 + ((i / 3) % 9) as u8) % 10,
            _ => check,
        };
        let mut text = code_text(&letters, &serial, check);
        if i % 7 == 0 {
            text.push('L');
        }
        let valid = parse(&text).is_ok_and(|id| scheme.validate(&id).is_ok());
        serde_json::to_writer(&mut w, &Vector { code: text, valid })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn code_text(letters: &str, serial: &[u8], check: u8) -> String {
    let digits: String = serial.iter().map(|d| char::from(b'0' + d)).collect();
    format!("{letters}-{digits}-{check}")
}

fn bench(config: &ServiceConfig, wagons: usize, seed: u64, repeat: u32) -> Result<()> {
    let scenario = ScenarioConfig {
        miss_rate: 0.2,
        false_positive_rate: 0.05,
        unlabeled_fraction: 0.1,
        damaged_fraction: 0.116,
        char_confusion_rate: 0.02,
        ..ScenarioConfig::clean(wagons, seed)
    };
    let (stream, _) = generate(&scenario)?;
    let mut lines = Vec::new();
    for frame in stream {
        let mut buf = Vec::new();
        write_frame(&mut buf, &frame)?;
        lines.push(String::from_utf8(buf)?);
    }
    let mut best = f64::MAX;
    let mut counted = 0;
    for _ in 0..repeat.max(1) {
        let start = Instant::now();
        let mut pipeline = Pipeline::new(&config.pipeline, CheckDigitScheme::default());
        for (i, line) in lines.iter().enumerate() {
            let frame: FrameDetections = parse_line(line.trim_end(), i + 1)?;
            pipeline.push(&frame)?;
        }
        let summary = pipeline.finish();
        best = best.min(start.elapsed().as_secs_f64());
        counted = summary.wagon_count;
    }
    let rate = lines.len() as f64 / best;
    println!("{} records, {} wagons counted of {}, {:.3} s, {:.0} records/s", lines.len(), counted, wagons, best, rate);
    Ok(())
}
