//! `streamgate`: run the gateway, benchmark the sampler, evaluate detections.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use streamgate_core::bench::{self, BenchConfig, BenchInput, ClockKind, Strategy, SyntheticSpec};
use streamgate_core::config::{DetectorSpec, GatewayConfig};
use streamgate_core::detector::LatencyModel;
use streamgate_core::eval::{self, EvalConfig};
use streamgate_core::metrics::render_table;
use streamgate_core::service::Gateway;

#[derive(Parser)]
#[command(name = "streamgate", version, about = "RTMP object-detection gateway")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the RTMP ingest and HTTP API until interrupted.
    Serve(ServeArgs),
    /// Sweep dc values over one input and print the results table.
    Bench(BenchArgs),
    /// Score predictions against Pascal VOC ground truth.
    Eval(EvalArgs),
    /// Convert a directory of Pascal VOC XML files to one CSV.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct ServeArgs {
    /// JSON config file; falls back to $STREAMGATE_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    rtmp_port: Option<u16>,
    #[arg(long)]
    http_port: Option<u16>,
    #[arg(long)]
    dc: Option<f64>,
    /// External detector command, run through `sh -c`.
    #[arg(long, conflicts_with = "mock_script")]
    detector: Option<String>,
    /// Use the mock detector with this script.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    #[arg(long)]
    event_log: Option<PathBuf>,
    /// Override any other config field, e.g. `--set jpeg_quality=60`.
    /// The value is parsed as JSON, falling back to a plain string.
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    /// `n,w,h,fps,seed`
    #[arg(long)]
    synthetic: Option<SyntheticSpec>,
    /// Comma-separated dc values.
    #[arg(long, value_parser = parse_dc_list)]
    dc_list: DcList,
    /// `fixed:SECS`, `uniform:LO,HI,SEED` or plain seconds.
    #[arg(long, default_value = "fixed:0.4")]
    latency: LatencyModel,
    /// Seconds charged per frame read.
    #[arg(long, default_value_t = 0.001)]
    read_cost: f64,
    #[arg(long, default_value = "virtual")]
    clock: ClockKind,
    /// Run the dc values one after another.
    #[arg(long)]
    sequential: bool,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone)]
struct DcList(Vec<f64>);

fn parse_dc_list(s: &str) -> Result<DcList, String> {
    let dcs = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| match p.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            _ => Err(format!("bad dc value {p:?}")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if dcs.is_empty() {
        return Err("at least one dc value is required".into());
    }
    Ok(DcList(dcs))
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of VOC XML ground-truth files.
    #[arg(long)]
    gt: PathBuf,
    /// NDJSON predictions, one `{filename,label,score,box}` per line.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.50,0.75")]
    iou: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    voc: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let res = match cli.cmd {
        Cmd::Serve(a) => serve(a),
        Cmd::Bench(a) => run_bench(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Convert(a) => convert(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn apply_set(cfg: GatewayConfig, sets: &[String]) -> anyhow::Result<GatewayConfig> {
    if sets.is_empty() {
        return Ok(cfg);
    }
    let mut v = serde_json::to_value(cfg)?;
    for s in sets {
        let Some((k, raw)) = s.split_once('=') else {
            bail!("--set expects FIELD=VALUE, got {s:?}");
        };
        let val = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        v[k.trim()] = val;
    }
    serde_json::from_value(v).context("invalid --set override")
}

fn serve_config(a: &ServeArgs) -> anyhow::Result<GatewayConfig> {
    let mut cfg = GatewayConfig::resolve(a.config.as_deref())?;
    if let Some(b) = &a.bind {
        cfg.bind_address = b.clone();
    }
    if let Some(p) = a.rtmp_port {
        cfg.rtmp_port = p;
    }
    if let Some(p) = a.http_port {
        cfg.http_port = p;
    }
    if let Some(dc) = a.dc {
        cfg.dc_default = dc;
    }
    if let Some(cmd) = &a.detector {
        cfg.detector = DetectorSpec::External { command: cmd.clone() };
    }
    if let Some(s) = &a.mock_script {
        cfg.detector = DetectorSpec::Mock { script: Some(s.clone()) };
    }
    if let Some(p) = &a.event_log {
        cfg.event_log = Some(p.clone());
    }
    let cfg = apply_set(cfg, &a.set)?;
    cfg.validate()?;
    Ok(cfg)
}

fn serve(a: ServeArgs) -> anyhow::Result<ExitCode> {
    let cfg = serve_config(&a)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let gw = Gateway::start(cfg).await?;
        eprintln!("rtmp listening on {}", gw.rtmp_addr);
        eprintln!("http listening on {}", gw.http_addr);
        tokio::signal::ctrl_c().await.context("waiting for interrupt")?;
        eprintln!("shutting down");
        gw.shutdown().await;
        Ok(ExitCode::SUCCESS)
    })
}

fn run_bench(a: BenchArgs) -> anyhow::Result<ExitCode> {
    let input = match (&a.input, a.synthetic) {
        (Some(p), _) => BenchInput::load_frm0(p).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(s)) => BenchInput::Synthetic(s),
        (None, None) => unreachable!("clap requires one input"),
    };
    if !(a.read_cost >= 0.0 && a.read_cost.is_finite()) {
        bail!("--read-cost must be a non-negative number of seconds");
    }
    let cfg = BenchConfig {
        input,
        dc_list: a.dc_list.0,
        latency: a.latency,
        read_cost: Duration::from_secs_f64(a.read_cost),
        clock: a.clock,
        strategy: if a.sequential { Strategy::Sequential } else { Strategy::default() },
    };
    let reports = bench::sweep(&cfg)?;
    write_output(a.out.as_deref(), &render_table(&reports))?;
    Ok(ExitCode::SUCCESS)
}

fn run_eval(a: EvalArgs) -> anyhow::Result<ExitCode> {
    let mut gts = Vec::new();
    let scanned = eval::read_voc_dir(&a.gt).with_context(|| format!("reading {}", a.gt.display()))?;
    for (path, parsed) in scanned {
        gts.extend(parsed.with_context(|| path.display().to_string())?);
    }
    let text = std::fs::read_to_string(&a.pred).with_context(|| format!("reading {}", a.pred.display()))?;
    let preds = eval::parse_predictions(&text, &a.pred.display().to_string())?;
    let report = eval::evaluate(
        &gts,
        &preds,
        &EvalConfig {
            iou_thresholds: a.iou,
            classes: None,
        },
    )?;
    for m in &report.map {
        eprintln!("mAP@{:.2} = {:.4} over {} classes", m.iou, m.map, m.classes);
    }
    write_output(a.out.as_deref(), &report.to_csv())?;
    Ok(ExitCode::SUCCESS)
}

fn convert(a: ConvertArgs) -> anyhow::Result<ExitCode> {
    let scanned = eval::read_voc_dir(&a.voc).with_context(|| format!("reading {}", a.voc.display()))?;
    let mut records = Vec::new();
    let mut failed = 0;
    for (path, parsed) in scanned {
        match parsed {
            Ok(r) => records.extend(r),
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                failed += 1;
            }
        }
    }
    write_output(a.out.as_deref(), &eval::annotations_to_csv(&records))?;
    if failed > 0 {
        eprintln!("{failed} file(s) failed to parse");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
