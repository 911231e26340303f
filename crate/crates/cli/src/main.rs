use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use bib_core::clock::SystemClock;
use bib_core::gateway::{
    self, GatewayServer, SpoolConfig, TcpTransferChannel, DEFAULT_SIM_EPOCH_UNIX,
};
use bib_core::ingest::{
    export_csv, Archive, CompressionSettings, IngestServer, Ingestor, StreamKey,
};
use bib_core::power::{self, BatterySpec, PowerProfile};
use bib_core::scenario::{self, ScenarioConfig, ScenarioPaths};

mod distributed;

#[derive(Parser, Debug)]
#[command(
    name = "bib",
    version,
    about = "Building telemetry twin: nodes, gateway and ingest"
)]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scenario file for `simulate`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run nodes, gateway and ingest end to end and print the run report.
    Simulate(SimulateArgs),
    /// Write the battery lifetime matrix over sample and report intervals.
    PowerSurface(PowerArgs),
    /// Accept node reports, spool them and forward spool files.
    ServeGateway(GatewayArgs),
    /// Receive spool files and archive them.
    ServeIngest(IngestArgs),
    /// Print archived or interpolated points of one stream.
    Query(QueryArgs),
    /// Write query results to a file.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    nodes: Option<u16>,
    /// Virtual seconds to simulate.
    #[arg(long)]
    duration: Option<u64>,
    #[arg(long)]
    sample_interval: Option<u32>,
    #[arg(long)]
    report_interval: Option<u32>,
    /// Directory for spool, inbox and archive; a fresh temporary one by default.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Also write the run report here.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Run gateway and ingest as separate processes.
    #[arg(long)]
    distributed: bool,
    /// Print the effective scenario and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args, Debug)]
struct PowerArgs {
    /// Comma-separated sample intervals in seconds.
    #[arg(long, value_delimiter = ',')]
    sample_grid: Option<Vec<f64>>,
    /// Comma-separated report intervals in seconds.
    #[arg(long, value_delimiter = ',')]
    report_grid: Option<Vec<f64>>,
    /// Output file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GatewayArgs {
    #[arg(long, default_value = "0.0.0.0:5020")]
    listen: SocketAddr,
    #[arg(long)]
    spool_root: PathBuf,
    #[arg(long, default_value_t = 10)]
    retention_days: u32,
    #[arg(long, default_value_t = 60)]
    poll_interval: u64,
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
    /// Ingest receiver address; without it files are only spooled.
    #[arg(long)]
    dest: Option<SocketAddr>,
    /// Unix time of node timestamp zero.
    #[arg(long, default_value_t = DEFAULT_SIM_EPOCH_UNIX)]
    epoch_unix: i64,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, default_value = "0.0.0.0:5021")]
    listen: SocketAddr,
    #[arg(long)]
    inbox: PathBuf,
    #[arg(long)]
    archive_dir: PathBuf,
    /// `stream.field=value` lines applied over the default settings.
    #[arg(long)]
    settings_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    archive_dir: PathBuf,
    /// Stream key `<device>.<stream>`, e.g. `1.temp`.
    #[arg(long)]
    stream: String,
    #[arg(long, allow_negative_numbers = true)]
    from: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    to: Option<f64>,
    /// Interpolate at this spacing instead of returning archived points.
    #[arg(long)]
    interval: Option<f64>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp_millis()
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(args) => simulate(cli.config.as_deref(), cli.seed, args),
        Command::PowerSurface(args) => power_surface(args).map(|_| ExitCode::SUCCESS),
        Command::ServeGateway(args) => serve_gateway(args).map(|_| ExitCode::SUCCESS),
        Command::ServeIngest(args) => serve_ingest(args).map(|_| ExitCode::SUCCESS),
        Command::Query(args) => {
            print!("{}", query(&args)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Export(args) => {
            let text = query(&args.query)?;
            fs::write(&args.output, text)
                .with_context(|| format!("writing {}", args.output.display()))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_scenario(
    path: Option<&Path>,
    seed: Option<u64>,
    args: &SimulateArgs,
) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ScenarioConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = args.nodes {
        cfg.nodes = n;
    }
    if let Some(d) = args.duration {
        cfg.duration_s = d;
    }
    if let Some(s) = args.sample_interval {
        cfg.sample_interval_s = s;
    }
    if let Some(r) = args.report_interval {
        cfg.report_interval_s = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fresh_work_dir() -> Result<PathBuf> {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let dir = std::env::temp_dir().join(format!("bib-sim-{}-{nanos}", std::process::id()));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn simulate(config: Option<&Path>, seed: Option<u64>, args: SimulateArgs) -> Result<ExitCode> {
    let cfg = load_scenario(config, seed, &args)?;
    if args.print_config {
        print!("{}", cfg.to_text());
        return Ok(ExitCode::SUCCESS);
    }
    let work = match &args.work_dir {
        Some(d) => {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            d.clone()
        }
        None => fresh_work_dir()?,
    };
    eprintln!("work dir: {}", work.display());
    let paths = ScenarioPaths::under(&work);
    let (text, ok) = if args.distributed {
        distributed::run(&cfg, &paths)?
    } else {
        let out = scenario::run(&cfg, &paths)?;
        (out.report.to_text(), out.report.conservation_ok())
    };
    print!("{text}");
    if let Some(p) = &args.report_out {
        fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn power_surface(args: PowerArgs) -> Result<()> {
    let samples = args
        .sample_grid
        .unwrap_or_else(|| power::DEFAULT_SAMPLE_GRID.to_vec());
    let reports = args
        .report_grid
        .unwrap_or_else(|| power::DEFAULT_REPORT_GRID.to_vec());
    if samples
        .iter()
        .chain(&reports)
        .any(|v| !(v.is_finite() && *v > 0.0))
    {
        bail!("grid values must be positive seconds");
    }
    let surface = power::lifetime_surface(
        &PowerProfile::default(),
        &BatterySpec::default(),
        &samples,
        &reports,
    )?;
    let csv = surface.to_csv();
    match args.output {
        Some(p) => fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn serve_gateway(args: GatewayArgs) -> Result<()> {
    let mut cfg = SpoolConfig::new(args.listen, &args.spool_root);
    cfg.retention_days = args.retention_days;
    cfg.poll_interval_s = args.poll_interval;
    cfg.batch_size = args.batch_size;
    cfg.sim_epoch_unix = args.epoch_unix;
    cfg.validate()?;
    let handle = GatewayServer::start(&cfg, Arc::new(SystemClock))?;
    println!("gateway listening on {}", handle.local_addr());
    match args.dest {
        Some(dest) => {
            let mut channel = TcpTransferChannel::new(dest);
            let stop = AtomicBool::new(false);
            gateway::run_distribution_loop(&cfg, &mut channel, &SystemClock, &stop);
        }
        None => {
            info!("no --dest given; spooling only");
            handle.join();
        }
    }
    Ok(())
}

fn serve_ingest(args: IngestArgs) -> Result<()> {
    let mut settings = CompressionSettings::default();
    if let Some(p) = &args.settings_file {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        settings
            .apply(&text)
            .with_context(|| format!("in {}", p.display()))?;
    }
    let ingestor = Ingestor::open(&args.archive_dir, settings)?;
    let handle = IngestServer::start(args.listen, &args.inbox, Arc::new(Mutex::new(ingestor)))
        .with_context(|| format!("listening on {}", args.listen))?;
    println!("ingest listening on {}", handle.local_addr());
    handle.join();
    Ok(())
}

fn query(args: &QueryArgs) -> Result<String> {
    let key: StreamKey = args.stream.parse().map_err(anyhow::Error::msg)?;
    let archive = Archive::open(&args.archive_dir)?;
    let points = archive.points(&key)?;
    let (first, last) = match (points.first(), points.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => (0.0, 0.0),
    };
    let t0 = args.from.unwrap_or(first);
    let t1 = args.to.unwrap_or(last);
    let rows: Vec<(f64, Option<f64>)> = match args.interval {
        Some(dt) => archive.query_interpolated(&key, t0, t1, dt)?,
        None => archive
            .query_raw(&key, t0, t1)?
            .into_iter()
            .map(|p| (p.t, Some(p.v)))
            .collect(),
    };
    Ok(export_csv(&rows))
}
