//! End-to-end runs: simulated nodes report over loopback TCP to an
//! in-process gateway, whose distributor pushes spool files to an in-process
//! ingest service.

pub mod config;

use std::fmt::Write as _;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{
    ClockMode, EnvironmentPreset, NodeOverride, ScenarioConfig, ScenarioConfigError, SettingsPreset,
};

use crate::clock::{Clock, ManualClock, SystemClock};
use crate::gateway::{
    poll_once, spool, Distributor, GatewayError, GatewayServer, GatewayStatsSnapshot, SpoolConfig,
    TcpTransferChannel, TransferChannel, TransferError,
};
use crate::ingest::{IngestError, IngestServer, IngestStats, Ingestor};
use crate::node::environment::VirtualEnvironment;
use crate::node::{
    ConfigError, Node, NodeConfig, NodeStats, ReportError, ReportFrames, TcpUplink, Uplink,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ScenarioConfigError),
    #[error("node {device}: {source}")]
    Node { device: u16, source: ConfigError },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{what}: {source}")]
    Io { what: String, source: io::Error },
}

/// Working directories of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioPaths {
    pub spool: PathBuf,
    pub inbox: PathBuf,
    pub archive: PathBuf,
}

impl ScenarioPaths {
    pub fn under(root: &Path) -> Self {
        ScenarioPaths {
            spool: root.join("spool"),
            inbox: root.join("inbox"),
            archive: root.join("archive"),
        }
    }
}

/// Fails each put with probability `p`, drawn from a seeded generator.
#[derive(Debug)]
pub struct FlakyChannel<C> {
    pub inner: C,
    p: f64,
    rng: ChaCha8Rng,
    pub injected: u64,
}

impl<C> FlakyChannel<C> {
    pub fn new(inner: C, p: f64, seed: u64) -> Self {
        FlakyChannel {
            inner,
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            injected: 0,
        }
    }
}

impl<C: TransferChannel> TransferChannel for FlakyChannel<C> {
    fn put(&mut self, name: &str, body: &[u8]) -> Result<(), TransferError> {
        if self.p > 0.0 && self.rng.gen_bool(self.p) {
            self.injected += 1;
            return Err(TransferError::Unavailable);
        }
        self.inner.put(name, body)
    }
}

/// Node uplink that honours gateway outages and keeps the gateway's manual
/// clock in step with the reporting node.
struct ScenarioUplink<'a> {
    inner: TcpUplink,
    clock: Option<&'a ManualClock>,
    epoch_unix: i64,
    down: &'a [(u64, u64)],
    ignore_outages: bool,
    refused: u64,
}

impl Uplink for ScenarioUplink<'_> {
    fn send_report(&mut self, report: &ReportFrames) -> Result<(), ReportError> {
        let t = report.virtual_time_s;
        if !self.ignore_outages && self.down.iter().any(|&(a, b)| a <= t && t <= b) {
            self.refused += 1;
            return Err(ReportError::Unavailable);
        }
        if let Some(c) = self.clock {
            c.set(self.epoch_unix + t as i64);
        }
        self.inner.send_report(report)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSummary {
    pub device_id: u16,
    pub sample_interval_s: u32,
    pub report_interval_s: u32,
    pub stats: NodeStats,
    /// Messages still in the node's buffer at the end.
    pub buffered: usize,
    /// Report attempts that hit a gateway outage.
    pub outage_refusals: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DistributionSummary {
    pub rounds: u64,
    pub files_sent: u64,
    pub files_failed: u64,
    pub injected_failures: u64,
    pub max_backlog: usize,
    pub saturation_rounds: u64,
    pub purged_dirs: u64,
    pub unsent_purged: u64,
    pub backlog_after_drain: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config_seed: u64,
    pub duration_s: u64,
    pub nodes: Vec<NodeSummary>,
    pub gateway: GatewayStatsSnapshot,
    pub distribution: DistributionSummary,
    pub ingest: IngestStats,
    /// `(stream key, archived points)` in key order.
    pub streams: Vec<(String, usize)>,
    pub problems: Vec<String>,
}

impl RunReport {
    pub fn conservation_ok(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn archived_points(&self) -> usize {
        self.streams.iter().map(|(_, n)| n).sum()
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(
            o,
            "run: seed {} duration_s {} nodes {}",
            self.config_seed,
            self.duration_s,
            self.nodes.len()
        );
        for n in &self.nodes {
            let s = &n.stats;
            let _ = writeln!(
                o,
                "node {}: sample_s {} report_s {} samples {} occ_events {} ori_events {} \
                 reports_ok {} reports_failed {} forced {} delivered {} overflow {} buffered {} outage_refusals {}",
                n.device_id,
                n.sample_interval_s,
                n.report_interval_s,
                s.samples,
                s.occupancy_events,
                s.orientation_events,
                s.reports_ok,
                s.reports_failed,
                s.forced_reports,
                s.messages_delivered,
                s.overflow_dropped,
                n.buffered,
                n.outage_refusals
            );
        }
        let g = &self.gateway;
        let _ = writeln!(
            o,
            "gateway: connections {} rejected {} naks {} files {} lines {} frames_dropped {} records_dropped {}",
            g.connections,
            g.rejected,
            g.nak_sent,
            g.files_written,
            g.lines_written,
            g.frames_dropped,
            g.records_dropped
        );
        let d = &self.distribution;
        let _ = writeln!(
            o,
            "distributor: rounds {} sent {} failed {} injected {} max_backlog {} saturation_rounds {} \
             purged_dirs {} unsent_purged {} backlog {}",
            d.rounds,
            d.files_sent,
            d.files_failed,
            d.injected_failures,
            d.max_backlog,
            d.saturation_rounds,
            d.purged_dirs,
            d.unsent_purged,
            d.backlog_after_drain
        );
        let i = &self.ingest;
        let _ = writeln!(
            o,
            "ingest: files {} lines {} parse_errors {} points_in {} passed {} deadband {} \
             duplicates {} conflicts {} out_of_order {} archived {}",
            i.files,
            i.lines,
            i.parse_errors,
            i.points_in,
            i.passed,
            i.deadband,
            i.duplicates,
            i.conflicts,
            i.out_of_order,
            i.archived
        );
        for (k, n) in &self.streams {
            let _ = writeln!(o, "stream {k}: {n}");
        }
        if self.problems.is_empty() {
            let _ = writeln!(o, "conservation: PASS");
        } else {
            let _ = writeln!(o, "conservation: FAIL");
            for p in &self.problems {
                let _ = writeln!(o, "  {p}");
            }
        }
        o
    }
}

/// Per-node environment and node seeds, derived from the scenario seed.
fn node_seeds(seed: u64, nodes: u16) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..nodes).map(|_| (rng.gen(), rng.gen())).collect()
}

pub fn node_config(cfg: &ScenarioConfig, device_id: u16, rng_seed: u64) -> NodeConfig {
    let o = cfg
        .node_overrides
        .get(&device_id)
        .copied()
        .unwrap_or_default();
    NodeConfig {
        device_id,
        sample_interval_s: o.sample_interval_s.unwrap_or(cfg.sample_interval_s),
        report_interval_s: o.report_interval_s.unwrap_or(cfg.report_interval_s),
        buffer_capacity_bytes: o.buffer_bytes.unwrap_or(cfg.buffer_bytes),
        gateway: None,
        rng_seed,
    }
}

/// Runs the scenario's nodes against `gateway`, one virtual second at a
/// time. `each_second` runs after all nodes have reached that second.
/// With a manual clock the gateway sees each report at its virtual time.
pub fn run_nodes(
    cfg: &ScenarioConfig,
    gateway: SocketAddr,
    clock: Option<&ManualClock>,
    mut each_second: impl FnMut(u64),
) -> Result<Vec<NodeSummary>, ScenarioError> {
    cfg.validate()?;
    let seeds = node_seeds(cfg.seed, cfg.nodes);
    let mut envs = Vec::new();
    let mut nodes = Vec::new();
    for (i, &(env_seed, node_seed)) in seeds.iter().enumerate() {
        let device = i as u16 + 1;
        let env = VirtualEnvironment::new(env_seed, cfg.duration_s + 1, cfg.environment.params());
        let node = Node::new(node_config(cfg, device, node_seed), &env)
            .map_err(|source| ScenarioError::Node { device, source })?;
        envs.push(env);
        nodes.push(node);
    }
    let mut uplink = ScenarioUplink {
        inner: TcpUplink::new(gateway),
        clock,
        epoch_unix: cfg.epoch_unix,
        down: &cfg.gateway_down,
        ignore_outages: false,
        refused: 0,
    };
    let mut refusals = vec![0u64; nodes.len()];
    let start = Instant::now();
    for t in 1..=cfg.duration_s {
        if cfg.clock == ClockMode::Wall {
            let due = Duration::from_secs_f64(t as f64 / cfg.speedup);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                thread::sleep(wait);
            }
        }
        for (i, (node, env)) in nodes.iter_mut().zip(&envs).enumerate() {
            uplink.refused = 0;
            node.step(env, &mut uplink, t);
            refusals[i] += uplink.refused;
        }
        each_second(t);
    }
    // Orderly shutdown: flush whatever the nodes still hold.
    uplink.ignore_outages = true;
    for node in nodes.iter_mut() {
        if !node.store().is_empty() {
            node.report(&mut uplink, false);
        }
    }
    Ok(nodes
        .iter()
        .zip(refusals)
        .map(|(n, outage_refusals)| NodeSummary {
            device_id: n.config().device_id,
            sample_interval_s: n.config().sample_interval_s,
            report_interval_s: n.config().report_interval_s,
            stats: n.stats(),
            buffered: n.store().len(),
            outage_refusals,
        })
        .collect())
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub paths: ScenarioPaths,
}

fn io_err(what: &str) -> impl FnOnce(io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        what: what.to_string(),
        source,
    }
}

/// Runs nodes, gateway and ingest in this process over loopback TCP.
pub fn run(cfg: &ScenarioConfig, paths: &ScenarioPaths) -> Result<RunOutcome, ScenarioError> {
    cfg.validate()?;
    let settings = cfg.compression_settings()?;
    let loopback: SocketAddr = "127.0.0.1:0".parse().expect("literal address");

    let ingestor = Arc::new(Mutex::new(Ingestor::open(&paths.archive, settings)?));
    let ingest = IngestServer::start(loopback, &paths.inbox, Arc::clone(&ingestor))
        .map_err(io_err("starting ingest receiver"))?;

    let manual = ManualClock::new(cfg.epoch_unix);
    let clock: Arc<dyn Clock> = match cfg.clock {
        ClockMode::Virtual => Arc::new(manual.clone()),
        ClockMode::Wall => Arc::new(SystemClock),
    };
    let mut spool_cfg = SpoolConfig::new(loopback, &paths.spool);
    spool_cfg.retention_days = cfg.retention_days;
    spool_cfg.poll_interval_s = cfg.poll_interval_s;
    spool_cfg.batch_size = cfg.batch_size;
    spool_cfg.sim_epoch_unix = cfg.epoch_unix;
    let gateway = GatewayServer::start(&spool_cfg, Arc::clone(&clock))?;

    let mut channel = FlakyChannel::new(
        TcpTransferChannel::new(ingest.local_addr()),
        cfg.channel_failure_p,
        cfg.seed ^ 0x5EED_C4A7,
    );
    let mut distributor = Distributor::new(&paths.spool, cfg.batch_size);
    let mut dist = DistributionSummary::default();
    let mut poll = |dist: &mut DistributionSummary,
                    channel: &mut FlakyChannel<TcpTransferChannel>| {
        let r = poll_once(&spool_cfg, &mut distributor, channel, clock.now_unix());
        dist.rounds += 1;
        dist.files_sent += r.distribute.files_sent as u64;
        dist.files_failed += r.distribute.files_failed as u64;
        dist.max_backlog = dist.max_backlog.max(r.distribute.backlog_before);
        dist.purged_dirs += r.purge.removed.len() as u64;
        dist.unsent_purged += r.purge.unsent_dropped as u64;
        dist.saturation_rounds = distributor.saturation_rounds();
        r.distribute.backlog_after
    };

    let virtual_clock = (cfg.clock == ClockMode::Virtual).then_some(&manual);
    let nodes = run_nodes(cfg, gateway.local_addr(), virtual_clock, |t| {
        if t % cfg.poll_interval_s == 0 {
            manual.set(cfg.epoch_unix + t as i64);
            poll(&mut dist, &mut channel);
        }
    })?;

    manual.set(cfg.epoch_unix + cfg.duration_s as i64);
    let mut backlog = spool::unsent(&paths.spool)
        .map_err(io_err("scanning spool"))?
        .len();
    let mut stalled = 0;
    while backlog > 0 && stalled < 1000 {
        let after = poll(&mut dist, &mut channel);
        stalled = if after < backlog { 0 } else { stalled + 1 };
        backlog = after;
    }
    dist.backlog_after_drain = backlog;
    dist.injected_failures = channel.injected;
    channel.inner.close();

    let gateway_stats = gateway.stats();
    gateway.shutdown();
    ingest.shutdown();
    let ingestor = ingestor.lock().expect("ingestor lock poisoned");
    let archive = ingestor.archive();
    let streams: Vec<(String, usize)> = archive
        .streams()
        .map(|k| (k.to_string(), archive.point_count(k)))
        .collect();
    let ingest_stats = ingestor.stats();

    let mut problems = Vec::new();
    let mut delivered = 0;
    for n in &nodes {
        let s = &n.stats;
        delivered += s.messages_delivered;
        if s.overflow_dropped > 0 {
            problems.push(format!(
                "node {}: {} messages dropped on buffer overflow",
                n.device_id, s.overflow_dropped
            ));
        }
        if n.buffered > 0 {
            problems.push(format!(
                "node {}: {} messages never delivered",
                n.device_id, n.buffered
            ));
        }
        if s.messages_created() != s.messages_delivered + s.overflow_dropped + n.buffered as u64 {
            problems.push(format!(
                "node {}: message accounting does not balance",
                n.device_id
            ));
        }
    }
    if gateway_stats.lines_written != delivered {
        problems.push(format!(
            "gateway wrote {} lines for {delivered} delivered messages",
            gateway_stats.lines_written
        ));
    }
    if ingest_stats.lines != gateway_stats.lines_written {
        problems.push(format!(
            "ingest received {} lines of the {} spooled",
            ingest_stats.lines, gateway_stats.lines_written
        ));
    }
    if ingest_stats.parse_errors > 0 {
        problems.push(format!(
            "{} lines failed to parse",
            ingest_stats.parse_errors
        ));
    }
    if backlog > 0 {
        problems.push(format!("{backlog} spool files were never forwarded"));
    }
    if dist.unsent_purged > 0 {
        problems.push(format!("{} unsent files were purged", dist.unsent_purged));
    }
    for p in &problems {
        warn!("conservation: {p}");
    }
    info!(
        "run complete: {} lines delivered, {} points archived",
        delivered, ingest_stats.archived
    );

    Ok(RunOutcome {
        report: RunReport {
            config_seed: cfg.seed,
            duration_s: cfg.duration_s,
            nodes,
            gateway: gateway_stats,
            distribution: dist,
            ingest: ingest_stats,
            streams,
            problems,
        },
        paths: paths.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            nodes: 2,
            duration_s: 1200,
            sample_interval_s: 10,
            report_interval_s: 120,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn small_run_conserves_and_repeats() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run(&small(), &ScenarioPaths::under(a.path()))
            .unwrap()
            .report;
        let rb = run(&small(), &ScenarioPaths::under(b.path()))
            .unwrap()
            .report;
        assert!(ra.conservation_ok(), "{}", ra.to_text());
        assert_eq!(ra.to_text(), rb.to_text());
        for n in &ra.nodes {
            assert_eq!(n.stats.samples, 120);
            assert_eq!(n.stats.reports_ok, 10);
        }
    }

    #[test]
    fn zero_nodes_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig {
            nodes: 0,
            duration_s: 600,
            ..ScenarioConfig::default()
        };
        let r = run(&cfg, &ScenarioPaths::under(dir.path())).unwrap().report;
        assert!(r.nodes.is_empty() && r.streams.is_empty());
        assert_eq!(r.gateway.files_written, 0);
        assert!(r.conservation_ok());
        assert!(spool::scan(&dir.path().join("spool")).unwrap().is_empty());
    }

    #[test]
    fn flaky_channel_is_seeded() {
        struct Ok_;
        impl TransferChannel for Ok_ {
            fn put(&mut self, _: &str, _: &[u8]) -> Result<(), TransferError> {
                Ok(())
            }
        }
        let pattern = |seed| {
            let mut c = FlakyChannel::new(Ok_, 0.5, seed);
            (0..64).map(|_| c.put("a", b"").is_ok()).collect::<Vec<_>>()
        };
        assert_eq!(pattern(3), pattern(3));
        assert_ne!(pattern(3), pattern(4));
    }
}
