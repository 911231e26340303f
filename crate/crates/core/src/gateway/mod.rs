//! Gateway: accepts node report connections, spools one flat file per
//! connection, and forwards spooled files to the ingest service.

pub mod distributor;
pub mod lines;
pub mod spool;
pub mod transfer;

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use chrono::DateTime;
use log::{debug, error, info, warn};
use thiserror::Error;

use crate::clock::Clock;
use crate::recordstore::{RecordDecoder, RecordOutcome};
use crate::wire::{decode_message, SessionFrame, StreamDecoder, ACK, NAK, PROTOCOL_VERSION};

pub use distributor::{DistributeReport, Distributor};
pub use lines::format_line;
pub use spool::{purge, scan, PurgeReport, Spool, SpoolEntry, SpoolName};
pub use transfer::{TcpTransferChannel, TransferChannel, TransferError};

/// 2016-01-01T00:00:00Z; node timestamps count seconds from here.
pub const DEFAULT_SIM_EPOCH_UNIX: i64 = 1_451_606_400;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("retention_days must be at least 1")]
    Retention,
    #[error("batch_size must be at least 1")]
    BatchSize,
    #[error("poll_interval_s must be at least 1")]
    PollInterval,
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("spool root {path}: {source}")]
    Spool { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpoolConfig {
    pub listen: SocketAddr,
    pub spool_root: PathBuf,
    pub retention_days: u32,
    pub poll_interval_s: u64,
    pub batch_size: usize,
    /// Unix time of node timestamp zero.
    pub sim_epoch_unix: i64,
}

impl SpoolConfig {
    pub fn new(listen: SocketAddr, spool_root: impl Into<PathBuf>) -> Self {
        SpoolConfig {
            listen,
            spool_root: spool_root.into(),
            retention_days: 10,
            poll_interval_s: 60,
            batch_size: 50,
            sim_epoch_unix: DEFAULT_SIM_EPOCH_UNIX,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.retention_days == 0 {
            return Err(GatewayError::Retention);
        }
        if self.batch_size == 0 {
            return Err(GatewayError::BatchSize);
        }
        if self.poll_interval_s == 0 {
            return Err(GatewayError::PollInterval);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SessionState {
    AwaitHello,
    Open,
    Ended,
    Rejected,
}

/// Per-connection decoding state: HELLO, one record per frame, END.
#[derive(Debug)]
pub struct ReportSession {
    epoch_unix: i64,
    state: SessionState,
    device_id: Option<u16>,
    announced: u16,
    end_count: Option<u16>,
    decoder: RecordDecoder,
    lines: Vec<String>,
    records_dropped: usize,
}

/// What a finished connection produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSummary {
    pub device_id: Option<u16>,
    pub lines: Vec<String>,
    pub rejected: bool,
    /// END arrived and every announced record decoded.
    pub complete: bool,
    pub records_dropped: usize,
}

impl ReportSession {
    pub fn new(epoch_unix: i64) -> Self {
        ReportSession {
            epoch_unix,
            state: SessionState::AwaitHello,
            device_id: None,
            announced: 0,
            end_count: None,
            decoder: RecordDecoder::new(),
            lines: Vec::new(),
            records_dropped: 0,
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self.state, SessionState::Ended | SessionState::Rejected)
    }

    pub fn on_frame(&mut self, payload: &[u8]) {
        match self.state {
            SessionState::AwaitHello => match SessionFrame::parse(payload) {
                Some(SessionFrame::Hello {
                    device_id,
                    version: PROTOCOL_VERSION,
                    record_count,
                }) => {
                    self.device_id = Some(device_id);
                    self.announced = record_count;
                    self.state = SessionState::Open;
                }
                _ => {
                    warn!("gateway: connection did not open with a valid HELLO");
                    self.state = SessionState::Rejected;
                }
            },
            SessionState::Open => {
                if let Some(SessionFrame::End { messages_sent }) = SessionFrame::parse(payload) {
                    self.end_count = Some(messages_sent);
                    self.state = SessionState::Ended;
                    return;
                }
                self.on_record(payload);
            }
            SessionState::Ended | SessionState::Rejected => {}
        }
    }

    fn on_record(&mut self, payload: &[u8]) {
        let bytes = match self.decoder.decode_record(payload) {
            Ok(RecordOutcome::Message(m)) => m,
            Ok(RecordOutcome::UnknownTemplate(t)) => {
                debug!("gateway: delta against unknown template {t}");
                self.records_dropped += 1;
                return;
            }
            Err(e) => {
                debug!("gateway: bad record: {e}");
                self.records_dropped += 1;
                return;
            }
        };
        match decode_message(&bytes) {
            Ok(msg) if Some(msg.device_id) == self.device_id => {
                self.lines.push(format_line(&msg, self.epoch_unix));
            }
            Ok(msg) => {
                warn!(
                    "gateway: message from device {} on connection of device {:?}",
                    msg.device_id, self.device_id
                );
                self.records_dropped += 1;
            }
            Err(e) => {
                debug!("gateway: undecodable message: {e}");
                self.records_dropped += 1;
            }
        }
    }

    pub fn finish(self) -> SessionSummary {
        let n = self.lines.len();
        let complete = self.state == SessionState::Ended
            && self.records_dropped == 0
            && self.end_count == Some(self.announced)
            && n == self.announced as usize;
        SessionSummary {
            device_id: self.device_id,
            lines: self.lines,
            rejected: self.state == SessionState::Rejected || self.device_id.is_none(),
            complete,
            records_dropped: self.records_dropped,
        }
    }
}

#[derive(Debug, Default)]
pub struct GatewayStats {
    pub connections: AtomicU64,
    pub rejected: AtomicU64,
    pub files_written: AtomicU64,
    pub lines_written: AtomicU64,
    pub frames_dropped: AtomicU64,
    pub records_dropped: AtomicU64,
    pub nak_sent: AtomicU64,
    pub write_errors: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStatsSnapshot {
    pub connections: u64,
    pub rejected: u64,
    pub files_written: u64,
    pub lines_written: u64,
    pub frames_dropped: u64,
    pub records_dropped: u64,
    pub nak_sent: u64,
    pub write_errors: u64,
}

impl GatewayStats {
    pub fn snapshot(&self) -> GatewayStatsSnapshot {
        let l = |a: &AtomicU64| a.load(Ordering::SeqCst);
        GatewayStatsSnapshot {
            connections: l(&self.connections),
            rejected: l(&self.rejected),
            files_written: l(&self.files_written),
            lines_written: l(&self.lines_written),
            frames_dropped: l(&self.frames_dropped),
            records_dropped: l(&self.records_dropped),
            nak_sent: l(&self.nak_sent),
            write_errors: l(&self.write_errors),
        }
    }
}

struct Shared {
    spool: Spool,
    clock: Arc<dyn Clock>,
    epoch_unix: i64,
    stats: Arc<GatewayStats>,
}

/// Running listener; dropping the handle stops it.
pub struct GatewayHandle {
    local_addr: SocketAddr,
    stats: Arc<GatewayStats>,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl GatewayHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stats(&self) -> GatewayStatsSnapshot {
        self.stats.snapshot()
    }

    /// Stops accepting and waits for in-flight connections to finish.
    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the listener stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

pub struct GatewayServer;

impl GatewayServer {
    pub fn start(
        config: &SpoolConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<GatewayHandle, GatewayError> {
        config.validate()?;
        let spool = Spool::new(&config.spool_root).map_err(|source| GatewayError::Spool {
            path: config.spool_root.clone(),
            source,
        })?;
        let listener = TcpListener::bind(config.listen).map_err(|source| GatewayError::Bind {
            addr: config.listen,
            source,
        })?;
        let bind_err = |source| GatewayError::Bind {
            addr: config.listen,
            source,
        };
        let local_addr = listener.local_addr().map_err(bind_err)?;
        listener.set_nonblocking(true).map_err(bind_err)?;
        let stats = Arc::new(GatewayStats::default());
        let shutdown = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Shared {
            spool,
            clock,
            epoch_unix: config.sim_epoch_unix,
            stats: Arc::clone(&stats),
        });
        let stop = Arc::clone(&shutdown);
        let thread = thread::Builder::new()
            .name("gateway-listen".into())
            .spawn(move || accept_loop(listener, shared, stop))
            .expect("spawn listener thread");
        info!("gateway listening on {local_addr}");
        Ok(GatewayHandle {
            local_addr,
            stats,
            shutdown,
            thread: Some(thread),
        })
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, stop: Arc<AtomicBool>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let shared = Arc::clone(&shared);
                workers.retain(|w| !w.is_finished());
                workers.push(thread::spawn(move || {
                    if let Err(e) = handle_connection(stream, &shared) {
                        warn!("gateway: connection from {peer}: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) => {
                error!("gateway: accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn handle_connection(mut stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(30)))?;
    shared.stats.connections.fetch_add(1, Ordering::SeqCst);
    let mut session = ReportSession::new(shared.epoch_unix);
    let mut decoder = StreamDecoder::new();
    let mut buf = [0u8; 4096];
    let mut read_error = None;
    while !session.is_done() {
        let n = match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => {
                read_error = Some(e);
                break;
            }
        };
        let mut frames = Vec::new();
        decoder.push(&buf[..n], |f| frames.push(f));
        for f in frames {
            session.on_frame(&f);
        }
    }
    let frame_stats = decoder.finish();
    let summary = session.finish();
    let stats = &shared.stats;
    stats
        .frames_dropped
        .fetch_add(frame_stats.dropped as u64, Ordering::SeqCst);
    stats
        .records_dropped
        .fetch_add(summary.records_dropped as u64, Ordering::SeqCst);
    if frame_stats.dropped > 0 || summary.records_dropped > 0 {
        warn!(
            "gateway: device {:?}: {} frames and {} records dropped",
            summary.device_id, frame_stats.dropped, summary.records_dropped
        );
    }
    if summary.rejected {
        stats.rejected.fetch_add(1, Ordering::SeqCst);
        let _ = stream.write_all(&[NAK]);
        return Ok(());
    }
    let device = summary.device_id.unwrap_or_default();
    let mut written = true;
    if !summary.lines.is_empty() {
        let now = shared.clock.now_unix();
        match shared.spool.write_file(now, device, &summary.lines) {
            Ok(path) => {
                stats.files_written.fetch_add(1, Ordering::SeqCst);
                stats
                    .lines_written
                    .fetch_add(summary.lines.len() as u64, Ordering::SeqCst);
                debug!(
                    "gateway: device {device}: {} lines -> {}",
                    summary.lines.len(),
                    path.display()
                );
            }
            Err(e) => {
                error!("gateway: cannot spool report from device {device}: {e}");
                stats.write_errors.fetch_add(1, Ordering::SeqCst);
                written = false;
            }
        }
    }
    if let Some(e) = read_error {
        return Err(e);
    }
    if summary.complete && written {
        stream.write_all(&[ACK])?;
    } else {
        stats.nak_sent.fetch_add(1, Ordering::SeqCst);
        stream.write_all(&[NAK])?;
    }
    Ok(())
}

/// One distributor pass followed by a purge, as run every poll interval.
#[derive(Debug, Clone, Default)]
pub struct PollReport {
    pub distribute: DistributeReport,
    pub purge: PurgeReport,
}

pub fn poll_once<C: TransferChannel + ?Sized>(
    config: &SpoolConfig,
    distributor: &mut Distributor,
    channel: &mut C,
    now_unix: i64,
) -> PollReport {
    let distribute = distributor.distribute(channel);
    let now = DateTime::from_timestamp(now_unix, 0).unwrap_or_default();
    let purge = purge(&config.spool_root, config.retention_days, now);
    PollReport { distribute, purge }
}

/// Runs the distributor every `poll_interval_s` until `stop` is set.
pub fn run_distribution_loop<C: TransferChannel + ?Sized>(
    config: &SpoolConfig,
    channel: &mut C,
    clock: &dyn Clock,
    stop: &AtomicBool,
) {
    let mut distributor = Distributor::new(&config.spool_root, config.batch_size);
    while !stop.load(Ordering::SeqCst) {
        let r = poll_once(config, &mut distributor, channel, clock.now_unix());
        if r.distribute.files_sent > 0 || r.distribute.files_failed > 0 {
            info!(
                "distributor: sent {} failed {} backlog {}",
                r.distribute.files_sent, r.distribute.files_failed, r.distribute.backlog_after
            );
        }
        let mut waited = 0;
        while waited < config.poll_interval_s * 10 && !stop.load(Ordering::SeqCst) {
            thread::sleep(Duration::from_millis(100));
            waited += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::recordstore::RecordStore;
    use crate::wire::{encode_message, frame_encode, Payload, SampleReading, SensorMessage};

    fn sample(dev: u16, ts: u32) -> SensorMessage {
        SensorMessage {
            device_id: dev,
            timestamp: ts,
            payload: Payload::Sample(SampleReading {
                temperature: 2150,
                relative_humidity: 4000,
                illuminance: 300,
                accel: [0, 0, 1000],
                occupancy_fraction: 0,
            }),
        }
    }

    fn report_bytes(dev: u16, msgs: &[SensorMessage]) -> Vec<u8> {
        let mut store = RecordStore::new(16_000);
        for m in msgs {
            store.append(&encode_message(m).unwrap()).unwrap();
        }
        let mut out = frame_encode(
            &SessionFrame::Hello {
                device_id: dev,
                version: PROTOCOL_VERSION,
                record_count: store.len() as u16,
            }
            .encode(),
        )
        .unwrap();
        for r in store.records() {
            out.extend(frame_encode(r).unwrap());
        }
        out.extend(
            frame_encode(
                &SessionFrame::End {
                    messages_sent: store.len() as u16,
                }
                .encode(),
            )
            .unwrap(),
        );
        out
    }

    fn start(dir: &std::path::Path, clock: &ManualClock) -> GatewayHandle {
        let cfg = SpoolConfig::new("127.0.0.1:0".parse().unwrap(), dir);
        GatewayServer::start(&cfg, Arc::new(clock.clone())).unwrap()
    }

    fn send(addr: SocketAddr, bytes: &[u8], close_write: bool) -> Option<u8> {
        let mut s = TcpStream::connect(addr).unwrap();
        s.write_all(bytes).unwrap();
        if close_write {
            s.shutdown(std::net::Shutdown::Write).unwrap();
        }
        let mut r = [0u8; 1];
        s.read_exact(&mut r).ok().map(|_| r[0])
    }

    fn wait_for(handle: &GatewayHandle, connections: u64) {
        for _ in 0..500 {
            if handle.stats().connections >= connections {
                thread::sleep(Duration::from_millis(20));
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
    }

    #[test]
    fn session_decodes_report() {
        let msgs: Vec<_> = (0..60).map(|i| sample(4, 10 * i)).collect();
        let bytes = report_bytes(4, &msgs);
        let mut s = ReportSession::new(DEFAULT_SIM_EPOCH_UNIX);
        crate::wire::frame_decode_stream(&bytes, |f| s.on_frame(&f));
        let sum = s.finish();
        assert!(sum.complete && !sum.rejected);
        assert_eq!(sum.lines.len(), 60);
        assert!(sum.lines.iter().all(|l| l.starts_with("S,4,")));
    }

    #[test]
    fn session_requires_hello() {
        let mut s = ReportSession::new(0);
        s.on_frame(&encode_message(&sample(1, 0)).unwrap());
        assert!(s.is_done());
        assert!(s.finish().rejected);
    }

    #[test]
    fn one_connection_one_file() {
        let dir = tempfile::tempdir().unwrap();
        let clock = ManualClock::new(DEFAULT_SIM_EPOCH_UNIX + 600);
        let gw = start(dir.path(), &clock);
        let msgs: Vec<_> = (0..60).map(|i| sample(9, 10 * i)).collect();
        assert_eq!(
            send(gw.local_addr(), &report_bytes(9, &msgs), false),
            Some(ACK)
        );
        let files = scan(dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].name.remote_name(), "20160101_001000_9_0.txt");
        let body = std::fs::read_to_string(&files[0].path).unwrap();
        assert_eq!(body.lines().filter(|l| l.starts_with("S,")).count(), 60);
        assert_eq!(
            body.lines().next().unwrap(),
            "S,9,1451606400,21.50,40.00,300,0.000,0.000,1.000,0.0"
        );
    }

    #[test]
    fn empty_and_rejected_connections_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let clock = ManualClock::new(DEFAULT_SIM_EPOCH_UNIX);
        let gw = start(dir.path(), &clock);
        assert_eq!(
            send(gw.local_addr(), &report_bytes(2, &[]), false),
            Some(ACK)
        );
        let junk = frame_encode(&encode_message(&sample(2, 0)).unwrap()).unwrap();
        assert_eq!(send(gw.local_addr(), &junk, true), Some(NAK));
        assert!(scan(dir.path()).unwrap().is_empty());
        assert_eq!(gw.stats().rejected, 1);
    }

    #[test]
    fn truncated_stream_keeps_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let clock = ManualClock::new(DEFAULT_SIM_EPOCH_UNIX);
        let gw = start(dir.path(), &clock);
        let msgs: Vec<_> = (0..10).map(|i| sample(3, i)).collect();
        let full = report_bytes(3, &msgs);
        // cut inside the sixth record frame
        let mut cut = 0;
        let mut delimiters = 0;
        for (i, b) in full.iter().enumerate() {
            if *b == 0x0A {
                delimiters += 1;
                if delimiters == 6 {
                    cut = i + 3;
                    break;
                }
            }
        }
        assert_eq!(send(gw.local_addr(), &full[..cut], true), Some(NAK));
        wait_for(&gw, 1);
        gw.shutdown();
        let files = scan(dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let body = std::fs::read_to_string(&files[0].path).unwrap();
        assert_eq!(body.lines().count(), 5);
    }

    #[test]
    fn day_rollover_and_concurrent_connections() {
        let dir = tempfile::tempdir().unwrap();
        let clock = ManualClock::new(1_451_692_799);
        let gw = start(dir.path(), &clock);
        let addr = gw.local_addr();
        send(addr, &report_bytes(1, &[sample(1, 5)]), false);
        clock.set(1_451_692_801);
        let handles: Vec<_> = (0..8u16)
            .map(|d| {
                let bytes = report_bytes(d, &[sample(d, 1), sample(d, 2)]);
                thread::spawn(move || send(addr, &bytes, false))
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), Some(ACK));
        }
        let files = scan(dir.path()).unwrap();
        assert_eq!(files.len(), 9);
        assert_eq!(files[0].name.day, "20160101");
        assert!(files[1..].iter().all(|f| f.name.day == "20160102"));
        assert_eq!(gw.stats().lines_written, 17);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SpoolConfig::new("127.0.0.1:0".parse().unwrap(), "/tmp/x");
        assert!(cfg.validate().is_ok());
        cfg.retention_days = 0;
        assert!(matches!(cfg.validate(), Err(GatewayError::Retention)));
        cfg.retention_days = 1;
        cfg.batch_size = 0;
        assert!(matches!(cfg.validate(), Err(GatewayError::BatchSize)));
    }
}
