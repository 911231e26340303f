//! Deterministic simulator of one sensor node's firmware.
//!
//! The firmware sleeps until something is due, then moves through one of
//! three work states and returns to sleep:
//!
//! ```text
//!            interrupt             sample due            report due
//!   SLEEP ─────────────▶ CHECK_ASYNCH   SLEEP ───▶ SAMPLE   SLEEP ───▶ REPORT
//!     ▲                      │            ▲          │        ▲          │
//!     └──────────────────────┘            └──────────┘        └──────────┘
//! ```
//!
//! Virtual time advances event by event. At any instant, interrupts are
//! handled first, then a due sample, then a due report, so a report always
//! carries the sample taken at the same instant.

pub mod environment;
pub mod orientation;
pub mod pir;
pub mod schedule;

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use log::{debug, warn};
use thiserror::Error;

use crate::recordstore::{RecordStore, RecordStoreError};
use crate::wire::{
    encode_message, frame_encode, Payload, SampleReading, SensorMessage, SessionFrame, ACK,
    PROTOCOL_VERSION,
};
use environment::VirtualEnvironment;
use orientation::{dominant_axis, orientation_check, Orientation};
use pir::{occupancy_fraction, PirState, TICKS_PER_SECOND};
use schedule::{standard_sample_schedule, SampleAction, TaskOffset};

/// 16384 bytes of RAM minus 2416 used by the program.
pub const DEFAULT_BUFFER_BYTES: usize = 13_968;
/// Below this much free arena space the node reports immediately.
pub const FORCE_REPORT_FREE_BYTES: usize = 160;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("sample interval must be at least 1 s")]
    SampleInterval,
    #[error("report interval {report} s is shorter than sample interval {sample} s")]
    ReportInterval { sample: u32, report: u32 },
    #[error("buffer of {0} bytes is below the 256-byte minimum")]
    Buffer(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub device_id: u16,
    pub sample_interval_s: u32,
    pub report_interval_s: u32,
    pub buffer_capacity_bytes: usize,
    pub gateway: Option<SocketAddr>,
    pub rng_seed: u64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            device_id: 1,
            sample_interval_s: 10,
            report_interval_s: 60,
            buffer_capacity_bytes: DEFAULT_BUFFER_BYTES,
            gateway: None,
            rng_seed: 0,
        }
    }
}

impl NodeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sample_interval_s < 1 {
            return Err(ConfigError::SampleInterval);
        }
        if self.report_interval_s < self.sample_interval_s {
            return Err(ConfigError::ReportInterval {
                sample: self.sample_interval_s,
                report: self.report_interval_s,
            });
        }
        if self.buffer_capacity_bytes < 256 {
            return Err(ConfigError::Buffer(self.buffer_capacity_bytes));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FsmState {
    Sleep,
    CheckAsynch,
    Sample,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    /// Virtual time in 1/256 s ticks.
    pub tick: u64,
    pub from: FsmState,
    pub to: FsmState,
}

impl Transition {
    pub fn seconds(&self) -> f64 {
        self.tick as f64 / TICKS_PER_SECOND as f64
    }
}

/// One report connection's worth of frames, already wire-encoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFrames {
    pub device_id: u16,
    pub virtual_time_s: u64,
    pub record_count: usize,
    pub frames: Vec<Vec<u8>>,
}

impl ReportFrames {
    pub fn bytes(&self) -> Vec<u8> {
        self.frames.concat()
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("gateway unreachable: {0}")]
    Connect(std::io::Error),
    #[error("transfer failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("gateway rejected the report (reply 0x{0:02x})")]
    Rejected(u8),
    #[error("gateway unavailable")]
    Unavailable,
}

/// The node's radio link to the gateway. A report succeeds only when the
/// gateway confirms it; on any error the node keeps its buffer.
pub trait Uplink {
    fn send_report(&mut self, report: &ReportFrames) -> Result<(), ReportError>;
}

impl<U: Uplink + ?Sized> Uplink for &mut U {
    fn send_report(&mut self, report: &ReportFrames) -> Result<(), ReportError> {
        (**self).send_report(report)
    }
}

/// Reports over a fresh TCP connection per report tick.
#[derive(Debug, Clone)]
pub struct TcpUplink {
    pub addr: SocketAddr,
    pub timeout: Duration,
}

impl TcpUplink {
    pub fn new(addr: SocketAddr) -> Self {
        TcpUplink {
            addr,
            timeout: Duration::from_secs(10),
        }
    }
}

impl Uplink for TcpUplink {
    fn send_report(&mut self, report: &ReportFrames) -> Result<(), ReportError> {
        let mut stream =
            TcpStream::connect_timeout(&self.addr, self.timeout).map_err(ReportError::Connect)?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        stream.set_nodelay(true)?;
        stream.write_all(&report.bytes())?;
        stream.flush()?;
        let mut reply = [0u8; 1];
        stream.read_exact(&mut reply)?;
        if reply[0] == ACK {
            Ok(())
        } else {
            Err(ReportError::Rejected(reply[0]))
        }
    }
}

/// Keeps every byte handed to the inner uplink.
#[derive(Debug, Default)]
pub struct RecordingUplink<U> {
    pub inner: U,
    pub transcript: Vec<u8>,
}

impl<U: Uplink> Uplink for RecordingUplink<U> {
    fn send_report(&mut self, report: &ReportFrames) -> Result<(), ReportError> {
        self.transcript.extend_from_slice(&report.bytes());
        self.inner.send_report(report)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReportResult {
    Delivered,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportOutcome {
    pub tick: u64,
    pub sent_messages: usize,
    pub forced: bool,
    pub result: ReportResult,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub samples: u64,
    pub occupancy_events: u64,
    pub orientation_events: u64,
    pub reports_ok: u64,
    pub reports_failed: u64,
    pub forced_reports: u64,
    pub messages_delivered: u64,
    pub overflow_dropped: u64,
}

impl NodeStats {
    pub fn messages_created(&self) -> u64 {
        self.samples + self.occupancy_events + self.orientation_events
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutput {
    pub transitions: Vec<Transition>,
    pub messages: Vec<SensorMessage>,
    pub reports: Vec<ReportOutcome>,
}

/// Result of one pass through the sampling schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleOutcome {
    pub message: SensorMessage,
    pub executed: Vec<(TaskOffset, &'static str, SampleAction)>,
}

#[derive(Debug, Clone)]
pub struct Node {
    config: NodeConfig,
    state: FsmState,
    tick: u64,
    last_sample_s: u64,
    last_report_s: u64,
    store: RecordStore,
    pir: PirState,
    orientation: Orientation,
    pir_cursor: usize,
    orientation_cursor: usize,
    stats: NodeStats,
}

fn quantize(v: f64, lo: f64, hi: f64) -> f64 {
    v.round().clamp(lo, hi)
}

impl Node {
    pub fn new(config: NodeConfig, env: &VirtualEnvironment) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Node {
            store: RecordStore::new(config.buffer_capacity_bytes),
            orientation: dominant_axis(env.gravity_at(0)),
            config,
            state: FsmState::Sleep,
            tick: 0,
            last_sample_s: 0,
            last_report_s: 0,
            pir: PirState::new(),
            pir_cursor: 0,
            orientation_cursor: 0,
            stats: NodeStats::default(),
        })
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn state(&self) -> FsmState {
        self.state
    }

    /// Current virtual time in whole seconds.
    pub fn now_s(&self) -> u64 {
        self.tick / TICKS_PER_SECOND
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn last_sample_s(&self) -> u64 {
        self.last_sample_s
    }

    pub fn last_report_s(&self) -> u64 {
        self.last_report_s
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn store(&self) -> &RecordStore {
        &self.store
    }

    pub fn pir(&self) -> &PirState {
        &self.pir
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    fn enter(&mut self, to: FsmState, out: &mut StepOutput) {
        out.transitions.push(Transition {
            tick: self.tick,
            from: self.state,
            to,
        });
        self.state = to;
    }

    /// Advances virtual time to `until_s` seconds, handling every event on the way.
    pub fn step<U: Uplink + ?Sized>(
        &mut self,
        env: &VirtualEnvironment,
        uplink: &mut U,
        until_s: u64,
    ) -> StepOutput {
        let mut out = StepOutput::default();
        let until = until_s * TICKS_PER_SECOND;
        let sample_every = self.config.sample_interval_s as u64;
        let report_every = self.config.report_interval_s as u64;
        loop {
            let next_edge = env.pir_edges().get(self.pir_cursor).map(|e| e.0);
            let next_turn = env
                .orientation_changes()
                .get(self.orientation_cursor)
                .map(|e| e.0);
            let next_sample = (self.last_sample_s + sample_every) * TICKS_PER_SECOND;
            let next_report = (self.last_report_s + report_every) * TICKS_PER_SECOND;
            let next = [
                next_edge,
                self.pir.deadline(),
                next_turn,
                Some(next_sample),
                Some(next_report),
            ]
            .into_iter()
            .flatten()
            .min()
            .expect("sample time always present");
            if next > until {
                break;
            }
            self.tick = next;

            let mut interrupted = false;
            let mut events = Vec::new();
            while let Some(&(tick, level)) = env.pir_edges().get(self.pir_cursor) {
                if tick != self.tick {
                    break;
                }
                self.pir_cursor += 1;
                interrupted = true;
                if let Ok(Some(occupied)) = self.pir.process_edge(tick, level) {
                    events.push(Payload::Occupancy { occupied });
                }
            }
            if self.pir.deadline() == Some(self.tick) {
                interrupted = true;
                if let Ok(Some(occupied)) = self.pir.poll(self.tick) {
                    events.push(Payload::Occupancy { occupied });
                }
            }
            while let Some(&(tick, gravity)) =
                env.orientation_changes().get(self.orientation_cursor)
            {
                if tick != self.tick {
                    break;
                }
                self.orientation_cursor += 1;
                interrupted = true;
                if let Some(o) = orientation_check(&mut self.orientation, gravity) {
                    events.push(Payload::Orientation {
                        axis: o.axis,
                        sign: o.sign,
                    });
                }
            }
            if interrupted {
                self.enter(FsmState::CheckAsynch, &mut out);
                for payload in events {
                    match payload {
                        Payload::Occupancy { .. } => self.stats.occupancy_events += 1,
                        _ => self.stats.orientation_events += 1,
                    }
                    let msg = SensorMessage {
                        device_id: self.config.device_id,
                        timestamp: self.now_s() as u32,
                        payload,
                    };
                    self.store_message(&msg, uplink, &mut out);
                    out.messages.push(msg);
                }
                self.enter(FsmState::Sleep, &mut out);
            }

            if self.tick == next_sample {
                self.enter(FsmState::Sample, &mut out);
                let sample = self.run_sample_schedule(env);
                self.stats.samples += 1;
                self.last_sample_s = self.now_s();
                self.store_message(&sample.message, uplink, &mut out);
                out.messages.push(sample.message);
                self.enter(FsmState::Sleep, &mut out);
            }

            if self.tick == next_report {
                self.enter(FsmState::Report, &mut out);
                let outcome = self.report(uplink, false);
                out.reports.push(outcome);
                self.enter(FsmState::Sleep, &mut out);
            }
        }
        self.tick = self.tick.max(until);
        out
    }

    /// Runs the sampling task list at the current instant and builds the report.
    /// Each instrument is read at the virtual time of its read task.
    pub fn run_sample_schedule(&mut self, env: &VirtualEnvironment) -> SampleOutcome {
        let t0 = self.tick as f64 / TICKS_PER_SECOND as f64;
        let mut reading = SampleReading::default();
        let mut executed = Vec::new();
        for task in standard_sample_schedule().execution_order() {
            let at = t0 + task.offset.millis().unwrap_or(0) as f64 / 1000.0;
            match task.action {
                SampleAction::StartReport => reading = SampleReading::default(),
                SampleAction::ComputeOccupancy => {
                    let high = self.pir.take_high_ticks(self.tick).unwrap_or(0);
                    reading.occupancy_fraction =
                        occupancy_fraction(high, self.config.sample_interval_s);
                }
                SampleAction::ReadAcceleration => {
                    let a = env.acceleration_g(at);
                    for (dst, g) in reading.accel.iter_mut().zip(a) {
                        *dst = quantize(g * 1000.0, -8000.0, 8000.0) as i16;
                    }
                }
                SampleAction::ReadHumidityStartTemperature => {
                    reading.relative_humidity =
                        quantize(env.humidity_pct(at) * 100.0, 0.0, 10_000.0) as u16;
                }
                SampleAction::ReadTemperature => {
                    reading.temperature =
                        quantize(env.temperature_c(at) * 100.0, -4000.0, 8500.0) as i16;
                }
                SampleAction::ReadLight => {
                    reading.illuminance = quantize(env.illuminance_lux(at), 0.0, 65_535.0) as u16;
                }
                SampleAction::StartHumidityConversion
                | SampleAction::WakeLight
                | SampleAction::StoreReport => {}
            }
            executed.push((task.offset, task.component, task.action));
        }
        SampleOutcome {
            message: SensorMessage {
                device_id: self.config.device_id,
                timestamp: self.now_s() as u32,
                payload: Payload::Sample(reading),
            },
            executed,
        }
    }

    fn store_message<U: Uplink + ?Sized>(
        &mut self,
        msg: &SensorMessage,
        uplink: &mut U,
        out: &mut StepOutput,
    ) {
        let bytes = encode_message(msg).expect("node produces in-range messages");
        let stored = match self.store.append(&bytes) {
            Ok(_) => true,
            Err(RecordStoreError::Capacity { .. } | RecordStoreError::TemplateLimit) => {
                self.forced_report(uplink, out);
                self.store.append(&bytes).is_ok()
            }
            Err(e) => unreachable!("encoded messages fit a record: {e}"),
        };
        if !stored {
            self.stats.overflow_dropped += 1;
            warn!(
                "node {}: buffer full, dropped message at t={}",
                self.config.device_id,
                self.now_s()
            );
            return;
        }
        if self.store.free() < FORCE_REPORT_FREE_BYTES {
            self.forced_report(uplink, out);
        }
    }

    fn forced_report<U: Uplink + ?Sized>(&mut self, uplink: &mut U, out: &mut StepOutput) {
        let back_to = self.state;
        self.enter(FsmState::Report, out);
        let outcome = self.report(uplink, true);
        out.reports.push(outcome);
        self.enter(back_to, out);
    }

    /// Sends the whole buffer; clears it only once the gateway confirms.
    pub fn report<U: Uplink + ?Sized>(&mut self, uplink: &mut U, forced: bool) -> ReportOutcome {
        let count = self.store.len();
        let mut frames = Vec::with_capacity(count + 2);
        frames.push(
            frame_encode(
                &SessionFrame::Hello {
                    device_id: self.config.device_id,
                    version: PROTOCOL_VERSION,
                    record_count: count as u16,
                }
                .encode(),
            )
            .expect("hello fits a frame"),
        );
        for record in self.store.records() {
            frames.push(frame_encode(record).expect("records fit a frame"));
        }
        frames.push(
            frame_encode(
                &SessionFrame::End {
                    messages_sent: count as u16,
                }
                .encode(),
            )
            .expect("end fits a frame"),
        );
        let report = ReportFrames {
            device_id: self.config.device_id,
            virtual_time_s: self.now_s(),
            record_count: count,
            frames,
        };
        let result = match uplink.send_report(&report) {
            Ok(()) => {
                self.store.clear();
                self.stats.reports_ok += 1;
                self.stats.messages_delivered += count as u64;
                debug!("node {}: delivered {count} messages", self.config.device_id);
                ReportResult::Delivered
            }
            Err(e) => {
                self.stats.reports_failed += 1;
                warn!(
                    "node {}: report at t={} failed: {e}",
                    self.config.device_id,
                    self.now_s()
                );
                ReportResult::Failed(e.to_string())
            }
        };
        if forced {
            self.stats.forced_reports += 1;
        } else {
            self.last_report_s = self.now_s();
        }
        ReportOutcome {
            tick: self.tick,
            sent_messages: if result == ReportResult::Delivered {
                count
            } else {
                0
            },
            forced,
            result,
        }
    }
}
