//! Ingest service: parses spool files, filters and compresses each stream,
//! and archives the surviving points.

pub mod archive;
pub mod filter;
pub mod parse;
pub mod receiver;
pub mod settings;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use thiserror::Error;

pub use archive::{export_csv, Archive, ArchiveError, StreamKey};
pub use filter::{interpolate, swinging_door, ExceptionFilter, Point, SwingingDoor, Verdict};
pub use parse::{parse_flat_file, LineError, LineRecord, ParsedFile, SAMPLE_STREAMS};
pub use receiver::{IngestHandle, IngestServer, ReceiverStats};
pub use settings::{CompressionSettings, SettingsError, StreamSettings};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileReport {
    pub lines: usize,
    pub parse_errors: Vec<LineError>,
    pub points_in: usize,
    pub passed: usize,
    pub deadband: usize,
    pub duplicates: usize,
    pub conflicts: usize,
    pub out_of_order: usize,
    pub archived: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub files: u64,
    pub lines: u64,
    pub parse_errors: u64,
    pub points_in: u64,
    pub passed: u64,
    pub deadband: u64,
    pub duplicates: u64,
    pub conflicts: u64,
    pub out_of_order: u64,
    pub archived: u64,
}

impl IngestStats {
    fn add(&mut self, r: &FileReport) {
        self.files += 1;
        self.lines += r.lines as u64;
        self.parse_errors += r.parse_errors.len() as u64;
        self.points_in += r.points_in as u64;
        self.passed += r.passed as u64;
        self.deadband += r.deadband as u64;
        self.duplicates += r.duplicates as u64;
        self.conflicts += r.conflicts as u64;
        self.out_of_order += r.out_of_order as u64;
        self.archived += r.archived as u64;
    }
}

#[derive(Debug)]
struct StreamState {
    exception: ExceptionFilter,
    door: SwingingDoor,
    settings: StreamSettings,
}

/// Single writer over an [`Archive`]. Every file is ingested as a unit: the
/// compressor's held point is archived at the end of each file, so the last
/// archived point is always the last passed one and a restart resumes exactly.
#[derive(Debug)]
pub struct Ingestor {
    archive: Archive,
    settings: CompressionSettings,
    states: HashMap<StreamKey, StreamState>,
    stats: IngestStats,
}

impl Ingestor {
    pub fn new(archive: Archive, settings: CompressionSettings) -> Self {
        Ingestor {
            archive,
            settings,
            states: HashMap::new(),
            stats: IngestStats::default(),
        }
    }

    pub fn open(
        dir: impl Into<PathBuf>,
        settings: CompressionSettings,
    ) -> Result<Self, IngestError> {
        Ok(Self::new(Archive::open(dir)?, settings))
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn settings(&self) -> &CompressionSettings {
        &self.settings
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    fn state(&mut self, key: &StreamKey) -> &mut StreamState {
        if !self.states.contains_key(key) {
            let settings = self.settings.for_stream(&key.stream);
            let last = self.archive.last_point(key);
            self.states.insert(
                key.clone(),
                StreamState {
                    exception: ExceptionFilter::resume(last),
                    door: SwingingDoor::new(&settings, last),
                    settings,
                },
            );
        }
        self.states.get_mut(key).expect("inserted above")
    }

    pub fn ingest_text(&mut self, text: &str) -> Result<FileReport, IngestError> {
        let parsed = parse_flat_file(text);
        let mut report = FileReport {
            lines: parsed.records.len() + parsed.errors.len(),
            ..FileReport::default()
        };
        for e in &parsed.errors {
            warn!("ingest: {e}");
        }
        report.parse_errors = parsed.errors;
        let mut touched = BTreeSet::new();
        let mut out = Vec::new();
        for record in &parsed.records {
            let t = record.timestamp() as f64;
            for (stream, v) in record.points() {
                report.points_in += 1;
                let key = StreamKey::new(record.device_id(), stream);
                let state = self.state(&key);
                let settings = state.settings;
                match state.exception.check(Point::new(t, v), &settings) {
                    Verdict::Pass => {
                        report.passed += 1;
                        out.clear();
                        state
                            .door
                            .push(Point::new(t, v), &mut out)
                            .expect("exception filter keeps time strictly increasing");
                        for p in out.drain(..) {
                            self.archive.append(&key, p)?;
                            report.archived += 1;
                        }
                        touched.insert(key);
                    }
                    Verdict::Deadband => report.deadband += 1,
                    Verdict::Duplicate => report.duplicates += 1,
                    Verdict::Conflict => {
                        warn!("ingest: {key} has two values at t={t}; keeping the first");
                        report.conflicts += 1;
                    }
                    Verdict::OutOfOrder => report.out_of_order += 1,
                }
            }
        }
        for key in touched {
            let state = self
                .states
                .get_mut(&key)
                .expect("touched streams have state");
            out.clear();
            state.door.flush(&mut out);
            for p in out.drain(..) {
                self.archive.append(&key, p)?;
                report.archived += 1;
            }
        }
        self.archive.flush()?;
        self.stats.add(&report);
        debug!(
            "ingest: {} lines, {} points in, {} archived",
            report.lines, report.points_in, report.archived
        );
        Ok(report)
    }

    pub fn ingest_file(&mut self, path: &Path) -> Result<FileReport, IngestError> {
        let text = fs::read_to_string(path).map_err(|source| IngestError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        self.ingest_text(&text)
    }
}
