//! Append-only per-stream point logs.
//!
//! Each stream lives in `<device>.<stream>.bin` as 16-byte little-endian
//! `(t: f64, v: f64)` records with strictly increasing `t`. `manifest.txt`
//! lists the streams and their units.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use thiserror::Error;

use super::filter::{interpolate, Point};
use super::parse::{is_known_stream, stream_unit};

pub const RECORD_LEN: usize = 16;
const EXT: &str = ".bin";
const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamKey {
    pub device_id: u16,
    pub stream: String,
}

impl StreamKey {
    pub fn new(device_id: u16, stream: &str) -> Self {
        StreamKey {
            device_id,
            stream: stream.to_string(),
        }
    }

    fn file_name(&self) -> String {
        format!("{self}{EXT}")
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.device_id, self.stream)
    }
}

impl FromStr for StreamKey {
    type Err = String;

    /// Parses `<device>.<stream>`, e.g. `3.temp`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (dev, stream) = s
            .split_once('.')
            .ok_or_else(|| format!("stream key {s:?} is not <device>.<stream>"))?;
        let device_id = dev
            .parse()
            .map_err(|_| format!("bad device id in stream key {s:?}"))?;
        if stream.is_empty() {
            return Err(format!("empty stream name in {s:?}"));
        }
        Ok(StreamKey {
            device_id,
            stream: stream.to_string(),
        })
    }
}

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive i/o on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("unknown stream {key}; known streams: {}", known_list(.known))]
    UnknownStream { key: String, known: Vec<String> },
    #[error("stream {key}: timestamp {t} is not after {last}")]
    NotIncreasing { key: String, t: f64, last: f64 },
    #[error("non-finite point in stream {key}")]
    NotFinite { key: String },
    #[error("invalid query: {0}")]
    Query(String),
}

fn known_list(known: &[String]) -> String {
    if known.is_empty() {
        "(none)".to_string()
    } else {
        known.join(", ")
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug)]
struct StreamLog {
    path: PathBuf,
    points: Vec<Point>,
    writer: Option<BufWriter<File>>,
}

/// Decodes a log, keeping the longest valid prefix. Returns the points and
/// the byte length of that prefix.
fn decode_log(bytes: &[u8]) -> (Vec<Point>, usize) {
    let mut points: Vec<Point> = Vec::with_capacity(bytes.len() / RECORD_LEN);
    for rec in bytes.chunks_exact(RECORD_LEN) {
        let t = f64::from_le_bytes(rec[..8].try_into().expect("8 bytes"));
        let v = f64::from_le_bytes(rec[8..].try_into().expect("8 bytes"));
        let ok = t.is_finite() && v.is_finite() && points.last().is_none_or(|p| t > p.t);
        if !ok {
            break;
        }
        points.push(Point { t, v });
    }
    let len = points.len() * RECORD_LEN;
    (points, len)
}

#[derive(Debug)]
pub struct Archive {
    dir: PathBuf,
    streams: BTreeMap<StreamKey, StreamLog>,
}

impl Archive {
    /// Opens or creates an archive, cutting any torn tail off each log.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ArchiveError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut streams = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(key) = name
                .strip_suffix(EXT)
                .and_then(|s| s.parse::<StreamKey>().ok())
            else {
                continue;
            };
            let path = entry.path();
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let (points, good) = decode_log(&bytes);
            if good != bytes.len() {
                warn!(
                    "archive: {name}: dropping {} trailing bytes",
                    bytes.len() - good
                );
                let f = OpenOptions::new()
                    .write(true)
                    .open(&path)
                    .map_err(io_err(&path))?;
                f.set_len(good as u64).map_err(io_err(&path))?;
                f.sync_all().map_err(io_err(&path))?;
            }
            streams.insert(
                key,
                StreamLog {
                    path,
                    points,
                    writer: None,
                },
            );
        }
        Ok(Archive { dir, streams })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn streams(&self) -> impl Iterator<Item = &StreamKey> {
        self.streams.keys()
    }

    pub fn last_point(&self, key: &StreamKey) -> Option<Point> {
        self.streams.get(key).and_then(|s| s.points.last().copied())
    }

    pub fn point_count(&self, key: &StreamKey) -> usize {
        self.streams.get(key).map_or(0, |s| s.points.len())
    }

    pub fn total_points(&self) -> usize {
        self.streams.values().map(|s| s.points.len()).sum()
    }

    /// Appends one point; it is visible to queries at once and durable after
    /// the next [`Archive::flush`].
    pub fn append(&mut self, key: &StreamKey, p: Point) -> Result<(), ArchiveError> {
        if !p.t.is_finite() || !p.v.is_finite() {
            return Err(ArchiveError::NotFinite {
                key: key.to_string(),
            });
        }
        if !self.streams.contains_key(key) {
            let path = self.dir.join(key.file_name());
            self.streams.insert(
                key.clone(),
                StreamLog {
                    path,
                    points: Vec::new(),
                    writer: None,
                },
            );
            self.write_manifest()?;
        }
        let log = self.streams.get_mut(key).expect("inserted above");
        if let Some(last) = log.points.last() {
            if p.t <= last.t {
                return Err(ArchiveError::NotIncreasing {
                    key: key.to_string(),
                    t: p.t,
                    last: last.t,
                });
            }
        }
        if log.writer.is_none() {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log.path)
                .map_err(io_err(&log.path))?;
            log.writer = Some(BufWriter::new(f));
        }
        let w = log.writer.as_mut().expect("opened above");
        let mut rec = [0u8; RECORD_LEN];
        rec[..8].copy_from_slice(&p.t.to_le_bytes());
        rec[8..].copy_from_slice(&p.v.to_le_bytes());
        w.write_all(&rec).map_err(io_err(&log.path))?;
        log.points.push(p);
        Ok(())
    }

    /// Flushes and syncs every open log.
    pub fn flush(&mut self) -> Result<(), ArchiveError> {
        for log in self.streams.values_mut() {
            if let Some(w) = log.writer.as_mut() {
                w.flush().map_err(io_err(&log.path))?;
                w.get_ref().sync_data().map_err(io_err(&log.path))?;
            }
        }
        Ok(())
    }

    fn write_manifest(&self) -> Result<(), ArchiveError> {
        let mut text = String::from("# device,stream,unit\n");
        for key in self.streams.keys() {
            let unit = if is_known_stream(&key.stream) {
                stream_unit(&key.stream)
            } else {
                ""
            };
            text.push_str(&format!("{},{},{unit}\n", key.device_id, key.stream));
        }
        let path = self.dir.join(MANIFEST);
        let tmp = self.dir.join(".manifest.tmp");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    fn log(&self, key: &StreamKey) -> Result<&StreamLog, ArchiveError> {
        self.streams
            .get(key)
            .ok_or_else(|| ArchiveError::UnknownStream {
                key: key.to_string(),
                known: self.streams.keys().map(|k| k.to_string()).collect(),
            })
    }

    pub fn points(&self, key: &StreamKey) -> Result<&[Point], ArchiveError> {
        Ok(&self.log(key)?.points)
    }

    /// Archived points with `t0 <= t <= t1`.
    pub fn query_raw(&self, key: &StreamKey, t0: f64, t1: f64) -> Result<Vec<Point>, ArchiveError> {
        if t0 > t1 {
            return Err(ArchiveError::Query(format!("start {t0} is after end {t1}")));
        }
        let pts = &self.log(key)?.points;
        let lo = pts.partition_point(|p| p.t < t0);
        let hi = pts.partition_point(|p| p.t <= t1);
        Ok(pts[lo..hi.max(lo)].to_vec())
    }

    /// Values at `t0, t0 + interval, ... <= t1`, linearly interpolated;
    /// `None` outside the archived span.
    pub fn query_interpolated(
        &self,
        key: &StreamKey,
        t0: f64,
        t1: f64,
        interval_s: f64,
    ) -> Result<Vec<(f64, Option<f64>)>, ArchiveError> {
        if t0 > t1 {
            return Err(ArchiveError::Query(format!("start {t0} is after end {t1}")));
        }
        if !(interval_s > 0.0 && interval_s.is_finite()) {
            return Err(ArchiveError::Query("interval must be positive".into()));
        }
        let pts = &self.log(key)?.points;
        let steps = ((t1 - t0) / interval_s + 1e-9).floor() as u64;
        Ok((0..=steps)
            .map(|k| {
                let t = t0 + k as f64 * interval_s;
                (t, interpolate(pts, t))
            })
            .collect())
    }
}

/// `t,value` lines; an absent value leaves the second column empty.
pub fn export_csv(rows: &[(f64, Option<f64>)]) -> String {
    let mut out = String::from("t,value\n");
    for (t, v) in rows {
        match v {
            Some(v) => out.push_str(&format!("{t},{v}\n")),
            None => out.push_str(&format!("{t},\n")),
        }
    }
    out
}
