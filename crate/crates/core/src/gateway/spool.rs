//! On-disk spool: `root/YYYYMMDD/HHMMSS_<device>_<seq>.txt[.sent]`.
//!
//! Files are written under a dot-prefixed temporary name and renamed into
//! place, so scanners never see a partial file. The `.sent` suffix is the only
//! state shared between the listener and the distributor.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, NaiveDate, Utc};
use log::{error, warn};

pub const SENT_SUFFIX: &str = ".sent";
const FILE_EXT: &str = ".txt";

fn utc(unix: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(unix, 0).unwrap_or_default()
}

pub fn day_dir_name(unix: i64) -> String {
    utc(unix).format("%Y%m%d").to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpoolName {
    pub day: String,
    pub hhmmss: String,
    pub device_id: u16,
    pub seq: u32,
}

impl SpoolName {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}{FILE_EXT}", self.hhmmss, self.device_id, self.seq)
    }

    /// Flat name used at the destination: `YYYYMMDD_HHMMSS_<device>_<seq>.txt`.
    pub fn remote_name(&self) -> String {
        format!("{}_{}", self.day, self.file_name())
    }

    /// Parses `HHMMSS_<device>_<seq>.txt` (without `.sent`).
    pub fn parse(day: &str, file_name: &str) -> Option<SpoolName> {
        let stem = file_name.strip_suffix(FILE_EXT)?;
        let mut parts = stem.splitn(3, '_');
        let hhmmss = parts.next()?;
        let device_id = parts.next()?.parse().ok()?;
        let seq = parts.next()?.parse().ok()?;
        if hhmmss.len() != 6 || !hhmmss.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some(SpoolName {
            day: day.to_string(),
            hhmmss: hhmmss.to_string(),
            device_id,
            seq,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpoolEntry {
    pub name: SpoolName,
    pub path: PathBuf,
    pub sent: bool,
}

fn is_day_dir(name: &str) -> bool {
    name.len() == 8 && name.bytes().all(|b| b.is_ascii_digit())
}

/// Every spool file under `root`, oldest first.
pub fn scan(root: &Path) -> io::Result<Vec<SpoolEntry>> {
    let mut out = Vec::new();
    let days = match fs::read_dir(root) {
        Ok(d) => d,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e),
    };
    for day in days {
        let day = day?;
        let day_name = day.file_name().to_string_lossy().into_owned();
        if !is_day_dir(&day_name) || !day.file_type()?.is_dir() {
            continue;
        }
        for file in fs::read_dir(day.path())? {
            let file = file?;
            let name = file.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') {
                continue;
            }
            let (base, sent) = match name.strip_suffix(SENT_SUFFIX) {
                Some(b) => (b, true),
                None => (name.as_str(), false),
            };
            if let Some(parsed) = SpoolName::parse(&day_name, base) {
                out.push(SpoolEntry {
                    name: parsed,
                    path: file.path(),
                    sent,
                });
            }
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

pub fn unsent(root: &Path) -> io::Result<Vec<SpoolEntry>> {
    Ok(scan(root)?.into_iter().filter(|e| !e.sent).collect())
}

/// Allocates unique names and writes spool files atomically.
#[derive(Debug)]
pub struct Spool {
    root: PathBuf,
    seqs: Mutex<HashMap<(i64, u16), u32>>,
}

impl Spool {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Spool {
            root,
            seqs: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes one connection's lines as a new file created at `unix`.
    pub fn write_file(&self, unix: i64, device_id: u16, lines: &[String]) -> io::Result<PathBuf> {
        let day = day_dir_name(unix);
        let dir = self.root.join(&day);
        fs::create_dir_all(&dir)?;
        let hhmmss = utc(unix).format("%H%M%S").to_string();

        let mut seqs = self.seqs.lock().expect("spool lock poisoned");
        let seq = seqs.entry((unix, device_id)).or_insert(0);
        let name = loop {
            let candidate = SpoolName {
                day: day.clone(),
                hhmmss: hhmmss.clone(),
                device_id,
                seq: *seq,
            };
            *seq += 1;
            let file = candidate.file_name();
            let taken =
                dir.join(&file).exists() || dir.join(format!("{file}{SENT_SUFFIX}")).exists();
            if !taken {
                break candidate;
            }
        };

        let final_path = dir.join(name.file_name());
        let tmp_path = dir.join(format!(".tmp-{}", name.file_name()));
        let mut body = String::with_capacity(lines.len() * 64);
        for l in lines {
            body.push_str(l);
            body.push('\n');
        }
        {
            let mut f = fs::File::create(&tmp_path)?;
            f.write_all(body.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp_path, &final_path)?;
        Ok(final_path)
    }
}

pub fn sent_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(SENT_SUFFIX);
    PathBuf::from(s)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PurgeReport {
    pub removed: Vec<String>,
    /// Files dropped without ever being forwarded.
    pub unsent_dropped: usize,
    pub errors: usize,
}

/// Removes day directories at least `retention_days` old relative to `now`,
/// sent or not. With retention 10, today and the nine days before it survive.
pub fn purge(root: &Path, retention_days: u32, now: DateTime<Utc>) -> PurgeReport {
    let mut report = PurgeReport::default();
    let today = now.date_naive();
    let entries = match fs::read_dir(root) {
        Ok(e) => e,
        Err(e) => {
            if e.kind() != io::ErrorKind::NotFound {
                error!("purge: cannot read {}: {e}", root.display());
                report.errors += 1;
            }
            return report;
        }
    };
    let mut dirs: Vec<(NaiveDate, String, PathBuf)> = entries
        .filter_map(Result::ok)
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            if !is_day_dir(&name) {
                return None;
            }
            let date = NaiveDate::parse_from_str(&name, "%Y%m%d").ok()?;
            Some((date, name, e.path()))
        })
        .collect();
    dirs.sort();
    for (date, name, path) in dirs {
        let age = (today - date).num_days();
        if age < retention_days as i64 {
            continue;
        }
        let unsent = fs::read_dir(&path)
            .map(|it| {
                it.filter_map(Result::ok)
                    .filter(|f| {
                        let n = f.file_name().to_string_lossy().into_owned();
                        !n.starts_with('.') && n.ends_with(FILE_EXT)
                    })
                    .count()
            })
            .unwrap_or(0);
        match fs::remove_dir_all(&path) {
            Ok(()) => {
                if unsent > 0 {
                    warn!("purge: {name} held {unsent} unsent files");
                }
                report.unsent_dropped += unsent;
                report.removed.push(name);
            }
            Err(e) => {
                error!("purge: cannot remove {}: {e}", path.display());
                report.errors += 1;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};

    #[test]
    fn names_and_day_rollover() {
        let dir = tempfile::tempdir().unwrap();
        let spool = Spool::new(dir.path()).unwrap();
        // 2016-01-01 23:59:59 and 2016-01-02 00:00:01 UTC
        let a = spool.write_file(1_451_692_799, 3, &["x".into()]).unwrap();
        let b = spool.write_file(1_451_692_801, 3, &["y".into()]).unwrap();
        assert!(a.ends_with("20160101/235959_3_0.txt"));
        assert!(b.ends_with("20160102/000001_3_0.txt"));
        let c = spool.write_file(1_451_692_801, 3, &["z".into()]).unwrap();
        assert!(c.ends_with("20160102/000001_3_1.txt"));
        assert_eq!(fs::read_to_string(&c).unwrap(), "z\n");
    }

    #[test]
    fn sequence_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let first = Spool::new(dir.path()).unwrap();
        let p = first.write_file(100, 1, &["a".into()]).unwrap();
        fs::rename(&p, sent_path(&p)).unwrap();
        let second = Spool::new(dir.path()).unwrap();
        let q = second.write_file(100, 1, &["b".into()]).unwrap();
        assert!(q.ends_with("000140_1_1.txt"));
    }

    #[test]
    fn scan_orders_and_skips_temp() {
        let dir = tempfile::tempdir().unwrap();
        let spool = Spool::new(dir.path()).unwrap();
        spool.write_file(86_400 * 2 + 5, 1, &["c".into()]).unwrap();
        spool.write_file(86_400 + 5, 12, &["b".into()]).unwrap();
        spool.write_file(86_400 + 5, 2, &["a".into()]).unwrap();
        fs::write(dir.path().join("19700102/.tmp-000005_9_0.txt"), "partial").unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let names: Vec<String> = scan(dir.path())
            .unwrap()
            .iter()
            .map(|e| e.name.remote_name())
            .collect();
        assert_eq!(
            names,
            [
                "19700102_000005_2_0.txt",
                "19700102_000005_12_0.txt",
                "19700103_000005_1_0.txt"
            ]
        );
    }

    fn day_fixture(root: &Path, now: DateTime<Utc>, days: i64) {
        for age in 0..days {
            let d = (now - Duration::days(age)).format("%Y%m%d").to_string();
            fs::create_dir_all(root.join(&d)).unwrap();
            fs::write(root.join(&d).join("000000_1_0.txt.sent"), "S\n").unwrap();
        }
    }

    #[test]
    fn purge_twelve_days() {
        let dir = tempfile::tempdir().unwrap();
        let now = Utc.with_ymd_and_hms(2016, 3, 15, 12, 0, 0).unwrap();
        day_fixture(dir.path(), now, 12);
        let r = purge(dir.path(), 10, now);
        assert_eq!(r.removed, ["20160304", "20160305"]);
        assert_eq!(scan(dir.path()).unwrap().len(), 10);
    }

    #[test]
    fn purge_boundary_and_small_spool() {
        let dir = tempfile::tempdir().unwrap();
        let now = Utc.with_ymd_and_hms(2016, 3, 15, 0, 0, 1).unwrap();
        day_fixture(dir.path(), now, 5);
        assert!(purge(dir.path(), 10, now).removed.is_empty());

        for (age, kept) in [(9, true), (10, false)] {
            let dir = tempfile::tempdir().unwrap();
            let d = (now - Duration::days(age)).format("%Y%m%d").to_string();
            fs::create_dir_all(dir.path().join(&d)).unwrap();
            fs::write(dir.path().join(&d).join("000000_1_0.txt"), "S\n").unwrap();
            let r = purge(dir.path(), 10, now);
            assert_eq!(dir.path().join(&d).exists(), kept, "age {age}");
            assert_eq!(r.unsent_dropped, if kept { 0 } else { 1 });
        }
    }
}
