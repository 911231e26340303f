use std::fs;
use std::path::PathBuf;

use log::{error, info, warn};

use super::spool::{self, sent_path};
use super::transfer::TransferChannel;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DistributeReport {
    pub files_sent: usize,
    pub files_failed: usize,
    /// Sent but could not be renamed; will be sent again next round.
    pub rename_failures: usize,
    pub backlog_before: usize,
    pub backlog_after: usize,
    pub sent: Vec<String>,
}

/// Forwards unsent spool files oldest first, `batch_size` per round, and
/// marks each one sent by renaming it only after a successful put.
#[derive(Debug)]
pub struct Distributor {
    root: PathBuf,
    batch_size: usize,
    last_backlog: Option<usize>,
    saturation_rounds: u64,
}

impl Distributor {
    pub fn new(root: impl Into<PathBuf>, batch_size: usize) -> Self {
        Distributor {
            root: root.into(),
            batch_size: batch_size.max(1),
            last_backlog: None,
            saturation_rounds: 0,
        }
    }

    /// Rounds that ended with more unsent files than the previous round did,
    /// meaning files arrive faster than they are forwarded.
    pub fn saturation_rounds(&self) -> u64 {
        self.saturation_rounds
    }

    pub fn distribute<C: TransferChannel + ?Sized>(&mut self, channel: &mut C) -> DistributeReport {
        let mut report = DistributeReport::default();
        let pending = match spool::unsent(&self.root) {
            Ok(p) => p,
            Err(e) => {
                error!("distributor: cannot scan {}: {e}", self.root.display());
                return report;
            }
        };
        report.backlog_before = pending.len();
        for entry in pending.iter().take(self.batch_size) {
            let body = match fs::read(&entry.path) {
                Ok(b) => b,
                Err(e) => {
                    warn!("distributor: cannot read {}: {e}", entry.path.display());
                    report.files_failed += 1;
                    continue;
                }
            };
            let remote = entry.name.remote_name();
            if let Err(e) = channel.put(&remote, &body) {
                warn!("distributor: put {remote} failed, deferring rest of batch: {e}");
                report.files_failed += 1;
                break;
            }
            match fs::rename(&entry.path, sent_path(&entry.path)) {
                Ok(()) => {
                    report.files_sent += 1;
                    report.sent.push(remote);
                }
                Err(e) => {
                    error!(
                        "distributor: {remote} was delivered but rename failed ({e}); it will be sent again"
                    );
                    report.rename_failures += 1;
                }
            }
        }
        report.backlog_after = report.backlog_before - report.files_sent;
        if let Some(prev) = self.last_backlog {
            if report.backlog_after > prev {
                self.saturation_rounds += 1;
                info!(
                    "distributor: backlog grew from {prev} to {} files",
                    report.backlog_after
                );
            }
        }
        self.last_backlog = Some(report.backlog_after);
        report
    }
}

#[cfg(test)]
mod tests {
    use super::super::spool::{scan, Spool};
    use super::super::transfer::TransferError;
    use super::*;
    use std::collections::BTreeMap;

    #[derive(Default)]
    struct Sink {
        files: BTreeMap<String, Vec<u8>>,
        order: Vec<String>,
        fail_after: Option<usize>,
    }

    impl TransferChannel for Sink {
        fn put(&mut self, name: &str, body: &[u8]) -> Result<(), TransferError> {
            if let Some(n) = self.fail_after {
                if self.order.len() >= n {
                    return Err(TransferError::Unavailable);
                }
            }
            self.files.insert(name.to_string(), body.to_vec());
            self.order.push(name.to_string());
            Ok(())
        }
    }

    fn spool_with(n: usize) -> (tempfile::TempDir, Spool) {
        let dir = tempfile::tempdir().unwrap();
        let spool = Spool::new(dir.path()).unwrap();
        for i in 0..n {
            spool
                .write_file(1_000_000 + i as i64, 1, &[format!("line {i}")])
                .unwrap();
        }
        (dir, spool)
    }

    #[test]
    fn healthy_round() {
        let (dir, _spool) = spool_with(3);
        let mut d = Distributor::new(dir.path(), 10);
        let mut sink = Sink::default();
        let r = d.distribute(&mut sink);
        assert_eq!((r.files_sent, r.files_failed), (3, 0));
        assert!(scan(dir.path()).unwrap().iter().all(|e| e.sent));
        assert_eq!(d.distribute(&mut sink).files_sent, 0);
        assert_eq!(sink.order.len(), 3);
    }

    #[test]
    fn channel_down_leaves_files() {
        let (dir, _spool) = spool_with(3);
        let mut d = Distributor::new(dir.path(), 10);
        let mut sink = Sink {
            fail_after: Some(0),
            ..Default::default()
        };
        let r = d.distribute(&mut sink);
        assert_eq!((r.files_sent, r.files_failed), (0, 1));
        assert!(scan(dir.path()).unwrap().iter().all(|e| !e.sent));
        sink.fail_after = None;
        assert_eq!(d.distribute(&mut sink).files_sent, 3);
    }

    #[test]
    fn mid_batch_failure_defers_rest() {
        let (dir, _spool) = spool_with(5);
        let mut d = Distributor::new(dir.path(), 10);
        let mut sink = Sink {
            fail_after: Some(2),
            ..Default::default()
        };
        let r = d.distribute(&mut sink);
        assert_eq!((r.files_sent, r.files_failed, r.backlog_after), (2, 1, 3));
    }

    #[test]
    fn backlog_drains_oldest_first_in_batches() {
        let (dir, _spool) = spool_with(100);
        let all: Vec<String> = scan(dir.path())
            .unwrap()
            .iter()
            .map(|e| e.name.remote_name())
            .collect();
        let mut d = Distributor::new(dir.path(), 10);
        let mut sink = Sink::default();
        let mut rounds = 0;
        loop {
            let r = d.distribute(&mut sink);
            if r.files_sent == 0 {
                break;
            }
            rounds += 1;
            assert_eq!(sink.order[..], all[..rounds * 10]);
        }
        assert_eq!(rounds, 10);
    }

    #[test]
    fn saturation_counter_tracks_growth() {
        let (dir, spool) = spool_with(5);
        let mut d = Distributor::new(dir.path(), 2);
        let mut sink = Sink::default();
        for round in 0..4 {
            // three new files arrive per round, two leave
            for i in 0..3 {
                spool
                    .write_file(2_000_000 + round * 10 + i, 2, &["x".to_string()])
                    .unwrap();
            }
            d.distribute(&mut sink);
        }
        assert_eq!(d.saturation_rounds(), 3);
    }
}
