//! Receiving end of the file push protocol: verified bodies land in an inbox
//! directory and are ingested before the push is acknowledged.

use std::fs;
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, error, info, warn};

use super::Ingestor;
use crate::gateway::transfer::{read_push, valid_name};
use crate::wire::{ACK, NAK};

#[derive(Debug, Default)]
pub struct ReceiverStats {
    pub pushes: AtomicU64,
    pub accepted: AtomicU64,
    pub rejected: AtomicU64,
}

impl ReceiverStats {
    pub fn accepted(&self) -> u64 {
        self.accepted.load(Ordering::SeqCst)
    }

    pub fn rejected(&self) -> u64 {
        self.rejected.load(Ordering::SeqCst)
    }
}

struct Shared {
    inbox: PathBuf,
    ingestor: Arc<Mutex<Ingestor>>,
    stats: Arc<ReceiverStats>,
    open: Mutex<Vec<TcpStream>>,
}

pub struct IngestHandle {
    local_addr: SocketAddr,
    stats: Arc<ReceiverStats>,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl IngestHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stats(&self) -> &ReceiverStats {
        &self.stats
    }

    /// Blocks until the receiver stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for s in self.shared.open.lock().expect("receiver lock").iter() {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for IngestHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

pub struct IngestServer;

impl IngestServer {
    pub fn start(
        listen: SocketAddr,
        inbox: impl Into<PathBuf>,
        ingestor: Arc<Mutex<Ingestor>>,
    ) -> io::Result<IngestHandle> {
        let inbox = inbox.into();
        fs::create_dir_all(&inbox)?;
        let listener = TcpListener::bind(listen)?;
        let local_addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stats = Arc::new(ReceiverStats::default());
        let shared = Arc::new(Shared {
            inbox,
            ingestor,
            stats: Arc::clone(&stats),
            open: Mutex::new(Vec::new()),
        });
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let shared = Arc::clone(&shared);
            let stop = Arc::clone(&stop);
            thread::Builder::new()
                .name("ingest-listen".into())
                .spawn(move || accept_loop(listener, shared, stop))?
        };
        info!("ingest receiver listening on {local_addr}");
        Ok(IngestHandle {
            local_addr,
            stats,
            shared,
            stop,
            thread: Some(thread),
        })
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, stop: Arc<AtomicBool>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                if let Ok(clone) = stream.try_clone() {
                    shared.open.lock().expect("receiver lock").push(clone);
                }
                let shared = Arc::clone(&shared);
                workers.retain(|w| !w.is_finished());
                workers.push(thread::spawn(move || {
                    if let Err(e) = serve(stream, &shared) {
                        debug!("ingest: connection from {peer} ended: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) => {
                error!("ingest: accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn serve(mut stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    let mut reader = io::BufReader::new(stream.try_clone()?);
    while let Some(push) = read_push(&mut reader)? {
        shared.stats.pushes.fetch_add(1, Ordering::SeqCst);
        let ok = accept_push(shared, &push.name, &push.body, push.verified);
        let counter = if ok {
            &shared.stats.accepted
        } else {
            &shared.stats.rejected
        };
        counter.fetch_add(1, Ordering::SeqCst);
        stream.write_all(&[if ok { ACK } else { NAK }])?;
    }
    Ok(())
}

fn accept_push(shared: &Shared, name: &str, body: &[u8], verified: bool) -> bool {
    if !verified {
        warn!("ingest: checksum mismatch on {name}; nothing written");
        return false;
    }
    if !valid_name(name) {
        warn!("ingest: refusing file name {name:?}");
        return false;
    }
    let path = match write_inbox(&shared.inbox, name, body) {
        Ok(p) => p,
        Err(e) => {
            error!("ingest: cannot store {name}: {e}");
            return false;
        }
    };
    let mut ingestor = shared.ingestor.lock().expect("ingestor lock poisoned");
    match ingestor.ingest_file(&path) {
        Ok(r) => {
            debug!("ingest: {name}: {} points archived", r.archived);
            true
        }
        Err(e) => {
            error!("ingest: {name}: {e}");
            false
        }
    }
}

/// Writes `inbox/name` via a temporary file; an existing file is replaced.
pub fn write_inbox(inbox: &Path, name: &str, body: &[u8]) -> io::Result<PathBuf> {
    let tmp = inbox.join(format!(".tmp-{name}"));
    let path = inbox.join(name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(body)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::transfer::{encode_push, TcpTransferChannel, TransferChannel};
    use crate::ingest::CompressionSettings;
    use std::io::Read;

    fn start() -> (tempfile::TempDir, IngestHandle, Arc<Mutex<Ingestor>>) {
        let dir = tempfile::tempdir().unwrap();
        let ing = Ingestor::open(
            dir.path().join("archive"),
            CompressionSettings::pass_through(),
        )
        .unwrap();
        let ing = Arc::new(Mutex::new(ing));
        let h = IngestServer::start(
            "127.0.0.1:0".parse().unwrap(),
            dir.path().join("inbox"),
            Arc::clone(&ing),
        )
        .unwrap();
        (dir, h, ing)
    }

    #[test]
    fn valid_push_is_ingested() {
        let (dir, h, ing) = start();
        let mut ch = TcpTransferChannel::new(h.local_addr());
        ch.put("20160101_000000_1_0.txt", b"E,1,10,OCC,1\nE,1,20,OCC,0\n")
            .unwrap();
        ch.put("20160101_000100_1_0.txt", b"E,1,30,OCC,1\n")
            .unwrap();
        assert!(dir.path().join("inbox/20160101_000000_1_0.txt").exists());
        assert_eq!(ing.lock().unwrap().archive().total_points(), 3);
        assert_eq!(h.stats().accepted(), 2);
    }

    #[test]
    fn corrupted_push_is_refused() {
        let (dir, h, ing) = start();
        let mut bytes = encode_push("a.txt", b"E,1,10,OCC,1\n");
        let n = bytes.len();
        bytes[n - 6] ^= 1;
        let mut s = TcpStream::connect(h.local_addr()).unwrap();
        s.write_all(&bytes).unwrap();
        let mut r = [0u8; 1];
        s.read_exact(&mut r).unwrap();
        assert_eq!(r[0], NAK);
        let inbox: Vec<_> = fs::read_dir(dir.path().join("inbox")).unwrap().collect();
        assert!(inbox.is_empty());
        assert_eq!(ing.lock().unwrap().archive().total_points(), 0);
    }

    #[test]
    fn duplicate_push_leaves_archive_unchanged() {
        let (dir, h, _ing) = start();
        let mut ch = TcpTransferChannel::new(h.local_addr());
        let body = b"S,1,100,21.00,40.00,300,0.000,0.000,1.000,0.0\nE,1,105,ORI,y,-\n";
        ch.put("f.txt", body).unwrap();
        let file = dir.path().join("archive/1.temp.bin");
        let before = fs::read(&file).unwrap();
        ch.put("f.txt", body).unwrap();
        assert_eq!(fs::read(&file).unwrap(), before);
    }
}
