//! `simulate --distributed`: gateway and ingest run as child processes of
//! this binary and the nodes report to them over loopback TCP.

use std::fmt::Write as _;
use std::fs;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};

use bib_core::gateway::spool;
use bib_core::ingest::Archive;
use bib_core::scenario::{run_nodes, ScenarioConfig, ScenarioPaths};

struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> Result<SocketAddr> {
    let l = TcpListener::bind("127.0.0.1:0")?;
    Ok(l.local_addr()?)
}

fn wait_listening(addr: SocketAddr, child: &mut ChildGuard) -> Result<()> {
    let start = Instant::now();
    while start.elapsed() < Duration::from_secs(10) {
        if TcpStream::connect_timeout(&addr, Duration::from_millis(100)).is_ok() {
            return Ok(());
        }
        if let Some(status) = child.0.try_wait()? {
            bail!("service on {addr} exited early with {status}");
        }
        thread::sleep(Duration::from_millis(20));
    }
    bail!("service on {addr} did not start listening")
}

fn settings_file(cfg: &ScenarioConfig, paths: &ScenarioPaths) -> Result<std::path::PathBuf> {
    // Every field of every stream is written, so the child's defaults are
    // fully overridden.
    let settings = cfg.compression_settings()?;
    let parent = paths.archive.parent().unwrap_or(&paths.archive);
    fs::create_dir_all(parent)?;
    let path = parent.join("ingest-settings.txt");
    fs::write(&path, settings.to_text())?;
    Ok(path)
}

/// Returns the run summary text and whether every delivered line arrived.
pub fn run(cfg: &ScenarioConfig, paths: &ScenarioPaths) -> Result<(String, bool)> {
    let exe = std::env::current_exe().context("locating own executable")?;
    let ingest_addr = free_port()?;
    let gateway_addr = free_port()?;
    let settings = settings_file(cfg, paths)?;

    let mut ingest = ChildGuard(
        Command::new(&exe)
            .arg("serve-ingest")
            .args(["--listen", &ingest_addr.to_string()])
            .arg("--inbox")
            .arg(&paths.inbox)
            .arg("--archive-dir")
            .arg(&paths.archive)
            .arg("--settings-file")
            .arg(&settings)
            .stdout(Stdio::null())
            .spawn()
            .context("starting ingest process")?,
    );
    wait_listening(ingest_addr, &mut ingest)?;
    let mut gateway = ChildGuard(
        Command::new(&exe)
            .arg("serve-gateway")
            .args(["--listen", &gateway_addr.to_string()])
            .arg("--spool-root")
            .arg(&paths.spool)
            .args(["--dest", &ingest_addr.to_string()])
            .args(["--poll-interval", "1"])
            .args(["--batch-size", &cfg.batch_size.to_string()])
            .args(["--retention-days", &cfg.retention_days.to_string()])
            .args(["--epoch-unix", &cfg.epoch_unix.to_string()])
            .stdout(Stdio::null())
            .spawn()
            .context("starting gateway process")?,
    );
    wait_listening(gateway_addr, &mut gateway)?;

    let nodes = run_nodes(cfg, gateway_addr, None, |_| {})?;
    let delivered: u64 = nodes.iter().map(|n| n.stats.messages_delivered).sum();

    let start = Instant::now();
    loop {
        let pending = spool::unsent(&paths.spool)?.len();
        if pending == 0 || start.elapsed() > Duration::from_secs(60) {
            break;
        }
        thread::sleep(Duration::from_millis(100));
    }
    // Let the last acknowledged push finish archiving before stopping.
    thread::sleep(Duration::from_millis(200));
    drop(gateway);
    drop(ingest);

    let mut inbox_lines = 0u64;
    if paths.inbox.exists() {
        for e in fs::read_dir(&paths.inbox)? {
            let e = e?;
            if !e.file_name().to_string_lossy().starts_with('.') {
                inbox_lines += fs::read_to_string(e.path())?.lines().count() as u64;
            }
        }
    }
    let archive = Archive::open(&paths.archive)?;

    let mut o = String::new();
    let _ = writeln!(
        o,
        "run: seed {} duration_s {} nodes {} (distributed)",
        cfg.seed,
        cfg.duration_s,
        nodes.len()
    );
    for n in &nodes {
        let s = &n.stats;
        let _ = writeln!(
            o,
            "node {}: samples {} occ_events {} ori_events {} reports_ok {} reports_failed {} delivered {} buffered {}",
            n.device_id,
            s.samples,
            s.occupancy_events,
            s.orientation_events,
            s.reports_ok,
            s.reports_failed,
            s.messages_delivered,
            n.buffered
        );
    }
    let _ = writeln!(
        o,
        "ingest: inbox_lines {inbox_lines} archived {}",
        archive.total_points()
    );
    for k in archive.streams() {
        let _ = writeln!(o, "stream {k}: {}", archive.point_count(k));
    }
    let buffered: usize = nodes.iter().map(|n| n.buffered).sum();
    let ok = inbox_lines == delivered && buffered == 0;
    let _ = writeln!(o, "conservation: {}", if ok { "PASS" } else { "FAIL" });
    Ok((o, ok))
}
