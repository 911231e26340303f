//! Scenario files: `key = value` lines grouped under `[section]` headers.
//!
//! ```text
//! [scenario]
//! nodes = 3
//! duration_s = 7200
//! seed = 1
//!
//! [node.2]
//! report_interval_s = 60
//!
//! [faults]
//! gateway_down = 1190-1210
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::gateway::DEFAULT_SIM_EPOCH_UNIX;
use crate::ingest::CompressionSettings;
use crate::node::environment::EnvironmentParams;
use crate::node::DEFAULT_BUFFER_BYTES;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Virtual time advances as fast as the machine allows.
    Virtual,
    /// Virtual time is paced against the wall clock.
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvironmentPreset {
    Default,
    Quiet,
}

impl EnvironmentPreset {
    pub fn params(self) -> EnvironmentParams {
        match self {
            EnvironmentPreset::Default => EnvironmentParams::default(),
            EnvironmentPreset::Quiet => EnvironmentParams::quiet(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettingsPreset {
    Default,
    PassThrough,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeOverride {
    pub sample_interval_s: Option<u32>,
    pub report_interval_s: Option<u32>,
    pub buffer_bytes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub nodes: u16,
    pub duration_s: u64,
    pub seed: u64,
    pub clock: ClockMode,
    /// Virtual seconds per wall second in wall-clock mode.
    pub speedup: f64,
    pub environment: EnvironmentPreset,
    pub epoch_unix: i64,
    pub sample_interval_s: u32,
    pub report_interval_s: u32,
    pub buffer_bytes: usize,
    /// Keyed by device id.
    pub node_overrides: BTreeMap<u16, NodeOverride>,
    pub retention_days: u32,
    pub poll_interval_s: u64,
    pub batch_size: usize,
    pub settings_preset: SettingsPreset,
    /// Extra `stream.field=value` lines applied over the preset.
    pub settings_overrides: BTreeMap<String, String>,
    /// `[start, end]` virtual seconds during which the gateway is unreachable.
    pub gateway_down: Vec<(u64, u64)>,
    /// Probability that any single file transfer fails.
    pub channel_failure_p: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            nodes: 3,
            duration_s: 7200,
            seed: 1,
            clock: ClockMode::Virtual,
            speedup: 1.0,
            environment: EnvironmentPreset::Default,
            epoch_unix: DEFAULT_SIM_EPOCH_UNIX,
            sample_interval_s: 10,
            report_interval_s: 600,
            buffer_bytes: DEFAULT_BUFFER_BYTES,
            node_overrides: BTreeMap::new(),
            retention_days: 10,
            poll_interval_s: 60,
            batch_size: 50,
            settings_preset: SettingsPreset::Default,
            settings_overrides: BTreeMap::new(),
            gateway_down: Vec::new(),
            channel_failure_p: 0.0,
        }
    }
}

fn parse_num<T: FromStr>(v: &str, line: usize, key: &str) -> Result<T, ScenarioConfigError> {
    v.parse().map_err(|_| ScenarioConfigError::Syntax {
        line,
        message: format!("bad value {v:?} for {key}"),
    })
}

fn parse_windows(v: &str, line: usize) -> Result<Vec<(u64, u64)>, ScenarioConfigError> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (a, b) = part.split_once('-').ok_or(ScenarioConfigError::Syntax {
            line,
            message: format!("window {part:?} is not start-end"),
        })?;
        let (a, b): (u64, u64) = (
            parse_num(a.trim(), line, "gateway_down")?,
            parse_num(b.trim(), line, "gateway_down")?,
        );
        if a > b {
            return Err(ScenarioConfigError::Syntax {
                line,
                message: format!("window {part:?} ends before it starts"),
            });
        }
        out.push((a, b));
    }
    Ok(out)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ScenarioConfigError> {
        let mut cfg = ScenarioConfig::default();
        let mut section = String::from("scenario");
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or(ScenarioConfigError::Syntax {
                    line,
                    message: "expected key = value".into(),
                })?;
            let unknown = || ScenarioConfigError::Syntax {
                line,
                message: format!("unknown key {key:?} in [{section}]"),
            };
            match section.as_str() {
                "scenario" => match key {
                    "nodes" => cfg.nodes = parse_num(value, line, key)?,
                    "duration_s" => cfg.duration_s = parse_num(value, line, key)?,
                    "seed" => cfg.seed = parse_num(value, line, key)?,
                    "clock" => {
                        cfg.clock = match value {
                            "virtual" => ClockMode::Virtual,
                            "wall" => ClockMode::Wall,
                            _ => return Err(unknown()),
                        }
                    }
                    "speedup" => cfg.speedup = parse_num(value, line, key)?,
                    "environment" => {
                        cfg.environment = match value {
                            "default" => EnvironmentPreset::Default,
                            "quiet" => EnvironmentPreset::Quiet,
                            _ => return Err(unknown()),
                        }
                    }
                    "epoch_unix" => cfg.epoch_unix = parse_num(value, line, key)?,
                    "sample_interval_s" => cfg.sample_interval_s = parse_num(value, line, key)?,
                    "report_interval_s" => cfg.report_interval_s = parse_num(value, line, key)?,
                    "buffer_bytes" => cfg.buffer_bytes = parse_num(value, line, key)?,
                    _ => return Err(unknown()),
                },
                "gateway" => match key {
                    "retention_days" => cfg.retention_days = parse_num(value, line, key)?,
                    "poll_interval_s" => cfg.poll_interval_s = parse_num(value, line, key)?,
                    "batch_size" => cfg.batch_size = parse_num(value, line, key)?,
                    _ => return Err(unknown()),
                },
                "ingest" => match key {
                    "preset" => {
                        cfg.settings_preset = match value {
                            "default" => SettingsPreset::Default,
                            "pass_through" => SettingsPreset::PassThrough,
                            _ => return Err(unknown()),
                        }
                    }
                    _ if key.contains('.') => {
                        cfg.settings_overrides
                            .insert(key.to_string(), value.to_string());
                    }
                    _ => return Err(unknown()),
                },
                "faults" => match key {
                    "gateway_down" => cfg.gateway_down = parse_windows(value, line)?,
                    "channel_failure_p" => cfg.channel_failure_p = parse_num(value, line, key)?,
                    _ => return Err(unknown()),
                },
                s if s.starts_with("node.") => {
                    let dev: u16 = parse_num(&s[5..], line, "node section")?;
                    let o = cfg.node_overrides.entry(dev).or_default();
                    match key {
                        "sample_interval_s" => {
                            o.sample_interval_s = Some(parse_num(value, line, key)?)
                        }
                        "report_interval_s" => {
                            o.report_interval_s = Some(parse_num(value, line, key)?)
                        }
                        "buffer_bytes" => o.buffer_bytes = Some(parse_num(value, line, key)?),
                        _ => return Err(unknown()),
                    }
                }
                _ => {
                    return Err(ScenarioConfigError::Syntax {
                        line,
                        message: format!("unknown section [{section}]"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioConfigError> {
        let bad = |m: &str| Err(ScenarioConfigError::Invalid(m.to_string()));
        if !(0.0..=1.0).contains(&self.channel_failure_p) {
            return bad("channel_failure_p must be within [0, 1]");
        }
        if self.channel_failure_p >= 1.0 {
            return bad("channel_failure_p of 1 would never drain the spool");
        }
        if !(self.speedup > 0.0 && self.speedup.is_finite()) {
            return bad("speedup must be positive");
        }
        if self.poll_interval_s == 0 || self.batch_size == 0 || self.retention_days == 0 {
            return bad("poll_interval_s, batch_size and retention_days must be at least 1");
        }
        if self.duration_s > u32::MAX as u64 {
            return bad("duration_s exceeds the node timestamp range");
        }
        if let Some(dev) = self
            .node_overrides
            .keys()
            .find(|&&d| d == 0 || d > self.nodes)
        {
            return Err(ScenarioConfigError::Invalid(format!(
                "override for node {dev}, but nodes are numbered 1..={}",
                self.nodes
            )));
        }
        self.compression_settings()?;
        Ok(())
    }

    pub fn compression_settings(&self) -> Result<CompressionSettings, ScenarioConfigError> {
        let mut s = match self.settings_preset {
            SettingsPreset::Default => CompressionSettings::default(),
            SettingsPreset::PassThrough => CompressionSettings::pass_through(),
        };
        let text: String = self
            .settings_overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        s.apply(&text)
            .map_err(|e| ScenarioConfigError::Invalid(format!("ingest settings: {e}")))?;
        Ok(s)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "[scenario]");
        let _ = writeln!(o, "nodes = {}", self.nodes);
        let _ = writeln!(o, "duration_s = {}", self.duration_s);
        let _ = writeln!(o, "seed = {}", self.seed);
        let clock = match self.clock {
            ClockMode::Virtual => "virtual",
            ClockMode::Wall => "wall",
        };
        let _ = writeln!(o, "clock = {clock}");
        let _ = writeln!(o, "speedup = {}", self.speedup);
        let env = match self.environment {
            EnvironmentPreset::Default => "default",
            EnvironmentPreset::Quiet => "quiet",
        };
        let _ = writeln!(o, "environment = {env}");
        let _ = writeln!(o, "epoch_unix = {}", self.epoch_unix);
        let _ = writeln!(o, "sample_interval_s = {}", self.sample_interval_s);
        let _ = writeln!(o, "report_interval_s = {}", self.report_interval_s);
        let _ = writeln!(o, "buffer_bytes = {}", self.buffer_bytes);
        let _ = writeln!(o, "\n[gateway]");
        let _ = writeln!(o, "retention_days = {}", self.retention_days);
        let _ = writeln!(o, "poll_interval_s = {}", self.poll_interval_s);
        let _ = writeln!(o, "batch_size = {}", self.batch_size);
        let _ = writeln!(o, "\n[ingest]");
        let preset = match self.settings_preset {
            SettingsPreset::Default => "default",
            SettingsPreset::PassThrough => "pass_through",
        };
        let _ = writeln!(o, "preset = {preset}");
        for (k, v) in &self.settings_overrides {
            let _ = writeln!(o, "{k} = {v}");
        }
        let _ = writeln!(o, "\n[faults]");
        let windows: Vec<String> = self
            .gateway_down
            .iter()
            .map(|(a, b)| format!("{a}-{b}"))
            .collect();
        let _ = writeln!(o, "gateway_down = {}", windows.join(", "));
        let _ = writeln!(o, "channel_failure_p = {}", self.channel_failure_p);
        for (dev, ov) in &self.node_overrides {
            let _ = writeln!(o, "\n[node.{dev}]");
            if let Some(v) = ov.sample_interval_s {
                let _ = writeln!(o, "sample_interval_s = {v}");
            }
            if let Some(v) = ov.report_interval_s {
                let _ = writeln!(o, "report_interval_s = {v}");
            }
            if let Some(v) = ov.buffer_bytes {
                let _ = writeln!(o, "buffer_bytes = {v}");
            }
        }
        o
    }
}
