//! Per-stream filter settings and their `stream.field=value` file format.
//!
//! ```text
//! # comment
//! temp.exc_dev=0.05
//! temp.comp_dev=0.1
//! all.exc_max_s=1800
//! ```
//!
//! `all` applies to every sampled stream. Event streams always use zero
//! deviations and cannot be configured.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::parse::{is_event_stream, SAMPLE_STREAMS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSettings {
    pub exc_dev: f64,
    pub exc_max_s: f64,
    pub comp_dev: f64,
    pub comp_max_s: f64,
}

impl StreamSettings {
    pub const PASS_THROUGH: StreamSettings = StreamSettings {
        exc_dev: 0.0,
        exc_max_s: 3600.0,
        comp_dev: 0.0,
        comp_max_s: 3600.0,
    };

    fn with_devs(exc_dev: f64, comp_dev: f64) -> Self {
        StreamSettings {
            exc_dev,
            comp_dev,
            ..Self::PASS_THROUGH
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SettingsError {
    #[error("line {line}: expected stream.field=value")]
    Syntax { line: usize },
    #[error("line {line}: unknown stream {stream:?}")]
    UnknownStream { line: usize, stream: String },
    #[error("line {line}: event stream {stream:?} is not configurable")]
    EventStream { line: usize, stream: String },
    #[error("line {line}: unknown field {field:?}")]
    UnknownField { line: usize, field: String },
    #[error("line {line}: {field} must be a finite number >= 0")]
    Value { line: usize, field: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionSettings {
    streams: BTreeMap<String, StreamSettings>,
}

impl Default for CompressionSettings {
    fn default() -> Self {
        let devs = [
            ("temp", 0.05, 0.1),
            ("rh", 0.2, 0.5),
            ("lux", 2.0, 5.0),
            ("ax", 0.01, 0.02),
            ("ay", 0.01, 0.02),
            ("az", 0.01, 0.02),
            ("occ_pct", 0.5, 1.0),
        ];
        CompressionSettings {
            streams: devs
                .into_iter()
                .map(|(s, e, c)| (s.to_string(), StreamSettings::with_devs(e, c)))
                .collect(),
        }
    }
}

impl CompressionSettings {
    /// Zero deviations everywhere: every distinct point is archived.
    pub fn pass_through() -> Self {
        CompressionSettings {
            streams: SAMPLE_STREAMS
                .iter()
                .map(|s| (s.to_string(), StreamSettings::PASS_THROUGH))
                .collect(),
        }
    }

    pub fn for_stream(&self, stream: &str) -> StreamSettings {
        if is_event_stream(stream) {
            return StreamSettings::PASS_THROUGH;
        }
        self.streams
            .get(stream)
            .copied()
            .unwrap_or(StreamSettings::PASS_THROUGH)
    }

    pub fn set(&mut self, stream: &str, settings: StreamSettings) {
        self.streams.insert(stream.to_string(), settings);
    }

    /// Applies a settings file on top of `self`.
    pub fn apply(&mut self, text: &str) -> Result<(), SettingsError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or(SettingsError::Syntax { line })?;
            let (stream, field) = key
                .trim()
                .split_once('.')
                .ok_or(SettingsError::Syntax { line })?;
            let targets: Vec<&str> = if stream == "all" {
                SAMPLE_STREAMS.to_vec()
            } else if SAMPLE_STREAMS.contains(&stream) {
                vec![stream]
            } else if is_event_stream(stream) {
                return Err(SettingsError::EventStream {
                    line,
                    stream: stream.to_string(),
                });
            } else {
                return Err(SettingsError::UnknownStream {
                    line,
                    stream: stream.to_string(),
                });
            };
            let v: f64 = value
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| SettingsError::Value {
                    line,
                    field: field.to_string(),
                })?;
            for t in targets {
                let s = self
                    .streams
                    .entry(t.to_string())
                    .or_insert(StreamSettings::PASS_THROUGH);
                match field {
                    "exc_dev" => s.exc_dev = v,
                    "exc_max_s" => s.exc_max_s = v,
                    "comp_dev" => s.comp_dev = v,
                    "comp_max_s" => s.comp_max_s = v,
                    _ => {
                        return Err(SettingsError::UnknownField {
                            line,
                            field: field.to_string(),
                        })
                    }
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, SettingsError> {
        let mut s = Self::default();
        s.apply(text)?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, s) in &self.streams {
            let _ = writeln!(out, "{name}.exc_dev={}", s.exc_dev);
            let _ = writeln!(out, "{name}.exc_max_s={}", s.exc_max_s);
            let _ = writeln!(out, "{name}.comp_dev={}", s.comp_dev);
            let _ = writeln!(out, "{name}.comp_max_s={}", s.comp_max_s);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let s = CompressionSettings::default();
        assert_eq!(s.for_stream("temp").comp_dev, 0.1);
        assert_eq!(s.for_stream("rh").exc_dev, 0.2);
        assert_eq!(s.for_stream("az").comp_max_s, 3600.0);
        assert_eq!(s.for_stream("occ"), StreamSettings::PASS_THROUGH);
    }

    #[test]
    fn file_round_trip_and_overrides() {
        let s =
            CompressionSettings::parse("# tune\nall.exc_dev=0\ntemp.comp_dev = 0.25\n").unwrap();
        assert_eq!(s.for_stream("lux").exc_dev, 0.0);
        assert_eq!(s.for_stream("temp").comp_dev, 0.25);
        assert_eq!(s.for_stream("lux").comp_dev, 5.0);
        let again = CompressionSettings::parse(&s.to_text()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(
            CompressionSettings::parse("temp.exc_dev").unwrap_err(),
            SettingsError::Syntax { line: 1 }
        );
        assert!(matches!(
            CompressionSettings::parse("\nocc.comp_dev=1"),
            Err(SettingsError::EventStream { line: 2, .. })
        ));
        assert!(matches!(
            CompressionSettings::parse("temp.comp_dev=-1"),
            Err(SettingsError::Value { .. })
        ));
        assert!(matches!(
            CompressionSettings::parse("tmp.comp_dev=1"),
            Err(SettingsError::UnknownStream { .. })
        ));
        assert!(matches!(
            CompressionSettings::parse("temp.dev=1"),
            Err(SettingsError::UnknownField { .. })
        ));
    }
}
