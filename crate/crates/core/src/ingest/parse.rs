//! Parser for the gateway's flat files, one tagged record per line.

use std::fmt;

use crate::wire::{Axis, Sign};

/// Time-sampled streams carried by every `S` line, in column order.
pub const SAMPLE_STREAMS: [&str; 7] = ["temp", "rh", "lux", "ax", "ay", "az", "occ_pct"];
pub const OCC_STREAM: &str = "occ";
/// Orientation events archived as `sign * axis` with x=1, y=2, z=3.
pub const ORI_STREAM: &str = "ori";

pub fn is_event_stream(name: &str) -> bool {
    name == OCC_STREAM || name == ORI_STREAM
}

pub fn is_known_stream(name: &str) -> bool {
    SAMPLE_STREAMS.contains(&name) || is_event_stream(name)
}

pub fn stream_unit(name: &str) -> &'static str {
    match name {
        "temp" => "degC",
        "rh" => "%RH",
        "lux" => "lux",
        "ax" | "ay" | "az" => "g",
        "occ_pct" => "%",
        OCC_STREAM => "state",
        ORI_STREAM => "signed-axis",
        _ => "",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LineRecord {
    Sample {
        device_id: u16,
        timestamp: i64,
        /// Values in `SAMPLE_STREAMS` order.
        values: [f64; 7],
    },
    Occupancy {
        device_id: u16,
        timestamp: i64,
        occupied: bool,
    },
    Orientation {
        device_id: u16,
        timestamp: i64,
        axis: Axis,
        sign: Sign,
    },
}

impl LineRecord {
    pub fn device_id(&self) -> u16 {
        match *self {
            LineRecord::Sample { device_id, .. }
            | LineRecord::Occupancy { device_id, .. }
            | LineRecord::Orientation { device_id, .. } => device_id,
        }
    }

    pub fn timestamp(&self) -> i64 {
        match *self {
            LineRecord::Sample { timestamp, .. }
            | LineRecord::Occupancy { timestamp, .. }
            | LineRecord::Orientation { timestamp, .. } => timestamp,
        }
    }

    /// Stream points this record contributes, as `(stream, value)`.
    pub fn points(&self) -> Vec<(&'static str, f64)> {
        match *self {
            LineRecord::Sample { values, .. } => {
                SAMPLE_STREAMS.iter().copied().zip(values).collect()
            }
            LineRecord::Occupancy { occupied, .. } => vec![(OCC_STREAM, occupied as u8 as f64)],
            LineRecord::Orientation { axis, sign, .. } => {
                let axis_n = match axis {
                    Axis::X => 1.0,
                    Axis::Y => 2.0,
                    Axis::Z => 3.0,
                };
                vec![(ORI_STREAM, sign.as_i8() as f64 * axis_n)]
            }
        }
    }
}

impl fmt::Display for LineRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineRecord::Sample {
                device_id,
                timestamp,
                values: v,
            } => write!(
                f,
                "S,{device_id},{timestamp},{:.2},{:.2},{:.0},{:.3},{:.3},{:.3},{:.1}",
                v[0], v[1], v[2], v[3], v[4], v[5], v[6]
            ),
            LineRecord::Occupancy {
                device_id,
                timestamp,
                occupied,
            } => write!(f, "E,{device_id},{timestamp},OCC,{}", *occupied as u8),
            LineRecord::Orientation {
                device_id,
                timestamp,
                axis,
                sign,
            } => write!(
                f,
                "E,{device_id},{timestamp},ORI,{},{}",
                axis.letter(),
                sign.symbol()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedFile {
    pub records: Vec<LineRecord>,
    pub errors: Vec<LineError>,
}

fn field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("bad {what} {s:?}"))
}

fn finite(s: &str, what: &str) -> Result<f64, String> {
    let v: f64 = field(s, what)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what} is not finite"))
    }
}

pub fn parse_line(line: &str) -> Result<LineRecord, String> {
    let f: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
    match f.as_slice() {
        ["S", dev, ts, rest @ ..] => {
            if rest.len() != 7 {
                return Err(format!("S line has {} values, expected 7", rest.len()));
            }
            let mut values = [0.0; 7];
            for (i, (v, name)) in rest.iter().zip(SAMPLE_STREAMS).enumerate() {
                values[i] = finite(v, name)?;
            }
            Ok(LineRecord::Sample {
                device_id: field(dev, "device id")?,
                timestamp: field(ts, "timestamp")?,
                values,
            })
        }
        ["E", dev, ts, "OCC", state] => Ok(LineRecord::Occupancy {
            device_id: field(dev, "device id")?,
            timestamp: field(ts, "timestamp")?,
            occupied: match *state {
                "0" => false,
                "1" => true,
                other => return Err(format!("bad occupancy state {other:?}")),
            },
        }),
        ["E", dev, ts, "ORI", axis, sign] => Ok(LineRecord::Orientation {
            device_id: field(dev, "device id")?,
            timestamp: field(ts, "timestamp")?,
            axis: match *axis {
                "x" => Axis::X,
                "y" => Axis::Y,
                "z" => Axis::Z,
                other => return Err(format!("bad axis {other:?}")),
            },
            sign: match *sign {
                "+" => Sign::Positive,
                "-" => Sign::Negative,
                other => return Err(format!("bad sign {other:?}")),
            },
        }),
        _ => Err("unrecognised record".to_string()),
    }
}

/// Parses every line; blank lines are skipped and bad lines collected.
pub fn parse_flat_file(text: &str) -> ParsedFile {
    let mut out = ParsedFile::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(r) => out.records.push(r),
            Err(message) => out.errors.push(LineError {
                line: i + 1,
                message,
            }),
        }
    }
    out
}
