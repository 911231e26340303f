//! Flat-file line rendering, one line per sensor message.
//!
//! ```text
//! S,<device>,<unix_ts>,<temp_c>,<rh_pct>,<lux>,<ax_g>,<ay_g>,<az_g>,<occ_pct>
//! E,<device>,<unix_ts>,OCC,<0|1>
//! E,<device>,<unix_ts>,ORI,<x|y|z>,<+|->
//! ```

use std::fmt::Write as _;

use crate::wire::{Payload, SensorMessage};

/// Renders `value / 10^decimals` exactly.
fn fixed(out: &mut String, value: i64, decimals: u32) {
    let scale = 10i64.pow(decimals);
    let sign = if value < 0 { "-" } else { "" };
    let abs = value.unsigned_abs();
    let _ = write!(
        out,
        "{sign}{}.{:0width$}",
        abs / scale as u64,
        abs % scale as u64,
        width = decimals as usize
    );
}

pub fn format_line(msg: &SensorMessage, epoch_unix: i64) -> String {
    let ts = epoch_unix + msg.timestamp as i64;
    let mut out = String::with_capacity(64);
    match msg.payload {
        Payload::Sample(s) => {
            let _ = write!(out, "S,{},{},", msg.device_id, ts);
            fixed(&mut out, s.temperature as i64, 2);
            out.push(',');
            fixed(&mut out, s.relative_humidity as i64, 2);
            let _ = write!(out, ",{}", s.illuminance);
            for a in s.accel {
                out.push(',');
                fixed(&mut out, a as i64, 3);
            }
            let occ = s.occupancy_fraction as f64 * 100.0 / 255.0;
            let _ = write!(out, ",{occ:.1}");
        }
        Payload::Occupancy { occupied } => {
            let _ = write!(out, "E,{},{},OCC,{}", msg.device_id, ts, occupied as u8);
        }
        Payload::Orientation { axis, sign } => {
            let _ = write!(
                out,
                "E,{},{},ORI,{},{}",
                msg.device_id,
                ts,
                axis.letter(),
                sign.symbol()
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{Axis, SampleReading, Sign};

    #[test]
    fn sample_line() {
        let msg = SensorMessage {
            device_id: 7,
            timestamp: 10,
            payload: Payload::Sample(SampleReading {
                temperature: -5,
                relative_humidity: 4512,
                illuminance: 321,
                accel: [12, -1000, 8000],
                occupancy_fraction: 128,
            }),
        };
        assert_eq!(
            format_line(&msg, 1_000_000),
            "S,7,1000010,-0.05,45.12,321,0.012,-1.000,8.000,50.2"
        );
    }

    #[test]
    fn event_lines() {
        let occ = SensorMessage {
            device_id: 5,
            timestamp: 1000,
            payload: Payload::Occupancy { occupied: true },
        };
        assert_eq!(format_line(&occ, 0), "E,5,1000,OCC,1");
        let ori = SensorMessage {
            device_id: 5,
            timestamp: 1000,
            payload: Payload::Orientation {
                axis: Axis::Z,
                sign: Sign::Negative,
            },
        };
        assert_eq!(format_line(&ori, 0), "E,5,1000,ORI,z,-");
    }
}
