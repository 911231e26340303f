//! Average-current and battery-lifetime model for a duty-cycled node.
//!
//! Average current is split into four categories. Per-sample and per-report
//! work is expressed as charge (µA·s) and spread over its interval:
//!
//! ```text
//! comms      = comms_charge_per_report / report_interval
//! sensing    = pir_static + sensing_charge_per_sample / sample_interval
//! processing = processing_charge_per_sample / sample_interval
//! sleep      = sleep_floor
//! ```
//!
//! Usable battery charge depends on the draw; it is interpolated through a
//! short list of measured anchors.

use std::fmt::Write as _;

use thiserror::Error;

pub const HOURS_PER_YEAR: f64 = 8766.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerError {
    #[error("invalid intervals: sample {sample_s} s, report {report_s} s")]
    InvalidIntervals { sample_s: f64, report_s: f64 },
    #[error("empty grid")]
    EmptyGrid,
    #[error("non-positive current {0} uA")]
    NonPositiveCurrent(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerProfile {
    pub sleep_floor_ua: f64,
    pub pir_static_ua: f64,
    pub sensing_charge_per_sample_uas: f64,
    pub processing_charge_per_sample_uas: f64,
    pub comms_charge_per_report_uas: f64,
}

impl Default for PowerProfile {
    /// Constants back-derived so that a 10 s / 60 s configuration draws
    /// 56 / 57 / 47 / 8 µA (comms / sensing / processing / sleep).
    fn default() -> Self {
        PowerProfile {
            sleep_floor_ua: 8.0,
            pir_static_ua: 46.0,
            sensing_charge_per_sample_uas: 110.0,
            processing_charge_per_sample_uas: 470.0,
            comms_charge_per_report_uas: 3360.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatterySpec {
    pub nominal_capacity_ah: f64,
    /// `(average current µA, effective capacity Ah)`, sorted by current.
    pub anchors: Vec<(f64, f64)>,
}

impl Default for BatterySpec {
    fn default() -> Self {
        BatterySpec {
            nominal_capacity_ah: 9.0,
            anchors: vec![(100.0, 8.0), (168.0, 8.03)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentBreakdown {
    pub comms_ua: f64,
    pub sensing_ua: f64,
    pub processing_ua: f64,
    pub sleep_ua: f64,
    pub total_ua: f64,
}

fn check_intervals(sample_s: f64, report_s: f64) -> Result<(), PowerError> {
    if !(sample_s >= 1.0 && report_s >= sample_s && report_s.is_finite()) {
        return Err(PowerError::InvalidIntervals { sample_s, report_s });
    }
    Ok(())
}

pub fn avg_current(
    profile: &PowerProfile,
    sample_s: f64,
    report_s: f64,
) -> Result<CurrentBreakdown, PowerError> {
    check_intervals(sample_s, report_s)?;
    let comms_ua = profile.comms_charge_per_report_uas / report_s;
    let sensing_ua = profile.pir_static_ua + profile.sensing_charge_per_sample_uas / sample_s;
    let processing_ua = profile.processing_charge_per_sample_uas / sample_s;
    let sleep_ua = profile.sleep_floor_ua;
    Ok(CurrentBreakdown {
        comms_ua,
        sensing_ua,
        processing_ua,
        sleep_ua,
        total_ua: comms_ua + sensing_ua + processing_ua + sleep_ua,
    })
}

/// Piecewise-linear through the anchors; flat outside them, capped at nominal.
pub fn effective_capacity(battery: &BatterySpec, avg_current_ua: f64) -> f64 {
    let anchors = &battery.anchors;
    let Some(&(first_i, first_c)) = anchors.first() else {
        return battery.nominal_capacity_ah;
    };
    let (last_i, last_c) = anchors[anchors.len() - 1];
    let cap = if avg_current_ua <= first_i {
        first_c
    } else if avg_current_ua >= last_i {
        last_c
    } else {
        let k = anchors
            .windows(2)
            .position(|w| avg_current_ua <= w[1].0)
            .expect("current lies inside the anchor span");
        let (i0, c0) = anchors[k];
        let (i1, c1) = anchors[k + 1];
        if avg_current_ua == i1 {
            c1
        } else {
            c0 + (c1 - c0) * (avg_current_ua - i0) / (i1 - i0)
        }
    };
    cap.min(battery.nominal_capacity_ah)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lifetime {
    pub years: f64,
    pub capacity_ah: f64,
    pub current: CurrentBreakdown,
}

pub fn lifetime_years(
    profile: &PowerProfile,
    battery: &BatterySpec,
    sample_s: f64,
    report_s: f64,
) -> Result<Lifetime, PowerError> {
    let current = avg_current(profile, sample_s, report_s)?;
    if current.total_ua <= 0.0 {
        return Err(PowerError::NonPositiveCurrent(current.total_ua));
    }
    let capacity_ah = effective_capacity(battery, current.total_ua);
    let hours = capacity_ah / (current.total_ua * 1e-6);
    Ok(Lifetime {
        years: hours / HOURS_PER_YEAR,
        capacity_ah,
        current,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeSurface {
    pub sample_grid: Vec<f64>,
    pub report_grid: Vec<f64>,
    /// `cells[i][j]` for `sample_grid[i]`, `report_grid[j]`; `None` where report < sample.
    pub cells: Vec<Vec<Option<f64>>>,
}

pub fn lifetime_surface(
    profile: &PowerProfile,
    battery: &BatterySpec,
    sample_grid: &[f64],
    report_grid: &[f64],
) -> Result<LifetimeSurface, PowerError> {
    if sample_grid.is_empty() || report_grid.is_empty() {
        return Err(PowerError::EmptyGrid);
    }
    let cells = sample_grid
        .iter()
        .map(|&s| {
            report_grid
                .iter()
                .map(|&r| lifetime_years(profile, battery, s, r).ok().map(|l| l.years))
                .collect()
        })
        .collect();
    Ok(LifetimeSurface {
        sample_grid: sample_grid.to_vec(),
        report_grid: report_grid.to_vec(),
        cells,
    })
}

fn fmt_interval(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

impl LifetimeSurface {
    /// Comma-separated text: header row of report intervals, one row per sample
    /// interval, years to 3 decimals, empty cells where infeasible.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_s\\report_s");
        for &r in &self.report_grid {
            out.push(',');
            out.push_str(&fmt_interval(r));
        }
        out.push('\n');
        for (s, row) in self.sample_grid.iter().zip(&self.cells) {
            out.push_str(&fmt_interval(*s));
            for cell in row {
                out.push(',');
                if let Some(y) = cell {
                    let _ = write!(out, "{y:.3}");
                }
            }
            out.push('\n');
        }
        out
    }
}

pub const DEFAULT_SAMPLE_GRID: [f64; 10] =
    [1.0, 2.0, 5.0, 10.0, 15.0, 30.0, 60.0, 120.0, 300.0, 600.0];
pub const DEFAULT_REPORT_GRID: [f64; 10] = [
    10.0, 30.0, 60.0, 120.0, 300.0, 600.0, 900.0, 1800.0, 3600.0, 7200.0,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_point() {
        let c = avg_current(&PowerProfile::default(), 10.0, 60.0).unwrap();
        assert_eq!(c.comms_ua, 56.0);
        assert_eq!(c.sensing_ua, 57.0);
        assert_eq!(c.processing_ua, 47.0);
        assert_eq!(c.sleep_ua, 8.0);
        assert_eq!(c.total_ua, 168.0);
    }

    #[test]
    fn comms_vanishes_for_long_reports() {
        let p = PowerProfile::default();
        let c = avg_current(&p, 10.0, 1e9).unwrap();
        assert!(c.comms_ua < 1e-5);
        assert!((c.total_ua - (57.0 + 47.0 + 8.0)).abs() < 1e-5);
    }

    #[test]
    fn invalid_intervals() {
        let p = PowerProfile::default();
        assert!(avg_current(&p, 0.5, 60.0).is_err());
        assert!(avg_current(&p, 60.0, 10.0).is_err());
        assert!(avg_current(&p, f64::NAN, 10.0).is_err());
    }

    #[test]
    fn capacity_anchors_and_midpoint() {
        let b = BatterySpec::default();
        assert_eq!(effective_capacity(&b, 100.0), 8.0);
        assert_eq!(effective_capacity(&b, 168.0), 8.03);
        assert!((effective_capacity(&b, 134.0) - 8.015).abs() < 1e-12);
        assert_eq!(effective_capacity(&b, 20.0), 8.0);
        assert_eq!(effective_capacity(&b, 5000.0), 8.03);
    }

    #[test]
    fn capacity_capped_at_nominal() {
        let b = BatterySpec {
            nominal_capacity_ah: 8.01,
            anchors: vec![(100.0, 8.0), (168.0, 8.03)],
        };
        assert_eq!(effective_capacity(&b, 168.0), 8.01);
    }

    #[test]
    fn default_lifetime() {
        let l = lifetime_years(
            &PowerProfile::default(),
            &BatterySpec::default(),
            10.0,
            60.0,
        )
        .unwrap();
        // 8.03 Ah / 168 uA = 47797.6 h
        assert!((l.years - 47797.619 / 8766.0).abs() < 1e-6);
        assert!((l.years - 5.45).abs() < 0.01);
        assert!(l.current.total_ua < 200.0);
    }

    #[test]
    fn doubling_intervals_helps() {
        let (p, b) = (PowerProfile::default(), BatterySpec::default());
        let (mut sample, mut report) = (1.0, 5.0);
        let mut prev = lifetime_years(&p, &b, sample, report).unwrap();
        for _ in 0..10 {
            sample *= 2.0;
            report *= 2.0;
            let next = lifetime_years(&p, &b, sample, report).unwrap();
            assert!(next.current.total_ua < prev.current.total_ua);
            assert!(next.years >= prev.years);
            prev = next;
        }
    }

    #[test]
    fn surface_cells_match_pointwise() {
        let (p, b) = (PowerProfile::default(), BatterySpec::default());
        let s = lifetime_surface(&p, &b, &DEFAULT_SAMPLE_GRID, &DEFAULT_REPORT_GRID).unwrap();
        for (i, &si) in DEFAULT_SAMPLE_GRID.iter().enumerate() {
            for (j, &rj) in DEFAULT_REPORT_GRID.iter().enumerate() {
                let expect = lifetime_years(&p, &b, si, rj).ok().map(|l| l.years);
                assert_eq!(s.cells[i][j], expect);
                assert_eq!(s.cells[i][j].is_none(), rj < si);
            }
        }
        for row in &s.cells {
            let vals: Vec<f64> = row.iter().flatten().copied().collect();
            assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        }
        for j in 0..DEFAULT_REPORT_GRID.len() {
            let col: Vec<f64> = s.cells.iter().filter_map(|r| r[j]).collect();
            assert!(col.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn single_cell_csv() {
        let s = lifetime_surface(
            &PowerProfile::default(),
            &BatterySpec::default(),
            &[10.0],
            &[60.0],
        )
        .unwrap();
        assert_eq!(s.to_csv(), "sample_s\\report_s,60\n10,5.453\n");
        assert_eq!(
            lifetime_surface(
                &PowerProfile::default(),
                &BatterySpec::default(),
                &[],
                &[60.0]
            ),
            Err(PowerError::EmptyGrid)
        );
    }

    #[test]
    fn infeasible_cell_is_empty() {
        let s = lifetime_surface(
            &PowerProfile::default(),
            &BatterySpec::default(),
            &[60.0],
            &[30.0, 60.0],
        )
        .unwrap();
        assert!(s.to_csv().lines().nth(1).unwrap().starts_with("60,,"));
    }
}
