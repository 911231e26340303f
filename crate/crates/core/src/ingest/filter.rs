//! Exception (deadband) filter and swinging-door compression.

use super::settings::StreamSettings;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub t: f64,
    pub v: f64,
}

impl Point {
    pub fn new(t: f64, v: f64) -> Self {
        Point { t, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    /// Within `exc_dev` of the last passed value and inside the heartbeat.
    Deadband,
    /// Same timestamp and value as the last passed point (a re-sent file).
    Duplicate,
    /// Same timestamp as the last passed point, different value.
    Conflict,
    /// Older than the last passed point.
    OutOfOrder,
}

/// Deadband with heartbeat. `exc_dev = 0` passes every new timestamp.
#[derive(Debug, Clone, Default)]
pub struct ExceptionFilter {
    last: Option<Point>,
}

impl ExceptionFilter {
    /// Resumes after `last`, the most recently passed point.
    pub fn resume(last: Option<Point>) -> Self {
        ExceptionFilter { last }
    }

    pub fn check(&mut self, p: Point, s: &StreamSettings) -> Verdict {
        let verdict = match self.last {
            None => Verdict::Pass,
            Some(l) if p.t < l.t => Verdict::OutOfOrder,
            Some(l) if p.t == l.t => {
                if p.v == l.v {
                    Verdict::Duplicate
                } else {
                    Verdict::Conflict
                }
            }
            Some(_) if s.exc_dev == 0.0 => Verdict::Pass,
            Some(l) if (p.v - l.v).abs() > s.exc_dev || p.t - l.t >= s.exc_max_s => Verdict::Pass,
            Some(_) => Verdict::Deadband,
        };
        if verdict == Verdict::Pass {
            self.last = Some(p);
        }
        verdict
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonMonotonic;

/// Swinging-door compressor. Archives a point only when the next one would
/// leave the slope corridor anchored at the last archived point, so linear
/// interpolation between archived points stays within `comp_dev` of every
/// input. `comp_dev = 0` archives every point.
#[derive(Debug, Clone)]
pub struct SwingingDoor {
    comp_dev: f64,
    comp_max_s: f64,
    archived: Option<Point>,
    held: Option<Point>,
    slope_hi: f64,
    slope_lo: f64,
}

impl SwingingDoor {
    pub fn new(settings: &StreamSettings, last_archived: Option<Point>) -> Self {
        SwingingDoor {
            comp_dev: settings.comp_dev,
            comp_max_s: settings.comp_max_s,
            archived: last_archived,
            held: None,
            slope_hi: f64::INFINITY,
            slope_lo: f64::NEG_INFINITY,
        }
    }

    pub fn held(&self) -> Option<Point> {
        self.held
    }

    fn archive(&mut self, p: Point, out: &mut Vec<Point>) {
        out.push(p);
        self.archived = Some(p);
        self.held = None;
        self.slope_hi = f64::INFINITY;
        self.slope_lo = f64::NEG_INFINITY;
    }

    /// Feeds one point; appends any points to archive to `out`.
    pub fn push(&mut self, p: Point, out: &mut Vec<Point>) -> Result<(), NonMonotonic> {
        let last_t = self.held.or(self.archived).map(|q| q.t);
        if last_t.is_some_and(|t| p.t <= t) {
            return Err(NonMonotonic);
        }
        let Some(mut a) = self.archived else {
            self.archive(p, out);
            return Ok(());
        };
        if self.comp_dev == 0.0 {
            self.archive(p, out);
            return Ok(());
        }
        if let Some(h) = self.held {
            let slope = (p.v - a.v) / (p.t - a.t);
            if slope > self.slope_hi || slope < self.slope_lo || p.t - a.t > self.comp_max_s {
                self.archive(h, out);
                a = h;
            }
        }
        let dt = p.t - a.t;
        self.slope_hi = self.slope_hi.min((p.v + self.comp_dev - a.v) / dt);
        self.slope_lo = self.slope_lo.max((p.v - self.comp_dev - a.v) / dt);
        self.held = Some(p);
        Ok(())
    }

    /// Archives the held point, if any.
    pub fn flush(&mut self, out: &mut Vec<Point>) {
        if let Some(h) = self.held {
            self.archive(h, out);
        }
    }
}

/// Compresses a whole series in one go.
pub fn swinging_door(points: &[Point], settings: &StreamSettings) -> Vec<Point> {
    let mut sdt = SwingingDoor::new(settings, None);
    let mut out = Vec::new();
    for &p in points {
        let _ = sdt.push(p, &mut out);
    }
    sdt.flush(&mut out);
    out
}

/// Linear interpolation over sorted `archive`; `None` outside its span.
pub fn interpolate(archive: &[Point], t: f64) -> Option<f64> {
    let first = archive.first()?;
    let last = archive.last()?;
    if t < first.t || t > last.t {
        return None;
    }
    let i = archive.partition_point(|p| p.t < t);
    let hi = archive[i];
    if hi.t == t {
        return Some(hi.v);
    }
    let lo = archive[i - 1];
    Some(lo.v + (hi.v - lo.v) * (t - lo.t) / (hi.t - lo.t))
}
