//! Motion-detector bookkeeping: occupancy percentage and debounced state changes.
//!
//! Time is measured in ticks of 1/256 s. The detector output is intermittently
//! LOW even while someone is present, so a state change to "vacant" is only
//! reported after the signal has stayed LOW for a full debounce window, and a
//! change to "occupied" only when the signal rises after such a window.
//!
//! When an edge and the debounce deadline fall on the same tick, the edge is
//! applied first.

use thiserror::Error;

pub const TICKS_PER_SECOND: u64 = 256;
pub const DEBOUNCE_TICKS: u64 = 10 * TICKS_PER_SECOND;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("edge at tick {tick} precedes previous event at tick {last}")]
pub struct OutOfOrderEdge {
    pub tick: u64,
    pub last: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PirState {
    /// HIGH ticks accumulated since the last occupancy computation.
    high_ticks: u64,
    reported: bool,
    level: bool,
    /// Tick of the last level change (or of the last occupancy computation,
    /// whichever is later) while HIGH.
    accumulate_from: u64,
    /// Start of the current LOW run; `None` means LOW since before power-up.
    low_since: Option<u64>,
    last_tick: u64,
}

impl PirState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reported_state(&self) -> bool {
        self.reported
    }

    pub fn level(&self) -> bool {
        self.level
    }

    pub fn high_ticks(&self) -> u64 {
        self.high_ticks
    }

    fn advance(&mut self, tick: u64) -> Result<(), OutOfOrderEdge> {
        if tick < self.last_tick {
            return Err(OutOfOrderEdge {
                tick,
                last: self.last_tick,
            });
        }
        self.last_tick = tick;
        Ok(())
    }

    /// Applies a level change at `tick`; returns the occupancy event it triggers.
    pub fn process_edge(&mut self, tick: u64, level: bool) -> Result<Option<bool>, OutOfOrderEdge> {
        self.advance(tick)?;
        if level == self.level {
            return Ok(None);
        }
        self.level = level;
        if level {
            self.accumulate_from = tick;
            let low_for = self.low_since.map(|s| tick - s);
            if !self.reported && low_for.is_none_or(|d| d >= DEBOUNCE_TICKS) {
                self.reported = true;
                return Ok(Some(true));
            }
        } else {
            self.high_ticks += tick - self.accumulate_from;
            self.low_since = Some(tick);
        }
        Ok(None)
    }

    /// Tick at which a vacancy event fires unless the signal rises first.
    pub fn deadline(&self) -> Option<u64> {
        if self.reported && !self.level {
            self.low_since.map(|s| s + DEBOUNCE_TICKS)
        } else {
            None
        }
    }

    /// Fires the vacancy event if its deadline has been reached.
    pub fn poll(&mut self, tick: u64) -> Result<Option<bool>, OutOfOrderEdge> {
        self.advance(tick)?;
        match self.deadline() {
            Some(d) if tick >= d => {
                self.reported = false;
                Ok(Some(false))
            }
            _ => Ok(None),
        }
    }

    /// Returns the HIGH ticks since the previous call and restarts the count.
    pub fn take_high_ticks(&mut self, tick: u64) -> Result<u64, OutOfOrderEdge> {
        self.advance(tick)?;
        if self.level {
            self.high_ticks += tick - self.accumulate_from;
            self.accumulate_from = tick;
        }
        Ok(std::mem::take(&mut self.high_ticks))
    }
}

/// `round(255 * high_ticks / (256 * sample_interval_s))`, saturating at 255.
pub fn occupancy_fraction(high_ticks: u64, sample_interval_s: u32) -> u8 {
    let window = TICKS_PER_SECOND * sample_interval_s as u64;
    let scaled = (2 * 255 * high_ticks + window) / (2 * window);
    scaled.min(255) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: u64 = TICKS_PER_SECOND;

    #[test]
    fn rise_after_long_low() {
        let mut p = PirState::new();
        assert_eq!(p.process_edge(30 * S, true).unwrap(), Some(true));
        assert_eq!(p.process_edge(31 * S, false).unwrap(), None);
        assert_eq!(p.deadline(), Some(41 * S));
    }

    #[test]
    fn short_glitch_is_ignored() {
        let mut p = PirState::new();
        p.process_edge(S, true).unwrap();
        p.process_edge(5 * S, false).unwrap();
        assert_eq!(p.poll(13 * S).unwrap(), None);
        assert_eq!(p.process_edge(14 * S, true).unwrap(), None);
        assert!(p.reported_state());
        assert_eq!(p.deadline(), None);
    }

    #[test]
    fn vacancy_after_debounce() {
        let mut p = PirState::new();
        p.process_edge(0, true).unwrap();
        p.process_edge(2 * S, false).unwrap();
        assert_eq!(p.poll(12 * S - 1).unwrap(), None);
        assert_eq!(p.poll(12 * S).unwrap(), Some(false));
        assert_eq!(p.poll(13 * S).unwrap(), None);
        // rises again after 10 s of LOW
        assert_eq!(p.process_edge(13 * S + 1, true).unwrap(), Some(true));
    }

    #[test]
    fn edge_on_deadline_tick_cancels_vacancy() {
        let mut p = PirState::new();
        p.process_edge(0, true).unwrap();
        p.process_edge(S, false).unwrap();
        assert_eq!(p.process_edge(11 * S, true).unwrap(), None);
        assert_eq!(p.poll(11 * S).unwrap(), None);
        assert!(p.reported_state());
    }

    #[test]
    fn out_of_order_rejected() {
        let mut p = PirState::new();
        p.process_edge(100, true).unwrap();
        assert_eq!(
            p.process_edge(99, false),
            Err(OutOfOrderEdge {
                tick: 99,
                last: 100
            })
        );
    }

    #[test]
    fn high_tick_accounting() {
        let mut p = PirState::new();
        p.process_edge(2 * S, true).unwrap();
        p.process_edge(4 * S, false).unwrap();
        p.process_edge(9 * S, true).unwrap();
        assert_eq!(p.take_high_ticks(10 * S).unwrap(), 3 * S);
        assert_eq!(p.take_high_ticks(20 * S).unwrap(), 10 * S);
        p.process_edge(25 * S, false).unwrap();
        assert_eq!(p.take_high_ticks(30 * S).unwrap(), 5 * S);
    }

    #[test]
    fn fraction_rounding() {
        assert_eq!(occupancy_fraction(2560, 10), 255);
        assert_eq!(occupancy_fraction(1280, 10), 128);
        assert_eq!(occupancy_fraction(0, 10), 0);
        assert_eq!(occupancy_fraction(1, 10), 0);
        assert_eq!(occupancy_fraction(99_999, 10), 255);
    }
}
