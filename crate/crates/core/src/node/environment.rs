//! Seeded virtual room that the simulated instruments read from.
//!
//! Continuous signals are pure functions of `(seed, time)`: a slow daily
//! sinusoid plus smooth value noise, so any instant can be queried in any
//! order. Presence, motion-detector edges and orientation changes are
//! pre-generated up to a horizon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pir::TICKS_PER_SECOND;

const DAY_S: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentParams {
    pub temperature_mean_c: f64,
    pub temperature_swing_c: f64,
    pub temperature_noise_c: f64,
    pub humidity_mean_pct: f64,
    pub humidity_swing_pct: f64,
    pub humidity_noise_pct: f64,
    pub lux_mean: f64,
    pub lux_swing: f64,
    pub lux_noise: f64,
    /// Extra lux while someone is present (lights on).
    pub lux_occupied: f64,
    /// Period of the value-noise knots.
    pub noise_period_s: f64,
    pub accel_noise_g: f64,
    /// Mean seconds between orientation changes; `None` keeps the node still.
    pub orientation_change_mean_s: Option<f64>,
    /// `(min, max)` seconds of an absent / present spell; `None` disables presence.
    pub absence_s: Option<(f64, f64)>,
    pub presence_s: (f64, f64),
    /// `(min, max)` seconds between motion-detector dropouts while present.
    pub glitch_gap_s: (f64, f64),
    /// `(min, max)` seconds a dropout lasts; `None` disables dropouts.
    pub glitch_len_s: Option<(f64, f64)>,
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        EnvironmentParams {
            temperature_mean_c: 21.5,
            temperature_swing_c: 1.5,
            temperature_noise_c: 0.15,
            humidity_mean_pct: 42.0,
            humidity_swing_pct: 4.0,
            humidity_noise_pct: 0.6,
            lux_mean: 320.0,
            lux_swing: 180.0,
            lux_noise: 8.0,
            lux_occupied: 150.0,
            noise_period_s: 45.0,
            accel_noise_g: 0.004,
            orientation_change_mean_s: Some(1800.0),
            absence_s: Some((60.0, 900.0)),
            presence_s: (30.0, 1200.0),
            glitch_gap_s: (2.0, 40.0),
            glitch_len_s: Some((0.2, 8.0)),
        }
    }
}

impl EnvironmentParams {
    /// A still, unoccupied room with slow drifts only.
    pub fn quiet() -> Self {
        EnvironmentParams {
            temperature_noise_c: 0.01,
            humidity_noise_pct: 0.02,
            lux_noise: 0.3,
            noise_period_s: 600.0,
            accel_noise_g: 0.0,
            orientation_change_mean_s: None,
            absence_s: None,
            glitch_len_s: None,
            ..Self::default()
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Uniform in [-1, 1], a pure function of its arguments.
fn knot(seed: u64, channel: u64, k: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(channel.wrapping_mul(0x1000_0001) ^ k as u64));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn value_noise(seed: u64, channel: u64, t: f64, period: f64) -> f64 {
    let x = t / period;
    let k = x.floor();
    let f = x - k;
    let s = f * f * (3.0 - 2.0 * f);
    let a = knot(seed, channel, k as i64);
    let b = knot(seed, channel, k as i64 + 1);
    a + (b - a) * s
}

#[derive(Debug, Clone)]
pub struct VirtualEnvironment {
    seed: u64,
    params: EnvironmentParams,
    phase: [f64; 3],
    horizon_ticks: u64,
    /// `[start, end)` ticks of presence spells.
    presence: Vec<(u64, u64)>,
    /// Detector level changes, strictly increasing in tick, alternating levels.
    pir_edges: Vec<(u64, bool)>,
    /// Gravity direction changes `(tick, unit vector in g)`; index 0 is at tick 0.
    orientation: Vec<(u64, [f64; 3])>,
}

const FACES: [[f64; 3]; 6] = [
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
];

fn secs_to_ticks(s: f64) -> u64 {
    (s * TICKS_PER_SECOND as f64).round().max(1.0) as u64
}

impl VirtualEnvironment {
    pub fn new(seed: u64, horizon_s: u64, params: EnvironmentParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase = [
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
        ];
        let horizon_ticks = horizon_s * TICKS_PER_SECOND;

        let mut presence = Vec::new();
        let mut pir_edges = Vec::new();
        if let Some((amin, amax)) = params.absence_s {
            let mut t = 0u64;
            loop {
                t += secs_to_ticks(rng.gen_range(amin..=amax));
                if t >= horizon_ticks {
                    break;
                }
                let end =
                    (t + secs_to_ticks(rng.gen_range(params.presence_s.0..=params.presence_s.1)))
                        .min(horizon_ticks);
                presence.push((t, end));
                pir_edges.push((t, true));
                if let Some((gmin, gmax)) = params.glitch_len_s {
                    let mut g = t;
                    loop {
                        g += secs_to_ticks(
                            rng.gen_range(params.glitch_gap_s.0..=params.glitch_gap_s.1),
                        );
                        let len = secs_to_ticks(rng.gen_range(gmin..=gmax));
                        if g + len >= end {
                            break;
                        }
                        pir_edges.push((g, false));
                        pir_edges.push((g + len, true));
                        g += len;
                    }
                }
                if end < horizon_ticks {
                    pir_edges.push((end, false));
                }
                t = end;
            }
        }

        let mut orientation = vec![(0u64, FACES[0])];
        if let Some(mean) = params.orientation_change_mean_s {
            let mut t = 0u64;
            let mut face = 0usize;
            loop {
                t += secs_to_ticks(rng.gen_range(0.2 * mean..=1.8 * mean));
                if t >= horizon_ticks {
                    break;
                }
                face = (face + rng.gen_range(1..FACES.len())) % FACES.len();
                orientation.push((t, FACES[face]));
            }
        }

        VirtualEnvironment {
            seed,
            params,
            phase,
            horizon_ticks,
            presence,
            pir_edges,
            orientation,
        }
    }

    /// Replaces the generated detector edges and orientation changes, e.g. to
    /// put interrupts at chosen ticks. Edges must be strictly increasing and
    /// alternate in level; orientation changes must be increasing and after 0.
    pub fn with_events(
        mut self,
        pir_edges: Vec<(u64, bool)>,
        orientation_changes: Vec<(u64, [f64; 3])>,
    ) -> Self {
        debug_assert!(pir_edges
            .windows(2)
            .all(|w| w[0].0 < w[1].0 && w[0].1 != w[1].1));
        debug_assert!(orientation_changes.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(orientation_changes.first().is_none_or(|c| c.0 > 0));
        self.pir_edges = pir_edges;
        self.orientation.truncate(1);
        self.orientation.extend(orientation_changes);
        self
    }

    pub fn params(&self) -> &EnvironmentParams {
        &self.params
    }

    pub fn horizon_ticks(&self) -> u64 {
        self.horizon_ticks
    }

    fn daily(&self, t: f64, idx: usize) -> f64 {
        (std::f64::consts::TAU * t / DAY_S + self.phase[idx]).sin()
    }

    pub fn is_present(&self, tick: u64) -> bool {
        let i = self.presence.partition_point(|&(s, _)| s <= tick);
        i > 0 && tick < self.presence[i - 1].1
    }

    pub fn presence_spells(&self) -> &[(u64, u64)] {
        &self.presence
    }

    pub fn temperature_c(&self, t: f64) -> f64 {
        let p = &self.params;
        let v = p.temperature_mean_c
            + p.temperature_swing_c * self.daily(t, 0)
            + p.temperature_noise_c * value_noise(self.seed, 1, t, p.noise_period_s);
        v.clamp(-40.0, 85.0)
    }

    pub fn humidity_pct(&self, t: f64) -> f64 {
        let p = &self.params;
        let v = p.humidity_mean_pct
            + p.humidity_swing_pct * self.daily(t, 1)
            + p.humidity_noise_pct * value_noise(self.seed, 2, t, p.noise_period_s);
        v.clamp(0.0, 100.0)
    }

    pub fn illuminance_lux(&self, t: f64) -> f64 {
        let p = &self.params;
        let mut v = p.lux_mean
            + p.lux_swing * self.daily(t, 2)
            + p.lux_noise * value_noise(self.seed, 3, t, p.noise_period_s);
        if self.is_present((t * TICKS_PER_SECOND as f64) as u64) {
            v += p.lux_occupied;
        }
        v.clamp(0.0, 65_535.0)
    }

    /// Gravity direction in effect at `tick`, without sensor noise.
    pub fn gravity_at(&self, tick: u64) -> [f64; 3] {
        let i = self.orientation.partition_point(|&(s, _)| s <= tick);
        self.orientation[i.max(1) - 1].1
    }

    pub fn acceleration_g(&self, t: f64) -> [f64; 3] {
        let g = self.gravity_at((t * TICKS_PER_SECOND as f64) as u64);
        let n = self.params.accel_noise_g;
        let period = 7.0;
        [
            g[0] + n * value_noise(self.seed, 4, t, period),
            g[1] + n * value_noise(self.seed, 5, t, period),
            g[2] + n * value_noise(self.seed, 6, t, period),
        ]
    }

    pub fn pir_edges(&self) -> &[(u64, bool)] {
        &self.pir_edges
    }

    pub fn pir_level_at(&self, tick: u64) -> bool {
        let i = self.pir_edges.partition_point(|&(s, _)| s <= tick);
        i > 0 && self.pir_edges[i - 1].1
    }

    /// Orientation changes after tick 0.
    pub fn orientation_changes(&self) -> &[(u64, [f64; 3])] {
        &self.orientation[1..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_signals() {
        let a = VirtualEnvironment::new(11, 7200, EnvironmentParams::default());
        let b = VirtualEnvironment::new(11, 7200, EnvironmentParams::default());
        for i in 0..500 {
            let t = i as f64 * 13.37;
            assert_eq!(a.temperature_c(t), b.temperature_c(t));
            assert_eq!(a.humidity_pct(t), b.humidity_pct(t));
            assert_eq!(a.illuminance_lux(t), b.illuminance_lux(t));
            assert_eq!(a.acceleration_g(t), b.acceleration_g(t));
        }
        assert_eq!(a.pir_edges(), b.pir_edges());
        let c = VirtualEnvironment::new(12, 7200, EnvironmentParams::default());
        assert_ne!(a.pir_edges(), c.pir_edges());
    }

    #[test]
    fn query_order_does_not_matter() {
        let env = VirtualEnvironment::new(3, 3600, EnvironmentParams::default());
        let fwd: Vec<f64> = (0..100).map(|i| env.temperature_c(i as f64)).collect();
        let rev: Vec<f64> = (0..100)
            .rev()
            .map(|i| env.temperature_c(i as f64))
            .collect();
        assert!(fwd.iter().eq(rev.iter().rev()));
    }

    #[test]
    fn signals_within_sensor_ranges() {
        let env = VirtualEnvironment::new(5, 86_400, EnvironmentParams::default());
        for i in 0..2000 {
            let t = i as f64 * 43.2;
            assert!((-40.0..=85.0).contains(&env.temperature_c(t)));
            assert!((0.0..=100.0).contains(&env.humidity_pct(t)));
            assert!(env.illuminance_lux(t) >= 0.0);
            assert!(env.acceleration_g(t).iter().all(|a| a.abs() <= 8.0));
        }
    }

    #[test]
    fn pir_edges_alternate_and_follow_presence() {
        let env = VirtualEnvironment::new(9, 20_000, EnvironmentParams::default());
        let edges = env.pir_edges();
        assert!(!edges.is_empty());
        assert!(edges
            .windows(2)
            .all(|w| w[0].0 < w[1].0 && w[0].1 != w[1].1));
        assert!(edges[0].1);
        for &(tick, level) in edges {
            if level {
                assert!(env.is_present(tick));
            }
        }
    }

    #[test]
    fn quiet_room_has_no_events() {
        let env = VirtualEnvironment::new(1, 10_000, EnvironmentParams::quiet());
        assert!(env.pir_edges().is_empty());
        assert!(env.orientation_changes().is_empty());
    }
}
