use crate::wire::{Axis, Sign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Orientation {
    pub axis: Axis,
    pub sign: Sign,
}

/// Axis with the largest magnitude; exact ties go to x, then y.
pub fn dominant_axis(accel_g: [f64; 3]) -> Orientation {
    let mut best = 0;
    for i in 1..3 {
        if accel_g[i].abs() > accel_g[best].abs() {
            best = i;
        }
    }
    Orientation {
        axis: Axis::from_u8(best as u8).expect("index below 3"),
        sign: if accel_g[best] < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        },
    }
}

/// Updates `stored` and returns the new orientation if it changed.
pub fn orientation_check(stored: &mut Orientation, accel_g: [f64; 3]) -> Option<Orientation> {
    let now = dominant_axis(accel_g);
    if now == *stored {
        None
    } else {
        *stored = now;
        Some(now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unchanged_is_silent() {
        let mut o = dominant_axis([0.0, 0.0, 1.0]);
        assert_eq!(orientation_check(&mut o, [0.0, 0.0, 1.0]), None);
    }

    #[test]
    fn flip_to_z() {
        let mut o = dominant_axis([1.0, 0.0, 0.0]);
        assert_eq!(
            orientation_check(&mut o, [0.0, 0.0, 1.0]),
            Some(Orientation {
                axis: Axis::Z,
                sign: Sign::Positive
            })
        );
        assert_eq!(o.axis, Axis::Z);
    }

    #[test]
    fn ties_prefer_x_then_y() {
        assert_eq!(dominant_axis([0.5, 0.5, 0.5]).axis, Axis::X);
        assert_eq!(dominant_axis([0.1, -0.7, 0.7]).axis, Axis::Y);
        assert_eq!(dominant_axis([0.1, -0.7, 0.7]).sign, Sign::Negative);
    }

    #[test]
    fn quarter_turn_sweep_emits_once() {
        let mut o = dominant_axis([1.0, 0.0, 0.0]);
        let mut events = Vec::new();
        for deg in 0..=90 {
            let r = (deg as f64).to_radians();
            if let Some(e) = orientation_check(&mut o, [r.cos(), 0.0, r.sin()]) {
                events.push((deg, e));
            }
        }
        assert_eq!(events.len(), 1);
        let (deg, e) = events[0];
        assert!(deg == 45 || deg == 46, "crossover at {deg}");
        assert_eq!(e.axis, Axis::Z);
    }
}
