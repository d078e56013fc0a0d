//! Load tap changer discrete map.
//!
//! The tap is a discrete slow state. When the controlled voltage leaves the
//! deadband `[v_0 - d, v_0 + d]` and stays out continuously for the initial
//! delay (first move of an excursion) or the sequential delay (later moves),
//! the tap steps by `r` in the direction that restores the voltage toward
//! the band, clamped to `[r_min, r_max]`.
//!
//! Direction convention: increasing tap ratio lowers the controlled
//! (secondary-side) voltage, so a low voltage commands a tap decrease.

use serde::{Deserialize, Serialize};

use super::LtcParams;

/// Discrete state of one LTC. `armed_since` is the time the current
/// out-of-band excursion started or the last move fired; `None` when the
/// voltage is inside the band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LtcState {
    pub tap: f64,
    pub armed_since: Option<f64>,
    /// Moves fired during the current excursion.
    pub moves: u32,
}

impl LtcState {
    pub fn at_tap(tap: f64) -> Self {
        Self {
            tap,
            armed_since: None,
            moves: 0,
        }
    }
}

/// Result of one poll of the discrete map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtcStep {
    pub state: LtcState,
    pub changed: bool,
    /// Set when a commanded move could not change the tap because the tap
    /// sits at a limit.
    pub saturated: bool,
}

/// The `h_d` map of the tap changer. `tau` must be nondecreasing across
/// calls. Total function.
pub fn ltc_discrete_map(params: &LtcParams, state: LtcState, v: f64, tau: f64) -> LtcStep {
    let lo = params.v_0 - params.d;
    let hi = params.v_0 + params.d;

    if v >= lo && v <= hi {
        // Inside the deadband: delay timer resets, excursion ends.
        // Timer bookkeeping is not a z_d event; the tap did not move.
        let mut s = state;
        s.armed_since = None;
        s.moves = 0;
        return LtcStep {
            state: s,
            changed: false,
            saturated: false,
        };
    }

    let mut s = state;
    let anchor = match s.armed_since {
        Some(t) => t,
        None => {
            s.armed_since = Some(tau);
            tau
        }
    };
    let delay = if s.moves == 0 {
        params.delta_t0
    } else {
        params.delta_tk
    };
    if tau - anchor < delay {
        return LtcStep {
            state: s,
            changed: false,
            saturated: false,
        };
    }

    // Delay elapsed: step the tap toward the band. Low voltage -> lower tap.
    let direction = if v < lo { -1.0 } else { 1.0 };
    let target = (s.tap + direction * params.r)
        .max(params.r_min)
        .min(params.r_max);
    if target == s.tap {
        return LtcStep {
            state: s,
            changed: false,
            saturated: true,
        };
    }
    s.tap = target;
    s.armed_since = Some(tau);
    s.moves += 1;
    LtcStep {
        state: s,
        changed: true,
        saturated: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_9bus() -> LtcParams {
        LtcParams {
            v_0: 1.015,
            d: 0.015,
            r: 0.05,
            r_max: 1.0,
            r_min: 0.03,
            delta_t0: 30.0,
            delta_tk: 10.0,
        }
    }

    #[test]
    fn in_band_never_moves() {
        let p = params_9bus();
        // 1.02 lies inside [1.0, 1.03].
        let mut s = LtcState::at_tap(1.0);
        for k in 0..100 {
            let step = ltc_discrete_map(&p, s, 1.02, k as f64);
            assert!(!step.changed);
            assert_eq!(step.state.tap, 1.0);
            s = step.state;
        }
    }

    #[test]
    fn first_move_after_initial_delay() {
        let p = params_9bus();
        let mut s = LtcState::at_tap(1.0);
        let mut move_time = None;
        for k in 0..500 {
            let tau = k as f64 * 0.2;
            let step = ltc_discrete_map(&p, s, 1.05, tau);
            if step.changed && move_time.is_none() {
                move_time = Some(tau);
                // 1.05 is above the band; the tap must rise to lower the
                // voltage, but it already sits at r_max = 1.0.
            }
            s = step.state;
        }
        // With the tap pinned at its upper limit no move can happen.
        assert_eq!(move_time, None);
        assert_eq!(s.tap, 1.0);
    }

    #[test]
    fn low_voltage_steps_tap_down_after_delay() {
        let p = params_9bus();
        let mut s = LtcState::at_tap(1.0);
        let mut times = Vec::new();
        for k in 0..1200 {
            let tau = k as f64 * 0.1;
            let step = ltc_discrete_map(&p, s, 0.97, tau);
            if step.changed {
                times.push(tau);
            }
            s = step.state;
        }
        // First move after delta_t0 = 30 s, then every delta_tk = 10 s.
        assert_eq!(times[0], 30.0);
        assert_eq!(times[1], 40.0);
        assert_eq!(times[2], 50.0);
        assert!((s.tap - (1.0 - 0.05 * times.len() as f64)).abs() < 1e-12);
    }

    #[test]
    fn sustained_high_voltage_steps_up_once_band_left() {
        let mut p = params_9bus();
        p.r_max = 1.10;
        let mut s = LtcState::at_tap(1.0);
        let mut first = None;
        for k in 0..400 {
            let tau = k as f64 * 0.25;
            let step = ltc_discrete_map(&p, s, 1.05, tau);
            if step.changed && first.is_none() {
                first = Some((tau, step.state.tap));
            }
            s = step.state;
        }
        // One step of +0.05 (tap up lowers the controlled voltage) at 30 s.
        let (t, tap) = first.unwrap();
        assert_eq!(t, 30.0);
        assert!((tap - 1.05).abs() < 1e-12);
    }

    #[test]
    fn saturation_at_limit_flags() {
        let p = params_9bus();
        let s = LtcState {
            tap: 1.0,
            armed_since: Some(0.0),
            moves: 0,
        };
        let step = ltc_discrete_map(&p, s, 1.08, 35.0);
        assert!(!step.changed);
        assert!(step.saturated);
        assert_eq!(step.state.tap, 1.0);
    }

    #[test]
    fn reentering_band_resets_excursion() {
        let p = params_9bus();
        let mut s = LtcState::at_tap(0.9);
        // Go out of band for 20 s (less than delta_t0).
        s = ltc_discrete_map(&p, s, 0.97, 0.0).state;
        s = ltc_discrete_map(&p, s, 0.97, 20.0).state;
        assert!(s.armed_since.is_some());
        // Back in band: timer clears.
        s = ltc_discrete_map(&p, s, 1.015, 21.0).state;
        assert_eq!(s.armed_since, None);
        // A fresh excursion needs the full initial delay again.
        s = ltc_discrete_map(&p, s, 0.97, 22.0).state;
        let step = ltc_discrete_map(&p, s, 0.97, 51.0);
        assert!(!step.changed);
        let step = ltc_discrete_map(&p, step.state, 0.97, 52.0);
        assert!(step.changed);
    }

    #[test]
    fn tap_sequence_monotone_while_voltage_low() {
        let p = params_9bus();
        let mut s = LtcState::at_tap(1.0);
        let mut taps = vec![s.tap];
        for k in 0..2000 {
            let step = ltc_discrete_map(&p, s, 0.95, k as f64 * 0.05);
            s = step.state;
            if step.changed {
                taps.push(s.tap);
            }
        }
        assert!(taps.windows(2).all(|w| w[1] < w[0]));
    }
}
