//! Dynamic device models.
//!
//! Each device contributes residual rows to the fast equations `f`, the
//! algebraic equations `g` and the continuous slow equations `h_c`, plus the
//! matching analytic Jacobian entries. Discrete behavior (tap steps, limiter
//! activation) lives in the devices' `h_d` maps, polled by the simulators.
//!
//! Residual semantics are "zero at equilibrium" and rates are in seconds:
//! a row `f[i] = r` means `dx[i]/dt = r`.

pub mod generator;
pub mod load;
pub mod ltc;
pub mod oxl;

use serde::{Deserialize, Serialize};

use crate::error::Violation;

/// Which residual part a Jacobian row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowBlock {
    F,
    G,
    Hc,
}

/// Which state partition a Jacobian column differentiates against.
/// Discrete states are parameters between events and carry no columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColBlock {
    X,
    Y,
    Zc,
}

/// Sparse residual and Jacobian contributions from one device evaluation.
#[derive(Debug, Clone, Default)]
pub struct DeviceContribution {
    pub f_entries: Vec<(usize, f64)>,
    pub g_entries: Vec<(usize, f64)>,
    pub h_c_entries: Vec<(usize, f64)>,
    pub jacobian_entries: Vec<(RowBlock, ColBlock, usize, usize, f64)>,
}

impl DeviceContribution {
    pub fn f(&mut self, row: usize, value: f64) {
        self.f_entries.push((row, value));
    }
    pub fn g(&mut self, row: usize, value: f64) {
        self.g_entries.push((row, value));
    }
    pub fn hc(&mut self, row: usize, value: f64) {
        self.h_c_entries.push((row, value));
    }
    pub fn jac(&mut self, rb: RowBlock, cb: ColBlock, row: usize, col: usize, value: f64) {
        if value != 0.0 {
            self.jacobian_entries.push((rb, cb, row, col, value));
        }
    }
}

/// Clamp with a flag telling whether the interior branch is active
/// (derivative 1 inside, 0 when saturated).
pub fn saturate(v: f64, lo: f64, hi: f64) -> (f64, bool) {
    if v < lo {
        (lo, false)
    } else if v > hi {
        (hi, false)
    } else {
        (v, true)
    }
}

// Parameter sets. All per-unit on the system base unless marked as seconds.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Inertia constant, s.
    pub h: f64,
    /// Damping, p.u.
    #[serde(default)]
    pub d: f64,
    pub x_d: f64,
    pub x_q: f64,
    pub x_d_prime: f64,
    pub x_q_prime: f64,
    /// Open-circuit d-axis time constant, s.
    pub t_d0_prime: f64,
    /// Open-circuit q-axis time constant, s.
    pub t_q0_prime: f64,
}

impl GeneratorParams {
    pub fn validate(&self, loc: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.h > 0.0) {
            v.push(Violation::new(loc, format!("inertia H must be > 0, got {}", self.h)));
        }
        if !(self.x_d_prime > 0.0) {
            v.push(Violation::new(loc, "x_d_prime must be > 0"));
        }
        if self.x_d < self.x_d_prime {
            v.push(Violation::new(loc, "x_d must be >= x_d_prime"));
        }
        if !(self.t_d0_prime > 0.0) {
            v.push(Violation::new(loc, "t_d0_prime must be > 0"));
        }
        if !(self.t_q0_prime > 0.0) {
            v.push(Violation::new(loc, "t_q0_prime must be > 0"));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvrParams {
    /// Regulator gain, p.u.
    pub k_a: f64,
    /// Regulator time constant, s.
    pub t_a: f64,
    pub v_f_min: f64,
    pub v_f_max: f64,
    /// Reference voltage, p.u. When omitted in a case file it is back-solved
    /// from the power flow so the initial state is an exact equilibrium.
    #[serde(default)]
    pub v_ref: Option<f64>,
}

impl AvrParams {
    pub fn validate(&self, loc: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.k_a > 0.0) {
            v.push(Violation::new(loc, "k_a must be > 0"));
        }
        if !(self.t_a > 0.0) {
            v.push(Violation::new(loc, "t_a must be > 0"));
        }
        if self.v_f_min >= self.v_f_max {
            v.push(Violation::new(loc, "v_f_min must be < v_f_max"));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OxlParams {
    /// Integration time constant, s.
    pub t_0: f64,
    /// Field-current limit, p.u. A value of 0 disables the limiter.
    pub i_f_lim: f64,
    /// Ceiling on the output signal, p.u.
    pub v_oxl_max: f64,
}

impl OxlParams {
    pub fn validate(&self, loc: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.t_0 > 0.0) {
            v.push(Violation::new(loc, "t_0 must be > 0"));
        }
        if !(self.v_oxl_max > 0.0) {
            v.push(Violation::new(loc, "v_oxl_max must be > 0"));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurbineGovernorParams {
    /// Reference speed, p.u.
    pub omega_ref: f64,
    /// Droop, p.u.
    pub r: f64,
    pub p_max: f64,
    pub p_min: f64,
    /// Governor time constant, s.
    pub t_s: f64,
    /// Servo time constant, s.
    pub t_c: f64,
    /// Transient gain time constant, s.
    pub t_3: f64,
    /// Power fraction time constant, s.
    pub t_4: f64,
    /// Reheat time constant, s.
    pub t_5: f64,
}

impl TurbineGovernorParams {
    pub fn validate(&self, loc: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.r > 0.0) {
            v.push(Violation::new(loc, "droop r must be > 0"));
        }
        if self.p_min >= self.p_max {
            v.push(Violation::new(loc, "p_min must be < p_max"));
        }
        if !(self.t_s > 0.0 && self.t_c > 0.0 && self.t_5 > 0.0) {
            v.push(Violation::new(loc, "t_s, t_c, t_5 must be > 0"));
        }
        if self.t_3 < 0.0 || self.t_4 < 0.0 {
            v.push(Violation::new(loc, "t_3, t_4 must be >= 0"));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpRecoveryLoadParams {
    /// Nominal active power of the bus load, p.u.
    pub p_0: f64,
    /// Nominal reactive power, p.u.
    pub q_0: f64,
    /// Fraction of the bus load made dynamic.
    pub k_p: f64,
    pub k_q: f64,
    /// Recovery time constants, s.
    pub t_p: f64,
    pub t_q: f64,
    /// Static / transient exponents (active).
    pub alpha_s: f64,
    pub alpha_t: f64,
    /// Static / transient exponents (reactive).
    pub beta_s: f64,
    pub beta_t: f64,
    /// When set, the recovery states are classified as fast (`x`)
    /// instead of continuous slow (`z_c`).
    #[serde(default)]
    pub fast: bool,
}

impl ExpRecoveryLoadParams {
    pub fn validate(&self, loc: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.t_p > 0.0 && self.t_q > 0.0) {
            v.push(Violation::new(loc, "t_p and t_q must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.k_p) || !(0.0..=1.0).contains(&self.k_q) {
            v.push(Violation::new(loc, "k_p and k_q must lie in [0, 1]"));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtcParams {
    /// Reference voltage for the controlled bus, p.u.
    pub v_0: f64,
    /// Half of the deadband, p.u.
    pub d: f64,
    /// Tap step.
    pub r: f64,
    pub r_max: f64,
    pub r_min: f64,
    /// Initial time delay before the first move, s.
    pub delta_t0: f64,
    /// Sequential delay between moves, s.
    pub delta_tk: f64,
}

impl LtcParams {
    pub fn validate(&self, loc: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.d > 0.0) {
            v.push(Violation::new(loc, "deadband d must be > 0"));
        }
        if !(self.r > 0.0) {
            v.push(Violation::new(loc, "tap step r must be > 0"));
        }
        if self.r_min >= self.r_max {
            v.push(Violation::new(loc, "r_min must be < r_max"));
        }
        if !(self.delta_t0 > 0.0 && self.delta_tk > 0.0) {
            v.push(Violation::new(loc, "delta_t0 and delta_tk must be > 0"));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturate_branches() {
        assert_eq!(saturate(0.5, 0.0, 1.0), (0.5, true));
        assert_eq!(saturate(-0.5, 0.0, 1.0), (0.0, false));
        assert_eq!(saturate(1.5, 0.0, 1.0), (1.0, false));
    }

    #[test]
    fn generator_invariants_checked() {
        let p = GeneratorParams {
            h: -1.0,
            d: 0.0,
            x_d: 0.1,
            x_q: 0.1,
            x_d_prime: 0.2,
            x_q_prime: 0.1,
            t_d0_prime: 8.0,
            t_q0_prime: 0.4,
        };
        let v = p.validate("gen1");
        assert!(v.iter().any(|w| w.message.contains("inertia")));
        assert!(v.iter().any(|w| w.message.contains("x_d must be >=")));
    }

    #[test]
    fn ltc_invariants_checked() {
        let p = LtcParams {
            v_0: 1.015,
            d: 0.015,
            r: 0.05,
            r_max: 1.0,
            r_min: 0.03,
            delta_t0: 30.0,
            delta_tk: 10.0,
        };
        assert!(p.validate("ltc").is_empty());
    }
}
