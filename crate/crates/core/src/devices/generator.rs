//! Fourth-order two-axis synchronous machine with optional first-order AVR
//! (windup limits), type-1 turbine governor reduced to governor + servo
//! states, and over-excitation limiter.
//!
//! Fast states: rotor angle `delta`, speed `omega`, transient EMFs `e_q'`,
//! `e_d'`, and the AVR regulator state `v_r`. Stator flux algebra supplies
//! two `g` rows per machine; injected power enters the bus balance rows.
//! Governor states and the OXL timer are continuous slow states; the OXL
//! activation flag is discrete.
//!
//! The governor's lead-lag/reheat block is algebraized (its DC gain is 1),
//! which is exact in steady state and matches the bundled parameter sets
//! where the transient gain time constant is zero.

use serde::{Deserialize, Serialize};

use super::oxl::{oxl_output, oxl_timer_rate, OxlState};
use super::{saturate, AvrParams, ColBlock, DeviceContribution, GeneratorParams, OxlParams, RowBlock, TurbineGovernorParams};
use crate::state::PartitionedState;

/// State/row indices assigned to one generator at system build time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenIndex {
    // fast states
    pub delta: usize,
    pub omega: usize,
    pub eq_p: usize,
    pub ed_p: usize,
    pub v_r: Option<usize>,
    // algebraic states
    pub i_d: usize,
    pub i_q: usize,
    pub bus_vm: usize,
    pub bus_va: usize,
    // g rows
    pub row_stator_d: usize,
    pub row_stator_q: usize,
    pub row_bus_p: usize,
    pub row_bus_q: usize,
    // continuous slow states
    pub tg_gov: Option<usize>,
    pub tg_servo: Option<usize>,
    pub oxl_timer: Option<usize>,
    // discrete slow states
    pub oxl_flag: Option<usize>,
}

/// A generator with its controllers, fully wired into the system layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorDevice {
    pub name: String,
    pub bus: usize,
    pub params: GeneratorParams,
    pub avr: Option<AvrParams>,
    pub governor: Option<TurbineGovernorParams>,
    pub oxl: Option<OxlParams>,
    /// Synchronous speed, rad/s.
    pub omega_s: f64,
    /// AVR reference voltage resolved at initialization.
    pub v_ref: f64,
    /// Constant field voltage when no AVR is fitted.
    pub v_f0: f64,
    /// Constant mechanical power when no governor is fitted.
    pub p_m0: f64,
    /// Governor power order (initial dispatch).
    pub p_order: f64,
    pub idx: GenIndex,
}

impl GeneratorDevice {
    pub fn oxl_state(&self, state: &PartitionedState) -> Option<OxlState> {
        let timer = self.idx.oxl_timer?;
        let flag = self.idx.oxl_flag?;
        Some(OxlState {
            timer: state.zc[timer],
            active: state.zd[flag] != 0.0,
        })
    }

    /// Field current in the reciprocal per-unit system.
    pub fn field_current(&self, state: &PartitionedState) -> f64 {
        let p = &self.params;
        state.x[self.idx.eq_p] + (p.x_d - p.x_d_prime) * state.y[self.idx.i_d]
    }

    /// Field voltage applied to the d-axis equation.
    pub fn field_voltage(&self, state: &PartitionedState) -> f64 {
        match (&self.avr, self.idx.v_r) {
            (Some(avr), Some(ivr)) => saturate(state.x[ivr], avr.v_f_min, avr.v_f_max).0,
            _ => self.v_f0,
        }
    }

    /// Mechanical power seen by the swing equation.
    pub fn mechanical_power(&self, state: &PartitionedState) -> f64 {
        match self.idx.tg_servo {
            Some(isv) => state.zc[isv],
            None => self.p_m0,
        }
    }

    fn oxl_signal(&self, state: &PartitionedState) -> f64 {
        match (&self.oxl, self.oxl_state(state)) {
            (Some(p), Some(s)) => oxl_output(p, &s),
            _ => 0.0,
        }
    }

    /// Residual contributions at `state`.
    pub fn contribute_residuals(&self, state: &PartitionedState) -> DeviceContribution {
        let mut out = DeviceContribution::default();
        let p = &self.params;
        let ix = &self.idx;

        let delta = state.x[ix.delta];
        let omega = state.x[ix.omega];
        let eq_p = state.x[ix.eq_p];
        let ed_p = state.x[ix.ed_p];
        let i_d = state.y[ix.i_d];
        let i_q = state.y[ix.i_q];
        let vm = state.y[ix.bus_vm];
        let va = state.y[ix.bus_va];

        let (s, c) = (delta - va).sin_cos();
        let v_d = vm * s;
        let v_q = vm * c;

        // Swing.
        out.f(ix.delta, self.omega_s * (omega - 1.0));
        let t_e = ed_p * i_d + eq_p * i_q + (p.x_q_prime - p.x_d_prime) * i_d * i_q;
        let p_m = self.mechanical_power(state);
        out.f(ix.omega, (p_m - t_e - p.d * (omega - 1.0)) / (2.0 * p.h));

        // Transient EMFs.
        let v_f = self.field_voltage(state);
        out.f(ix.eq_p, (-eq_p - (p.x_d - p.x_d_prime) * i_d + v_f) / p.t_d0_prime);
        out.f(ix.ed_p, (-ed_p + (p.x_q - p.x_q_prime) * i_q) / p.t_q0_prime);

        // AVR regulator.
        if let (Some(avr), Some(ivr)) = (&self.avr, ix.v_r) {
            let v_r = state.x[ivr];
            let v_oxl = self.oxl_signal(state);
            out.f(ivr, (avr.k_a * (self.v_ref - vm - v_oxl) - v_r) / avr.t_a);
        }

        // Stator algebra.
        out.g(ix.row_stator_d, ed_p + p.x_q_prime * i_q - v_d);
        out.g(ix.row_stator_q, eq_p - p.x_d_prime * i_d - v_q);

        // Injection into the bus balance (generation reduces the mismatch).
        let p_inj = v_d * i_d + v_q * i_q;
        let q_inj = v_q * i_d - v_d * i_q;
        out.g(ix.row_bus_p, -p_inj);
        out.g(ix.row_bus_q, -q_inj);

        // Governor.
        if let (Some(tg), Some(igov), Some(isv)) = (&self.governor, ix.tg_gov, ix.tg_servo) {
            let x_gov = state.zc[igov];
            let x_sv = state.zc[isv];
            let p_in_raw = self.p_order + (tg.omega_ref - omega) / tg.r;
            let (p_in, _) = saturate(p_in_raw, tg.p_min, tg.p_max);
            out.hc(igov, (p_in - x_gov) / tg.t_s);
            out.hc(isv, (x_gov - x_sv) / tg.t_c);
        }

        // OXL timer.
        if let (Some(oxl), Some(itimer)) = (&self.oxl, ix.oxl_timer) {
            let i_f = self.field_current(state);
            out.hc(itimer, oxl_timer_rate(oxl, i_f));
        }

        out
    }

    /// Analytic partial derivatives of [`Self::contribute_residuals`] with
    /// respect to (x, y, z_c). Saturated branches differentiate to zero.
    pub fn contribute_jacobian(&self, state: &PartitionedState) -> DeviceContribution {
        let mut out = DeviceContribution::default();
        let p = &self.params;
        let ix = &self.idx;

        let delta = state.x[ix.delta];
        let eq_p = state.x[ix.eq_p];
        let ed_p = state.x[ix.ed_p];
        let i_d = state.y[ix.i_d];
        let i_q = state.y[ix.i_q];
        let vm = state.y[ix.bus_vm];
        let va = state.y[ix.bus_va];

        let (s, c) = (delta - va).sin_cos();

        use ColBlock::*;
        use RowBlock::*;

        // f_delta = omega_s (omega - 1)
        out.jac(F, X, ix.delta, ix.omega, self.omega_s);

        // f_omega = (p_m - t_e - D (omega-1)) / (2H)
        let h2 = 2.0 * p.h;
        out.jac(F, X, ix.omega, ix.omega, -p.d / h2);
        out.jac(F, X, ix.omega, ix.ed_p, -i_d / h2);
        out.jac(F, X, ix.omega, ix.eq_p, -i_q / h2);
        out.jac(F, Y, ix.omega, ix.i_d, -(ed_p + (p.x_q_prime - p.x_d_prime) * i_q) / h2);
        out.jac(F, Y, ix.omega, ix.i_q, -(eq_p + (p.x_q_prime - p.x_d_prime) * i_d) / h2);
        if let Some(isv) = ix.tg_servo {
            out.jac(F, Zc, ix.omega, isv, 1.0 / h2);
        }

        // f_eq' = (-e_q' - (x_d - x_d') i_d + v_f) / T_d0'
        out.jac(F, X, ix.eq_p, ix.eq_p, -1.0 / p.t_d0_prime);
        out.jac(F, Y, ix.eq_p, ix.i_d, -(p.x_d - p.x_d_prime) / p.t_d0_prime);
        if let (Some(avr), Some(ivr)) = (&self.avr, ix.v_r) {
            let (_, interior) = saturate(state.x[ivr], avr.v_f_min, avr.v_f_max);
            if interior {
                out.jac(F, X, ix.eq_p, ivr, 1.0 / p.t_d0_prime);
            }
        }

        // f_ed' = (-e_d' + (x_q - x_q') i_q) / T_q0'
        out.jac(F, X, ix.ed_p, ix.ed_p, -1.0 / p.t_q0_prime);
        out.jac(F, Y, ix.ed_p, ix.i_q, (p.x_q - p.x_q_prime) / p.t_q0_prime);

        // AVR: f_vr = (K_a (v_ref - vm - v_oxl) - v_r) / T_a
        if let (Some(avr), Some(ivr)) = (&self.avr, ix.v_r) {
            out.jac(F, X, ivr, ivr, -1.0 / avr.t_a);
            out.jac(F, Y, ivr, ix.bus_vm, -avr.k_a / avr.t_a);
            if let (Some(oxl), Some(itimer), Some(st)) =
                (&self.oxl, ix.oxl_timer, self.oxl_state(state))
            {
                if st.active {
                    let excess = st.timer - super::oxl::OXL_ACTIVATION_THRESHOLD;
                    if excess > 0.0 && excess < oxl.v_oxl_max {
                        out.jac(F, Zc, ivr, itimer, -avr.k_a / avr.t_a);
                    }
                }
            }
        }

        // g_sd = e_d' + x_q' i_q - vm sin(delta - va)
        out.jac(G, X, ix.row_stator_d, ix.ed_p, 1.0);
        out.jac(G, Y, ix.row_stator_d, ix.i_q, p.x_q_prime);
        out.jac(G, Y, ix.row_stator_d, ix.bus_vm, -s);
        out.jac(G, X, ix.row_stator_d, ix.delta, -vm * c);
        out.jac(G, Y, ix.row_stator_d, ix.bus_va, vm * c);

        // g_sq = e_q' - x_d' i_d - vm cos(delta - va)
        out.jac(G, X, ix.row_stator_q, ix.eq_p, 1.0);
        out.jac(G, Y, ix.row_stator_q, ix.i_d, -p.x_d_prime);
        out.jac(G, Y, ix.row_stator_q, ix.bus_vm, -c);
        out.jac(G, X, ix.row_stator_q, ix.delta, vm * s);
        out.jac(G, Y, ix.row_stator_q, ix.bus_va, -vm * s);

        // Injections: p_inj = vm (s i_d + c i_q), q_inj = vm (c i_d - s i_q),
        // entering the bus rows negated.
        let dp_dvm = s * i_d + c * i_q;
        let dp_dth = vm * (-c * i_d + s * i_q); // wrt bus angle
        let dq_dvm = c * i_d - s * i_q;
        let dq_dth = vm * (s * i_d + c * i_q);
        out.jac(G, Y, ix.row_bus_p, ix.bus_vm, -dp_dvm);
        out.jac(G, Y, ix.row_bus_p, ix.bus_va, -dp_dth);
        out.jac(G, X, ix.row_bus_p, ix.delta, dp_dth); // d/ddelta = -d/dtheta
        out.jac(G, Y, ix.row_bus_p, ix.i_d, -vm * s);
        out.jac(G, Y, ix.row_bus_p, ix.i_q, -vm * c);
        out.jac(G, Y, ix.row_bus_q, ix.bus_vm, -dq_dvm);
        out.jac(G, Y, ix.row_bus_q, ix.bus_va, -dq_dth);
        out.jac(G, X, ix.row_bus_q, ix.delta, dq_dth);
        out.jac(G, Y, ix.row_bus_q, ix.i_d, -vm * c);
        out.jac(G, Y, ix.row_bus_q, ix.i_q, vm * s);

        // Governor.
        if let (Some(tg), Some(igov), Some(isv)) = (&self.governor, ix.tg_gov, ix.tg_servo) {
            let omega = state.x[ix.omega];
            let p_in_raw = self.p_order + (tg.omega_ref - omega) / tg.r;
            let (_, interior) = saturate(p_in_raw, tg.p_min, tg.p_max);
            if interior {
                out.jac(Hc, X, igov, ix.omega, -1.0 / (tg.r * tg.t_s));
            }
            out.jac(Hc, Zc, igov, igov, -1.0 / tg.t_s);
            out.jac(Hc, Zc, isv, igov, 1.0 / tg.t_c);
            out.jac(Hc, Zc, isv, isv, -1.0 / tg.t_c);
        }

        // OXL timer: rate (i_f - lim)+ / T_0 with i_f = e_q' + (x_d - x_d') i_d.
        if let (Some(oxl), Some(itimer)) = (&self.oxl, ix.oxl_timer) {
            if self.field_current(state) > oxl.i_f_lim {
                out.jac(Hc, X, itimer, ix.eq_p, 1.0 / oxl.t_0);
                out.jac(Hc, Y, itimer, ix.i_d, (p.x_d - p.x_d_prime) / oxl.t_0);
            }
        }

        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn governor() -> TurbineGovernorParams {
        TurbineGovernorParams {
            omega_ref: 1.0,
            r: 0.02,
            p_max: 2.0,
            p_min: 0.3,
            t_s: 0.1,
            t_c: 0.45,
            t_3: 0.0,
            t_4: 12.0,
            t_5: 50.0,
        }
    }

    /// Steady-state governor command for a speed deviation, from the droop
    /// definition with input clamping.
    fn droop_steady_state(tg: &TurbineGovernorParams, p_order: f64, omega: f64) -> f64 {
        let raw = p_order + (tg.omega_ref - omega) / tg.r;
        raw.max(tg.p_min).min(tg.p_max)
    }

    #[test]
    fn droop_shifts_command_by_deviation_over_r() {
        let tg = governor();
        // +0.01 pu over-speed with R = 0.02 shifts the command by -0.5 pu.
        let shifted = droop_steady_state(&tg, 1.0, 1.01);
        assert!((shifted - 0.5).abs() < 1e-12);
    }

    #[test]
    fn droop_saturates_at_limits() {
        let tg = governor();
        assert_eq!(droop_steady_state(&tg, 1.0, 1.02), 0.3); // floor
        assert_eq!(droop_steady_state(&tg, 1.0, 0.97), 2.0); // ceiling
    }
}
