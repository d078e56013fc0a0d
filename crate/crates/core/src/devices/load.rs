//! Exponential recovery load.
//!
//! Karlsson-Hill form for the dynamic fraction of the bus load:
//!
//! ```text
//! T_p x_p' = -x_p + P_n (v^alpha_s - v^alpha_t)
//! P_dyn    =  x_p + P_n v^alpha_t
//! ```
//!
//! and dually for reactive power with the beta exponents. `P_n` is the
//! dynamic nominal `k_p * P_0` rescaled at build time so the load draws
//! exactly `k_p * P_0` at the power-flow voltage; the remaining
//! `(1 - k_p) * P_0` stays on the bus as constant-power load. After a
//! voltage step the drawn power jumps along `v^alpha_t` and then recovers
//! toward the static characteristic `P_n v^alpha_s`.

use serde::{Deserialize, Serialize};

use super::{ColBlock, DeviceContribution, ExpRecoveryLoadParams, RowBlock};
use crate::state::PartitionedState;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErlIndex {
    /// Recovery states; in `z_c` normally, in `x` when the device is
    /// configured fast.
    pub x_p: usize,
    pub x_q: usize,
    pub bus_vm: usize,
    pub row_bus_p: usize,
    pub row_bus_q: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpRecoveryLoadDevice {
    pub name: String,
    pub bus: usize,
    pub params: ExpRecoveryLoadParams,
    /// Dynamic nominals scaled to the operating point.
    pub p_nom: f64,
    pub q_nom: f64,
    pub idx: ErlIndex,
}

impl ExpRecoveryLoadDevice {
    fn states(&self, state: &PartitionedState) -> (f64, f64) {
        if self.params.fast {
            (state.x[self.idx.x_p], state.x[self.idx.x_q])
        } else {
            (state.zc[self.idx.x_p], state.zc[self.idx.x_q])
        }
    }

    /// Power drawn by the dynamic fraction at `state`.
    pub fn drawn_power(&self, state: &PartitionedState) -> (f64, f64) {
        let v = state.y[self.idx.bus_vm];
        let (x_p, x_q) = self.states(state);
        let p = x_p + self.p_nom * v.powf(self.params.alpha_t);
        let q = x_q + self.q_nom * v.powf(self.params.beta_t);
        (p, q)
    }

    pub fn contribute_residuals(&self, state: &PartitionedState) -> DeviceContribution {
        let mut out = DeviceContribution::default();
        let pr = &self.params;
        let v = state.y[self.idx.bus_vm];
        let (x_p, x_q) = self.states(state);

        let rate_p = (-x_p + self.p_nom * (v.powf(pr.alpha_s) - v.powf(pr.alpha_t))) / pr.t_p;
        let rate_q = (-x_q + self.q_nom * (v.powf(pr.beta_s) - v.powf(pr.beta_t))) / pr.t_q;
        if pr.fast {
            out.f(self.idx.x_p, rate_p);
            out.f(self.idx.x_q, rate_q);
        } else {
            out.hc(self.idx.x_p, rate_p);
            out.hc(self.idx.x_q, rate_q);
        }

        // Load enters the bus balance with positive sign.
        let (p_dyn, q_dyn) = self.drawn_power(state);
        out.g(self.idx.row_bus_p, p_dyn);
        out.g(self.idx.row_bus_q, q_dyn);
        out
    }

    pub fn contribute_jacobian(&self, state: &PartitionedState) -> DeviceContribution {
        let mut out = DeviceContribution::default();
        let pr = &self.params;
        let v = state.y[self.idx.bus_vm];

        use ColBlock::*;
        use RowBlock::*;
        let state_col = if pr.fast { X } else { Zc };
        let rate_row = if pr.fast { F } else { Hc };

        let dsdv_p =
            self.p_nom * (pr.alpha_s * v.powf(pr.alpha_s - 1.0) - pr.alpha_t * v.powf(pr.alpha_t - 1.0));
        let dsdv_q =
            self.q_nom * (pr.beta_s * v.powf(pr.beta_s - 1.0) - pr.beta_t * v.powf(pr.beta_t - 1.0));

        out.jac(rate_row, state_col, self.idx.x_p, self.idx.x_p, -1.0 / pr.t_p);
        out.jac(rate_row, Y, self.idx.x_p, self.idx.bus_vm, dsdv_p / pr.t_p);
        out.jac(rate_row, state_col, self.idx.x_q, self.idx.x_q, -1.0 / pr.t_q);
        out.jac(rate_row, Y, self.idx.x_q, self.idx.bus_vm, dsdv_q / pr.t_q);

        out.jac(G, state_col, self.idx.row_bus_p, self.idx.x_p, 1.0);
        out.jac(
            G,
            Y,
            self.idx.row_bus_p,
            self.idx.bus_vm,
            self.p_nom * pr.alpha_t * v.powf(pr.alpha_t - 1.0),
        );
        out.jac(G, state_col, self.idx.row_bus_q, self.idx.x_q, 1.0);
        out.jac(
            G,
            Y,
            self.idx.row_bus_q,
            self.idx.bus_vm,
            self.q_nom * pr.beta_t * v.powf(pr.beta_t - 1.0),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{PartitionLayout, PartitionedState};
    use approx::assert_relative_eq;

    fn device() -> ExpRecoveryLoadDevice {
        ExpRecoveryLoadDevice {
            name: "erl".into(),
            bus: 0,
            params: ExpRecoveryLoadParams {
                p_0: 1.0,
                q_0: 0.5,
                k_p: 1.0,
                k_q: 1.0,
                t_p: 1.0,
                t_q: 1.0,
                alpha_s: 1.0,
                alpha_t: 10.0,
                beta_s: 2.0,
                beta_t: 20.0,
                fast: false,
            },
            p_nom: 1.0,
            q_nom: 0.5,
            idx: ErlIndex {
                x_p: 0,
                x_q: 1,
                bus_vm: 0,
                row_bus_p: 0,
                row_bus_q: 1,
            },
        }
    }

    fn state_at(v: f64, x_p: f64, x_q: f64) -> PartitionedState {
        let layout = PartitionLayout {
            zc_names: vec!["xp".into(), "xq".into()],
            zd_names: vec![],
            x_names: vec![],
            y_names: vec!["vm".into()],
            n_g: 2,
        };
        let mut s = PartitionedState::zeros(&layout, 1.0);
        s.zc[0] = x_p;
        s.zc[1] = x_q;
        s.y[0] = v;
        s
    }

    #[test]
    fn equilibrium_at_nominal_voltage() {
        // At v = 1 the internal states sit at their nominal set-points
        // (zero for the Karlsson-Hill recovery state) and residuals vanish.
        let d = device();
        let s = state_at(1.0, 0.0, 0.0);
        let c = d.contribute_residuals(&s);
        for (_, r) in &c.h_c_entries {
            assert!(r.abs() <= 1e-12);
        }
        let (p, q) = d.drawn_power(&s);
        assert_relative_eq!(p, 1.0);
        assert_relative_eq!(q, 0.5);
    }

    #[test]
    fn voltage_step_response_matches_closed_form() {
        // v stepped 1.0 -> 0.95 with alpha_s = 1, alpha_t = 10: the drawn
        // active power jumps to P_n * 0.95^10 ~ 0.59874 P_n and the state
        // then drives recovery toward P_n * 0.95.
        let d = device();
        let s = state_at(0.95, 0.0, 0.0);
        let (p, _) = d.drawn_power(&s);
        assert_relative_eq!(p, 0.95_f64.powi(10), epsilon = 1e-12);
        assert_relative_eq!(p, 0.598_736_939_238_378_6, epsilon = 1e-12);

        // Recovery target: steady state of x_p at v = 0.95.
        let xp_ss = 0.95_f64.powi(1) - 0.95_f64.powi(10);
        let s_ss = state_at(0.95, xp_ss, 0.0);
        let c = d.contribute_residuals(&s_ss);
        assert!(c.h_c_entries[0].1.abs() < 1e-12);
        let (p_ss, _) = d.drawn_power(&s_ss);
        assert_relative_eq!(p_ss, 0.95, epsilon = 1e-12);
    }

    #[test]
    fn recovery_rate_sign_drives_toward_static_characteristic() {
        let d = device();
        let s = state_at(0.95, 0.0, 0.0);
        let c = d.contribute_residuals(&s);
        // Below-nominal voltage: state must rise toward the static curve.
        assert!(c.h_c_entries[0].1 > 0.0);
    }
}
