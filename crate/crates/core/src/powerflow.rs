//! Newton-Raphson power flow.
//!
//! Supplies the pre-fault operating point every dynamic run starts from.
//! Flat start (1.0 at angle 0) with slack/PV magnitudes pinned to their
//! setpoints; no reactive limits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_admittance, AdmittanceMatrix, BusKind, Network};

/// Scheduled active power and (for PV buses) the voltage setpoint source.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSchedule {
    pub bus: String,
    /// Scheduled active power injection, p.u. Ignored for the slack bus.
    pub p_set: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub voltage_magnitudes: Vec<f64>,
    pub voltage_angles: Vec<f64>,
    /// Net active injection per bus at the solution (generation minus load).
    pub p_injection: Vec<f64>,
    pub q_injection: Vec<f64>,
    /// Generator output per bus: net injection plus the bus load.
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
    pub iteration_count: usize,
    pub max_mismatch: f64,
}

/// Active/reactive power flowing out of bus `i` into the network.
pub fn bus_power(y: &AdmittanceMatrix, vm: &[f64], va: &[f64], i: usize) -> (f64, f64) {
    let n = y.dimension();
    let mut p = 0.0;
    let mut q = 0.0;
    for j in 0..n {
        let yij = y.get(i, j);
        if yij.re == 0.0 && yij.im == 0.0 {
            continue;
        }
        let dth = va[i] - va[j];
        let (s, c) = dth.sin_cos();
        p += vm[j] * (yij.re * c + yij.im * s);
        q += vm[j] * (yij.re * s - yij.im * c);
    }
    (vm[i] * p, vm[i] * q)
}

/// Newton-Raphson solve of the power mismatch equations.
pub fn solve_power_flow(
    network: &Network,
    schedules: &[GenSchedule],
    tolerance: f64,
    max_iterations: usize,
) -> Result<PowerFlowSolution> {
    let n = network.n_buses();
    let slack_count = network
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .count();
    if slack_count != 1 {
        return Err(Error::Structure(format!(
            "expected exactly one slack bus, found {slack_count}"
        )));
    }
    let y = build_admittance(network)?;

    // Scheduled injections: generation minus load, p.u.
    let mut p_sched = vec![0.0; n];
    let mut q_sched = vec![0.0; n];
    for (i, bus) in network.buses.iter().enumerate() {
        p_sched[i] -= bus.load_p;
        q_sched[i] -= bus.load_q;
    }
    for g in schedules {
        let i = network
            .bus_index(&g.bus)
            .ok_or_else(|| Error::Structure(format!("schedule references unknown bus {}", g.bus)))?;
        p_sched[i] += g.p_set;
    }

    // Flat start; slack and PV magnitudes pinned.
    let mut vm: Vec<f64> = network
        .buses
        .iter()
        .map(|b| match b.kind {
            BusKind::Slack | BusKind::Pv => b.base_voltage_magnitude,
            BusKind::Pq => 1.0,
        })
        .collect();
    let mut va = vec![0.0; n];

    // Unknown ordering: angles at non-slack buses, then magnitudes at PQ buses.
    let ang_buses: Vec<usize> = (0..n)
        .filter(|&i| network.buses[i].kind != BusKind::Slack)
        .collect();
    let mag_buses: Vec<usize> = (0..n)
        .filter(|&i| network.buses[i].kind == BusKind::Pq)
        .collect();
    let n_unknowns = ang_buses.len() + mag_buses.len();

    let mut max_mismatch = f64::INFINITY;
    for iter in 0..max_iterations {
        let mut pcalc = vec![0.0; n];
        let mut qcalc = vec![0.0; n];
        for i in 0..n {
            let (p, q) = bus_power(&y, &vm, &va, i);
            pcalc[i] = p;
            qcalc[i] = q;
        }

        let mut mism = DVector::zeros(n_unknowns);
        for (k, &i) in ang_buses.iter().enumerate() {
            mism[k] = p_sched[i] - pcalc[i];
        }
        for (k, &i) in mag_buses.iter().enumerate() {
            mism[ang_buses.len() + k] = q_sched[i] - qcalc[i];
        }
        max_mismatch = mism.amax();
        if max_mismatch <= tolerance {
            let mut p_injection = vec![0.0; n];
            let mut q_injection = vec![0.0; n];
            let mut gen_p = vec![0.0; n];
            let mut gen_q = vec![0.0; n];
            for i in 0..n {
                p_injection[i] = pcalc[i];
                q_injection[i] = qcalc[i];
                gen_p[i] = pcalc[i] + network.buses[i].load_p;
                gen_q[i] = qcalc[i] + network.buses[i].load_q;
            }
            return Ok(PowerFlowSolution {
                voltage_magnitudes: vm,
                voltage_angles: va,
                p_injection,
                q_injection,
                gen_p,
                gen_q,
                iteration_count: iter,
                max_mismatch,
            });
        }

        // Jacobian in the same unknown ordering.
        let mut jac = DMatrix::zeros(n_unknowns, n_unknowns);
        for (r, &i) in ang_buses.iter().enumerate() {
            for (c, &j) in ang_buses.iter().enumerate() {
                let yij = y.get(i, j);
                jac[(r, c)] = if i == j {
                    -qcalc[i] - yij.im * vm[i] * vm[i]
                } else {
                    let dth = va[i] - va[j];
                    vm[i] * vm[j] * (yij.re * dth.sin() - yij.im * dth.cos())
                };
            }
            for (c, &j) in mag_buses.iter().enumerate() {
                let yij = y.get(i, j);
                jac[(r, ang_buses.len() + c)] = if i == j {
                    pcalc[i] / vm[i] + yij.re * vm[i]
                } else {
                    let dth = va[i] - va[j];
                    vm[i] * (yij.re * dth.cos() + yij.im * dth.sin())
                };
            }
        }
        for (r, &i) in mag_buses.iter().enumerate() {
            for (c, &j) in ang_buses.iter().enumerate() {
                let yij = y.get(i, j);
                jac[(ang_buses.len() + r, c)] = if i == j {
                    pcalc[i] - yij.re * vm[i] * vm[i]
                } else {
                    let dth = va[i] - va[j];
                    -vm[i] * vm[j] * (yij.re * dth.cos() + yij.im * dth.sin())
                };
            }
            for (c, &j) in mag_buses.iter().enumerate() {
                let yij = y.get(i, j);
                jac[(ang_buses.len() + r, ang_buses.len() + c)] = if i == j {
                    qcalc[i] / vm[i] - yij.im * vm[i]
                } else {
                    let dth = va[i] - va[j];
                    vm[i] * (yij.re * dth.sin() - yij.im * dth.cos())
                };
            }
        }

        let lu = jac.lu();
        let dx = lu
            .solve(&mism)
            .ok_or(Error::PowerFlowSingular { iteration: iter })?;
        for (k, &i) in ang_buses.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in mag_buses.iter().enumerate() {
            vm[i] += dx[ang_buses.len() + k];
        }
    }

    Err(Error::PowerFlowNonConvergence {
        iterations: max_iterations,
        mismatch: max_mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus};
    use approx::assert_relative_eq;

    fn bus(id: &str, kind: BusKind, v: f64, p: f64, q: f64) -> Bus {
        Bus {
            id: id.into(),
            kind,
            base_voltage_magnitude: v,
            shunt_conductance: 0.0,
            shunt_susceptance: 0.0,
            load_p: p,
            load_q: q,
        }
    }

    fn line(id: &str, f: &str, t: &str, r: f64, x: f64) -> Branch {
        Branch {
            id: id.into(),
            from_bus: f.into(),
            to_bus: t.into(),
            series_resistance: r,
            series_reactance: x,
            charging_susceptance: 0.0,
            tap_ratio: 1.0,
            in_service: true,
        }
    }

    #[test]
    fn no_flow_network_stays_flat() {
        let net = Network {
            buses: vec![
                bus("1", BusKind::Slack, 1.0, 0.0, 0.0),
                bus("2", BusKind::Pq, 1.0, 0.0, 0.0),
            ],
            branches: vec![line("l", "1", "2", 0.0, 0.1)],
        };
        let sol = solve_power_flow(&net, &[], 1e-10, 20).unwrap();
        assert_relative_eq!(sol.voltage_magnitudes[1], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.voltage_angles[1], 0.0, epsilon = 1e-10);
        assert!(sol.max_mismatch <= 1e-10);
    }

    #[test]
    fn two_bus_lossless_closed_form() {
        // PV bus holding 1.0 pu with 0.5 pu load over x = 0.1:
        // P = (V1 V2 / x) sin(d) -> d = asin(0.05)
        let net = Network {
            buses: vec![
                bus("1", BusKind::Slack, 1.0, 0.0, 0.0),
                bus("2", BusKind::Pv, 1.0, 0.5, 0.0),
            ],
            branches: vec![line("l", "1", "2", 0.0, 0.1)],
        };
        let sol = solve_power_flow(&net, &[], 1e-12, 30).unwrap();
        let expected = (0.05_f64).asin();
        assert_relative_eq!(sol.voltage_angles[1], -expected, epsilon = 1e-9);
        assert_relative_eq!(sol.voltage_magnitudes[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn solution_satisfies_mismatch_equations() {
        let net = Network {
            buses: vec![
                bus("1", BusKind::Slack, 1.02, 0.0, 0.0),
                bus("2", BusKind::Pq, 1.0, 0.4, 0.2),
                bus("3", BusKind::Pq, 1.0, 0.3, 0.1),
            ],
            branches: vec![
                line("a", "1", "2", 0.02, 0.2),
                line("b", "2", "3", 0.02, 0.25),
                line("c", "1", "3", 0.01, 0.15),
            ],
        };
        let sol = solve_power_flow(&net, &[], 1e-10, 30).unwrap();
        let y = build_admittance(&net).unwrap();
        for i in 1..3 {
            let (p, q) = bus_power(&y, &sol.voltage_magnitudes, &sol.voltage_angles, i);
            assert_relative_eq!(p, -net.buses[i].load_p, epsilon = 1e-9);
            assert_relative_eq!(q, -net.buses[i].load_q, epsilon = 1e-9);
        }
    }

    #[test]
    fn non_convergence_reports_mismatch() {
        // Impossible loading: 10 pu over a weak line.
        let net = Network {
            buses: vec![
                bus("1", BusKind::Slack, 1.0, 0.0, 0.0),
                bus("2", BusKind::Pq, 1.0, 10.0, 5.0),
            ],
            branches: vec![line("l", "1", "2", 0.0, 0.5)],
        };
        match solve_power_flow(&net, &[], 1e-8, 15) {
            Err(Error::PowerFlowNonConvergence { mismatch, .. }) => assert!(mismatch.is_finite()),
            Err(Error::PowerFlowSingular { .. }) => {}
            other => panic!("expected failure report, got {other:?}"),
        }
    }
}
