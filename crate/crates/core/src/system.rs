//! A complete power system: network, devices and the partitioned state
//! layout, with residual/Jacobian assembly and the discrete-event maps.
//!
//! The slack bus is tied to an infinite bus: its power-balance rows are
//! replaced by voltage and angle pins. This breaks the rotational symmetry
//! of the angle variables so equilibria are hyperbolic, and absorbs the
//! post-contingency loss change so a true SEP with nominal speed exists.
//! Machines attached to the slack bus swing against the pinned phasor and
//! their injections flow into the infinite bus.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dae::{JacobianBundle, ResidualVector};
use crate::devices::generator::{GenIndex, GeneratorDevice};
use crate::devices::load::{ErlIndex, ExpRecoveryLoadDevice};
use crate::devices::ltc::{ltc_discrete_map, LtcState};
use crate::devices::oxl::oxl_should_activate;
use crate::devices::{
    AvrParams, ColBlock, ExpRecoveryLoadParams, GeneratorParams, LtcParams, OxlParams, RowBlock,
    TurbineGovernorParams,
};
use crate::error::{Error, Result};
use crate::grid::{build_admittance_with_taps, AdmittanceMatrix, BusKind, ContingencyEvent, Network};
use crate::model::{DiscreteUpdate, DynamicModel, EventKind};
use crate::powerflow::PowerFlowSolution;
use crate::state::{LayoutBuilder, PartitionLayout, PartitionedState};

/// Tap-changing transformer wired into the layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LtcDevice {
    pub name: String,
    /// Branch whose tap the changer drives.
    pub branch: usize,
    /// Bus whose voltage is regulated (the branch's `to` side).
    pub controlled_bus: usize,
    pub params: LtcParams,
    /// zd slots: tap ratio, excursion anchor (-1 when unarmed), move count.
    pub zd_tap: usize,
    pub zd_anchor: usize,
    pub zd_moves: usize,
    /// y slot of the controlled bus voltage magnitude.
    pub y_vm: usize,
}

impl LtcDevice {
    pub fn state_from(&self, zd: &DVector<f64>) -> LtcState {
        let anchor = zd[self.zd_anchor];
        LtcState {
            tap: zd[self.zd_tap],
            armed_since: if anchor < 0.0 { None } else { Some(anchor) },
            moves: zd[self.zd_moves] as u32,
        }
    }

    pub fn state_into(&self, s: &LtcState, zd: &mut DVector<f64>) {
        zd[self.zd_tap] = s.tap;
        zd[self.zd_anchor] = s.armed_since.unwrap_or(-1.0);
        zd[self.zd_moves] = s.moves as f64;
    }
}

/// Device parameter bundle for one generator, as read from a case file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub name: String,
    pub bus: String,
    /// Scheduled active power, p.u. (ignored at the slack bus).
    #[serde(default)]
    pub p_set: f64,
    pub params: GeneratorParams,
    #[serde(default)]
    pub avr: Option<AvrParams>,
    #[serde(default)]
    pub governor: Option<TurbineGovernorParams>,
    #[serde(default)]
    pub oxl: Option<OxlParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadSpec {
    pub name: String,
    pub bus: String,
    pub params: ExpRecoveryLoadParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LtcSpec {
    pub name: String,
    pub branch: String,
    pub params: LtcParams,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DeviceSet {
    #[serde(default)]
    pub generators: Vec<GeneratorSpec>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub ltcs: Vec<LtcSpec>,
}

#[derive(Debug, Clone)]
pub struct PowerSystem {
    pub name: String,
    pub network: Network,
    pub frequency_hz: f64,
    pub generators: Vec<GeneratorDevice>,
    pub loads: Vec<ExpRecoveryLoadDevice>,
    pub ltcs: Vec<LtcDevice>,
    layout: PartitionLayout,
    g_names: Vec<String>,
    /// Constant-power load per bus after the dynamic fractions were removed.
    static_p: Vec<f64>,
    static_q: Vec<f64>,
    /// Constant injections standing in for generation without a machine model.
    fixed_p: Vec<f64>,
    fixed_q: Vec<f64>,
    slack: usize,
    slack_vm_pin: f64,
    slack_va_pin: f64,
    epsilon: f64,
    /// Branch tap ratios at the initialization point.
    init_tap: Vec<f64>,
}

/// Back-solved equilibrium of one machine at its bus boundary conditions.
struct MachineInit {
    delta: f64,
    eq_p: f64,
    ed_p: f64,
    i_d: f64,
    i_q: f64,
    v_f: f64,
    t_e: f64,
}

fn machine_equilibrium(p: &GeneratorParams, vm: f64, va: f64, p_gen: f64, q_gen: f64) -> MachineInit {
    let v = Complex64::from_polar(vm, va);
    let s = Complex64::new(p_gen, q_gen);
    let i = (s / v).conj();
    let e = v + Complex64::new(0.0, p.x_q) * i;
    let delta = e.arg();
    let rot = Complex64::from_polar(1.0, -(delta - std::f64::consts::FRAC_PI_2));
    let idq = i * rot;
    let vdq = v * rot;
    let (i_d, i_q) = (idq.re, idq.im);
    let (v_d, v_q) = (vdq.re, vdq.im);
    let eq_p = v_q + p.x_d_prime * i_d;
    let ed_p = v_d - p.x_q_prime * i_q;
    let v_f = eq_p + (p.x_d - p.x_d_prime) * i_d;
    let t_e = ed_p * i_d + eq_p * i_q + (p.x_q_prime - p.x_d_prime) * i_d * i_q;
    MachineInit {
        delta,
        eq_p,
        ed_p,
        i_d,
        i_q,
        v_f,
        t_e,
    }
}

impl PowerSystem {
    /// Wire devices into a layout and resolve their setpoints against the
    /// power-flow solution.
    pub fn build(
        name: &str,
        network: Network,
        devices: &DeviceSet,
        pf: &PowerFlowSolution,
        frequency_hz: f64,
    ) -> Result<Self> {
        let n = network.n_buses();
        let slack = network
            .buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .ok_or_else(|| Error::Structure("no slack bus".into()))?;

        let mut lb = LayoutBuilder::new();
        let mut g_names = Vec::new();

        // Bus algebraic variables and balance rows, in bus order.
        for (i, bus) in network.buses.iter().enumerate() {
            lb.add_y(format!("y.bus{}.vm", bus.id));
            lb.add_y(format!("y.bus{}.va", bus.id));
            lb.add_g_row();
            lb.add_g_row();
            if i == slack {
                g_names.push(format!("g.bus{}.va_pin", bus.id));
                g_names.push(format!("g.bus{}.vm_pin", bus.id));
            } else {
                g_names.push(format!("g.bus{}.P", bus.id));
                g_names.push(format!("g.bus{}.Q", bus.id));
            }
        }

        let omega_s = 2.0 * std::f64::consts::PI * frequency_hz;
        let mut max_tc: f64 = 1.0;

        let mut generators = Vec::new();
        for spec in &devices.generators {
            let bus = network.bus_index(&spec.bus).ok_or_else(|| {
                Error::Structure(format!("generator {} references unknown bus {}", spec.name, spec.bus))
            })?;
            if generators.iter().any(|g: &GeneratorDevice| g.bus == bus) {
                return Err(Error::Structure(format!(
                    "multiple machines at bus {}: unsupported",
                    spec.bus
                )));
            }
            let at_slack = bus == slack;

            let delta = lb.add_x(format!("x.{}.delta", spec.name));
            let omega = lb.add_x(format!("x.{}.omega", spec.name));
            let eq_p = lb.add_x(format!("x.{}.eq_p", spec.name));
            let ed_p = lb.add_x(format!("x.{}.ed_p", spec.name));
            let v_r = spec
                .avr
                .as_ref()
                .map(|_| lb.add_x(format!("x.{}.v_r", spec.name)));
            let i_d = lb.add_y(format!("y.{}.i_d", spec.name));
            let i_q = lb.add_y(format!("y.{}.i_q", spec.name));
            let row_stator_d = lb.add_g_row();
            g_names.push(format!("g.{}.stator_d", spec.name));
            let row_stator_q = lb.add_g_row();
            g_names.push(format!("g.{}.stator_q", spec.name));

            let (tg_gov, tg_servo) = match &spec.governor {
                Some(_) => (
                    Some(lb.add_zc(format!("zc.{}.tg_gov", spec.name))),
                    Some(lb.add_zc(format!("zc.{}.tg_servo", spec.name))),
                ),
                None => (None, None),
            };
            // i_f_lim = 0 means the limiter is disabled for this unit.
            let oxl_enabled = spec.oxl.as_ref().is_some_and(|o| o.i_f_lim > 0.0);
            let (oxl_timer, oxl_flag) = if oxl_enabled {
                (
                    Some(lb.add_zc(format!("zc.{}.oxl_timer", spec.name))),
                    Some(lb.add_zd(format!("zd.{}.oxl_active", spec.name))),
                )
            } else {
                (None, None)
            };

            let p = &spec.params;
            max_tc = max_tc.max(p.t_d0_prime).max(p.t_q0_prime);
            if let Some(avr) = &spec.avr {
                max_tc = max_tc.max(avr.t_a);
            }
            if let Some(tg) = &spec.governor {
                max_tc = max_tc.max(tg.t_s).max(tg.t_c);
            }
            if oxl_enabled {
                max_tc = max_tc.max(spec.oxl.as_ref().unwrap().t_0);
            }

            let init = machine_equilibrium(
                p,
                pf.voltage_magnitudes[bus],
                pf.voltage_angles[bus],
                pf.gen_p[bus],
                pf.gen_q[bus],
            );

            let v_ref = match &spec.avr {
                Some(avr) => match avr.v_ref {
                    Some(given) => given,
                    None => pf.voltage_magnitudes[bus] + init.v_f / avr.k_a,
                },
                None => 0.0,
            };
            if let Some(avr) = &spec.avr {
                if init.v_f < avr.v_f_min || init.v_f > avr.v_f_max {
                    return Err(Error::DeviceInit {
                        device: spec.name.clone(),
                        reason: format!(
                            "required field voltage {:.4} outside AVR limits [{}, {}]",
                            init.v_f, avr.v_f_min, avr.v_f_max
                        ),
                    });
                }
            }
            if oxl_enabled {
                let oxl = spec.oxl.as_ref().unwrap();
                let i_f0 = init.eq_p + (p.x_d - p.x_d_prime) * init.i_d;
                if i_f0 > oxl.i_f_lim {
                    return Err(Error::DeviceInit {
                        device: spec.name.clone(),
                        reason: format!(
                            "field current {:.4} above limit {:.4} at t=0",
                            i_f0, oxl.i_f_lim
                        ),
                    });
                }
            }
            if let Some(tg) = &spec.governor {
                if init.t_e > tg.p_max || init.t_e < tg.p_min {
                    return Err(Error::DeviceInit {
                        device: spec.name.clone(),
                        reason: format!(
                            "initial mechanical power {:.4} outside governor limits [{}, {}]",
                            init.t_e, tg.p_min, tg.p_max
                        ),
                    });
                }
            }

            generators.push(GeneratorDevice {
                name: spec.name.clone(),
                bus,
                params: spec.params.clone(),
                avr: spec.avr.clone(),
                governor: spec.governor.clone(),
                oxl: if oxl_enabled { spec.oxl.clone() } else { None },
                omega_s,
                v_ref,
                v_f0: init.v_f,
                p_m0: init.t_e,
                p_order: init.t_e,
                idx: GenIndex {
                    delta,
                    omega,
                    eq_p,
                    ed_p,
                    v_r,
                    i_d,
                    i_q,
                    bus_vm: 2 * bus,
                    bus_va: 2 * bus + 1,
                    row_stator_d,
                    row_stator_q,
                    // Injections at the slack bus flow into the infinite bus
                    // and are dropped from the (pinned) balance rows.
                    row_bus_p: if at_slack { usize::MAX } else { 2 * bus },
                    row_bus_q: if at_slack { usize::MAX } else { 2 * bus + 1 },
                    tg_gov,
                    tg_servo,
                    oxl_timer,
                    oxl_flag,
                },
            });
        }

        let mut static_p: Vec<f64> = network.buses.iter().map(|b| b.load_p).collect();
        let mut static_q: Vec<f64> = network.buses.iter().map(|b| b.load_q).collect();

        let mut loads = Vec::new();
        for spec in &devices.loads {
            let bus = network.bus_index(&spec.bus).ok_or_else(|| {
                Error::Structure(format!("load {} references unknown bus {}", spec.name, spec.bus))
            })?;
            if bus == slack {
                return Err(Error::Structure(format!(
                    "dynamic load {} cannot sit on the slack bus",
                    spec.name
                )));
            }
            let pr = &spec.params;
            max_tc = max_tc.max(pr.t_p).max(pr.t_q);
            let (x_p, x_q) = if pr.fast {
                (
                    lb.add_x(format!("x.{}.x_p", spec.name)),
                    lb.add_x(format!("x.{}.x_q", spec.name)),
                )
            } else {
                (
                    lb.add_zc(format!("zc.{}.x_p", spec.name)),
                    lb.add_zc(format!("zc.{}.x_q", spec.name)),
                )
            };
            let v0 = pf.voltage_magnitudes[bus];
            // Scale the dynamic nominal so the drawn power matches the
            // power-flow load exactly at the operating point.
            let p_nom = pr.k_p * pr.p_0 / v0.powf(pr.alpha_s);
            let q_nom = pr.k_q * pr.q_0 / v0.powf(pr.beta_s);
            static_p[bus] -= pr.k_p * pr.p_0;
            static_q[bus] -= pr.k_q * pr.q_0;
            loads.push(ExpRecoveryLoadDevice {
                name: spec.name.clone(),
                bus,
                params: spec.params.clone(),
                p_nom,
                q_nom,
                idx: ErlIndex {
                    x_p,
                    x_q,
                    bus_vm: 2 * bus,
                    row_bus_p: 2 * bus,
                    row_bus_q: 2 * bus + 1,
                },
            });
        }

        let mut ltcs = Vec::new();
        for spec in &devices.ltcs {
            let branch = network.branch_index(&spec.branch).ok_or_else(|| {
                Error::Structure(format!("ltc {} references unknown branch {}", spec.name, spec.branch))
            })?;
            let controlled_bus = network
                .bus_index(&network.branches[branch].to_bus)
                .expect("branch endpoints validated by admittance assembly");
            let zd_tap = lb.add_zd(format!("zd.{}.tap", spec.name));
            let zd_anchor = lb.add_zd(format!("zd.{}.timer_anchor", spec.name));
            let zd_moves = lb.add_zd(format!("zd.{}.moves", spec.name));
            ltcs.push(LtcDevice {
                name: spec.name.clone(),
                branch,
                controlled_bus,
                params: spec.params.clone(),
                zd_tap,
                zd_anchor,
                zd_moves,
                y_vm: 2 * controlled_bus,
            });
        }

        // Buses with scheduled generation but no machine keep their
        // power-flow injection as a constant.
        let mut fixed_p = vec![0.0; n];
        let mut fixed_q = vec![0.0; n];
        for i in 0..n {
            if i == slack {
                continue;
            }
            if generators.iter().any(|g| g.bus == i) {
                continue;
            }
            if network.buses[i].kind != BusKind::Pq {
                fixed_p[i] = pf.gen_p[i];
                fixed_q[i] = pf.gen_q[i];
            }
        }

        let layout = lb.finish();
        let init_tap: Vec<f64> = network.branches.iter().map(|b| b.tap_ratio).collect();
        Ok(Self {
            name: name.to_string(),
            network,
            frequency_hz,
            generators,
            loads,
            ltcs,
            layout,
            g_names,
            static_p,
            static_q,
            fixed_p,
            fixed_q,
            slack,
            slack_vm_pin: pf.voltage_magnitudes[slack],
            slack_va_pin: pf.voltage_angles[slack],
            epsilon: 1.0 / max_tc,
            init_tap,
        })
    }

    pub fn slack_bus(&self) -> usize {
        self.slack
    }

    /// Admittance with LTC taps taken from `zd`.
    pub fn admittance_for(&self, zd: &DVector<f64>) -> Result<AdmittanceMatrix> {
        let taps: Vec<(usize, f64)> = self
            .ltcs
            .iter()
            .map(|l| (l.branch, zd[l.zd_tap]))
            .collect();
        build_admittance_with_taps(&self.network, &taps)
    }

    /// Swap in a modified network (post-contingency); devices and layout
    /// are untouched.
    pub fn with_network(&self, network: Network) -> Self {
        let mut sys = self.clone();
        sys.network = network;
        sys
    }

    /// Indices of bus voltage-magnitude variables in `y`, bus order.
    pub fn bus_vm_indices(&self) -> Vec<usize> {
        (0..self.network.n_buses()).map(|i| 2 * i).collect()
    }
}

/// Back-solve every device's internal states at the power-flow point so that
/// all residuals vanish; discrete states start at their nominal values.
pub fn initialize_dynamic_state(sys: &PowerSystem, pf: &PowerFlowSolution) -> Result<PartitionedState> {
    let layout = sys.layout.clone();
    let mut s = PartitionedState::zeros(&layout, sys.epsilon);

    for (i, _) in sys.network.buses.iter().enumerate() {
        s.y[2 * i] = pf.voltage_magnitudes[i];
        s.y[2 * i + 1] = pf.voltage_angles[i];
    }

    for gen in &sys.generators {
        let bus = gen.bus;
        let init = machine_equilibrium(
            &gen.params,
            pf.voltage_magnitudes[bus],
            pf.voltage_angles[bus],
            pf.gen_p[bus],
            pf.gen_q[bus],
        );
        s.x[gen.idx.delta] = init.delta;
        s.x[gen.idx.omega] = 1.0;
        s.x[gen.idx.eq_p] = init.eq_p;
        s.x[gen.idx.ed_p] = init.ed_p;
        if let Some(ivr) = gen.idx.v_r {
            s.x[ivr] = init.v_f;
        }
        s.y[gen.idx.i_d] = init.i_d;
        s.y[gen.idx.i_q] = init.i_q;
        if let (Some(igov), Some(isv)) = (gen.idx.tg_gov, gen.idx.tg_servo) {
            s.zc[igov] = gen.p_order;
            s.zc[isv] = gen.p_order;
        }
        if let Some(itimer) = gen.idx.oxl_timer {
            s.zc[itimer] = 0.0;
        }
        if let Some(iflag) = gen.idx.oxl_flag {
            s.zd[iflag] = 0.0;
        }
    }

    for load in &sys.loads {
        let v0 = pf.voltage_magnitudes[load.bus];
        let pr = &load.params;
        let xp0 = load.p_nom * (v0.powf(pr.alpha_s) - v0.powf(pr.alpha_t));
        let xq0 = load.q_nom * (v0.powf(pr.beta_s) - v0.powf(pr.beta_t));
        if pr.fast {
            s.x[load.idx.x_p] = xp0;
            s.x[load.idx.x_q] = xq0;
        } else {
            s.zc[load.idx.x_p] = xp0;
            s.zc[load.idx.x_q] = xq0;
        }
    }

    for ltc in &sys.ltcs {
        let tap0 = sys.init_tap[ltc.branch];
        ltc.state_into(&LtcState::at_tap(tap0), &mut s.zd);
    }

    Ok(s)
}

impl DynamicModel for PowerSystem {
    fn name(&self) -> &str {
        &self.name
    }

    fn layout(&self) -> &PartitionLayout {
        &self.layout
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn residuals(&self, state: &PartitionedState) -> Result<ResidualVector> {
        crate::dae::assemble_residuals(self, state)
    }

    fn jacobian(&self, state: &PartitionedState) -> Result<JacobianBundle> {
        crate::dae::assemble_jacobian(self, state)
    }

    fn discrete_update(&self, state: &PartitionedState, tau: f64) -> DiscreteUpdate {
        let mut zd = state.zd.clone();
        let mut records = Vec::new();
        let mut dynamics_changed = false;

        for gen in &self.generators {
            if let (Some(_), Some(iflag), Some(oxl_state)) =
                (&gen.oxl, gen.idx.oxl_flag, gen.oxl_state(state))
            {
                if oxl_should_activate(&oxl_state) {
                    zd[iflag] = 1.0;
                    dynamics_changed = true;
                    records.push((
                        EventKind::OxlActivation,
                        format!("oxl {} activated (timer {:.4})", gen.name, oxl_state.timer),
                    ));
                }
            }
        }

        for ltc in &self.ltcs {
            let before = ltc.state_from(&state.zd);
            let v = state.y[ltc.y_vm];
            let step = ltc_discrete_map(&ltc.params, before, v, tau);
            ltc.state_into(&step.state, &mut zd);
            if step.changed {
                dynamics_changed = true;
                records.push((
                    EventKind::LtcTap,
                    format!(
                        "ltc {} tap {:.4} -> {:.4} (v {:.4})",
                        ltc.name, before.tap, step.state.tap, v
                    ),
                ));
            } else if step.state.armed_since != before.armed_since
                || step.state.moves != before.moves
            {
                records.push((
                    EventKind::LtcTimer,
                    format!("ltc {} timer update (v {:.4})", ltc.name, v),
                ));
            } else if step.saturated {
                records.push((
                    EventKind::LtcTimer,
                    format!("ltc {} commanded move blocked at tap limit", ltc.name),
                ));
            }
        }

        let changed = zd != state.zd;
        DiscreteUpdate {
            zd,
            changed,
            dynamics_changed,
            records,
        }
    }

    fn apply_contingency_event(&self, event: &ContingencyEvent) -> Result<Self> {
        let outcome = crate::grid::apply_contingency(&self.network, event)?;
        Ok(self.with_network(outcome.network))
    }

    fn g_row_name(&self, row: usize) -> String {
        self.g_names
            .get(row)
            .cloned()
            .unwrap_or_else(|| format!("g[{row}]"))
    }
}

/// Network power-balance residuals and derivatives shared by the assembly
/// routines in `dae`.
pub(crate) struct NetworkEquations<'a> {
    pub sys: &'a PowerSystem,
    pub y_matrix: AdmittanceMatrix,
}

impl<'a> NetworkEquations<'a> {
    pub fn new(sys: &'a PowerSystem, state: &PartitionedState) -> Result<Self> {
        Ok(Self {
            sys,
            y_matrix: sys.admittance_for(&state.zd)?,
        })
    }

    /// Fill bus balance rows (and slack pins) into `g`.
    pub fn residuals(&self, state: &PartitionedState, g: &mut nalgebra::DVector<f64>) {
        let sys = self.sys;
        let n = sys.network.n_buses();
        let vm: Vec<f64> = (0..n).map(|i| state.y[2 * i]).collect();
        let va: Vec<f64> = (0..n).map(|i| state.y[2 * i + 1]).collect();
        for i in 0..n {
            if i == sys.slack {
                g[2 * i] += va[i] - sys.slack_va_pin;
                g[2 * i + 1] += vm[i] - sys.slack_vm_pin;
                continue;
            }
            let (p, q) = crate::powerflow::bus_power(&self.y_matrix, &vm, &va, i);
            g[2 * i] += p + sys.static_p[i] - sys.fixed_p[i];
            g[2 * i + 1] += q + sys.static_q[i] - sys.fixed_q[i];
        }
    }

    /// Stamp the network block derivatives into `dy_g`.
    pub fn jacobian(&self, state: &PartitionedState, dy_g: &mut crate::sparse::SparseBlock) {
        let sys = self.sys;
        let n = sys.network.n_buses();
        let vm: Vec<f64> = (0..n).map(|i| state.y[2 * i]).collect();
        let va: Vec<f64> = (0..n).map(|i| state.y[2 * i + 1]).collect();
        for i in 0..n {
            if i == sys.slack {
                dy_g.push(2 * i, 2 * i + 1, 1.0);
                dy_g.push(2 * i + 1, 2 * i, 1.0);
                continue;
            }
            let (p_i, q_i) = crate::powerflow::bus_power(&self.y_matrix, &vm, &va, i);
            for j in 0..n {
                let yij = self.y_matrix.get(i, j);
                if yij.re == 0.0 && yij.im == 0.0 && i != j {
                    continue;
                }
                let dth = va[i] - va[j];
                let (sn, cs) = dth.sin_cos();
                if i == j {
                    dy_g.push(2 * i, 2 * j, p_i / vm[i] + yij.re * vm[i]);
                    dy_g.push(2 * i, 2 * j + 1, -q_i - yij.im * vm[i] * vm[i]);
                    dy_g.push(2 * i + 1, 2 * j, q_i / vm[i] - yij.im * vm[i]);
                    dy_g.push(2 * i + 1, 2 * j + 1, p_i - yij.re * vm[i] * vm[i]);
                } else {
                    let dp_dv = vm[i] * (yij.re * cs + yij.im * sn);
                    let dp_dth = vm[i] * vm[j] * (yij.re * sn - yij.im * cs);
                    let dq_dv = vm[i] * (yij.re * sn - yij.im * cs);
                    let dq_dth = -vm[i] * vm[j] * (yij.re * cs + yij.im * sn);
                    dy_g.push(2 * i, 2 * j, dp_dv);
                    dy_g.push(2 * i, 2 * j + 1, dp_dth);
                    dy_g.push(2 * i + 1, 2 * j, dq_dv);
                    dy_g.push(2 * i + 1, 2 * j + 1, dq_dth);
                }
            }
        }
    }
}

/// Route a device contribution into the global residual parts.
pub(crate) fn apply_contribution(
    c: &crate::devices::DeviceContribution,
    out: &mut ResidualVector,
) {
    for &(row, v) in &c.f_entries {
        out.f[row] += v;
    }
    for &(row, v) in &c.g_entries {
        if row != usize::MAX {
            out.g[row] += v;
        }
    }
    for &(row, v) in &c.h_c_entries {
        out.hc[row] += v;
    }
}

/// Route a device's Jacobian entries into the bundle blocks.
pub(crate) fn apply_jacobian_contribution(
    c: &crate::devices::DeviceContribution,
    b: &mut JacobianBundle,
) {
    for &(rb, cb, row, col, v) in &c.jacobian_entries {
        if row == usize::MAX {
            continue;
        }
        let block = match (rb, cb) {
            (RowBlock::F, ColBlock::X) => &mut b.dx_f,
            (RowBlock::F, ColBlock::Y) => &mut b.dy_f,
            (RowBlock::F, ColBlock::Zc) => &mut b.dzc_f,
            (RowBlock::G, ColBlock::X) => &mut b.dx_g,
            (RowBlock::G, ColBlock::Y) => &mut b.dy_g,
            (RowBlock::G, ColBlock::Zc) => &mut b.dzc_g,
            (RowBlock::Hc, ColBlock::X) => &mut b.dx_hc,
            (RowBlock::Hc, ColBlock::Y) => &mut b.dy_hc,
            (RowBlock::Hc, ColBlock::Zc) => &mut b.dzc_hc,
        };
        block.push(row, col, v);
    }
}
