//! Network topology and nodal admittance assembly.
//!
//! Everything is per-unit on a single system MVA base. Bus ordering is fixed
//! by case-file order and never reordered.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    /// Voltage magnitude setpoint (slack/PV) or initial guess (PQ), p.u.
    pub base_voltage_magnitude: f64,
    #[serde(default)]
    pub shunt_conductance: f64,
    #[serde(default)]
    pub shunt_susceptance: f64,
    /// Static load drawn at the bus, p.u.
    #[serde(default)]
    pub load_p: f64,
    #[serde(default)]
    pub load_q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub series_resistance: f64,
    pub series_reactance: f64,
    #[serde(default)]
    pub charging_susceptance: f64,
    /// Off-nominal tap ratio on the `from` side; 1.0 for plain lines.
    #[serde(default = "default_tap")]
    pub tap_ratio: f64,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

fn default_tap() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

/// A power network: buses plus branches, in file order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl Network {
    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn branch_index(&self, id: &str) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Buses reachable from `start` over in-service branches.
    fn reachable_from(&self, start: usize, skip_branch: Option<usize>) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            if !seen.insert(i) {
                continue;
            }
            for (bi, br) in self.branches.iter().enumerate() {
                if !br.in_service || Some(bi) == skip_branch {
                    continue;
                }
                let (f, t) = (self.bus_index(&br.from_bus), self.bus_index(&br.to_bus));
                if let (Some(f), Some(t)) = (f, t) {
                    if f == i && !seen.contains(&t) {
                        stack.push(t);
                    } else if t == i && !seen.contains(&f) {
                        stack.push(f);
                    }
                }
            }
        }
        seen
    }
}

/// Nodal admittance matrix. Dense complex storage with an explicit structural
/// pattern; the systems here are far below the size where compressed storage
/// pays off, but the pattern is kept so sparsity checks stay meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    dim: usize,
    dense: DMatrix<Complex64>,
    /// Structurally nonzero (i, j) pairs, including diagonals touched by any
    /// in-service branch or shunt.
    pattern: BTreeSet<(usize, usize)>,
}

impl AdmittanceMatrix {
    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.dense[(i, j)]
    }

    pub fn dense(&self) -> &DMatrix<Complex64> {
        &self.dense
    }

    pub fn structural_nonzeros(&self) -> usize {
        self.pattern.len()
    }

    pub fn pattern(&self) -> &BTreeSet<(usize, usize)> {
        &self.pattern
    }

    /// The pattern is structurally symmetric: (i, j) present iff (j, i) is.
    pub fn pattern_is_symmetric(&self) -> bool {
        self.pattern
            .iter()
            .all(|&(i, j)| self.pattern.contains(&(j, i)))
    }
}

/// Assemble the nodal admittance matrix, applying `tap_overrides` in branch
/// order where provided (used by LTC transformers whose tap lives in `zd`).
///
/// Branch model: series admittance `y = 1/(r + jx)` with ideal tap `a:1` on
/// the from side and total line charging `b` split half per end:
///
/// - `Y_ff += y/a^2 + j b/2`
/// - `Y_tt += y     + j b/2`
/// - `Y_ft -= y/a`, `Y_tf -= y/a`
pub fn build_admittance_with_taps(
    network: &Network,
    tap_overrides: &[(usize, f64)],
) -> Result<AdmittanceMatrix> {
    let n = network.n_buses();
    let mut dense = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut pattern = BTreeSet::new();

    for (bi, br) in network.branches.iter().enumerate() {
        let f = network.bus_index(&br.from_bus).ok_or(Error::DanglingBranch {
            branch: br.id.clone(),
            bus: br.from_bus.clone(),
        })?;
        let t = network.bus_index(&br.to_bus).ok_or(Error::DanglingBranch {
            branch: br.id.clone(),
            bus: br.to_bus.clone(),
        })?;
        if f == t {
            return Err(Error::Structure(format!(
                "branch {} connects bus {} to itself",
                br.id, br.from_bus
            )));
        }
        if !br.in_service {
            continue;
        }
        let z = Complex64::new(br.series_resistance, br.series_reactance);
        if z.norm() == 0.0 {
            return Err(Error::Structure(format!(
                "branch {} has zero series impedance",
                br.id
            )));
        }
        let y = z.inv();
        let b_half = Complex64::new(0.0, br.charging_susceptance / 2.0);
        let a = tap_overrides
            .iter()
            .find(|(i, _)| *i == bi)
            .map(|&(_, tap)| tap)
            .unwrap_or(br.tap_ratio);

        dense[(f, f)] += y / (a * a) + b_half;
        dense[(t, t)] += y + b_half;
        dense[(f, t)] -= y / a;
        dense[(t, f)] -= y / a;
        pattern.insert((f, f));
        pattern.insert((t, t));
        pattern.insert((f, t));
        pattern.insert((t, f));
    }

    for (i, bus) in network.buses.iter().enumerate() {
        let ysh = Complex64::new(bus.shunt_conductance, bus.shunt_susceptance);
        if ysh.norm() > 0.0 {
            dense[(i, i)] += ysh;
            pattern.insert((i, i));
        }
    }

    Ok(AdmittanceMatrix {
        dim: n,
        dense,
        pattern,
    })
}

/// Standard nodal admittance assembly from the network's own tap ratios.
pub fn build_admittance(network: &Network) -> Result<AdmittanceMatrix> {
    build_admittance_with_taps(network, &[])
}

/// A topology-changing event applied to the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ContingencyEvent {
    /// Remove a branch from service.
    BranchTrip { branch: String },
    /// Restore a branch to service (fault cleared).
    FaultClear { branch: String },
}

/// Outcome of [`apply_contingency`]: the modified network plus whether the
/// event actually changed anything (re-tripping a tripped branch does not).
#[derive(Debug, Clone)]
pub struct ContingencyOutcome {
    pub network: Network,
    pub changed: bool,
    pub warning: Option<String>,
}

/// Apply a contingency, returning a modified copy. The original network is
/// untouched; any cached admittance for it must be considered stale.
pub fn apply_contingency(network: &Network, event: &ContingencyEvent) -> Result<ContingencyOutcome> {
    let (branch_id, to_service) = match event {
        ContingencyEvent::BranchTrip { branch } => (branch, false),
        ContingencyEvent::FaultClear { branch } => (branch, true),
    };
    let bi = network
        .branch_index(branch_id)
        .ok_or_else(|| Error::Structure(format!("contingency references unknown branch {branch_id}")))?;

    if network.branches[bi].in_service == to_service {
        let verb = if to_service { "restore" } else { "trip" };
        return Ok(ContingencyOutcome {
            network: network.clone(),
            changed: false,
            warning: Some(format!(
                "{verb} of branch {branch_id} is a no-op: branch already in that state"
            )),
        });
    }

    if !to_service {
        // Island check: every bus must stay reachable from bus 0 without
        // this branch.
        let reachable = network.reachable_from(0, Some(bi));
        if reachable.len() != network.n_buses() {
            let isolated: Vec<String> = network
                .buses
                .iter()
                .enumerate()
                .filter(|(i, _)| !reachable.contains(i))
                .map(|(_, b)| b.id.clone())
                .collect();
            return Err(Error::Island {
                branch: branch_id.clone(),
                isolated: isolated.join(", "),
            });
        }
    }

    let mut out = network.clone();
    out.branches[bi].in_service = to_service;
    Ok(ContingencyOutcome {
        network: out,
        changed: true,
        warning: None,
    })
}
