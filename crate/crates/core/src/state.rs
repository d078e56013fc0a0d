//! The four-way partitioned state shared by every model.
//!
//! Every model variable belongs to exactly one of four partitions, fixed at
//! model build time:
//!
//! - `zc` — continuous slow states (load recovery, governors, limiter timers),
//! - `zd` — discrete slow states (tap positions, limiter flags, event timers),
//! - `x`  — fast dynamic states (machine and regulator states),
//! - `y`  — algebraic states (bus voltages and angles, machine currents).
//!
//! Time is carried twice: `t` in seconds (what the integrators step) and the
//! slow time `tau = t * epsilon` as metadata, where `epsilon` is the
//! reciprocal of the largest device time constant in the model.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Which partition a variable lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    SlowContinuous,
    SlowDiscrete,
    Fast,
    Algebraic,
}

/// Immutable description of a model's variable layout.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartitionLayout {
    pub zc_names: Vec<String>,
    pub zd_names: Vec<String>,
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
    /// Number of algebraic residual rows (may differ from y length only
    /// transiently during a build; equal once finalized).
    pub n_g: usize,
}

impl PartitionLayout {
    pub fn n_zc(&self) -> usize {
        self.zc_names.len()
    }
    pub fn n_zd(&self) -> usize {
        self.zd_names.len()
    }
    pub fn n_x(&self) -> usize {
        self.x_names.len()
    }
    pub fn n_y(&self) -> usize {
        self.y_names.len()
    }

    /// Total number of continuous variables (excludes `zd`).
    pub fn n_continuous(&self) -> usize {
        self.n_zc() + self.n_x() + self.n_y()
    }

    /// All variable names in canonical order: zc, zd, x, y.
    pub fn all_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_zc() + self.n_zd() + self.n_x() + self.n_y());
        names.extend(self.zc_names.iter().cloned());
        names.extend(self.zd_names.iter().cloned());
        names.extend(self.x_names.iter().cloned());
        names.extend(self.y_names.iter().cloned());
        names
    }
}

/// Incremental builder used while devices register their state slots.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    layout: PartitionLayout,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_zc(&mut self, name: impl Into<String>) -> usize {
        self.layout.zc_names.push(name.into());
        self.layout.zc_names.len() - 1
    }

    pub fn add_zd(&mut self, name: impl Into<String>) -> usize {
        self.layout.zd_names.push(name.into());
        self.layout.zd_names.len() - 1
    }

    pub fn add_x(&mut self, name: impl Into<String>) -> usize {
        self.layout.x_names.push(name.into());
        self.layout.x_names.len() - 1
    }

    pub fn add_y(&mut self, name: impl Into<String>) -> usize {
        self.layout.y_names.push(name.into());
        self.layout.y_names.len() - 1
    }

    pub fn add_g_row(&mut self) -> usize {
        self.layout.n_g += 1;
        self.layout.n_g - 1
    }

    pub fn finish(self) -> PartitionLayout {
        self.layout
    }
}

/// A point of the model: the four state partitions plus time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedState {
    pub zc: DVector<f64>,
    pub zd: DVector<f64>,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// Fast time in seconds.
    pub t: f64,
    /// Slow time tau = t * epsilon (metadata; integrators step `t`).
    pub tau: f64,
    /// Reciprocal of the maximum device time constant.
    pub epsilon: f64,
}

impl PartitionedState {
    pub fn zeros(layout: &PartitionLayout, epsilon: f64) -> Self {
        Self {
            zc: DVector::zeros(layout.n_zc()),
            zd: DVector::zeros(layout.n_zd()),
            x: DVector::zeros(layout.n_x()),
            y: DVector::zeros(layout.n_y()),
            t: 0.0,
            tau: 0.0,
            epsilon,
        }
    }

    pub fn matches_layout(&self, layout: &PartitionLayout) -> bool {
        self.zc.len() == layout.n_zc()
            && self.zd.len() == layout.n_zd()
            && self.x.len() == layout.n_x()
            && self.y.len() == layout.n_y()
    }

    pub fn set_time(&mut self, t: f64) {
        self.t = t;
        self.tau = t * self.epsilon;
    }

    pub fn is_finite(&self) -> bool {
        self.zc.iter().all(|v| v.is_finite())
            && self.zd.iter().all(|v| v.is_finite())
            && self.x.iter().all(|v| v.is_finite())
            && self.y.iter().all(|v| v.is_finite())
    }

    /// Concatenated continuous variables in (zc, x, y) order.
    pub fn continuous_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.zc.len() + self.x.len() + self.y.len());
        v.rows_mut(0, self.zc.len()).copy_from(&self.zc);
        v.rows_mut(self.zc.len(), self.x.len()).copy_from(&self.x);
        v.rows_mut(self.zc.len() + self.x.len(), self.y.len())
            .copy_from(&self.y);
        v
    }

    /// Overwrite the continuous partitions from a concatenated vector.
    pub fn set_continuous(&mut self, v: &DVector<f64>) {
        let (nz, nx, ny) = (self.zc.len(), self.x.len(), self.y.len());
        debug_assert_eq!(v.len(), nz + nx + ny);
        self.zc.copy_from(&v.rows(0, nz).into_owned());
        self.x.copy_from(&v.rows(nz, nx).into_owned());
        self.y.copy_from(&v.rows(nz + nx, ny).into_owned());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_builder_indices_sequential() {
        let mut b = LayoutBuilder::new();
        assert_eq!(b.add_x("a"), 0);
        assert_eq!(b.add_x("b"), 1);
        assert_eq!(b.add_zc("c"), 0);
        let l = b.finish();
        assert_eq!(l.n_x(), 2);
        assert_eq!(l.n_zc(), 1);
        assert_eq!(l.all_names(), vec!["c", "a", "b"]);
    }

    #[test]
    fn continuous_roundtrip() {
        let layout = PartitionLayout {
            zc_names: vec!["z".into()],
            zd_names: vec![],
            x_names: vec!["x1".into(), "x2".into()],
            y_names: vec!["y".into()],
            n_g: 1,
        };
        let mut s = PartitionedState::zeros(&layout, 1.0);
        s.zc[0] = 1.0;
        s.x[0] = 2.0;
        s.x[1] = 3.0;
        s.y[0] = 4.0;
        let v = s.continuous_vector();
        let mut s2 = PartitionedState::zeros(&layout, 1.0);
        s2.set_continuous(&v);
        assert_eq!(s2.zc[0], 1.0);
        assert_eq!(s2.x[1], 3.0);
        assert_eq!(s2.y[0], 4.0);
    }

    #[test]
    fn tau_tracks_epsilon() {
        let layout = PartitionLayout::default();
        let mut s = PartitionedState::zeros(&layout, 0.125);
        s.set_time(8.0);
        assert_eq!(s.tau, 1.0);
    }
}
