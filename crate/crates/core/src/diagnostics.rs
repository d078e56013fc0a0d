//! Why did the constrained model disagree with the full model?
//!
//! Two sufficient conditions are checked along a paired run:
//!
//! 1. every point of the full trajectory must lie inside the stability
//!    region of the corresponding fast-subsystem equilibrium (checked by
//!    rollout), and
//! 2. the constrained trajectory must stay on the stable component of the
//!    constraint manifold (checked by eigenvalue classification).
//!
//! A failure of the first is cause I (the full model escaped the fast
//! model's basin after a discrete jump); a failure of the second is cause
//! II (the constrained model kept tracking an equilibrium that had gone
//! unstable).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{
    classify_state, solve_transient_sep, ManifoldClassification, ManifoldVerdict, TransientSep,
};
use crate::model::{DynamicModel, EventKind};
use crate::sim::{
    model_at_time, run_transient, EventSchedule, IntegratorConfig, ModelKind, Termination,
    Trajectory,
};
use crate::state::PartitionedState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MembershipVerdict {
    Inside,
    Outside { reason: String },
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionMembership {
    /// Trajectory time of the checked point.
    pub time: f64,
    pub verdict: MembershipVerdict,
    /// The solved fast/algebraic equilibrium at the point's slow state.
    pub sep: Option<TransientSep>,
    pub rollout_horizon: f64,
    /// Final rollout distance to the equilibrium, per-variable infinity norm.
    pub final_distance: Option<f64>,
}

impl RegionMembership {
    pub fn is_inside(&self) -> bool {
        matches!(self.verdict, MembershipVerdict::Inside)
    }
    pub fn is_outside(&self) -> bool {
        matches!(self.verdict, MembershipVerdict::Outside { .. })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosisConfig {
    /// Rollout engine settings for membership checks.
    pub transient: IntegratorConfig,
    /// Uniform checkpoint spacing for condition 1 (plus every event).
    pub checkpoint_interval: f64,
    /// Per-variable tolerance for trajectory agreement and same-SEP tests.
    pub match_tolerance: f64,
    /// Rollout counts as converged onto the equilibrium within this
    /// distance; beyond 10x this, a settled rollout is a different
    /// attractor.
    pub distance_tolerance: f64,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        Self {
            transient: IntegratorConfig {
                horizon: 30.0,
                sep_dwell: 5.0,
                ..IntegratorConfig::transient()
            },
            checkpoint_interval: 5.0,
            match_tolerance: 1e-3,
            distance_tolerance: 1e-4,
        }
    }
}

fn fast_distance(a: &PartitionedState, b: &PartitionedState) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..a.x.len() {
        d = d.max((a.x[i] - b.x[i]).abs());
    }
    for i in 0..a.y.len() {
        d = d.max((a.y[i] - b.y[i]).abs());
    }
    d
}

/// Solve the fast equilibrium at the point's frozen slow state, then roll
/// the transient model out from the point itself. `inside` means the
/// rollout reconverged onto that equilibrium.
pub fn check_region_membership<M: DynamicModel>(
    model: &M,
    point: &PartitionedState,
    config: &DiagnosisConfig,
) -> RegionMembership {
    let time = point.t;
    let sep = match solve_transient_sep(model, point) {
        Ok(s) => s,
        Err(e) => {
            return RegionMembership {
                time,
                verdict: MembershipVerdict::Inconclusive {
                    reason: format!("no-sep: {e}"),
                },
                sep: None,
                rollout_horizon: config.transient.horizon,
                final_distance: None,
            }
        }
    };

    // A stability region is only defined for an asymptotically stable
    // equilibrium; an unstable one is itself the diagnostic.
    let k = sep.unstable_type();
    if k >= 1 || matches!(sep.classification.verdict, ManifoldVerdict::Singular) {
        return RegionMembership {
            time,
            verdict: MembershipVerdict::Inconclusive {
                reason: format!("unstable-equilibrium(type={k})"),
            },
            sep: Some(sep),
            rollout_horizon: config.transient.horizon,
            final_distance: None,
        };
    }

    let mut start = point.clone();
    start.set_time(0.0);
    let rollout = match run_transient(model, &start, &config.transient) {
        Ok(t) => t,
        Err(e) => {
            return RegionMembership {
                time,
                verdict: MembershipVerdict::Inconclusive {
                    reason: format!("rollout-error: {e}"),
                },
                sep: Some(sep),
                rollout_horizon: config.transient.horizon,
                final_distance: None,
            }
        }
    };

    let final_distance = rollout
        .final_state()
        .map(|s| fast_distance(s, &sep.state));
    let verdict = match (&rollout.termination, final_distance) {
        (Termination::Diverged { reason, time }, _) => MembershipVerdict::Outside {
            reason: format!("rollout diverged at {time:.3}: {reason}"),
        },
        (Termination::NewtonFailure { time }, _) => MembershipVerdict::Outside {
            reason: format!("rollout collapsed (newton failure) at {time:.3}"),
        },
        (Termination::Singularity { time }, _) => MembershipVerdict::Outside {
            reason: format!("rollout hit a singular algebraic block at {time:.3}"),
        },
        (Termination::ConvergedToSep { .. }, Some(d)) => {
            if d <= 10.0 * config.distance_tolerance {
                MembershipVerdict::Inside
            } else {
                MembershipVerdict::Outside {
                    reason: format!("converged to a different attractor (distance {d:.3e})"),
                }
            }
        }
        (Termination::HorizonReached, Some(d)) => {
            if d <= config.distance_tolerance {
                MembershipVerdict::Inside
            } else {
                MembershipVerdict::Inconclusive {
                    reason: format!("horizon exhausted at distance {d:.3e}"),
                }
            }
        }
        (_, None) => MembershipVerdict::Inconclusive {
            reason: "empty rollout".into(),
        },
    };

    RegionMembership {
        time,
        verdict,
        sep: Some(sep),
        rollout_horizon: config.transient.horizon,
        final_distance,
    }
}

/// Checkpoints for condition 1: immediately after every dynamics-changing
/// event, plus a uniform grid.
fn condition_one_checkpoints(
    trajectory: &Trajectory,
    interval: f64,
) -> Vec<(f64, PartitionedState)> {
    let mut pts: Vec<(f64, PartitionedState)> = Vec::new();
    for ev in trajectory.dynamic_events() {
        if let Some(s) = &ev.post_state {
            pts.push((ev.time, s.clone()));
        }
    }
    if interval > 0.0 {
        let mut t = trajectory.start_time();
        while t <= trajectory.end_time() + 1e-9 {
            if let Some(s) = trajectory.state_at(t) {
                pts.push((t, s));
            }
            t += interval;
        }
    }
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pts
}

/// Evaluate [`check_region_membership`] at every checkpoint of a full-model
/// trajectory. Overall pass means every verdict is `inside`.
pub fn check_condition_one<M: DynamicModel>(
    base_model: &M,
    schedule: &EventSchedule,
    trajectory: &Trajectory,
    config: &DiagnosisConfig,
) -> Result<Vec<RegionMembership>> {
    let pts = condition_one_checkpoints(trajectory, config.checkpoint_interval);
    let mut out = Vec::with_capacity(pts.len());
    for (t, state) in pts {
        let model = model_at_time(base_model, schedule, t)?;
        out.push(check_region_membership(&model, &state, config));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaExit {
    pub time: f64,
    pub classification: ManifoldClassification,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionTwoReport {
    pub points_checked: usize,
    pub all_in_gamma_s: bool,
    pub first_exit: Option<GammaExit>,
    pub exit_count: usize,
    /// Points that could not be classified (off-manifold beyond tolerance).
    pub skipped: usize,
}

/// Classify every sample (and post-event re-anchor point) of a constrained
/// trajectory; pass means everything stayed on the stable component.
pub fn check_condition_two<M: DynamicModel>(
    base_model: &M,
    schedule: &EventSchedule,
    trajectory: &Trajectory,
) -> Result<ConditionTwoReport> {
    let mut points: Vec<(f64, PartitionedState)> = Vec::new();
    for (t, s) in &trajectory.samples {
        points.push((*t, s.clone()));
    }
    for ev in trajectory.dynamic_events() {
        if let Some(s) = &ev.post_state {
            points.push((ev.time, s.clone()));
        }
    }
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut report = ConditionTwoReport {
        points_checked: 0,
        all_in_gamma_s: true,
        first_exit: None,
        exit_count: 0,
        skipped: 0,
    };
    for (t, state) in points {
        let model = model_at_time(base_model, schedule, t)?;
        let c = match classify_state(&model, &state) {
            Ok(c) => c,
            Err(Error::OffManifold { .. }) => {
                report.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        report.points_checked += 1;
        if !c.in_gamma_s {
            report.all_in_gamma_s = false;
            report.exit_count += 1;
            if report.first_exit.is_none() {
                report.first_exit = Some(GammaExit {
                    time: t,
                    classification: c,
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgreementVerdict {
    BothStableSameSep,
    BothStableDifferentSep,
    FullDivergedQssStable,
    QssFailedFullStable,
    BothFailed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub verdict: AgreementVerdict,
    /// First time the paired trajectories separate beyond the tolerance.
    pub first_divergence_time: Option<f64>,
    /// Per-variable maximum deviation over the shared window, named.
    pub max_deviation: Vec<(String, f64)>,
    pub match_tolerance: f64,
    pub full_termination: Termination,
    pub qss_termination: Termination,
    /// Shared comparison window.
    pub window: (f64, f64),
}

/// Time-align two runs by interpolation and compare them variable by
/// variable on the shared window.
pub fn compare_trajectories<M: DynamicModel>(
    model: &M,
    traj_a: &Trajectory,
    traj_b: &Trajectory,
    match_tolerance: f64,
) -> Result<DivergenceReport> {
    let (full, qss) = if traj_a.model_kind == ModelKind::Qss && traj_b.model_kind != ModelKind::Qss
    {
        (traj_b, traj_a)
    } else {
        (traj_a, traj_b)
    };

    let lo = full.start_time().max(qss.start_time());
    let hi = full.end_time().min(qss.end_time());
    if hi <= lo {
        return Err(Error::DisjointTimeRanges);
    }

    let layout = model.layout();
    let names = layout.all_names();
    let n_cont = layout.n_zc() + layout.n_x() + layout.n_y();
    let mut max_dev = vec![0.0_f64; n_cont];
    let mut first_divergence_time = None;

    for (t, sa) in full.samples.iter().filter(|(t, _)| *t >= lo && *t <= hi) {
        let sb = match qss.state_at(*t) {
            Some(s) => s,
            None => continue,
        };
        let mut step_max = 0.0_f64;
        let mut k = 0;
        for i in 0..layout.n_zc() {
            let d = (sa.zc[i] - sb.zc[i]).abs();
            max_dev[k] = max_dev[k].max(d);
            step_max = step_max.max(d);
            k += 1;
        }
        for i in 0..layout.n_x() {
            let d = (sa.x[i] - sb.x[i]).abs();
            max_dev[k] = max_dev[k].max(d);
            step_max = step_max.max(d);
            k += 1;
        }
        for i in 0..layout.n_y() {
            let d = (sa.y[i] - sb.y[i]).abs();
            max_dev[k] = max_dev[k].max(d);
            step_max = step_max.max(d);
            k += 1;
        }
        if step_max > match_tolerance && first_divergence_time.is_none() {
            first_divergence_time = Some(*t);
        }
    }

    let full_failed = full.termination.is_failure();
    let qss_failed = qss.termination.is_failure();
    let verdict = match (full_failed, qss_failed) {
        (true, true) => AgreementVerdict::BothFailed,
        (true, false) => AgreementVerdict::FullDivergedQssStable,
        (false, true) => AgreementVerdict::QssFailedFullStable,
        (false, false) => {
            let same = match (full.final_state(), qss.state_at(hi)) {
                (Some(a), Some(b)) => {
                    let mut d = fast_distance(a, &b);
                    for i in 0..a.zc.len() {
                        d = d.max((a.zc[i] - b.zc[i]).abs());
                    }
                    d <= match_tolerance
                }
                _ => false,
            };
            if same {
                AgreementVerdict::BothStableSameSep
            } else {
                AgreementVerdict::BothStableDifferentSep
            }
        }
    };

    let zc_x_y_names: Vec<String> = names
        .iter()
        .filter(|n| !n.starts_with("zd."))
        .cloned()
        .collect();
    Ok(DivergenceReport {
        verdict,
        first_divergence_time,
        max_deviation: zc_x_y_names.into_iter().zip(max_dev).collect(),
        match_tolerance,
        full_termination: full.termination.clone(),
        qss_termination: qss.termination.clone(),
        window: (lo, hi),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "kebab-case")]
pub enum FailureCause {
    None,
    CauseI {
        /// 1-based ordinal of the discrete event the region exit anchors at.
        event_ordinal: usize,
        time: f64,
    },
    CauseIi {
        event_ordinal: usize,
        time: f64,
        equilibrium_type: usize,
    },
    Indeterminate {
        reason: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureDiagnosis {
    pub cause: FailureCause,
    pub condition_one: Vec<RegionMembership>,
    pub condition_two: ConditionTwoReport,
    pub divergence: DivergenceReport,
    pub notes: Vec<String>,
}

fn event_ordinal_at(trajectory: &Trajectory, time: f64) -> usize {
    trajectory
        .dynamic_events()
        .iter()
        .filter(|e| e.kind != EventKind::Contingency && e.time <= time + 1e-9)
        .count()
        .max(1)
}

/// Run the comparison and both condition suites, then assign the cause.
pub fn diagnose_failure<M: DynamicModel>(
    model: &M,
    schedule: &EventSchedule,
    full: &Trajectory,
    qss: &Trajectory,
    config: &DiagnosisConfig,
) -> Result<FailureDiagnosis> {
    let divergence = compare_trajectories(model, full, qss, config.match_tolerance)?;
    let condition_one = check_condition_one(model, schedule, full, config)?;
    let condition_two = check_condition_two(model, schedule, qss)?;
    let mut notes = Vec::new();

    let c1_violation = condition_one
        .iter()
        .find(|m| m.is_outside())
        .map(|m| m.time);
    let c2_violation = condition_two.first_exit.as_ref().map(|e| e.time);

    if condition_one.is_empty() {
        notes.push("condition 1 checked no points (empty checkpoint set): vacuous pass".into());
    }
    let inconclusive = condition_one
        .iter()
        .filter(|m| matches!(m.verdict, MembershipVerdict::Inconclusive { .. }))
        .count();
    if inconclusive > 0 {
        notes.push(format!(
            "{inconclusive} membership checkpoint(s) inconclusive"
        ));
    }

    let models_disagree = matches!(
        divergence.verdict,
        AgreementVerdict::FullDivergedQssStable
            | AgreementVerdict::QssFailedFullStable
            | AgreementVerdict::BothStableDifferentSep
            | AgreementVerdict::BothFailed
    );

    let cause = match (c1_violation, c2_violation) {
        (None, None) => {
            if models_disagree {
                FailureCause::Indeterminate {
                    reason: format!(
                        "runs disagree ({:?}) but both sufficient conditions held at every checkpoint",
                        divergence.verdict
                    ),
                }
            } else {
                FailureCause::None
            }
        }
        (Some(t1), None) => {
            if let Some(t_div) = full.termination.time() {
                if t1 > t_div + 1e-6 {
                    notes.push(format!(
                        "region exit at {t1:.3} follows the full-model stop at {t_div:.3}"
                    ));
                }
            }
            FailureCause::CauseI {
                event_ordinal: event_ordinal_at(full, t1),
                time: t1,
            }
        }
        (None, Some(t2)) => {
            let k = condition_two
                .first_exit
                .as_ref()
                .map(|e| {
                    e.classification
                        .schur_eigenvalues
                        .as_ref()
                        .map(|se| se.iter().filter(|(re, _)| *re > 0.0).count())
                        .unwrap_or(0)
                })
                .unwrap_or(0);
            FailureCause::CauseIi {
                event_ordinal: event_ordinal_at(qss, t2),
                time: t2,
                equilibrium_type: k,
            }
        }
        (Some(t1), Some(t2)) => {
            notes.push(format!(
                "both conditions failed (condition 1 at {t1:.3}, condition 2 at {t2:.3})"
            ));
            if t1 < t2 - 1e-6 {
                FailureCause::CauseI {
                    event_ordinal: event_ordinal_at(full, t1),
                    time: t1,
                }
            } else {
                let k = condition_two
                    .first_exit
                    .as_ref()
                    .and_then(|e| e.classification.schur_eigenvalues.as_ref())
                    .map(|se| se.iter().filter(|(re, _)| *re > 0.0).count())
                    .unwrap_or(0);
                FailureCause::CauseIi {
                    event_ordinal: event_ordinal_at(qss, t2),
                    time: t2,
                    equilibrium_type: k,
                }
            }
        }
    };

    if matches!(cause, FailureCause::None) && models_disagree {
        unreachable!("disagreement cannot map to cause None");
    }

    Ok(FailureDiagnosis {
        cause,
        condition_one,
        condition_two,
        divergence,
        notes,
    })
}

/// One-paragraph human-readable verdict.
pub fn summarize_diagnosis(d: &FailureDiagnosis) -> String {
    let mut s = String::new();
    match &d.cause {
        FailureCause::None => {
            s.push_str("No failure: both models agree and both sufficient conditions hold. ");
        }
        FailureCause::CauseI { event_ordinal, time } => {
            s.push_str(&format!(
                "Cause I at discrete event #{event_ordinal} (t = {time:.3} s): the full-model \
                 state left the stability region of the corresponding fast-subsystem \
                 equilibrium, so the constrained run tracked an equilibrium the real \
                 trajectory could no longer reach. "
            ));
        }
        FailureCause::CauseIi {
            event_ordinal,
            time,
            equilibrium_type,
        } => {
            s.push_str(&format!(
                "Cause II at discrete event #{event_ordinal} (t = {time:.3} s): the constrained \
                 trajectory left the stable component of the constraint manifold; the tracked \
                 equilibrium is type-{equilibrium_type} unstable. "
            ));
        }
        FailureCause::Indeterminate { reason } => {
            s.push_str(&format!("Indeterminate: {reason}. "));
        }
    }
    s.push_str(&format!(
        "Run agreement: {:?}; first separation beyond {:.1e}: {}.",
        d.divergence.verdict,
        d.divergence.match_tolerance,
        d.divergence
            .first_divergence_time
            .map(|t| format!("{t:.3} s"))
            .unwrap_or_else(|| "never".into())
    ));
    s
}
