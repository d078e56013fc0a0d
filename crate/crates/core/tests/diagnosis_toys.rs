//! Diagnosis pipeline on the constructed discrete-jump system.

use voltstab::diagnostics::{
    check_condition_two, check_region_membership, diagnose_failure, DiagnosisConfig, FailureCause,
    MembershipVerdict,
};
use voltstab::manifold::solve_transient_sep;
use voltstab::sim::{run_long_term, run_qss, run_transient, EventSchedule, IntegratorConfig, Termination};
use voltstab::synthetic::Cause2Hopf;

fn model() -> Cause2Hopf {
    Cause2Hopf::new(0.2, 0.0, 0.5)
}

fn config() -> IntegratorConfig {
    IntegratorConfig {
        step: 0.02,
        horizon: 120.0,
        oscillation_floor: 1e-4,
        ..IntegratorConfig::long_term()
    }
}

#[test]
fn post_event_equilibrium_is_type_2() {
    let m = model();
    let mut probe = m.initial_state(0.49);
    probe.zd[0] = 1.0;
    let sep = solve_transient_sep(&m, &probe).unwrap();
    assert_eq!(sep.unstable_type(), 2);
    assert!(!sep.is_stable());
}

#[test]
fn membership_at_unstable_equilibrium_is_inconclusive_diagnostic() {
    let m = model();
    let mut probe = m.initial_state(0.49);
    probe.zd[0] = 1.0;
    let cfg = DiagnosisConfig::default();
    let membership = check_region_membership(&m, &probe, &cfg);
    match membership.verdict {
        MembershipVerdict::Inconclusive { reason } => {
            assert!(reason.contains("type=2"), "reason: {reason}");
        }
        other => panic!("expected inconclusive at an unstable equilibrium, got {other:?}"),
    }
}

#[test]
fn perturbation_along_unstable_eigenvector_diverges() {
    use voltstab::manifold::eigenvector_for;
    use voltstab::schur_complement;
    use voltstab::DynamicModel;

    let m = model();
    let mut probe = m.initial_state(0.49);
    probe.zd[0] = 1.0;
    let sep = solve_transient_sep(&m, &probe).unwrap();
    let j = m.jacobian(&sep.state).unwrap();
    let schur = schur_complement(&j).unwrap();
    let (re, im) = sep.classification.schur_eigenvalues.as_ref().unwrap()[0];
    let dir = eigenvector_for(&schur, num_complex::Complex64::new(re, im)).unwrap();

    let mut start = sep.state.clone();
    for i in 0..start.x.len() {
        start.x[i] += 1e-4 * dir[i];
    }
    let cfg = IntegratorConfig {
        horizon: 60.0,
        step: 0.01,
        ..IntegratorConfig::transient()
    };
    let tr = run_transient(&m, &start, &cfg).unwrap();
    let end = tr.final_state().unwrap();
    let dist = (end.x[0] - sep.state.x[0])
        .abs()
        .max((end.x[1] - sep.state.x[1]).abs());
    assert!(
        matches!(tr.termination, Termination::Diverged { .. }) || dist > 1e-1,
        "perturbed rollout must leave the equilibrium, distance {dist}, termination {:?}",
        tr.termination
    );
}

#[test]
fn diagnose_returns_cause_2() {
    let m = model();
    let init = m.initial_state(1.0);
    let cfg = config();
    let schedule = EventSchedule::default();
    let full = run_long_term(&m, &init, &cfg, &schedule).unwrap();
    let qss = run_qss(&m, &init, &cfg, &schedule).unwrap();
    assert!(full.termination.is_failure());
    assert!(qss.termination.is_converged());

    let diag = diagnose_failure(&m, &schedule, &full, &qss, &DiagnosisConfig::default()).unwrap();
    match &diag.cause {
        FailureCause::CauseIi {
            equilibrium_type, ..
        } => {
            assert_eq!(*equilibrium_type, 2);
        }
        other => panic!("expected cause II, got {other:?}"),
    }
    assert!(!diag.condition_two.all_in_gamma_s);
}

#[test]
fn condition_two_first_exit_at_the_event() {
    let m = model();
    let init = m.initial_state(1.0);
    let cfg = config();
    let schedule = EventSchedule::default();
    let qss = run_qss(&m, &init, &cfg, &schedule).unwrap();
    let report = check_condition_two(&m, &schedule, &qss).unwrap();
    let exit = report.first_exit.expect("must exit the stable component");
    let event_time = qss.dynamic_events()[0].time;
    assert!(
        (exit.time - event_time).abs() < 1e-9,
        "exit at {} vs event at {}",
        exit.time,
        event_time
    );
}

#[test]
fn single_point_trajectory_on_stable_component_passes() {
    let m = model();
    let init = m.initial_state(1.0);
    let cfg = IntegratorConfig {
        horizon: 0.0,
        ..config()
    };
    let qss = run_qss(&m, &init, &cfg, &EventSchedule::default()).unwrap();
    assert_eq!(qss.samples.len(), 1);
    let report = check_condition_two(&m, &EventSchedule::default(), &qss).unwrap();
    assert!(report.all_in_gamma_s);
    assert_eq!(report.points_checked, 1);
}
