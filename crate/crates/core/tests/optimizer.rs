use bb84_misalign::alignment::Alignment;
use bb84_misalign::infotheory::{ideal_keyrate, IDEAL_THRESHOLD_QBER};
use bb84_misalign::optimizer::{optimal_attack, sweep_eps, sweep_qber, sweep_theta, OptConfig, QSpec};
use bb84_misalign::oracle::verify_attack;
use bb84_misalign::probe::{validate, EQUALITY_TOL};

fn quick() -> OptConfig {
    OptConfig { starts: 8, ..OptConfig::default() }
}

#[test]
fn keyrate_falls_with_qber_and_never_beats_ideal() {
    let align = Alignment::symmetric_degrees(75.0).unwrap();
    let qs = [0.0, 0.03, 0.06, 0.09];
    let sweep = sweep_qber(&align, &qs, &quick()).unwrap();
    assert!(sweep.failures.is_empty());
    let rows = sweep.table.rows();
    assert!(rows.windows(2).all(|w| w[1].1 < w[0].1), "{rows:?}");
    for &(q, r) in rows {
        assert!(r <= ideal_keyrate(q).unwrap() + 1e-3, "q = {q}: {r}");
    }
}

#[test]
fn theta_sweep_is_symmetric_in_the_deviation() {
    let grid = [-30.0, -10.0, 10.0, 30.0];
    let sweep = sweep_theta(QSpec::FractionOfQ0(0.5), &grid, &quick()).unwrap();
    let r = sweep.table.rows();
    assert_eq!(r.len(), 4);
    assert!((r[0].1 - r[3].1).abs() < 1e-3 && (r[1].1 - r[2].1).abs() < 1e-3, "{r:?}");
    assert!(r[1].1 > r[0].1);
    assert!((QSpec::FractionOfQ0(0.5).resolve() - 0.5 * IDEAL_THRESHOLD_QBER).abs() < 1e-15);
}

#[test]
fn optimum_replays_exactly() {
    let align = Alignment::symmetric_degrees(80.0).unwrap();
    let p = optimal_attack(0.08, &align, &OptConfig::default()).unwrap();
    assert!(p.converged && p.best_start.is_some());
    assert!(validate(&p.gamma, &align).max_equality_residual() < EQUALITY_TOL);
    let report = verify_attack(&p.gamma, &align, 1e-8);
    assert!(report.all_passed(), "{}", report.to_text());
    assert!((p.q_ae() - 0.5 * (p.basis0.q_ae + p.basis1.q_ae)).abs() < 1e-15);
}

#[test]
fn worker_count_does_not_change_results() {
    let align = Alignment::symmetric_degrees(70.0).unwrap();
    let qs = [0.02, 0.05, 0.08];
    let one = sweep_qber(&align, &qs, &OptConfig { jobs: 1, ..quick() }).unwrap();
    let two = sweep_qber(&align, &qs, &OptConfig { jobs: 3, ..quick() }).unwrap();
    assert_eq!(one.table.to_text(), two.table.to_text());
}

#[test]
fn symmetric_weights_are_no_worse_than_a_small_grid() {
    let align = Alignment::symmetric_degrees(80.0).unwrap();
    let cfg = OptConfig { starts: 4, ..OptConfig::default() };
    let weights = [(0.0, 0.0, 0.0), (0.1, -0.1, 0.0), (0.0, 0.0, 0.1)];
    let pts = sweep_eps(0.06, &align, &weights, &cfg).unwrap();
    assert_eq!(pts.len(), 3);
    let sym = pts[0].r;
    assert!(pts.iter().all(|p| p.r >= sym - 1e-3), "{pts:?}");
}
