use std::f64::consts::PI;

use qrm_core::hilbert::SystemParams;
use qrm_core::meanfield::{self, Branch, MfState, SettleOptions, Settlement, Stability};

fn fig2(lambda_ratio: f64) -> SystemParams {
    SystemParams::with_lambda_ratio(1.0, 1200.0, lambda_ratio, 0.5, 0.05).unwrap()
}

#[test]
fn critical_coupling_closed_forms() {
    let unit = SystemParams::new(1.0, 8.0, 1.0, 0.0, 0.0).unwrap();
    assert!((meanfield::critical_coupling(&unit) - 2.0).abs() < 1e-14);
    let damped = SystemParams::new(1.0, 8.0, 1.0, 0.5, 0.0).unwrap();
    assert!((meanfield::critical_coupling(&damped) - 2.0 * 1.25f64.sqrt()).abs() < 1e-14);
    let lc = meanfield::critical_coupling(&fig2(1.0));
    assert!((lc * lc - 750.0).abs() < 5e-4);
}

#[test]
fn right_hand_side_by_substitution() {
    let p = SystemParams::new(1.0, 5.0, 0.0, 0.5, 0.05).unwrap();
    let d = meanfield::rhs(&p, &MfState { x: 1.0, ..MfState::NORMAL });
    assert!((d.x + 0.5).abs() < 1e-15);
    assert!((d.p + 1.0).abs() < 1e-15);
    assert!(meanfield::rhs(&fig2(1.4), &MfState::NORMAL).max_abs() < 1e-15);
}

#[test]
fn fixed_points_at_the_reference_parameters() {
    let np: Vec<_> = meanfield::fixed_points(&fig2(0.6)).into_iter().filter(|f| f.physical).collect();
    assert_eq!(np.len(), 1);
    assert_eq!(np[0].state, MfState::NORMAL);

    let p = fig2(1.4);
    let fps = meanfield::fixed_points(&p);
    for f in fps.iter().filter(|f| f.physical) {
        assert!(meanfield::rhs(&p, &f.state).max_abs() < 1e-10);
    }
    let plus = fps.iter().find(|f| f.branch == Branch::ParityBreakingPlus).unwrap().state;
    let minus = fps.iter().find(|f| f.branch == Branch::ParityBreakingMinus).unwrap().state;
    let lc = meanfield::critical_coupling(&p);
    assert!((plus.sz + lc * lc / (p.lambda * p.lambda)).abs() < 1e-12);
    assert!((plus.sz + 0.63776).abs() < 1e-5);
    assert!((plus.sx.abs() - 0.6797).abs() < 5e-5);
    assert!((plus.x.abs() - 18.65).abs() < 5e-3);
    let ratio = -(p.lambda / p.omega0) / (1.0 + p.kappa * p.kappa);
    assert!((plus.x / plus.sx - ratio).abs() < 1e-10);
    assert!(plus.x * minus.x < 0.0);
    assert!(plus.parity_image().distance(&minus) < 1e-12);
}

#[test]
fn stability_claims() {
    let below = meanfield::fixed_points(&fig2(0.6));
    assert_eq!(below[0].stability, Some(Stability::Stable));
    let above = meanfield::fixed_points(&fig2(1.4));
    let saddle = above.iter().find(|f| f.branch == Branch::ParityPreserving).unwrap();
    assert_eq!(saddle.stability, Some(Stability::Saddle));
    assert_eq!(saddle.eigenvalues.unwrap().iter().filter(|z| z.re > 0.0).count(), 1);
    let pb: Vec<_> = above.iter().filter(|f| f.branch != Branch::ParityPreserving).collect();
    assert!(pb.iter().all(|f| f.stability == Some(Stability::Stable)));
    let mut a: Vec<f64> = pb[0].eigenvalues.unwrap().iter().map(|z| z.re).collect();
    let mut b: Vec<f64> = pb[1].eigenvalues.unwrap().iter().map(|z| z.re).collect();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
}

#[test]
fn quench_protocols() {
    let s = meanfield::quench_np(10.0, PI / 7.0);
    assert!((s.x - 10.0 * (2.0 * PI / 7.0).cos()).abs() < 1e-14);
    assert!((s.p - 10.0 * (2.0 * PI / 7.0).sin()).abs() < 1e-14);
    let fp = meanfield::fixed_points(&fig2(1.4))[1].state;
    assert_eq!(meanfield::quench_smp(&fp, 0.0), fp);
    let flipped = meanfield::quench_smp(&fp, PI);
    assert!((flipped.sx + fp.sx).abs() < 1e-12 && (flipped.sz + fp.sz).abs() < 1e-12);
}

#[test]
fn normal_phase_quench_flows_back() {
    let p = fig2(0.6);
    let traj = meanfield::integrate(&p, meanfield::quench_np(10.0, PI / 7.0), 300.0, 1e-9, 3).unwrap();
    let at100 = traj.states[1];
    assert!(at100.x.abs() < 1e-6 && at100.p.abs() < 1e-6, "{at100:?}");
    // spin coherences relax at rate γ, so the full state needs longer
    assert!(traj.states[3].distance(&MfState::NORMAL) < 1e-6);
    let still = meanfield::integrate(&p, MfState::NORMAL, 10.0, 1e-9, 10).unwrap();
    assert!(still.states.iter().all(|s| *s == MfState::NORMAL));
}

#[test]
fn superradiant_quenches_settle_on_a_parity_breaking_point() {
    let p = SystemParams::with_lambda_ratio(1.0, 50.0, 1.4, 0.5, 0.05).unwrap();
    let fp = meanfield::fixed_points(&p).into_iter().find(|f| f.branch == Branch::ParityBreakingMinus).unwrap().state;
    let opts = SettleOptions::default();
    for k in 1..=6 {
        let theta = k as f64 * PI / 7.0;
        for s0 in [meanfield::quench_np(10.0, theta), meanfield::quench_smp(&fp, theta)] {
            match meanfield::settle(&p, s0, &opts).unwrap() {
                Settlement::Settled { branch, .. } => assert_ne!(branch, Branch::ParityPreserving),
                Settlement::Unresolved { final_state } => panic!("θ = {theta}: unresolved at {final_state:?}"),
            }
        }
    }
}

