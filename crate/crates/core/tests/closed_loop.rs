use veloshield_core::certificates::ConditionKind;
use veloshield_core::*;

/// Double-integrator course with one obstacle, so the barrier and the safe
/// velocity are continuous (closest-obstacle switching makes `q_dot_s` jump).
fn one_obstacle(k: f64) -> Scenario {
    let mut s = bundled("double_integrator_alpha_0.1").unwrap();
    s.barrier = scenario::BarrierSpec::Distance {
        obstacles: vec![Obstacle::new([3.0, 0.3], 1.0).unwrap()],
    };
    s.controller = ControllerGains::ComputedTorque {
        k: GainMatrix::Scalar(k),
    };
    s
}

fn shortened(name: &str, duration: f64) -> Scenario {
    let mut s = bundled(name).unwrap();
    s.sim.duration = duration;
    s
}

#[test]
fn every_bundled_scenario_runs() {
    for (name, _) in BUNDLED {
        let log = simulate(&shortened(name, 2.0)).unwrap();
        assert_eq!(log.records.len(), 2001, "{name}");
        assert!(log.records.iter().all(|r| r.h_v.is_finite()), "{name}");
    }
}

#[test]
fn halving_the_step_changes_little() {
    for name in ["planar_segway_wall", "spatial_segway_course", "double_integrator_alpha_0.1"] {
        let s = shortened(name, 3.0);
        let mut fine = s.clone();
        fine.sim.step /= 2.0;
        let (a, b) = (simulate(&s).unwrap(), simulate(&fine).unwrap());
        let (ra, rb) = (a.records.last().unwrap(), b.records.last().unwrap());
        assert_eq!(ra.t, rb.t);
        let gap = ra
            .q
            .iter()
            .zip(&rb.q)
            .chain(ra.qdot.iter().zip(&rb.qdot))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-6, "{name}: {gap:e}");
    }
}

#[test]
fn computed_torque_error_decays_through_filter_switches() {
    let mut s = one_obstacle(2.0);
    s.initial.qdot = vec![0.6, 0.3];
    let log = simulate(&s).unwrap();
    let constrained = log.records.iter().filter(|r| {
        let q = nalgebra::DVector::from_column_slice(&r.q);
        let desired = desired_velocity(&s.desired, &q).unwrap();
        (desired - nalgebra::DVector::from_column_slice(&r.qdot_s)).norm() > 1e-9
    });
    assert!(constrained.count() > 100);
    let report = clf_cbf_condition_check(
        ConditionKind::Clf {
            lambda: log.certificate.lambda,
        },
        &log.times(),
        &log.v(),
        1e-5,
    )
    .unwrap();
    assert!(report.passed(), "worst margin {}", report.worst_margin);
    // Exact error dynamics: V(t) = V(0) exp(-k t) for D = I and K = 2 I.
    for r in log.records.iter().step_by(1000) {
        let expected = log.records[0].v * (-2.0 * r.t).exp();
        assert!((r.v - expected).abs() < 1e-6 * (1.0 + log.records[0].v), "t = {}", r.t);
    }
}

#[test]
fn safe_run_keeps_extended_set_under_exact_tracking() {
    let s = one_obstacle(1.0);
    let log = simulate(&s).unwrap();
    assert!(log.certificate.theorem_applicable);
    assert!(log.initial.in_s_v);
    let min_hv = log.records.iter().map(|r| r.h_v).fold(f64::INFINITY, f64::min);
    assert!(min_hv >= -1e-9, "{min_hv}");
}

#[test]
fn sampled_membership_implications() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100_000 {
        let alpha = rng.random_range(0.01..2.0);
        let lambda = rng.random_range(0.01..4.0);
        let cert = certificate(alpha, lambda, rng.random_range(0.1..3.0), rng.random_range(0.1..3.0), 1.0)
            .with_disturbance(rng.random_range(0.0..2.0));
        let h = rng.random_range(-3.0..3.0);
        let v = rng.random_range(0.0..3.0);
        let m = membership_from_values(&cert, h, v, cert.disturbance_bound);
        if cert.theorem_applicable && m.in_s_v {
            assert!(m.in_s);
        }
        if m.in_s {
            assert!(m.in_s_d);
        }
        if m.in_s_v {
            assert!(m.in_s_vd);
        }
    }
}
