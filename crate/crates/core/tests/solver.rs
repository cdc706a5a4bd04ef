mod common;

use std::time::Instant;

use common::heart;
use hemo::solver::{run_simulation, ProbeRequest, Quantity, SolverConfig};
use hemo::vascular::reference_network;

#[test]
fn smooth_pulse_converges_at_second_order() {
    let (errors, orders) = common::convergence_orders();
    println!("L1 errors {errors:?}, orders {orders:?}");
    assert!(orders.iter().all(|&p| p >= 1.8), "orders {orders:?}");
}

#[test]
fn foot_to_foot_speed_matches_analytic() {
    let (measured, analytic) = common::measured_wave_speed();
    println!("measured {measured:.4} m/s, analytic {analytic:.4} m/s");
    assert!((measured / analytic - 1.0).abs() < 0.05);
}

#[test]
fn ten_beats_conserve_mass_and_run_fast() {
    let net = reference_network();
    let cfg = SolverConfig {
        duration: 8.0,
        periodicity_tolerance: 0.0,
        ..Default::default()
    };
    let probes = [ProbeRequest::new("r_radial", 0.5, Quantity::Pressure)];
    let start = Instant::now();
    let r = run_simulation(&net, &heart(75.0, 70.0), &cfg, &probes).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    println!("10 beats: {} steps in {elapsed:.2} s, drift {:.3e}", r.steps, r.mass.relative_drift());
    assert_eq!(r.beats_simulated, 10);
    assert!(r.mass.relative_drift() < 1e-8);
    assert!(elapsed < 30.0);
}

#[test]
fn constant_inflow_reaches_rcr_steady_state() {
    let (got, expected) = common::rcr_steady_state();
    println!("terminal pressure {got:.3} Pa, expected {expected:.3} Pa");
    assert!((got / expected - 1.0).abs() < 0.005);
}

#[test]
fn beat_to_beat_change_decays_monotonically() {
    let cfg = SolverConfig {
        duration: 12.0,
        periodicity_tolerance: 0.0,
        ..Default::default()
    };
    let r = run_simulation(&reference_network(), &heart(75.0, 70.0), &cfg, &[]).unwrap();
    println!("beat deltas (Pa): {:?}", r.beat_deltas);
    let tail = &r.beat_deltas[3..];
    assert!(tail.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.beat_deltas);
}

#[test]
fn reference_network_reaches_periodicity() {
    let probes = [
        ProbeRequest::new("l_radial", 0.5, Quantity::Pressure),
        ProbeRequest::new("aorta", 0.0, Quantity::Pressure),
    ];
    let r = run_simulation(&reference_network(), &heart(75.0, 70.0), &SolverConfig::default(), &probes).unwrap();
    let mmhg = |p: f64| p / 133.322_387_415;
    let rad = &r.last_beat[0];
    let aor = &r.last_beat[1];
    let max = |s: &[f64]| s.iter().cloned().fold(f64::MIN, f64::max);
    let min = |s: &[f64]| s.iter().cloned().fold(f64::MAX, f64::min);
    println!(
        "converged {} after {} beats; radial {:.1}/{:.1} mmHg, aortic {:.1}/{:.1} mmHg",
        r.converged,
        r.beats_simulated,
        mmhg(max(rad)),
        mmhg(min(rad)),
        mmhg(max(aor)),
        mmhg(min(aor))
    );
    assert!(r.converged);
    assert!(r.max_beat_delta < 0.5 * 133.322_387_415);
    assert!(max(rad) > max(aor), "pulse pressure amplifies toward the periphery");
}
