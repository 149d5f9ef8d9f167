mod common;

use common::Stepper;
use hybridsim::mobility::{Field, MobilityConfig, MotionState, Phase, Point, MIN_SPEED};
use hybridsim::sim::RandomSource;
use proptest::prelude::*;

fn cfg(v_min: f64, v_max: f64) -> MobilityConfig {
    MobilityConfig {
        field: Field {
            width: 600.0,
            height: 1200.0,
        },
        v_min,
        v_max,
        pause_len: 10.0,
        move_window: 50.0,
        mobility_ratio: 1.0,
    }
}

#[test]
fn trajectory_matches_fine_step_integration() {
    let c = cfg(0.0, 10.0);
    let root = RandomSource::new(42);
    let mut legs = 0;
    for node in 0..4u64 {
        let start = Point::new(100.0 + 100.0 * node as f64, 300.0 + 150.0 * node as f64);
        let mut model_rng = root.substream(node);
        let mut ms = MotionState::mobile(start, 0.0, &c, &mut model_rng);
        let mut oracle = Stepper::new(start, c.clone(), root.substream(node));
        let mut worst: f64 = 0.0;
        // 1 ms steps for 2000 s, compared every 0.25 s.
        for i in 1..=2_000_000u64 {
            oracle.step(0.001);
            if i % 250 == 0 {
                let t = i as f64 * 0.001;
                ms = ms.advance(t, &c, &mut model_rng);
                let p = ms.position_at(t);
                worst = worst.max(p.distance(&oracle.pos));
            }
        }
        assert!(worst < 1e-6, "node {node}: deviation {worst} m");
        legs += ms.legs();
    }
    // Slow legs are long with v_min = 0; still expect plenty of transitions.
    assert!(legs >= 12, "only {legs} legs");
}

/// Speeds of successive legs of one node over `horizon` seconds.
fn leg_speeds(c: &MobilityConfig, rng: &mut RandomSource, horizon: f64, out: &mut Vec<f64>) {
    let mut ms = MotionState::mobile(c.field.center(), 0.0, c, rng);
    let mut legs = ms.legs();
    out.push(ms.speed());
    while let Some(t) = ms.next_transition() {
        if t > horizon {
            break;
        }
        ms = ms.advance(t, c, rng);
        if ms.legs() != legs {
            legs = ms.legs();
            out.push(ms.speed());
        }
    }
}

#[test]
fn speed_draws_are_uniform() {
    for (lo, hi) in [(0.0, 10.0), (0.0, 5.0), (2.0, 8.0)] {
        let c = cfg(lo, hi);
        let root = RandomSource::new(7);
        let mut speeds = Vec::new();
        let mut node = 0;
        while speeds.len() < 60_000 {
            leg_speeds(&c, &mut root.substream(node), 20_000.0, &mut speeds);
            node += 1;
        }
        let n = speeds.len() as f64;
        let mean = speeds.iter().sum::<f64>() / n;
        let var = speeds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want_mean = (lo + hi) / 2.0;
        let want_var = (hi - lo).powi(2) / 12.0;
        assert!((mean - want_mean).abs() / want_mean < 0.02, "[{lo},{hi}] mean {mean}");
        assert!((var - want_var).abs() / want_var < 0.02, "[{lo},{hi}] variance {var}");
        assert!(speeds.iter().all(|&v| v >= lo && v <= hi));
    }
}

#[test]
fn long_run_density_is_center_biased() {
    let c = cfg(0.0, 10.0);
    let center = c.field.center();
    let root = RandomSource::new(11);
    let mut mobile_sum = 0.0;
    let mut samples = 0.0;
    let mut inner = 0.0;
    for node in 0..10 {
        let mut rng = root.substream(node);
        let mut ms = MotionState::mobile(Point::new(10.0, 10.0), 0.0, &c, &mut rng);
        for i in 1..=10_000 {
            let t = i as f64;
            ms = ms.advance(t, &c, &mut rng);
            let p = ms.position_at(t);
            mobile_sum += p.distance(&center);
            if (p.x - center.x).abs() < c.field.width / 6.0 && (p.y - center.y).abs() < c.field.height / 6.0 {
                inner += 1.0;
            }
            samples += 1.0;
        }
    }
    // Uniformly placed static nodes, estimated from a separate stream.
    let mut uni = RandomSource::new(12);
    let n = 200_000;
    let uniform_sum: f64 = (0..n)
        .map(|_| Point::new(c.field.width * uni.unit(), c.field.height * uni.unit()).distance(&center))
        .sum();
    let mobile_mean = mobile_sum / samples;
    let uniform_mean = uniform_sum / n as f64;
    assert!(
        mobile_mean < 0.95 * uniform_mean,
        "mobile {mobile_mean} vs uniform {uniform_mean}"
    );
    // The central ninth of the field holds more than a ninth of the time.
    assert!(inner / samples > 1.3 / 9.0, "central share {}", inner / samples);
}

#[test]
fn zero_speed_means_static() {
    let c = cfg(0.0, 0.0);
    let mut rng = RandomSource::new(3);
    let ms = MotionState::mobile(Point::new(5.0, 5.0), 0.0, &c, &mut rng);
    assert_eq!(ms.phase(), Phase::Stationary);
    assert_eq!(ms.next_transition(), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn positions_stay_in_field_and_speeds_in_range(
        seed in any::<u64>(),
        v_min in 0.0f64..5.0,
        span in 0.0f64..15.0,
        pause in 0.0f64..20.0,
        window in 1.0f64..80.0,
    ) {
        let mut c = cfg(v_min, v_min + span);
        c.pause_len = pause;
        c.move_window = window;
        let mut rng = RandomSource::new(seed);
        let start = Point::new(600.0 * rng.unit(), 1200.0 * rng.unit());
        let mut ms = MotionState::mobile(start, 0.0, &c, &mut rng);
        let mut prev = start;
        for i in 1..=2000 {
            let t = i as f64 * 0.5;
            ms = ms.advance(t, &c, &mut rng);
            let p = ms.position_at(t);
            prop_assert!(c.field.contains(&p), "{:?} outside", p);
            if ms.phase() == Phase::Moving && ms.is_mobile() {
                prop_assert!(ms.speed() >= c.v_min.max(MIN_SPEED) - 1e-12 && ms.speed() <= c.v_max + 1e-12);
            }
            // Displacement over half a second never exceeds v_max / 2.
            prop_assert!(p.distance(&prev) <= c.v_max * 0.5 + 1e-9);
            prev = p;
        }
    }
}
