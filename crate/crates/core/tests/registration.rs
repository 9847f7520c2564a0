//! Large-motion behaviour on a reduced default-family phantom: zero-start
//! registration jumps tags, the accumulated-velocity start does not.

use tagflow::eval::{detect_tag_jump, endpoint_error};
use tagflow::harp::{extract_phase_set, HarpFilterSpec, PhaseSet};
use tagflow::phantom::{Phantom, PhantomConfig};
use tagflow::pvira::{register, PviraParams};
use tagflow::strategies::accumulate_velocities;

fn phantom() -> Phantom {
    PhantomConfig {
        dims: [32, 32, 12],
        ..PhantomConfig::default()
    }
    .build()
    .unwrap()
}

fn phases(ph: &Phantom) -> Vec<PhaseSet> {
    let specs = [0, 1, 2].map(|a| HarpFilterSpec::for_tag(ph.pattern.period(a), a).unwrap());
    (1..=ph.frames())
        .map(|n| extract_phase_set(&ph.render(n).unwrap(), specs).unwrap())
        .collect()
}

#[test]
fn warm_start_avoids_the_tag_jump_of_a_zero_start() {
    let ph = phantom();
    let seq = phases(&ph);
    let last = ph.frames();
    let params = PviraParams::default();
    let voxel = ph.grid.min_spacing();
    let truth = ph.ground_truth(last).unwrap();
    let onset = ph.jump_onset_frame().unwrap();
    assert!(onset < last);

    let cold = register(&seq[0], &seq[last - 1], &params, None).unwrap();
    let cold_epe = endpoint_error(&cold.forward, &truth, 3).unwrap();
    // Tag jumping: somewhere the error along the dominant direction is a
    // whole tag period or more.
    let period = ph.pattern.period(0);
    let worst_x = cold
        .forward
        .values()
        .iter()
        .zip(truth.values())
        .map(|(e, t)| (e[0] - t[0]).abs())
        .fold(0.0, f64::max);
    assert!(worst_x > period, "{worst_x}");
    assert!(detect_tag_jump(&cold.forward, &truth, &ph.pattern, 3).unwrap().overall() > 0.05);

    let pairs: Vec<_> = seq
        .windows(2)
        .map(|w| register(&w[0], &w[1], &params, None).unwrap().velocity)
        .collect();
    let init = accumulate_velocities(&pairs).unwrap();
    let warm = register(&seq[0], &seq[last - 1], &params, Some(&init)).unwrap();
    let warm_epe = endpoint_error(&warm.forward, &truth, 3).unwrap();
    assert!(warm_epe.median_mm < 0.5 * voxel, "{}", warm_epe.median_mm);
    assert!(cold_epe.median_mm >= 5.0 * warm_epe.median_mm);
    assert!(detect_tag_jump(&warm.forward, &truth, &ph.pattern, 3).unwrap().overall() < 0.005);
}
