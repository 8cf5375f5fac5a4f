//! Online calibration state machine driven frame by frame.

use photocal::calibrator::{CalibrationState, CalibratorConfig, Phase};
use photocal::synth::{generate_scene, SceneSpec, SyntheticScene};
use photocal::tracker::{SequenceTracker, TrackerConfig};
use photocal::Error;

fn scene(frames: usize, seed: u64) -> SyntheticScene {
    generate_scene(&SceneSpec {
        frames,
        seed,
        ..SceneSpec::default()
    })
    .unwrap()
}

/// Feeds every frame; returns the phase after each one.
fn drive(state: &mut CalibrationState, scene: &SyntheticScene) -> Vec<Phase> {
    let mut tracker = SequenceTracker::new(TrackerConfig::default(), 300);
    (0..scene.len())
        .map(|i| {
            let frame = scene.render_frame(i);
            tracker.push(&frame).unwrap();
            let tracks: Vec<_> = tracker.live_tracks().cloned().collect();
            state.feed_frame(&frame, &tracks).unwrap()
        })
        .collect()
}

#[test]
fn one_frame_leaves_the_state_collecting() {
    let sc = scene(1, 0);
    let mut state = CalibrationState::new(CalibratorConfig::default()).unwrap();
    assert_eq!(drive(&mut state, &sc), vec![Phase::CollectingCrf]);
    assert_eq!(state.pair_count(), 0);
    assert!(state.snapshot().is_none());
    assert!(matches!(state.finish(), Err(Error::NotReady(_))));
}

#[test]
fn out_of_order_frames_are_rejected() {
    let sc = scene(3, 0);
    let mut state = CalibrationState::new(CalibratorConfig::default()).unwrap();
    let (f0, f2) = (sc.render_frame(0), sc.render_frame(2));
    state.feed_frame(&f2, []).unwrap();
    assert!(matches!(state.feed_frame(&f0, []), Err(Error::Sequence(_))));
    assert!(matches!(state.feed_frame(&f2, []), Err(Error::Sequence(_))));
}

#[test]
fn phases_never_regress_and_frozen_is_terminal() {
    let sc = scene(200, 0);
    let mut state = CalibrationState::new(CalibratorConfig::default()).unwrap();
    let phases = drive(&mut state, &sc);
    assert!(phases.windows(2).all(|w| w[0] <= w[1]), "{phases:?}");
    assert_eq!(*phases.last().unwrap(), Phase::Frozen);
    let frozen = state.finish().unwrap();
    assert!(frozen.is_frozen());
    assert!(frozen.report().is_some());

    // More frames after the freeze change nothing.
    let before = state.snapshot().cloned();
    let later = scene(200, 0);
    let extra = photocal::photometry::Frame::new(
        later.render_frame(199).image,
        photocal::photometry::ExposureRecord::new(500, 99.0, 3.0).unwrap(),
    )
    .unwrap();
    assert_eq!(state.feed_frame(&extra, []).unwrap(), Phase::Frozen);
    assert_eq!(state.snapshot().cloned(), before);
}

#[test]
fn identical_inputs_give_identical_snapshots() {
    let sc = scene(120, 2);
    let run = || {
        let mut state = CalibrationState::new(CalibratorConfig::default()).unwrap();
        drive(&mut state, &sc);
        (state.response().cloned(), state.vignette().copied(), state.log().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn invalid_thresholds_are_config_errors() {
    let bad = CalibratorConfig {
        pass_fraction: 0.0,
        ..CalibratorConfig::default()
    };
    assert!(matches!(CalibrationState::new(bad), Err(Error::Config(_))));
}
