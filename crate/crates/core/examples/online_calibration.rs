//! Runs the tracker and the online calibrator over a rendered sequence and
//! compares the frozen snapshot with the ground truth.
//!
//! ```bash
//! cargo run -p photocal --example online_calibration
//! ```

use std::time::Instant;

use photocal::calibrator::{run_online, CalibratorConfig};
use photocal::synth::{generate_scene, SceneSpec};
use photocal::tracker::TrackerConfig;

fn main() -> photocal::Result<()> {
    let scene = generate_scene(&SceneSpec::default())?;
    let start = Instant::now();
    let frames = (0..scene.len()).map(|i| Ok(scene.render_frame(i)));
    let outcome = run_online(frames, TrackerConfig::default(), 300, CalibratorConfig::default())?;
    let elapsed = start.elapsed();

    for (i, line) in outcome.state.log().iter().enumerate().step_by(10) {
        println!("frame {i:3}: {line}");
    }
    println!(
        "same-radius pairs {}, radial pairs {}, refinements {}",
        outcome.state.same_radius_pairs().len(),
        outcome.state.radial_pairs().len(),
        outcome.state.refinements()
    );
    if let Some(ir) = outcome.state.response() {
        let err = ir
            .lut()
            .iter()
            .zip(scene.response.lut())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("response max abs error: {err:.4}");
    }
    if let Some(v) = outcome.state.vignette() {
        let rmse = ((0..100)
            .map(|i| {
                let r = i as f64 / 99.0;
                (v.eval(r).unwrap() - scene.vignette.eval(r).unwrap()).powi(2)
            })
            .sum::<f64>()
            / 100.0)
            .sqrt();
        println!("vignette {:?}, rmse {rmse:.4}", v.coefficients());
    }
    match outcome.state.finish() {
        Ok(snapshot) => println!(
            "frozen at frame {:?}: {:?}",
            outcome.frozen_at,
            snapshot.report()
        ),
        Err(e) => println!("not frozen: {e}"),
    }
    println!("elapsed {elapsed:.2?}");
    Ok(())
}
