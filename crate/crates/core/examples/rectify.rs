//! Rectifies rendered frames with the true calibration and checks the
//! recovered radiance against the renderer.
//!
//! ```bash
//! cargo run -p photocal --example rectify
//! ```

use photocal::photometry::{rectify_frame, CalibrationSnapshot};
use photocal::synth::{generate_scene, SceneSpec};

fn main() -> photocal::Result<()> {
    let scene = generate_scene(&SceneSpec {
        frames: 50,
        noise_sigma: 0.0,
        ..SceneSpec::default()
    })?;
    let snapshot = CalibrationSnapshot::trusted(scene.response.clone(), scene.vignette);
    for i in [0, 12, 25] {
        let frame = scene.render_frame(i);
        let out = rectify_frame(&frame, &snapshot)?;
        let truth = scene.radiance_image(i);
        let mut worst: f64 = 0.0;
        let mut valid = 0;
        for (k, (&v, &ok)) in out.values.as_slice().iter().zip(out.valid.as_slice()).enumerate() {
            if ok {
                worst = worst.max((v - truth.as_slice()[k]).abs());
                valid += 1;
            }
        }
        println!(
            "frame {i:2} (exposure {:.2} ms): {valid} valid pixels, max radiance error {:.3}/255",
            frame.exposure.exposure,
            255.0 * worst
        );
    }
    Ok(())
}
