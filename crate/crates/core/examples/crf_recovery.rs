//! Recovers the inverse response from exact correspondences between frames
//! of different exposure and compares it with the truth.
//!
//! ```bash
//! cargo run -p photocal --example crf_recovery
//! ```

use photocal::calibrator::estimate_crf;
use photocal::synth::{generate_scene, ResponseFamily, SceneSpec};

fn main() -> photocal::Result<()> {
    let scene = generate_scene(&SceneSpec {
        frames: 60,
        response: ResponseFamily::Gamma(2.2),
        ..SceneSpec::default()
    })?;
    let frames: Vec<_> = (0..scene.len()).map(|i| scene.render_frame(i)).collect();
    let mut pairs = Vec::new();
    for i in (0..scene.len() - 10).step_by(2) {
        // Same-radius pairs cancel the vignette.
        pairs.extend(
            scene
                .ground_truth_pairs(&frames[i], i, &frames[i + 10], i + 10, 5)
                .into_iter()
                .filter(|p| (p.r1 - p.r2).abs() < 0.02),
        );
    }
    let estimate = estimate_crf(&pairs)?;
    println!("{} correspondence pairs", pairs.len());
    println!("  M   estimate   truth");
    for m in (0..=255).step_by(32).chain([255]) {
        println!("{m:3}   {:.4}     {:.4}", estimate.lut()[m], scene.response.lut()[m]);
    }
    let err = estimate
        .lut()
        .iter()
        .zip(scene.response.lut())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max abs error {err:.4}");
    Ok(())
}
