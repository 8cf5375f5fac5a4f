//! Estimates the vignette from radially moving correspondences, then writes
//! it as a dense 16-bit map and fits the map back.
//!
//! ```bash
//! cargo run -p photocal --example vignette_fit
//! ```

use photocal::calibrator::{estimate_vignette, radial_coverage};
use photocal::io::{read_vignette_image, write_vignette_image};
use photocal::synth::{generate_scene, SceneSpec};

fn main() -> photocal::Result<()> {
    let scene = generate_scene(&SceneSpec {
        frames: 60,
        ..SceneSpec::default()
    })?;
    let frames: Vec<_> = (0..scene.len()).map(|i| scene.render_frame(i)).collect();
    let mut pairs = Vec::new();
    for i in (0..scene.len() - 12).step_by(3) {
        pairs.extend(
            scene
                .ground_truth_pairs(&frames[i], i, &frames[i + 12], i + 12, 5)
                .into_iter()
                .filter(|p| (p.r1 - p.r2).abs() >= 0.02),
        );
    }
    println!("{} radial pairs, coverage {:.2}", pairs.len(), radial_coverage(&pairs));
    // With the response known, the vignette is the only unknown.
    let estimate = estimate_vignette(&pairs, &scene.response)?;
    println!("estimated coefficients {:?}", estimate.coefficients());
    println!("true coefficients      {:?}", scene.vignette.coefficients());
    for r in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("V({r:.2}) = {:.4} (true {:.4})", estimate.eval(r)?, scene.vignette.eval(r)?);
    }

    let path = std::env::temp_dir().join("photocal-vignette.pgm");
    write_vignette_image(&path, &estimate, &scene.geometry())?;
    let (_, refit) = read_vignette_image(&path, &scene.geometry())?;
    println!("refit from {}: {:?}", path.display(), refit.coefficients());
    Ok(())
}
