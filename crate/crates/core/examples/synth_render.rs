//! Renders a short synthetic sequence and writes it as 8-bit images.
//!
//! ```bash
//! cargo run -p photocal --example synth_render -- /tmp/photocal-render
//! ```

use std::path::PathBuf;

use photocal::io::write_pgm8;
use photocal::synth::{generate_scene, SceneSpec};

fn main() -> photocal::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("photocal-render"), PathBuf::from);
    let spec = SceneSpec {
        frames: 50,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec)?;
    for i in (0..scene.len()).step_by(5) {
        let frame = scene.render_frame(i);
        let mean = frame.image.as_slice().iter().map(|&m| m as f64).sum::<f64>() / frame.image.as_slice().len() as f64;
        println!(
            "frame {i:2}: exposure {:5.2} ms, mean level {mean:6.1}, over-exposed {:.2}%",
            frame.exposure.exposure,
            100.0 * scene.saturated_fraction[i]
        );
        write_pgm8(&out.join(format!("{i:06}.pgm")), &frame.image)?;
    }
    let depth = scene.depth_image(0);
    let (lo, hi) = depth
        .as_slice()
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &z| (a.min(z), b.max(z)));
    println!("depth range in frame 0: {lo:.2} .. {hi:.2}");
    println!("images written to {}", out.display());
    Ok(())
}
