//! Writes a rendered sequence in the on-disk dataset layout with its
//! calibration files, then loads everything back.
//!
//! ```bash
//! cargo run -p photocal --example dataset_io
//! ```

use photocal::io::{read_response, read_vignette_image, write_response, write_vignette_image, DatasetLayout};
use photocal::synth::{generate_scene, SceneSpec};

fn main() -> photocal::Result<()> {
    let root = std::env::temp_dir().join("photocal-dataset");
    let scene = generate_scene(&SceneSpec {
        frames: 20,
        ..SceneSpec::default()
    })?;
    let layout = DatasetLayout::new(&root);
    let frames: Vec<_> = (0..scene.len()).map(|i| scene.render_frame(i)).collect();
    layout.write_frames(&frames)?;
    write_response(&layout.response_path(), &scene.response)?;
    write_vignette_image(&layout.vignette_path(), &scene.vignette, &scene.geometry())?;

    let loaded = layout.load_frames()?;
    let identical = loaded.iter().zip(&frames).all(|(a, b)| a.image == b.image && a.exposure == b.exposure);
    println!("{} frames in {}, identical after reload: {identical}", loaded.len(), root.display());
    let response = read_response(&layout.response_path())?;
    println!("response identical: {}", response == scene.response);
    let (map, model) = read_vignette_image(&layout.vignette_path(), &scene.geometry())?;
    println!(
        "vignette map {}x{}, fitted {:?} (true {:?})",
        map.width(),
        map.height(),
        model.coefficients(),
        scene.vignette.coefficients()
    );
    Ok(())
}
