use std::path::Path;

use nalgebra::Vector3;
use tempfile::TempDir;

use super::*;
use crate::camera::PoseSE3;
use crate::error::Error;
use crate::eval::Trajectory;
use crate::image::Image;
use crate::photometry::{ExposureRecord, InverseResponse, RadialGeometry, VignetteModel};

fn write(dir: &TempDir, name: &str, contents: &[u8]) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

#[test]
fn times_example_line() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "times.txt", b"# id t e\n0 1234.5 5.0\n");
    let r = read_times(&p).unwrap();
    assert_eq!(r, vec![ExposureRecord::new(0, 1234.5, 5.0).unwrap()]);
}

#[test]
fn times_round_trip_is_exact() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("times.txt");
    let recs: Vec<ExposureRecord> = (0..50)
        .map(|i| ExposureRecord::new(i * 3, 0.1 + i as f64 / 30.0, (1.0 + i as f64).ln() * 2.7 + 0.1).unwrap())
        .collect();
    write_times(&p, &recs).unwrap();
    assert_eq!(read_times(&p).unwrap(), recs);
}

#[test]
fn negative_exposure_is_rejected_at_its_line() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "times.txt", b"0 0.0 5.0\n\n1 0.1 -1\n");
    assert!(matches!(read_times(&p), Err(Error::InvalidValue { line: 3, .. })));
}

#[test]
fn identity_response_from_integer_ramp() {
    let dir = TempDir::new().unwrap();
    let text: Vec<String> = (0..256).map(|i| i.to_string()).collect();
    let p = write(&dir, "pcalib.txt", text.join(" ").as_bytes());
    let r = read_response(&p).unwrap();
    for (i, v) in r.lut().iter().enumerate() {
        assert!((v - i as f64 / 255.0).abs() < 1e-15);
    }
}

#[test]
fn response_round_trip_is_exact() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("pcalib.txt");
    let r = InverseResponse::gamma(2.2);
    write_response(&p, &r).unwrap();
    assert_eq!(read_response(&p).unwrap(), r);
}

#[test]
fn response_with_255_values_is_a_format_error() {
    let dir = TempDir::new().unwrap();
    let text: Vec<String> = (0..255).map(|i| i.to_string()).collect();
    let p = write(&dir, "pcalib.txt", text.join(" ").as_bytes());
    assert!(matches!(read_response(&p), Err(Error::Format { .. })));
}

#[test]
fn pgm_round_trips_at_both_depths() {
    let dir = TempDir::new().unwrap();
    let img8 = Image::from_fn(7, 5, |x, y| (x * 37 + y * 11) as u8);
    let p8 = dir.path().join("a.pgm");
    write_pgm8(&p8, &img8).unwrap();
    assert_eq!(read_pgm8(&p8).unwrap(), img8);

    let img16 = Image::from_fn(7, 5, |x, y| (x * 9001 + y * 257) as u16);
    let p16 = dir.path().join("b.pgm");
    write_pgm16(&p16, &img16).unwrap();
    assert_eq!(read_pgm16(&p16).unwrap(), img16);
    // Big-endian samples right after the header.
    let bytes = std::fs::read(&p16).unwrap();
    let header = b"P5\n7 5\n65535\n".len();
    assert_eq!(&bytes[header..header + 4], &[0, 0, 0x23, 0x29]);
}

#[test]
fn eight_bit_input_is_not_a_vignette_map() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("v.pgm");
    write_pgm8(&p, &Image::filled(8, 8, 200u8)).unwrap();
    let g = RadialGeometry::centered(8, 8);
    assert!(matches!(read_vignette_image(&p, &g), Err(Error::Format { .. })));
}

#[test]
fn saturated_map_fits_the_unit_vignette() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("v.pgm");
    write_pgm16(&p, &Image::filled(64, 48, u16::MAX)).unwrap();
    let (map, model) = read_vignette_image(&p, &RadialGeometry::centered(64, 48)).unwrap();
    assert!(map.as_slice().iter().all(|&v| v == 1.0));
    assert!(model.coefficients().iter().all(|c| c.abs() < 1e-9));
}

#[test]
fn synthesized_map_refits_its_coefficients() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("v.pgm");
    let g = RadialGeometry::centered(320, 240);
    let truth = VignetteModel::new(-0.3, 0.0, 0.0).unwrap();
    write_vignette_image(&p, &truth, &g).unwrap();
    let (map, model) = read_vignette_image(&p, &g).unwrap();
    for (c, t) in model.coefficients().iter().zip(truth.coefficients()) {
        assert!((c - t).abs() < 1e-3, "{:?}", model.coefficients());
    }
    // The dense map survives another write/read unchanged.
    let q = dir.path().join("w.pgm");
    write_pgm16(&q, &read_pgm16(&p).unwrap()).unwrap();
    assert_eq!(read_vignette_image(&q, &g).unwrap().0, map);
}

#[test]
fn trajectory_round_trip_is_exact() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("traj.txt");
    let samples = (0..20)
        .map(|i| {
            let t = i as f64 / 30.0;
            let pose = PoseSE3::from_translation_axis_angle(
                Vector3::new(t.sin(), 0.3 * t, -t * t),
                Vector3::new(0.1 * t, -0.05, 0.2 * t.cos()),
            );
            (t, pose)
        })
        .collect();
    let traj = Trajectory::new(samples).unwrap();
    write_trajectory(&p, &traj).unwrap();
    assert_eq!(read_trajectory(&p).unwrap(), traj);
}

#[test]
fn tracks_round_trip_is_exact() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("tracks.txt");
    let rows = vec![(0, 0, 1.25, 7.5), (0, 1, 1.5 + 1e-9, 7.0 / 3.0), (4, 1, 100.0, 0.1)];
    write_tracks(&p, &rows).unwrap();
    assert_eq!(read_tracks(&p).unwrap(), rows);
}

fn layout_with_frames(dir: &Path, n: u64) -> DatasetLayout {
    let layout = DatasetLayout::new(dir);
    let frames: Vec<_> = (0..n)
        .map(|i| {
            let img = Image::from_fn(20, 16, |x, y| (x * 5 + y * 3 + i as usize) as u8);
            crate::photometry::Frame::new(img, ExposureRecord::new(i, i as f64 * 0.05, 2.0 + i as f64).unwrap())
                .unwrap()
        })
        .collect();
    layout.write_frames(&frames).unwrap();
    layout
}

#[test]
fn dataset_round_trip_and_count_check() {
    let dir = TempDir::new().unwrap();
    let layout = layout_with_frames(dir.path(), 4);
    assert!(layout.image_path(3).ends_with("images/000003.pgm"));
    let frames = layout.load_frames().unwrap();
    assert_eq!(frames.len(), 4);
    assert_eq!(frames[2].exposure.exposure, 4.0);

    std::fs::remove_file(layout.image_path(1)).unwrap();
    assert!(matches!(layout.records(), Err(Error::Format { .. })));
}
