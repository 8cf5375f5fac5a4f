use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::config::{ensure, scene_cfg, scene_spec, KeyValues, SceneOverrides};
use super::{CalibrateArgs, EvalArgs, PoseArgs, RectifyArgs, SynthArgs};
use crate::calibrator::{run_online, CalibratorConfig};
use crate::camera::PoseSE3;
use crate::error::{Error, Result};
use crate::eval::{cumulative_curve, evaluate_run, AlignMode, Trajectory, ASSOCIATION_TOLERANCE};
use crate::image::Image;
use crate::io::{
    read_response, read_trajectory, read_vignette_image, write_file, write_pgm16, write_pgm8, write_response,
    write_trajectory, write_vignette_image, DatasetLayout,
};
use crate::photometry::{rectify_frame, CalibrationSnapshot, Frame, InverseResponse, RadialGeometry};
use crate::pose::scenario::{select_points, tracked_keypoints};
use crate::pose::{intensity_image, optimize_pose, HuberThresholds, PoseConfig, SceneObservation};
use crate::synth::generate_scene;
use crate::tracker::TrackerConfig;

/// Tracks kept alive by the calibration front-end.
const DEFAULT_MAX_TRACKS: usize = 300;

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut kv = KeyValues::load(args.config.as_deref())?;
    let spec = scene_spec(&(&args.scene).into(), &mut kv)?;
    kv.finish()?;
    let scene = generate_scene(&spec)?;
    let layout = DatasetLayout::new(&args.out);
    let frames: Vec<Frame> = (0..scene.len()).map(|i| scene.render_frame(i)).collect();
    layout.write_frames(&frames)?;

    let gt = layout.ground_truth_dir();
    write_response(&gt.join("pcalib.txt"), &scene.response)?;
    write_vignette_image(&gt.join("vignette.pgm"), &scene.vignette, &scene.geometry())?;
    let samples = scene
        .exposures
        .iter()
        .zip(&scene.poses)
        .map(|(r, p)| (r.timestamp, *p))
        .collect();
    write_trajectory(&gt.join("trajectory.txt"), &Trajectory::new(samples)?)?;
    write_file(&gt.join("scene.cfg"), scene_cfg(&spec).as_bytes())?;
    info!("wrote {} frames to {}", scene.len(), args.out.display());
    Ok(())
}

pub fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let mut kv = KeyValues::load(args.config.as_deref())?;
    let d = CalibratorConfig::default();
    let config = CalibratorConfig {
        epsilon: kv.pick("epsilon", args.epsilon, d.epsilon)?,
        window: kv.pick("window", args.window, d.window)?,
        pass_fraction: kv.pick("pass_fraction", args.pass_fraction, d.pass_fraction)?,
        rho: kv.pick("rho", args.rho, d.rho)?,
        max_gap: kv.pick("max_gap", args.max_gap, d.max_gap)?,
        ..d
    };
    let max_tracks = kv.pick("max_tracks", args.max_tracks, DEFAULT_MAX_TRACKS)?;
    kv.finish()?;
    config.validate()?;
    ensure((10..=5000).contains(&max_tracks), "max_tracks", "in 10..=5000")?;
    ensure((1..=1000).contains(&config.max_gap), "max_gap", "in 1..=1000")?;

    let layout = DatasetLayout::new(&args.dataset);
    let mut geometry = None;
    let frames = layout.frames()?.inspect(|f| {
        if let Ok(f) = f {
            geometry.get_or_insert(RadialGeometry::centered(f.image.width(), f.image.height()));
        }
    });
    let outcome = run_online(frames, TrackerConfig::default(), max_tracks, config)?;
    let out = args.out.clone().unwrap_or_else(|| layout.root().to_path_buf());
    let mut log_text = String::new();
    for line in outcome.state.log() {
        writeln!(log_text, "{line}").expect("string write");
    }
    let verdict = outcome.state.finish();
    match &verdict {
        Ok(_) => writeln!(log_text, "result=frozen frame={}", outcome.frozen_at.unwrap_or_default()),
        Err(e) => writeln!(log_text, "result=failed reason={e}"),
    }
    .expect("string write");
    write_file(&out.join("calibration.log"), log_text.as_bytes())?;
    let snapshot = verdict?;
    let geometry = geometry.ok_or_else(|| Error::Data("dataset has no frames".into()))?;
    write_response(&out.join("pcalib.txt"), snapshot.response())?;
    write_vignette_image(&out.join("vignette.pgm"), snapshot.vignette(), &geometry)?;
    info!("calibration frozen at frame {:?}", outcome.frozen_at);
    Ok(())
}

/// Reads `pcalib.txt` and `vignette.pgm` from `dir`.
fn load_calibration(dir: &Path, width: usize, height: usize) -> Result<CalibrationSnapshot> {
    let response = read_response(&dir.join("pcalib.txt"))?;
    let (_, vignette) = read_vignette_image(&dir.join("vignette.pgm"), &RadialGeometry::centered(width, height))?;
    Ok(CalibrationSnapshot::trusted(response, vignette))
}

/// Vignette- and response-corrected energy `f^-1(M) / V`, scaled so that 1
/// maps to 65535. Values above 1 are clipped and masked.
pub fn rectify(args: &RectifyArgs) -> Result<()> {
    let mut kv = KeyValues::load(args.config.as_deref())?;
    let reference_exposure = kv.pick_optional("reference_exposure", args.reference_exposure)?;
    kv.finish()?;
    if let Some(e) = reference_exposure {
        ensure(e > 0.0 && e.is_finite(), "reference_exposure", "positive")?;
    }
    let layout = DatasetLayout::new(&args.dataset);
    let mut snapshot: Option<CalibrationSnapshot> = None;
    for frame in layout.frames()? {
        let frame = frame?;
        let snapshot = match &snapshot {
            Some(s) => s,
            None => snapshot.insert(match &args.calibration {
                Some(dir) => load_calibration(dir, frame.image.width(), frame.image.height())?,
                None => CalibrationSnapshot::trusted(InverseResponse::identity(), crate::photometry::VignetteModel::unit()),
            }),
        };
        let irradiance = rectify_frame(&frame, snapshot)?;
        let scale = reference_exposure.unwrap_or(frame.exposure.exposure);
        let (w, h) = (frame.image.width(), frame.image.height());
        let mut values = Image::filled(w, h, 0u16);
        let mut mask = Image::filled(w, h, 0u8);
        for y in 0..h {
            for x in 0..w {
                let v = irradiance.values.get(x, y) * scale;
                if irradiance.valid.get(x, y) && v <= 1.0 {
                    values.set(x, y, (v * u16::MAX as f64).round() as u16);
                    mask.set(x, y, 255);
                }
            }
        }
        let stem = format!("{:06}", frame.id());
        write_pgm16(&args.out.join(format!("{stem}.pgm")), &values)?;
        write_pgm8(&args.out.join(format!("{stem}_mask.pgm")), &mask)?;
    }
    Ok(())
}

pub fn pose(args: &PoseArgs) -> Result<()> {
    let mut kv = KeyValues::load(args.config.as_deref())?;
    let d = PoseConfig::default();
    let config = PoseConfig {
        levels: kv.pick("levels", args.levels, d.levels)?,
        max_iterations: kv.pick("max_iterations", args.max_iterations, d.max_iterations)?,
        huber: HuberThresholds {
            photometric: kv.pick("huber_photometric", args.huber_photometric, d.huber.photometric)?,
            geometric: kv.pick("huber_geometric", args.huber_geometric, d.huber.geometric)?,
        },
        ..d
    };
    let step = kv.pick("step", args.step, 1usize)?;
    let count = kv.pick_optional("frames", args.frames)?;
    let cell = kv.pick("cell", args.cell, 6usize)?;
    let min_gradient = kv.pick("min_gradient", args.min_gradient, 4.0)?;
    let max_keypoints = kv.pick("max_keypoints", args.max_keypoints, 150usize)?;
    kv.finish()?;
    config.validate()?;
    ensure((1..=100).contains(&step), "step", "in 1..=100")?;
    ensure(count.is_none_or(|n| n >= 2), "frames", "at least 2")?;
    ensure((2..=64).contains(&cell), "cell", "in 2..=64")?;
    ensure(min_gradient >= 0.0 && min_gradient.is_finite(), "min_gradient", "non-negative")?;
    ensure(max_keypoints <= 5000, "max_keypoints", "at most 5000")?;

    let layout = DatasetLayout::new(&args.dataset);
    let cfg_path = layout.ground_truth_dir().join("scene.cfg");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let mut scene_kv = KeyValues::parse(&cfg_path, &text)?;
    let spec = scene_spec(&SceneOverrides::default(), &mut scene_kv)?;
    scene_kv.finish()?;
    let scene = generate_scene(&spec)?;

    let frames = layout.load_frames()?;
    if frames.len() != scene.len() {
        return Err(Error::Data(format!(
            "{} frames on disk but the scene description has {}",
            frames.len(),
            scene.len()
        )));
    }
    let indices: Vec<usize> = (0..frames.len()).step_by(step).take(count.unwrap_or(usize::MAX)).collect();
    if indices.len() < 2 {
        return Err(Error::Data("pose needs at least two frames".into()));
    }
    let calibration = match &args.calibration {
        Some(dir) => Some(load_calibration(dir, spec.width, spec.height)?),
        None => None,
    };

    let mut world = PoseSE3::identity();
    let mut samples = vec![(frames[indices[0]].exposure.timestamp, world)];
    let mut motion = PoseSE3::identity();
    let mut report = String::new();
    let mut unconverged = 0;
    for pair in indices.windows(2) {
        let (i, j) = (pair[0], pair[1]);
        let (reference, target) = (&frames[i], &frames[j]);
        let depth = |u: f64, v: f64| scene.depth_at(i, u, v);
        let e_ref = reference.exposure.exposure;
        let obs = SceneObservation::new(
            scene.intrinsics,
            intensity_image(reference, calibration.as_ref(), e_ref)?,
            intensity_image(target, calibration.as_ref(), e_ref)?,
            select_points(reference, cell, min_gradient, depth),
            tracked_keypoints(reference, target, max_keypoints, depth),
            config.levels,
        )?;
        // Constant-velocity initialization.
        let outcome = optimize_pose(&obs, motion, &config)?;
        if !outcome.report.converged {
            unconverged += 1;
            warn!("pair {} -> {} did not converge", reference.id(), target.id());
        }
        writeln!(report, "pair {} {}\n{}", reference.id(), target.id(), outcome.report).expect("string write");
        motion = outcome.pose;
        world = world * outcome.pose.inverse();
        samples.push((target.exposure.timestamp, world));
    }
    write_trajectory(&args.out.join("trajectory.txt"), &Trajectory::new(samples)?)?;
    write_file(&args.out.join("pose_report.txt"), report.as_bytes())?;
    info!("{} pairs, {unconverged} not converged", indices.len() - 1);
    Ok(())
}

/// `name=path` or a bare path (named by its position).
fn parse_run(spec: &str, index: usize) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => (format!("run{index}"), PathBuf::from(spec)),
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut kv = KeyValues::load(args.config.as_deref())?;
    let similarity = kv.pick("similarity", args.similarity.then_some(true), false)?;
    let tolerance = kv.pick("tolerance", args.tolerance, ASSOCIATION_TOLERANCE)?;
    kv.finish()?;
    ensure(tolerance > 0.0 && tolerance <= 1.0, "tolerance", "in (0, 1]")?;
    if args.estimate.is_empty() {
        return Err(Error::Config("at least one --estimate is required".into()));
    }
    let mode = if similarity {
        AlignMode::Similarity
    } else {
        AlignMode::Rigid
    };
    let reference = read_trajectory(&args.reference)?;
    let mut csv = String::from("run,ate_rmse,rot_drift_deg,trans_drift_pct\n");
    let mut ates = Vec::new();
    for (k, spec) in args.estimate.iter().enumerate() {
        let (name, path) = parse_run(spec, k);
        let m = evaluate_run(&read_trajectory(&path)?, &reference, mode, tolerance)?;
        writeln!(csv, "{name},{:.6},{:.6},{:.6}", m.ate_rmse, m.rot_drift_deg, m.trans_drift_pct).expect("string write");
        ates.push(m.ate_rmse);
    }
    write_file(&args.out, csv.as_bytes())?;
    if let Some(curve_path) = &args.curve {
        let mut curve = String::from("ate_rmse,runs\n");
        for (e, n) in cumulative_curve(&ates) {
            writeln!(curve, "{e:.6},{n}").expect("string write");
        }
        write_file(curve_path, curve.as_bytes())?;
    }
    Ok(())
}
