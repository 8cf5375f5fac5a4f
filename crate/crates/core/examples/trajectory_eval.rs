//! Scores noisy and drifting trajectories against a reference with ATE and
//! drift metrics, and prints the cumulative ATE curve.
//!
//! ```bash
//! cargo run -p photocal --example trajectory_eval
//! ```

use nalgebra::Vector3;
use photocal::camera::PoseSE3;
use photocal::eval::{cumulative_curve, evaluate_run, AlignMode, Trajectory, ASSOCIATION_TOLERANCE};
use photocal::synth::{generate_scene, SceneSpec};

fn main() -> photocal::Result<()> {
    let scene = generate_scene(&SceneSpec {
        frames: 120,
        ..SceneSpec::default()
    })?;
    let reference = Trajectory::new(
        scene.exposures.iter().zip(&scene.poses).map(|(r, p)| (r.timestamp, *p)).collect(),
    )?;
    let mut ates = Vec::new();
    for (name, drift, scale) in [("exact", 0.0, 1.0), ("drifting", 0.002, 1.0), ("scaled", 0.0, 0.7)] {
        let estimate = Trajectory::new(
            reference
                .samples()
                .iter()
                .enumerate()
                .map(|(i, (t, p))| {
                    let bend = PoseSE3::from_translation_axis_angle(Vector3::zeros(), Vector3::y() * drift * i as f64);
                    let moved = bend * *p;
                    (*t, PoseSE3::from_quaternion(moved.translation() * scale, moved.quaternion()))
                })
                .collect(),
        )?;
        for mode in [AlignMode::Rigid, AlignMode::Similarity] {
            let m = evaluate_run(&estimate, &reference, mode, ASSOCIATION_TOLERANCE)?;
            println!(
                "{name:9} {mode:?}: ATE {:.4}, rotational drift {:.3} deg, translational drift {:.2}%",
                m.ate_rmse, m.rot_drift_deg, m.trans_drift_pct
            );
            if mode == AlignMode::Similarity {
                ates.push(m.ate_rmse);
            }
        }
    }
    println!("cumulative curve: {:?}", cumulative_curve(&ates));
    Ok(())
}
