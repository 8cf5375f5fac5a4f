//! Line-oriented text formats. Blank lines and lines starting with `#` are
//! skipped; numbers are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::pgm::write_file;
use crate::camera::PoseSE3;
use crate::error::{Error, Result};
use crate::eval::Trajectory;
use crate::photometry::{ExposureRecord, InverseResponse};

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn fields<'a>(path: &Path, line: usize, text: &'a str, names: &[&str]) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = text.split_whitespace().collect();
    if f.len() != names.len() {
        return Err(Error::parse(
            path,
            line,
            format!("expected {} fields ({}), found {}", names.len(), names.join(" "), f.len()),
        ));
    }
    Ok(f)
}

fn number<T: FromStr>(path: &Path, line: usize, token: &str, name: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| Error::parse(path, line, format!("{name} `{token}` is not a valid number")))
}

fn finite(path: &Path, line: usize, value: f64, name: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::invalid(path, line, format!("{name} {value} is not finite")))
    }
}

/// `frame_id timestamp exposure_ms` per line.
pub fn read_times(path: &Path) -> Result<Vec<ExposureRecord>> {
    let text = read_text(path)?;
    let mut out: Vec<ExposureRecord> = Vec::new();
    for (line, l) in content_lines(&text) {
        let f = fields(path, line, l, &["frame_id", "timestamp", "exposure_ms"])?;
        let frame_id: u64 = number(path, line, f[0], "frame id")?;
        let timestamp = finite(path, line, number(path, line, f[1], "timestamp")?, "timestamp")?;
        let exposure: f64 = number(path, line, f[2], "exposure")?;
        if !(exposure > 0.0 && exposure.is_finite()) {
            return Err(Error::invalid(path, line, format!("exposure {exposure} must be positive")));
        }
        if let Some(prev) = out.last() {
            if frame_id <= prev.frame_id {
                return Err(Error::invalid(
                    path,
                    line,
                    format!("frame id {frame_id} does not increase (previous {})", prev.frame_id),
                ));
            }
        }
        out.push(ExposureRecord {
            frame_id,
            timestamp,
            exposure,
        });
    }
    Ok(out)
}

pub fn write_times(path: &Path, records: &[ExposureRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        writeln!(s, "{} {} {}", r.frame_id, r.timestamp, r.exposure).expect("string write");
    }
    write_file(path, s.as_bytes())
}

/// 256 ascending values, normalized on read by dividing by the last one.
/// The first value must be zero.
pub fn read_response(path: &Path) -> Result<InverseResponse> {
    let text = read_text(path)?;
    let mut values: Vec<(usize, f64)> = Vec::with_capacity(256);
    for (line, l) in content_lines(&text) {
        for token in l.split_whitespace() {
            let v: f64 = number(path, line, token, &format!("value {}", values.len()))?;
            values.push((line, finite(path, line, v, &format!("value {}", values.len()))?));
        }
    }
    if values.len() != 256 {
        let last_line = values.last().map_or(1, |v| v.0);
        return Err(Error::format(
            path,
            format!("line {last_line}: expected 256 values, found {}", values.len()),
        ));
    }
    if let Some(i) = (1..256).find(|&i| values[i].1 < values[i - 1].1) {
        return Err(Error::format(
            path,
            format!(
                "line {}: value {i} ({}) is below value {} ({})",
                values[i].0,
                values[i].1,
                i - 1,
                values[i - 1].1
            ),
        ));
    }
    if values[0].1 != 0.0 {
        return Err(Error::format(
            path,
            format!("line {}: value 0 is {}, expected 0", values[0].0, values[0].1),
        ));
    }
    let last = values[255].1;
    if !(last > 0.0) {
        return Err(Error::format(path, format!("line {}: value 255 must be positive", values[255].0)));
    }
    let mut lut = [0.0; 256];
    for (dst, (_, v)) in lut.iter_mut().zip(&values) {
        *dst = v / last;
    }
    InverseResponse::new(lut)
}

pub fn write_response(path: &Path, response: &InverseResponse) -> Result<()> {
    let line: Vec<String> = response.lut().iter().map(|v| v.to_string()).collect();
    write_file(path, format!("{}\n", line.join(" ")).as_bytes())
}

/// `track_id frame_id x y` per line.
pub fn read_tracks(path: &Path) -> Result<Vec<(u64, u64, f64, f64)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (line, l) in content_lines(&text) {
        let f = fields(path, line, l, &["track_id", "frame_id", "x", "y"])?;
        out.push((
            number(path, line, f[0], "track id")?,
            number(path, line, f[1], "frame id")?,
            finite(path, line, number(path, line, f[2], "x")?, "x")?,
            finite(path, line, number(path, line, f[3], "y")?, "y")?,
        ));
    }
    Ok(out)
}

pub fn write_tracks(path: &Path, rows: &[(u64, u64, f64, f64)]) -> Result<()> {
    let mut s = String::new();
    for (t, f, x, y) in rows {
        writeln!(s, "{t} {f} {x} {y}").expect("string write");
    }
    write_file(path, s.as_bytes())
}

/// Quaternions further than this from unit norm are rejected.
const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;

/// `timestamp tx ty tz qx qy qz qw` per line (Hamilton quaternion).
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = read_text(path)?;
    let mut samples: Vec<(f64, PoseSE3)> = Vec::new();
    let names = ["timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"];
    for (line, l) in content_lines(&text) {
        let f = fields(path, line, l, &names)?;
        let mut v = [0.0; 8];
        for (k, token) in f.iter().enumerate() {
            v[k] = finite(path, line, number(path, line, token, names[k])?, names[k])?;
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(Error::invalid(path, line, format!("quaternion norm {norm} is not 1")));
        }
        // Keep exactly-unit input bit-identical.
        let q = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        if let Some((prev, _)) = samples.last() {
            if v[0] <= *prev {
                return Err(Error::invalid(
                    path,
                    line,
                    format!("timestamp {} does not increase (previous {prev})", v[0]),
                ));
            }
        }
        samples.push((v[0], PoseSE3::from_quaternion(Vector3::new(v[1], v[2], v[3]), q)));
    }
    Trajectory::new(samples)
}

pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<()> {
    let mut s = String::new();
    for (t, pose) in trajectory.samples() {
        let p = pose.translation();
        let q = pose.quaternion();
        writeln!(s, "{t} {} {} {} {} {} {} {}", p.x, p.y, p.z, q.i, q.j, q.k, q.w).expect("string write");
    }
    write_file(path, s.as_bytes())
}
