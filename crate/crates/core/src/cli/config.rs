//! `key = value` configuration files. Flags override file values; keys the
//! command does not know are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::photometry::VignetteModel;
use crate::synth::{ResponseFamily, SceneSpec, TrajectoryShape};

/// Parsed file contents; values are consumed as the command resolves them.
#[derive(Debug, Default)]
pub struct KeyValues {
    path: Option<PathBuf>,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1)));
            };
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Config(format!("{}:{}: duplicate key `{key}`", path.display(), i + 1)));
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries,
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(p, &text)
            }
        }
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let Some((line, value)) = self.entries.remove(key) else {
            return Ok(None);
        };
        value.parse().map(Some).map_err(|_| {
            Error::Config(format!("{}:{line}: `{value}` is not a valid {key}", self.path_display()))
        })
    }

    /// The flag if given, else the file value, else `default`.
    pub fn pick<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let file = self.take(key)?;
        Ok(flag.or(file).unwrap_or(default))
    }

    /// The flag if given, else the file value if present.
    pub fn pick_optional<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let file = self.take(key)?;
        Ok(flag.or(file))
    }

    /// Fails on any key no one consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::Config(format!("{}:{line}: unknown key `{k}`", self.path_display()))),
        }
    }

    fn path_display(&self) -> String {
        self.path.as_deref().map_or("<flags>".into(), |p| p.display().to_string())
    }
}

/// Fails unless `ok`, naming the key and its valid range.
pub fn ensure(ok: bool, key: &str, range: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{key} must be {range}")))
    }
}

/// Scene settings exposed on the command line and stored in `scene.cfg`.
#[derive(Debug, Clone, Default)]
pub struct SceneOverrides {
    pub seed: Option<u64>,
    pub frames: Option<usize>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub focal: Option<f64>,
    pub frame_rate: Option<f64>,
    pub gamma: Option<f64>,
    pub exposure_min: Option<f64>,
    pub exposure_max: Option<f64>,
    pub exposure_period: Option<f64>,
    pub exposure_jitter: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub vignette_a2: Option<f64>,
    pub vignette_a4: Option<f64>,
    pub vignette_a6: Option<f64>,
    pub motion_rotation_deg: Option<f64>,
    pub motion_translation: Option<f64>,
}

/// Resolves a scene from flags and file values over the default scene.
pub fn scene_spec(flags: &SceneOverrides, kv: &mut KeyValues) -> Result<SceneSpec> {
    let d = SceneSpec::default();
    let gamma_default = match d.response {
        ResponseFamily::Gamma(g) => g,
        ResponseFamily::Identity => 1.0,
    };
    let (rot_default, trans_default) = match d.trajectory {
        TrajectoryShape::Wobble {
            rotation_deg,
            translation,
        } => (rotation_deg, translation),
        TrajectoryShape::Static => (0.0, 0.0),
    };
    let [a2, a4, a6] = d.vignette.coefficients();
    let gamma = kv.pick("gamma", flags.gamma, gamma_default)?;
    ensure(gamma > 0.0 && gamma.is_finite(), "gamma", "positive")?;
    let rotation = kv.pick("motion_rotation_deg", flags.motion_rotation_deg, rot_default)?;
    let translation = kv.pick("motion_translation", flags.motion_translation, trans_default)?;
    ensure(rotation >= 0.0 && translation >= 0.0, "motion amplitudes", "non-negative")?;
    let vignette = VignetteModel::new(
        kv.pick("vignette_a2", flags.vignette_a2, a2)?,
        kv.pick("vignette_a4", flags.vignette_a4, a4)?,
        kv.pick("vignette_a6", flags.vignette_a6, a6)?,
    )
    .map_err(|e| Error::Config(format!("vignette coefficients: {e}")))?;
    let spec = SceneSpec {
        seed: kv.pick("seed", flags.seed, d.seed)?,
        frames: kv.pick("frames", flags.frames, d.frames)?,
        width: kv.pick("width", flags.width, d.width)?,
        height: kv.pick("height", flags.height, d.height)?,
        focal: kv.pick("focal", flags.focal, d.focal)?,
        frame_rate: kv.pick("frame_rate", flags.frame_rate, d.frame_rate)?,
        response: ResponseFamily::Gamma(gamma),
        exposure_range: (
            kv.pick("exposure_min", flags.exposure_min, d.exposure_range.0)?,
            kv.pick("exposure_max", flags.exposure_max, d.exposure_range.1)?,
        ),
        exposure_period: kv.pick("exposure_period", flags.exposure_period, d.exposure_period)?,
        exposure_jitter: kv.pick("exposure_jitter", flags.exposure_jitter, d.exposure_jitter)?,
        noise_sigma: kv.pick("noise_sigma", flags.noise_sigma, d.noise_sigma)?,
        vignette,
        trajectory: TrajectoryShape::Wobble {
            rotation_deg: rotation,
            translation,
        },
        ..d
    };
    ensure((1..=100_000).contains(&spec.frames), "frames", "in 1..=100000")?;
    ensure(
        (16..=8192).contains(&spec.width) && (16..=8192).contains(&spec.height),
        "width and height",
        "in 16..=8192",
    )?;
    ensure(spec.focal > 0.0 && spec.focal.is_finite(), "focal", "positive")?;
    ensure(spec.frame_rate > 0.0 && spec.frame_rate.is_finite(), "frame_rate", "positive")?;
    let (lo, hi) = spec.exposure_range;
    ensure(lo > 0.0 && hi >= lo && hi.is_finite(), "exposure_min/exposure_max", "positive with min <= max")?;
    ensure(spec.exposure_period > 0.0, "exposure_period", "positive")?;
    ensure(spec.exposure_jitter >= 0.0 && spec.exposure_jitter < 1.0, "exposure_jitter", "in [0, 1)")?;
    ensure(spec.noise_sigma >= 0.0 && spec.noise_sigma <= 50.0, "noise_sigma", "in [0, 50]")?;
    Ok(spec)
}

/// The `scene.cfg` text that regenerates `spec` through [`scene_spec`].
pub fn scene_cfg(spec: &SceneSpec) -> String {
    let gamma = match spec.response {
        ResponseFamily::Gamma(g) => g,
        ResponseFamily::Identity => 1.0,
    };
    let (rot, trans) = match spec.trajectory {
        TrajectoryShape::Wobble {
            rotation_deg,
            translation,
        } => (rotation_deg, translation),
        TrajectoryShape::Static => (0.0, 0.0),
    };
    let [a2, a4, a6] = spec.vignette.coefficients();
    let mut s = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k} = {v}").expect("string write");
    kv("seed", &spec.seed);
    kv("frames", &spec.frames);
    kv("width", &spec.width);
    kv("height", &spec.height);
    kv("focal", &spec.focal);
    kv("frame_rate", &spec.frame_rate);
    kv("gamma", &gamma);
    kv("exposure_min", &spec.exposure_range.0);
    kv("exposure_max", &spec.exposure_range.1);
    kv("exposure_period", &spec.exposure_period);
    kv("exposure_jitter", &spec.exposure_jitter);
    kv("noise_sigma", &spec.noise_sigma);
    kv("vignette_a2", &a2);
    kv("vignette_a4", &a4);
    kv("vignette_a6", &a6);
    kv("motion_rotation_deg", &rot);
    kv("motion_translation", &trans);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let mut kv = KeyValues::parse(Path::new("c.cfg"), "# comment\nseed = 5\nframes=40\n").unwrap();
        let flags = SceneOverrides {
            seed: Some(9),
            ..Default::default()
        };
        let spec = scene_spec(&flags, &mut kv).unwrap();
        kv.finish().unwrap();
        assert_eq!((spec.seed, spec.frames), (9, 40));
    }

    #[test]
    fn unknown_and_malformed_keys_are_config_errors() {
        let mut kv = KeyValues::parse(Path::new("c.cfg"), "seed = 1\nbogus = 2\n").unwrap();
        scene_spec(&SceneOverrides::default(), &mut kv).unwrap();
        let err = kv.finish().unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("c.cfg:2") && m.contains("bogus")));
        assert!(matches!(KeyValues::parse(Path::new("c.cfg"), "seed 1"), Err(Error::Config(_))));
        let mut kv = KeyValues::parse(Path::new("c.cfg"), "frames = many").unwrap();
        assert!(matches!(scene_spec(&SceneOverrides::default(), &mut kv), Err(Error::Config(_))));
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let flags = SceneOverrides {
            noise_sigma: Some(-1.0),
            ..Default::default()
        };
        assert!(matches!(scene_spec(&flags, &mut KeyValues::default()), Err(Error::Config(_))));
    }

    #[test]
    fn scene_cfg_regenerates_the_spec() {
        let spec = SceneSpec {
            seed: 17,
            frames: 33,
            noise_sigma: 0.25,
            exposure_range: (1.5, 6.0),
            ..SceneSpec::default()
        };
        let text = scene_cfg(&spec);
        let mut kv = KeyValues::parse(Path::new("scene.cfg"), &text).unwrap();
        let back = scene_spec(&SceneOverrides::default(), &mut kv).unwrap();
        kv.finish().unwrap();
        assert_eq!(back, spec);
    }
}
