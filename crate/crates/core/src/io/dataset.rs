//! On-disk sequence layout:
//!
//! ```text
//! root/
//!   images/000000.pgm ...   8-bit frames named by zero-padded frame id
//!   times.txt               frame_id timestamp exposure_ms
//!   pcalib.txt              inverse response (optional)
//!   vignette.pgm            16-bit vignette map (optional)
//!   gt/                     ground-truth sidecars written by the renderer
//! ```

use std::path::{Path, PathBuf};

use super::pgm::{read_pgm8, write_pgm8};
use super::text::{read_times, write_times};
use crate::error::{Error, Result};
use crate::photometry::{ExposureRecord, Frame};

/// Digits in an image file name.
const NAME_DIGITS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn image_path(&self, frame_id: u64) -> PathBuf {
        self.images_dir().join(format!("{frame_id:0NAME_DIGITS$}.pgm"))
    }

    pub fn times_path(&self) -> PathBuf {
        self.root.join("times.txt")
    }

    pub fn response_path(&self) -> PathBuf {
        self.root.join("pcalib.txt")
    }

    pub fn vignette_path(&self) -> PathBuf {
        self.root.join("vignette.pgm")
    }

    pub fn ground_truth_dir(&self) -> PathBuf {
        self.root.join("gt")
    }

    /// Writes images and the times file.
    pub fn write_frames(&self, frames: &[Frame]) -> Result<()> {
        for f in frames {
            write_pgm8(&self.image_path(f.id()), &f.image)?;
        }
        let records: Vec<ExposureRecord> = frames.iter().map(|f| f.exposure).collect();
        write_times(&self.times_path(), &records)
    }

    /// Reads the times file and checks that exactly one image exists per
    /// record.
    pub fn records(&self) -> Result<Vec<ExposureRecord>> {
        let records = read_times(&self.times_path())?;
        let dir = self.images_dir();
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut images = 0usize;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.path().extension().is_some_and(|x| x == "pgm") {
                images += 1;
            }
        }
        if images != records.len() {
            return Err(Error::format(
                &dir,
                format!("{images} images but {} entries in the times file", records.len()),
            ));
        }
        if let Some(r) = records.iter().find(|r| !self.image_path(r.frame_id).is_file()) {
            return Err(Error::format(self.image_path(r.frame_id), "image listed in the times file is missing"));
        }
        Ok(records)
    }

    /// Frames in times-file order, loaded lazily. Sizes must agree.
    pub fn frames(&self) -> Result<impl Iterator<Item = Result<Frame>> + '_> {
        let records = self.records()?;
        let mut size: Option<(usize, usize)> = None;
        Ok(records.into_iter().map(move |r| {
            let path = self.image_path(r.frame_id);
            let image = read_pgm8(&path)?;
            let dims = (image.width(), image.height());
            if *size.get_or_insert(dims) != dims {
                let (w, h) = size.expect("set above");
                return Err(Error::format(
                    &path,
                    format!("header: size {}x{} differs from the first frame ({w}x{h})", dims.0, dims.1),
                ));
            }
            Frame::new(image, r)
        }))
    }

    pub fn load_frames(&self) -> Result<Vec<Frame>> {
        self.frames()?.collect()
    }
}
