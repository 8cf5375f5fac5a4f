//! Dense vignette maps stored as 16-bit graymaps, `V = value / 65535`.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::pgm::{read_pgm16, write_pgm16};
use crate::calibrator::project_attenuating;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::photometry::{RadialGeometry, VignetteModel};

/// Radius bins used when fitting a polynomial to a dense map.
const FIT_BINS: usize = 100;

/// Samples `model` at every pixel.
pub fn vignette_map(model: &VignetteModel, geometry: &RadialGeometry) -> Image<f64> {
    Image::from_fn(geometry.width, geometry.height, |x, y| {
        model.eval_unchecked(geometry.radius(x as f64, y as f64))
    })
}

/// Least-squares radial fit of a dense map, restricted to attenuation.
/// Pixels are averaged into radius bins first, each bin weighted by its
/// pixel count.
pub fn fit_vignette(map: &Image<f64>, geometry: &RadialGeometry) -> Result<VignetteModel> {
    if map.width() != geometry.width || map.height() != geometry.height {
        return Err(Error::Data(format!(
            "vignette map is {}x{} but the geometry is {}x{}",
            map.width(),
            map.height(),
            geometry.width,
            geometry.height
        )));
    }
    let mut sum = [0.0; FIT_BINS];
    let mut sum_r2 = [0.0; FIT_BINS];
    let mut count = [0usize; FIT_BINS];
    for y in 0..map.height() {
        for x in 0..map.width() {
            let v = map.get(x, y);
            if !(v > 0.0) {
                continue;
            }
            let r = geometry.radius(x as f64, y as f64);
            let b = ((r * FIT_BINS as f64) as usize).min(FIT_BINS - 1);
            sum[b] += v;
            sum_r2[b] += r * r;
            count[b] += 1;
        }
    }
    let mut hessian = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for b in (0..FIT_BINS).filter(|&b| count[b] > 0) {
        let n = count[b] as f64;
        let s = sum_r2[b] / n;
        let phi = Vector3::new(s, s * s, s * s * s);
        hessian += n * phi * phi.transpose();
        rhs += n * phi * (sum[b] / n - 1.0);
    }
    let a = hessian
        .try_inverse()
        .ok_or_else(|| Error::Data("vignette map covers too few radii to fit".into()))?
        * rhs;
    let a = project_attenuating(a, &hessian);
    VignetteModel::new(a[0], a[1], a[2])
}

/// Reads a map, returning it dense and as a fitted model.
pub fn read_vignette_image(path: &Path, geometry: &RadialGeometry) -> Result<(Image<f64>, VignetteModel)> {
    let raw = read_pgm16(path)?;
    let map = raw.map(|v| v as f64 / u16::MAX as f64);
    if let Some(i) = map.as_slice().iter().position(|&v| v == 0.0) {
        return Err(Error::format(
            path,
            format!("pixel ({}, {}): zero attenuation", i % map.width(), i / map.width()),
        ));
    }
    let model = fit_vignette(&map, geometry).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((map, model))
}

pub fn write_vignette_image(path: &Path, model: &VignetteModel, geometry: &RadialGeometry) -> Result<()> {
    let map = vignette_map(model, geometry);
    write_pgm16(path, &map.map(|v| (v.clamp(0.0, 1.0) * u16::MAX as f64).round() as u16))
}
