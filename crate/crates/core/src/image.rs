//! Minimal row-major image container with bilinear sampling.
//!
//! Pixel centres sit on integer coordinates: pixel `(x, y)` covers
//! `[x - 0.5, x + 0.5] x [y - 0.5, y + 0.5]`.

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type GrayImage = Image<u8>;

impl<T: Copy> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Wraps a row-major buffer. Panics if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// True when `(x, y)` can be bilinearly sampled.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

/// Bilinear interpolation weights for a point known to be inside the image.
#[inline]
fn cell(width: usize, height: usize, x: f64, y: f64) -> (usize, usize, f64, f64) {
    let ix = (x.floor() as usize).min(width - 2);
    let iy = (y.floor() as usize).min(height - 2);
    (ix, iy, x - ix as f64, y - iy as f64)
}

impl<T: Copy + Into<f64>> Image<T> {
    /// Bilinear sample, `None` outside the sampling domain.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        if !self.contains(x, y) {
            return None;
        }
        let (ix, iy, fx, fy) = cell(self.width, self.height, x, y);
        let v00: f64 = self.get(ix, iy).into();
        let v10: f64 = self.get(ix + 1, iy).into();
        let v01: f64 = self.get(ix, iy + 1).into();
        let v11: f64 = self.get(ix + 1, iy + 1).into();
        Some((1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11))
    }

    /// The four pixels a bilinear sample at `(x, y)` reads from.
    pub fn footprint(&self, x: f64, y: f64) -> Option<[T; 4]> {
        if !self.contains(x, y) {
            return None;
        }
        let (ix, iy, _, _) = cell(self.width, self.height, x, y);
        Some([
            self.get(ix, iy),
            self.get(ix + 1, iy),
            self.get(ix, iy + 1),
            self.get(ix + 1, iy + 1),
        ])
    }

    /// Bilinear sample together with its exact partial derivatives.
    pub fn sample_with_gradient(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        if !self.contains(x, y) {
            return None;
        }
        let (ix, iy, fx, fy) = cell(self.width, self.height, x, y);
        let v00: f64 = self.get(ix, iy).into();
        let v10: f64 = self.get(ix + 1, iy).into();
        let v01: f64 = self.get(ix, iy + 1).into();
        let v11: f64 = self.get(ix + 1, iy + 1).into();
        let top = (1.0 - fx) * v00 + fx * v10;
        let bottom = (1.0 - fx) * v01 + fx * v11;
        let value = (1.0 - fy) * top + fy * bottom;
        let gx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
        let gy = bottom - top;
        Some((value, gx, gy))
    }

    pub fn to_f64(&self) -> Image<f64> {
        self.map(|v| v.into())
    }
}

impl Image<f64> {
    /// Halves the resolution by 2x2 box averaging; odd trailing rows and
    /// columns are dropped.
    pub fn downsample(&self) -> Image<f64> {
        let w = self.width / 2;
        let h = self.height / 2;
        Image::from_fn(w, h, |x, y| {
            0.25 * (self.get(2 * x, 2 * y)
                + self.get(2 * x + 1, 2 * y)
                + self.get(2 * x, 2 * y + 1)
                + self.get(2 * x + 1, 2 * y + 1))
        })
    }
}

impl Image<bool> {
    /// A coarse pixel is valid only if all four fine pixels are.
    pub fn downsample_mask(&self) -> Image<bool> {
        let w = self.width / 2;
        let h = self.height / 2;
        Image::from_fn(w, h, |x, y| {
            self.get(2 * x, 2 * y)
                && self.get(2 * x + 1, 2 * y)
                && self.get(2 * x, 2 * y + 1)
                && self.get(2 * x + 1, 2 * y + 1)
        })
    }

    /// True when every pixel used by a bilinear sample at `(x, y)` is valid.
    pub fn sample_valid(&self, x: f64, y: f64) -> bool {
        if !self.contains(x, y) {
            return false;
        }
        let (ix, iy, _, _) = cell(self.width, self.height, x, y);
        self.get(ix, iy) && self.get(ix + 1, iy) && self.get(ix, iy + 1) && self.get(ix + 1, iy + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_reproduces_planes() {
        let img = Image::from_fn(8, 6, |x, y| 2.0 * x as f64 - 3.0 * y as f64 + 1.0);
        let (v, gx, gy) = img.sample_with_gradient(3.25, 2.5).unwrap();
        assert!((v - (2.0 * 3.25 - 7.5 + 1.0)).abs() < 1e-12);
        assert!((gx - 2.0).abs() < 1e-12);
        assert!((gy + 3.0).abs() < 1e-12);
        // Far edge is inclusive.
        assert!(img.sample(7.0, 5.0).is_some());
        assert!(img.sample(7.0001, 5.0).is_none());
        assert!(img.sample(-0.1, 1.0).is_none());
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = Image::from_fn(5, 4, |x, y| (x + 10 * y) as f64);
        let half = img.downsample();
        assert_eq!((half.width(), half.height()), (2, 2));
        assert_eq!(half.get(0, 0), (0.0 + 1.0 + 10.0 + 11.0) / 4.0);
        let mut mask = Image::filled(4, 4, true);
        mask.set(3, 3, false);
        let m = mask.downsample_mask();
        assert!(m.get(0, 0) && !m.get(1, 1));
    }
}
