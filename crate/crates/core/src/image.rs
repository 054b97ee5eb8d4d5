//! Square attenuation rasters.

use crate::error::{Error, Result};

/// Row-major W x H attenuation raster. Row index increases with the
/// physical `y` coordinate; pixel `(row, col)` is centered at
/// `(-E + (col+0.5)*pixel_size, -E + (row+0.5)*pixel_size)` with
/// `E = width*pixel_size/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixel_size: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("image values must be finite"));
        }
        Ok(Image {
            width,
            height,
            pixel_size,
            data,
        })
    }

    /// All-zero square raster covering the unit-disk field of view.
    pub fn zeros(width: usize) -> Self {
        Image {
            width,
            height: width,
            pixel_size: 2.0 / width as f64,
            data: vec![0.0; width * width],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    /// Physical center of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        let ex = 0.5 * self.width as f64 * self.pixel_size;
        let ey = 0.5 * self.height as f64 * self.pixel_size;
        [
            -ex + (col as f64 + 0.5) * self.pixel_size,
            -ey + (row as f64 + 0.5) * self.pixel_size,
        ]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }
}
