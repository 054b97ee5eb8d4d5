//! Log-domain projection rasters.

use crate::error::{Error, Result};
use crate::geometry::FanGeometry;

/// P x D row-major raster of line integrals; row `i` is the projection at
/// view angle `2*pi*i/P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub geometry: FanGeometry,
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn new(geometry: FanGeometry, data: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.num_views * geometry.num_detectors {
            return Err(Error::shape(format!(
                "sinogram data length {} does not match {}x{}",
                data.len(),
                geometry.num_views,
                geometry.num_detectors
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("sinogram values must be finite"));
        }
        Ok(Sinogram { geometry, data })
    }

    pub fn zeros(geometry: FanGeometry) -> Self {
        let n = geometry.num_views * geometry.num_detectors;
        Sinogram {
            geometry,
            data: vec![0.0; n],
        }
    }

    pub fn num_views(&self) -> usize {
        self.geometry.num_views
    }

    pub fn num_detectors(&self) -> usize {
        self.geometry.num_detectors
    }

    #[inline]
    pub fn at(&self, view: usize, col: usize) -> f64 {
        self.data[view * self.geometry.num_detectors + col]
    }

    #[inline]
    pub fn set(&mut self, view: usize, col: usize, v: f64) {
        self.data[view * self.geometry.num_detectors + col] = v;
    }

    /// Row `view` as a slice.
    pub fn row(&self, view: usize) -> &[f64] {
        let d = self.geometry.num_detectors;
        &self.data[view * d..(view + 1) * d]
    }

    pub fn same_shape(&self, other: &Sinogram) -> bool {
        self.geometry.num_views == other.geometry.num_views
            && self.geometry.num_detectors == other.geometry.num_detectors
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}
