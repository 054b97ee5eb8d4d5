//! Scan geometry: view/detector indexing and ray parameterization.
//!
//! Conventions used throughout the crate:
//!
//! * The field of view is the unit disk; lengths are dimensionless.
//! * View `i` of `P` is acquired at gantry angle `beta_i = 2*pi*i/P`.
//! * Detector bins carry a signed index `j` in `-(D-1)/2 ..= (D-1)/2`
//!   (`D` odd, bin `j = 0` on the central ray), stored in rasters at
//!   column `j + (D-1)/2`.
//! * Fan mode: the source sits at `R*(-sin b, cos b)` and the ray of
//!   detector angle `g = j*spacing` has direction `(sin(b+g), -cos(b+g))`.
//!   This makes the ray identical to the parallel ray with normal angle
//!   `b+g` and signed offset `R*sin g`, so the conjugate relation
//!   (view `b+pi+2g`, detector `-g`) addresses the same physical line.
//! * Parallel mode: `detector_spacing` is a linear offset step and the
//!   conjugate view shift reduces to `P/2`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    Fan,
    Parallel,
}

impl ScanMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScanMode::Fan => "fan",
            ScanMode::Parallel => "parallel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fan" => Ok(ScanMode::Fan),
            "parallel" => Ok(ScanMode::Parallel),
            other => Err(Error::domain(format!("unknown scan mode {other:?}"))),
        }
    }
}

/// Scan description: `num_views` projections over a full 2*pi orbit,
/// `num_detectors` (odd) bins per projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FanGeometry {
    pub num_views: usize,
    pub num_detectors: usize,
    /// Radians between adjacent bins in fan mode; linear offset step in
    /// parallel mode.
    pub detector_spacing: f64,
    /// Distance from rotation center to the X-ray source (fan mode only).
    pub source_radius: f64,
    pub mode: ScanMode,
}

/// A ray as origin plus unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: [f64; 2],
    pub dir: [f64; 2],
}

impl FanGeometry {
    pub fn new(
        num_views: usize,
        num_detectors: usize,
        detector_spacing: f64,
        source_radius: f64,
        mode: ScanMode,
    ) -> Result<Self> {
        let geom = FanGeometry {
            num_views,
            num_detectors,
            detector_spacing,
            source_radius,
            mode,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Fan geometry with `detector_spacing = k*pi/num_views`, which puts
    /// every conjugate view offset exactly on the view grid.
    pub fn exact_fan(num_views: usize, num_detectors: usize, k: u32, source_radius: f64) -> Result<Self> {
        let spacing = k as f64 * std::f64::consts::PI / num_views as f64;
        FanGeometry::new(num_views, num_detectors, spacing, source_radius, ScanMode::Fan)
    }

    /// Parallel geometry whose detector bins span `[-1, 1]`.
    pub fn parallel(num_views: usize, num_detectors: usize) -> Result<Self> {
        if num_detectors < 2 {
            return Err(Error::domain("parallel geometry needs at least 2 detectors"));
        }
        let spacing = 2.0 / (num_detectors - 1) as f64;
        FanGeometry::new(num_views, num_detectors, spacing, 0.0, ScanMode::Parallel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_views == 0 {
            return Err(Error::domain("num_views must be positive"));
        }
        if self.num_detectors == 0 || self.num_detectors % 2 == 0 {
            return Err(Error::domain(format!(
                "num_detectors must be a positive odd integer, got {}",
                self.num_detectors
            )));
        }
        if !(self.detector_spacing > 0.0) || !self.detector_spacing.is_finite() {
            return Err(Error::domain("detector_spacing must be positive and finite"));
        }
        if self.mode == ScanMode::Fan {
            if !(self.source_radius > 0.0) {
                return Err(Error::domain("fan mode requires source_radius > 0"));
            }
            let half_angle = self.detector_spacing * self.half_width() as f64;
            if half_angle >= std::f64::consts::FRAC_PI_2 {
                return Err(Error::domain(format!(
                    "fan half-angle {half_angle} must be < pi/2"
                )));
            }
        }
        Ok(())
    }

    /// Largest valid signed detector index, `(D-1)/2`.
    pub fn half_width(&self) -> i64 {
        (self.num_detectors as i64 - 1) / 2
    }

    /// Raster column of signed detector index `j`.
    pub fn column(&self, j: i64) -> usize {
        (j + self.half_width()) as usize
    }

    /// Signed detector index of raster column `col`.
    pub fn signed_index(&self, col: usize) -> i64 {
        col as i64 - self.half_width()
    }

    pub fn view_angle(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * i as f64 / self.num_views as f64
    }

    /// Angle (fan) or linear offset (parallel) of signed detector index `j`.
    pub fn detector_angle(&self, j: i64) -> Result<f64> {
        if j.abs() > self.half_width() {
            return Err(Error::domain(format!(
                "detector index {j} out of range +-{}",
                self.half_width()
            )));
        }
        Ok(j as f64 * self.detector_spacing)
    }

    /// The physical line sampled at view `i`, raster column `col`.
    pub fn ray(&self, i: usize, col: usize) -> Ray {
        let beta = self.view_angle(i);
        let j = self.signed_index(col);
        match self.mode {
            ScanMode::Fan => {
                let gamma = j as f64 * self.detector_spacing;
                let origin = [
                    -self.source_radius * beta.sin(),
                    self.source_radius * beta.cos(),
                ];
                let a = beta + gamma;
                Ray {
                    origin,
                    dir: [a.sin(), -a.cos()],
                }
            }
            ScanMode::Parallel => {
                let s = j as f64 * self.detector_spacing;
                Ray {
                    origin: [s * beta.cos(), s * beta.sin()],
                    dir: [-beta.sin(), beta.cos()],
                }
            }
        }
    }

    /// Conjugate view offset `(pi + 2*j*gamma_d) * P / (2*pi)` before the
    /// integer truncation. Parallel mode uses `gamma_d = 0`.
    pub fn conjugate_offset(&self, j: i64) -> f64 {
        let gamma_d = match self.mode {
            ScanMode::Fan => self.detector_spacing,
            ScanMode::Parallel => 0.0,
        };
        let p = self.num_views as f64;
        0.5 * p + j as f64 * gamma_d * p / std::f64::consts::PI
    }

    /// True when every conjugate view offset lands on the view grid.
    pub fn is_exact_grid(&self) -> bool {
        (0..=self.half_width()).all(|j| {
            let x = self.conjugate_offset(j);
            (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0)
        })
    }
}

/// Detector angle of signed index `j` under `geom` (Eq. form `j * gamma_d`).
pub fn detector_angle(j: i64, geom: &FanGeometry) -> Result<f64> {
    geom.detector_angle(j)
}
