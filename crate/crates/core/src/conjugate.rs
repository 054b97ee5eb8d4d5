//! Conjugate sampling pairs.
//!
//! Two samples `(view i, detector j)` and `(view i', detector -j)` measure
//! the same physical line from opposite directions when
//! `i' = i + int((pi + 2*j*gamma_d) * P / (2*pi)) mod P`. On "exact-grid"
//! geometries the view offset is an integer for every `j` and the pairing
//! is an involution; otherwise the truncation loses up to one view.

use crate::error::{Error, Result};
use crate::geometry::FanGeometry;
use crate::sinogram::Sinogram;

/// Precomputed conjugate index tables for one geometry.
#[derive(Debug, Clone)]
pub struct ConjugateMap {
    pub num_views: usize,
    pub num_detectors: usize,
    /// Per raster column: view shift `int((pi + 2*j*gamma_d)*P/(2*pi))`.
    view_shift: Vec<usize>,
    /// True when every shift is exactly integral before truncation.
    pub exact: bool,
}

/// Truncate toward zero, snapping first so that offsets that are integral
/// up to f64 rounding stay on the grid.
fn truncate_offset(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as i64
    } else {
        x.trunc() as i64
    }
}

impl ConjugateMap {
    pub fn new(geom: &FanGeometry) -> Result<Self> {
        geom.validate()?;
        let p = geom.num_views;
        let d = geom.num_detectors;
        let mut view_shift = Vec::with_capacity(d);
        let mut exact = true;
        for col in 0..d {
            let j = geom.signed_index(col);
            let x = geom.conjugate_offset(j);
            if (x - x.round()).abs() > 1e-9 * x.abs().max(1.0) {
                exact = false;
            }
            let shift = truncate_offset(x).rem_euclid(p as i64) as usize;
            view_shift.push(shift);
        }
        Ok(ConjugateMap {
            num_views: p,
            num_detectors: d,
            view_shift,
            exact,
        })
    }

    /// Conjugate raster location of `(view, col)`.
    #[inline]
    pub fn map(&self, view: usize, col: usize) -> (usize, usize) {
        let i = (view + self.view_shift[col]) % self.num_views;
        (i, self.num_detectors - 1 - col)
    }

    /// Flat index version of [`map`](Self::map).
    #[inline]
    pub fn map_flat(&self, idx: usize) -> usize {
        let (view, col) = (idx / self.num_detectors, idx % self.num_detectors);
        let (i, j) = self.map(view, col);
        i * self.num_detectors + j
    }
}

/// Conjugate location of view `i`, signed detector index `j`.
pub fn conjugate_index(i: usize, j: i64, geom: &FanGeometry) -> Result<(usize, i64)> {
    geom.validate()?;
    if i >= geom.num_views {
        return Err(Error::domain(format!(
            "view index {i} out of range {}",
            geom.num_views
        )));
    }
    if j.abs() > geom.half_width() {
        return Err(Error::domain(format!(
            "detector index {j} out of range +-{}",
            geom.half_width()
        )));
    }
    let shift = truncate_offset(geom.conjugate_offset(j));
    let i2 = (i as i64 + shift).rem_euclid(geom.num_views as i64) as usize;
    Ok((i2, -j))
}

/// Gather of the conjugate locations: output `(i, j) = input(i', j')`.
pub fn conjugate_sinogram(s: &Sinogram) -> Result<Sinogram> {
    let map = ConjugateMap::new(&s.geometry)?;
    let mut out = Sinogram::zeros(s.geometry.clone());
    for idx in 0..s.data.len() {
        out.data[idx] = s.data[map.map_flat(idx)];
    }
    Ok(out)
}

/// Gather with linear interpolation over the fractional view offset, for
/// geometries that are not on an exact grid. Off the default paths.
pub fn conjugate_sinogram_interp(s: &Sinogram) -> Result<Sinogram> {
    let geom = &s.geometry;
    geom.validate()?;
    let p = geom.num_views;
    let d = geom.num_detectors;
    let mut out = Sinogram::zeros(geom.clone());
    for col in 0..d {
        let x = geom.conjugate_offset(geom.signed_index(col));
        let lo = x.floor();
        let frac = x - lo;
        let mirror = d - 1 - col;
        for view in 0..p {
            let i0 = (view as i64 + lo as i64).rem_euclid(p as i64) as usize;
            let i1 = (i0 + 1) % p;
            let v = (1.0 - frac) * s.at(i0, mirror) + frac * s.at(i1, mirror);
            out.set(view, col, v);
        }
    }
    Ok(out)
}
