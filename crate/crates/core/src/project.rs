//! Ray-driven forward projection of raster images.
//!
//! Each sinogram entry is the exact line integral of the piecewise-constant
//! raster: the ray is walked cell to cell and every crossed pixel
//! contributes its value times the traversal length.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{FanGeometry, Ray};
use crate::image::Image;
use crate::sinogram::Sinogram;

/// Forward-project a square image onto the given scan geometry.
pub fn forward_project(image: &Image, geom: &FanGeometry) -> Result<Sinogram> {
    geom.validate()?;
    if !image.is_square() {
        return Err(Error::domain("forward projection requires a square image"));
    }
    let p = geom.num_views;
    let d = geom.num_detectors;
    let mut data = vec![0.0; p * d];
    data.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        for (col, out) in row.iter_mut().enumerate() {
            *out = line_integral(image, &geom.ray(i, col));
        }
    });
    Sinogram::new(geom.clone(), data)
}

/// Exact traversal-length line integral of `ray` through the pixel grid.
pub fn line_integral(image: &Image, ray: &Ray) -> f64 {
    let w = image.width;
    let h = image.height;
    let ps = image.pixel_size;
    let ex = 0.5 * w as f64 * ps;
    let ey = 0.5 * h as f64 * ps;
    let [ox, oy] = ray.origin;
    let [dx, dy] = ray.dir;

    // Entry/exit parameters of the grid bounding box (slab method).
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (o, d, lo, hi) in [(ox, dx, -ex, ex), (oy, dy, -ey, ey)] {
        if d.abs() < 1e-300 {
            if o < lo || o > hi {
                return 0.0;
            }
        } else {
            let (ta, tb) = ((lo - o) / d, (hi - o) / d);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    if t1 <= t0 {
        return 0.0;
    }

    // Current cell from the segment start, nudged inside.
    let start_t = t0 + 1e-12 * (t1 - t0);
    let px = ox + start_t * dx;
    let py = oy + start_t * dy;
    let mut ix = (((px + ex) / ps).floor() as i64).clamp(0, w as i64 - 1);
    let mut iy = (((py + ey) / ps).floor() as i64).clamp(0, h as i64 - 1);

    // Parameter of the next grid-line crossing along each axis.
    let next_crossing = |cell: i64, o: f64, d: f64, lo: f64| -> f64 {
        if d > 0.0 {
            (lo + (cell + 1) as f64 * ps - o) / d
        } else if d < 0.0 {
            (lo + cell as f64 * ps - o) / d
        } else {
            f64::INFINITY
        }
    };

    let mut t = t0;
    let mut acc = 0.0;
    let mut tx = next_crossing(ix, ox, dx, -ex);
    let mut ty = next_crossing(iy, oy, dy, -ey);
    loop {
        let t_exit = tx.min(ty).min(t1);
        if t_exit > t {
            acc += (t_exit - t) * image.at(iy as usize, ix as usize);
            t = t_exit;
        }
        if t >= t1 {
            break;
        }
        if tx <= ty {
            ix += if dx > 0.0 { 1 } else { -1 };
            if ix < 0 || ix >= w as i64 {
                break;
            }
            tx = next_crossing(ix, ox, dx, -ex);
        } else {
            iy += if dy > 0.0 { 1 } else { -1 };
            if iy < 0 || iy >= h as i64 {
                break;
            }
            ty = next_crossing(iy, oy, dy, -ey);
        }
    }
    acc
}
