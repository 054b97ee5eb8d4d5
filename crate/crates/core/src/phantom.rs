//! Analytic ellipse phantoms: generation, rasterization and exact
//! line integrals.

use crate::error::{Error, Result};
use crate::geometry::{FanGeometry, Ray, ScanMode};
use crate::image::Image;
use crate::rng::SplitMix64;
use crate::sinogram::Sinogram;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Semi-axes `[a, b]` before rotation.
    pub semi_axes: [f64; 2],
    /// Counterclockwise rotation in radians.
    pub rotation: f64,
    /// Additive attenuation inside the ellipse.
    pub density: f64,
}

impl Ellipse {
    /// True when point `p` lies inside (or on) the ellipse.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (u, v) = self.to_local(p);
        (u / self.semi_axes[0]).powi(2) + (v / self.semi_axes[1]).powi(2) <= 1.0
    }

    #[inline]
    fn to_local(&self, p: [f64; 2]) -> (f64, f64) {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let (s, c) = self.rotation.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Exact chord length of `ray` through the ellipse (0 on a miss).
    pub fn chord_length(&self, ray: &Ray) -> f64 {
        let (qx, qy) = self.to_local(ray.origin);
        let (s, c) = self.rotation.sin_cos();
        let ex = c * ray.dir[0] + s * ray.dir[1];
        let ey = -s * ray.dir[0] + c * ray.dir[1];
        let (a, b) = (self.semi_axes[0], self.semi_axes[1]);
        let qa = (ex / a).powi(2) + (ey / b).powi(2);
        let qb = 2.0 * (qx * ex / (a * a) + qy * ey / (b * b));
        let qc = (qx / a).powi(2) + (qy / b).powi(2) - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc <= 0.0 {
            0.0
        } else {
            // |t2 - t1| for a unit-length direction.
            disc.sqrt() / qa
        }
    }
}

/// A scene of additive ellipses inside the unit-radius field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ellipses: Vec<Ellipse>,
}

impl Phantom {
    pub fn empty() -> Self {
        Phantom { ellipses: Vec::new() }
    }

    /// Sum of densities of all ellipses containing `p`.
    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        self.ellipses
            .iter()
            .filter(|e| e.contains(p))
            .map(|e| e.density)
            .sum()
    }

    /// Scale every density by `factor`.
    pub fn scaled(&self, factor: f64) -> Phantom {
        Phantom {
            ellipses: self
                .ellipses
                .iter()
                .map(|e| Ellipse {
                    density: e.density * factor,
                    ..*e
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Complexity {
    Small,
    Medium,
}

/// The fixed ten-ellipse head phantom (modified Shepp-Logan densities).
pub fn shepp_logan() -> Phantom {
    let deg = |d: f64| d.to_radians();
    let e = |cx: f64, cy: f64, a: f64, b: f64, rot: f64, rho: f64| Ellipse {
        center: [cx, cy],
        semi_axes: [a, b],
        rotation: rot,
        density: rho,
    };
    Phantom {
        ellipses: vec![
            e(0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
            e(0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
            e(0.22, 0.0, 0.11, 0.31, deg(-18.0), -0.2),
            e(-0.22, 0.0, 0.16, 0.41, deg(18.0), -0.2),
            e(0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
            e(0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
            e(0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
            e(-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
            e(0.0, -0.605, 0.023, 0.023, 0.0, 0.1),
            e(0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
        ],
    }
}

/// Deterministic random phantom. Seed 0 always yields the fixed
/// Shepp-Logan-style preset; other seeds draw 3-10 positive-density
/// ellipses fully inside the field of view.
pub fn make_phantom(seed: u64, complexity: Complexity) -> Phantom {
    if seed == 0 {
        return shepp_logan();
    }
    let mut rng = SplitMix64::new(seed.wrapping_mul(0x5851_F42D_4C95_7F2D));
    let n = match complexity {
        Complexity::Small => 3 + rng.below(3) as usize,  // 3..=5
        Complexity::Medium => 6 + rng.below(5) as usize, // 6..=10
    };
    // A large soft body ellipse first, features on top of it.
    let mut ellipses = vec![Ellipse {
        center: [rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)],
        semi_axes: [rng.uniform(0.55, 0.8), rng.uniform(0.55, 0.8)],
        rotation: rng.uniform(0.0, std::f64::consts::PI),
        density: rng.uniform(0.4, 0.7),
    }];
    while ellipses.len() < n {
        let cx = rng.uniform(-0.55, 0.55);
        let cy = rng.uniform(-0.55, 0.55);
        let reach = 0.95 - (cx * cx + cy * cy).sqrt();
        let max_axis = reach.min(0.35);
        ellipses.push(Ellipse {
            center: [cx, cy],
            semi_axes: [
                rng.uniform(0.05, max_axis),
                rng.uniform(0.05, max_axis),
            ],
            rotation: rng.uniform(0.0, std::f64::consts::PI),
            density: rng.uniform(0.2, 1.0),
        });
    }
    Phantom { ellipses }
}

/// Point-sampled raster: each pixel takes the phantom value at its center.
pub fn rasterize(phantom: &Phantom, width: usize) -> Result<Image> {
    if width < 8 {
        return Err(Error::domain(format!("raster width {width} must be >= 8")));
    }
    let mut img = Image::zeros(width);
    for row in 0..width {
        for col in 0..width {
            let p = img.pixel_center(row, col);
            let v = phantom.value_at(p);
            img.set(row, col, v);
        }
    }
    Ok(img)
}

/// Exact noiseless sinogram: entry `(i, j)` is the closed-form line
/// integral of the phantom along ray `(i, j)`.
pub fn analytic_sinogram(phantom: &Phantom, geom: &FanGeometry) -> Result<Sinogram> {
    geom.validate()?;
    if geom.mode == ScanMode::Fan && geom.source_radius <= 1.0 {
        return Err(Error::domain(
            "fan source radius must exceed the unit field of view",
        ));
    }
    let mut sino = Sinogram::zeros(geom.clone());
    for i in 0..geom.num_views {
        for col in 0..geom.num_detectors {
            let ray = geom.ray(i, col);
            let v: f64 = phantom
                .ellipses
                .iter()
                .map(|e| e.density * e.chord_length(&ray))
                .sum();
            sino.set(i, col, v);
        }
    }
    Ok(sino)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(r: f64, density: f64) -> Phantom {
        Phantom {
            ellipses: vec![Ellipse {
                center: [0.0, 0.0],
                semi_axes: [r, r],
                rotation: 0.0,
                density,
            }],
        }
    }

    #[test]
    fn seed_zero_is_the_preset() {
        let p = make_phantom(0, Complexity::Small);
        assert_eq!(p, shepp_logan());
        assert_eq!(p.ellipses.len(), 10);
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let a = make_phantom(1, Complexity::Small);
        let b = make_phantom(1, Complexity::Small);
        let c = make_phantom(2, Complexity::Small);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.ellipses.len() >= 3 && a.ellipses.len() <= 5);
        let m = make_phantom(3, Complexity::Medium);
        assert!(m.ellipses.len() >= 6 && m.ellipses.len() <= 10);
    }

    #[test]
    fn generated_ellipses_stay_in_fov() {
        for seed in 1..50 {
            for e in make_phantom(seed, Complexity::Medium).ellipses {
                let r = (e.center[0].powi(2) + e.center[1].powi(2)).sqrt();
                let m = e.semi_axes[0].max(e.semi_axes[1]);
                assert!(r + m <= 1.0, "seed {seed}: ellipse leaves FOV");
                assert!(e.density.is_finite() && e.density > 0.0);
                assert!(e.semi_axes[0] > 0.0 && e.semi_axes[1] > 0.0);
            }
        }
    }

    #[test]
    fn rasterize_empty_is_zero() {
        let img = rasterize(&Phantom::empty(), 16).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rasterize_rejects_tiny_width() {
        assert!(rasterize(&Phantom::empty(), 7).is_err());
    }

    #[test]
    fn rasterize_center_pixel() {
        let img = rasterize(&disk(0.5, 1.0), 16).unwrap();
        // pixel (8, 8) center is (0.0625, 0.0625), inside the disk
        assert_eq!(img.at(8, 8), 1.0);
        assert_eq!(img.at(0, 0), 0.0);
    }

    #[test]
    fn analytic_empty_phantom_is_zero() {
        let geom = FanGeometry::parallel(16, 9).unwrap();
        let s = analytic_sinogram(&Phantom::empty(), &geom).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn analytic_center_chord_parallel() {
        let geom = FanGeometry::parallel(24, 17).unwrap();
        let s = analytic_sinogram(&disk(0.37, 1.0), &geom).unwrap();
        let c = geom.column(0);
        for i in 0..24 {
            assert!((s.at(i, c) - 2.0 * 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_fan_disk_is_view_independent() {
        let geom = FanGeometry::exact_fan(90, 33, 2, 2.0).unwrap();
        let s = analytic_sinogram(&disk(0.4, 0.7), &geom).unwrap();
        for col in 0..33 {
            let v0 = s.at(0, col);
            for i in 1..90 {
                assert!(
                    (s.at(i, col) - v0).abs() < 1e-12,
                    "view {i} col {col}: {} vs {v0}",
                    s.at(i, col)
                );
            }
        }
    }

    #[test]
    fn analytic_rejects_source_inside_fov() {
        let geom = FanGeometry::new(90, 33, 0.01, 0.9, ScanMode::Fan).unwrap();
        assert!(analytic_sinogram(&disk(0.4, 1.0), &geom).is_err());
    }

    #[test]
    fn analytic_scaling_linearity() {
        let geom = FanGeometry::exact_fan(36, 33, 1, 2.0).unwrap();
        let p = make_phantom(5, Complexity::Medium);
        let s1 = analytic_sinogram(&p, &geom).unwrap();
        let s2 = analytic_sinogram(&p.scaled(2.0), &geom).unwrap();
        for (a, b) in s1.data.iter().zip(s2.data.iter()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn analytic_rotational_symmetry_rows_shift() {
        // A phantom symmetric under rotation by 2*pi/P: one centered disk
        // plus P=4 copies of a small off-center disk.
        let p_views = 4usize;
        let mut ellipses = vec![Ellipse {
            center: [0.0, 0.0],
            semi_axes: [0.3, 0.3],
            rotation: 0.0,
            density: 1.0,
        }];
        for k in 0..p_views {
            let a = 2.0 * std::f64::consts::PI * k as f64 / p_views as f64;
            ellipses.push(Ellipse {
                center: [0.5 * a.cos(), 0.5 * a.sin()],
                semi_axes: [0.1, 0.1],
                rotation: 0.0,
                density: 0.5,
            });
        }
        let phantom = Phantom { ellipses };
        let geom = FanGeometry::parallel(p_views, 33).unwrap();
        let s = analytic_sinogram(&phantom, &geom).unwrap();
        for i in 1..p_views {
            for col in 0..33 {
                let d = (s.at(i, col) - s.at(0, col)).abs();
                assert!(d < 1e-9, "row {i} col {col} differs by {d}");
            }
        }
    }
}
