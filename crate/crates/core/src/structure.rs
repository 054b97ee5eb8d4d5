//! Sinogram structure losses with analytic gradients.
//!
//! * `conjugate_loss` – mean squared deviation between a sinogram and its
//!   conjugate gather. Noise breaks the conjugate pairing, so this grows
//!   with noise level and vanishes on clean data over exact grids.
//! * `curvature_loss` – mean epsilon-smoothed root of squared
//!   second-derivative differences against a reference sinogram; sinograms
//!   are near piecewise-linear, so curvature differences isolate noise.
//! * `structure_loss` – the sum of the two.
//!
//! Gradients are returned alongside the value as dense `P*D` buffers and
//! are exact derivatives of the discrete expressions.

use crate::conjugate::ConjugateMap;
use crate::error::{Error, Result};
use crate::sinogram::Sinogram;

/// Smoothing constant inside the curvature root; keeps the gradient
/// finite at the converged (zero-residual) state.
pub const CURVATURE_EPS: f64 = 1e-12;

/// Central second differences of a P x D field. Boundary entries are zero
/// (valid-region convention): no curvature is fabricated at the edge.
#[derive(Debug, Clone)]
pub struct DerivativeFields {
    pub dii: Vec<f64>,
    pub djj: Vec<f64>,
    pub dij: Vec<f64>,
    pub dji: Vec<f64>,
}

/// Stencil fields of a raw row-major buffer.
pub fn derivative_fields_raw(v: &[f64], p: usize, d: usize) -> DerivativeFields {
    let n = p * d;
    let mut f = DerivativeFields {
        dii: vec![0.0; n],
        djj: vec![0.0; n],
        dij: vec![0.0; n],
        dji: vec![0.0; n],
    };
    let at = |i: usize, j: usize| v[i * d + j];
    for i in 1..p.saturating_sub(1) {
        for j in 1..d - 1 {
            let k = i * d + j;
            f.dii[k] = at(i + 1, j) - 2.0 * at(i, j) + at(i - 1, j);
            f.djj[k] = at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1);
            let cross =
                0.25 * (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1));
            f.dij[k] = cross;
            f.dji[k] = cross;
        }
    }
    f
}

/// Second-derivative stencil fields of a sinogram.
pub fn second_order_derivatives(s: &Sinogram) -> Result<DerivativeFields> {
    let (p, d) = (s.num_views(), s.num_detectors());
    if p < 3 || d < 3 {
        return Err(Error::domain(format!(
            "second derivatives need at least 3x3, got {p}x{d}"
        )));
    }
    Ok(derivative_fields_raw(&s.data, p, d))
}

/// Mean squared conjugate residual `(1/(P*D)) * sum (S - S_conj)^2` and
/// its gradient. The gradient carries both the direct term and the
/// scatter of the gathered term back through the index table.
pub fn conjugate_loss_raw(v: &[f64], map: &ConjugateMap) -> (f64, Vec<f64>) {
    let n = v.len();
    let inv = 1.0 / n as f64;
    let mut grad = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut loss = 0.0;
    for x in 0..n {
        let r = v[x] - v[map.map_flat(x)];
        residual[x] = r;
        loss += r * r;
    }
    for x in 0..n {
        let c = 2.0 * inv * residual[x];
        grad[x] += c;
        grad[map.map_flat(x)] -= c;
    }
    (loss * inv, grad)
}

pub fn conjugate_loss(s: &Sinogram) -> Result<(f64, Vec<f64>)> {
    let map = ConjugateMap::new(&s.geometry)?;
    Ok(conjugate_loss_raw(&s.data, &map))
}

/// Curvature loss `(1/(P*D)) * sum sqrt(Dii^2 + Djj^2 + Dij^2 + Dji^2 + eps)`
/// between `hat` and the reference `nd`, with its gradient w.r.t. `hat`.
pub fn curvature_loss_raw(hat: &[f64], nd: &[f64], p: usize, d: usize) -> (f64, Vec<f64>) {
    let n = p * d;
    let diff: Vec<f64> = hat.iter().zip(nd).map(|(a, b)| a - b).collect();
    let f = derivative_fields_raw(&diff, p, d);
    let inv = 1.0 / n as f64;
    let mut loss = n as f64 * CURVATURE_EPS.sqrt(); // boundary cells contribute sqrt(eps)
    let mut grad = vec![0.0; n];
    for i in 1..p.saturating_sub(1) {
        for j in 1..d - 1 {
            let k = i * d + j;
            let (a, b, c) = (f.dii[k], f.djj[k], f.dij[k]);
            let root = (a * a + b * b + 2.0 * c * c + CURVATURE_EPS).sqrt();
            loss += root - CURVATURE_EPS.sqrt();
            let w = inv / root;
            // d(root)/d(diff): scatter each stencil transpose
            let wa = w * a;
            grad[k - d] += wa;
            grad[k] -= 2.0 * wa;
            grad[k + d] += wa;
            let wb = w * b;
            grad[k - 1] += wb;
            grad[k] -= 2.0 * wb;
            grad[k + 1] += wb;
            // dij and dji are the same stencil, hence the factor 2
            let wc = w * 2.0 * c * 0.25;
            grad[k + d + 1] += wc;
            grad[k + d - 1] -= wc;
            grad[k - d + 1] -= wc;
            grad[k - d - 1] += wc;
        }
    }
    (loss * inv, grad)
}

pub fn curvature_loss(s_hat: &Sinogram, s_nd: &Sinogram) -> Result<(f64, Vec<f64>)> {
    if !s_hat.same_shape(s_nd) {
        return Err(Error::shape("curvature loss operands differ in shape"));
    }
    let (p, d) = (s_hat.num_views(), s_hat.num_detectors());
    if p < 3 || d < 3 {
        return Err(Error::domain(format!(
            "curvature loss needs at least 3x3, got {p}x{d}"
        )));
    }
    Ok(curvature_loss_raw(&s_hat.data, &s_nd.data, p, d))
}

/// Combined structure loss: conjugate + curvature, gradient summed.
pub fn structure_loss_raw(
    hat: &[f64],
    nd: &[f64],
    p: usize,
    d: usize,
    map: &ConjugateMap,
) -> (f64, Vec<f64>) {
    let (lc, gc) = conjugate_loss_raw(hat, map);
    let (ls, gs) = curvature_loss_raw(hat, nd, p, d);
    let grad = gc.iter().zip(gs).map(|(a, b)| a + b).collect();
    (lc + ls, grad)
}

pub fn structure_loss(s_hat: &Sinogram, s_nd: &Sinogram) -> Result<(f64, Vec<f64>)> {
    if !s_hat.same_shape(s_nd) {
        return Err(Error::shape("structure loss operands differ in shape"));
    }
    let map = ConjugateMap::new(&s_hat.geometry)?;
    let (p, d) = (s_hat.num_views(), s_hat.num_detectors());
    Ok(structure_loss_raw(&s_hat.data, &s_nd.data, p, d, &map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FanGeometry;
    use crate::noise::{insert_low_dose_noise, DoseConfig};
    use crate::phantom::{analytic_sinogram, make_phantom, Complexity};
    use crate::rng::SplitMix64;

    fn field_sino(p: usize, d: usize, f: impl Fn(usize, usize) -> f64) -> Sinogram {
        let geom = FanGeometry::parallel(p, d).unwrap();
        let mut s = Sinogram::zeros(geom);
        for i in 0..p {
            for j in 0..d {
                s.set(i, j, f(i, j));
            }
        }
        s
    }

    /// Central finite difference of `f` at every requested coordinate.
    fn fd_check(
        value_grad: impl Fn(&[f64]) -> (f64, Vec<f64>),
        x0: &[f64],
        coords: &[usize],
    ) {
        let (_, grad) = value_grad(x0);
        let h = 1e-5;
        for &k in coords {
            let mut xp = x0.to_vec();
            let mut xm = x0.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let fp = value_grad(&xp).0;
            let fm = value_grad(&xm).0;
            let num = (fp - fm) / (2.0 * h);
            let rel = (grad[k] - num).abs() / grad[k].abs().max(num.abs()).max(1e-8);
            assert!(
                rel <= 1e-4,
                "coord {k}: analytic {} vs numeric {num} (rel {rel})",
                grad[k]
            );
        }
    }

    fn random_coords(n: usize, count: usize, seed: u64) -> Vec<usize> {
        let mut rng = SplitMix64::new(seed);
        (0..count).map(|_| rng.below(n as u64) as usize).collect()
    }

    #[test]
    fn derivative_fields_of_affine_vanish() {
        let s = field_sino(8, 9, |i, j| 3.0 * i as f64 - 2.0 * j as f64 + 0.5);
        let f = second_order_derivatives(&s).unwrap();
        for v in f.dii.iter().chain(&f.djj).chain(&f.dij).chain(&f.dji) {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_fields_quadratic_and_bilinear() {
        let s = field_sino(8, 9, |i, _| (i * i) as f64);
        let f = second_order_derivatives(&s).unwrap();
        for i in 1..7 {
            for j in 1..8 {
                let k = i * 9 + j;
                assert!((f.dii[k] - 2.0).abs() < 1e-12);
                assert!(f.djj[k].abs() < 1e-12);
                assert!(f.dij[k].abs() < 1e-12);
            }
        }
        let s = field_sino(8, 9, |i, j| (i * j) as f64);
        let f = second_order_derivatives(&s).unwrap();
        for i in 1..7 {
            for j in 1..8 {
                let k = i * 9 + j;
                assert!((f.dij[k] - 1.0).abs() < 1e-12);
                assert!((f.dji[k] - 1.0).abs() < 1e-12);
                assert!(f.dii[k].abs() < 1e-12);
                assert!(f.djj[k].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivative_fields_reject_tiny() {
        let s = field_sino(2, 9, |_, _| 0.0);
        assert!(second_order_derivatives(&s).is_err());
    }

    #[test]
    fn conjugate_loss_zero_on_constant_and_translation_invariant() {
        let s = field_sino(36, 17, |_, _| 2.2);
        let (lc, _) = conjugate_loss(&s).unwrap();
        assert_eq!(lc, 0.0);

        // shifting a noisy sinogram by a constant leaves the residuals,
        // hence the loss, unchanged (up to f64 rounding of the shift)
        let geom = FanGeometry::exact_fan(72, 33, 2, 2.0).unwrap();
        let base = analytic_sinogram(&make_phantom(4, Complexity::Medium), &geom).unwrap();
        let noisy = insert_low_dose_noise(&base, &DoseConfig::new(0.1, 2)).unwrap();
        let shifted =
            Sinogram::new(geom, noisy.data.iter().map(|v| v + 5.0).collect()).unwrap();
        let (l0, _) = conjugate_loss(&noisy).unwrap();
        let (l1, _) = conjugate_loss(&shifted).unwrap();
        assert!((l0 - l1).abs() <= 1e-12 * l0.max(1e-300), "{l0} vs {l1}");
    }

    #[test]
    fn conjugate_loss_vanishes_on_clean_exact_grid() {
        let geom = FanGeometry::exact_fan(360, 65, 2, 2.0).unwrap();
        let s = analytic_sinogram(&make_phantom(7, Complexity::Medium), &geom).unwrap();
        let (lc, _) = conjugate_loss(&s).unwrap();
        assert!(lc <= 1e-15, "clean L_C = {lc}");
    }

    #[test]
    fn conjugate_loss_grows_under_noise() {
        let geom = FanGeometry::exact_fan(180, 33, 2, 2.0).unwrap();
        let s = analytic_sinogram(&make_phantom(7, Complexity::Medium), &geom).unwrap();
        let (clean, _) = conjugate_loss(&s).unwrap();
        for seed in 0..3 {
            let noisy = insert_low_dose_noise(&s, &DoseConfig::new(0.1, seed)).unwrap();
            let (ln, _) = conjugate_loss(&noisy).unwrap();
            assert!(ln > 10.0 * clean.max(1e-18), "seed {seed}: {ln} vs {clean}");
        }
    }

    #[test]
    fn conjugate_loss_gradient_matches_fd() {
        let geom = FanGeometry::exact_fan(24, 17, 1, 2.0).unwrap();
        let map = ConjugateMap::new(&geom).unwrap();
        let mut rng = SplitMix64::new(42);
        let x0: Vec<f64> = (0..24 * 17).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let coords = random_coords(x0.len(), 100, 7);
        fd_check(|v| conjugate_loss_raw(v, &map), &x0, &coords);
    }

    #[test]
    fn curvature_loss_identical_inputs_hit_floor() {
        let geom = FanGeometry::parallel(12, 11).unwrap();
        let s = analytic_sinogram(&make_phantom(2, Complexity::Small), &geom).unwrap();
        let (ls, grad) = curvature_loss(&s, &s).unwrap();
        assert!((ls - CURVATURE_EPS.sqrt()).abs() < 1e-15);
        assert!(grad.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn curvature_loss_ignores_affine_ramps() {
        let geom = FanGeometry::parallel(12, 11).unwrap();
        let s = analytic_sinogram(&make_phantom(2, Complexity::Small), &geom).unwrap();
        let ramped = Sinogram::new(
            geom,
            s.data
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let (i, j) = (k / 11, k % 11);
                    v + 0.3 * i as f64 - 0.1 * j as f64 + 1.0
                })
                .collect(),
        )
        .unwrap();
        let (ls, _) = curvature_loss(&ramped, &s).unwrap();
        assert!(ls <= CURVATURE_EPS.sqrt() + 1e-12, "ramped L_S = {ls}");
    }

    #[test]
    fn curvature_loss_impulse_matches_brute_force() {
        let (p, d) = (9usize, 9usize);
        let base = field_sino(p, d, |_, _| 0.0);
        let mut hat = base.clone();
        let (i0, j0) = (4usize, 4usize);
        hat.set(i0, j0, 1.0);
        let (ls, _) = curvature_loss(&hat, &base).unwrap();

        // Direct evaluation: the impulse only affects stencils centered in
        // the 5x5 neighborhood around (i0, j0).
        let e = |i: usize, j: usize| if (i, j) == (i0, j0) { 1.0f64 } else { 0.0 };
        let mut want = 0.0;
        for i in 1..p - 1 {
            for j in 1..d - 1 {
                let dii = e(i + 1, j) - 2.0 * e(i, j) + e(i - 1, j);
                let djj = e(i, j + 1) - 2.0 * e(i, j) + e(i, j - 1);
                let m = 0.25 * (e(i + 1, j + 1) - e(i + 1, j - 1) - e(i - 1, j + 1) + e(i - 1, j - 1));
                want += (dii * dii + djj * djj + 2.0 * m * m + CURVATURE_EPS).sqrt();
            }
        }
        // boundary cells contribute the smoothing floor
        let interior = (p - 2) * (d - 2);
        want += (p * d - interior) as f64 * CURVATURE_EPS.sqrt();
        want /= (p * d) as f64;
        assert!((ls - want).abs() < 1e-15, "{ls} vs {want}");
        assert!(ls > 10.0 * CURVATURE_EPS.sqrt());
    }

    #[test]
    fn curvature_loss_gradient_matches_fd() {
        let (p, d) = (10usize, 9usize);
        let mut rng = SplitMix64::new(11);
        let nd: Vec<f64> = (0..p * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x0: Vec<f64> = (0..p * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let coords = random_coords(x0.len(), 100, 13);
        fd_check(|v| curvature_loss_raw(v, &nd, p, d), &x0, &coords);
    }

    #[test]
    fn structure_loss_is_sum_of_components() {
        let geom = FanGeometry::exact_fan(24, 17, 1, 2.0).unwrap();
        let s_nd = analytic_sinogram(&make_phantom(5, Complexity::Small), &geom).unwrap();
        let s_hat = insert_low_dose_noise(&s_nd, &DoseConfig::new(0.2, 1)).unwrap();
        let (total, gt) = structure_loss(&s_hat, &s_nd).unwrap();
        let (lc, gc) = conjugate_loss(&s_hat).unwrap();
        let (ls, gs) = curvature_loss(&s_hat, &s_nd).unwrap();
        assert!((total - (lc + ls)).abs() <= 1e-12);
        for k in 0..gt.len() {
            assert!((gt[k] - (gc[k] + gs[k])).abs() <= 1e-12);
        }
    }

    #[test]
    fn structure_loss_gradient_matches_fd() {
        let geom = FanGeometry::exact_fan(24, 9, 2, 2.0).unwrap();
        let map = ConjugateMap::new(&geom).unwrap();
        let mut rng = SplitMix64::new(3);
        let nd: Vec<f64> = (0..24 * 9).map(|_| rng.uniform(0.0, 1.0)).collect();
        let x0: Vec<f64> = (0..24 * 9).map(|_| rng.uniform(0.0, 1.0)).collect();
        let coords = random_coords(x0.len(), 100, 29);
        fd_check(|v| structure_loss_raw(v, &nd, 24, 9, &map), &x0, &coords);
    }

    #[test]
    fn structure_loss_rejects_shape_mismatch() {
        let a = field_sino(8, 9, |_, _| 0.0);
        let b = field_sino(8, 11, |_, _| 0.0);
        assert!(curvature_loss(&a, &b).is_err());
        assert!(structure_loss(&a, &b).is_err());
    }

    #[test]
    fn noisy_structure_loss_exceeds_clean() {
        let geom = FanGeometry::exact_fan(90, 33, 2, 2.0).unwrap();
        let s_nd = analytic_sinogram(&make_phantom(9, Complexity::Medium), &geom).unwrap();
        let (clean, _) = structure_loss(&s_nd, &s_nd).unwrap();
        for seed in 0..3 {
            let noisy = insert_low_dose_noise(&s_nd, &DoseConfig::new(0.1, seed)).unwrap();
            let (ln, _) = structure_loss(&noisy, &s_nd).unwrap();
            assert!(ln > clean, "seed {seed}");
        }
    }
}
