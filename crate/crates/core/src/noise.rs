//! Low-dose noise insertion on log-domain projection data.
//!
//! The simulated low-dose sample is `P_B = P_A + sigma(P_A) * x` with `x`
//! standard normal and
//!
//! ```text
//! sigma^2 = (1-a)/a * exp(P_A)/N0A * (1 + (1+a)/a * Ne*exp(P_A)/N0A)
//! ```
//!
//! where `a` is the dose fraction, `N0A` the incident photon count and
//! `Ne` the noise-equivalent quanta of electronic noise. Values are not
//! clipped: extreme draws may go below zero, as in the source model.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::sinogram::Sinogram;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseConfig {
    /// Dose fraction `a` in (0, 1]; 1 means full dose (no added noise).
    pub dose_fraction: f64,
    /// Incident photon count `N0A`.
    pub incident_photons: f64,
    /// Noise-equivalent quanta of electronic noise `Ne`.
    pub electronic_noise: f64,
    pub seed: u64,
}

impl DoseConfig {
    /// The validated photon-counting defaults: `N0A = 1e5`, `Ne = 10`.
    pub fn new(dose_fraction: f64, seed: u64) -> Self {
        DoseConfig {
            dose_fraction,
            incident_photons: 1e5,
            electronic_noise: 10.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dose_fraction > 0.0 && self.dose_fraction <= 1.0) {
            return Err(Error::domain(format!(
                "dose fraction {} must lie in (0, 1]",
                self.dose_fraction
            )));
        }
        if !(self.incident_photons > 0.0) {
            return Err(Error::domain("incident photon count must be positive"));
        }
        if self.electronic_noise < 0.0 {
            return Err(Error::domain("electronic noise must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-sample standard deviation of the inserted noise at log-domain
/// value `p_log`.
pub fn noise_sigma(p_log: f64, cfg: &DoseConfig) -> Result<f64> {
    cfg.validate()?;
    if !p_log.is_finite() {
        return Err(Error::domain("log-domain projection value must be finite"));
    }
    let a = cfg.dose_fraction;
    let q = p_log.exp() / cfg.incident_photons;
    let var = (1.0 - a) / a * q * (1.0 + (1.0 + a) / a * cfg.electronic_noise * q);
    Ok(var.sqrt())
}

/// Simulate a low-dose acquisition. The normal draw for entry `(i, j)` is
/// keyed by `(seed, i, j)`, so the result does not depend on iteration
/// order and is bit-identical across runs and thread counts.
pub fn insert_low_dose_noise(sino: &Sinogram, cfg: &DoseConfig) -> Result<Sinogram> {
    cfg.validate()?;
    let d = sino.num_detectors();
    let mut out = sino.clone();
    out.data
        .par_chunks_mut(d)
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            for (j, v) in row.iter_mut().enumerate() {
                let sigma = noise_sigma(*v, cfg)?;
                if sigma > 0.0 {
                    *v += sigma * standard_normal(cfg.seed, i as u64, j as u64);
                }
            }
            Ok(())
        })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FanGeometry;

    fn flat_sino(p: usize, d: usize, v: f64) -> Sinogram {
        let geom = FanGeometry::parallel(p, d).unwrap();
        Sinogram::new(geom, vec![v; p * d]).unwrap()
    }

    #[test]
    fn sigma_closed_forms() {
        // full dose: factor (1 - a) = 0
        assert_eq!(noise_sigma(3.3, &DoseConfig::new(1.0, 0)).unwrap(), 0.0);
        // pA = 0, a = 0.1: sqrt(9e-5 * 1.0011)
        let s = noise_sigma(0.0, &DoseConfig::new(0.1, 0)).unwrap();
        assert!((s - 9.4921e-3).abs() < 1e-7, "{s}");
        // pA = 0, a = 0.05
        let s = noise_sigma(0.0, &DoseConfig::new(0.05, 0)).unwrap();
        assert!((s - 1.37985e-2).abs() < 1e-7, "{s}");
    }

    #[test]
    fn sigma_rejects_bad_dose() {
        assert!(noise_sigma(0.0, &DoseConfig::new(0.0, 0)).is_err());
        assert!(noise_sigma(0.0, &DoseConfig::new(-0.1, 0)).is_err());
        assert!(noise_sigma(0.0, &DoseConfig::new(1.5, 0)).is_err());
        assert!(noise_sigma(f64::NAN, &DoseConfig::new(0.5, 0)).is_err());
    }

    #[test]
    fn sigma_increases_with_attenuation() {
        let cfg = DoseConfig::new(0.1, 0);
        let grid = [0.0, 1.0, 2.0, 4.0];
        for w in grid.windows(2) {
            let lo = noise_sigma(w[0], &cfg).unwrap();
            let hi = noise_sigma(w[1], &cfg).unwrap();
            assert!(hi > lo, "sigma({}) = {hi} <= sigma({}) = {lo}", w[1], w[0]);
        }
    }

    #[test]
    fn full_dose_is_identity() {
        let s = flat_sino(10, 11, 2.5);
        let out = insert_low_dose_noise(&s, &DoseConfig::new(1.0, 7)).unwrap();
        assert_eq!(s.data, out.data);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let s = flat_sino(20, 21, 1.0);
        let cfg = DoseConfig::new(0.1, 123);
        let a = insert_low_dose_noise(&s, &cfg).unwrap();
        let b = insert_low_dose_noise(&s, &cfg).unwrap();
        assert!(a
            .data
            .iter()
            .zip(b.data.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn monte_carlo_moments_match_sigma() {
        // 1e5 draws at pA = 0, a = 0.1
        let n = 100_000usize;
        let s = flat_sino(n / 100, 101, 0.0);
        let cfg = DoseConfig::new(0.1, 99);
        let noisy = insert_low_dose_noise(&s, &cfg).unwrap();
        let m = noisy.data.iter().sum::<f64>() / noisy.data.len() as f64;
        let var = noisy.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
            / (noisy.data.len() - 1) as f64;
        let sigma = 9.4921e-3;
        let n_f = noisy.data.len() as f64;
        assert!(
            m.abs() < 3.0 * sigma / n_f.sqrt(),
            "mean {m} beyond 3 standard errors"
        );
        assert!(
            (var.sqrt() - sigma).abs() < 0.02 * sigma,
            "std {} vs {sigma}",
            var.sqrt()
        );
    }

    #[test]
    fn dose_ordering_of_noise_levels() {
        let n = 100_000usize;
        let s = flat_sino(n / 100, 101, 0.0);
        let std_at = |a: f64| {
            let noisy = insert_low_dose_noise(&s, &DoseConfig::new(a, 5)).unwrap();
            let m = noisy.data.iter().sum::<f64>() / noisy.data.len() as f64;
            (noisy.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                / (noisy.data.len() - 1) as f64)
                .sqrt()
        };
        let (s05, s10, s20) = (std_at(0.05), std_at(0.1), std_at(0.2));
        assert!(s05 > s10 && s10 > s20, "{s05} {s10} {s20}");
    }

    #[test]
    fn unbiasedness_at_nonzero_attenuation() {
        let n = 100_000usize;
        let p_log = 2.0;
        let s = flat_sino(n / 100, 101, p_log);
        let cfg = DoseConfig::new(0.1, 11);
        let noisy = insert_low_dose_noise(&s, &cfg).unwrap();
        let m = noisy.data.iter().sum::<f64>() / noisy.data.len() as f64;
        let sigma = noise_sigma(p_log, &cfg).unwrap();
        let se = sigma / (noisy.data.len() as f64).sqrt();
        assert!((m - p_log).abs() < 4.0 * se, "mean {m} vs {p_log} (se {se})");
    }
}
