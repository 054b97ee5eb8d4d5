//! Image/sinogram fidelity metrics: PSNR, SSIM, RMSE.
//!
//! The reporting convention divides both operands by the reference maximum
//! before computing metrics (`normalize_pair`); the metric functions
//! themselves take the data as given with dynamic range 1.

use crate::error::{Error, Result};

/// PSNR cap reported for identical inputs (MSE = 0).
pub const PSNR_CAP: f64 = 99.0;

fn check_len(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "metric operands disagree: {} vs {}",
            pred.len(),
            reference.len()
        )));
    }
    Ok(())
}

fn mse(pred: &[f64], reference: &[f64]) -> f64 {
    pred.iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64
}

/// `10*log10(1/MSE)` on unit-range data; identical inputs report the
/// capped sentinel 99.0.
pub fn psnr(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_len(pred, reference)?;
    let m = mse(pred, reference);
    if m == 0.0 {
        Ok(PSNR_CAP)
    } else {
        Ok(-10.0 * m.log10())
    }
}

/// Root mean square difference.
pub fn rmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_len(pred, reference)?;
    Ok(mse(pred, reference).sqrt())
}

/// Divide both operands by the reference maximum (no-op when the
/// reference is non-positive everywhere).
pub fn normalize_pair(pred: &[f64], reference: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let peak = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    (
        pred.iter().map(|v| v * scale).collect(),
        reference.iter().map(|v| v * scale).collect(),
    )
}

/// PSNR after reference-max normalization.
pub fn psnr_normalized(pred: &[f64], reference: &[f64]) -> Result<f64> {
    let (p, r) = normalize_pair(pred, reference);
    psnr(&p, &r)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Single-scale SSIM, Gaussian window 11 / sigma 1.5, dynamic range 1,
/// averaged over windows fully inside the frame.
pub fn ssim(pred: &[f64], reference: &[f64], width: usize, height: usize) -> Result<f64> {
    check_len(pred, reference)?;
    if pred.len() != width * height {
        return Err(Error::shape("ssim dims do not match data length".to_string()));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::domain(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {width}x{height}"
        )));
    }
    // Normalized 11x11 Gaussian weights.
    let g1: Vec<f64> = (0..SSIM_WINDOW)
        .map(|k| {
            let x = k as f64 - (SSIM_WINDOW as f64 - 1.0) / 2.0;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let norm: f64 = g1.iter().sum();
    let g1: Vec<f64> = g1.iter().map(|v| v / norm).collect();

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=(height - SSIM_WINDOW) {
        for left in 0..=(width - SSIM_WINDOW) {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                let row = (top + dy) * width + left;
                for dx in 0..SSIM_WINDOW {
                    let w = g1[dy] * g1[dx];
                    let a = pred[row + dx];
                    let b = reference[row + dx];
                    mx += w * a;
                    my += w * b;
                    mxx += w * a * a;
                    myy += w * b * b;
                    mxy += w * a * b;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cov = mxy - mx * my;
            let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// One sample's metric triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
}

/// Normalize by the reference max, then compute all three metrics.
pub fn sample_metrics(pred: &[f64], reference: &[f64], width: usize, height: usize) -> Result<SampleMetrics> {
    let (p, r) = normalize_pair(pred, reference);
    Ok(SampleMetrics {
        psnr: psnr(&p, &r)?,
        ssim: ssim(&p, &r, width, height)?,
        rmse: rmse(&p, &r)?,
    })
}

/// Per-sample rows plus mean +- std aggregates, in the order added.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub rows: Vec<(String, SampleMetrics)>,
}

impl MetricReport {
    pub fn push(&mut self, id: impl Into<String>, m: SampleMetrics) {
        self.rows.push((id.into(), m));
    }

    pub fn mean(&self) -> Option<SampleMetrics> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        Some(SampleMetrics {
            psnr: self.rows.iter().map(|r| r.1.psnr).sum::<f64>() / n,
            ssim: self.rows.iter().map(|r| r.1.ssim).sum::<f64>() / n,
            rmse: self.rows.iter().map(|r| r.1.rmse).sum::<f64>() / n,
        })
    }

    pub fn std(&self) -> Option<SampleMetrics> {
        let mean = self.mean()?;
        if self.rows.len() < 2 {
            return Some(SampleMetrics {
                psnr: 0.0,
                ssim: 0.0,
                rmse: 0.0,
            });
        }
        let n = (self.rows.len() - 1) as f64;
        let var = |f: &dyn Fn(&SampleMetrics) -> f64, m: f64| {
            (self.rows.iter().map(|r| (f(&r.1) - m).powi(2)).sum::<f64>() / n).sqrt()
        };
        Some(SampleMetrics {
            psnr: var(&|s| s.psnr, mean.psnr),
            ssim: var(&|s| s.ssim, mean.ssim),
            rmse: var(&|s| s.rmse, mean.rmse),
        })
    }

    /// CSV with a fixed header, one row per sample, then mean and std rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,psnr,ssim,rmse\n");
        for (id, m) in &self.rows {
            out.push_str(&format!("{id},{:.6},{:.6},{:.8}\n", m.psnr, m.ssim, m.rmse));
        }
        if let (Some(mean), Some(std)) = (self.mean(), self.std()) {
            out.push_str(&format!(
                "mean,{:.6},{:.6},{:.8}\n",
                mean.psnr, mean.ssim, mean.rmse
            ));
            out.push_str(&format!(
                "std,{:.6},{:.6},{:.8}\n",
                std.psnr, std.ssim, std.rmse
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let r = vec![0.5; 100];
        let p: Vec<f64> = r.iter().map(|v| v + 0.1).collect();
        // MSE = 0.01 -> 20 dB
        assert!((psnr(&p, &r).unwrap() - 20.0).abs() < 1e-12);
        let p2: Vec<f64> = r.iter().map(|v| v + 0.01).collect();
        // MSE = 1e-4 -> 40 dB
        assert!((psnr(&p2, &r).unwrap() - 40.0).abs() < 1e-12);
        assert_eq!(psnr(&r, &r).unwrap(), PSNR_CAP);
    }

    #[test]
    fn rmse_and_identity() {
        let r = vec![0.2; 64];
        let p: Vec<f64> = r.iter().map(|v| v + 0.1).collect();
        let e = rmse(&p, &r).unwrap();
        assert!((e - 0.1).abs() < 1e-12);
        assert_eq!(rmse(&r, &r).unwrap(), 0.0);
        // psnr = -20*log10(rmse)
        assert!((psnr(&p, &r).unwrap() + 20.0 * e.log10()).abs() < 1e-10);
    }

    #[test]
    fn metric_shape_errors() {
        assert!(psnr(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(ssim(&[0.0; 100], &[0.0; 100], 10, 10).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let x: Vec<f64> = (0..256).map(|k| (k % 16) as f64 / 16.0).collect();
        let s = ssim(&x, &x, 16, 16).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_offset_luminance_only() {
        let a = vec![0.5; 144];
        let b = vec![0.6; 144];
        let s = ssim(&a, &b, 12, 12).unwrap();
        let c1 = 1e-4;
        let want = (2.0 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
        assert!((s - want).abs() < 1e-12, "{s} vs {want}");
    }

    #[test]
    fn ssim_negated_ramp_is_negative() {
        // Range-symmetric ramp spanning exactly one window: the window mean
        // is zero, so the (negative) covariance term decides the sign.
        let w = SSIM_WINDOW;
        let x: Vec<f64> = (0..w * w)
            .map(|k| 2.0 * ((k % w) as f64 / (w - 1) as f64) - 1.0)
            .collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(ssim(&neg, &x, w, w).unwrap() < 0.0);
    }

    #[test]
    fn report_aggregates() {
        let mut rep = MetricReport::default();
        rep.push("a", SampleMetrics { psnr: 10.0, ssim: 0.5, rmse: 0.1 });
        rep.push("b", SampleMetrics { psnr: 20.0, ssim: 0.7, rmse: 0.3 });
        let mean = rep.mean().unwrap();
        assert!((mean.psnr - 15.0).abs() < 1e-12);
        assert!((mean.ssim - 0.6).abs() < 1e-12);
        assert!((mean.rmse - 0.2).abs() < 1e-12);
        let csv = rep.to_csv();
        assert!(csv.starts_with("sample,psnr,ssim,rmse\n"));
        assert_eq!(csv.lines().count(), 5);
    }
}
