//! Image quality metrics. Masks follow the metal-mask convention: 1 marks an
//! excluded pixel.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// CSV stand-in for an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 99.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub masked_mse: f64,
    pub mask_excluded_pixels: usize,
}

fn check_mask(x: &Image, mask: &Image) -> Result<()> {
    x.same_shape(mask)?;
    if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidConfig("mask must be binary".into()));
    }
    Ok(())
}

/// Mean of `(x − gt)²` over pixels where `m` is 0.
pub fn masked_mse(x: &Image, gt: &Image, m: &Image) -> Result<f64> {
    x.same_shape(gt)?;
    check_mask(x, m)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&a, &b), &k) in x.data().iter().zip(gt.data()).zip(m.data()) {
        if k == 0.0 {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptySupport);
    }
    Ok(sum / count as f64)
}

/// PSNR in dB; `peak` defaults to `max(reference)`. Returns `f64::INFINITY`
/// when the evaluated pixels agree exactly.
pub fn psnr(x: &Image, reference: &Image, peak: Option<f64>, mask: Option<&Image>) -> Result<f64> {
    x.same_shape(reference)?;
    let peak = peak.unwrap_or_else(|| reference.max());
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::InvalidConfig(format!("psnr peak must be positive, got {peak}")));
    }
    let mse = match mask {
        Some(m) => masked_mse(x, reference, m)?,
        None => masked_mse(x, reference, &Image::zeros_like(x))?,
    };
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering with the normalized 1-D Gaussian `g`.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|j| g[j] * src[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|j| g[j] * rows[(r + j) * ow + c]).sum();
        }
    }
    out
}

/// Mean local SSIM over all full 11×11 Gaussian windows. The dynamic range
/// defaults to the larger maximum of the two images.
pub fn ssim(x: &Image, reference: &Image, peak: Option<f64>) -> Result<f64> {
    x.same_shape(reference)?;
    let (w, h) = (x.width(), x.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidDimension {
            what: "ssim image side",
            value: w.min(h),
        });
    }
    let range = peak.unwrap_or_else(|| x.max().max(reference.max()));
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::InvalidConfig(format!("ssim dynamic range must be positive, got {range}")));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let g = gaussian_window();
    let a = x.data();
    let b = reference.data();
    let prod = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).collect::<Vec<f64>>();
    let mu_a = filter_valid(a, w, h, &g);
    let mu_b = filter_valid(b, w, h, &g);
    let aa = filter_valid(&prod(&|i| a[i] * a[i]), w, h, &g);
    let bb = filter_valid(&prod(&|i| b[i] * b[i]), w, h, &g);
    let ab = filter_valid(&prod(&|i| a[i] * b[i]), w, h, &g);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Scores `x` against `gt` outside metal `m`. SSIM is computed after copying
/// the ground truth into the metal pixels of `x`; both metrics use
/// `max(gt)` as the peak.
pub fn evaluate(x: &Image, gt: &Image, m: &Image) -> Result<MetricReport> {
    let mse = masked_mse(x, gt, m)?;
    let peak = gt.max();
    let psnr_db = psnr(x, gt, Some(peak), Some(m))?;
    let blended = x.with_data(
        x.data()
            .iter()
            .zip(gt.data())
            .zip(m.data())
            .map(|((&a, &b), &k)| if k == 1.0 { b } else { a })
            .collect(),
    )?;
    Ok(MetricReport {
        psnr_db,
        ssim: ssim(&blended, gt, Some(peak))?,
        masked_mse: mse,
        mask_excluded_pixels: m.data().iter().filter(|&&k| k == 1.0).count(),
    })
}

/// PSNR value for CSV output.
pub fn psnr_for_csv(db: f64) -> f64 {
    db.min(PSNR_CAP_DB)
}
