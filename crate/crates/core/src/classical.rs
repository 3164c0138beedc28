//! Sinogram-inpainting baselines: linear interpolation (LI) and normalized
//! MAR (NMAR).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbp::{self, FbpConfig};
use crate::projector::Projector;
use crate::types::{Image, Sinogram, WATER_MU_PER_CM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmarConfig {
    pub air_threshold: f64,
    pub bone_threshold: f64,
    pub water_value: f64,
    /// Gaussian sigma in pixels applied to `x_ma` before segmentation.
    pub smooth_sigma: f64,
    /// Guard relative to `max(Ỹ_prior)`.
    pub eps: f64,
}

impl Default for NmarConfig {
    fn default() -> Self {
        NmarConfig {
            air_threshold: 0.3 * WATER_MU_PER_CM,
            bone_threshold: 1.5 * WATER_MU_PER_CM,
            water_value: WATER_MU_PER_CM,
            smooth_sigma: 1.5,
            eps: 1e-6,
        }
    }
}

impl NmarConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.air_threshold, self.bone_threshold, self.water_value, self.smooth_sigma, self.eps]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("nmar parameters must be finite".into()));
        }
        if self.air_threshold >= self.bone_threshold {
            return Err(Error::InvalidConfig(format!(
                "nmar air_threshold {} must be below bone_threshold {}",
                self.air_threshold, self.bone_threshold
            )));
        }
        if self.eps <= 0.0 || self.smooth_sigma < 0.0 {
            return Err(Error::InvalidConfig("nmar eps must be > 0 and smooth_sigma >= 0".into()));
        }
        Ok(())
    }
}

/// Fills each traced run of every view by linear interpolation between its
/// untraced neighbours. Runs touching the detector edge copy the one flank.
pub fn li_inpaint(y: &Sinogram, tr: &Sinogram) -> Result<Sinogram> {
    y.same_shape(tr)?;
    let (n_bins, n_views) = (y.n_bins(), y.n_views());
    let mut out = y.data().to_vec();
    let traced = |b: usize, v: usize| tr.data()[b * n_views + v] > 0.5;
    for v in 0..n_views {
        let mut b = 0;
        while b < n_bins {
            if !traced(b, v) {
                b += 1;
                continue;
            }
            let start = b;
            while b < n_bins && traced(b, v) {
                b += 1;
            }
            let end = b;
            let left = start.checked_sub(1).map(|l| y.data()[l * n_views + v]);
            let right = (end < n_bins).then(|| y.data()[end * n_views + v]);
            match (left, right) {
                (Some(l), Some(r)) => {
                    let span = (end - start + 1) as f64;
                    for k in start..end {
                        let t = (k - start + 1) as f64 / span;
                        out[k * n_views + v] = l + t * (r - l);
                    }
                }
                (Some(c), None) | (None, Some(c)) => {
                    for k in start..end {
                        out[k * n_views + v] = c;
                    }
                }
                (None, None) => return Err(Error::FullyTracedView { view: v }),
            }
        }
    }
    y.with_data(out)
}

pub fn li_reconstruct(h: &Projector, y: &Sinogram, tr: &Sinogram, fbp_cfg: &FbpConfig) -> Result<Image> {
    fbp::reconstruct_with(h, &li_inpaint(y, tr)?, fbp_cfg)
}

/// Separable Gaussian blur with edge clamping; kernel truncated at 3 sigma.
pub fn gaussian_smooth(img: &Image, sigma: f64) -> Result<Image> {
    if sigma <= 0.0 {
        return Ok(img.clone());
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let off = j as i64 - radius;
                    let (rr, cc) = if horizontal {
                        (r, (c + off).clamp(0, w - 1))
                    } else {
                        ((r + off).clamp(0, h - 1), c)
                    };
                    acc += k * src[(rr * w + cc) as usize];
                }
                dst[(r * w + c) as usize] = acc;
            }
        }
        dst
    };
    let tmp = pass(img.data(), true);
    img.with_data(pass(&tmp, false))
}

/// Three-class NMAR prior: air, water, and bone (kept). Pixels whose every
/// ray lies inside the trace are treated as metal and set to water.
pub fn nmar_prior(h: &Projector, tr: &Sinogram, x_ma: &Image, cfg: &NmarConfig) -> Result<Image> {
    cfg.validate()?;
    let smooth = gaussian_smooth(x_ma, cfg.smooth_sigma)?;
    let clear = h.adjoint(&tr.map(|t| 1.0 - t)?)?;
    let data = smooth
        .data()
        .iter()
        .zip(clear.data())
        .map(|(&v, &free)| {
            if free == 0.0 {
                cfg.water_value
            } else if v < cfg.air_threshold {
                0.0
            } else if v > cfg.bone_threshold {
                v
            } else {
                cfg.water_value
            }
        })
        .collect();
    x_ma.with_data(data)
}

/// NMAR with an explicit prior image.
pub fn nmar_with_prior(
    h: &Projector,
    y: &Sinogram,
    tr: &Sinogram,
    prior: &Image,
    cfg: &NmarConfig,
    fbp_cfg: &FbpConfig,
) -> Result<Image> {
    y.same_shape(tr)?;
    let y_prior = h.forward(prior)?;
    let guard = cfg.eps * y_prior.max().max(0.0);
    let denom: Vec<f64> = y_prior.data().iter().map(|&p| p.max(guard)).collect();
    let normalized: Vec<f64> = y
        .data()
        .iter()
        .zip(&denom)
        .map(|(&v, &d)| if d > 0.0 { v / d } else { v })
        .collect();
    let inpainted = li_inpaint(&y.with_data(normalized)?, tr)?;
    let restored: Vec<f64> = (0..y.data().len())
        .map(|i| {
            if tr.data()[i] > 0.5 {
                let d = denom[i];
                if d > 0.0 { inpainted.data()[i] * d } else { inpainted.data()[i] }
            } else {
                y.data()[i]
            }
        })
        .collect();
    fbp::reconstruct_with(h, &y.with_data(restored)?, fbp_cfg)
}

pub fn nmar_reconstruct(
    h: &Projector,
    y: &Sinogram,
    tr: &Sinogram,
    x_ma: &Image,
    cfg: &NmarConfig,
    fbp_cfg: &FbpConfig,
) -> Result<Image> {
    let prior = nmar_prior(h, tr, x_ma, cfg)?;
    nmar_with_prior(h, y, tr, &prior, cfg, fbp_cfg)
}
