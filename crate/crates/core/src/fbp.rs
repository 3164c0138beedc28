//! Filtered back-projection.
//!
//! Each view is convolved with the band-limited ramp kernel in the frequency
//! domain after zero padding, optionally apodized with a Hann window, then
//! back-projected with the matched adjoint of the projector.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::Projector;
use crate::types::{Geometry, Image, Sinogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RampFilter {
    RamLak,
    #[default]
    HannWindowedRamLak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbpConfig {
    pub filter: RampFilter,
    /// Padding multiplier; the padded length is the next power of two at or
    /// above `pad_factor * n_bins`.
    pub pad_factor: usize,
}

impl Default for FbpConfig {
    fn default() -> Self {
        FbpConfig {
            filter: RampFilter::HannWindowedRamLak,
            pad_factor: 2,
        }
    }
}

impl FbpConfig {
    pub fn ram_lak() -> Self {
        FbpConfig {
            filter: RampFilter::RamLak,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pad_factor < 2 || !self.pad_factor.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "fbp pad_factor must be a power of two >= 2, got {}",
                self.pad_factor
            )));
        }
        Ok(())
    }

    pub fn padded_len(&self, n_bins: usize) -> usize {
        (self.pad_factor * n_bins).next_power_of_two()
    }
}

/// Frequency response of the ramp filter for a padded length `len` and
/// detector pitch `tau`.
fn filter_response(len: usize, tau: f64, filter: RampFilter, fft: &Arc<dyn Fft<f64>>) -> Vec<f64> {
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    kernel[0].re = 1.0 / (4.0 * tau * tau);
    for n in (1..len / 2).step_by(2) {
        let v = -1.0 / ((n * n) as f64 * PI * PI * tau * tau);
        kernel[n].re = v;
        kernel[len - n].re = v;
    }
    fft.process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let window = match filter {
                RampFilter::RamLak => 1.0,
                RampFilter::HannWindowedRamLak => {
                    let f = k.min(len - k) as f64 / len as f64;
                    0.5 * (1.0 + (2.0 * PI * f).cos())
                }
            };
            c.re * window
        })
        .collect()
}

/// Ramp-filters every view of `sino` along the bin axis.
pub fn filter_sinogram(sino: &Sinogram, cfg: &FbpConfig) -> Result<Sinogram> {
    cfg.validate()?;
    let n_bins = sino.n_bins();
    let n_views = sino.n_views();
    let len = cfg.padded_len(n_bins);
    let tau = sino.detector_spacing();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let response = filter_response(len, tau, cfg.filter, &fwd);
    // rustfft is unnormalized; tau turns the discrete sum into a convolution
    // integral.
    let scale = tau / len as f64;

    let columns: Vec<Vec<f64>> = (0..n_views)
        .into_par_iter()
        .map(|v| {
            let mut buf = vec![Complex::new(0.0, 0.0); len];
            for (b, slot) in buf.iter_mut().enumerate().take(n_bins) {
                slot.re = sino.get(b, v);
            }
            fwd.process(&mut buf);
            for (c, h) in buf.iter_mut().zip(&response) {
                *c *= *h;
            }
            inv.process(&mut buf);
            buf[..n_bins].iter().map(|c| c.re * scale).collect()
        })
        .collect();
    let mut data = vec![0.0; n_bins * n_views];
    for (v, col) in columns.iter().enumerate() {
        for (b, &val) in col.iter().enumerate() {
            data[b * n_views + v] = val;
        }
    }
    sino.with_data(data)
}

/// FBP with an existing projector.
pub fn reconstruct_with(h: &Projector, sino: &Sinogram, cfg: &FbpConfig) -> Result<Image> {
    let geo = h.geometry();
    sino.matches(geo)?;
    let filtered = filter_sinogram(sino, cfg)?;
    let mut img = h.adjoint(&filtered)?.into_data();
    // Views cover 360°, so the half-turn integral is π / n_views per view;
    // the adjoint's area weights contribute pixel_size² / detector_spacing.
    let scale = PI / geo.n_views as f64 * geo.detector_spacing / (geo.pixel_size * geo.pixel_size);
    img.iter_mut().for_each(|v| *v *= scale);
    Image::zeros(geo).with_data(img)
}

pub fn reconstruct(sino: &Sinogram, geo: &Geometry, cfg: &FbpConfig) -> Result<Image> {
    reconstruct_with(&Projector::new(geo)?, sino, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sinogram_gives_zero_image() {
        let geo = Geometry::square(32, 40).unwrap();
        let img = reconstruct(&Sinogram::zeros(&geo), &geo, &FbpConfig::default()).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_view_filters_to_zero_away_from_edges() {
        let geo = Geometry::square(64, 4).unwrap();
        let sino = Sinogram::from_fn(&geo, |_, _| 1.0).unwrap();
        let filtered = filter_sinogram(&sino, &FbpConfig::ram_lak()).unwrap();
        let n = geo.n_bins;
        // interior response of the mean-zero kernel on a plateau
        let centre = filtered.get(n / 2, 0).abs();
        let edge = filtered.get(0, 0).abs();
        assert!(centre < 0.05 * edge, "centre {centre} edge {edge}");
    }

    #[test]
    fn dc_shift_changes_only_low_frequencies() {
        let geo = Geometry::square(64, 8).unwrap();
        let base = Sinogram::from_fn(&geo, |b, v| ((b * 7 + v * 3) % 11) as f64 * 0.1).unwrap();
        let shifted = base.map(|x| x + 0.5).unwrap();
        let cfg = FbpConfig::ram_lak();
        let fa = filter_sinogram(&base, &cfg).unwrap();
        let fb = filter_sinogram(&shifted, &cfg).unwrap();
        let n = geo.n_bins;
        // Difference is the filtered plateau: small in the middle, largest at
        // the detector ends.
        let mid = (fb.get(n / 2, 3) - fa.get(n / 2, 3)).abs();
        let end = (fb.get(0, 3) - fa.get(0, 3)).abs();
        assert!(mid < 0.05 * end, "mid {mid} end {end}");
    }

    #[test]
    fn ram_lak_matches_direct_spatial_convolution() {
        let geo = Geometry::square(24, 3).unwrap();
        let sino = Sinogram::from_fn(&geo, |b, v| ((b * 13 + v * 5) % 17) as f64 / 17.0).unwrap();
        let filtered = filter_sinogram(&sino, &FbpConfig::ram_lak()).unwrap();
        let tau = geo.detector_spacing;
        let kernel = |k: i64| -> f64 {
            if k == 0 {
                1.0 / (4.0 * tau * tau)
            } else if k % 2 == 0 {
                0.0
            } else {
                -1.0 / ((k * k) as f64 * PI * PI * tau * tau)
            }
        };
        let n = geo.n_bins as i64;
        for v in 0..geo.n_views {
            for m in 0..n {
                let direct: f64 = (0..n).map(|j| tau * sino.get(j as usize, v) * kernel(m - j)).sum();
                assert!((filtered.get(m as usize, v) - direct).abs() < 1e-9, "bin {m} view {v}");
            }
        }
    }

    #[test]
    fn disc_interior_reconstructs_to_its_value() {
        let geo = Geometry::square(96, 180).unwrap();
        let h = Projector::new(&geo).unwrap();
        let disc = crate::projector::tests::disc(&geo, 0.0, 0.0, 30.0 * geo.pixel_size);
        let img = reconstruct_with(&h, &h.forward(&disc).unwrap(), &FbpConfig::ram_lak()).unwrap();
        let mut mean = 0.0;
        let mut count = 0.0;
        for r in 38..58 {
            for c in 38..58 {
                mean += img.get(r, c);
                count += 1.0;
            }
        }
        mean /= count;
        assert!((mean - 1.0).abs() < 0.02, "interior mean {mean}");
    }

    #[test]
    fn pipeline_is_linear() {
        let geo = Geometry::square(32, 30).unwrap();
        let a = Sinogram::from_fn(&geo, |b, v| ((b + 2 * v) % 5) as f64).unwrap();
        let b = Sinogram::from_fn(&geo, |b, v| ((3 * b + v) % 7) as f64).unwrap();
        let sum = a.with_data(a.data().iter().zip(b.data()).map(|(x, y)| 2.0 * x + y).collect()).unwrap();
        let cfg = FbpConfig::default();
        let ra = reconstruct(&a, &geo, &cfg).unwrap();
        let rb = reconstruct(&b, &geo, &cfg).unwrap();
        let rs = reconstruct(&sum, &geo, &cfg).unwrap();
        let scale = rs.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..rs.data().len() {
            let expect = 2.0 * ra.data()[i] + rb.data()[i];
            assert!((rs.data()[i] - expect).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn invalid_padding_rejected() {
        let geo = Geometry::square(16, 8).unwrap();
        let cfg = FbpConfig {
            pad_factor: 3,
            ..Default::default()
        };
        assert!(reconstruct(&Sinogram::zeros(&geo), &geo, &cfg).is_err());
        assert!(FbpConfig::default().padded_len(641) >= 2 * 641);
    }
}
