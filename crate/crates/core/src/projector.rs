//! Parallel-beam Radon transform and its matched adjoint.
//!
//! One ray per detector bin center. Rays are integrated with the Joseph
//! scheme at a step of half a pixel along their major axis, so `forward`
//! and `adjoint` share one weight generator and `adjoint` is the algebraic
//! transpose of `forward` up to floating-point summation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{Geometry, Image, Sinogram};

/// Views per adjoint accumulation chunk. Fixed so that the reduction order
/// does not depend on the number of worker threads.
const ADJOINT_CHUNK_VIEWS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    JosephLinear,
}

#[derive(Debug, Clone)]
pub struct Projector {
    geo: Geometry,
    interpolation: Interpolation,
    cos: Vec<f64>,
    sin: Vec<f64>,
    /// Sample step along the ray in pixel units.
    step_px: f64,
}

impl Projector {
    pub fn new(geo: &Geometry) -> Result<Self> {
        geo.validate()?;
        let angles = geo.view_angles();
        Ok(Projector {
            geo: geo.clone(),
            interpolation: Interpolation::JosephLinear,
            cos: angles.iter().map(|a| a.cos()).collect(),
            sin: angles.iter().map(|a| a.sin()).collect(),
            step_px: 0.5,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geo
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    /// Physical length represented by one ray sample.
    pub fn step_length(&self) -> f64 {
        self.step_px * self.geo.pixel_size
    }

    /// Calls `visit(pixel_index, weight)` for every interpolation weight of
    /// the ray at (`view`, `bin`). Weights already include the step length.
    ///
    /// Joseph scheme: the ray is cut by planes spaced half a pixel apart
    /// along its major axis. On a plane through pixel centers the sample is
    /// linearly interpolated between the two nearest pixels of that row
    /// (column); on a plane halfway between rows it averages the two rows.
    #[inline]
    fn trace_ray(&self, view: usize, bin: usize, mut visit: impl FnMut(usize, f64)) {
        let w = self.geo.image_w;
        let h = self.geo.image_h;
        let (c, s) = (self.cos[view], self.sin[view]);
        let offset = self.geo.bin_offset(bin) / self.geo.pixel_size;
        // Pixel (row, col) has its center at x = col, y = row.
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let bx = cx + offset * c;
        let by = cy + offset * s;
        let (dx, dy) = (-s, c);

        // Major axis is the one the ray advances along fastest. `major` and
        // `minor` are (base, direction, extent, stride) in pixel units.
        let (major, minor) = if dy.abs() >= dx.abs() {
            ((by, dy, h, w), (bx, dx, w, 1))
        } else {
            ((bx, dx, w, 1), (by, dy, h, w))
        };
        let (m_base, m_dir, m_len, m_stride) = major;
        let (n_base, n_dir, n_len, n_stride) = minor;
        let slope = n_dir / m_dir;
        let weight = self.step_px / m_dir.abs() * self.geo.pixel_size;
        let half_steps = 2 * (m_len - 1);
        let n_len_i = n_len as i64;
        let n_top = n_len as f64;
        // Minor coordinate is affine in the plane index: pos = start + k·rate.
        let start = n_base - m_base * slope;
        let rate = self.step_px * slope;
        let (k_lo, k_hi) = if rate == 0.0 {
            if start <= -1.0 || start >= n_top {
                return;
            }
            (0, half_steps)
        } else {
            let (a, b) = ((-1.0 - start) / rate, (n_top - start) / rate);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if hi < 0.0 || lo > half_steps as f64 {
                return;
            }
            (lo.floor().max(0.0) as usize, (hi.ceil() as usize).min(half_steps))
        };
        let mut emit = |row: usize, pos: f64, w: f64| {
            let f = pos.floor();
            let a = pos - f;
            let n0 = f as i64;
            if n0 >= 0 && a < 1.0 {
                visit(row * m_stride + n0 as usize * n_stride, (1.0 - a) * w);
            }
            if n0 + 1 < n_len_i && a > 0.0 {
                visit(row * m_stride + (n0 + 1) as usize * n_stride, a * w);
            }
        };
        for k in k_lo..=k_hi {
            let pos = start + k as f64 * rate;
            if pos <= -1.0 || pos >= n_top {
                continue;
            }
            // The first and last plane carry half weight (trapezoid ends).
            let w = if k == 0 || k == half_steps { 0.5 * weight } else { weight };
            if k % 2 == 0 {
                emit(k / 2, pos, w);
            } else {
                emit(k / 2, pos, 0.5 * w);
                emit(k / 2 + 1, pos, 0.5 * w);
            }
        }
    }

    /// Line integrals of `x` along every ray; result indexed `[bin][view]`.
    pub fn forward(&self, x: &Image) -> Result<Sinogram> {
        x.matches(&self.geo)?;
        Ok(Sinogram::zeros(&self.geo).with_data_unchecked(self.forward_raw(x.data())))
    }

    pub(crate) fn forward_raw(&self, x: &[f64]) -> Vec<f64> {
        let n_bins = self.geo.n_bins;
        let n_views = self.geo.n_views;
        let columns: Vec<Vec<f64>> = (0..n_views)
            .into_par_iter()
            .map(|v| {
                (0..n_bins)
                    .map(|b| {
                        let mut acc = 0.0;
                        self.trace_ray(v, b, |idx, w| acc += w * x[idx]);
                        acc
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; n_bins * n_views];
        for (v, col) in columns.iter().enumerate() {
            for (b, &val) in col.iter().enumerate() {
                out[b * n_views + v] = val;
            }
        }
        out
    }

    /// Transpose of [`Projector::forward`].
    pub fn adjoint(&self, y: &Sinogram) -> Result<Image> {
        y.matches(&self.geo)?;
        Ok(Image::zeros(&self.geo).with_data_unchecked(self.adjoint_raw(y.data())))
    }

    pub(crate) fn adjoint_raw(&self, y: &[f64]) -> Vec<f64> {
        let n_bins = self.geo.n_bins;
        let n_views = self.geo.n_views;
        let n_pix = self.geo.n_pixels();
        let chunks: Vec<usize> = (0..n_views).step_by(ADJOINT_CHUNK_VIEWS).collect();
        let partials: Vec<Vec<f64>> = chunks
            .into_par_iter()
            .map(|start| {
                let mut buf = vec![0.0; n_pix];
                for v in start..(start + ADJOINT_CHUNK_VIEWS).min(n_views) {
                    for b in 0..n_bins {
                        let val = y[b * n_views + v];
                        if val != 0.0 {
                            self.trace_ray(v, b, |idx, w| buf[idx] += w * val);
                        }
                    }
                }
                buf
            })
            .collect();
        let mut out = vec![0.0; n_pix];
        for part in &partials {
            for (o, p) in out.iter_mut().zip(part) {
                *o += p;
            }
        }
        out
    }

    /// Power-iteration estimate of the largest eigenvalue of `PᵀP`.
    ///
    /// Returns the Rayleigh quotient `‖P v‖²` of the final unit iterate.
    pub fn op_norm_sq(&self, iters: usize, seed: u64) -> Result<f64> {
        if iters == 0 {
            return Err(Error::InvalidConfig(
                "power iteration needs at least one iteration".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..self.geo.n_pixels())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        normalize(&mut v);
        let mut estimate = 0.0;
        for _ in 0..iters {
            let pv = self.forward_raw(&v);
            estimate = pv.iter().map(|a| a * a).sum::<f64>();
            let mut next = self.adjoint_raw(&pv);
            if normalize(&mut next) == 0.0 {
                return Ok(0.0);
            }
            v = next;
        }
        // Rayleigh quotient on the last normalized iterate.
        let pv = self.forward_raw(&v);
        Ok(estimate.max(pv.iter().map(|a| a * a).sum::<f64>()))
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    norm
}
