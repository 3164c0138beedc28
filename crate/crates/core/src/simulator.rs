//! Metal implants, metal traces and polychromatic corruption.
//!
//! The corruption model is a small discrete spectrum. Each energy bin `e`
//! has a weight `w_e`, a tissue scale `t_e` and a metal scale `k_e`, and the
//! measured line integral is
//!
//! ```text
//! Y = -ln Σ_e w_e · exp(-t_e · p_t - k_e · p_m)
//! ```
//!
//! with `p_t` the projection of the tissue image and `p_m` the projection of
//! the metal attenuation map. Optional Poisson noise is applied to the
//! transmitted photon counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbp::{self, FbpConfig};
use crate::projector::Projector;
use crate::types::{Geometry, Image, Sinogram};

/// Transmitted fraction below which intensities are clamped.
pub const TRANSMISSION_FLOOR: f64 = 1e-8;

/// Attempts per implant before placement gives up.
const PLACEMENT_ATTEMPTS: usize = 500;

/// Minimum gap, in pixels (Chebyshev), between two implants.
const IMPLANT_GAP: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetalShape {
    Disc,
    Capsule,
    Polygon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetalSpec {
    pub seed: u64,
    pub n_implants: usize,
    pub shapes: Vec<MetalShape>,
    /// Pixel area of each implant, drawn uniformly from `[lo, hi]`.
    pub size_range: [f64; 2],
    /// Attenuation of metal at the reference energy, per cm.
    pub metal_mu: f64,
}

impl Default for MetalSpec {
    fn default() -> Self {
        MetalSpec {
            seed: 0,
            n_implants: 2,
            shapes: vec![MetalShape::Disc, MetalShape::Capsule, MetalShape::Polygon],
            size_range: [40.0, 300.0],
            metal_mu: 0.5,
        }
    }
}

impl MetalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.n_implants) {
            return Err(Error::InvalidConfig(format!(
                "n_implants must be in 1..=4, got {}",
                self.n_implants
            )));
        }
        if self.shapes.is_empty() {
            return Err(Error::InvalidConfig("metal shape set is empty".into()));
        }
        let [lo, hi] = self.size_range;
        if !(lo.is_finite() && hi.is_finite() && 1.0 <= lo && lo <= hi) {
            return Err(Error::InvalidConfig(format!(
                "metal size range must satisfy 1 <= lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if !(self.metal_mu.is_finite() && self.metal_mu > 0.0) {
            return Err(Error::InvalidConfig("metal_mu must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralBin {
    pub weight: f64,
    pub tissue_scale: f64,
    pub metal_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    pub spectrum: Vec<SpectralBin>,
    /// Incident photons per ray; `None` disables noise.
    pub photons_i0: Option<f64>,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        let bin = |weight, tissue_scale, metal_scale| SpectralBin {
            weight,
            tissue_scale,
            metal_scale,
        };
        CorruptionSpec {
            spectrum: vec![bin(0.3, 0.9, 3.0), bin(0.5, 1.0, 6.0), bin(0.2, 1.1, 12.0)],
            photons_i0: Some(2e6),
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn monochromatic() -> Self {
        CorruptionSpec {
            spectrum: vec![SpectralBin {
                weight: 1.0,
                tissue_scale: 1.0,
                metal_scale: 1.0,
            }],
            photons_i0: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.spectrum.is_empty() {
            return Err(Error::InvalidConfig("spectrum has no bins".into()));
        }
        for (i, b) in self.spectrum.iter().enumerate() {
            let ok = b.weight.is_finite()
                && b.weight >= 0.0
                && b.tissue_scale.is_finite()
                && b.tissue_scale > 0.0
                && b.metal_scale.is_finite()
                && b.metal_scale > 0.0;
            if !ok {
                return Err(Error::InvalidConfig(format!("invalid spectral bin {i}: {b:?}")));
            }
        }
        let total: f64 = self.spectrum.iter().map(|b| b.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "spectral weights must sum to 1, got {total}"
            )));
        }
        let ks: Vec<f64> = self.spectrum.iter().map(|b| b.metal_scale).collect();
        let rising = ks.windows(2).all(|w| w[1] >= w[0]);
        let falling = ks.windows(2).all(|w| w[1] <= w[0]);
        if !(rising || falling) {
            return Err(Error::InvalidConfig(
                "metal scales must be monotone across spectral bins".into(),
            ));
        }
        if let Some(i0) = self.photons_i0 {
            if !(i0.is_finite() && i0 > 0.0) {
                return Err(Error::InvalidConfig(format!("photons_i0 must be positive, got {i0}")));
            }
        }
        Ok(())
    }

    /// Noise-free polychromatic line integral for one ray.
    pub fn measure(&self, p_tissue: f64, p_metal: f64) -> f64 {
        // log-sum-exp so that a single unit bin returns p_tissue exactly
        let exps: Vec<f64> = self
            .spectrum
            .iter()
            .map(|b| -b.tissue_scale * p_tissue - b.metal_scale * p_metal)
            .collect();
        let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self
            .spectrum
            .iter()
            .zip(&exps)
            .map(|(b, a)| b.weight * (a - top).exp())
            .sum();
        let log_t = top + sum.ln();
        -log_t.max(TRANSMISSION_FLOOR.ln())
    }
}

/// 8-connected components of a binary raster; returns per-pixel labels
/// (0 = background) and the component count.
pub fn label_components(mask: &Image) -> (Vec<usize>, usize) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0usize; w * h];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask.data()[start] <= 0.5 || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if mask.data()[j] > 0.5 && labels[j] == 0 {
                        labels[j] = count;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, count)
}

/// Shape "level" function: the implant is the set of pixels with the
/// smallest levels. All variants are convex gauges around the centre.
enum Gauge {
    Disc,
    Capsule { dir: (f64, f64), half_len: f64 },
    Polygon { normals: Vec<(f64, f64)> },
}

impl Gauge {
    fn random(shape: MetalShape, area: f64, rng: &mut ChaCha8Rng) -> Gauge {
        match shape {
            MetalShape::Disc => Gauge::Disc,
            MetalShape::Capsule => {
                let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                // length of the core segment relative to the implant scale
                let half_len = rng.gen_range(0.5..1.5) * (area / std::f64::consts::PI).sqrt();
                Gauge::Capsule {
                    dir: (t.cos(), t.sin()),
                    half_len,
                }
            }
            MetalShape::Polygon => {
                let sides = rng.gen_range(3..=7);
                let rot: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let normals = (0..sides)
                    .map(|k| {
                        let a = rot + std::f64::consts::TAU * k as f64 / sides as f64;
                        (a.cos(), a.sin())
                    })
                    .collect();
                Gauge::Polygon { normals }
            }
        }
    }

    fn level(&self, dx: f64, dy: f64) -> f64 {
        match self {
            Gauge::Disc => (dx * dx + dy * dy).sqrt(),
            Gauge::Capsule { dir, half_len } => {
                let t = (dx * dir.0 + dy * dir.1).clamp(-half_len, *half_len);
                let (ex, ey) = (dx - t * dir.0, dy - t * dir.1);
                (ex * ex + ey * ey).sqrt()
            }
            Gauge::Polygon { normals } => normals
                .iter()
                .map(|n| dx * n.0 + dy * n.1)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Binary metal mask with `n_implants` separated components, each of exactly
/// the drawn pixel area.
pub fn make_metal(spec: &MetalSpec, geo: &Geometry) -> Result<Image> {
    geo.validate()?;
    spec.validate()?;
    let (w, h) = (geo.image_w as i64, geo.image_h as i64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mask = vec![0.0; geo.n_pixels()];
    let support = 0.25 * geo.image_w.min(geo.image_h) as f64;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let [lo, hi] = spec.size_range;

    for implant in 0..spec.n_implants {
        let shape = spec.shapes[rng.gen_range(0..spec.shapes.len())];
        let area = if hi > lo { rng.gen_range(lo..=hi) } else { lo }.round().max(1.0) as usize;
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let gauge = Gauge::random(shape, area as f64, &mut rng);
            let rad: f64 = support * rng.gen::<f64>().sqrt();
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (px, py) = (cx + rad * ang.cos(), cy + rad * ang.sin());
            // candidate window generous enough for elongated shapes
            let reach = (4.0 * (area as f64).sqrt()).ceil() as i64 + 2;
            let mut cands: Vec<(f64, usize)> = Vec::new();
            let mut excluded = f64::INFINITY;
            for r in (py as i64 - reach)..=(py as i64 + reach) {
                for c in (px as i64 - reach)..=(px as i64 + reach) {
                    let level = gauge.level(c as f64 - px, r as f64 - py);
                    if r < IMPLANT_GAP || c < IMPLANT_GAP || r >= h - IMPLANT_GAP || c >= w - IMPLANT_GAP {
                        excluded = excluded.min(level);
                        continue;
                    }
                    cands.push((level, (r * w + c) as usize));
                }
            }
            if cands.len() < area {
                continue;
            }
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // the border must not cut into the shape
            if cands[area - 1].0 >= excluded {
                continue;
            }
            let chosen: Vec<usize> = cands[..area].iter().map(|&(_, i)| i).collect();
            let collides = chosen.iter().any(|&i| {
                let (r, c) = ((i as i64) / w, (i as i64) % w);
                (-IMPLANT_GAP..=IMPLANT_GAP).any(|dr| {
                    (-IMPLANT_GAP..=IMPLANT_GAP).any(|dc| {
                        let (nr, nc) = (r + dr, c + dc);
                        nr >= 0 && nc >= 0 && nr < h && nc < w && mask[(nr * w + nc) as usize] > 0.0
                    })
                })
            });
            if collides {
                continue;
            }
            placed = Some(chosen);
            break;
        }
        let chosen = placed.ok_or(Error::PlacementFailed {
            implant,
            attempts: PLACEMENT_ATTEMPTS,
        })?;
        for i in chosen {
            mask[i] = 1.0;
        }
    }
    Image::zeros(geo).with_data(mask)
}

/// Rays touched by metal: `binarize(forward(m), 0)`.
pub fn metal_trace(h: &Projector, m: &Image) -> Result<Sinogram> {
    h.forward(m)?.binarize(0.0)
}

/// Replaces every metal component by the mean of the non-metal pixels within
/// two pixels of it.
pub fn tissue_fill(x: &Image, m: &Image) -> Result<Image> {
    x.same_shape(m)?;
    let (labels, count) = label_components(m);
    let (w, h) = (x.width() as i64, x.height() as i64);
    let mut sums = vec![0.0; count + 1];
    let mut counts = vec![0usize; count + 1];
    let mut seen = vec![usize::MAX; x.data().len()];
    for (i, &lab) in labels.iter().enumerate() {
        if lab == 0 {
            continue;
        }
        let (r, c) = (i as i64 / w, i as i64 % w);
        for dr in -2..=2 {
            for dc in -2..=2 {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h || nc >= w {
                    continue;
                }
                let j = (nr * w + nc) as usize;
                if labels[j] == 0 && seen[j] != lab {
                    seen[j] = lab;
                    sums[lab] += x.data()[j];
                    counts[lab] += 1;
                }
            }
        }
    }
    let data = x
        .data()
        .iter()
        .zip(&labels)
        .map(|(&v, &lab)| {
            if lab == 0 {
                v
            } else if counts[lab] > 0 {
                sums[lab] / counts[lab] as f64
            } else {
                0.0
            }
        })
        .collect();
    x.with_data(data)
}

#[derive(Debug, Clone)]
pub struct Corrupted {
    /// Metal-corrupted measurement.
    pub y: Sinogram,
    /// Metal-free, noise-free measurement of the tissue image.
    pub y_gt: Sinogram,
    /// FBP of `y`.
    pub x_ma: Image,
}

/// Simulates the metal-affected scan of `x_gt` with implants `m`.
pub fn corrupt(
    h: &Projector,
    x_gt: &Image,
    m: &Image,
    metal_mu: f64,
    spec: &CorruptionSpec,
    fbp_cfg: &FbpConfig,
) -> Result<Corrupted> {
    spec.validate()?;
    x_gt.matches(h.geometry())?;
    m.matches(h.geometry())?;
    let tissue = tissue_fill(x_gt, m)?;
    let p_t = h.forward(&tissue)?;
    let p_m = h.forward(&m.map(|v| v * metal_mu)?)?;

    let y_gt: Vec<f64> = p_t.data().iter().map(|&pt| spec.measure(pt, 0.0)).collect();
    let mut y: Vec<f64> = p_t
        .data()
        .iter()
        .zip(p_m.data())
        .map(|(&pt, &pm)| spec.measure(pt, pm))
        .collect();

    if let Some(i0) = spec.photons_i0 {
        let n_views = h.geometry().n_views;
        let n_bins = h.geometry().n_bins;
        let noisy: Vec<Vec<f64>> = (0..n_views)
            .into_par_iter()
            .map(|v| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(v as u64);
                (0..n_bins)
                    .map(|b| {
                        let mean = i0 * (-y[b * n_views + v]).exp();
                        let counts = Poisson::new(mean).map_or(0.0, |d| d.sample(&mut rng));
                        -(counts.max(TRANSMISSION_FLOOR * i0) / i0).ln()
                    })
                    .collect()
            })
            .collect();
        for (v, col) in noisy.into_iter().enumerate() {
            for (b, val) in col.into_iter().enumerate() {
                y[b * n_views + v] = val;
            }
        }
    }

    let y = p_t.with_data(y)?;
    let y_gt = p_t.with_data(y_gt)?;
    let x_ma = fbp::reconstruct_with(h, &y, fbp_cfg)?;
    Ok(Corrupted { y, y_gt, x_ma })
}
