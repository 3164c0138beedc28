//! Synthetic attenuation phantoms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Geometry, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    SheppLogan,
    RandomEllipses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub seed: u64,
    /// Ellipse count for `random_ellipses`; the first one is the body.
    pub n_ellipses: usize,
    /// Attenuation interval for `random_ellipses`, per cm.
    pub attenuation_range: [f64; 2],
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            kind: PhantomKind::SheppLogan,
            seed: 0,
            n_ellipses: 8,
            attenuation_range: [0.15, 0.45],
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.attenuation_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::InvalidConfig(format!(
                "attenuation range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Axis-aligned-then-rotated ellipse in normalized coordinates, where the
/// image spans [-1, 1] on both axes with y pointing up.
#[derive(Debug, Clone, Copy)]
struct Ellipse {
    value: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    phi_deg: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let dx = x - self.x0;
        let dy = y - self.y0;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Modified (high-contrast) Shepp–Logan ellipses.
const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse { value: 1.0, a: 0.69, b: 0.92, x0: 0.0, y0: 0.0, phi_deg: 0.0 },
    Ellipse { value: -0.8, a: 0.6624, b: 0.874, x0: 0.0, y0: -0.0184, phi_deg: 0.0 },
    Ellipse { value: -0.2, a: 0.11, b: 0.31, x0: 0.22, y0: 0.0, phi_deg: -18.0 },
    Ellipse { value: -0.2, a: 0.16, b: 0.41, x0: -0.22, y0: 0.0, phi_deg: 18.0 },
    Ellipse { value: 0.1, a: 0.21, b: 0.25, x0: 0.0, y0: 0.35, phi_deg: 0.0 },
    Ellipse { value: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: 0.1, phi_deg: 0.0 },
    Ellipse { value: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: -0.1, phi_deg: 0.0 },
    Ellipse { value: 0.1, a: 0.046, b: 0.023, x0: -0.08, y0: -0.605, phi_deg: 0.0 },
    Ellipse { value: 0.1, a: 0.023, b: 0.023, x0: 0.0, y0: -0.606, phi_deg: 0.0 },
    Ellipse { value: 0.1, a: 0.023, b: 0.046, x0: 0.06, y0: -0.605, phi_deg: 0.0 },
];

fn normalized_coords(geo: &Geometry, row: usize, col: usize) -> (f64, f64) {
    let x = (col as f64 - (geo.image_w as f64 - 1.0) / 2.0) / (geo.image_w as f64 / 2.0);
    let y = ((geo.image_h as f64 - 1.0) / 2.0 - row as f64) / (geo.image_h as f64 / 2.0);
    (x, y)
}

pub fn shepp_logan(geo: &Geometry) -> Result<Image> {
    Image::from_fn(geo, |r, c| {
        let (x, y) = normalized_coords(geo, r, c);
        let v: f64 = SHEPP_LOGAN
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.value)
            .sum();
        // overlapping -0.8/-0.2 regions sum to zero up to rounding
        v.max(0.0)
    })
}

fn random_ellipses(spec: &PhantomSpec, geo: &Geometry) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [lo, hi] = spec.attenuation_range;
    let value = |rng: &mut ChaCha8Rng| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let mut ellipses = Vec::with_capacity(spec.n_ellipses);
    for i in 0..spec.n_ellipses {
        let e = if i == 0 {
            Ellipse {
                value: value(&mut rng),
                a: rng.gen_range(0.6..0.85),
                b: rng.gen_range(0.6..0.85),
                x0: rng.gen_range(-0.05..0.05),
                y0: rng.gen_range(-0.05..0.05),
                phi_deg: rng.gen_range(0.0..180.0),
            }
        } else {
            let r: f64 = rng.gen_range(0.0f64..0.45);
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Ellipse {
                value: value(&mut rng),
                a: rng.gen_range(0.04..0.25),
                b: rng.gen_range(0.04..0.25),
                x0: r * t.cos(),
                y0: r * t.sin(),
                phi_deg: rng.gen_range(0.0..180.0),
            }
        };
        ellipses.push(e);
    }
    Image::from_fn(geo, |r, c| {
        let (x, y) = normalized_coords(geo, r, c);
        // later ellipses paint over earlier ones
        ellipses
            .iter()
            .rev()
            .find(|e| e.contains(x, y))
            .map_or(0.0, |e| e.value)
    })
}

/// Ground-truth attenuation image. Deterministic in `spec.seed`.
pub fn make_phantom(spec: &PhantomSpec, geo: &Geometry) -> Result<Image> {
    geo.validate()?;
    spec.validate()?;
    match spec.kind {
        PhantomKind::SheppLogan => shepp_logan(geo),
        PhantomKind::RandomEllipses => random_ellipses(spec, geo),
    }
}
