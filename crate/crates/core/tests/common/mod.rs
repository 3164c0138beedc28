#![allow(dead_code)]

use dudomar::fbp::FbpConfig;
use dudomar::phantom::PhantomSpec;
use dudomar::pipeline::{simulate_case, Case};
use dudomar::simulator::{CorruptionSpec, MetalSpec};
use dudomar::{Geometry, Image, Projector};

/// 128×128 Shepp–Logan, 180 views, two small implants, default spectrum and
/// noise.
pub fn standard_case() -> (Projector, Case) {
    let geo = Geometry::square(128, 180).unwrap();
    let h = Projector::new(&geo).unwrap();
    let metal = MetalSpec {
        seed: 3,
        n_implants: 2,
        size_range: [15.0, 40.0],
        ..Default::default()
    };
    let case = simulate_case(
        &h,
        &PhantomSpec::default(),
        &metal,
        &CorruptionSpec { seed: 5, ..Default::default() },
        &FbpConfig::default(),
    )
    .unwrap();
    (h, case)
}

/// Centered disc of radius `radius_px` pixels with area-weighted edge pixels.
pub fn disc(geo: &Geometry, radius_px: f64, value: f64) -> Image {
    const SUB: usize = 8;
    let (cy, cx) = ((geo.image_h as f64 - 1.0) / 2.0, (geo.image_w as f64 - 1.0) / 2.0);
    Image::from_fn(geo, |r, c| {
        let mut hits = 0;
        for i in 0..SUB {
            for j in 0..SUB {
                let y = r as f64 - 0.5 + (i as f64 + 0.5) / SUB as f64 - cy;
                let x = c as f64 - 0.5 + (j as f64 + 0.5) / SUB as f64 - cx;
                if x * x + y * y <= radius_px * radius_px {
                    hits += 1;
                }
            }
        }
        value * hits as f64 / (SUB * SUB) as f64
    })
    .unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
