use dudomar::fbp::{self, FbpConfig};
use dudomar::metrics::psnr;
use dudomar::phantom::shepp_logan;
use dudomar::{Geometry, Image, Projector};

/// Full-image PSNR of FBP on the 256×256 Shepp–Logan phantom at 360 views,
/// frozen at first implementation.
const SHEPP_LOGAN_RAM_LAK_DB: f64 = 27.92;
const SHEPP_LOGAN_HANN_DB: f64 = 24.84;

fn rot90(x: &Image) -> Image {
    let n = x.width();
    x.with_data((0..n * n).map(|i| x.get(i % n, n - 1 - i / n)).collect()).unwrap()
}

#[test]
fn shepp_logan_fbp_baseline() {
    let geo = Geometry::square(256, 360).unwrap();
    let x = shepp_logan(&geo).unwrap();
    let y = Projector::new(&geo).unwrap().forward(&x).unwrap();
    for (cfg, baseline) in [(FbpConfig::ram_lak(), SHEPP_LOGAN_RAM_LAK_DB), (FbpConfig::default(), SHEPP_LOGAN_HANN_DB)] {
        let p = psnr(&fbp::reconstruct(&y, &geo, &cfg).unwrap(), &x, None, None).unwrap();
        assert!(p > baseline - 0.05, "{:?}: {p:.3} dB vs baseline {baseline}", cfg.filter);
    }
}

#[test]
fn smooth_object_reconstructs_closely() {
    let geo = Geometry::square(128, 256).unwrap();
    let c = 63.5;
    let x = Image::from_fn(&geo, |r, col| {
        let d2 = ((r as f64 - c).powi(2) + (col as f64 - c - 10.0).powi(2)) / (18.0f64).powi(2);
        0.3 * (-d2).exp()
    })
    .unwrap();
    let y = Projector::new(&geo).unwrap().forward(&x).unwrap();
    let p = psnr(&fbp::reconstruct(&y, &geo, &FbpConfig::ram_lak()).unwrap(), &x, None, None).unwrap();
    assert!(p > 40.0, "{p:.2} dB");
}

#[test]
fn quarter_turn_commutes_with_reconstruction() {
    let geo = Geometry::square(256, 360).unwrap();
    let h = Projector::new(&geo).unwrap();
    let x = shepp_logan(&geo).unwrap();
    let cfg = FbpConfig::default();
    let rotated_first = fbp::reconstruct_with(&h, &h.forward(&rot90(&x)).unwrap(), &cfg).unwrap();
    let rotated_after = rot90(&fbp::reconstruct_with(&h, &h.forward(&x).unwrap(), &cfg).unwrap());
    let p = psnr(&rotated_first, &rotated_after, None, None).unwrap();
    assert!(p > 35.0, "{p:.2} dB");
}
