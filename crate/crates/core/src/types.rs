//! Image, sinogram and geometry value types.
//!
//! Rasters are row-major. Images are indexed `[row][col]`, sinograms are
//! indexed `[bin][view]`. All values are validated finite at construction and
//! are immutable afterwards.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted image side, in pixels.
pub const MIN_IMAGE_SIDE: usize = 8;

/// Linear attenuation of water at the reference energy, per cm.
pub const WATER_MU_PER_CM: f64 = 0.192;

/// Field of view used by [`Geometry::square`], in cm.
pub const DEFAULT_FOV_CM: f64 = 20.8;

/// Detector span relative to the image diagonal.
pub const DETECTOR_MARGIN: f64 = 1.02;

fn check_finite(data: &[f64], what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Spatial-domain raster of linear attenuation values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixel_size: f64,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixel_size: f64, data: Vec<f64>) -> Result<Self> {
        if width < MIN_IMAGE_SIDE {
            return Err(Error::InvalidDimension {
                what: "image width",
                value: width,
            });
        }
        if height < MIN_IMAGE_SIDE {
            return Err(Error::InvalidDimension {
                what: "image height",
                value: height,
            });
        }
        if !(pixel_size.is_finite() && pixel_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "pixel size must be positive, got {pixel_size}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                dim: "image data length",
                expected: width * height,
                actual: data.len(),
            });
        }
        check_finite(&data, "image")?;
        Ok(Image {
            width,
            height,
            pixel_size,
            data,
        })
    }

    pub fn zeros(geo: &Geometry) -> Self {
        Image {
            width: geo.image_w,
            height: geo.image_h,
            pixel_size: geo.pixel_size,
            data: vec![0.0; geo.image_w * geo.image_h],
        }
    }

    pub fn zeros_like(other: &Image) -> Self {
        other.with_data_unchecked(vec![0.0; other.data.len()])
    }

    /// Builds an image on `geo` from a function of `(row, col)`.
    pub fn from_fn(geo: &Geometry, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(geo.image_w * geo.image_h);
        for r in 0..geo.image_h {
            for c in 0..geo.image_w {
                data.push(f(r, c));
            }
        }
        Image::new(geo.image_w, geo.image_h, geo.pixel_size, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Same shape and spacing, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Image::new(self.width, self.height, self.pixel_size, data)
    }

    /// Used on hot paths whose arithmetic cannot introduce non-finite values
    /// from finite inputs; callers that can must go through `with_data`.
    pub(crate) fn with_data_unchecked(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Image {
            width: self.width,
            height: self.height,
            pixel_size: self.pixel_size,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn binarize(&self, threshold: f64) -> Result<Self> {
        self.with_data(binarize(&self.data, threshold)?)
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.height != other.height {
            return Err(Error::ShapeMismatch {
                dim: "image height",
                expected: self.height,
                actual: other.height,
            });
        }
        if self.width != other.width {
            return Err(Error::ShapeMismatch {
                dim: "image width",
                expected: self.width,
                actual: other.width,
            });
        }
        Ok(())
    }

    pub fn matches(&self, geo: &Geometry) -> Result<()> {
        if self.height != geo.image_h {
            return Err(Error::ShapeMismatch {
                dim: "image height",
                expected: geo.image_h,
                actual: self.height,
            });
        }
        if self.width != geo.image_w {
            return Err(Error::ShapeMismatch {
                dim: "image width",
                expected: geo.image_w,
                actual: self.width,
            });
        }
        Ok(())
    }
}

/// Radon-domain raster, `n_bins` rows by `n_views` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    n_bins: usize,
    n_views: usize,
    view_angles: Vec<f64>,
    detector_spacing: f64,
    data: Vec<f64>,
}

/// Uniform view angles over `[0, 2π)`.
pub fn uniform_view_angles(n_views: usize) -> Vec<f64> {
    (0..n_views)
        .map(|k| 2.0 * PI * k as f64 / n_views as f64)
        .collect()
}

impl Sinogram {
    pub fn new(
        n_bins: usize,
        n_views: usize,
        view_angles: Vec<f64>,
        detector_spacing: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidDimension {
                what: "sinogram bins",
                value: n_bins,
            });
        }
        if n_views == 0 {
            return Err(Error::InvalidDimension {
                what: "sinogram views",
                value: n_views,
            });
        }
        if view_angles.len() != n_views {
            return Err(Error::ShapeMismatch {
                dim: "view angle count",
                expected: n_views,
                actual: view_angles.len(),
            });
        }
        check_finite(&view_angles, "view angles")?;
        if n_views > 1 {
            let step = view_angles[1] - view_angles[0];
            let uniform = step > 0.0
                && view_angles
                    .windows(2)
                    .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.max(1.0));
            if !uniform {
                return Err(Error::InvalidConfig(
                    "view angles must be strictly increasing and uniformly spaced".into(),
                ));
            }
        }
        if !(detector_spacing.is_finite() && detector_spacing > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "detector spacing must be positive, got {detector_spacing}"
            )));
        }
        if data.len() != n_bins * n_views {
            return Err(Error::ShapeMismatch {
                dim: "sinogram data length",
                expected: n_bins * n_views,
                actual: data.len(),
            });
        }
        check_finite(&data, "sinogram")?;
        Ok(Sinogram {
            n_bins,
            n_views,
            view_angles,
            detector_spacing,
            data,
        })
    }

    pub fn zeros(geo: &Geometry) -> Self {
        Sinogram {
            n_bins: geo.n_bins,
            n_views: geo.n_views,
            view_angles: uniform_view_angles(geo.n_views),
            detector_spacing: geo.detector_spacing,
            data: vec![0.0; geo.n_bins * geo.n_views],
        }
    }

    pub fn from_fn(geo: &Geometry, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(geo.n_bins * geo.n_views);
        for b in 0..geo.n_bins {
            for v in 0..geo.n_views {
                data.push(f(b, v));
            }
        }
        Sinogram::new(
            geo.n_bins,
            geo.n_views,
            uniform_view_angles(geo.n_views),
            geo.detector_spacing,
            data,
        )
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn view_angles(&self) -> &[f64] {
        &self.view_angles
    }

    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, bin: usize, view: usize) -> f64 {
        self.data[bin * self.n_views + view]
    }

    /// Copies one view (a column) out of the raster.
    pub fn view(&self, view: usize) -> Vec<f64> {
        (0..self.n_bins)
            .map(|b| self.data[b * self.n_views + view])
            .collect()
    }

    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Sinogram::new(
            self.n_bins,
            self.n_views,
            self.view_angles.clone(),
            self.detector_spacing,
            data,
        )
    }

    pub(crate) fn with_data_unchecked(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Sinogram {
            n_bins: self.n_bins,
            n_views: self.n_views,
            view_angles: self.view_angles.clone(),
            detector_spacing: self.detector_spacing,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn binarize(&self, threshold: f64) -> Result<Self> {
        self.with_data(binarize(&self.data, threshold)?)
    }

    pub fn same_shape(&self, other: &Sinogram) -> Result<()> {
        if self.n_bins != other.n_bins {
            return Err(Error::ShapeMismatch {
                dim: "sinogram bins",
                expected: self.n_bins,
                actual: other.n_bins,
            });
        }
        if self.n_views != other.n_views {
            return Err(Error::ShapeMismatch {
                dim: "sinogram views",
                expected: self.n_views,
                actual: other.n_views,
            });
        }
        Ok(())
    }

    pub fn matches(&self, geo: &Geometry) -> Result<()> {
        if self.n_bins != geo.n_bins {
            return Err(Error::ShapeMismatch {
                dim: "sinogram bins",
                expected: geo.n_bins,
                actual: self.n_bins,
            });
        }
        if self.n_views != geo.n_views {
            return Err(Error::ShapeMismatch {
                dim: "sinogram views",
                expected: geo.n_views,
                actual: self.n_views,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Beam {
    #[default]
    Parallel,
}

/// Projection configuration binding image and sinogram shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub image_h: usize,
    pub image_w: usize,
    pub n_bins: usize,
    pub n_views: usize,
    pub detector_spacing: f64,
    pub pixel_size: f64,
    pub beam: Beam,
}

impl Default for Geometry {
    /// 416×416 image, 641 bins, 640 views over 360°.
    fn default() -> Self {
        Geometry::new(416, 416, 641, 640, DEFAULT_FOV_CM / 416.0)
            .expect("default geometry is valid")
    }
}

impl Geometry {
    /// Geometry whose detector spans `DETECTOR_MARGIN` times the image
    /// diagonal, split evenly over `n_bins`.
    pub fn new(
        image_h: usize,
        image_w: usize,
        n_bins: usize,
        n_views: usize,
        pixel_size: f64,
    ) -> Result<Self> {
        let diag = ((image_h * image_h + image_w * image_w) as f64).sqrt() * pixel_size;
        let spacing = if n_bins > 0 {
            DETECTOR_MARGIN * diag / n_bins as f64
        } else {
            0.0
        };
        Geometry::with_spacing(image_h, image_w, n_bins, n_views, pixel_size, spacing)
    }

    pub fn with_spacing(
        image_h: usize,
        image_w: usize,
        n_bins: usize,
        n_views: usize,
        pixel_size: f64,
        detector_spacing: f64,
    ) -> Result<Self> {
        let geo = Geometry {
            image_h,
            image_w,
            n_bins,
            n_views,
            detector_spacing,
            pixel_size,
            beam: Beam::Parallel,
        };
        geo.validate()?;
        Ok(geo)
    }

    /// Square `n`×`n` image on a fixed field of view, with the smallest odd
    /// bin count giving a detector pitch no coarser than one pixel.
    pub fn square(n: usize, n_views: usize) -> Result<Self> {
        let mut n_bins = (DETECTOR_MARGIN * n as f64 * 2f64.sqrt()).ceil() as usize;
        if n_bins % 2 == 0 {
            n_bins += 1;
        }
        Geometry::new(n, n, n_bins, n_views, DEFAULT_FOV_CM / n.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_h < MIN_IMAGE_SIDE {
            return Err(Error::InvalidDimension {
                what: "image height",
                value: self.image_h,
            });
        }
        if self.image_w < MIN_IMAGE_SIDE {
            return Err(Error::InvalidDimension {
                what: "image width",
                value: self.image_w,
            });
        }
        if self.n_bins == 0 {
            return Err(Error::InvalidDimension {
                what: "detector bins",
                value: 0,
            });
        }
        if self.n_views == 0 {
            return Err(Error::InvalidDimension {
                what: "projection views",
                value: 0,
            });
        }
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0) {
            return Err(Error::InvalidConfig("pixel size must be positive".into()));
        }
        if !(self.detector_spacing.is_finite() && self.detector_spacing > 0.0) {
            return Err(Error::InvalidConfig(
                "detector spacing must be positive".into(),
            ));
        }
        if self.detector_span() < self.diagonal() * (1.0 - 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "detector span {:.4} does not cover the image diagonal {:.4}",
                self.detector_span(),
                self.diagonal()
            )));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        ((self.image_h * self.image_h + self.image_w * self.image_w) as f64).sqrt()
            * self.pixel_size
    }

    pub fn detector_span(&self) -> f64 {
        self.n_bins as f64 * self.detector_spacing
    }

    pub fn n_pixels(&self) -> usize {
        self.image_h * self.image_w
    }

    pub fn n_rays(&self) -> usize {
        self.n_bins * self.n_views
    }

    pub fn view_angles(&self) -> Vec<f64> {
        uniform_view_angles(self.n_views)
    }

    /// Signed detector offset of bin `b`, physical units, centered on zero.
    pub fn bin_offset(&self, b: usize) -> f64 {
        (b as f64 - (self.n_bins as f64 - 1.0) / 2.0) * self.detector_spacing
    }
}

/// Checks an image/sinogram pair against a geometry.
pub fn validate_pair(img: &Image, sino: &Sinogram, geo: &Geometry) -> Result<()> {
    geo.validate()?;
    img.matches(geo)?;
    sino.matches(geo)
}

/// 1 where the value is strictly above `threshold`, else 0.
pub fn binarize(data: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if threshold.is_nan() {
        return Err(Error::NonFinite("threshold"));
    }
    check_finite(data, "binarize input")?;
    Ok(data
        .iter()
        .map(|&v| if v > threshold { 1.0 } else { 0.0 })
        .collect())
}

/// Affine map between linear attenuation and Hounsfield units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HuMap {
    pub water_mu: f64,
}

impl Default for HuMap {
    fn default() -> Self {
        HuMap {
            water_mu: WATER_MU_PER_CM,
        }
    }
}

impl HuMap {
    pub fn to_hu(&self, mu: f64) -> f64 {
        1000.0 * (mu - self.water_mu) / self.water_mu
    }

    pub fn to_mu(&self, hu: f64) -> f64 {
        self.water_mu * (1.0 + hu / 1000.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_matches_published_sizes() {
        let geo = Geometry::default();
        assert_eq!((geo.image_h, geo.image_w), (416, 416));
        assert_eq!((geo.n_bins, geo.n_views), (641, 640));
        assert!(geo.detector_span() >= geo.diagonal());
        let angles = geo.view_angles();
        assert_eq!(angles[0], 0.0);
        assert!((angles[1] - 2.0 * PI / 640.0).abs() < 1e-15);
        assert!(angles[639] < 2.0 * PI);
    }

    #[test]
    fn validate_pair_accepts_matching_shapes() {
        let geo = Geometry::default();
        let img = Image::zeros(&geo);
        let sino = Sinogram::zeros(&geo);
        validate_pair(&img, &sino, &geo).unwrap();
    }

    #[test]
    fn validate_pair_names_offending_dimension() {
        let geo = Geometry::default();
        let img = Image::zeros(&geo);
        let other = Geometry::new(416, 416, 640, 640, geo.pixel_size).unwrap();
        let sino = Sinogram::zeros(&other);
        match validate_pair(&img, &sino, &geo) {
            Err(Error::ShapeMismatch {
                dim,
                expected,
                actual,
            }) => {
                assert_eq!(dim, "sinogram bins");
                assert_eq!((expected, actual), (641, 640));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_image_rejected() {
        assert!(matches!(
            Image::new(0, 0, 1.0, vec![]),
            Err(Error::InvalidDimension { .. })
        ));
        assert!(matches!(
            Geometry::new(0, 0, 10, 10, 1.0),
            Err(Error::InvalidDimension { .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let mut data = vec![0.0; 64];
        data[3] = f64::NAN;
        assert!(matches!(
            Image::new(8, 8, 1.0, data),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn truncating_detector_rejected() {
        assert!(Geometry::with_spacing(64, 64, 64, 90, 1.0, 1.0).is_err());
        assert!(Geometry::with_spacing(64, 64, 95, 90, 1.0, 1.0).is_ok());
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0.0; 4], 0.5).unwrap(), vec![0.0; 4]);
        let hu = [0.0, 40.0, 3000.0, 1200.0];
        assert_eq!(binarize(&hu, 2500.0).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(binarize(&[0.5; 3], 0.5).unwrap(), vec![0.0; 3]);
        assert!(binarize(&[f64::INFINITY], 0.5).is_err());
    }

    #[test]
    fn square_geometry_covers_diagonal() {
        for n in [8, 32, 64, 128, 256] {
            let geo = Geometry::square(n, 90).unwrap();
            assert!(geo.detector_span() >= geo.diagonal());
            assert_eq!(geo.n_bins % 2, 1);
            assert!(geo.detector_spacing <= geo.pixel_size * (1.0 + 1e-12));
        }
    }

    #[test]
    fn hu_map_round_trip() {
        let map = HuMap::default();
        assert_eq!(map.to_hu(WATER_MU_PER_CM), 0.0);
        assert!((map.to_hu(0.0) + 1000.0).abs() < 1e-12);
        assert!((map.to_mu(map.to_hu(0.3)) - 0.3).abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn binarize_idempotent(data in prop::collection::vec(-10.0f64..10.0, 1..200), t in -5.0f64..5.0) {
                let once = binarize(&data, t).unwrap();
                let twice = binarize(&once, 0.5).unwrap();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
