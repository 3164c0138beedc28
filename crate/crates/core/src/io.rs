//! Raster files and display exports.
//!
//! A raster is a pair of files sharing a stem: `<stem>.raw` holds the samples
//! as little-endian `f32` in row-major order, `<stem>.toml` holds the
//! metadata. Sinograms are stored `[bin][view]`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{uniform_view_angles, HuMap, Image, Sinogram};

pub const CREATOR: &str = concat!("dudomar ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterKind {
    Image,
    Sinogram,
    Mask,
    Trace,
}

impl RasterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RasterKind::Image => "image",
            RasterKind::Sinogram => "sinogram",
            RasterKind::Mask => "mask",
            RasterKind::Trace => "trace",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "image" => RasterKind::Image,
            "sinogram" => RasterKind::Sinogram,
            "mask" => RasterKind::Mask,
            "trace" => RasterKind::Trace,
            other => return Err(Error::UnknownKind(other.to_string())),
        })
    }

    fn is_spatial(self) -> bool {
        matches!(self, RasterKind::Image | RasterKind::Mask)
    }
}

/// Seeds that produced a raster, keyed by generator name.
pub type Provenance = BTreeMap<String, u64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub kind: String,
    /// `[rows, cols]`: `[height, width]` or `[bins, views]`.
    pub dims: [usize; 2],
    /// Pixel size or detector spacing.
    pub spacing: f64,
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_step: Option<f64>,
    pub creator: String,
    #[serde(default)]
    pub seeds: Provenance,
}

impl Sidecar {
    pub fn raster_kind(&self) -> Result<RasterKind> {
        RasterKind::parse(&self.kind)
    }
}

/// Payload and sidecar paths for `path`, ignoring any extension it has.
pub fn raster_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("raw"), path.with_extension("toml"))
}

/// Writes via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn write_raster(path: &Path, data: &[f64], sidecar: &Sidecar) -> Result<()> {
    let (raw, meta) = raster_paths(path);
    if let Some(dir) = raw.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_atomic(&raw, &encode(data))?;
    let text = toml::to_string(sidecar).map_err(|e| Error::Sidecar {
        path: meta.clone(),
        message: e.to_string(),
    })?;
    write_atomic(&meta, text.as_bytes())
}

fn read_raster(path: &Path) -> Result<(Vec<f64>, Sidecar, RasterKind)> {
    let (raw, meta) = raster_paths(path);
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let sidecar: Sidecar = toml::from_str(&text).map_err(|e| Error::Sidecar {
        path: meta.clone(),
        message: e.to_string(),
    })?;
    let kind = sidecar.raster_kind()?;
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let expected = sidecar.dims[0] * sidecar.dims[1] * 4;
    if bytes.len() != expected {
        return Err(Error::TruncatedPayload {
            path: raw,
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect::<Vec<_>>();
    if matches!(kind, RasterKind::Mask | RasterKind::Trace) && data.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Sidecar {
            path: meta,
            message: format!("{} raster is not binary", kind.as_str()),
        });
    }
    Ok((data, sidecar, kind))
}

pub fn write_image(path: &Path, img: &Image, kind: RasterKind, seeds: &Provenance) -> Result<()> {
    if !kind.is_spatial() {
        return Err(Error::InvalidConfig(format!("cannot store an image as {}", kind.as_str())));
    }
    let sidecar = Sidecar {
        kind: kind.as_str().into(),
        dims: [img.height(), img.width()],
        spacing: img.pixel_size(),
        units: "cm".into(),
        angle_start: None,
        angle_step: None,
        creator: CREATOR.into(),
        seeds: seeds.clone(),
    };
    write_raster(path, img.data(), &sidecar)
}

pub fn write_sinogram(path: &Path, sino: &Sinogram, kind: RasterKind, seeds: &Provenance) -> Result<()> {
    if kind.is_spatial() {
        return Err(Error::InvalidConfig(format!("cannot store a sinogram as {}", kind.as_str())));
    }
    let angles = sino.view_angles();
    let step = if angles.len() > 1 { angles[1] - angles[0] } else { 0.0 };
    let sidecar = Sidecar {
        kind: kind.as_str().into(),
        dims: [sino.n_bins(), sino.n_views()],
        spacing: sino.detector_spacing(),
        units: "cm".into(),
        angle_start: Some(angles[0]),
        angle_step: Some(step),
        creator: CREATOR.into(),
        seeds: seeds.clone(),
    };
    write_raster(path, sino.data(), &sidecar)
}

pub fn read_image(path: &Path) -> Result<(Image, Sidecar)> {
    let (data, sidecar, kind) = read_raster(path)?;
    if !kind.is_spatial() {
        return Err(Error::Sidecar {
            path: raster_paths(path).1,
            message: format!("expected an image raster, found {}", kind.as_str()),
        });
    }
    let [h, w] = sidecar.dims;
    Ok((Image::new(w, h, sidecar.spacing, data)?, sidecar))
}

pub fn read_sinogram(path: &Path) -> Result<(Sinogram, Sidecar)> {
    let (data, sidecar, kind) = read_raster(path)?;
    let meta = raster_paths(path).1;
    if kind.is_spatial() {
        return Err(Error::Sidecar {
            path: meta,
            message: format!("expected a sinogram raster, found {}", kind.as_str()),
        });
    }
    let [n_bins, n_views] = sidecar.dims;
    let (start, step) = match (sidecar.angle_start, sidecar.angle_step) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Sidecar {
                path: meta,
                message: "sinogram sidecar lacks angle_start/angle_step".into(),
            })
        }
    };
    let uniform = uniform_view_angles(n_views);
    let full_turn = n_views > 0 && start == uniform[0] && (n_views == 1 || step == uniform[1] - uniform[0]);
    let angles = if full_turn {
        uniform
    } else {
        (0..n_views).map(|k| start + k as f64 * step).collect()
    };
    Ok((Sinogram::new(n_bins, n_views, angles, sidecar.spacing, data)?, sidecar))
}

/// 16-bit binary PGM of `data` with a linear window `[lo, hi]`.
pub fn write_pgm(data: &[f64], width: usize, height: usize, window: (f64, f64), path: &Path) -> Result<()> {
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidConfig(format!("display window must satisfy lo < hi, got ({lo}, {hi})")));
    }
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &v in data {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        bytes.extend_from_slice(&((t * 65535.0).round() as u16).to_be_bytes());
    }
    write_atomic(path, &bytes)
}

/// Default display window in HU.
pub const DEFAULT_HU_WINDOW: (f64, f64) = (-175.0, 275.0);

/// Writes `img` as a PGM after mapping attenuation to HU.
pub fn export_pgm(img: &Image, window_hu: (f64, f64), hu: &HuMap, path: &Path) -> Result<()> {
    let data: Vec<f64> = img.data().iter().map(|&v| hu.to_hu(v)).collect();
    write_pgm(&data, img.width(), img.height(), window_hu, path)
}

/// Writes a sinogram as a PGM spanning its own value range (bins down,
/// views across).
pub fn export_sinogram_pgm(sino: &Sinogram, path: &Path) -> Result<()> {
    let (lo, hi) = (sino.min(), sino.max());
    let hi = if hi > lo { hi } else { lo + 1.0 };
    write_pgm(sino.data(), sino.n_views(), sino.n_bins(), (lo, hi), path)
}
