//! Proximal operators on 2-D rasters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxKind {
    Identity,
    Nonneg,
    Tv,
    SoftThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxSpec {
    pub kind: ProxKind,
    /// Regularization weight times step size.
    #[serde(default)]
    pub strength: f64,
    /// Dual iterations for `tv`.
    #[serde(default = "default_inner_iters")]
    pub inner_iters: usize,
}

fn default_inner_iters() -> usize {
    20
}

/// Dual step for the TV projection; 1/8 is the convergence bound for the
/// forward-difference gradient in 2-D.
const TV_TAU: f64 = 0.125;

impl ProxSpec {
    pub fn identity() -> Self {
        ProxSpec {
            kind: ProxKind::Identity,
            strength: 0.0,
            inner_iters: default_inner_iters(),
        }
    }

    pub fn nonneg() -> Self {
        ProxSpec {
            kind: ProxKind::Nonneg,
            ..Self::identity()
        }
    }

    pub fn tv(strength: f64) -> Self {
        ProxSpec {
            kind: ProxKind::Tv,
            strength,
            ..Self::identity()
        }
    }

    pub fn soft_threshold(strength: f64) -> Self {
        ProxSpec {
            kind: ProxKind::SoftThreshold,
            strength,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength.is_finite() && self.strength >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "prox strength must be finite and >= 0, got {}",
                self.strength
            )));
        }
        if self.kind == ProxKind::Tv && self.inner_iters == 0 {
            return Err(Error::InvalidConfig("tv prox needs inner_iters >= 1".into()));
        }
        Ok(())
    }

    /// Applies the operator to a `rows × cols` row-major raster.
    pub fn apply(&self, data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        match self.kind {
            ProxKind::Identity => data.to_vec(),
            ProxKind::Nonneg => data.iter().map(|&v| v.max(0.0)).collect(),
            ProxKind::SoftThreshold => data
                .iter()
                .map(|&v| v.signum() * (v.abs() - self.strength).max(0.0))
                .collect(),
            ProxKind::Tv if self.strength == 0.0 => data.to_vec(),
            ProxKind::Tv => tv_denoise(data, rows, cols, self.strength, self.inner_iters),
        }
    }
}

/// Forward-difference gradient with Neumann boundary.
fn grad(u: &[f64], rows: usize, cols: usize, gx: &mut [f64], gy: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            gx[i] = if c + 1 < cols { u[i + 1] - u[i] } else { 0.0 };
            gy[i] = if r + 1 < rows { u[i + cols] - u[i] } else { 0.0 };
        }
    }
}

/// Negative adjoint of `grad`.
fn div(px: &[f64], py: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let dx = match c {
                0 => px[i],
                _ if c + 1 == cols => -px[i - 1],
                _ => px[i] - px[i - 1],
            };
            let dy = match r {
                0 => py[i],
                _ if r + 1 == rows => -py[i - cols],
                _ => py[i] - py[i - cols],
            };
            out[i] = if cols == 1 { 0.0 } else { dx } + if rows == 1 { 0.0 } else { dy };
        }
    }
}

/// Chambolle's dual projection for `min_u ½‖u − f‖² + λ·TV(u)` (isotropic).
pub fn tv_denoise(f: &[f64], rows: usize, cols: usize, lambda: f64, iters: usize) -> Vec<f64> {
    let n = f.len();
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut w = vec![0.0; n];
    for _ in 0..iters {
        div(&px, &py, rows, cols, &mut d);
        for i in 0..n {
            w[i] = d[i] - f[i] / lambda;
        }
        grad(&w, rows, cols, &mut gx, &mut gy);
        for i in 0..n {
            let norm = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            let denom = 1.0 + TV_TAU * norm;
            px[i] = (px[i] + TV_TAU * gx[i]) / denom;
            py[i] = (py[i] + TV_TAU * gy[i]) / denom;
        }
    }
    div(&px, &py, rows, cols, &mut d);
    f.iter().zip(&d).map(|(&v, &dv)| v - lambda * dv).collect()
}

/// Isotropic total variation with the same discretization as `tv_denoise`.
pub fn total_variation(u: &[f64], rows: usize, cols: usize) -> f64 {
    let mut gx = vec![0.0; u.len()];
    let mut gy = vec![0.0; u.len()];
    grad(u, rows, cols, &mut gx, &mut gy);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).sum()
}
