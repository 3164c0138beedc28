//! End-to-end runs: simulation, reconstruction, stage dumps and the bench.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::classical::{li_reconstruct, nmar_reconstruct, NmarConfig};
use crate::config::{derive_seed, ExperimentConfig};
use crate::error::{Error, Result};
use crate::fbp::{self, FbpConfig};
use crate::io::{self, Provenance, RasterKind};
use crate::metrics::{evaluate, psnr_for_csv, MetricReport};
use crate::phantom::{make_phantom, PhantomKind, PhantomSpec};
use crate::projector::Projector;
use crate::simulator::{corrupt, make_metal, metal_trace, tissue_fill, CorruptionSpec, MetalShape, MetalSpec};
use crate::solver::{solve, SolverConfig, SolverState, StepSize};
use crate::types::{Geometry, Image, Sinogram};

/// File stems written by `simulate`.
pub const X_GT: &str = "x_gt";
pub const MASK: &str = "m";
pub const Y: &str = "y";
pub const Y_GT: &str = "y_gt";
pub const TRACE: &str = "tr";
pub const X_MA: &str = "x_ma";
pub const S_N: &str = "s_n";
pub const CONFIG_FILE: &str = "config.toml";

/// One simulated scan.
#[derive(Debug, Clone)]
pub struct Case {
    /// Metal-free ground truth, with metal pixels filled by nearby tissue.
    pub x_gt: Image,
    pub m: Image,
    pub tr: Sinogram,
    pub y: Sinogram,
    pub y_gt: Sinogram,
    pub x_ma: Image,
    pub seeds: Provenance,
}

pub fn simulate_case(
    h: &Projector,
    phantom: &PhantomSpec,
    metal: &MetalSpec,
    corruption: &CorruptionSpec,
    fbp_cfg: &FbpConfig,
) -> Result<Case> {
    let geo = h.geometry();
    let m = make_metal(metal, geo)?;
    let x_gt = tissue_fill(&make_phantom(phantom, geo)?, &m)?;
    let c = corrupt(h, &x_gt, &m, metal.metal_mu, corruption, fbp_cfg)?;
    let tr = metal_trace(h, &m)?;
    let seeds = Provenance::from([
        ("phantom".to_string(), phantom.seed),
        ("metal".to_string(), metal.seed),
        ("noise".to_string(), corruption.seed),
    ]);
    Ok(Case {
        x_gt,
        m,
        tr,
        y: c.y,
        y_gt: c.y_gt,
        x_ma: c.x_ma,
        seeds,
    })
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(Projector, Case)> {
    cfg.validate()?;
    let h = Projector::new(&cfg.geometry.to_geometry()?)?;
    let (phantom, metal, corruption) = cfg.seeded();
    let mut case = simulate_case(&h, &phantom, &metal, &corruption, &cfg.fbp)?;
    case.seeds.insert("global".into(), cfg.seed);
    Ok((h, case))
}

fn subset(seeds: &Provenance, keys: &[&str]) -> Provenance {
    seeds
        .iter()
        .filter(|(k, _)| k.as_str() == "global" || keys.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), *v))
        .collect()
}

/// Writes the case rasters and the resolved config into `dir`.
pub fn write_case(dir: &Path, case: &Case, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = &case.seeds;
    let scene = subset(s, &["phantom", "metal"]);
    io::write_image(&dir.join(X_GT), &case.x_gt, RasterKind::Image, &scene)?;
    io::write_image(&dir.join(MASK), &case.m, RasterKind::Mask, &subset(s, &["metal"]))?;
    io::write_sinogram(&dir.join(Y), &case.y, RasterKind::Sinogram, s)?;
    io::write_sinogram(&dir.join(Y_GT), &case.y_gt, RasterKind::Sinogram, &scene)?;
    io::write_sinogram(&dir.join(TRACE), &case.tr, RasterKind::Trace, &subset(s, &["metal"]))?;
    io::write_image(&dir.join(X_MA), &case.x_ma, RasterKind::Image, s)?;
    io::write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fbp,
    Li,
    Nmar,
    Dudo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::Li => "li",
            Method::Nmar => "nmar",
            Method::Dudo => "dudo",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub x: Image,
    /// Restored sinogram, dudo only.
    pub s_n: Option<Sinogram>,
    /// States `0..=N` when stage recording is on, dudo only.
    pub stages: Vec<SolverState>,
}

/// Runs `method` on `y`. `x_ma` is needed by NMAR only and is computed by
/// FBP when absent.
pub fn reconstruct(
    method: Method,
    h: &Projector,
    y: &Sinogram,
    tr: &Sinogram,
    x_ma: Option<&Image>,
    fbp_cfg: &FbpConfig,
    nmar: &NmarConfig,
    solver: &SolverConfig,
) -> Result<Reconstruction> {
    let plain = |x| Reconstruction {
        x,
        s_n: None,
        stages: Vec::new(),
    };
    Ok(match method {
        Method::Fbp => plain(fbp::reconstruct_with(h, y, fbp_cfg)?),
        Method::Li => plain(li_reconstruct(h, y, tr, fbp_cfg)?),
        Method::Nmar => {
            let owned;
            let x_ma = match x_ma {
                Some(x) => x,
                None => {
                    owned = fbp::reconstruct_with(h, y, fbp_cfg)?;
                    &owned
                }
            };
            plain(nmar_reconstruct(h, y, tr, x_ma, nmar, fbp_cfg)?)
        }
        Method::Dudo => {
            let out = solve(h, y, tr, solver, fbp_cfg)?;
            Reconstruction {
                x: out.x,
                s_n: Some(out.s),
                stages: out.stages,
            }
        }
    })
}

/// Writes `stage_NN_{st,s,x}` rasters for every recorded state.
pub fn write_stages(dir: &Path, stages: &[SolverState], seeds: &Provenance) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for st in stages {
        let stem = format!("stage_{:02}", st.stage);
        io::write_sinogram(&dir.join(format!("{stem}_st")), &st.s_tilde, RasterKind::Sinogram, seeds)?;
        io::write_sinogram(&dir.join(format!("{stem}_s")), &st.sinogram(), RasterKind::Sinogram, seeds)?;
        io::write_image(&dir.join(format!("{stem}_x")), &st.x, RasterKind::Image, seeds)?;
    }
    Ok(())
}

/// Renders every raster in a stage directory to a PGM beside it. Images use
/// the HU window, sinograms their own range. Returns the files written.
pub fn render_stages(dir: &Path, hu: &crate::types::HuMap, window_hu: (f64, f64)) -> Result<Vec<std::path::PathBuf>> {
    let mut stems: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    stems.sort();
    let mut written = Vec::new();
    for p in stems {
        let out = p.with_extension("pgm");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let side: io::Sidecar = toml::from_str(&text).map_err(|e| Error::Sidecar {
            path: p.clone(),
            message: e.to_string(),
        })?;
        match side.raster_kind()? {
            RasterKind::Image | RasterKind::Mask => {
                let (img, _) = io::read_image(&p)?;
                io::export_pgm(&img, window_hu, hu, &out)?;
            }
            RasterKind::Sinogram | RasterKind::Trace => {
                let (s, _) = io::read_sinogram(&p)?;
                io::export_sinogram_pgm(&s, &out)?;
            }
        }
        written.push(out);
    }
    Ok(written)
}

/// Implant areas at the 416×416 reference size, largest first.
pub const REFERENCE_SIZES: [f64; 10] = [2061.0, 890.0, 881.0, 451.0, 254.0, 124.0, 118.0, 112.0, 53.0, 35.0];

/// Area thresholds at the reference size separating the five size groups;
/// each group holds two adjacent reference sizes.
pub const REFERENCE_GROUP_BOUNDS: [f64; 4] = [885.5, 352.5, 121.0, 82.5];

pub const BENCH_METHODS: [&str; 4] = ["input", "li", "nmar", "dudo"];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub n_cases: usize,
    pub size: usize,
    pub n_views: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            n_cases: 10,
            size: 256,
            n_views: 320,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub case: usize,
    pub area: usize,
    pub group: usize,
    /// One report per entry of [`BENCH_METHODS`].
    pub reports: Vec<MetricReport>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub spec: BenchSpec,
    /// Group thresholds in pixels at the bench size.
    pub bounds: [f64; 4],
    pub cases: Vec<CaseResult>,
}

fn area_scale(size: usize) -> f64 {
    (size as f64 / 416.0).powi(2)
}

/// Group index 0 (largest) to 4 (smallest) for an implant area in pixels.
pub fn size_group(area: f64, bounds: &[f64; 4]) -> usize {
    bounds.iter().take_while(|&&b| area <= b).count()
}

/// Specs for bench case `k`: a random-ellipse phantom and a single implant of
/// a reference size, cycling through the shapes.
pub fn bench_case_specs(cfg: &ExperimentConfig, spec: &BenchSpec, k: usize) -> (PhantomSpec, MetalSpec, CorruptionSpec) {
    let shapes = [MetalShape::Disc, MetalShape::Capsule, MetalShape::Polygon];
    let area = (REFERENCE_SIZES[k % REFERENCE_SIZES.len()] * area_scale(spec.size)).round();
    let k = k as u64;
    let phantom = PhantomSpec {
        kind: PhantomKind::RandomEllipses,
        seed: derive_seed(cfg.seed, "bench-phantom", k),
        ..cfg.phantom.clone()
    };
    let metal = MetalSpec {
        seed: derive_seed(cfg.seed, "bench-metal", k),
        n_implants: 1,
        shapes: vec![shapes[k as usize % shapes.len()]],
        size_range: [area, area],
        ..cfg.metal.clone()
    };
    let corruption = CorruptionSpec {
        seed: derive_seed(cfg.seed, "bench-noise", k),
        ..cfg.corruption.clone()
    };
    (phantom, metal, corruption)
}

/// Runs all bench methods on one case.
pub fn bench_case(h: &Projector, cfg: &ExperimentConfig, spec: &BenchSpec, k: usize, solver: &SolverConfig) -> Result<CaseResult> {
    let (phantom, metal, corruption) = bench_case_specs(cfg, spec, k);
    let case = simulate_case(h, &phantom, &metal, &corruption, &cfg.fbp)?;
    let x_li = li_reconstruct(h, &case.y, &case.tr, &cfg.fbp)?;
    let x_nmar = nmar_reconstruct(h, &case.y, &case.tr, &case.x_ma, &cfg.nmar, &cfg.fbp)?;
    let x_dudo = solve(h, &case.y, &case.tr, solver, &cfg.fbp)?.x;
    let reports = [&case.x_ma, &x_li, &x_nmar, &x_dudo]
        .iter()
        .map(|x| evaluate(x, &case.x_gt, &case.m))
        .collect::<Result<Vec<_>>>()?;
    let area = case.m.data().iter().filter(|&&v| v == 1.0).count();
    let bounds = REFERENCE_GROUP_BOUNDS.map(|b| b * area_scale(spec.size));
    Ok(CaseResult {
        case: k,
        area,
        group: size_group(area as f64, &bounds),
        reports,
    })
}

/// Runs the seeded bench. Cases run in parallel; results are in case order.
pub fn bench(cfg: &ExperimentConfig, spec: &BenchSpec) -> Result<BenchReport> {
    cfg.validate()?;
    if spec.n_cases == 0 {
        return Err(Error::InvalidConfig("bench needs at least one case".into()));
    }
    let geo = Geometry::square(spec.size, spec.n_views)?;
    let h = Projector::new(&geo)?;
    let mut solver = cfg.solver.clone();
    solver.record_stages = false;
    if solver.eta2 == StepSize::Auto {
        solver.eta2 = StepSize::Fixed(1.0 / h.op_norm_sq(solver.power_iters, solver.power_seed)?);
    }
    let cases = (0..spec.n_cases)
        .into_par_iter()
        .map(|k| bench_case(&h, cfg, spec, k, &solver))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        spec: spec.clone(),
        bounds: REFERENCE_GROUP_BOUNDS.map(|b| b * area_scale(spec.size)),
        cases,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub const BENCH_COLUMNS: &str = "method,group,n_cases,psnr_mean,psnr_std,ssim_mean,ssim_std";

impl BenchReport {
    /// Aggregate table: five size groups (largest metal first) and an
    /// average row per method. Standard deviations are population values.
    pub fn to_csv(&self) -> String {
        let b = self.bounds;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# bench: {} cases, {}x{} image, {} views, one implant per case",
            self.spec.n_cases, self.spec.size, self.spec.size, self.spec.n_views
        );
        let _ = writeln!(
            out,
            "# size groups by implant area in pixels: g1 > {:.2} >= g2 > {:.2} >= g3 > {:.2} >= g4 > {:.2} >= g5",
            b[0], b[1], b[2], b[3]
        );
        let _ = writeln!(
            out,
            "# psnr over non-metal pixels with peak max(x_gt), capped at 99.99 dB; ssim with x_gt copied into metal pixels; std is population std"
        );
        let _ = writeln!(out, "{BENCH_COLUMNS}");
        for (mi, method) in BENCH_METHODS.iter().enumerate() {
            let mut row = |label: &str, sel: &[&CaseResult]| {
                let p: Vec<f64> = sel.iter().map(|c| psnr_for_csv(c.reports[mi].psnr_db)).collect();
                let s: Vec<f64> = sel.iter().map(|c| c.reports[mi].ssim).collect();
                let (pm, ps) = mean_std(&p);
                let (sm, ss) = mean_std(&s);
                let _ = writeln!(out, "{method},{label},{},{pm:.4},{ps:.4},{sm:.6},{ss:.6}", sel.len());
            };
            for g in 0..5 {
                let sel: Vec<&CaseResult> = self.cases.iter().filter(|c| c.group == g).collect();
                row(&format!("g{}", g + 1), &sel);
            }
            let all: Vec<&CaseResult> = self.cases.iter().collect();
            row("average", &all);
        }
        out
    }

    /// One row per case and method.
    pub fn cases_csv(&self) -> String {
        let mut out = String::from("case,area,group,method,psnr,ssim,masked_mse\n");
        for c in &self.cases {
            for (mi, method) in BENCH_METHODS.iter().enumerate() {
                let r = &c.reports[mi];
                let _ = writeln!(
                    out,
                    "{},{},g{},{method},{:.4},{:.6},{:.6e}",
                    c.case,
                    c.area,
                    c.group + 1,
                    psnr_for_csv(r.psnr_db),
                    r.ssim,
                    r.masked_mse
                );
            }
        }
        out
    }

    /// Non-metal PSNR of `method` for every case.
    pub fn psnr(&self, method: &str) -> Option<Vec<f64>> {
        let mi = BENCH_METHODS.iter().position(|m| *m == method)?;
        Some(self.cases.iter().map(|c| c.reports[mi].psnr_db).collect())
    }
}

pub const EVAL_COLUMNS: &str = "psnr_db,ssim,masked_mse,mask_excluded_pixels";

pub fn eval_row(r: &MetricReport) -> String {
    format!(
        "{:.4},{:.6},{:.6e},{}",
        psnr_for_csv(r.psnr_db),
        r.ssim,
        r.masked_mse,
        r.mask_excluded_pixels
    )
}
