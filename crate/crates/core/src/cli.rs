//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io::{self, RasterKind, DEFAULT_HU_WINDOW};
use crate::metrics::evaluate;
use crate::pipeline::{self, BenchSpec, Method};
use crate::projector::Projector;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dudomar", version, about = "Dual-domain CT metal artifact reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Fbp,
    Li,
    Nmar,
    Dudo,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Fbp => Method::Fbp,
            MethodArg::Li => Method::Li,
            MethodArg::Nmar => Method::Nmar,
            MethodArg::Dudo => Method::Dudo,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a metal-corrupted scan and write x_gt, m, y, y_gt, tr, x_ma.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write x_gt and x_ma as PGM.
        #[arg(long)]
        pgm: bool,
    },
    /// Reconstruct a simulated scan.
    Reconstruct {
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Directory holding y and tr (and x_ma for nmar).
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the config saved in the input directory.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output raster stem; defaults to `<input>/x_<method>`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Record every dudo stage into this directory.
        #[arg(long)]
        stages: Option<PathBuf>,
        #[arg(long)]
        pgm: bool,
    },
    /// Score a reconstruction against ground truth outside the metal mask.
    Evaluate {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the seeded bench for all methods and write the aggregate CSV.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        cases: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 320)]
        views: usize,
        /// Aggregate CSV; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Per-case CSV.
        #[arg(long)]
        per_case: Option<PathBuf>,
    },
    /// Render stage dumps to PGM.
    Stages {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HU_WINDOW.0, allow_negative_numbers = true)]
        window_lo: f64,
        #[arg(long, default_value_t = DEFAULT_HU_WINDOW.1, allow_negative_numbers = true)]
        window_hi: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidDimension { .. }
        | Error::ShapeMismatch { .. }
        | Error::InvalidConfig(_)
        | Error::ConfigParse(_)
        | Error::TruncatedPayload { .. }
        | Error::UnknownKind(_)
        | Error::Sidecar { .. } => EXIT_VALIDATION,
        Error::NonFinite(_)
        | Error::FullyTracedView { .. }
        | Error::PlacementFailed { .. }
        | Error::EmptySupport
        | Error::NonFiniteState { .. }
        | Error::Io { .. } => EXIT_RUNTIME,
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => io::write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { config, output, pgm } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            let (_, case) = pipeline::simulate(&cfg)?;
            pipeline::write_case(&cfg.output_dir, &case, &cfg)?;
            if pgm {
                let d = &cfg.output_dir;
                io::export_pgm(&case.x_gt, DEFAULT_HU_WINDOW, &cfg.hu, &d.join("x_gt.pgm"))?;
                io::export_pgm(&case.x_ma, DEFAULT_HU_WINDOW, &cfg.hu, &d.join("x_ma.pgm"))?;
            }
            eprintln!("wrote simulation to {}", cfg.output_dir.display());
        }
        Command::Reconstruct {
            method,
            input,
            config,
            output,
            stages,
            pgm,
        } => {
            let saved = input.join(pipeline::CONFIG_FILE);
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None if saved.exists() => ExperimentConfig::load(&saved)?,
                None => ExperimentConfig::default(),
            };
            let method = Method::from(method);
            let h = Projector::new(&cfg.geometry.to_geometry()?)?;
            let (y, y_side) = io::read_sinogram(&input.join(pipeline::Y))?;
            let (tr, tr_side) = io::read_sinogram(&input.join(pipeline::TRACE))?;
            if tr_side.raster_kind()? != RasterKind::Trace {
                return Err(Error::InvalidConfig("tr is not a trace raster".into()));
            }
            y.matches(h.geometry())?;
            tr.matches(h.geometry())?;
            let x_ma = match method {
                Method::Nmar if input.join(format!("{}.raw", pipeline::X_MA)).exists() => {
                    Some(io::read_image(&input.join(pipeline::X_MA))?.0)
                }
                _ => None,
            };
            let mut solver = cfg.solver.clone();
            solver.record_stages |= stages.is_some();
            let rec = pipeline::reconstruct(method, &h, &y, &tr, x_ma.as_ref(), &cfg.fbp, &cfg.nmar, &solver)?;
            let out = output.unwrap_or_else(|| input.join(format!("x_{}", method.as_str())));
            let seeds = y_side.seeds;
            io::write_image(&out, &rec.x, RasterKind::Image, &seeds)?;
            if pgm {
                io::export_pgm(&rec.x, DEFAULT_HU_WINDOW, &cfg.hu, &out.with_extension("pgm"))?;
            }
            if let Some(s) = &rec.s_n {
                let stem = out.with_file_name(format!(
                    "{}_{}",
                    out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                    pipeline::S_N
                ));
                io::write_sinogram(&stem, s, RasterKind::Sinogram, &seeds)?;
            }
            if let Some(dir) = stages {
                pipeline::write_stages(&dir, &rec.stages, &seeds)?;
            }
            eprintln!("wrote {}", out.with_extension("raw").display());
        }
        Command::Evaluate { x, gt, mask, output } => {
            let (x, _) = io::read_image(&x)?;
            let (gt, _) = io::read_image(&gt)?;
            let (m, side) = io::read_image(&mask)?;
            if side.raster_kind()? != RasterKind::Mask {
                return Err(Error::InvalidConfig(format!("{} is not a mask raster", mask.display())));
            }
            let r = evaluate(&x, &gt, &m)?;
            let text = format!("{}\n{}\n", pipeline::EVAL_COLUMNS, pipeline::eval_row(&r));
            write_text(output.as_deref(), &text)?;
        }
        Command::Bench {
            config,
            cases,
            size,
            views,
            output,
            per_case,
        } => {
            let cfg = load_config(config.as_deref())?;
            let spec = BenchSpec {
                n_cases: cases,
                size,
                n_views: views,
            };
            let report = pipeline::bench(&cfg, &spec)?;
            write_text(output.as_deref(), &report.to_csv())?;
            if let Some(p) = per_case {
                io::write_atomic(&p, report.cases_csv().as_bytes())?;
            }
        }
        Command::Stages {
            dir,
            window_lo,
            window_hi,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let written = pipeline::render_stages(&dir, &cfg.hu, (window_lo, window_hi))?;
            eprintln!("rendered {} files in {}", written.len(), dir.display());
        }
    }
    Ok(())
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
