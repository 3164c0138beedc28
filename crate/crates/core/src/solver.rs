//! Alternating proximal-gradient solver for the dual-domain model
//!
//! ```text
//! min_{S̃, X}  ½‖P X − Ỹ⊙S̃‖² + ½α‖(1 − Tr)⊙(Ỹ⊙S̃ − Y)‖² + g₁(S̃) + g₂(X)
//! ```
//!
//! where `Ỹ` is the projection of a prior image and `S = Ỹ⊙S̃` the restored
//! sinogram. Each stage takes one proximal gradient step in `S̃` followed by
//! one in `X`.

use serde::{Deserialize, Serialize};

use crate::classical;
use crate::error::{Error, Result};
use crate::fbp::FbpConfig;
use crate::projector::Projector;
use crate::prox::ProxSpec;
use crate::types::{Image, Sinogram};

/// Relative clamp applied to the prior projection.
pub const PRIOR_EPS_REL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepRepr", into = "StepRepr")]
pub enum StepSize {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<StepRepr> for StepSize {
    type Error = String;

    fn try_from(r: StepRepr) -> std::result::Result<Self, String> {
        match r {
            StepRepr::Value(v) => Ok(StepSize::Fixed(v)),
            StepRepr::Name(s) if s == "auto" => Ok(StepSize::Auto),
            StepRepr::Name(s) => Err(format!("step size must be a number or \"auto\", got {s:?}")),
        }
    }
}

impl From<StepSize> for StepRepr {
    fn from(s: StepSize) -> Self {
        match s {
            StepSize::Auto => StepRepr::Name("auto".into()),
            StepSize::Fixed(v) => StepRepr::Value(v),
        }
    }
}

/// Starting normalized sinogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SInit {
    /// `S̃₀ = Y/Ỹ`, metal trace included.
    #[default]
    Ratio,
    /// `Y/Ỹ` with the traced rays linearly inpainted.
    InpaintedRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub n_stages: usize,
    pub alpha: f64,
    pub eta1: StepSize,
    pub eta2: StepSize,
    pub prox_s: ProxSpec,
    pub prox_x: ProxSpec,
    pub s_init: SInit,
    pub record_stages: bool,
    /// Power iterations used to resolve an automatic `eta2`.
    pub power_iters: usize,
    pub power_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_stages: 10,
            alpha: 1.0,
            eta1: StepSize::Auto,
            eta2: StepSize::Auto,
            prox_s: ProxSpec::soft_threshold(0.001),
            prox_x: ProxSpec::tv(0.002),
            s_init: SInit::Ratio,
            record_stages: false,
            power_iters: 30,
            power_seed: 0,
        }
    }
}

impl SolverConfig {
    /// Plain gradient steps: identity proxes with automatic step sizes.
    pub fn unregularized(n_stages: usize) -> Self {
        SolverConfig {
            n_stages,
            prox_s: ProxSpec::identity(),
            prox_x: ProxSpec::identity(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stages == 0 {
            return Err(Error::InvalidConfig("n_stages must be >= 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        for (name, s) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if let StepSize::Fixed(v) = s {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if self.eta2 == StepSize::Auto && self.power_iters == 0 {
            return Err(Error::InvalidConfig("power_iters must be >= 1 for automatic eta2".into()));
        }
        self.prox_s.validate()?;
        self.prox_x.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steps {
    pub eta1: f64,
    pub eta2: f64,
}

/// Resolves automatic step sizes: `η₁ = 1/((1+α)·max Ỹ²)` and
/// `η₂ = 1/‖P‖²`.
pub fn resolve_steps(h: &Projector, y_tilde: &Sinogram, cfg: &SolverConfig) -> Result<Steps> {
    cfg.validate()?;
    let eta1 = match cfg.eta1 {
        StepSize::Fixed(v) => v,
        StepSize::Auto => {
            let m = y_tilde.max();
            1.0 / ((1.0 + cfg.alpha) * m * m)
        }
    };
    let eta2 = match cfg.eta2 {
        StepSize::Fixed(v) => v,
        StepSize::Auto => 1.0 / h.op_norm_sq(cfg.power_iters, cfg.power_seed)?,
    };
    if !(eta1.is_finite() && eta1 > 0.0 && eta2.is_finite() && eta2 > 0.0) {
        return Err(Error::InvalidConfig(format!("step sizes resolved to eta1={eta1}, eta2={eta2}")));
    }
    Ok(Steps { eta1, eta2 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub s_tilde: Sinogram,
    pub x: Image,
    pub y_tilde: Sinogram,
    /// `P X`, kept in step with `x`.
    pub px: Sinogram,
    pub stage: usize,
    /// Smooth part of the objective.
    pub objective: f64,
}

impl SolverState {
    /// Restored sinogram `Ỹ⊙S̃`.
    pub fn sinogram(&self) -> Sinogram {
        let data = self.y_tilde.data().iter().zip(self.s_tilde.data()).map(|(a, b)| a * b).collect();
        self.y_tilde.with_data_unchecked(data)
    }
}

/// Clamped projection of a prior image, `max(P X̃, ε)` with
/// `ε = 1e-6·max(P X̃)`.
pub fn prior_projection(h: &Projector, x_prior: &Image) -> Result<Sinogram> {
    let raw = h.forward(x_prior)?;
    let eps = prior_eps(raw.max());
    raw.map(|v| v.max(eps))
}

fn prior_eps(max_projection: f64) -> f64 {
    let eps = PRIOR_EPS_REL * max_projection;
    if eps > 0.0 { eps } else { PRIOR_EPS_REL }
}

/// LI reconstruction clipped at zero, and its clamped projection.
pub fn make_prior(h: &Projector, y: &Sinogram, tr: &Sinogram, fbp_cfg: &FbpConfig) -> Result<(Image, Sinogram)> {
    let x_prior = classical::li_reconstruct(h, y, tr, fbp_cfg)?.map(|v| v.max(0.0))?;
    let y_tilde = prior_projection(h, &x_prior)?;
    Ok((x_prior, y_tilde))
}

/// Smooth objective `½‖PX − ỸS̃‖² + ½α‖(1−Tr)(ỸS̃ − Y)‖²`.
pub fn objective(state: &SolverState, y: &Sinogram, tr: &Sinogram, alpha: f64) -> f64 {
    let mut fit = 0.0;
    let mut data = 0.0;
    for i in 0..y.data().len() {
        let s = state.y_tilde.data()[i] * state.s_tilde.data()[i];
        let r = state.px.data()[i] - s;
        fit += r * r;
        if tr.data()[i] == 0.0 {
            let d = s - y.data()[i];
            data += d * d;
        }
    }
    0.5 * fit + 0.5 * alpha * data
}

fn check_finite(state: &SolverState) -> Result<()> {
    let bad = |d: &[f64]| d.iter().any(|v| !v.is_finite());
    let field = if bad(state.s_tilde.data()) {
        "s_tilde"
    } else if bad(state.x.data()) {
        "x"
    } else if !state.objective.is_finite() {
        "objective"
    } else {
        return Ok(());
    };
    Err(Error::NonFiniteState { stage: state.stage, field })
}

/// Stage-0 state: `X₀ = prox_x(X̃)` and `S̃₀ = Y/Ỹ`. Rays where both the
/// prior projection and the measurement are below the clamp start at 1.
pub fn init_state(
    h: &Projector,
    y: &Sinogram,
    tr: &Sinogram,
    y_tilde: &Sinogram,
    x_prior: &Image,
    cfg: &SolverConfig,
) -> Result<SolverState> {
    y.same_shape(tr)?;
    y.same_shape(y_tilde)?;
    if y_tilde.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidConfig("normalization coefficient must be positive".into()));
    }
    let eps = prior_eps(y_tilde.max());
    let s0: Vec<f64> = y
        .data()
        .iter()
        .zip(y_tilde.data())
        .map(|(&yv, &t)| if t <= eps && yv.abs() <= eps { 1.0 } else { yv / t })
        .collect();
    let s0 = match cfg.s_init {
        SInit::Ratio => y.with_data_unchecked(s0),
        SInit::InpaintedRatio => classical::li_inpaint(&y.with_data_unchecked(s0), tr)?,
    };
    let x0 = cfg.prox_x.apply(x_prior.data(), x_prior.height(), x_prior.width());
    let x = x_prior.with_data(x0)?;
    let px = h.forward(&x)?;
    let mut state = SolverState {
        s_tilde: s0,
        x,
        y_tilde: y_tilde.clone(),
        px,
        stage: 0,
        objective: 0.0,
    };
    state.objective = objective(&state, y, tr, cfg.alpha);
    check_finite(&state)?;
    Ok(state)
}

/// `∇_S̃ f = Ỹ(ỸS̃ − PX) + α(1−Tr)Ỹ(ỸS̃ − Y)`.
pub fn grad_f_s(state: &SolverState, y: &Sinogram, tr: &Sinogram, alpha: f64) -> Sinogram {
    let data = (0..y.data().len())
        .map(|i| {
            let t = state.y_tilde.data()[i];
            let s = t * state.s_tilde.data()[i];
            let mut g = t * (s - state.px.data()[i]);
            if tr.data()[i] == 0.0 {
                g += alpha * t * (s - y.data()[i]);
            }
            g
        })
        .collect();
    y.with_data_unchecked(data)
}

/// `Pᵀ(PX − ỸS̃)`.
pub fn grad_x(h: &Projector, state: &SolverState) -> Image {
    let resid: Vec<f64> = state
        .px
        .data()
        .iter()
        .zip(state.y_tilde.data().iter().zip(state.s_tilde.data()))
        .map(|(p, (t, s))| p - t * s)
        .collect();
    state.x.with_data_unchecked(h.adjoint_raw(&resid))
}

pub fn step_s(state: &SolverState, y: &Sinogram, tr: &Sinogram, cfg: &SolverConfig, steps: &Steps) -> Result<SolverState> {
    let g = grad_f_s(state, y, tr, cfg.alpha);
    let s_hat: Vec<f64> = state
        .s_tilde
        .data()
        .iter()
        .zip(g.data())
        .map(|(s, g)| s - steps.eta1 * g)
        .collect();
    let s_new = cfg.prox_s.apply(&s_hat, y.n_bins(), y.n_views());
    let mut next = SolverState {
        s_tilde: y.with_data_unchecked(s_new),
        ..state.clone()
    };
    next.objective = objective(&next, y, tr, cfg.alpha);
    check_finite(&next)?;
    Ok(next)
}

pub fn step_x(
    h: &Projector,
    state: &SolverState,
    y: &Sinogram,
    tr: &Sinogram,
    cfg: &SolverConfig,
    steps: &Steps,
) -> Result<SolverState> {
    let g = grad_x(h, state);
    let x_hat: Vec<f64> = state.x.data().iter().zip(g.data()).map(|(x, g)| x - steps.eta2 * g).collect();
    let x_new = state.x.with_data_unchecked(cfg.prox_x.apply(&x_hat, state.x.height(), state.x.width()));
    let px = state.px.with_data_unchecked(h.forward_raw(x_new.data()));
    let mut next = SolverState {
        x: x_new,
        px,
        stage: state.stage + 1,
        ..state.clone()
    };
    next.objective = objective(&next, y, tr, cfg.alpha);
    check_finite(&next)?;
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub x: Image,
    /// Final restored sinogram `Ỹ⊙S̃_N`.
    pub s: Sinogram,
    pub final_state: SolverState,
    /// States `0..=N` when `record_stages` is set.
    pub stages: Vec<SolverState>,
    pub steps: Steps,
}

/// Runs the solver from an explicit prior image.
pub fn solve_with_prior(
    h: &Projector,
    y: &Sinogram,
    tr: &Sinogram,
    x_prior: &Image,
    cfg: &SolverConfig,
) -> Result<SolveOutput> {
    cfg.validate()?;
    y.matches(h.geometry())?;
    tr.matches(h.geometry())?;
    let y_tilde = prior_projection(h, x_prior)?;
    let steps = resolve_steps(h, &y_tilde, cfg)?;
    let mut state = init_state(h, y, tr, &y_tilde, x_prior, cfg)?;
    let mut stages = Vec::new();
    if cfg.record_stages {
        stages.push(state.clone());
    }
    for _ in 0..cfg.n_stages {
        let half = step_s(&state, y, tr, cfg, &steps)?;
        state = step_x(h, &half, y, tr, cfg, &steps)?;
        if cfg.record_stages {
            stages.push(state.clone());
        }
    }
    Ok(SolveOutput {
        x: state.x.clone(),
        s: state.sinogram(),
        final_state: state,
        stages,
        steps,
    })
}

/// Runs the solver with the LI prior.
pub fn solve(h: &Projector, y: &Sinogram, tr: &Sinogram, cfg: &SolverConfig, fbp_cfg: &FbpConfig) -> Result<SolveOutput> {
    let (x_prior, _) = make_prior(h, y, tr, fbp_cfg)?;
    solve_with_prior(h, y, tr, &x_prior, cfg)
}

/// Population variance of `S̃` over traced rays.
pub fn trace_variance(s_tilde: &Sinogram, tr: &Sinogram) -> f64 {
    let vals: Vec<f64> = s_tilde
        .data()
        .iter()
        .zip(tr.data())
        .filter(|(_, &t)| t > 0.5)
        .map(|(&v, _)| v)
        .collect();
    if vals.is_empty() {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
}
