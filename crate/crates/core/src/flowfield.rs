//! Analytic vortex flow and the velocity-dependent dispersion tensor.
//!
//! The velocity field is derived from a periodically switching stream
//! function. Within the first half of every period `T` the perturbation
//! acts along `y`, within the second half along `x`. The flow is never
//! used for advection; it only shapes the anisotropic dispersion tensor
//!
//! ```text
//! D = D_m I + a_T |v| I + (a_L - a_T) / |v| (v ⊗ v)
//! ```

use std::f64::consts::PI;

use thiserror::Error;

/// A point in the square domain `[0, L]²`.
pub type Point = [f64; 2];

/// Below this speed the rank-one term of the dispersion tensor is dropped.
const ZERO_SPEED: f64 = 1e-14;

/// Phases within this many cycles of a whole number snap onto it, so that
/// times sampled on a step grid (`n * dt`) are not pushed into the wrong
/// half-period by representation error.
const PHASE_SNAP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("flow parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("dispersivities must satisfy alpha_l >= alpha_t >= 0, got alpha_l = {alpha_l}, alpha_t = {alpha_t}")]
    Dispersivity { alpha_l: f64, alpha_t: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<f64, FlowError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(FlowError::NonPositive { name, value })
    }
}

/// Characteristic scales of the switching vortex flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    /// Dimensionless wavenumber `κ_f L`.
    pub kappa_fl: f64,
    /// Perturbation amplitude `v0`.
    pub v0: f64,
    /// Oscillation period `T`.
    pub period: f64,
    /// Side length `L` of the square domain.
    pub domain_length: f64,
}

impl FlowConfig {
    pub fn new(kappa_fl: f64, v0: f64, period: f64, domain_length: f64) -> Result<Self, FlowError> {
        let cfg = Self { kappa_fl, v0, period, domain_length };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        positive("kappa_fl", self.kappa_fl)?;
        positive("period", self.period)?;
        positive("domain_length", self.domain_length)?;
        if !self.v0.is_finite() {
            return Err(FlowError::NonPositive { name: "v0", value: self.v0 });
        }
        Ok(())
    }

    /// Wavenumber `κ_f = κ_f L / L`.
    pub fn kappa_f(&self) -> f64 {
        self.kappa_fl / self.domain_length
    }

    /// Reaction-tank defaults with the given wavenumber scale.
    pub fn reaction_tank(kappa_fl: f64) -> Self {
        Self { kappa_fl, v0: 0.1, period: 1e-4, domain_length: 1.0 }
    }
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self::reaction_tank(2.0)
    }
}

/// Molecular diffusivity and dispersivities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionConfig {
    pub molecular: f64,
    pub alpha_l: f64,
    pub alpha_t: f64,
}

impl DispersionConfig {
    pub fn new(molecular: f64, alpha_l: f64, alpha_t: f64) -> Result<Self, FlowError> {
        let cfg = Self { molecular, alpha_l, alpha_t };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        positive("d_m", self.molecular)?;
        if !(self.alpha_t >= 0.0 && self.alpha_l >= self.alpha_t && self.alpha_l.is_finite()) {
            return Err(FlowError::Dispersivity { alpha_l: self.alpha_l, alpha_t: self.alpha_t });
        }
        Ok(())
    }
}

impl Default for DispersionConfig {
    /// `D_m = 1e-3`, `α_L / α_T = 1e4` with `α_L = 1`.
    fn default() -> Self {
        Self { molecular: 1e-3, alpha_l: 1.0, alpha_t: 1e-4 }
    }
}

/// Symmetric 2×2 tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor2x2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Tensor2x2 {
    pub fn isotropic(value: f64) -> Self {
        Self { xx: value, xy: 0.0, yy: value }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { xx: self.xx * factor, xy: self.xy * factor, yy: self.yy * factor }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let radius = half_diff.hypot(self.xy);
        [mean - radius, mean + radius]
    }

    /// `gᵀ D h` for two vectors.
    #[inline]
    pub fn bilinear(&self, g: [f64; 2], h: [f64; 2]) -> f64 {
        g[0] * (self.xx * h[0] + self.xy * h[1]) + g[1] * (self.xy * h[0] + self.yy * h[1])
    }
}

/// Which half of the flow period is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowBranch {
    /// `νT ≤ t < (ν + ½)T`: perturbation along `y`.
    First,
    /// `(ν + ½)T ≤ t < (ν + 1)T`: perturbation along `x`.
    Second,
}

/// Fractional position of `t` within its flow period, in `[0, 1)`.
pub fn period_phase(t: f64, cfg: &FlowConfig) -> f64 {
    let mut phase = t / cfg.period;
    let nearest = phase.round();
    if (phase - nearest).abs() <= PHASE_SNAP {
        phase = nearest;
    }
    phase - phase.floor()
}

pub fn branch(t: f64, cfg: &FlowConfig) -> FlowBranch {
    if period_phase(t, cfg) < 0.5 {
        FlowBranch::First
    } else {
        FlowBranch::Second
    }
}

/// Stream function `ψ(x, t)`.
pub fn stream_function(p: Point, t: f64, cfg: &FlowConfig) -> f64 {
    let k = 2.0 * PI * cfg.kappa_f();
    let (x, y) = (p[0], p[1]);
    let base = (k * x).sin() - (k * y).sin();
    let perturbation = match branch(t, cfg) {
        FlowBranch::First => cfg.v0 * (k * y).cos(),
        FlowBranch::Second => -cfg.v0 * (k * x).cos(),
    };
    (base + perturbation) / k
}

/// Velocity `(−∂ψ/∂y, ∂ψ/∂x)` in closed form.
pub fn velocity(p: Point, t: f64, cfg: &FlowConfig) -> [f64; 2] {
    velocity_on_branch(p, branch(t, cfg), cfg)
}

pub fn velocity_on_branch(p: Point, branch: FlowBranch, cfg: &FlowConfig) -> [f64; 2] {
    let k = 2.0 * PI * cfg.kappa_f();
    let (x, y) = (p[0], p[1]);
    match branch {
        FlowBranch::First => [(k * y).cos() + cfg.v0 * (k * y).sin(), (k * x).cos()],
        FlowBranch::Second => [(k * y).cos(), (k * x).cos() + cfg.v0 * (k * x).sin()],
    }
}

/// Dispersion tensor for a given velocity.
pub fn dispersion_from_velocity(v: [f64; 2], dcfg: &DispersionConfig) -> Tensor2x2 {
    let speed = v[0].hypot(v[1]);
    let iso = dcfg.molecular + dcfg.alpha_t * speed;
    if speed < ZERO_SPEED {
        return Tensor2x2::isotropic(iso);
    }
    let c = (dcfg.alpha_l - dcfg.alpha_t) / speed;
    Tensor2x2 { xx: iso + c * v[0] * v[0], xy: c * v[0] * v[1], yy: iso + c * v[1] * v[1] }
}

pub fn dispersion_tensor(p: Point, t: f64, fcfg: &FlowConfig, dcfg: &DispersionConfig) -> Tensor2x2 {
    dispersion_from_velocity(velocity(p, t, fcfg), dcfg)
}
