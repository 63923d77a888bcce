//! Euler–Maruyama integrators for the continuous-time surrogates of SGD:
//!
//! * homogenized SGD: dX = −γ d∇R dt + γ √I (∇ψ)ᵀ√K dB
//! * stochastic gradient flow: dX = −d∇R dt + √(γI) (∇ψ)ᵀ√K dB
//! * the non-diagonal SDE with diffusion γ(I·(∇ψ)ᵀK∇ψ + d∇R∇Rᵀ)^{1/2}
//!
//! Coefficients are evaluated at the pre-step state. In the diagonal
//! dynamics one Gaussian ξ_i drives both u_i and v_i.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::model::{psd_sqrt, risk_unchecked, Covariance, Iterate, ModelConfig, ProblemInstance};
use crate::rng::{self, Rng};
use crate::statistic::StatRegistry;
use crate::trajectory::{RecordGrid, Recorder, TrajectoryRecord};

pub const DEFAULT_DT: f64 = 1.0 / 256.0;
pub const MAX_DT: f64 = 1.0 / 16.0;
pub const NONDIAG_MAX_D: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    Hsgd,
    Sgf,
    Nondiag,
}

impl Dynamics {
    pub fn name(&self) -> &'static str {
        match self {
            Dynamics::Hsgd => "hsgd",
            Dynamics::Sgf => "sgf",
            Dynamics::Nondiag => "nondiag",
        }
    }
}

/// How the non-diagonal diffusion is applied to the Brownian increment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFactorization {
    /// √I·(∇ψ)ᵀK^{1/2}ξ₁ + √d·∇R·ξ₂ with ξ₁ ∈ ℝ^d, ξ₂ ∈ ℝ. Same Gaussian law
    /// as Σ^{1/2}ξ at O(d²) per step, since K^{1/2} is computed once.
    Factored,
    /// Σ^{1/2}ξ with ξ ∈ ℝ^{2d}, root by dense eigendecomposition each step.
    EigenSqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub dynamics: Dynamics,
    pub dt: f64,
    pub noise: NoiseFactorization,
}

impl SdeConfig {
    pub fn new(dynamics: Dynamics, dt: f64) -> Result<Self> {
        let c = SdeConfig { dynamics, dt, noise: NoiseFactorization::Factored };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= MAX_DT) {
            return Err(DlnError::Parameter(format!("dt must lie in (0, 1/16], got {}", self.dt)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdeState {
    pub n: u64,
    pub dt: f64,
    pub x: Iterate,
}

impl SdeState {
    pub fn new(x: Iterate, dt: f64) -> Self {
        SdeState { n: 0, dt, x }
    }

    pub fn time(&self) -> f64 {
        self.n as f64 * self.dt
    }
}

/// Shared coordinatewise E-M update for the diagonal dynamics:
/// Δu_i = −a·2sK_i e_i ∂_uψ_i dt + b·∂_uψ_i √K_i ξ_i √dt, same ξ_i for v_i.
/// Returns false if the pre-step risk is non-finite.
fn diagonal_step(state: &mut SdeState, config: &ModelConfig, k: &[f64], inst: &ProblemInstance, drift_scale: f64, noise_of_i: impl Fn(f64) -> f64, xi: &[f64]) -> bool {
    let x = &mut state.x;
    let r = risk_unchecked(config, inst, x);
    if !r.is_finite() {
        return false;
    }
    let noise = noise_of_i(4.0 * config.loss_scale * r) * state.dt.sqrt();
    let drift = drift_scale * 2.0 * config.loss_scale * state.dt;
    for i in 0..inst.d {
        let (gu, gv) = config.grad1(x.u[i], x.v[i]);
        let e = config.psi1(x.u[i], x.v[i]) - inst.beta_star[i];
        let c = -drift * k[i] * e + noise * k[i].sqrt() * xi[i];
        x.u[i] += c * gu;
        x.v[i] += c * gv;
    }
    state.n += 1;
    true
}

/// One homogenized-SGD step with standard normal drivers `xi` (length d).
pub fn hsgd_step(state: &mut SdeState, config: &ModelConfig, inst: &ProblemInstance, xi: &[f64]) -> Result<bool> {
    let k = inst.cov.require_diagonal()?;
    let gamma = inst.schedule.at(state.time());
    Ok(diagonal_step(state, config, k, inst, gamma, |i| gamma * i.sqrt(), xi))
}

/// One stochastic-gradient-flow step: γ-free drift, noise √(γI).
pub fn sgf_step(state: &mut SdeState, config: &ModelConfig, inst: &ProblemInstance, xi: &[f64]) -> Result<bool> {
    let k = inst.cov.require_diagonal()?;
    let gamma = inst.schedule.at(state.time());
    Ok(diagonal_step(state, config, k, inst, 1.0, |i| (gamma * i).sqrt(), xi))
}

/// Σ = I·(∇ψ)ᵀK∇ψ + d∇R∇Rᵀ on ℝ^{2d}, coordinates ordered (u, v).
pub fn diffusion_matrix(config: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> DMatrix<f64> {
    let d = inst.d;
    let e: Vec<f64> = (0..d).map(|i| config.psi1(x.u[i], x.v[i]) - inst.beta_star[i]).collect();
    let ke = inst.cov.apply(&e);
    let s = config.loss_scale;
    let noise = 4.0 * s * s * inst.cov.bilinear(&e, &e) / d as f64;
    let (gu, gv): (Vec<f64>, Vec<f64>) = (0..d).map(|i| config.grad1(x.u[i], x.v[i])).unzip();
    let jac: Vec<f64> = gu.iter().chain(&gv).copied().collect();
    let grad_r: Vec<f64> = (0..2 * d).map(|j| 2.0 * s / d as f64 * jac[j] * ke[j % d]).collect();
    DMatrix::from_fn(2 * d, 2 * d, |a, b| {
        noise * jac[a] * inst.cov_entry(a % d, b % d) * jac[b] + d as f64 * grad_r[a] * grad_r[b]
    })
}

impl ProblemInstance {
    #[inline]
    fn cov_entry(&self, i: usize, j: usize) -> f64 {
        match &self.cov {
            Covariance::Diagonal(k) => {
                if i == j {
                    k[i]
                } else {
                    0.0
                }
            }
            Covariance::Full(m) => m[(i, j)],
        }
    }
}

/// Precomputed pieces for the non-diagonal dynamics.
pub struct NondiagContext {
    root_k: DMatrix<f64>,
    pub method: NoiseFactorization,
}

impl NondiagContext {
    pub fn new(inst: &ProblemInstance, method: NoiseFactorization) -> Result<Self> {
        if inst.d > NONDIAG_MAX_D {
            return Err(DlnError::Parameter(format!(
                "non-diagonal SDE limited to d <= {NONDIAG_MAX_D}, got {}",
                inst.d
            )));
        }
        Ok(NondiagContext { root_k: inst.cov.sqrt_full(), method })
    }
}

/// One non-diagonal step. Drift −γ·2s(∇ψ)ᵀK(ψ−β*), diffusion γΣ^{1/2}.
pub fn nondiag_step(state: &mut SdeState, config: &ModelConfig, inst: &ProblemInstance, ctx: &NondiagContext, rng: &mut Rng) -> Result<bool> {
    let d = inst.d;
    let gamma = inst.schedule.at(state.time());
    let x = &state.x;
    let s = config.loss_scale;
    let e: Vec<f64> = (0..d).map(|i| config.psi1(x.u[i], x.v[i]) - inst.beta_star[i]).collect();
    let ke = inst.cov.apply(&e);
    let quad: f64 = e.iter().zip(&ke).map(|(a, b)| a * b).sum();
    if !quad.is_finite() {
        return Ok(false);
    }
    let noise_coeff = 4.0 * s * s * quad / d as f64;
    let sdt = state.dt.sqrt();
    let (gu, gv): (Vec<f64>, Vec<f64>) = (0..d).map(|i| config.grad1(x.u[i], x.v[i])).unzip();
    let mut du = vec![0.0; d];
    let mut dv = vec![0.0; d];
    match ctx.method {
        NoiseFactorization::Factored => {
            let xi1 = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
            let xi2: f64 = StandardNormal.sample(rng);
            let kx = &ctx.root_k * xi1;
            let sd = (d as f64).sqrt();
            let a = noise_coeff.sqrt();
            for i in 0..d {
                let gr = 2.0 * s / d as f64 * ke[i];
                du[i] = a * gu[i] * kx[i] + sd * gr * gu[i] * xi2;
                dv[i] = a * gv[i] * kx[i] + sd * gr * gv[i] * xi2;
            }
        }
        NoiseFactorization::EigenSqrt => {
            let sigma = diffusion_matrix(config, inst, x);
            let (root, _) = psd_sqrt(&sigma)?;
            let xi = DVector::from_iterator(2 * d, (0..2 * d).map(|_| StandardNormal.sample(rng)));
            let n = root * xi;
            du.copy_from_slice(&n.as_slice()[..d]);
            dv.copy_from_slice(&n.as_slice()[d..]);
        }
    }
    let x = &mut state.x;
    for i in 0..d {
        let drift = -gamma * 2.0 * s * ke[i] * state.dt;
        x.u[i] += drift * gu[i] + gamma * sdt * du[i];
        x.v[i] += drift * gv[i] + gamma * sdt * dv[i];
    }
    state.n += 1;
    Ok(true)
}

pub fn sde_step_count(horizon: f64, dt: f64) -> u64 {
    let x = horizon / dt;
    (x + 1e-9 * x.max(1.0)).floor() as u64
}

/// Output of an SDE run: statistics on the grid, optionally the iterate at
/// every grid time.
pub struct SdeRun {
    pub record: TrajectoryRecord,
    pub paths: Option<Vec<Iterate>>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_sde(
    config: &ModelConfig,
    inst: &ProblemInstance,
    sde: &SdeConfig,
    horizon: f64,
    grid: &RecordGrid,
    registry: &StatRegistry,
    seed: u64,
    run_id: u64,
) -> Result<TrajectoryRecord> {
    Ok(run_sde_inner(config, inst, sde, horizon, grid, registry, seed, run_id, false)?.record)
}

/// As [`run_sde`], also keeping (u, v) at each grid time.
#[allow(clippy::too_many_arguments)]
pub fn run_sde_paths(
    config: &ModelConfig,
    inst: &ProblemInstance,
    sde: &SdeConfig,
    horizon: f64,
    grid: &RecordGrid,
    registry: &StatRegistry,
    seed: u64,
    run_id: u64,
) -> Result<SdeRun> {
    run_sde_inner(config, inst, sde, horizon, grid, registry, seed, run_id, true)
}

#[allow(clippy::too_many_arguments)]
fn run_sde_inner(
    config: &ModelConfig,
    inst: &ProblemInstance,
    sde: &SdeConfig,
    horizon: f64,
    grid: &RecordGrid,
    registry: &StatRegistry,
    seed: u64,
    run_id: u64,
    keep_paths: bool,
) -> Result<SdeRun> {
    sde.validate()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(DlnError::Parameter(format!("horizon must be positive, got {horizon}")));
    }
    grid.check_within(horizon)?;
    if sde.dynamics != Dynamics::Nondiag {
        inst.cov.require_diagonal()?;
    }
    let ctx = match sde.dynamics {
        Dynamics::Nondiag => Some(NondiagContext::new(inst, sde.noise)?),
        _ => None,
    };
    let total = sde_step_count(horizon, sde.dt);
    let mut rec = Recorder::new(grid, grid.sde_steps(sde.dt), registry, run_id, keep_paths);
    let mut rng = rng::stream(seed, run_id);
    let mut xi = vec![0.0; inst.d];
    let mut state = SdeState::new(inst.x0.clone(), sde.dt);
    let mut alive = rec.observe(0, 0.0, config, inst, &state.x);
    while alive && state.n < total {
        let ok = match sde.dynamics {
            Dynamics::Hsgd | Dynamics::Sgf => {
                for z in xi.iter_mut() {
                    *z = StandardNormal.sample(&mut rng);
                }
                if sde.dynamics == Dynamics::Hsgd {
                    hsgd_step(&mut state, config, inst, &xi)?
                } else {
                    sgf_step(&mut state, config, inst, &xi)?
                }
            }
            Dynamics::Nondiag => nondiag_step(&mut state, config, inst, ctx.as_ref().unwrap(), &mut rng)?,
        };
        if !ok {
            rec.censor(state.time());
            alive = false;
        } else if !rec.done() {
            alive = rec.observe(state.n, state.time(), config, inst, &state.x);
        }
    }
    let (record, paths) = rec.finish();
    Ok(SdeRun { record, paths })
}
